use std::cell::RefCell;
use std::cmp::Ordering;
use std::ops::{Add, Div, Mul, Neg, Sub};

use astro_float::{BigFloat, Consts, RoundingMode};
use ragat::numerics::Extended;

pub trait Real:
    Clone
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn of(x: f64) -> Self;
    fn exp(&self) -> Self;
    fn tanh(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn ln(&self) -> Self;
    fn to_f64(&self) -> f64;

    fn zero() -> Self {
        Self::of(0.0)
    }

    fn sigmoid(&self) -> Self {
        Self::of(1.0) / (Self::of(1.0) + (-self.clone()).exp())
    }

    fn relu(&self) -> Self {
        if *self > Self::zero() {
            self.clone()
        } else {
            Self::zero()
        }
    }

    fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }
}

impl Real for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn tanh(&self) -> Self {
        f64::tanh(*self)
    }
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    fn ln(&self) -> Self {
        f64::ln(*self)
    }
    fn to_f64(&self) -> f64 {
        *self
    }
}

const PREC: usize = 128;
const RM: RoundingMode = RoundingMode::ToEven;

thread_local! {
    static CONSTS: RefCell<Consts> = RefCell::new(Consts::new().expect("constant cache"));
}

/// A binary float with a 128-bit mantissa.
#[derive(Clone, Debug)]
pub struct Ext(BigFloat);

impl Ext {
    /// Splits into an `f64` head and the `f64` rounding of the remainder.
    pub fn to_extended(&self) -> Extended {
        let hi = self.to_f64();
        let lo = (self.clone() - Ext::of(hi)).to_f64();
        Extended { hi, lo }
    }
}

impl PartialEq for Ext {
    fn eq(&self, other: &Self) -> bool {
        self.partial_cmp(other) == Some(Ordering::Equal)
    }
}

impl PartialOrd for Ext {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.0.cmp(&other.0).map(|c| c.cmp(&0))
    }
}

macro_rules! binop {
    ($tr:ident, $f:ident) => {
        impl $tr for Ext {
            type Output = Ext;
            fn $f(self, rhs: Ext) -> Ext {
                Ext(self.0.$f(&rhs.0, PREC, RM))
            }
        }
    };
}
binop!(Add, add);
binop!(Sub, sub);
binop!(Mul, mul);
binop!(Div, div);

impl Neg for Ext {
    type Output = Ext;
    fn neg(self) -> Ext {
        Ext(self.0.neg())
    }
}

impl Real for Ext {
    fn of(x: f64) -> Self {
        Ext(BigFloat::from_f64(x, PREC))
    }
    fn exp(&self) -> Self {
        CONSTS.with(|c| Ext(self.0.exp(PREC, RM, &mut c.borrow_mut())))
    }
    fn tanh(&self) -> Self {
        CONSTS.with(|c| Ext(self.0.tanh(PREC, RM, &mut c.borrow_mut())))
    }
    fn sqrt(&self) -> Self {
        Ext(self.0.sqrt(PREC, RM))
    }
    fn ln(&self) -> Self {
        CONSTS.with(|c| Ext(self.0.ln(PREC, RM, &mut c.borrow_mut())))
    }
    /// Round-to-nearest via the exact decimal expansion.
    fn to_f64(&self) -> f64 {
        if self.0.is_zero() {
            return 0.0;
        }
        let text = format!("{}", self.0);
        text.parse()
            .unwrap_or_else(|_| panic!("unparseable extended value {text}"))
    }
}
