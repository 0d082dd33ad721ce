use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

/// A collection of named parameter tensors.
pub trait ParamSet: Clone {
    /// Entries in a stable order; names are unique.
    fn entries(&self) -> Vec<(String, &Tensor)>;
    fn entries_mut(&mut self) -> Vec<(String, &mut Tensor)>;
}

/// Outcome of [`grad_check`].
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// `name[index]` of the entry with the largest error.
    pub worst: String,
    pub checked: usize,
}

/// Compares tape gradients against central finite differences for every
/// parameter entry.
///
/// `f` must bind each parameter with [`Tape::param`] under the name reported by
/// [`ParamSet::entries`] and return a scalar loss. The relative error of an
/// entry is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<P, F>(f: F, params: &P, eps: f64) -> Result<GradCheck>
where
    P: ParamSet,
    F: for<'a> Fn(&'a P, &mut Tape<'a>) -> Result<Var>,
{
    let reference = |p: &P| -> Result<Extended> {
        let mut tape = Tape::new();
        let loss = f(p, &mut tape)?;
        Ok(Extended::from(tape.scalar(loss)))
    };
    grad_check_against(&f, reference, params, eps)
}

/// A value carried as the unevaluated sum `hi + lo`, which lets a reference
/// objective report more precision than one `f64` holds.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Extended {
    pub hi: f64,
    pub lo: f64,
}

impl From<f64> for Extended {
    fn from(hi: f64) -> Self {
        Extended { hi, lo: 0.0 }
    }
}

impl Extended {
    pub fn is_finite(self) -> bool {
        self.hi.is_finite() && self.lo.is_finite()
    }

    /// `self - other`, exact in the leading term when the two are close.
    fn minus(self, other: Extended) -> f64 {
        (self.hi - other.hi) + (self.lo - other.lo)
    }
}

/// Like [`grad_check`], but the finite differences are taken of `reference`,
/// an independent evaluation of the same objective (typically at higher
/// precision, so that cancellation in `f(θ+ε) - f(θ-ε)` does not swamp
/// small gradients).
pub fn grad_check_against<P, F, G>(f: F, reference: G, params: &P, eps: f64) -> Result<GradCheck>
where
    P: ParamSet,
    F: for<'a> Fn(&'a P, &mut Tape<'a>) -> Result<Var>,
    G: Fn(&P) -> Result<Extended>,
{
    if eps <= 0.0 || !eps.is_finite() {
        return Err(Error::Value(format!("finite-difference step must be positive, got {eps}")));
    }
    let analytic: Vec<(String, Vec<f64>)> = {
        let mut tape = Tape::new();
        let loss = f(params, &mut tape)?;
        tape.backward(loss)?;
        let grads = tape.param_grads();
        params
            .entries()
            .into_iter()
            .map(|(name, t)| {
                let g = grads
                    .iter()
                    .find(|(n, _)| *n == name)
                    .map(|(_, g)| g.to_dense(t.numel()))
                    .unwrap_or_else(|| vec![0.0; t.numel()]);
                (name, g)
            })
            .collect()
    };

    let eval = |p: &P, label: &str| -> Result<Extended> {
        let v = reference(p)?;
        if !v.is_finite() {
            return Err(Error::Numeric(format!("objective is {} when perturbing {label}", v.hi)));
        }
        Ok(v)
    };

    let mut work = params.clone();
    let mut report = GradCheck {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for (e, (name, grad)) in analytic.iter().enumerate() {
        for (i, &a) in grad.iter().enumerate() {
            let label = format!("{name}[{i}]");
            let orig = work.entries()[e].1.data()[i];
            let (up, down) = (orig + eps, orig - eps);
            set_entry(&mut work, e, i, up);
            let plus = eval(&work, &label)?;
            set_entry(&mut work, e, i, down);
            let minus = eval(&work, &label)?;
            set_entry(&mut work, e, i, orig);
            // the realised step, not 2·eps: θ±eps is rounded
            let numeric = plus.minus(minus) / (up - down);
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let abs = (a - numeric).abs();
            let rel = abs / denom;
            report.max_abs_err = report.max_abs_err.max(abs);
            if report.checked == 0 || rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = label;
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

fn set_entry<P: ParamSet>(p: &mut P, entry: usize, i: usize, value: f64) {
    let mut entries = p.entries_mut();
    entries[entry].1.data_mut()[i] = value;
}

/// A flat list of named tensors; handy for checking small compositions.
#[derive(Clone, Debug, Default)]
pub struct NamedTensors(pub Vec<(String, Tensor)>);

impl NamedTensors {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

impl ParamSet for NamedTensors {
    fn entries(&self) -> Vec<(String, &Tensor)> {
        self.0.iter().map(|(n, t)| (n.clone(), t)).collect()
    }

    fn entries_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.0.iter_mut().map(|(n, t)| (n.clone(), t)).collect()
    }
}
