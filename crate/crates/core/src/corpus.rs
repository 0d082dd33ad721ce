//! Seeded synthetic corpus with a linearly separable keyword signal.
//!
//! Rumor sentences (label 1) draw keywords from one pool, non-rumor
//! sentences (label 0) from a disjoint pool; both are padded out with words
//! from a shared filler pool, so only the keywords carry the label.

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::seed;
use crate::textdata::RawExample;

pub const RUMOR_POOL: [&str; 16] = [
    "shocking", "leaked", "secret", "hoax", "conspiracy", "unverified", "allegedly", "exposed", "banned",
    "miracle", "scandal", "coverup", "insider", "forwarded", "urgent", "hidden",
];

pub const FACT_POOL: [&str; 16] = [
    "official", "confirmed", "announced", "statement", "ministry", "statistics", "study", "published",
    "verified", "schedule", "committee", "results", "interview", "university", "agency", "measured",
];

pub const FILLER_POOL: [&str; 24] = [
    "the", "a", "of", "in", "city", "people", "today", "news", "said", "about", "new", "after", "on", "with",
    "local", "video", "post", "users", "many", "this", "online", "week", "school", "water",
];

const MIN_KEYWORDS: usize = 2;
const MAX_KEYWORDS: usize = 4;
const MIN_FILLER: usize = 4;
const MAX_FILLER: usize = 10;

fn sentence(pool: &[&str], rng: &mut seed::Rng) -> String {
    let keywords = rng.gen_range(MIN_KEYWORDS..=MAX_KEYWORDS);
    let filler = rng.gen_range(MIN_FILLER..=MAX_FILLER);
    let mut words: Vec<&str> = (0..keywords).map(|_| *pool.choose(rng).unwrap()).collect();
    words.extend((0..filler).map(|_| *FILLER_POOL.choose(rng).unwrap()));
    words.shuffle(rng);
    words.join(" ")
}

/// `n_per_class` examples of each label, alternating rumor / non-rumor.
pub fn generate(n_per_class: usize, seed: u64) -> Result<Vec<RawExample>> {
    if n_per_class == 0 {
        return Err(Error::Value("n_per_class must be at least 1".into()));
    }
    let mut rng = seed::rng(seed, &[0xC0]);
    let mut out = Vec::with_capacity(2 * n_per_class);
    for _ in 0..n_per_class {
        out.push(RawExample {
            label: 1,
            text: sentence(&RUMOR_POOL, &mut rng),
        });
        out.push(RawExample {
            label: 0,
            text: sentence(&FACT_POOL, &mut rng),
        });
    }
    Ok(out)
}
