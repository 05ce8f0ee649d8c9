//! Random choices made by the engines.
//!
//! Every stochastic decision (which path a collapsing splitter picks, which
//! detector fires, which source emits) goes through the [`Chooser`] trait, so
//! the same engine code runs either on a seeded stream or on a scripted
//! choice sequence used for exact enumeration of outcome distributions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// Human readable description of the generator and its stream derivation,
/// carried in every report so a run can be reproduced elsewhere.
pub const RNG_ALGORITHM: &str =
    "ChaCha8Rng (rand_chacha 0.9); stream(seed, run) = ChaCha8Rng::seed_from_u64(seed) + set_stream(run); draws via f64 in [0,1)";

pub trait Chooser {
    /// Picks an index with probability proportional to `weights`.
    /// Weights are non-negative and at least one is positive.
    fn choose(&mut self, weights: &[f64]) -> usize;
}

/// Seeded per-run stream.
#[derive(Debug, Clone)]
pub struct RunRng(ChaCha8Rng);

impl RunRng {
    pub fn stream(seed: u64, run: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(run);
        RunRng(rng)
    }

    pub fn uniform(&mut self) -> f64 {
        self.0.random::<f64>()
    }
}

impl Chooser for RunRng {
    fn choose(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let u = self.uniform() * total;
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (i, &w) in weights.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            acc += w;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
        last_positive
    }
}

/// Chooser that can never be asked to choose. Used for legs that only
/// contain unitary interactions.
#[derive(Debug, Default)]
pub struct NoChoice;

impl Chooser for NoChoice {
    fn choose(&mut self, weights: &[f64]) -> usize {
        panic!("unexpected stochastic choice among {} options", weights.len())
    }
}

/// Replays a fixed prefix of choices and then takes the first option with
/// positive weight, recording every decision it makes.
#[derive(Debug, Default)]
struct Scripted {
    prefix: Vec<usize>,
    trace: Vec<(usize, Vec<f64>)>,
}

impl Chooser for Scripted {
    fn choose(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let pos = self.trace.len();
        let pick = match self.prefix.get(pos) {
            Some(&p) => p,
            None => probs.iter().position(|&p| p > 0.0).unwrap_or(0),
        };
        self.trace.push((pick, probs));
        pick
    }
}

/// Runs `f` once for every distinct sequence of choices it can make and
/// returns each outcome with its exact probability.
pub fn enumerate<T, F>(mut f: F) -> Result<Vec<(f64, T)>>
where
    F: FnMut(&mut dyn Chooser) -> Result<T>,
{
    let mut out = Vec::new();
    let mut stack = vec![Vec::<usize>::new()];
    while let Some(prefix) = stack.pop() {
        let mut script = Scripted {
            prefix: prefix.clone(),
            trace: Vec::new(),
        };
        let value = f(&mut script)?;
        let mut p = 1.0;
        for (pick, probs) in &script.trace {
            p *= probs[*pick];
        }
        for (j, (pick, probs)) in script.trace.iter().enumerate().skip(prefix.len()) {
            for (alt, &q) in probs.iter().enumerate() {
                if alt > *pick && q > 0.0 {
                    let mut next: Vec<usize> = script.trace[..j].iter().map(|(c, _)| *c).collect();
                    next.push(alt);
                    stack.push(next);
                }
            }
        }
        out.push((p, value));
    }
    Ok(out)
}
