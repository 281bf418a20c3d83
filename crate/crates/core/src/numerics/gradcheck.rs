//! Gradient evaluation of tape-built losses and a central-difference checker.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::mlp::{BoundParams, ParamSet};
use super::tape::{Tape, Var};
use crate::error::Result;

/// Parameters above this count are checked on a seeded subsample.
pub const FULL_CHECK_LIMIT: usize = 10_000;

/// Evaluates `loss` on a fresh tape and returns its value together with the
/// gradient for every parameter set, in the order given.
pub fn grad<F>(loss: F, params: &[&ParamSet]) -> Result<(f64, Vec<ParamSet>)>
where
    F: Fn(&mut Tape, &[BoundParams]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound: Vec<BoundParams> = params.iter().map(|p| tape.bind(p, true)).collect();
    let out = loss(&mut tape, &bound)?;
    let value = tape.scalar(out);
    let mut grads = tape.backward(out)?;
    let per_set = bound.iter().map(|b| grads.param_grads(b)).collect();
    Ok((value, per_set))
}

fn eval<F>(loss: &F, params: &[ParamSet]) -> Result<f64>
where
    F: Fn(&mut Tape, &[BoundParams]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound: Vec<BoundParams> = params.iter().map(|p| tape.bind(p, true)).collect();
    let out = loss(&mut tape, &bound)?;
    tape.check_finite()?;
    Ok(tape.scalar(out))
}

/// Largest relative discrepancy between the analytic gradient and central
/// differences `(f(θ+ε) − f(θ−ε)) / 2ε`. Relative error is
/// `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn finite_diff_check<F>(loss: F, params: &[&ParamSet], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[BoundParams]) -> Result<Var>,
{
    assert!(eps > 0.0, "eps must be positive");
    let (_, analytic) = grad(&loss, params)?;
    let analytic: Vec<f64> = analytic.iter().flat_map(|g| g.to_flat()).collect();

    let mut work: Vec<ParamSet> = params.iter().map(|p| (*p).clone()).collect();
    let offsets: Vec<usize> = work
        .iter()
        .scan(0, |acc, p| {
            let start = *acc;
            *acc += p.num_params();
            Some(start)
        })
        .collect();
    let total = analytic.len();
    let indices: Vec<usize> = if total > FULL_CHECK_LIMIT {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut idx = sample(&mut rng, total, FULL_CHECK_LIMIT).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..total).collect()
    };

    let mut worst: f64 = 0.0;
    for flat in indices {
        let set = offsets.partition_point(|&o| o <= flat) - 1;
        let local = flat - offsets[set];
        let original = *work[set].flat_mut(local);
        let set_param = |w: &mut Vec<ParamSet>, v: f64| *w[set].flat_mut(local) = v;
        set_param(&mut work, original + eps);
        let plus = eval(&loss, &work)?;
        set_param(&mut work, original - eps);
        let minus = eval(&loss, &work)?;
        set_param(&mut work, original);
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[flat];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}
