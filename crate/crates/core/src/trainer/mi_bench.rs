//! Mutual-information estimator benchmark on correlated Gaussian pairs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::train::mix_seed;
use crate::contrastive::{club_estimate, infonce, infonce_mi_estimate};
use crate::error::{Error, Result};
use crate::numerics::{opt_step, AdamConfig, OptState, ParamSet, Tape};
use crate::oracle::gaussian_mi;

#[derive(Clone, Debug, PartialEq)]
pub struct MiBenchConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub lr: f64,
    /// Fresh batches averaged for the final estimates.
    pub eval_batches: usize,
}

impl Default for MiBenchConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            steps: 2_000,
            seed: 0,
            hidden: vec![64, 64],
            embed_dim: 16,
            lr: 1e-3,
            eval_batches: 20,
        }
    }
}

/// Estimates for one correlation.
#[derive(Clone, Debug, PartialEq)]
pub struct MiBenchRow {
    pub rho: f64,
    pub analytic: f64,
    pub infonce: f64,
    pub club: f64,
    /// Largest InfoNCE estimate seen on any training batch.
    pub max_train_infonce: f64,
    pub log_batch: f64,
}

pub const MI_BENCH_HEADER: &str = "rho,analytic_mi,infonce_estimate,club_estimate,max_train_infonce,log_batch";

/// `B` pairs with `y = ρx + sqrt(1 − ρ²)ε`.
pub fn gaussian_pairs<R: Rng + ?Sized>(rho: f64, batch: usize, rng: &mut R) -> (Array2<f64>, Array2<f64>) {
    let noise = (1.0 - rho * rho).sqrt();
    let mut x = Array2::zeros((batch, 1));
    let mut y = Array2::zeros((batch, 1));
    for i in 0..batch {
        let a: f64 = rng.sample(StandardNormal);
        let e: f64 = rng.sample(StandardNormal);
        x[[i, 0]] = a;
        y[[i, 0]] = rho * a + noise * e;
    }
    (x, y)
}

fn scores(f: &ParamSet, g: &ParamSet, x: &Array2<f64>, y: &Array2<f64>) -> Result<Array2<f64>> {
    Ok(f.forward_batch(x)?.dot(&g.forward_batch(y)?.t()))
}

/// Trains a separable critic `f(x)·g(y)` with InfoNCE and evaluates both
/// estimators on fresh batches.
pub fn mi_bench_one(rho: f64, cfg: &MiBenchConfig) -> Result<MiBenchRow> {
    let analytic = gaussian_mi(rho)?;
    if cfg.batch_size < 2 || cfg.eval_batches == 0 {
        return Err(Error::Config("mi-bench needs batch >= 2 and at least one eval batch".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, rho.to_bits()));
    let mut sizes = vec![1];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(cfg.embed_dim);
    let mut f = ParamSet::init(&sizes, &mut rng);
    let mut g = ParamSet::init(&sizes, &mut rng);
    let (mut of, mut og) = (OptState::new(&f), OptState::new(&g));
    let adam = AdamConfig::new(cfg.lr);
    let mut max_train = f64::NEG_INFINITY;
    let log_b = (cfg.batch_size as f64).ln();

    for _ in 0..cfg.steps {
        let (x, y) = gaussian_pairs(rho, cfg.batch_size, &mut rng);
        let mut tape = Tape::new();
        let fb = tape.bind(&f, true);
        let gb = tape.bind(&g, true);
        let xv = tape.constant(x);
        let yv = tape.constant(y);
        let fx = tape.mlp(&fb, xv);
        let gy = tape.mlp(&gb, yv);
        let s = tape.matmul_t(fx, gy);
        let objective = infonce(&mut tape, s);
        max_train = max_train.max(log_b + tape.scalar(objective));
        let loss = tape.neg(objective);
        let mut grads = tape.backward(loss)?;
        opt_step(&mut f, &grads.param_grads(&fb), &mut of, &adam)?;
        opt_step(&mut g, &grads.param_grads(&gb), &mut og, &adam)?;
    }

    let (mut nce, mut club) = (0.0, 0.0);
    for _ in 0..cfg.eval_batches {
        let (x, y) = gaussian_pairs(rho, cfg.batch_size, &mut rng);
        let s = scores(&f, &g, &x, &y)?;
        nce += infonce_mi_estimate(&s)?;
        club += club_estimate(&s)?;
    }
    let n = cfg.eval_batches as f64;
    Ok(MiBenchRow {
        rho,
        analytic,
        infonce: nce / n,
        club: club / n,
        max_train_infonce: if cfg.steps == 0 { f64::NAN } else { max_train },
        log_batch: log_b,
    })
}

/// Runs every correlation; writes a CSV when `out` is given.
pub fn mi_bench(rhos: &[f64], cfg: &MiBenchConfig, out: Option<&Path>) -> Result<Vec<MiBenchRow>> {
    if let Some(bad) = rhos.iter().find(|r| !(r.abs() < 1.0)) {
        return Err(Error::Config(format!("correlation must satisfy |rho| < 1, got {bad}")));
    }
    let rows = rhos
        .iter()
        .map(|&r| mi_bench_one(r, cfg))
        .collect::<Result<Vec<_>>>()?;
    if let Some(path) = out {
        let mut text = format!("{MI_BENCH_HEADER}\n");
        for r in &rows {
            writeln!(
                text,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
                r.rho, r.analytic, r.infonce, r.club, r.max_train_infonce, r.log_batch
            )
            .expect("write to string");
        }
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, text)?;
    }
    Ok(rows)
}
