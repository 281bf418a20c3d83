//! Ablation runner and sample-coverage statistics.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Method, TrainConfig};
use super::train::{mix_seed, train};
use crate::error::{Error, Result};
use crate::replay::{sample_batch, AugmentationSpec, AugmentationTag, ReplayBuffer};

/// One entry of an ablation set: a method together with its sampler.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Variant {
    pub method: Method,
    pub aug: AugmentationTag,
}

impl Variant {
    /// Accepts a method name (`visa`, `crl_cpc`, `crl_nce`, `only_augment`)
    /// or an augmentation tag, which selects `visa` with that sampler.
    /// `visa` alone keeps `default_aug`.
    pub fn parse(s: &str, default_aug: AugmentationTag) -> Result<Self> {
        let s = s.trim();
        if let Ok(method) = s.parse::<Method>() {
            let aug = match method {
                Method::CrlCpc | Method::CrlNce => AugmentationTag::None,
                Method::OnlyAugment => AugmentationTag::OnlyAugment,
                Method::Visa if default_aug == AugmentationTag::None => AugmentationTag::StrongUnbias,
                Method::Visa => default_aug,
            };
            return Ok(Self { method, aug });
        }
        match s.parse::<AugmentationTag>()? {
            AugmentationTag::None => Err(Error::Config(
                "variant `none` is ambiguous; name crl_cpc or crl_nce".into(),
            )),
            AugmentationTag::OnlyAugment => Ok(Self {
                method: Method::OnlyAugment,
                aug: AugmentationTag::OnlyAugment,
            }),
            aug => Ok(Self {
                method: Method::Visa,
                aug,
            }),
        }
    }

    /// Name used for output directories and CSV rows.
    pub fn label(&self) -> String {
        match self.method {
            Method::Visa => self.aug.to_string(),
            m => m.to_string(),
        }
    }
}

/// Reachability scores of visited and augmented samples drawn from a
/// buffer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Coverage {
    pub visited: Vec<f64>,
    pub augmented: Vec<f64>,
}

impl Coverage {
    pub fn mean_visited(&self) -> f64 {
        mean(&self.visited)
    }

    pub fn mean_augmented(&self) -> f64 {
        mean(&self.augmented)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

/// Draws `draws` rows from `buffer` with `spec` and records reachability
/// scores. With `match_sample_count` and no augmentation, twice as many
/// visited states are drawn, matching the visited + augmented total of the
/// augmenting samplers.
pub fn coverage(
    buffer: &ReplayBuffer,
    gamma: f64,
    spec: &AugmentationSpec,
    draws: usize,
    match_sample_count: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Coverage> {
    let visited_draws = if match_sample_count && spec.tag == AugmentationTag::None {
        2 * draws
    } else {
        draws
    };
    let mut cov = Coverage::default();
    let chunk = 256.min(visited_draws.max(2));
    while cov.visited.len() < visited_draws {
        let batch = sample_batch(buffer, chunk, gamma, spec, rng)?;
        for row in &batch.rows {
            if cov.visited.len() == visited_draws {
                break;
            }
            cov.visited.push(row.visited_reachability());
            if let Some(a) = row.augmented_reachability() {
                cov.augmented.push(a);
            }
        }
    }
    Ok(cov)
}

/// Counts of scores in `bins` equal-width bins over `[0, 1]`.
pub fn histogram(scores: &[f64], bins: usize) -> Vec<usize> {
    let mut h = vec![0; bins];
    for &s in scores {
        let i = ((s * bins as f64) as usize).min(bins - 1);
        h[i] += 1;
    }
    h
}

/// Final metrics of one `(variant, seed)` run.
#[derive(Clone, Debug)]
pub struct AblationRun {
    pub variant: Variant,
    pub seed: u64,
    pub final_success: f64,
    pub coverage: Coverage,
    pub run_dir: PathBuf,
}

/// Per-variant aggregate.
#[derive(Clone, Debug)]
pub struct AblationSummary {
    pub variant: Variant,
    pub seeds: usize,
    pub mean_success: f64,
    pub var_success: f64,
    pub mean_reach_visited: f64,
    pub mean_reach_augmented: f64,
}

pub struct AblationReport {
    pub runs: Vec<AblationRun>,
    pub summaries: Vec<AblationSummary>,
    pub comparison_path: PathBuf,
}

pub const RUNS_FILE: &str = "ablation_runs.csv";
pub const SUMMARY_FILE: &str = "ablation_summary.csv";
pub const COVERAGE_FILE: &str = "coverage.csv";
pub const COVERAGE_DRAWS: usize = 10_000;
pub const COVERAGE_BINS: usize = 10;

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.6}")
    }
}

/// Trains every `(variant, seed)` pair and writes three CSV files to
/// `out_dir`: per-run results, per-variant summaries and reachability
/// histograms. When any variant augments, baseline variants draw twice the
/// visited states so every variant sees the same number of samples.
pub fn run_ablation(
    base: &TrainConfig,
    variants: &[Variant],
    seeds: &[u64],
    out_dir: &Path,
) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    if variants.is_empty() {
        return Err(Error::Config("ablation needs at least one variant".into()));
    }
    let any_augmenting = variants.iter().any(|v| v.method.uses_augmentation());
    fs::create_dir_all(out_dir)?;

    let mut runs = Vec::new();
    for variant in variants {
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.method = variant.method;
            cfg.aug = variant.aug;
            cfg.seed = seed;
            cfg.match_sample_count = any_augmenting && !variant.method.uses_augmentation();
            cfg.validate()?;
            let run_dir = out_dir.join("runs").join(format!("{}_seed{seed}", variant.label()));
            let outcome = train(&cfg, Some(&run_dir))?;
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xc0fe));
            let cov = coverage(
                &outcome.buffer,
                cfg.gamma,
                &cfg.augmentation(),
                COVERAGE_DRAWS,
                cfg.match_sample_count,
                &mut rng,
            )?;
            runs.push(AblationRun {
                variant: *variant,
                seed,
                final_success: outcome.final_success(),
                coverage: cov,
                run_dir,
            });
        }
    }

    let summaries: Vec<AblationSummary> = variants
        .iter()
        .map(|v| {
            let group: Vec<&AblationRun> = runs.iter().filter(|r| r.variant == *v).collect();
            let success: Vec<f64> = group.iter().map(|r| r.final_success).collect();
            let visited: Vec<f64> = group.iter().flat_map(|r| r.coverage.visited.iter().copied()).collect();
            let augmented: Vec<f64> =
                group.iter().flat_map(|r| r.coverage.augmented.iter().copied()).collect();
            AblationSummary {
                variant: *v,
                seeds: group.len(),
                mean_success: mean(&success),
                var_success: variance(&success),
                mean_reach_visited: mean(&visited),
                mean_reach_augmented: mean(&augmented),
            }
        })
        .collect();

    let mut text = String::from("variant,method,aug,seed,final_success,mean_reach_visited,mean_reach_augmented,run_dir\n");
    for r in &runs {
        writeln!(
            text,
            "{},{},{},{},{},{},{},{}",
            r.variant.label(),
            r.variant.method,
            r.variant.aug,
            r.seed,
            fmt(r.final_success),
            fmt(r.coverage.mean_visited()),
            fmt(r.coverage.mean_augmented()),
            r.run_dir.display()
        )
        .expect("write to string");
    }
    fs::write(out_dir.join(RUNS_FILE), text)?;

    let mut text = String::from(
        "variant,method,aug,seeds,mean_success,var_success,mean_reach_visited,mean_reach_augmented\n",
    );
    for s in &summaries {
        writeln!(
            text,
            "{},{},{},{},{},{},{},{}",
            s.variant.label(),
            s.variant.method,
            s.variant.aug,
            s.seeds,
            fmt(s.mean_success),
            fmt(s.var_success),
            fmt(s.mean_reach_visited),
            fmt(s.mean_reach_augmented)
        )
        .expect("write to string");
    }
    let comparison_path = out_dir.join(SUMMARY_FILE);
    fs::write(&comparison_path, text)?;

    let mut text = String::from("variant,seed,sample,bin_low,bin_high,count\n");
    for r in &runs {
        for (kind, scores) in [("visited", &r.coverage.visited), ("augmented", &r.coverage.augmented)] {
            if scores.is_empty() {
                continue;
            }
            for (i, c) in histogram(scores, COVERAGE_BINS).iter().enumerate() {
                let lo = i as f64 / COVERAGE_BINS as f64;
                let hi = (i + 1) as f64 / COVERAGE_BINS as f64;
                writeln!(text, "{},{},{kind},{lo:.2},{hi:.2},{c}", r.variant.label(), r.seed)
                    .expect("write to string");
            }
        }
    }
    fs::write(out_dir.join(COVERAGE_FILE), text)?;

    Ok(AblationReport {
        runs,
        summaries,
        comparison_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants_parse_from_methods_and_tags() {
        let d = AugmentationTag::StrongUnbias;
        assert_eq!(
            Variant::parse("random_goal", d).unwrap(),
            Variant { method: Method::Visa, aug: AugmentationTag::RandomGoal }
        );
        assert_eq!(Variant::parse("crl_cpc", d).unwrap().aug, AugmentationTag::None);
        let only = Variant::parse("only_augment", d).unwrap();
        assert_eq!(only.method, Method::OnlyAugment);
        assert_eq!(only.label(), "only_augment");
        assert!(Variant::parse("none", d).is_err());
        assert!(Variant::parse("bogus", d).is_err());
    }

    #[test]
    fn histogram_covers_the_unit_interval() {
        assert_eq!(histogram(&[0.0, 0.05, 0.5, 0.99, 1.0], 10), vec![2, 0, 0, 0, 0, 1, 0, 0, 0, 2]);
    }

    #[test]
    fn small_ablation_writes_groups_per_variant() {
        let base = TrainConfig {
            batch_size: 4,
            embed_dim: 4,
            hidden: vec![8],
            total_env_steps: 200,
            warmup_steps: 100,
            eval_every: 200,
            eval_episodes: 2,
            buffer_capacity: 20,
            updates_per_step: 0.2,
            ..TrainConfig::default()
        };
        let d = AugmentationTag::StrongUnbias;
        let variants = [
            Variant::parse("strong_unbias", d).unwrap(),
            Variant::parse("crl_cpc", d).unwrap(),
            Variant::parse("only_augment", d).unwrap(),
        ];
        let dir = tempfile::tempdir().unwrap();
        let report = run_ablation(&base, &variants, &[0, 1], dir.path()).unwrap();
        assert_eq!(report.runs.len(), 6);
        assert!(report.summaries.iter().all(|s| s.seeds == 2));
        let runs = fs::read_to_string(dir.path().join(RUNS_FILE)).unwrap();
        assert_eq!(runs.lines().count(), 7);
        assert!(runs.lines().any(|l| l.starts_with("only_augment,only_augment,")));
        let crl = report.runs.iter().find(|r| r.variant.method == Method::CrlCpc).unwrap();
        assert_eq!(crl.coverage.visited.len(), 2 * COVERAGE_DRAWS);
        assert!(crl.coverage.augmented.is_empty());
        assert!(run_ablation(&base, &variants, &[], dir.path()).is_err());
    }
}
