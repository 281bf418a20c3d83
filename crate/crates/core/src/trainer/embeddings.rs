//! Raw embedding dumps of greedy rollouts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::train::{anchor_features, state_features};
use crate::env::{EnvKind, GoalEnv};
use crate::error::{Error, Result};

/// One output row. Goal rows carry `φ(goal)` only; their anchor embedding
/// and q-value are NaN.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRow {
    pub episode: usize,
    pub step: usize,
    pub is_goal: bool,
    pub psi: Vec<f64>,
    pub phi_goal: Vec<f64>,
    pub q_value: f64,
}

/// Rolls out the greedy policy `rollouts` times and records `ψ(s_t, a_t)`
/// for `t = 0..=T` (the action at `s_T` is the greedy action there), the
/// rollout's `φ(goal)` and their dot product. Each rollout ends with one
/// goal row, giving `rollouts · (T + 2)` rows.
pub fn embed_rollouts(ckpt: &Checkpoint, rollouts: usize, seed: u64) -> Result<Vec<EmbeddingRow>> {
    let env = ckpt.env;
    let horizon = ckpt.episode_len;
    let enc = &ckpt.encoders;
    let e = enc.embed_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(rollouts * (horizon + 2));
    for episode in 0..rollouts {
        let goal = env.sample_goal(&mut rng);
        let mut run = GoalEnv::reset_with_len(env, horizon, &goal, rng.random())?;
        let goal_row = Array2::from_shape_vec((1, goal.len()), goal.clone())
            .map_err(|e| Error::Dimension(e.to_string()))?;
        let goal_feat = state_features(env, goal_row.view());
        let phi_goal = enc.phi.forward_batch(&goal_feat)?.row(0).to_vec();

        let sd = env.spec().state_dim;
        let mut states = Array2::zeros((horizon + 1, sd));
        let mut actions = Array2::zeros((horizon + 1, env.spec().action_dim));
        for t in 0..=horizon {
            states.row_mut(t).assign(&ndarray::aview1(run.state()));
            let a = greedy(ckpt, env, run.state(), &goal)?;
            actions.row_mut(t).assign(&ndarray::aview1(&a));
            if t < horizon {
                run.step(&a)?;
            }
        }
        let psi = enc.psi.forward_batch(&anchor_features(env, states.view(), actions.view()))?;
        for (t, p) in psi.rows().into_iter().enumerate() {
            let q = p.iter().zip(&phi_goal).map(|(a, b)| a * b).sum();
            rows.push(EmbeddingRow {
                episode,
                step: t,
                is_goal: false,
                psi: p.to_vec(),
                phi_goal: phi_goal.clone(),
                q_value: q,
            });
        }
        rows.push(EmbeddingRow {
            episode,
            step: horizon + 1,
            is_goal: true,
            psi: vec![f64::NAN; e],
            phi_goal,
            q_value: f64::NAN,
        });
    }
    Ok(rows)
}

fn greedy(ckpt: &Checkpoint, env: EnvKind, state: &[f64], goal: &[f64]) -> Result<Vec<f64>> {
    let mut input = Vec::new();
    env.state_features(state, &mut input);
    env.goal_features(goal, &mut input);
    let x = Array2::from_shape_vec((1, input.len()), input).map_err(|e| Error::Dimension(e.to_string()))?;
    Ok(ckpt.policy.greedy_batch(&x)?.row(0).to_vec())
}

pub fn embedding_header(embed_dim: usize) -> String {
    let mut h = String::from("episode,step,kind");
    for i in 0..embed_dim {
        write!(h, ",psi_{i}").expect("write to string");
    }
    for i in 0..embed_dim {
        write!(h, ",phi_goal_{i}").expect("write to string");
    }
    h.push_str(",q_value");
    h
}

fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v}")
    }
}

/// Loads a checkpoint trained on `env` and writes the embedding CSV.
pub fn dump_embeddings(checkpoint: &Path, env: EnvKind, rollouts: usize, seed: u64, out: &Path) -> Result<usize> {
    let ckpt = Checkpoint::load_for(checkpoint, env)?;
    let rows = embed_rollouts(&ckpt, rollouts, seed)?;
    let mut text = embedding_header(ckpt.encoders.embed_dim);
    text.push('\n');
    for r in &rows {
        let kind = if r.is_goal { "goal" } else { "state" };
        write!(text, "{},{},{kind}", r.episode, r.step).expect("write to string");
        for v in r.psi.iter().chain(&r.phi_goal) {
            write!(text, ",{}", num(*v)).expect("write to string");
        }
        writeln!(text, ",{}", num(r.q_value)).expect("write to string");
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(out, text)?;
    Ok(rows.len())
}
