//! Encoders, inner-product critics and the mutual-information estimators
//! built on them.
//!
//! Given a batch of `B` rows, `S_v[i][j] = ψ(s_i,a_i)·φ(s_v,j)` scores anchor
//! `i` against visited state `j`; the augmented critic adds the boost
//! `ψ(s_i,a_i)·φ̂(s_v,j, s_a,j)`. Diagonals are the positive pairs and every
//! off-diagonal entry is an in-batch negative.
//!
//! Each estimator exists twice: as a tape graph (for training) and as a plain
//! function over score matrices, which records the graph on a throwaway tape
//! so both paths share one definition.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{mlp_forward, BoundParams, ParamSet, Tape, Var};

/// Parameters of ψ (anchor), φ (visited state) and φ̂ (visited, augmented).
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderSet {
    pub psi: ParamSet,
    pub phi: ParamSet,
    pub phi_hat: ParamSet,
    pub embed_dim: usize,
}

impl EncoderSet {
    /// `anchor_dim` is the width of the concatenated (state, action)
    /// features; φ̂ reads two state encodings side by side.
    pub fn init<R: Rng + ?Sized>(
        anchor_dim: usize,
        state_dim: usize,
        hidden: &[usize],
        embed_dim: usize,
        rng: &mut R,
    ) -> Self {
        let sizes = |input: usize| {
            let mut s = vec![input];
            s.extend_from_slice(hidden);
            s.push(embed_dim);
            s
        };
        Self {
            psi: ParamSet::init(&sizes(anchor_dim), rng),
            phi: ParamSet::init(&sizes(state_dim), rng),
            phi_hat: ParamSet::init(&sizes(2 * state_dim), rng),
            embed_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("psi", &self.psi), ("phi", &self.phi), ("phi_hat", &self.phi_hat)] {
            p.validate()?;
            if p.output_dim() != self.embed_dim {
                return Err(Error::Dimension(format!(
                    "{name} outputs {} but embedding dim is {}",
                    p.output_dim(),
                    self.embed_dim
                )));
            }
        }
        if self.phi_hat.input_dim() != 2 * self.phi.input_dim() {
            return Err(Error::Dimension("phi_hat must read two state encodings".into()));
        }
        Ok(())
    }

    /// Sets every φ̂ parameter to zero, so the boost vanishes.
    pub fn zero_boost(&mut self) {
        self.phi_hat.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Network inputs for one batch, already feature-encoded.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticInputs {
    /// `B × anchor_dim`: state features then action features.
    pub anchors: Array2<f64>,
    pub visited: Array2<f64>,
    pub augmented: Option<Array2<f64>>,
}

impl CriticInputs {
    pub fn batch_size(&self) -> usize {
        self.anchors.nrows()
    }

    fn validate(&self, enc: &EncoderSet) -> Result<()> {
        let b = self.anchors.nrows();
        if b < 2 || self.visited.nrows() != b {
            return Err(Error::Dimension(format!(
                "need matching batches of at least 2 rows, got {b} anchors and {} visited",
                self.visited.nrows()
            )));
        }
        if self.anchors.ncols() != enc.psi.input_dim() || self.visited.ncols() != enc.phi.input_dim() {
            return Err(Error::Dimension("critic input width mismatch".into()));
        }
        if let Some(a) = &self.augmented {
            if a.dim() != self.visited.dim() {
                return Err(Error::Dimension("augmented states must match visited".into()));
            }
        }
        Ok(())
    }

    /// `[s_v, s_a]` rows for φ̂.
    pub fn pair_input(&self) -> Option<Array2<f64>> {
        self.augmented.as_ref().map(|a| {
            ndarray::concatenate(Axis(1), &[self.visited.view(), a.view()])
                .expect("validated shapes")
        })
    }
}

/// Score matrices of a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticScores {
    pub s_v: Array2<f64>,
    /// `S_v + boost`; absent without augmented states.
    pub s_full: Option<Array2<f64>>,
}

pub fn score_matrices(enc: &EncoderSet, inputs: &CriticInputs) -> Result<CriticScores> {
    inputs.validate(enc)?;
    let psi = enc.psi.forward_batch(&inputs.anchors)?;
    let phi = enc.phi.forward_batch(&inputs.visited)?;
    let s_v = psi.dot(&phi.t());
    let s_full = match inputs.pair_input() {
        Some(pair) => {
            let boost = enc.phi_hat.forward_batch(&pair)?;
            Some(&s_v + &psi.dot(&boost.t()))
        }
        None => None,
    };
    Ok(CriticScores { s_v, s_full })
}

/// Score nodes on a tape.
#[derive(Clone, Copy, Debug)]
pub struct ScoreVars {
    pub psi: Var,
    pub s_v: Var,
    pub s_full: Option<Var>,
}

/// Records the critic on `tape`. Pass `phi_hat = None` to skip the boost.
pub fn score_graph(
    tape: &mut Tape,
    psi: &BoundParams,
    phi: &BoundParams,
    phi_hat: Option<&BoundParams>,
    inputs: &CriticInputs,
) -> ScoreVars {
    let anchors = tape.constant(inputs.anchors.clone());
    let visited = tape.constant(inputs.visited.clone());
    let psi_out = tape.mlp(psi, anchors);
    let phi_out = tape.mlp(phi, visited);
    let s_v = tape.matmul_t(psi_out, phi_out);
    let s_full = match (phi_hat, inputs.pair_input()) {
        (Some(net), Some(pair)) => {
            let pair = tape.constant(pair);
            let boost_emb = tape.mlp(net, pair);
            let boost = tape.matmul_t(psi_out, boost_emb);
            Some(tape.add(s_v, boost))
        }
        _ => None,
    };
    ScoreVars {
        psi: psi_out,
        s_v,
        s_full,
    }
}

/// `mean_i log softmax(S[i])[i]`; the denominator includes the positive.
pub fn infonce(tape: &mut Tape, s: Var) -> Var {
    tape.infonce_diag(s)
}

/// `mean_i log σ(S_ii) + mean_{i≠j} log(1 − σ(S_ij))`.
pub fn binary_nce(tape: &mut Tape, s: Var) -> Var {
    let pos = tape.log_sigmoid(s);
    let pos = tape.diag(pos);
    let pos = tape.mean(pos);
    let neg_s = tape.neg(s);
    let neg = tape.log_sigmoid(neg_s);
    let neg = tape.off_diag_mean(neg);
    tape.add(pos, neg)
}

/// Diagonal mean minus off-diagonal mean.
pub fn club(tape: &mut Tape, s: Var) -> Var {
    tape.club_gap(s)
}

/// `mean_i (log Σ_j exp S_ij)²`, a penalty on the score scale.
pub fn logsumexp_penalty(tape: &mut Tape, s: Var) -> Var {
    let d = tape.diag(s);
    let log_p = tape.log_softmax_rows(s);
    let log_p = tape.diag(log_p);
    let lse = tape.sub(d, log_p);
    let sq = tape.mul(lse, lse);
    tape.mean(sq)
}

/// Boosted estimate `I(S_v) + I(S_full) − I(S_v)`. With `detach_base` the
/// subtracted term carries no gradient, so the base critic is also trained
/// on its own InfoNCE term. The value equals `I(S_full)` either way.
pub fn bo(tape: &mut Tape, scores: &ScoreVars, detach_base: bool) -> Result<Var> {
    let base = infonce(tape, scores.s_v);
    bo_from_base(tape, scores, base, detach_base)
}

/// [`bo`] with `infonce(S_v)` already on the tape.
fn bo_from_base(tape: &mut Tape, scores: &ScoreVars, base: Var, detach_base: bool) -> Result<Var> {
    let full = scores
        .s_full
        .ok_or_else(|| Error::Config("boosted estimate needs augmented states".into()))?;
    let joint = infonce(tape, full);
    let sub = if detach_base { tape.detach(base) } else { base };
    let diff = tape.sub(joint, sub);
    Ok(tape.add(base, diff))
}

/// Sign convention for composing the factorized objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SafeConvention {
    /// Maximise both lower bounds, minimise the upper bound:
    /// `L = −[I_BO + I_NCE(S_v) − λ·CLUB(S_full)]`.
    Prose,
    /// The printed order `U ≈ I_NCE − I_CLUB` substituted literally:
    /// `L = −[I_BO − I_NCE(S_v) + λ·CLUB(S_full)]`.
    Literal,
}

impl SafeConvention {
    pub fn as_str(&self) -> &'static str {
        match self {
            SafeConvention::Prose => "prose",
            SafeConvention::Literal => "literal",
        }
    }
}

impl fmt::Display for SafeConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SafeConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prose" => Ok(SafeConvention::Prose),
            "literal" => Ok(SafeConvention::Literal),
            other => Err(Error::Config(format!("unknown SaFE convention `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SafeConfig {
    pub convention: SafeConvention,
    pub lambda_club: f64,
    pub detach_base: bool,
}

impl Default for SafeConfig {
    fn default() -> Self {
        Self {
            convention: SafeConvention::Prose,
            lambda_club: 1.0,
            detach_base: false,
        }
    }
}

/// Factorized critic loss (to be minimised).
pub fn safe(tape: &mut Tape, scores: &ScoreVars, cfg: &SafeConfig) -> Result<Var> {
    let full = scores
        .s_full
        .ok_or_else(|| Error::Config("factorized loss needs augmented states".into()))?;
    let base = infonce(tape, scores.s_v);
    let joint = bo_from_base(tape, scores, base, cfg.detach_base)?;
    let upper = club(tape, full);
    let upper = tape.scale(upper, cfg.lambda_club);
    let objective = match cfg.convention {
        SafeConvention::Prose => {
            let lower = tape.add(joint, base);
            tape.sub(lower, upper)
        }
        SafeConvention::Literal => {
            let diff = tape.sub(joint, base);
            tape.add(diff, upper)
        }
    };
    Ok(tape.neg(objective))
}

/// Baseline critic losses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CrlVariant {
    /// InfoNCE on `S_v`.
    Cpc,
    /// Binary NCE on `S_v`.
    Nce,
    /// Boosted joint estimate only.
    OnlyAugment,
}

pub fn crl(tape: &mut Tape, scores: &ScoreVars, variant: CrlVariant, detach_base: bool) -> Result<Var> {
    let objective = match variant {
        CrlVariant::Cpc => infonce(tape, scores.s_v),
        CrlVariant::Nce => binary_nce(tape, scores.s_v),
        CrlVariant::OnlyAugment => bo(tape, scores, detach_base)?,
    };
    Ok(tape.neg(objective))
}

fn check_square(s: &Array2<f64>) -> Result<()> {
    if s.nrows() < 2 || s.nrows() != s.ncols() {
        return Err(Error::Dimension(format!(
            "score matrix must be square with B >= 2, got {:?}",
            s.dim()
        )));
    }
    Ok(())
}

fn eval_on(s: &Array2<f64>, f: impl Fn(&mut Tape, Var) -> Var) -> Result<f64> {
    check_square(s)?;
    let mut tape = Tape::new();
    let v = tape.constant(s.clone());
    let out = f(&mut tape, v);
    Ok(tape.scalar(out))
}

pub fn infonce_objective(s: &Array2<f64>) -> Result<f64> {
    eval_on(s, infonce)
}

/// `log B + InfoNCE`, never above `log B`.
pub fn infonce_mi_estimate(s: &Array2<f64>) -> Result<f64> {
    Ok((s.nrows() as f64).ln() + infonce_objective(s)?)
}

pub fn binary_nce_objective(s: &Array2<f64>) -> Result<f64> {
    eval_on(s, binary_nce)
}

pub fn club_estimate(s: &Array2<f64>) -> Result<f64> {
    eval_on(s, club)
}

pub fn logsumexp_penalty_value(s: &Array2<f64>) -> Result<f64> {
    eval_on(s, logsumexp_penalty)
}

fn eval_scores(
    scores: &CriticScores,
    f: impl Fn(&mut Tape, &ScoreVars) -> Result<Var>,
) -> Result<f64> {
    check_square(&scores.s_v)?;
    let mut tape = Tape::new();
    let s_v = tape.constant(scores.s_v.clone());
    let s_full = match &scores.s_full {
        Some(full) => {
            if full.dim() != scores.s_v.dim() {
                return Err(Error::Dimension("S_full shape differs from S_v".into()));
            }
            Some(tape.constant(full.clone()))
        }
        None => None,
    };
    let vars = ScoreVars {
        psi: s_v,
        s_v,
        s_full,
    };
    let out = f(&mut tape, &vars)?;
    Ok(tape.scalar(out))
}

pub fn bo_estimate(scores: &CriticScores, detach_base: bool) -> Result<f64> {
    eval_scores(scores, |t, v| bo(t, v, detach_base))
}

pub fn safe_loss(scores: &CriticScores, cfg: &SafeConfig) -> Result<f64> {
    eval_scores(scores, |t, v| safe(t, v, cfg))
}

pub fn crl_loss(scores: &CriticScores, variant: CrlVariant) -> Result<f64> {
    eval_scores(scores, |t, v| crl(t, v, variant, false))
}

/// `ψ(s,a)·φ(g)`: the critic with the goal in place of the visited state.
pub fn q_value(enc: &EncoderSet, anchor: &[f64], goal: &[f64]) -> Result<f64> {
    let psi = mlp_forward(&enc.psi, anchor)?;
    let phi = mlp_forward(&enc.phi, goal)?;
    Ok(psi.iter().zip(&phi).map(|(a, b)| a * b).sum())
}

/// Row-wise softmax with max subtraction.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
