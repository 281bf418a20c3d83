//! Trajectory replay and the contrastive samplers.
//!
//! Offsets for the visited state are drawn from a geometric distribution
//! truncated to the remainder of the episode. Augmented states are drawn
//! relative to the visited state according to an [`AugmentationSpec`].

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};

/// One stored episode: `T + 1` states and `T` actions.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub exploration_goal: Vec<f64>,
    /// Assigned by the buffer on insertion.
    pub episode_id: u64,
}

impl Trajectory {
    pub fn new(states: Array2<f64>, actions: Array2<f64>, exploration_goal: Vec<f64>) -> Result<Self> {
        let traj = Self {
            states,
            actions,
            exploration_goal,
            episode_id: 0,
        };
        traj.validate()?;
        Ok(traj)
    }

    pub fn validate(&self) -> Result<()> {
        if self.actions.nrows() < 1 || self.states.nrows() != self.actions.nrows() + 1 {
            return Err(Error::Input(format!(
                "trajectory has {} states for {} actions",
                self.states.nrows(),
                self.actions.nrows()
            )));
        }
        if self.states.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("trajectory contains non-finite states".into()));
        }
        Ok(())
    }

    /// Episode length `T` (number of actions).
    pub fn len(&self) -> usize {
        self.actions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state(&self, i: usize) -> ArrayView1<'_, f64> {
        self.states.row(i)
    }

    pub fn action(&self, i: usize) -> ArrayView1<'_, f64> {
        self.actions.row(i)
    }
}

/// Ring buffer of whole episodes; the oldest episode is evicted first.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    episodes: VecDeque<Trajectory>,
    capacity: usize,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            episodes: VecDeque::with_capacity(capacity.min(4096)),
            capacity,
            inserted: 0,
        }
    }

    /// Stores a trajectory and returns its episode id.
    pub fn append(&mut self, mut traj: Trajectory) -> Result<u64> {
        traj.validate()?;
        traj.episode_id = self.inserted;
        self.inserted += 1;
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(traj);
        Ok(self.inserted - 1)
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total number of trajectories ever appended.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn get(&self, slot: usize) -> &Trajectory {
        &self.episodes[slot]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Trajectory> {
        self.episodes.iter()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AugmentationTag {
    None,
    StrongUnbias,
    MiddleUnbias,
    WeakUnbias,
    RandomTime,
    RandomGoal,
    OnlyAugment,
}

impl AugmentationTag {
    pub const ALL: [AugmentationTag; 7] = [
        AugmentationTag::None,
        AugmentationTag::StrongUnbias,
        AugmentationTag::MiddleUnbias,
        AugmentationTag::WeakUnbias,
        AugmentationTag::RandomTime,
        AugmentationTag::RandomGoal,
        AugmentationTag::OnlyAugment,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AugmentationTag::None => "none",
            AugmentationTag::StrongUnbias => "strong_unbias",
            AugmentationTag::MiddleUnbias => "middle_unbias",
            AugmentationTag::WeakUnbias => "weak_unbias",
            AugmentationTag::RandomTime => "random_time",
            AugmentationTag::RandomGoal => "random_goal",
            AugmentationTag::OnlyAugment => "only_augment",
        }
    }

    /// Tags whose augmented index never precedes the visited index.
    pub fn future_only(&self) -> bool {
        matches!(
            self,
            AugmentationTag::StrongUnbias
                | AugmentationTag::MiddleUnbias
                | AugmentationTag::WeakUnbias
                | AugmentationTag::OnlyAugment
        )
    }
}

impl fmt::Display for AugmentationTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AugmentationTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AugmentationTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown augmentation tag `{s}`")))
    }
}

/// Default flattening exponent for `middle_unbias`: its decay is
/// `γ_aug^(1/4)`.
pub const MIDDLE_UNBIAS_EXPONENT: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentationSpec {
    pub tag: AugmentationTag,
    pub gamma_aug: f64,
    pub middle_exponent: f64,
}

impl AugmentationSpec {
    pub fn new(tag: AugmentationTag, gamma_aug: f64) -> Self {
        Self {
            tag,
            gamma_aug,
            middle_exponent: MIDDLE_UNBIAS_EXPONENT,
        }
    }

    pub fn none() -> Self {
        Self::new(AugmentationTag::None, 0.99)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_aug > 0.0 && self.gamma_aug < 1.0) {
            return Err(Error::Config(format!(
                "gamma_aug must lie in (0,1), got {}",
                self.gamma_aug
            )));
        }
        if !(self.middle_exponent > 0.0 && self.middle_exponent <= 1.0) {
            return Err(Error::Config("middle exponent must lie in (0,1]".into()));
        }
        Ok(())
    }

    /// Unnormalised weights over offsets `d = 1..=remaining` for the
    /// future-only tags.
    pub fn offset_weights(&self, remaining: usize) -> Vec<f64> {
        let g = self.gamma_aug;
        match self.tag {
            AugmentationTag::StrongUnbias | AugmentationTag::OnlyAugment => {
                strong_unbias_weights(remaining, g)
            }
            AugmentationTag::WeakUnbias => geometric_weights(remaining, g),
            AugmentationTag::MiddleUnbias => geometric_weights(remaining, g.powf(self.middle_exponent)),
            _ => Vec::new(),
        }
    }
}

/// `(1−γ)·γ^(d−1)` for `d = 1..=remaining`.
pub fn geometric_weights(remaining: usize, gamma: f64) -> Vec<f64> {
    let mut w = Vec::with_capacity(remaining);
    let mut p = 1.0 - gamma;
    for _ in 0..remaining {
        w.push(p);
        p *= gamma;
    }
    w
}

/// `1 − (1−γ)·γ^(d−1)` for `d = 1..=remaining`: increasing in `d`.
pub fn strong_unbias_weights(remaining: usize, gamma: f64) -> Vec<f64> {
    geometric_weights(remaining, gamma)
        .into_iter()
        .map(|p| 1.0 - p)
        .collect()
}

fn sample_weighted<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Draws `j = t + Δ` with `P(Δ = d) ∝ (1−γ)γ^(d−1)` on `d ∈ 1..=T−t`.
pub fn sample_visited_index<R: Rng + ?Sized>(
    episode_len: usize,
    anchor: usize,
    gamma: f64,
    rng: &mut R,
) -> Result<usize> {
    if anchor >= episode_len {
        return Err(Error::Input(format!(
            "anchor index {anchor} has no future state in an episode of length {episode_len}"
        )));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Config(format!("gamma must lie in (0,1), got {gamma}")));
    }
    let remaining = (episode_len - anchor) as i32;
    // inverse CDF of the truncated geometric: P(Δ ≤ d) = (1 − γ^d) / (1 − γ^R)
    let u: f64 = rng.random();
    let mass = 1.0 - gamma.powi(remaining);
    let d = ((1.0 - u * mass).ln() / gamma.ln()).ceil() as i64;
    let d = d.clamp(1, remaining as i64) as usize;
    Ok(anchor + d)
}

/// Location of an augmented state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentedIndex {
    /// Buffer slot of the trajectory the state comes from.
    pub slot: usize,
    pub index: usize,
}

/// Draws the augmented state for the visited state `visited` of the
/// trajectory in buffer slot `slot`.
pub fn sample_augmented_index<R: Rng + ?Sized>(
    buffer: &ReplayBuffer,
    slot: usize,
    visited: usize,
    spec: &AugmentationSpec,
    rng: &mut R,
) -> Result<AugmentedIndex> {
    let episode_len = buffer.get(slot).len();
    if visited == 0 || visited > episode_len {
        return Err(Error::Input(format!(
            "visited index {visited} outside 1..={episode_len}"
        )));
    }
    match spec.tag {
        AugmentationTag::None => Err(Error::Config(
            "augmented sampling requested with tag `none`".into(),
        )),
        AugmentationTag::RandomTime => {
            let r = rng.random_range(0..episode_len);
            let index = if r >= visited { r + 1 } else { r };
            Ok(AugmentedIndex { slot, index })
        }
        AugmentationTag::RandomGoal => {
            if buffer.len() < 2 {
                return Err(Error::Input(
                    "random_goal needs at least two stored trajectories".into(),
                ));
            }
            let r = rng.random_range(0..buffer.len() - 1);
            let other = if r >= slot { r + 1 } else { r };
            let index = rng.random_range(0..=buffer.get(other).len());
            Ok(AugmentedIndex { slot: other, index })
        }
        _ => {
            let remaining = episode_len - visited;
            if remaining == 0 {
                return Ok(AugmentedIndex {
                    slot,
                    index: visited,
                });
            }
            let weights = spec.offset_weights(remaining);
            let d = sample_weighted(&weights, rng) + 1;
            Ok(AugmentedIndex {
                slot,
                index: visited + d,
            })
        }
    }
}

/// `N / T`, the fraction of the episode between anchor and sampled state.
pub fn reachability_score(anchor: usize, sampled: usize, episode_len: usize) -> f64 {
    let n = anchor.abs_diff(sampled).min(episode_len);
    n as f64 / episode_len as f64
}

/// Index bookkeeping for one batch row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchRow {
    pub slot: usize,
    pub episode_id: u64,
    pub episode_len: usize,
    /// Anchor step `t`.
    pub anchor: usize,
    /// Visited step `j > t`.
    pub visited: usize,
    pub augmented: Option<AugmentedIndex>,
}

impl BatchRow {
    pub fn visited_reachability(&self) -> f64 {
        reachability_score(self.anchor, self.visited, self.episode_len)
    }

    /// Cross-trajectory samples score 1.
    pub fn augmented_reachability(&self) -> Option<f64> {
        self.augmented.map(|a| {
            if a.slot != self.slot {
                1.0
            } else {
                reachability_score(self.anchor, a.index, self.episode_len)
            }
        })
    }
}

/// Rows of anchors, visited states and (optionally) augmented states. Row
/// `i` is the positive for anchor `i`; every other row is a negative.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveBatch {
    pub rows: Vec<BatchRow>,
    pub anchor_states: Array2<f64>,
    pub anchor_actions: Array2<f64>,
    pub visited_states: Array2<f64>,
    pub augmented_states: Option<Array2<f64>>,
    pub exploration_goals: Array2<f64>,
    pub tag: AugmentationTag,
}

impl ContrastiveBatch {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Samples `batch_size` rows. Trajectories are drawn without replacement
/// when the buffer holds at least `batch_size` of them, so that no two rows
/// share a rollout; otherwise with replacement.
pub fn sample_batch<R: Rng + ?Sized>(
    buffer: &ReplayBuffer,
    batch_size: usize,
    gamma: f64,
    spec: &AugmentationSpec,
    rng: &mut R,
) -> Result<ContrastiveBatch> {
    if batch_size < 2 {
        return Err(Error::Config("batch size must be at least 2".into()));
    }
    if buffer.len() < 2 {
        return Err(Error::Input(format!(
            "need at least two trajectories to sample a batch, have {}",
            buffer.len()
        )));
    }
    if spec.tag != AugmentationTag::None {
        spec.validate()?;
    }
    let slots: Vec<usize> = if buffer.len() >= batch_size {
        sample(rng, buffer.len(), batch_size).into_vec()
    } else {
        (0..batch_size)
            .map(|_| rng.random_range(0..buffer.len()))
            .collect()
    };

    let first = buffer.get(0);
    let (sd, ad, gd) = (
        first.states.ncols(),
        first.actions.ncols(),
        first.exploration_goal.len(),
    );
    let mut anchor_states = Array2::zeros((batch_size, sd));
    let mut anchor_actions = Array2::zeros((batch_size, ad));
    let mut visited_states = Array2::zeros((batch_size, sd));
    let mut exploration_goals = Array2::zeros((batch_size, gd));
    let augmenting = spec.tag != AugmentationTag::None;
    let mut augmented_states = augmenting.then(|| Array2::zeros((batch_size, sd)));
    let mut rows = Vec::with_capacity(batch_size);

    for (i, &slot) in slots.iter().enumerate() {
        let traj = buffer.get(slot);
        let episode_len = traj.len();
        let anchor = rng.random_range(0..episode_len);
        let visited = sample_visited_index(episode_len, anchor, gamma, rng)?;
        let augmented = if augmenting {
            Some(sample_augmented_index(buffer, slot, visited, spec, rng)?)
        } else {
            None
        };
        anchor_states.row_mut(i).assign(&traj.state(anchor));
        anchor_actions.row_mut(i).assign(&traj.action(anchor));
        visited_states.row_mut(i).assign(&traj.state(visited));
        exploration_goals
            .row_mut(i)
            .iter_mut()
            .zip(&traj.exploration_goal)
            .for_each(|(d, s)| *d = *s);
        if let (Some(aug), Some(out)) = (augmented, augmented_states.as_mut()) {
            out.row_mut(i).assign(&buffer.get(aug.slot).state(aug.index));
        }
        rows.push(BatchRow {
            slot,
            episode_id: traj.episode_id,
            episode_len,
            anchor,
            visited,
            augmented,
        });
    }

    Ok(ContrastiveBatch {
        rows,
        anchor_states,
        anchor_actions,
        visited_states,
        augmented_states: augmented_states.take(),
        exploration_goals,
        tag: spec.tag,
    })
}
