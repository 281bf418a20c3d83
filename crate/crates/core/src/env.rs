//! Goal-conditioned environments.
//!
//! Three continuous point/valve tasks and one tabular chain. None of them
//! emits a reward: a step reports the next state and whether the goal
//! projection of that state lies within the success radius of the goal.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Half-length of the wall segment on `x = 0`.
pub const WALL_HALF_HEIGHT: f64 = 0.8;
/// Distance from the wall at which a blocked point comes to rest.
const WALL_STANDOFF: f64 = 1e-6;
const POINT_STEP: f64 = 0.05;
const VALVE_STEP: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EnvKind {
    /// Point mass in `[-1,1]²`.
    PointReach,
    /// Point mass with a wall on `x = 0, |y| ≤ 0.8`.
    PointReachWall,
    /// Valve angle on the circle `[-π, π)`.
    ValveTurn,
    /// `n`-state chain with actions {stay, forward}. A continuous action
    /// `a > 0` selects forward.
    Chain { n: usize, p_forward: f64 },
}

/// Static description of an environment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GoalEnvSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub goal_dim: usize,
    pub action_low: f64,
    pub action_high: f64,
    pub episode_len: usize,
    pub success_radius: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub success: bool,
    /// Time limit reached.
    pub terminal: bool,
}

pub const ENV_TAGS: [&str; 4] = ["point_reach", "point_reach_wall", "valve_turn", "chain"];

impl EnvKind {
    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "point_reach" => Ok(EnvKind::PointReach),
            "point_reach_wall" => Ok(EnvKind::PointReachWall),
            "valve_turn" => Ok(EnvKind::ValveTurn),
            "chain" => Ok(EnvKind::Chain {
                n: 5,
                p_forward: 0.7,
            }),
            other => Err(Error::Config(format!(
                "unknown env tag `{other}` (expected one of {})",
                ENV_TAGS.join(", ")
            ))),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            EnvKind::PointReach => "point_reach",
            EnvKind::PointReachWall => "point_reach_wall",
            EnvKind::ValveTurn => "valve_turn",
            EnvKind::Chain { .. } => "chain",
        }
    }

    pub fn spec(&self) -> GoalEnvSpec {
        match self {
            EnvKind::PointReach | EnvKind::PointReachWall => GoalEnvSpec {
                state_dim: 2,
                action_dim: 2,
                goal_dim: 2,
                action_low: -1.0,
                action_high: 1.0,
                episode_len: 50,
                success_radius: 0.1,
            },
            EnvKind::ValveTurn => GoalEnvSpec {
                state_dim: 1,
                action_dim: 1,
                goal_dim: 1,
                action_low: -1.0,
                action_high: 1.0,
                episode_len: 50,
                success_radius: 0.15,
            },
            EnvKind::Chain { .. } => GoalEnvSpec {
                state_dim: 1,
                action_dim: 1,
                goal_dim: 1,
                action_low: -1.0,
                action_high: 1.0,
                episode_len: 20,
                // states are integers; 0.5 accepts only the goal itself
                success_radius: 0.5,
            },
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if let EnvKind::Chain { n, p_forward } = *self {
            if n < 2 || !(p_forward > 0.0 && p_forward <= 1.0) {
                return Err(Error::Config(format!(
                    "chain needs n >= 2 and 0 < p_forward <= 1, got n={n}, p={p_forward}"
                )));
            }
        }
        Ok(())
    }

    /// Width of the network input produced by [`EnvKind::state_features`].
    pub fn state_feature_dim(&self) -> usize {
        match self {
            EnvKind::PointReach | EnvKind::PointReachWall => 2,
            EnvKind::ValveTurn => 2,
            EnvKind::Chain { n, .. } => *n,
        }
    }

    pub fn action_feature_dim(&self) -> usize {
        match self {
            EnvKind::PointReach | EnvKind::PointReachWall => 2,
            EnvKind::ValveTurn => 1,
            EnvKind::Chain { .. } => 2,
        }
    }

    /// Network encoding of a state: coordinates for the point tasks,
    /// `(cos θ, sin θ)` for the valve, one-hot for the chain.
    pub fn state_features(&self, state: &[f64], out: &mut Vec<f64>) {
        match self {
            EnvKind::PointReach | EnvKind::PointReachWall => out.extend_from_slice(state),
            EnvKind::ValveTurn => {
                out.push(state[0].cos());
                out.push(state[0].sin());
            }
            EnvKind::Chain { n, .. } => {
                let idx = state[0].round() as usize;
                out.extend((0..*n).map(|i| if i == idx { 1.0 } else { 0.0 }));
            }
        }
    }

    /// Goals live in state space, so they share the state encoding.
    pub fn goal_features(&self, goal: &[f64], out: &mut Vec<f64>) {
        self.state_features(goal, out)
    }

    pub fn action_features(&self, action: &[f64], out: &mut Vec<f64>) {
        match self {
            EnvKind::Chain { .. } => {
                if chain_forward(action[0]) {
                    out.extend_from_slice(&[0.0, 1.0]);
                } else {
                    out.extend_from_slice(&[1.0, 0.0]);
                }
            }
            _ => out.extend_from_slice(action),
        }
    }

    /// Whether the action encoding is differentiable in the raw action.
    pub fn continuous_actions(&self) -> bool {
        !matches!(self, EnvKind::Chain { .. })
    }

    /// Distance between the goal projection of `state` and `goal`.
    pub fn goal_distance(&self, state: &[f64], goal: &[f64]) -> f64 {
        match self {
            EnvKind::PointReach | EnvKind::PointReachWall => {
                ((state[0] - goal[0]).powi(2) + (state[1] - goal[1]).powi(2)).sqrt()
            }
            EnvKind::ValveTurn => circular_distance(state[0], goal[0]),
            EnvKind::Chain { .. } => (state[0] - goal[0]).abs(),
        }
    }

    pub fn check_goal(&self, goal: &[f64]) -> Result<()> {
        let spec = self.spec();
        if goal.len() != spec.goal_dim || goal.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "goal must have {} finite components",
                spec.goal_dim
            )));
        }
        let ok = match self {
            EnvKind::PointReach | EnvKind::PointReachWall => {
                goal.iter().all(|v| (-1.0..=1.0).contains(v))
            }
            EnvKind::ValveTurn => (-PI..PI).contains(&goal[0]),
            EnvKind::Chain { n, .. } => {
                goal[0].fract() == 0.0 && goal[0] >= 0.0 && (goal[0] as usize) < *n
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Input(format!(
                "goal {goal:?} outside the goal space of {}",
                self.tag()
            )))
        }
    }

    /// Draws an initial state.
    pub fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            EnvKind::PointReach | EnvKind::PointReachWall => {
                vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]
            }
            EnvKind::ValveTurn => vec![rng.random_range(-PI..PI)],
            EnvKind::Chain { .. } => vec![0.0],
        }
    }

    /// Uniform goal over the goal space.
    pub fn sample_goal<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            EnvKind::PointReach | EnvKind::PointReachWall => {
                vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]
            }
            EnvKind::ValveTurn => vec![rng.random_range(-PI..PI)],
            EnvKind::Chain { n, .. } => vec![rng.random_range(0..*n) as f64],
        }
    }

    /// One transition. Actions are clamped to the bounds.
    pub fn transition<R: Rng + ?Sized>(
        &self,
        state: &[f64],
        action: &[f64],
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let spec = self.spec();
        if action.len() != spec.action_dim {
            return Err(Error::Input(format!(
                "action has {} components, expected {}",
                action.len(),
                spec.action_dim
            )));
        }
        if action.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite action {action:?}")));
        }
        let a: Vec<f64> = action
            .iter()
            .map(|v| v.clamp(spec.action_low, spec.action_high))
            .collect();
        Ok(match self {
            EnvKind::PointReach => vec![
                (state[0] + POINT_STEP * a[0]).clamp(-1.0, 1.0),
                (state[1] + POINT_STEP * a[1]).clamp(-1.0, 1.0),
            ],
            EnvKind::PointReachWall => wall_step(state, &a),
            EnvKind::ValveTurn => vec![wrap_angle(state[0] + VALVE_STEP * a[0])],
            EnvKind::Chain { n, p_forward } => {
                let s = state[0].round() as usize;
                let forward = chain_forward(a[0]);
                let next = if forward && s + 1 < *n && rng.random::<f64>() < *p_forward {
                    s + 1
                } else {
                    s
                };
                vec![next as f64]
            }
        })
    }
}

fn chain_forward(a: f64) -> bool {
    a > 0.0
}

/// Maps an angle onto `[-π, π)`.
pub fn wrap_angle(x: f64) -> f64 {
    let w = (x + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can round up to exactly 2π
    if w >= PI {
        -PI
    } else {
        w
    }
}

pub fn circular_distance(a: f64, b: f64) -> f64 {
    wrap_angle(a - b).abs()
}

fn wall_step(state: &[f64], a: &[f64]) -> Vec<f64> {
    let (x, y) = (state[0], state[1]);
    let nx = (x + POINT_STEP * a[0]).clamp(-1.0, 1.0);
    let ny = (y + POINT_STEP * a[1]).clamp(-1.0, 1.0);
    if crosses_wall(x, y, nx, ny) {
        // stop short of the wall on the current side; motion along y is kept
        let side = if x < 0.0 { -1.0 } else { 1.0 };
        vec![side * WALL_STANDOFF, ny]
    } else {
        vec![nx, ny]
    }
}

/// Whether the segment `(x0,y0)→(x1,y1)` touches the wall segment.
pub fn crosses_wall(x0: f64, y0: f64, x1: f64, y1: f64) -> bool {
    if x0 == 0.0 && y0.abs() <= WALL_HALF_HEIGHT {
        // already on the wall: only moving along it or away is "crossing"
        return x1 != 0.0 || y1.abs() <= WALL_HALF_HEIGHT;
    }
    let touches = (x0 <= 0.0 && x1 >= 0.0) || (x0 >= 0.0 && x1 <= 0.0);
    if !touches {
        return false;
    }
    let t = if x1 == x0 { 0.0 } else { x0 / (x0 - x1) };
    let yc = y0 + t * (y1 - y0);
    yc.abs() <= WALL_HALF_HEIGHT
}

/// One episode of a goal-conditioned environment.
#[derive(Clone, Debug)]
pub struct GoalEnv {
    kind: EnvKind,
    spec: GoalEnvSpec,
    goal: Vec<f64>,
    state: Vec<f64>,
    t: usize,
    rng: ChaCha8Rng,
}

impl GoalEnv {
    /// Starts an episode toward `goal` with the default episode length.
    pub fn reset(kind: EnvKind, goal: &[f64], seed: u64) -> Result<Self> {
        Self::reset_with_len(kind, kind.spec().episode_len, goal, seed)
    }

    pub fn reset_with_len(kind: EnvKind, episode_len: usize, goal: &[f64], seed: u64) -> Result<Self> {
        kind.validate()?;
        if episode_len < 2 {
            return Err(Error::Config("episode length must be at least 2".into()));
        }
        kind.check_goal(goal)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = kind.initial_state(&mut rng);
        let mut spec = kind.spec();
        spec.episode_len = episode_len;
        Ok(Self {
            kind,
            spec,
            goal: goal.to_vec(),
            state,
            t: 0,
            rng,
        })
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    pub fn spec(&self) -> &GoalEnvSpec {
        &self.spec
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn goal(&self) -> &[f64] {
        &self.goal
    }

    pub fn elapsed(&self) -> usize {
        self.t
    }

    pub fn is_success(&self, state: &[f64]) -> bool {
        self.kind.goal_distance(state, &self.goal) <= self.spec.success_radius
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let next = self.kind.transition(&self.state, action, &mut self.rng)?;
        self.state = next.clone();
        self.t += 1;
        Ok(StepResult {
            success: self.is_success(&next),
            next_state: next,
            terminal: self.t >= self.spec.episode_len,
        })
    }
}

/// Transition tensor of the chain, indexed `[state][action][next]` with
/// action 0 = stay, 1 = forward.
pub fn chain_mdp_kernel(n: usize, p_forward: f64) -> Result<Vec<Vec<Vec<f64>>>> {
    EnvKind::Chain { n, p_forward }.validate()?;
    let mut p = vec![vec![vec![0.0; n]; 2]; n];
    for (s, row) in p.iter_mut().enumerate() {
        row[0][s] = 1.0;
        if s + 1 < n {
            row[1][s + 1] = p_forward;
            row[1][s] = 1.0 - p_forward;
        } else {
            row[1][s] = 1.0;
        }
    }
    Ok(p)
}
