//! The training loop: rollouts, critic and actor updates, evaluation.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{write_metrics, Checkpoint, MetricsRow};
use super::config::{Method, TrainConfig};
use crate::actor::{actor_step, sample_noise, ActorBatch, PolicyParams};
use crate::contrastive::{
    club_estimate, crl, infonce_mi_estimate, logsumexp_penalty, safe, score_graph, CriticInputs, CriticScores,
    CrlVariant, EncoderSet, SafeConfig, ScoreVars,
};
use crate::env::{EnvKind, GoalEnv};
use crate::error::{Error, Result};
use crate::numerics::{opt_step, AdamConfig, BoundParams, OptState, ParamSet, Tape, Var};
use crate::replay::{sample_batch, ContrastiveBatch, ReplayBuffer, Trajectory};

/// Independent random streams derived from one seed.
#[derive(Clone, Copy, Debug)]
enum Stream {
    Init = 1,
    Goals = 2,
    Episodes = 3,
    Sampler = 4,
    Policy = 5,
}

fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// SplitMix64 finaliser, used to derive per-evaluation seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Network features of each row of raw states.
pub fn state_features(env: EnvKind, states: ArrayView2<'_, f64>) -> Array2<f64> {
    let width = env.state_feature_dim();
    let mut flat = Vec::with_capacity(states.nrows() * width);
    for row in states.rows() {
        env.state_features(row.as_slice().expect("contiguous row"), &mut flat);
    }
    Array2::from_shape_vec((states.nrows(), width), flat).expect("feature width")
}

pub fn action_features(env: EnvKind, actions: ArrayView2<'_, f64>) -> Array2<f64> {
    let width = env.action_feature_dim();
    let mut flat = Vec::with_capacity(actions.nrows() * width);
    for row in actions.rows() {
        env.action_features(row.as_slice().expect("contiguous row"), &mut flat);
    }
    Array2::from_shape_vec((actions.nrows(), width), flat).expect("feature width")
}

/// `[state features, action features]` rows for ψ.
pub fn anchor_features(env: EnvKind, states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Array2<f64> {
    let s = state_features(env, states);
    let a = action_features(env, actions);
    ndarray::concatenate(Axis(1), &[s.view(), a.view()]).expect("matching rows")
}

/// Feature-encodes a sampled batch for the critic.
pub fn critic_inputs(env: EnvKind, batch: &ContrastiveBatch) -> CriticInputs {
    CriticInputs {
        anchors: anchor_features(env, batch.anchor_states.view(), batch.anchor_actions.view()),
        visited: state_features(env, batch.visited_states.view()),
        augmented: batch
            .augmented_states
            .as_ref()
            .map(|a| state_features(env, a.view())),
    }
}

/// Loss graph of `method` plus `lse_weight` times the squared
/// row-logsumexp of `ψφᵀ`. `nets` holds ψ, φ and, for augmenting methods,
/// φ̂.
pub fn critic_graph(
    tape: &mut Tape,
    nets: &[BoundParams],
    inputs: &CriticInputs,
    method: Method,
    safe_cfg: &SafeConfig,
    lse_weight: f64,
) -> Result<(Var, ScoreVars)> {
    let scores = score_graph(tape, &nets[0], &nets[1], nets.get(2), inputs);
    let loss = match method {
        Method::Visa => safe(tape, &scores, safe_cfg),
        Method::CrlCpc => crl(tape, &scores, CrlVariant::Cpc, safe_cfg.detach_base),
        Method::CrlNce => crl(tape, &scores, CrlVariant::Nce, safe_cfg.detach_base),
        Method::OnlyAugment => crl(tape, &scores, CrlVariant::OnlyAugment, safe_cfg.detach_base),
    }?;
    let loss = if lse_weight > 0.0 {
        let pen = logsumexp_penalty(tape, scores.s_v);
        let pen = tape.scale(pen, lse_weight);
        tape.add(loss, pen)
    } else {
        loss
    };
    Ok((loss, scores))
}

/// Result of one critic gradient evaluation.
#[derive(Clone, Debug)]
pub struct CriticStep {
    pub loss: f64,
    /// Gradients of ψ, φ and (augmenting methods only) φ̂.
    pub grads: Vec<ParamSet>,
    pub scores: CriticScores,
}

pub fn critic_step(
    enc: &EncoderSet,
    inputs: &CriticInputs,
    method: Method,
    safe_cfg: &SafeConfig,
    lse_weight: f64,
) -> Result<CriticStep> {
    if method.uses_augmentation() && inputs.augmented.is_none() {
        return Err(Error::Config(format!("method {method} needs augmented states")));
    }
    let mut tape = Tape::new();
    let mut nets = vec![tape.bind(&enc.psi, true), tape.bind(&enc.phi, true)];
    if method.uses_augmentation() {
        nets.push(tape.bind(&enc.phi_hat, true));
    }
    let (loss, vars) = critic_graph(&mut tape, &nets, inputs, method, safe_cfg, lse_weight)?;
    let mut grads = tape.backward(loss)?;
    let loss_value = tape.scalar(loss);
    let param_grads = nets.iter().map(|n| grads.param_grads(n)).collect();
    let scores = CriticScores {
        s_v: tape.value(vars.s_v).clone(),
        s_full: vars.s_full.map(|v| tape.value(v).clone()),
    };
    Ok(CriticStep {
        loss: loss_value,
        grads: param_grads,
        scores,
    })
}

/// Networks and optimiser state of one run.
#[derive(Clone, Debug)]
pub struct Agent {
    pub encoders: EncoderSet,
    pub policy: PolicyParams,
    critic_opt: Vec<OptState>,
    actor_opt: OptState,
}

impl Agent {
    pub fn new(cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Self {
        let env = cfg.env;
        let sd = env.state_feature_dim();
        let spec = env.spec();
        let encoders = EncoderSet::init(
            sd + env.action_feature_dim(),
            sd,
            &cfg.hidden,
            cfg.embed_dim,
            rng,
        );
        let policy = PolicyParams::init(2 * sd, &cfg.hidden, spec.action_dim, spec.action_low, spec.action_high, rng);
        let critic_opt = vec![
            OptState::new(&encoders.psi),
            OptState::new(&encoders.phi),
            OptState::new(&encoders.phi_hat),
        ];
        let actor_opt = OptState::new(&policy.trunk);
        Self {
            encoders,
            policy,
            critic_opt,
            actor_opt,
        }
    }

    pub fn checkpoint(&self, env: EnvKind, episode_len: usize) -> Checkpoint {
        Checkpoint {
            env,
            episode_len,
            encoders: self.encoders.clone(),
            policy: self.policy.clone(),
        }
    }
}

/// Statistics of one update.
#[derive(Clone, Copy, Debug, Default)]
struct UpdateStats {
    critic_loss: f64,
    infonce: f64,
    club: f64,
    bo: f64,
    actor_loss: f64,
    entropy: f64,
    reach_visited: f64,
    reach_augmented: f64,
}

/// Running means over an evaluation interval.
#[derive(Debug, Default)]
struct Accumulator {
    sum: UpdateStats,
    count: usize,
}

impl Accumulator {
    fn push(&mut self, s: &UpdateStats) {
        let t = &mut self.sum;
        t.critic_loss += s.critic_loss;
        t.infonce += s.infonce;
        t.club += s.club;
        t.bo += s.bo;
        t.actor_loss += s.actor_loss;
        t.entropy += s.entropy;
        t.reach_visited += s.reach_visited;
        t.reach_augmented += s.reach_augmented;
        self.count += 1;
    }

    fn take_row(&mut self, env_step: usize, success: f64) -> MetricsRow {
        let n = self.count as f64;
        let m = |v: f64| if self.count == 0 { f64::NAN } else { v / n };
        let s = self.sum;
        let row = MetricsRow {
            env_step,
            eval_success_rate: success,
            critic_loss: m(s.critic_loss),
            infonce_value: m(s.infonce),
            club_value: m(s.club),
            bo_value: m(s.bo),
            actor_loss: m(s.actor_loss),
            policy_entropy: m(s.entropy),
            mean_reach_visited: m(s.reach_visited),
            mean_reach_augmented: m(s.reach_augmented),
        };
        *self = Self::default();
        row
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// One critic update, plus one actor update unless the run is critic-only.
fn update(
    agent: &mut Agent,
    cfg: &TrainConfig,
    buffer: &ReplayBuffer,
    sampler_rng: &mut ChaCha8Rng,
    policy_rng: &mut ChaCha8Rng,
) -> Result<UpdateStats> {
    let spec = cfg.augmentation();
    let batch = sample_batch(buffer, cfg.critic_batch(), cfg.gamma, &spec, sampler_rng)?;
    let inputs = critic_inputs(cfg.env, &batch);
    let step = critic_step(&agent.encoders, &inputs, cfg.method, &cfg.safe_config(), cfg.logsumexp_penalty)?;
    let adam = AdamConfig::new(cfg.lr_critic);
    let enc = &mut agent.encoders;
    let targets: [&mut ParamSet; 3] = [&mut enc.psi, &mut enc.phi, &mut enc.phi_hat];
    for ((params, grad), state) in targets.into_iter().zip(&step.grads).zip(&mut agent.critic_opt) {
        opt_step(params, grad, state, &adam)?;
    }

    let scores = &step.scores;
    let joint = scores.s_full.as_ref();
    let mut stats = UpdateStats {
        critic_loss: step.loss,
        infonce: infonce_mi_estimate(&scores.s_v)?,
        club: club_estimate(joint.unwrap_or(&scores.s_v))?,
        bo: match joint {
            Some(s) => infonce_mi_estimate(s)?,
            None => f64::NAN,
        },
        actor_loss: f64::NAN,
        entropy: f64::NAN,
        reach_visited: mean(batch.rows.iter().map(|r| r.visited_reachability())),
        reach_augmented: mean(batch.rows.iter().filter_map(|r| r.augmented_reachability())),
    };

    if !cfg.critic_only {
        // actor goals are relabelled to the visited future states
        let take = cfg.batch_size.min(batch.len());
        let states = state_features(cfg.env, batch.anchor_states.slice(ndarray::s![..take, ..]));
        let goals = state_features(cfg.env, batch.visited_states.slice(ndarray::s![..take, ..]));
        let actor_batch = ActorBatch::new(&agent.policy, states, goals, policy_rng);
        let a = actor_step(&agent.policy, &agent.encoders, &actor_batch, cfg.alpha)?;
        opt_step(
            &mut agent.policy.trunk,
            &a.grad,
            &mut agent.actor_opt,
            &AdamConfig::new(cfg.lr_actor),
        )?;
        stats.actor_loss = a.loss;
        stats.entropy = -a.log_prob_mean;
    }
    Ok(stats)
}

/// Policy input rows `[state features, goal features]`.
fn policy_inputs(env: EnvKind, states: &[Vec<f64>], goals: &[Vec<f64>]) -> Array2<f64> {
    let width = 2 * env.state_feature_dim();
    let mut flat = Vec::with_capacity(states.len() * width);
    for (s, g) in states.iter().zip(goals) {
        env.state_features(s, &mut flat);
        env.goal_features(g, &mut flat);
    }
    Array2::from_shape_vec((states.len(), width), flat).expect("feature width")
}

/// Fraction of `episodes` greedy rollouts whose final state lies within the
/// success radius of a freshly sampled goal.
pub fn evaluate_policy(
    policy: &PolicyParams,
    env: EnvKind,
    episode_len: usize,
    episodes: usize,
    seed: u64,
) -> Result<f64> {
    if episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut envs = (0..episodes)
        .map(|_| {
            let goal = env.sample_goal(&mut rng);
            GoalEnv::reset_with_len(env, episode_len, &goal, rng.random())
        })
        .collect::<Result<Vec<_>>>()?;
    let goals: Vec<Vec<f64>> = envs.iter().map(|e| e.goal().to_vec()).collect();
    for _ in 0..episode_len {
        let states: Vec<Vec<f64>> = envs.iter().map(|e| e.state().to_vec()).collect();
        let actions = policy.greedy_batch(&policy_inputs(env, &states, &goals))?;
        for (e, a) in envs.iter_mut().zip(actions.rows()) {
            e.step(a.as_slice().expect("contiguous row"))?;
        }
    }
    let wins = envs.iter().filter(|e| e.is_success(e.state())).count();
    Ok(wins as f64 / episodes as f64)
}

/// Greedy evaluation of a stored checkpoint. The checkpoint must have been
/// trained on `env`.
pub fn evaluate(checkpoint: &Path, env: EnvKind, episodes: usize, seed: u64) -> Result<f64> {
    let ckpt = Checkpoint::load_for(checkpoint, env)?;
    evaluate_policy(&ckpt.policy, env, ckpt.episode_len, episodes, seed)
}

/// Collects one episode. `random_actions` draws actions uniformly in the
/// action box; otherwise the stochastic policy acts.
fn collect_episode(
    agent: &Agent,
    env: EnvKind,
    horizon: usize,
    goal: &[f64],
    episode_seed: u64,
    random_actions: impl Fn(usize) -> bool,
    policy_rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    let spec = env.spec();
    let mut episode = GoalEnv::reset_with_len(env, horizon, goal, episode_seed)?;
    let mut states = Array2::zeros((horizon + 1, spec.state_dim));
    let mut actions = Array2::zeros((horizon, spec.action_dim));
    states.row_mut(0).assign(&ndarray::aview1(episode.state()));
    for t in 0..horizon {
        let action: Vec<f64> = if random_actions(t) {
            (0..spec.action_dim)
                .map(|_| policy_rng.random_range(spec.action_low..spec.action_high))
                .collect()
        } else {
            let input = policy_inputs(env, &[episode.state().to_vec()], &[goal.to_vec()]);
            let noise = sample_noise(1, spec.action_dim, policy_rng);
            agent.policy.sample_actions(&input, &noise)?.row(0).to_vec()
        };
        let step = episode.step(&action)?;
        actions.row_mut(t).assign(&ndarray::aview1(&action));
        states.row_mut(t + 1).assign(&ndarray::aview1(&step.next_state));
    }
    Trajectory::new(states, actions, goal.to_vec())
}

/// Everything a finished run produced.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub rows: Vec<MetricsRow>,
    pub agent: Agent,
    pub buffer: ReplayBuffer,
    pub metrics_path: Option<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
}

impl TrainOutcome {
    pub fn final_success(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.eval_success_rate)
    }
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CONFIG_FILE: &str = "config.txt";

/// Runs one training job. With `out_dir` set, writes `metrics.csv`,
/// `checkpoint.bin` and the resolved `config.txt` there.
pub fn train(cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let env = cfg.env;
    let horizon = cfg.horizon();
    let mut init_rng = stream_rng(cfg.seed, Stream::Init);
    let mut goal_rng = stream_rng(cfg.seed, Stream::Goals);
    let mut episode_rng = stream_rng(cfg.seed, Stream::Episodes);
    let mut sampler_rng = stream_rng(cfg.seed, Stream::Sampler);
    let mut policy_rng = stream_rng(cfg.seed, Stream::Policy);

    let mut agent = Agent::new(cfg, &mut init_rng);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut acc = Accumulator::default();
    let mut rows = Vec::new();
    let mut env_step = 0usize;
    let mut credit = 0.0f64;

    while env_step < cfg.total_env_steps {
        let goal = env.sample_goal(&mut goal_rng);
        let episode_seed: u64 = episode_rng.random();
        let start = env_step;
        let random = |t: usize| cfg.critic_only || start + t < cfg.warmup_steps;
        let traj = collect_episode(&agent, env, horizon, &goal, episode_seed, random, &mut policy_rng)?;

        for _ in 0..horizon {
            env_step += 1;
            if env_step >= cfg.warmup_steps && buffer.len() >= 2 {
                credit += cfg.updates_per_step;
                while credit >= 1.0 {
                    credit -= 1.0;
                    let stats = update(&mut agent, cfg, &buffer, &mut sampler_rng, &mut policy_rng)?;
                    acc.push(&stats);
                }
            }
            if env_step % cfg.eval_every == 0 || env_step == cfg.total_env_steps {
                let seed = mix_seed(cfg.seed, env_step as u64);
                let success = evaluate_policy(&agent.policy, env, horizon, cfg.eval_episodes, seed)?;
                rows.push(acc.take_row(env_step, success));
            }
            if env_step == cfg.total_env_steps {
                break;
            }
        }
        buffer.append(traj)?;
    }

    let (mut metrics_path, mut checkpoint_path) = (None, None);
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        let m = dir.join(METRICS_FILE);
        write_metrics(&m, &rows)?;
        let c = dir.join(CHECKPOINT_FILE);
        agent.checkpoint(env, horizon).save(&c)?;
        fs::write(dir.join(CONFIG_FILE), cfg.to_text())?;
        metrics_path = Some(m);
        checkpoint_path = Some(c);
    }
    Ok(TrainOutcome {
        rows,
        agent,
        buffer,
        metrics_path,
        checkpoint_path,
    })
}
