//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --release --test acceptance -- 3 10`.

use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use visa_core::actor::{actor_grad_check, ActorBatch};
use visa_core::contrastive::{
    binary_nce, bo, club, infonce, safe, score_graph, CriticInputs, SafeConfig, ScoreVars,
};
use visa_core::env::{chain_mdp_kernel, EnvKind, GoalEnv};
use visa_core::numerics::{finite_diff_check, BoundParams, Tape, Var};
use visa_core::oracle::{discounted_occupancy, discrete_mi, DiscreteJoint, MiKind, TabularMDP};
use visa_core::replay::{sample_augmented_index, sample_visited_index, strong_unbias_weights};
use visa_core::trainer::{
    anchor_features, coverage, critic_step, mi_bench_one, run_ablation, state_features, train,
    MiBenchConfig, Variant,
};
use visa_core::{
    AugmentationSpec, AugmentationTag, EncoderSet, Method, PolicyParams, ReplayBuffer,
    SafeConvention, TrainConfig, Trajectory,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed <= Duration::from_secs(limit_secs)
}

fn uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

// 1 ---------------------------------------------------------------------------

fn factorization_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dirichlet = Gamma::new(0.7, 1.0).unwrap();
    let mut worst: f64 = 0.0;
    let joints = 200;
    for _ in 0..joints {
        let dims = [rng.random_range(2..=4), rng.random_range(2..=4), rng.random_range(2..=4)];
        let weights: Vec<f64> = (0..dims.iter().product())
            .map(|_| dirichlet.sample(&mut rng))
            .collect();
        let joint = DiscreteJoint::from_weights(dims, &weights).unwrap();
        let lhs = discrete_mi(&joint, MiKind::Xy);
        let rhs = discrete_mi(&joint, MiKind::XYz) - discrete_mi(&joint, MiKind::XzGivenY);
        worst = worst.max((lhs - rhs).abs());
    }
    outcome(
        worst < 1e-10,
        format!("{joints} joints, max |I(X;Y) - (I(X;YZ) - I(X;Z|Y))| = {worst:.2e}"),
    )
}

// 2 ---------------------------------------------------------------------------

fn uniform_chain(gamma: f64) -> TabularMDP {
    TabularMDP::new(chain_mdp_kernel(5, 0.7).unwrap(), vec![vec![0.5, 0.5]; 5], gamma).unwrap()
}

/// Raw chain action for the tabular action index (0 stay, 1 forward).
fn chain_action(a: usize) -> f64 {
    if a == 1 {
        0.5
    } else {
        -0.5
    }
}

fn occupancy_oracle() -> Outcome {
    let gamma = 0.9;
    let mdp = uniform_chain(gamma);
    let env = EnvKind::Chain { n: 5, p_forward: 0.7 };
    let episodes = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut linf, mut row_err): (f64, f64) = (0.0, 0.0);
    for s in 0..5 {
        for a in 0..2 {
            let mu = discounted_occupancy(&mdp, s, a).unwrap();
            row_err = row_err.max((mu.iter().sum::<f64>() - 1.0).abs());
            let mut counts = [0usize; 5];
            for _ in 0..episodes {
                let mut state = env.transition(&[s as f64], &[chain_action(a)], &mut rng).unwrap();
                while rng.random::<f64>() < gamma {
                    let act = rng.random_range(-1.0..1.0);
                    state = env.transition(&state, &[act], &mut rng).unwrap();
                }
                counts[state[0] as usize] += 1;
            }
            for (c, m) in counts.iter().zip(&mu) {
                linf = linf.max((*c as f64 / episodes as f64 - m).abs());
            }
        }
    }
    outcome(
        linf < 0.01 && row_err < 1e-10,
        format!("L∞ vs {episodes}-episode Monte-Carlo = {linf:.4}, max |row sum - 1| = {row_err:.1e}"),
    )
}

// 3 ---------------------------------------------------------------------------

/// Probability that a visited state drawn by the batch sampler equals each
/// chain state, given the buffer contents.
fn visited_marginal(buffer: &ReplayBuffer, gamma: f64, n: usize) -> Vec<f64> {
    let mut p = vec![0.0; n];
    let per_slot = 1.0 / buffer.len() as f64;
    for traj in buffer.iter() {
        let len = traj.len();
        for t in 0..len {
            let remaining = len - t;
            let norm = 1.0 - gamma.powi(remaining as i32);
            for d in 1..=remaining {
                let w = (1.0 - gamma) * gamma.powi(d as i32 - 1) / norm;
                p[traj.state(t + d)[0] as usize] += per_slot * w / len as f64;
            }
        }
    }
    p
}

fn critic_matches_occupancy() -> Outcome {
    let start = Instant::now();
    let env = EnvKind::Chain { n: 5, p_forward: 0.7 };
    let gamma = 0.9;
    let cfg = TrainConfig {
        env,
        method: Method::CrlCpc,
        aug: AugmentationTag::None,
        gamma,
        critic_only: true,
        episode_len: 50,
        batch_size: 256,
        total_env_steps: 60_000,
        warmup_steps: 0,
        updates_per_step: 1.0,
        eval_every: 60_000,
        eval_episodes: 1,
        lr_critic: 1e-3,
        logsumexp_penalty: CHAIN_LSE,
        seed: 3,
        ..TrainConfig::default()
    };
    let run = train(&cfg, None).unwrap();
    let updates = cfg.total_env_steps - 2 * cfg.horizon();
    let marginal = visited_marginal(&run.buffer, gamma, 5);
    let mdp = uniform_chain(gamma);
    let enc = &run.agent.encoders;
    let goals = Array2::from_shape_fn((5, 1), |(i, _)| i as f64);
    let phi = enc.phi.forward_batch(&state_features(env, goals.view())).unwrap();
    let (mut worst, mut worst_raw): (f64, f64) = (0.0, 0.0);
    for s in 0..5 {
        for a in 0..2 {
            let sa = Array2::from_elem((1, 1), s as f64);
            let act = Array2::from_elem((1, 1), chain_action(a));
            let psi = enc.psi.forward_batch(&anchor_features(env, sa.view(), act.view())).unwrap();
            let q: Vec<f64> = (0..5).map(|g| psi.row(0).dot(&phi.row(g))).collect();
            let soft = |weights: &[f64]| {
                let m = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = q.iter().zip(weights).map(|(v, w)| (v - m).exp() * w).collect();
                let z: f64 = e.iter().sum();
                e.into_iter().map(|v| v / z).collect::<Vec<_>>()
            };
            let mu = discounted_occupancy(&mdp, s, a).unwrap();
            let tv = |p: &[f64]| 0.5 * p.iter().zip(&mu).map(|(x, y)| (x - y).abs()).sum::<f64>();
            worst = worst.max(tv(&soft(&marginal)));
            worst_raw = worst_raw.max(tv(&soft(&[1.0; 5])));
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 0.15 && updates >= 50_000 && within(elapsed, 600),
        format!(
            "{updates} updates, max TV over (s,a) = {worst:.3} (marginal-weighted readout), \
             {worst_raw:.3} (raw softmax), {:.0}s",
            elapsed.as_secs_f64()
        ),
    )
}

// 4 ---------------------------------------------------------------------------

fn mi_bounds() -> Outcome {
    let start = Instant::now();
    let cfg = MiBenchConfig {
        batch_size: 256,
        steps: 2_000,
        seed: 4,
        ..MiBenchConfig::default()
    };
    let mut below_log_b = true;
    let mut rows = Vec::new();
    for rho in [0.0, 0.5, 0.8, 0.95] {
        let r = mi_bench_one(rho, &cfg).unwrap();
        below_log_b &= r.infonce <= r.log_batch && r.max_train_infonce <= r.log_batch;
        rows.push(r);
    }
    let r = &rows[2];
    let a = r.analytic;
    let pass = below_log_b
        && r.infonce >= a - 0.3
        && r.infonce <= a + 0.05
        && r.club >= a - 0.1
        && r.club >= r.infonce - 0.05
        && within(start.elapsed(), 300);
    outcome(
        pass,
        format!(
            "rho=0.8: analytic {a:.4}, infonce {:.4}, club {:.4}; max train infonce {:.3} <= log B {:.3} ({:.0}s)",
            r.infonce,
            r.club,
            rows.iter().map(|r| r.max_train_infonce).fold(f64::MIN, f64::max),
            r.log_batch,
            start.elapsed().as_secs_f64()
        ),
    )
}

// 5 ---------------------------------------------------------------------------

const GRAD_EPS: f64 = 1e-5;
const MIN_RELU_MARGIN: f64 = 1e-3;

/// Random encoders and inputs whose relus all sit at least
/// `MIN_RELU_MARGIN` away from their kink.
fn smooth_critic_case(rng: &mut ChaCha8Rng) -> (EncoderSet, CriticInputs) {
    loop {
        let enc = EncoderSet::init(4, 2, &[6], 4, rng);
        let inputs = CriticInputs {
            anchors: uniform(5, 4, rng),
            visited: uniform(5, 2, rng),
            augmented: Some(uniform(5, 2, rng)),
        };
        let mut tape = Tape::new();
        let (psi, phi, hat) = (tape.bind(&enc.psi, true), tape.bind(&enc.phi, true), tape.bind(&enc.phi_hat, true));
        score_graph(&mut tape, &psi, &phi, Some(&hat), &inputs);
        if tape.relu_margin() >= MIN_RELU_MARGIN {
            return (enc, inputs);
        }
    }
}

fn check_critic_loss(
    enc: &EncoderSet,
    inputs: &CriticInputs,
    f: impl Fn(&mut Tape, &ScoreVars) -> Var,
) -> f64 {
    let loss = |tape: &mut Tape, b: &[BoundParams]| {
        let scores = score_graph(tape, &b[0], &b[1], Some(&b[2]), inputs);
        Ok(f(tape, &scores))
    };
    finite_diff_check(loss, &[&enc.psi, &enc.phi, &enc.phi_hat], GRAD_EPS).unwrap()
}

fn gradient_integrity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let batches = 25;
    let names = ["infonce", "binary_nce", "club", "bo", "safe_prose", "safe_literal", "actor"];
    let mut worst = [0f64; 7];
    let prose = SafeConfig::default();
    let literal = SafeConfig {
        convention: SafeConvention::Literal,
        ..SafeConfig::default()
    };
    for _ in 0..batches {
        let (enc, inputs) = smooth_critic_case(&mut rng);
        let errs = [
            check_critic_loss(&enc, &inputs, |t, s| infonce(t, s.s_v)),
            check_critic_loss(&enc, &inputs, |t, s| binary_nce(t, s.s_v)),
            check_critic_loss(&enc, &inputs, |t, s| club(t, s.s_full.unwrap())),
            check_critic_loss(&enc, &inputs, |t, s| bo(t, s, false).unwrap()),
            check_critic_loss(&enc, &inputs, |t, s| safe(t, s, &prose).unwrap()),
            check_critic_loss(&enc, &inputs, |t, s| safe(t, s, &literal).unwrap()),
        ];
        for (w, e) in worst.iter_mut().zip(errs) {
            *w = w.max(e);
        }

        let pi = PolicyParams::init(4, &[6], 2, -1.0, 1.0, &mut rng);
        let batch = ActorBatch::new(&pi, uniform(5, 2, &mut rng), uniform(5, 2, &mut rng), &mut rng);
        worst[6] = worst[6].max(actor_grad_check(&pi, &enc, &batch, 0.1, GRAD_EPS).unwrap());
    }
    let detail = names
        .iter()
        .zip(&worst)
        .map(|(n, w)| format!("{n} {w:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(
        worst.iter().all(|w| *w < 1e-4) && within(start.elapsed(), 120),
        format!("{batches} batches, max relative error: {detail}"),
    )
}

// 6 ---------------------------------------------------------------------------

fn l1_to_target(counts: &[usize], target: &[f64]) -> f64 {
    let n: usize = counts.iter().sum();
    let z: f64 = target.iter().sum();
    counts
        .iter()
        .zip(target)
        .map(|(c, t)| (*c as f64 / n as f64 - t / z).abs())
        .sum()
}

fn sampler_fidelity() -> Outcome {
    let start = Instant::now();
    let draws = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(6);

    let (gamma, len, anchor) = (0.9, 60, 10);
    let remaining = len - anchor;
    let mut counts = vec![0usize; remaining];
    for _ in 0..draws {
        counts[sample_visited_index(len, anchor, gamma, &mut rng).unwrap() - anchor - 1] += 1;
    }
    let target: Vec<f64> = (1..=remaining).map(|d| (1.0 - gamma) * gamma.powi(d as i32 - 1)).collect();
    let l1_visited = l1_to_target(&counts, &target);

    let (gamma_aug, len, visited) = (0.99, 50, 5);
    let traj = Trajectory::new(Array2::zeros((len + 1, 2)), Array2::zeros((len, 2)), vec![0.0, 0.0]).unwrap();
    let mut buffer = ReplayBuffer::new(1);
    buffer.append(traj).unwrap();
    let spec = AugmentationSpec::new(AugmentationTag::StrongUnbias, gamma_aug);
    let remaining = len - visited;
    let mut counts = vec![0usize; remaining];
    for _ in 0..draws {
        let idx = sample_augmented_index(&buffer, 0, visited, &spec, &mut rng).unwrap();
        counts[idx.index - visited - 1] += 1;
    }
    let target: Vec<f64> = (1..=remaining)
        .map(|d| 1.0 - (1.0 - gamma_aug) * gamma_aug.powi(d as i32 - 1))
        .collect();
    let l1_strong = l1_to_target(&counts, &target);
    let monotone = [0.5, 0.9, 0.99, 0.999].iter().all(|&g| {
        strong_unbias_weights(200, g).windows(2).all(|w| w[1] >= w[0])
    });
    outcome(
        l1_visited < 0.02 && l1_strong < 0.02 && monotone && within(start.elapsed(), 30),
        format!(
            "L1 visited {l1_visited:.4}, strong_unbias {l1_strong:.4}, weights non-decreasing: {monotone} ({:.1}s)",
            start.elapsed().as_secs_f64()
        ),
    )
}

// 7 ---------------------------------------------------------------------------

fn random_wall_buffer(episodes: usize, seed: u64) -> ReplayBuffer {
    let env = EnvKind::PointReachWall;
    let len = env.spec().episode_len;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buffer = ReplayBuffer::new(episodes);
    for _ in 0..episodes {
        let goal = env.sample_goal(&mut rng);
        let mut run = GoalEnv::reset(env, &goal, rng.random()).unwrap();
        let mut states = Array2::zeros((len + 1, 2));
        let mut actions = Array2::zeros((len, 2));
        states.row_mut(0).assign(&ndarray::aview1(run.state()));
        for t in 0..len {
            let a = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let step = run.step(&a).unwrap();
            actions.row_mut(t).assign(&ndarray::aview1(&a));
            states.row_mut(t + 1).assign(&ndarray::aview1(&step.next_state));
        }
        buffer.append(Trajectory::new(states, actions, goal).unwrap()).unwrap();
    }
    buffer
}

fn coverage_analog() -> Outcome {
    let start = Instant::now();
    let buffer = random_wall_buffer(1_000, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let draws = 100_000;
    let mut cov = |tag| coverage(&buffer, 0.99, &AugmentationSpec::new(tag, 0.99), draws, false, &mut rng).unwrap();
    let strong = cov(AugmentationTag::StrongUnbias);
    let middle = cov(AugmentationTag::MiddleUnbias);
    let weak = cov(AugmentationTag::WeakUnbias);
    let pass = strong.mean_augmented() > strong.mean_visited()
        && middle.mean_augmented() > weak.mean_augmented()
        && within(start.elapsed(), 60);
    outcome(
        pass,
        format!(
            "mean reachability: visited {:.3}, strong {:.3}, middle {:.3}, weak {:.3} ({:.1}s)",
            strong.mean_visited(),
            strong.mean_augmented(),
            middle.mean_augmented(),
            weak.mean_augmented(),
            start.elapsed().as_secs_f64()
        ),
    )
}

// 8 and 9 -----------------------------------------------------------------------

const CHAIN_LSE: f64 = 0.0;

/// Desk-scale training settings shared by the end-to-end criteria.
fn end_to_end_config(env: EnvKind, total_env_steps: usize) -> TrainConfig {
    TrainConfig {
        env,
        batch_size: 128,
        updates_per_step: 0.5,
        total_env_steps,
        eval_every: 20_000,
        eval_episodes: 100,
        ..TrainConfig::default()
    }
}

fn easy_task() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for (method, aug) in [(Method::Visa, AugmentationTag::StrongUnbias), (Method::CrlCpc, AugmentationTag::None)] {
        let mut successes = Vec::new();
        let mut slowest: f64 = 0.0;
        for seed in 0..3 {
            let cfg = TrainConfig {
                method,
                aug,
                seed,
                ..end_to_end_config(EnvKind::PointReach, 200_000)
            };
            let start = Instant::now();
            successes.push(train(&cfg, None).unwrap().final_success());
            slowest = slowest.max(start.elapsed().as_secs_f64());
        }
        let mean = successes.iter().sum::<f64>() / 3.0;
        pass &= mean >= 0.9 && slowest <= 900.0;
        parts.push(format!("{method} mean {mean:.3} {successes:?} (slowest run {slowest:.0}s)"));
    }
    outcome(pass, parts.join("; "))
}

fn hard_task_trend() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let base = TrainConfig {
        lambda_club: WALL_LAMBDA_CLUB,
        ..end_to_end_config(EnvKind::PointReachWall, WALL_STEPS)
    };
    let variants = [
        Variant::parse("visa", AugmentationTag::StrongUnbias).unwrap(),
        Variant::parse("crl_cpc", AugmentationTag::None).unwrap(),
        Variant::parse("random_goal", AugmentationTag::None).unwrap(),
    ];
    let report = run_ablation(&base, &variants, &[0, 1, 2], dir.path()).unwrap();
    let mean_of = |label: &str| {
        report
            .summaries
            .iter()
            .find(|s| s.variant.label() == label)
            .map(|s| s.mean_success)
            .unwrap()
    };
    let (visa, crl, random_goal) = (mean_of("strong_unbias"), mean_of("crl_cpc"), mean_of("random_goal"));
    let elapsed = start.elapsed();
    outcome(
        visa >= crl - 0.02 && visa >= random_goal && within(elapsed, 3600),
        format!(
            "mean final success: visa {visa:.3}, crl_cpc {crl:.3}, random_goal {random_goal:.3} ({:.0}s)",
            elapsed.as_secs_f64()
        ),
    )
}

const WALL_STEPS: usize = 150_000;
/// Selected on seeds 3..=5, disjoint from the seeds checked here.
const WALL_LAMBDA_CLUB: f64 = 0.1;

// 10 --------------------------------------------------------------------------

fn flat(grads: &[visa_core::ParamSet]) -> Vec<f64> {
    grads.iter().flat_map(|g| g.to_flat()).collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn degenerate_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut enc = EncoderSet::init(4, 2, &[64, 64], 16, &mut rng);
    enc.zero_boost();
    let mut worst: f64 = 1.0;
    for _ in 0..5 {
        let inputs = CriticInputs {
            anchors: uniform(64, 4, &mut rng),
            visited: uniform(64, 2, &mut rng),
            augmented: Some(uniform(64, 2, &mut rng)),
        };
        let visa_cfg = SafeConfig {
            convention: SafeConvention::Prose,
            lambda_club: 0.0,
            detach_base: false,
        };
        let v = critic_step(&enc, &inputs, Method::Visa, &visa_cfg, 0.0).unwrap();
        let c = critic_step(&enc, &inputs, Method::CrlCpc, &SafeConfig::default(), 0.0).unwrap();
        worst = worst.min(cosine(&flat(&v.grads[..2]), &flat(&c.grads[..2])));
    }
    outcome(worst > 0.999, format!("min cosine of (ψ, φ) gradients over 5 batches = {worst:.6}"))
}

// 11 --------------------------------------------------------------------------

fn determinism() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        batch_size: 32,
        total_env_steps: 4_000,
        warmup_steps: 1_000,
        eval_every: 1_000,
        eval_episodes: 10,
        seed: 11,
        ..TrainConfig::default()
    };
    let mut files = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let run = train(&cfg, Some(&out)).unwrap();
        files.push(std::fs::read(run.metrics_path.unwrap()).unwrap());
    }
    let elapsed = start.elapsed();
    outcome(
        files[0] == files[1] && within(elapsed, 120),
        format!("{} bytes each, identical: {} ({:.1}s)", files[0].len(), files[0] == files[1], elapsed.as_secs_f64()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("factorization exactness", factorization_exactness),
        ("occupancy oracle", occupancy_oracle),
        ("critic approximates occupancy", critic_matches_occupancy),
        ("MI bounds", mi_bounds),
        ("gradient integrity", gradient_integrity),
        ("sampler fidelity", sampler_fidelity),
        ("coverage analog", coverage_analog),
        ("end-to-end easy task", easy_task),
        ("end-to-end hard-task trend", hard_task_trend),
        ("degenerate equivalence", degenerate_equivalence),
        ("determinism", determinism),
    ];
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {id:>2} {verdict} {name}: {} [{:.1}s]",
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
