//! Goal-conditioned tanh-Gaussian policy.
//!
//! The trunk maps `(state features, goal features)` to a mean and a log
//! standard deviation per action dimension. Actions are
//! `mid + half · tanh(mean + std·ξ)` with `ξ ~ N(0, I)`, so gradients reach
//! the trunk through the sample (reparameterisation).

use std::f64::consts::PI;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::contrastive::EncoderSet;
use crate::error::{Error, Result};
use crate::numerics::{finite_diff_check, grad, BoundParams, ParamSet, Tape, Var};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    /// Outputs `2 · action_dim` values: means, then raw log-stds.
    pub trunk: ParamSet,
    pub action_dim: usize,
    pub action_low: f64,
    pub action_high: f64,
}

impl PolicyParams {
    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        action_dim: usize,
        action_low: f64,
        action_high: f64,
        rng: &mut R,
    ) -> Self {
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * action_dim);
        Self {
            trunk: ParamSet::init(&sizes, rng),
            action_dim,
            action_low,
            action_high,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    fn half_range(&self) -> f64 {
        0.5 * (self.action_high - self.action_low)
    }

    fn mid(&self) -> f64 {
        0.5 * (self.action_high + self.action_low)
    }

    /// Means and clamped log-stds for a batch of policy inputs.
    pub fn head(&self, inputs: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let out = self.trunk.forward_batch(inputs)?;
        let d = self.action_dim;
        let mean = out.slice(ndarray::s![.., ..d]).to_owned();
        let log_std = out
            .slice(ndarray::s![.., d..])
            .mapv(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
        Ok((mean, log_std))
    }

    /// Stochastic actions for a batch without recording a tape.
    pub fn sample_actions(&self, inputs: &Array2<f64>, noise: &Array2<f64>) -> Result<Array2<f64>> {
        let (mean, log_std) = self.head(inputs)?;
        if noise.dim() != mean.dim() {
            return Err(Error::Dimension("noise shape differs from the action batch".into()));
        }
        let (half, mid) = (self.half_range(), self.mid());
        let mut out = mean;
        ndarray::Zip::from(&mut out)
            .and(&log_std)
            .and(noise)
            .for_each(|m, &ls, &xi| *m = mid + half * (*m + ls.exp() * xi).tanh());
        Ok(out)
    }

    /// Deterministic action `mid + half · tanh(mean)`.
    pub fn greedy_batch(&self, inputs: &Array2<f64>) -> Result<Array2<f64>> {
        let (mean, _) = self.head(inputs)?;
        let (half, mid) = (self.half_range(), self.mid());
        Ok(mean.mapv(|m| mid + half * m.tanh()))
    }
}

/// Concatenates state and goal features into a policy input row.
pub fn policy_input(state_features: &[f64], goal_features: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(state_features.len() + goal_features.len());
    v.extend_from_slice(state_features);
    v.extend_from_slice(goal_features);
    v
}

/// Policy nodes recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct PolicyVars {
    pub action: Var,
    /// `B × 1`
    pub log_prob: Var,
    pub mean: Var,
    pub log_std: Var,
}

/// Records a reparameterised sample. `noise` is the `B × action_dim`
/// standard-normal draw.
pub fn policy_graph(
    tape: &mut Tape,
    pi: &PolicyParams,
    trunk: &BoundParams,
    inputs: Var,
    noise: &Array2<f64>,
) -> PolicyVars {
    let d = pi.action_dim;
    let out = tape.mlp(trunk, inputs);
    let mean = tape.slice_cols(out, 0, d);
    let raw = tape.slice_cols(out, d, 2 * d);
    let log_std = tape.clamp(raw, LOG_STD_MIN, LOG_STD_MAX);
    let std = tape.exp(log_std);
    let xi = tape.constant(noise.clone());
    let spread = tape.mul(std, xi);
    let pre = tape.add(mean, spread);
    let squashed = tape.tanh(pre);
    let scaled = tape.scale(squashed, pi.half_range());
    let action = tape.add_scalar(scaled, pi.mid());

    // log N(pre; mean, std) = -ξ²/2 - log std - ln(2π)/2
    let gauss_const = noise.mapv(|x| -0.5 * x * x - 0.5 * (2.0 * PI).ln() - pi.half_range().ln());
    let gauss_const = tape.constant(gauss_const);
    let gauss = tape.sub(gauss_const, log_std);
    // log(1 - tanh²u) = 2(ln 2 - u - softplus(-2u))
    let neg2 = tape.scale(pre, -2.0);
    let sp = tape.softplus(neg2);
    let inner = tape.add(pre, sp);
    let inner = tape.neg(inner);
    let inner = tape.add_scalar(inner, 2f64.ln());
    let log_det = tape.scale(inner, 2.0);
    let per_dim = tape.sub(gauss, log_det);
    let log_prob = tape.row_sum(per_dim);
    PolicyVars {
        action,
        log_prob,
        mean,
        log_std,
    }
}

pub fn sample_noise<R: Rng + ?Sized>(rows: usize, action_dim: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((rows, action_dim), |_| rng.sample(StandardNormal))
}

/// Stochastic action and its log-density for one `(state, goal)`.
pub fn policy_sample<R: Rng + ?Sized>(
    pi: &PolicyParams,
    state_features: &[f64],
    goal_features: &[f64],
    rng: &mut R,
) -> Result<(Vec<f64>, f64)> {
    let input = policy_input(state_features, goal_features);
    let input = Array2::from_shape_vec((1, input.len()), input)
        .map_err(|e| Error::Dimension(e.to_string()))?;
    let noise = sample_noise(1, pi.action_dim, rng);
    let (actions, log_probs) = policy_sample_batch(pi, &input, &noise)?;
    Ok((actions.row(0).to_vec(), log_probs[0]))
}

/// Batched sampling with caller-supplied noise.
pub fn policy_sample_batch(
    pi: &PolicyParams,
    inputs: &Array2<f64>,
    noise: &Array2<f64>,
) -> Result<(Array2<f64>, Array1<f64>)> {
    if inputs.ncols() != pi.input_dim() {
        return Err(Error::Dimension(format!(
            "policy expects {} input features, got {}",
            pi.input_dim(),
            inputs.ncols()
        )));
    }
    let mut tape = Tape::new();
    let trunk = tape.bind(&pi.trunk, false);
    let x = tape.constant(inputs.clone());
    let vars = policy_graph(&mut tape, pi, &trunk, x, noise);
    tape.check_finite()?;
    let lp = tape.value(vars.log_prob).column(0).to_owned();
    Ok((tape.value(vars.action).clone(), lp))
}

/// Inputs of one actor update. Goal features replace the visited state in
/// the critic.
#[derive(Clone, Debug)]
pub struct ActorBatch {
    pub state_features: Array2<f64>,
    pub goal_features: Array2<f64>,
    pub noise: Array2<f64>,
}

impl ActorBatch {
    pub fn new<R: Rng + ?Sized>(
        pi: &PolicyParams,
        state_features: Array2<f64>,
        goal_features: Array2<f64>,
        rng: &mut R,
    ) -> Self {
        let noise = sample_noise(state_features.nrows(), pi.action_dim, rng);
        Self {
            state_features,
            goal_features,
            noise,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ActorVars {
    pub loss: Var,
    pub log_prob_mean: Var,
}

/// `mean[α·log π(a|s,g) − ψ(s,a)·φ(g)]`. Encoder parameters are recorded
/// as constants, so only the trunk receives gradient.
pub fn actor_graph(
    tape: &mut Tape,
    pi: &PolicyParams,
    trunk: &BoundParams,
    enc: &EncoderSet,
    batch: &ActorBatch,
    alpha: f64,
) -> Result<ActorVars> {
    let input = ndarray::concatenate(
        Axis(1),
        &[batch.state_features.view(), batch.goal_features.view()],
    )
    .map_err(|e| Error::Dimension(e.to_string()))?;
    let x = tape.constant(input);
    let pv = policy_graph(tape, pi, trunk, x, &batch.noise);

    let psi = tape.bind(&enc.psi, false);
    let phi = tape.bind(&enc.phi, false);
    let states = tape.constant(batch.state_features.clone());
    let anchors = tape.concat_cols(states, pv.action);
    if tape.value(anchors).ncols() != enc.psi.input_dim() {
        return Err(Error::Dimension("actor action does not fit the critic input".into()));
    }
    let psi_out = tape.mlp(&psi, anchors);
    let goals = tape.constant(batch.goal_features.clone());
    let phi_out = tape.mlp(&phi, goals);
    let prod = tape.mul(psi_out, phi_out);
    let q = tape.row_sum(prod);

    let weighted = tape.scale(pv.log_prob, alpha);
    let per_row = tape.sub(weighted, q);
    let loss = tape.mean(per_row);
    let log_prob_mean = tape.mean(pv.log_prob);
    Ok(ActorVars { loss, log_prob_mean })
}

/// Loss value, trunk gradient and mean log-probability of one actor batch.
pub struct ActorStep {
    pub loss: f64,
    pub log_prob_mean: f64,
    pub grad: ParamSet,
}

pub fn actor_step(
    pi: &PolicyParams,
    enc: &EncoderSet,
    batch: &ActorBatch,
    alpha: f64,
) -> Result<ActorStep> {
    if alpha < 0.0 {
        return Err(Error::Config(format!("entropy coefficient must be >= 0, got {alpha}")));
    }
    let mut tape = Tape::new();
    let trunk = tape.bind(&pi.trunk, true);
    let vars = actor_graph(&mut tape, pi, &trunk, enc, batch, alpha)?;
    let mut grads = tape.backward(vars.loss)?;
    Ok(ActorStep {
        loss: tape.scalar(vars.loss),
        log_prob_mean: tape.scalar(vars.log_prob_mean),
        grad: grads.param_grads(&trunk),
    })
}

/// Actor loss with fresh reparameterisation noise.
pub fn actor_loss<R: Rng + ?Sized>(
    pi: &PolicyParams,
    enc: &EncoderSet,
    state_features: &Array2<f64>,
    goal_features: &Array2<f64>,
    alpha: f64,
    rng: &mut R,
) -> Result<f64> {
    let batch = ActorBatch::new(pi, state_features.clone(), goal_features.clone(), rng);
    Ok(actor_step(pi, enc, &batch, alpha)?.loss)
}

/// Finite-difference check of the actor loss with respect to the trunk.
pub fn actor_grad_check(
    pi: &PolicyParams,
    enc: &EncoderSet,
    batch: &ActorBatch,
    alpha: f64,
    eps: f64,
) -> Result<f64> {
    let loss = |tape: &mut Tape, b: &[BoundParams]| {
        actor_graph(tape, pi, &b[0], enc, batch, alpha).map(|v| v.loss)
    };
    let _ = grad(loss, &[&pi.trunk])?;
    finite_diff_check(loss, &[&pi.trunk], eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn policy(seed: u64) -> PolicyParams {
        PolicyParams::init(4, &[16, 16], 2, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn actions_stay_in_bounds_and_log_prob_is_finite() {
        let mut pi = policy(1);
        // push the means far out so the squash saturates
        pi.trunk.layers.last_mut().unwrap().bias[0] = 40.0;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let s = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let (a, lp) = policy_sample(&pi, &s, &[0.0, 0.0], &mut rng).unwrap();
            assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
            assert!(lp.is_finite());
        }
    }

    #[test]
    fn tiny_std_is_deterministic_tanh_of_mean() {
        let mut pi = policy(3);
        let last = pi.trunk.layers.last_mut().unwrap();
        last.weight.slice_mut(ndarray::s![2.., ..]).fill(0.0);
        last.bias[2] = -50.0;
        last.bias[3] = -50.0;
        let x = Array2::from_shape_vec((1, 4), vec![0.2, -0.3, 0.5, 0.1]).unwrap();
        let greedy = pi.greedy_batch(&x).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (a, _) = policy_sample(&pi, &[0.2, -0.3], &[0.5, 0.1], &mut rng).unwrap();
        for (g, s) in greedy.iter().zip(&a) {
            assert!((g - s).abs() < 1e-2);
        }
    }

    #[test]
    fn log_std_is_clamped() {
        let mut pi = policy(5);
        let last = pi.trunk.layers.last_mut().unwrap();
        last.weight.fill(0.0);
        last.bias[2] = 10.0;
        last.bias[3] = -10.0;
        let x = Array2::zeros((1, 4));
        let (_, ls) = pi.head(&x).unwrap();
        assert_eq!(ls.row(0).to_vec(), vec![LOG_STD_MAX, LOG_STD_MIN]);
    }

    #[test]
    fn negative_alpha_rejected() {
        let pi = policy(6);
        let enc = EncoderSet::init(4, 2, &[8], 4, &mut ChaCha8Rng::seed_from_u64(0));
        let batch = ActorBatch::new(
            &pi,
            Array2::zeros((3, 2)),
            Array2::zeros((3, 2)),
            &mut ChaCha8Rng::seed_from_u64(1),
        );
        assert!(actor_step(&pi, &enc, &batch, -0.1).is_err());
    }

    use crate::env::{EnvKind, GoalEnv};
    use crate::numerics::{opt_step, AdamConfig, Layer, OptState};

    /// Two-layer relu net whose outputs are `Σ_j lin[o][j]·p_j +
    /// Σ_j sq[o][j]·p_j² + bias[o]` with `p = proj · x`, the squares being
    /// piecewise-linear interpolants on knots spaced `h` over `[-r, r]`.
    fn square_net(proj: &[Vec<f64>], lin: &[Vec<f64>], sq: &[Vec<f64>], bias: &[f64], r: f64, h: f64) -> ParamSet {
        let knots: Vec<f64> = (0..)
            .map(|k| -r + h * k as f64)
            .take_while(|t| *t <= r + 1e-9)
            .collect();
        let (m, kn, d) = (proj.len(), knots.len(), proj[0].len());
        let mut w1 = Array2::zeros((m * kn, d));
        let mut b1 = Array1::zeros(m * kn);
        for j in 0..m {
            for (k, t) in knots.iter().enumerate() {
                for c in 0..d {
                    w1[[j * kn + k, c]] = proj[j][c];
                }
                b1[j * kn + k] = -t;
            }
        }
        let outs = lin.len();
        let mut w2 = Array2::zeros((outs, m * kn));
        let mut b2 = Array1::from(bias.to_vec());
        for o in 0..outs {
            for j in 0..m {
                let t0 = knots[0];
                // p = relu(p - t0) + t0 on the covered range
                w2[[o, j * kn]] += lin[o][j];
                b2[o] += lin[o][j] * t0 + sq[o][j] * t0 * t0;
                for k in 0..kn - 1 {
                    let slope_change = if k == 0 {
                        knots[0] + knots[1]
                    } else {
                        knots[k + 1] - knots[k - 1]
                    };
                    w2[[o, j * kn + k]] += sq[o][j] * slope_change;
                }
            }
        }
        ParamSet {
            layers: vec![Layer { weight: w1, bias: b1 }, Layer { weight: w2, bias: b2 }],
        }
    }

    fn linear(weight: Array2<f64>, bias: Vec<f64>) -> ParamSet {
        ParamSet {
            layers: vec![Layer { weight, bias: Array1::from(bias) }],
        }
    }

    /// `q = c(2p·g − ‖p‖²) = c(‖g‖² − ‖p − g‖²)` with `p = s + 0.05a`, the
    /// point reached by one PointReach step.
    fn peaked_point_critic(c: f64) -> EncoderSet {
        let proj = vec![vec![1.0, 0.0, 0.05, 0.0], vec![0.0, 1.0, 0.0, 0.05]];
        let lin = vec![vec![2.0, 0.0], vec![0.0, 2.0], vec![0.0, 0.0]];
        let sq = vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![-1.0, -1.0]];
        let psi = square_net(&proj, &lin, &sq, &[0.0; 3], 1.1, 0.02);
        let phi = linear(
            Array2::from_shape_vec((3, 2), vec![c, 0.0, 0.0, c, 0.0, 0.0]).unwrap(),
            vec![0.0, 0.0, c],
        );
        EncoderSet {
            psi,
            phi,
            phi_hat: ParamSet::zeros(&[4, 3]),
            embed_dim: 3,
        }
    }

    fn uniform_rows(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn square_net_matches_the_closed_form() {
        let enc = peaked_point_critic(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let anchors = uniform_rows(200, 4, &mut rng);
        let goals = uniform_rows(200, 2, &mut rng);
        let psi = enc.psi.forward_batch(&anchors).unwrap();
        let phi = enc.phi.forward_batch(&goals).unwrap();
        for i in 0..200 {
            let px = anchors[[i, 0]] + 0.05 * anchors[[i, 2]];
            let py = anchors[[i, 1]] + 0.05 * anchors[[i, 3]];
            let expected = 2.0 * (px * goals[[i, 0]] + py * goals[[i, 1]]) - px * px - py * py;
            let q: f64 = psi.row(i).dot(&phi.row(i));
            assert!((q - expected).abs() < 2e-4, "{q} vs {expected}");
        }
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let pi = PolicyParams::init(4, &[8, 8], 2, -1.0, 1.0, &mut rng);
            let enc = EncoderSet::init(4, 2, &[8], 4, &mut rng);
            let batch = ActorBatch::new(&pi, uniform_rows(6, 2, &mut rng), uniform_rows(6, 2, &mut rng), &mut rng);
            let err = actor_grad_check(&pi, &enc, &batch, 0.1, 1e-6).unwrap();
            assert!(err < 1e-4, "seed {seed}: relative error {err}");
        }
    }

    #[test]
    fn no_gradient_without_entropy_under_a_constant_critic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pi = PolicyParams::init(4, &[16], 2, -1.0, 1.0, &mut rng);
        let enc = EncoderSet {
            psi: linear(Array2::zeros((3, 4)), vec![1.0, -2.0, 0.5]),
            phi: linear(Array2::zeros((3, 2)), vec![0.3, 0.3, 0.3]),
            phi_hat: ParamSet::zeros(&[4, 3]),
            embed_dim: 3,
        };
        let batch = ActorBatch::new(&pi, uniform_rows(32, 2, &mut rng), uniform_rows(32, 2, &mut rng), &mut rng);
        let step = actor_step(&pi, &enc, &batch, 0.0).unwrap();
        assert!(step.grad.norm() < 1e-12);
        assert!((step.loss + 0.3 * (1.0 - 2.0 + 0.5)).abs() < 1e-12);
    }

    /// Mean policy std after fitting a 1-D quadratic critic peaked at 0.3.
    fn converged_std(alpha: f64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut pi = PolicyParams::init(2, &[16], 1, -1.0, 1.0, &mut rng);
        // q = -4(a - 0.3)², the state and goal inputs are ignored
        let psi = square_net(&[vec![0.0, 1.0]], &[vec![2.4]], &[vec![-4.0]], &[-0.36], 1.0, 0.01);
        let enc = EncoderSet {
            psi,
            phi: linear(Array2::zeros((1, 1)), vec![1.0]),
            phi_hat: ParamSet::zeros(&[2, 1]),
            embed_dim: 1,
        };
        let mut opt = OptState::new(&pi.trunk);
        let adam = AdamConfig::new(1e-2);
        let states = uniform_rows(128, 1, &mut rng);
        let goals = uniform_rows(128, 1, &mut rng);
        for _ in 0..600 {
            let batch = ActorBatch::new(&pi, states.clone(), goals.clone(), &mut rng);
            let step = actor_step(&pi, &enc, &batch, alpha).unwrap();
            opt_step(&mut pi.trunk, &step.grad, &mut opt, &adam).unwrap();
        }
        let input = ndarray::concatenate(Axis(1), &[states.view(), goals.view()]).unwrap();
        let (_, log_std) = pi.head(&input).unwrap();
        log_std.mapv(f64::exp).mean().unwrap()
    }

    #[test]
    fn policy_spread_grows_with_the_entropy_weight() {
        let stds: Vec<f64> = [0.0, 0.1, 1.0].iter().map(|&a| converged_std(a)).collect();
        assert!(stds[0] < stds[1] && stds[1] < stds[2], "{stds:?}");
    }

    fn mean_final_distance(pi: &PolicyParams, episodes: u64) -> f64 {
        let env = EnvKind::PointReach;
        let mut total = 0.0;
        for ep in 0..episodes {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + ep);
            let goal = env.sample_goal(&mut rng);
            let mut run = GoalEnv::reset(env, &goal, ep).unwrap();
            for _ in 0..env.spec().episode_len {
                let x = Array2::from_shape_vec((1, 4), policy_input(run.state(), &goal)).unwrap();
                let a = pi.greedy_batch(&x).unwrap().row(0).to_vec();
                run.step(&a).unwrap();
            }
            total += env.goal_distance(run.state(), &goal);
        }
        total / episodes as f64
    }

    #[test]
    fn actor_steps_against_a_peaked_critic_approach_the_goal() {
        let enc = peaked_point_critic(10.0);
        let digest = (enc.psi.digest(), enc.phi.digest(), enc.phi_hat.digest());
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut pi = PolicyParams::init(4, &[64, 64], 2, -1.0, 1.0, &mut rng);
        let before = mean_final_distance(&pi, 30);
        let mut opt = OptState::new(&pi.trunk);
        let adam = AdamConfig::new(3e-3);
        for _ in 0..200 {
            let batch = ActorBatch::new(&pi, uniform_rows(128, 2, &mut rng), uniform_rows(128, 2, &mut rng), &mut rng);
            let step = actor_step(&pi, &enc, &batch, 0.01).unwrap();
            opt_step(&mut pi.trunk, &step.grad, &mut opt, &adam).unwrap();
        }
        let after = mean_final_distance(&pi, 30);
        assert!(after < before, "{before} -> {after}");
        assert!(after < 0.5 * before, "{before} -> {after}");
        assert_eq!(digest, (enc.psi.digest(), enc.phi.digest(), enc.phi_hat.digest()));
    }

    fn normal_pdf(x: f64) -> f64 {
        (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
    }

    #[test]
    fn sample_mean_and_density_match_quadrature() {
        let (mu, sigma, half): (f64, f64, f64) = (0.4, 0.7, 2.0);
        let mut pi = PolicyParams::init(2, &[4], 1, -half, half, &mut ChaCha8Rng::seed_from_u64(41));
        let last = pi.trunk.layers.last_mut().unwrap();
        last.weight.fill(0.0);
        last.bias[0] = mu;
        last.bias[1] = sigma.ln();

        // E[half · tanh(mu + sigma ξ)] by the trapezoid rule over ξ ∈ [-10, 10]
        let n = 20_000;
        let h = 20.0 / n as f64;
        let expected: f64 = (0..=n)
            .map(|i| {
                let x = -10.0 + h * i as f64;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * h * normal_pdf(x) * half * (mu + sigma * x).tanh()
            })
            .sum();

        let rows = 200_000;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let inputs = Array2::zeros((rows, 2));
        let noise = sample_noise(rows, 1, &mut rng);
        let (actions, log_probs) = policy_sample_batch(&pi, &inputs, &noise).unwrap();
        let mean = actions.mean().unwrap();
        assert!((mean - expected).abs() < 0.01, "{mean} vs {expected}");

        for i in 0..200 {
            let a = actions[[i, 0]];
            if (a / half).abs() > 0.999 {
                continue;
            }
            let u = (a / half).atanh();
            let density = normal_pdf((u - mu) / sigma) / sigma / (half * (1.0 - (a / half).powi(2)));
            assert!((log_probs[i] - density.ln()).abs() < 1e-8);
        }
    }
}
