//! Exact reference computations: discounted state occupancy of tabular
//! MDPs, plug-in mutual information of discrete joints, and the analytic MI
//! of a bivariate Gaussian.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const PROB_TOL: f64 = 1e-9;

/// Finite MDP with a fixed stochastic policy.
#[derive(Clone, Debug)]
pub struct TabularMDP {
    /// `transitions[s][a][s']`
    pub transitions: Vec<Vec<Vec<f64>>>,
    /// `policy[s][a]`
    pub policy: Vec<Vec<f64>>,
    pub gamma: f64,
}

fn check_pmf(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Input(format!("{what} has a negative or non-finite entry")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > PROB_TOL {
        return Err(Error::Input(format!("{what} sums to {total}, expected 1")));
    }
    Ok(())
}

impl TabularMDP {
    pub fn new(transitions: Vec<Vec<Vec<f64>>>, policy: Vec<Vec<f64>>, gamma: f64) -> Result<Self> {
        let mdp = Self {
            transitions,
            policy,
            gamma,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn n_states(&self) -> usize {
        self.transitions.len()
    }

    pub fn n_actions(&self) -> usize {
        self.transitions.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_states();
        let na = self.n_actions();
        if n == 0 || na == 0 {
            return Err(Error::Dimension("MDP needs at least one state and action".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if self.policy.len() != n {
            return Err(Error::Dimension("policy table has the wrong number of states".into()));
        }
        for (s, row) in self.transitions.iter().enumerate() {
            if row.len() != na {
                return Err(Error::Dimension(format!("state {s} has {} actions", row.len())));
            }
            for (a, p) in row.iter().enumerate() {
                if p.len() != n {
                    return Err(Error::Dimension(format!("P(.|{s},{a}) has length {}", p.len())));
                }
                check_pmf(p, &format!("P(.|{s},{a})"))?;
            }
            if self.policy[s].len() != na {
                return Err(Error::Dimension(format!("policy row {s} has the wrong length")));
            }
            check_pmf(&self.policy[s], &format!("pi(.|{s})"))?;
        }
        Ok(())
    }

    /// State-to-state kernel under the policy, `P_π[s][s']`.
    pub fn policy_kernel(&self) -> Vec<Vec<f64>> {
        let n = self.n_states();
        (0..n)
            .map(|s| {
                let mut row = vec![0.0; n];
                for (a, pa) in self.policy[s].iter().enumerate() {
                    for (r, p) in row.iter_mut().zip(&self.transitions[s][a]) {
                        *r += pa * p;
                    }
                }
                row
            })
            .collect()
    }
}

/// Solves `A x = b` by LU decomposition with partial pivoting.
pub fn solve_linear(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if !a.is_square() || a.nrows() != b.len() {
        return Err(Error::Dimension("linear system is not square".into()));
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Input("singular linear system".into()))
}

/// `μ(·|s,a) = (1−γ) Σ_{t≥0} γ^t P(s_{t+1} = · | s_0 = s, a_0 = a)`, the
/// distribution of the state reached after a geometric number `Δ ≥ 1` of
/// steps. Computed as `(1−γ) P(·|s,a) (I − γ P_π)^{-1}`.
pub fn discounted_occupancy(mdp: &TabularMDP, s: usize, a: usize) -> Result<Vec<f64>> {
    mdp.validate()?;
    let n = mdp.n_states();
    if s >= n || a >= mdp.n_actions() {
        return Err(Error::Input(format!("anchor ({s}, {a}) is outside the MDP")));
    }
    let kernel = mdp.policy_kernel();
    // row-vector system x (I - γP) = p, transposed to (I - γP)ᵀ xᵀ = pᵀ
    let system = DMatrix::from_fn(n, n, |i, j| {
        f64::from(u8::from(i == j)) - mdp.gamma * kernel[j][i]
    });
    let rhs = DVector::from_iterator(n, mdp.transitions[s][a].iter().map(|p| (1.0 - mdp.gamma) * p));
    Ok(solve_linear(&system, &rhs)?.iter().copied().collect())
}

/// Probability mass function over `(x, y, z)` triples.
#[derive(Clone, Debug)]
pub struct DiscreteJoint {
    dims: [usize; 3],
    pmf: Vec<f64>,
}

impl DiscreteJoint {
    /// `pmf` is indexed `x·(ny·nz) + y·nz + z`.
    pub fn new(dims: [usize; 3], pmf: Vec<f64>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) || pmf.len() != dims.iter().product::<usize>() {
            return Err(Error::Dimension(format!(
                "pmf of length {} does not fit alphabets {dims:?}",
                pmf.len()
            )));
        }
        if pmf.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Input("pmf has a negative or non-finite entry".into()));
        }
        let total: f64 = pmf.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Input(format!("pmf sums to {total}, expected 1")));
        }
        Ok(Self { dims, pmf })
    }

    /// Normalises non-negative weights into a joint.
    pub fn from_weights(dims: [usize; 3], weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Input("weights must have positive mass".into()));
        }
        Self::new(dims, weights.iter().map(|w| w / total).collect())
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn p(&self, x: usize, y: usize, z: usize) -> f64 {
        let [_, ny, nz] = self.dims;
        self.pmf[x * ny * nz + y * nz + z]
    }

    fn marginals(&self) -> Marginals {
        let [nx, ny, nz] = self.dims;
        let mut m = Marginals {
            x: vec![0.0; nx],
            y: vec![0.0; ny],
            xy: vec![0.0; nx * ny],
            yz: vec![0.0; ny * nz],
        };
        for x in 0..nx {
            for y in 0..ny {
                for z in 0..nz {
                    let p = self.p(x, y, z);
                    m.x[x] += p;
                    m.y[y] += p;
                    m.xy[x * ny + y] += p;
                    m.yz[y * nz + z] += p;
                }
            }
        }
        m
    }
}

struct Marginals {
    x: Vec<f64>,
    y: Vec<f64>,
    xy: Vec<f64>,
    yz: Vec<f64>,
}

/// Which information quantity [`discrete_mi`] computes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MiKind {
    /// `I(X; Y)`
    Xy,
    /// `I(X; (Y, Z))`
    XYz,
    /// `I(X; Z | Y)`
    XzGivenY,
}

impl FromStr for MiKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "I_xy" => Ok(Self::Xy),
            "I_x_yz" => Ok(Self::XYz),
            "I_xz_given_y" => Ok(Self::XzGivenY),
            other => Err(Error::Config(format!("unknown MI quantity '{other}'"))),
        }
    }
}

fn plogq(p: f64, ratio: f64) -> f64 {
    if p > 0.0 {
        p * ratio.ln()
    } else {
        0.0
    }
}

/// Plug-in mutual information in nats, with `0·log 0 = 0`.
pub fn discrete_mi(joint: &DiscreteJoint, which: MiKind) -> f64 {
    let [nx, ny, nz] = joint.dims;
    let m = joint.marginals();
    match which {
        MiKind::Xy => {
            let mut total = 0.0;
            for x in 0..nx {
                for y in 0..ny {
                    let pxy = m.xy[x * ny + y];
                    if pxy > 0.0 {
                        total += plogq(pxy, pxy / (m.x[x] * m.y[y]));
                    }
                }
            }
            total
        }
        MiKind::XYz => {
            let mut total = 0.0;
            for x in 0..nx {
                for y in 0..ny {
                    for z in 0..nz {
                        let p = joint.p(x, y, z);
                        if p > 0.0 {
                            total += plogq(p, p / (m.x[x] * m.yz[y * nz + z]));
                        }
                    }
                }
            }
            total
        }
        MiKind::XzGivenY => {
            // Σ p(x,y,z) log[p(x,y,z) p(y) / (p(x,y) p(y,z))]
            let mut total = 0.0;
            for x in 0..nx {
                for y in 0..ny {
                    for z in 0..nz {
                        let p = joint.p(x, y, z);
                        if p > 0.0 {
                            total += plogq(p, p * m.y[y] / (m.xy[x * ny + y] * m.yz[y * nz + z]));
                        }
                    }
                }
            }
            total
        }
    }
}

/// Mutual information of a standard bivariate Gaussian with correlation
/// `rho`: `−½ ln(1 − ρ²)`.
pub fn gaussian_mi(rho: f64) -> Result<f64> {
    if !(rho.abs() < 1.0) {
        return Err(Error::Input(format!("correlation must satisfy |rho| < 1, got {rho}")));
    }
    Ok(-0.5 * (1.0 - rho * rho).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::chain_mdp_kernel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_chain(n: usize, p: f64, gamma: f64) -> TabularMDP {
        TabularMDP::new(chain_mdp_kernel(n, p).unwrap(), vec![vec![0.5, 0.5]; n], gamma).unwrap()
    }

    #[test]
    fn deterministic_two_state_chain_lands_on_absorbing_state() {
        let p = vec![
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![0.0, 1.0], vec![0.0, 1.0]],
        ];
        let mdp = TabularMDP::new(p, vec![vec![0.0, 1.0]; 2], 0.9).unwrap();
        let mu = discounted_occupancy(&mdp, 0, 1).unwrap();
        assert!(mu[0].abs() < 1e-12 && (mu[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn absorbing_state_is_its_own_occupancy() {
        let mdp = uniform_chain(4, 0.7, 0.95);
        let mu = discounted_occupancy(&mdp, 3, 0).unwrap();
        assert!((mu[3] - 1.0).abs() < 1e-12);
        assert!(mu[..3].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn occupancy_matches_truncated_power_series() {
        let mdp = uniform_chain(5, 0.7, 0.9);
        let kernel = mdp.policy_kernel();
        for s in 0..5 {
            for a in 0..2 {
                let mu = discounted_occupancy(&mdp, s, a).unwrap();
                let mut dist = mdp.transitions[s][a].clone();
                let mut acc = vec![0.0; 5];
                let mut w = 1.0 - mdp.gamma;
                for _ in 0..2000 {
                    for (a, d) in acc.iter_mut().zip(&dist) {
                        *a += w * d;
                    }
                    dist = (0..5)
                        .map(|j| (0..5).map(|i| dist[i] * kernel[i][j]).sum())
                        .collect();
                    w *= mdp.gamma;
                }
                for (x, y) in mu.iter().zip(&acc) {
                    assert!((x - y).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn occupancy_matches_small_monte_carlo() {
        let mdp = uniform_chain(5, 0.7, 0.9);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let episodes = 100_000;
        let mu = discounted_occupancy(&mdp, 1, 1).unwrap();
        let mut counts = [0usize; 5];
        for _ in 0..episodes {
            let mut state = if rng.random::<f64>() < 0.7 { 2 } else { 1 };
            while rng.random::<f64>() < mdp.gamma {
                let forward = rng.random::<bool>();
                if forward && state < 4 && rng.random::<f64>() < 0.7 {
                    state += 1;
                }
            }
            counts[state] += 1;
        }
        for (c, m) in counts.iter().zip(&mu) {
            assert!((*c as f64 / episodes as f64 - m).abs() < 0.01);
        }
    }

    #[test]
    fn invalid_mdp_rejected() {
        let p = vec![vec![vec![0.5, 0.4]]; 2];
        assert!(TabularMDP::new(p, vec![vec![1.0]; 2], 0.9).is_err());
        let ok = chain_mdp_kernel(3, 0.5).unwrap();
        assert!(TabularMDP::new(ok, vec![vec![0.5, 0.5]; 3], 1.0).is_err());
    }

    #[test]
    fn solve_linear_recovers_known_solution() {
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 2.0, 1.0, 1.0, 1.0, 0.0, 3.0, 0.0, 1.0]);
        let x_true = [1.0, -2.0, 0.5];
        let b = DVector::from_iterator(
            3,
            (0..3).map(|i| (0..3).map(|j| a[(i, j)] * x_true[j]).sum::<f64>()),
        );
        let x = solve_linear(&a, &b).unwrap();
        for (u, v) in x.iter().zip(&x_true) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn fully_redundant_binary_variables() {
        let mut w = vec![0.0; 8];
        w[0] = 0.5;
        w[7] = 0.5;
        let j = DiscreteJoint::new([2, 2, 2], w).unwrap();
        let ln2 = 2f64.ln();
        assert!((discrete_mi(&j, MiKind::Xy) - ln2).abs() < 1e-12);
        assert!((discrete_mi(&j, MiKind::XYz) - ln2).abs() < 1e-12);
        assert!(discrete_mi(&j, MiKind::XzGivenY).abs() < 1e-12);
    }

    #[test]
    fn independent_x_has_zero_information() {
        let px = [0.2, 0.8];
        let pyz = [0.1, 0.3, 0.4, 0.2];
        let w: Vec<f64> = px.iter().flat_map(|a| pyz.iter().map(move |b| a * b)).collect();
        let j = DiscreteJoint::new([2, 2, 2], w).unwrap();
        for k in [MiKind::Xy, MiKind::XYz, MiKind::XzGivenY] {
            assert!(discrete_mi(&j, k).abs() < 1e-12);
        }
    }

    #[test]
    fn chain_rule_on_random_joint() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w: Vec<f64> = (0..27).map(|_| rng.random::<f64>()).collect();
        let j = DiscreteJoint::from_weights([3, 3, 3], &w).unwrap();
        let lhs = discrete_mi(&j, MiKind::Xy);
        let rhs = discrete_mi(&j, MiKind::XYz) - discrete_mi(&j, MiKind::XzGivenY);
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn mi_tags_parse() {
        assert_eq!("I_x_yz".parse::<MiKind>().unwrap(), MiKind::XYz);
        assert!("I_zz".parse::<MiKind>().is_err());
    }

    #[test]
    fn gaussian_mi_values() {
        assert_eq!(gaussian_mi(0.0).unwrap(), 0.0);
        assert!((gaussian_mi(0.8).unwrap() - 0.5108).abs() < 1e-4);
        assert_eq!(gaussian_mi(0.3).unwrap(), gaussian_mi(-0.3).unwrap());
        assert!(gaussian_mi(1.0).is_err());
        assert!(gaussian_mi(f64::NAN).is_err());
    }
}
