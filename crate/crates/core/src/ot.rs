//! Entropic optimal transport between two patch sets.
//!
//! The ground cost is the pairwise cosine distance between patch embeddings.
//! [`sinkhorn_flow`] solves the entropy-regularized problem in the log domain,
//! so small `epsilon` values do not underflow. The flow pairs with the largest
//! mass are the correspondences the EMD score sums over.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 0.05;
pub const DEFAULT_ITERATIONS: usize = 100;
/// Number of flow pairs kept for scoring and explanation.
pub const DEFAULT_NUM_PAIRS: usize = 5;

const MARGINAL_SUM_TOL: f64 = 1e-8;

/// Dense row-major cost matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} cost entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("cost matrix has a non-finite entry".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                data.push(self.get(i, j));
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }
}

/// Pairwise cosine distances between two flattened patch sets of width `patch_dim`.
pub fn cost_matrix(q_patches: &[f32], g_patches: &[f32], patch_dim: usize) -> Result<CostMatrix> {
    if patch_dim == 0 || !q_patches.len().is_multiple_of(patch_dim) || !g_patches.len().is_multiple_of(patch_dim) {
        return Err(Error::DimensionMismatch(format!(
            "patch sets of {} and {} values are not rows of {patch_dim}",
            q_patches.len(),
            g_patches.len()
        )));
    }
    let q: Vec<&[f32]> = q_patches.chunks_exact(patch_dim).collect();
    let g: Vec<&[f32]> = g_patches.chunks_exact(patch_dim).collect();
    if q.iter().chain(&g).any(|p| p.iter().all(|&x| x == 0.0)) {
        return Err(Error::ZeroNorm);
    }
    let norm = |p: &[f32]| p.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    let qn: Vec<f64> = q.iter().map(|p| norm(p)).collect();
    let gn: Vec<f64> = g.iter().map(|p| norm(p)).collect();
    let mut data = Vec::with_capacity(q.len() * g.len());
    for (qi, qn) in q.iter().zip(&qn) {
        for (gj, gn) in g.iter().zip(&gn) {
            let dot: f64 = qi.iter().zip(gj.iter()).map(|(&a, &b)| a as f64 * b as f64).sum();
            data.push(1.0 - (dot / (qn * gn)).clamp(-1.0, 1.0));
        }
    }
    Ok(CostMatrix {
        rows: q.len(),
        cols: g.len(),
        data,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornParams {
    pub epsilon: f64,
    pub iterations: usize,
    /// Stop early once the L1 marginal residual drops below this value.
    pub tolerance: Option<f64>,
    /// Project the final plan onto the exact marginals (row/column
    /// down-scaling followed by a rank-one correction).
    pub round_to_marginals: bool,
}

impl Default for SinkhornParams {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            iterations: DEFAULT_ITERATIONS,
            tolerance: None,
            round_to_marginals: true,
        }
    }
}

/// A transport plan with the marginals and settings that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowMatrix {
    pub rows: usize,
    pub cols: usize,
    pub flow: Vec<f64>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub epsilon: f64,
    /// Sweeps actually run.
    pub iterations: usize,
    /// L1 marginal residual after each sweep, before any rounding.
    pub residuals: Vec<f64>,
}

impl FlowMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.flow[i * self.cols + j]
    }

    pub fn total_mass(&self) -> f64 {
        self.flow.iter().sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.flow.chunks_exact(self.cols).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for row in self.flow.chunks_exact(self.cols) {
            for (o, f) in out.iter_mut().zip(row) {
                *o += f;
            }
        }
        out
    }

    /// `||rowsum - mu||_1 + ||colsum - nu||_1`.
    pub fn marginal_residual(&self) -> f64 {
        marginal_residual(&self.flow, self.cols, &self.mu, &self.nu)
    }
}

fn marginal_residual(flow: &[f64], cols: usize, mu: &[f64], nu: &[f64]) -> f64 {
    let mut col = vec![0.0; cols];
    let mut res = 0.0;
    for (row, m) in flow.chunks_exact(cols).zip(mu) {
        let mut s = 0.0;
        for (c, f) in col.iter_mut().zip(row) {
            s += f;
            *c += f;
        }
        res += (s - m).abs();
    }
    res + col.iter().zip(nu).map(|(c, n)| (c - n).abs()).sum::<f64>()
}

/// `sum_ij d_ij f_ij` over the full plan.
pub fn transport_cost(cost: &CostMatrix, flow: &FlowMatrix) -> f64 {
    cost.data.iter().zip(&flow.flow).map(|(d, f)| d * f).sum()
}

fn check_marginal(name: &str, m: &[f64], len: usize) -> Result<()> {
    if m.len() != len {
        return Err(Error::InvalidMarginal(format!("{name} has length {}, expected {len}", m.len())));
    }
    if m.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidMarginal(format!("{name} has a negative or non-finite entry")));
    }
    let total: f64 = m.iter().sum();
    if (total - 1.0).abs() > MARGINAL_SUM_TOL {
        return Err(Error::InvalidMarginal(format!("{name} sums to {total}")));
    }
    Ok(())
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Log-domain Sinkhorn. Each sweep updates the row potential, then the column
/// potential, so column sums match `nu` to rounding after every sweep.
pub fn sinkhorn_flow(cost: &CostMatrix, mu: &[f64], nu: &[f64], params: SinkhornParams) -> Result<FlowMatrix> {
    let (rows, cols) = (cost.rows, cost.cols);
    check_marginal("mu", mu, rows)?;
    check_marginal("nu", nu, cols)?;
    if !(params.epsilon > 0.0 && params.epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {}", params.epsilon)));
    }
    if params.iterations == 0 {
        return Err(Error::InvalidArgument("iterations must be at least 1".into()));
    }
    let eps = params.epsilon;
    let log_mu: Vec<f64> = mu.iter().map(|m| m.ln()).collect();
    let log_nu: Vec<f64> = nu.iter().map(|n| n.ln()).collect();
    let mut f = vec![0.0; rows];
    let mut g = vec![0.0; cols];
    let mut flow = vec![0.0; rows * cols];
    let mut residuals = Vec::with_capacity(params.iterations);

    for it in 0..params.iterations {
        for i in 0..rows {
            f[i] = if mu[i] == 0.0 {
                f64::NEG_INFINITY
            } else {
                let row = &cost.data[i * cols..(i + 1) * cols];
                eps * log_mu[i] - eps * log_sum_exp(g.iter().zip(row).map(|(gj, c)| (gj - c) / eps))
            };
        }
        for j in 0..cols {
            g[j] = if nu[j] == 0.0 {
                f64::NEG_INFINITY
            } else {
                eps * log_nu[j] - eps * log_sum_exp((0..rows).map(|i| (f[i] - cost.data[i * cols + j]) / eps))
            };
        }
        if f.iter().chain(&g).any(|x| x.is_nan() || *x == f64::INFINITY) {
            return Err(Error::NonFinite { iteration: it });
        }
        fill_plan(&mut flow, cost, &f, &g, eps);
        let res = marginal_residual(&flow, cols, mu, nu);
        if res.is_nan() {
            return Err(Error::NonFinite { iteration: it });
        }
        residuals.push(res);
        if params.tolerance.is_some_and(|tol| res < tol) {
            break;
        }
    }
    if params.round_to_marginals {
        round_to_marginals(&mut flow, cols, mu, nu);
    }
    Ok(FlowMatrix {
        rows,
        cols,
        flow,
        mu: mu.to_vec(),
        nu: nu.to_vec(),
        epsilon: eps,
        iterations: residuals.len(),
        residuals,
    })
}

fn fill_plan(flow: &mut [f64], cost: &CostMatrix, f: &[f64], g: &[f64], eps: f64) {
    let cols = cost.cols;
    for (i, fi) in f.iter().enumerate() {
        for (j, gj) in g.iter().enumerate() {
            let idx = i * cols + j;
            flow[idx] = if *fi == f64::NEG_INFINITY || *gj == f64::NEG_INFINITY {
                0.0
            } else {
                ((fi + gj - cost.data[idx]) / eps).exp()
            };
        }
    }
}

/// Makes `flow` an exact coupling of `mu` and `nu`: scale rows down to at most
/// `mu`, columns down to at most `nu`, then redistribute the missing mass as
/// the outer product of the row and column deficits.
fn round_to_marginals(flow: &mut [f64], cols: usize, mu: &[f64], nu: &[f64]) {
    for (row, m) in flow.chunks_exact_mut(cols).zip(mu) {
        let s: f64 = row.iter().sum();
        if s > *m {
            let x = m / s;
            row.iter_mut().for_each(|f| *f *= x);
        }
    }
    let mut col = vec![0.0; cols];
    for row in flow.chunks_exact(cols) {
        col.iter_mut().zip(row).for_each(|(c, f)| *c += f);
    }
    let y: Vec<f64> = col
        .iter()
        .zip(nu)
        .map(|(c, n)| if *c > *n { n / c } else { 1.0 })
        .collect();
    for row in flow.chunks_exact_mut(cols) {
        row.iter_mut().zip(&y).for_each(|(f, s)| *f *= s);
    }
    let err_r: Vec<f64> = flow
        .chunks_exact(cols)
        .zip(mu)
        .map(|(row, m)| (m - row.iter().sum::<f64>()).max(0.0))
        .collect();
    let mut err_c = nu.to_vec();
    for row in flow.chunks_exact(cols) {
        err_c.iter_mut().zip(row).for_each(|(e, f)| *e -= f);
    }
    err_c.iter_mut().for_each(|e| *e = e.max(0.0));
    let norm: f64 = err_r.iter().sum();
    if norm > 0.0 {
        for (row, er) in flow.chunks_exact_mut(cols).zip(&err_r) {
            row.iter_mut().zip(&err_c).for_each(|(f, ec)| *f += er * ec / norm);
        }
    }
}

/// One selected correspondence: query patch `i` sends `flow` mass to gallery patch `j`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowPair {
    pub i: usize,
    pub j: usize,
    pub flow: f64,
    pub cost: f64,
}

/// The `l` entries of largest flow, ties broken by `(i, j)` ascending.
/// Zero-flow entries are never selected.
pub fn top_l_flows(flow: &FlowMatrix, cost: &CostMatrix, l: usize) -> Vec<FlowPair> {
    let mut idx: Vec<usize> = (0..flow.flow.len()).filter(|&k| flow.flow[k] > 0.0).collect();
    let by_flow = |a: &usize, b: &usize| flow.flow[*b].total_cmp(&flow.flow[*a]).then(a.cmp(b));
    if l < idx.len() {
        idx.select_nth_unstable_by(l, by_flow);
        idx.truncate(l);
    }
    idx.sort_unstable_by(by_flow);
    idx.into_iter()
        .map(|k| FlowPair {
            i: k / flow.cols,
            j: k % flow.cols,
            flow: flow.flow[k],
            cost: cost.data[k],
        })
        .collect()
}

/// `sum cost * flow` over the selected pairs.
pub fn emd_distance(pairs: &[FlowPair]) -> f64 {
    pairs.iter().map(|p| p.cost * p.flow).sum()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn uniform(n: usize) -> Vec<f64> {
        vec![1.0 / n as f64; n]
    }

    #[test]
    fn cost_matrix_equals_pairwise_distance() {
        let q: Vec<f32> = (0..24).map(|i| ((i * 7 % 11) as f32 - 5.0) / 3.0).collect();
        let g: Vec<f32> = (0..16).map(|i| ((i * 5 % 13) as f32 - 6.0) / 4.0).collect();
        let c = cost_matrix(&q, &g, 4).unwrap();
        assert_eq!((c.rows, c.cols), (6, 4));
        for i in 0..6 {
            for j in 0..4 {
                let d = crate::knn::cosine_distance(&q[i * 4..i * 4 + 4], &g[j * 4..j * 4 + 4]).unwrap();
                assert_eq!(c.get(i, j), d);
            }
        }
    }

    #[test]
    fn cost_examples() {
        let eye = [1.0f32, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let c = cost_matrix(&eye, &eye, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((c.get(i, j) - if i == j { 0.0 } else { 1.0 }).abs() < 1e-12);
            }
        }
        let c = cost_matrix(&[1.0, 0.0, 0.0, 1.0], &[0.0, 1.0, 1.0, 0.0], 2).unwrap();
        assert_eq!(c.data, vec![1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(cost_matrix(&[0.0, 0.0], &[1.0, 0.0], 2), Err(Error::ZeroNorm)));
    }

    #[test]
    fn zero_cost_gives_product_measure() {
        let c = CostMatrix::new(4, 4, vec![0.0; 16]).unwrap();
        let f = sinkhorn_flow(&c, &uniform(4), &uniform(4), SinkhornParams::default()).unwrap();
        assert!(f.flow.iter().all(|x| (x - 1.0 / 16.0).abs() < 1e-12));
    }

    #[test]
    fn degenerate_marginal() {
        let c = CostMatrix::new(2, 2, vec![0.3, 1.7, 0.9, 0.1]).unwrap();
        let f = sinkhorn_flow(&c, &[1.0, 0.0], &[0.5, 0.5], SinkhornParams::default()).unwrap();
        assert!((f.get(0, 0) - 0.5).abs() < 1e-12 && (f.get(0, 1) - 0.5).abs() < 1e-12);
        assert_eq!((f.get(1, 0), f.get(1, 1)), (0.0, 0.0));
    }

    #[test]
    fn rejects_bad_marginals() {
        let c = CostMatrix::new(2, 2, vec![0.0; 4]).unwrap();
        let p = SinkhornParams::default();
        assert!(matches!(sinkhorn_flow(&c, &[0.6, 0.6], &[0.5, 0.5], p), Err(Error::InvalidMarginal(_))));
        assert!(matches!(sinkhorn_flow(&c, &[1.5, -0.5], &[0.5, 0.5], p), Err(Error::InvalidMarginal(_))));
        assert!(matches!(sinkhorn_flow(&c, &[1.0], &[0.5, 0.5], p), Err(Error::InvalidMarginal(_))));
    }

    #[test]
    fn tiny_epsilon_does_not_underflow() {
        let c = CostMatrix::new(3, 3, vec![2.0, 1.5, 0.2, 1.9, 0.1, 1.2, 0.05, 1.8, 2.0]).unwrap();
        let p = SinkhornParams {
            epsilon: 1e-4,
            iterations: 200,
            ..SinkhornParams::default()
        };
        let f = sinkhorn_flow(&c, &uniform(3), &uniform(3), p).unwrap();
        assert!((f.total_mass() - 1.0).abs() < 1e-9);
        // the anti-diagonal-ish assignment is optimal: (0,2) (1,1) (2,0)
        assert!(f.get(0, 2) > 0.33 && f.get(1, 1) > 0.33 && f.get(2, 0) > 0.33);
    }

    #[test]
    fn top_l_examples() {
        let mut flow = vec![0.1 / 63.0; 64];
        flow[3 * 8 + 7] = 0.9;
        let fm = FlowMatrix {
            rows: 8,
            cols: 8,
            flow,
            mu: uniform(8),
            nu: uniform(8),
            epsilon: 0.05,
            iterations: 1,
            residuals: vec![],
        };
        let c = CostMatrix::new(8, 8, vec![0.5; 64]).unwrap();
        let pairs = top_l_flows(&fm, &c, 5);
        assert_eq!((pairs[0].i, pairs[0].j), (3, 7));
        assert_eq!(pairs.len(), 5);
        // remaining ties resolve lexicographically
        assert_eq!((pairs[1].i, pairs[1].j), (0, 0));
        assert_eq!((pairs[2].i, pairs[2].j), (0, 1));

        let fm = FlowMatrix {
            flow: vec![1.0 / 64.0; 64],
            ..fm
        };
        let pairs = top_l_flows(&fm, &c, 1);
        assert_eq!(pairs.len(), 1);
        assert_eq!((pairs[0].i, pairs[0].j), (0, 0));
    }

    #[test]
    fn emd_examples() {
        let pair = FlowPair {
            i: 0,
            j: 0,
            flow: 0.25,
            cost: 0.4,
        };
        assert!((emd_distance(&[pair]) - 0.1).abs() < 1e-15);
        assert_eq!(emd_distance(&[]), 0.0);

        // identical patch sets, uniform marginals: mass stays on the diagonal
        let patches: Vec<f32> = (0..16).map(|k| if k % 5 == 0 { 1.0 } else { 0.05 }).collect();
        let c = cost_matrix(&patches, &patches, 4).unwrap();
        let p = SinkhornParams {
            epsilon: 0.01,
            ..SinkhornParams::default()
        };
        let f = sinkhorn_flow(&c, &uniform(4), &uniform(4), p).unwrap();
        let pairs = top_l_flows(&f, &c, 4);
        assert!(pairs.iter().all(|p| p.i == p.j));
        assert!(emd_distance(&pairs).abs() < 1e-12);
    }

    #[test]
    fn early_exit_matches_full_run() {
        let data: Vec<f64> = (0..25).map(|k| ((k * 37 % 23) as f64) / 11.5).collect();
        let c = CostMatrix::new(5, 5, data).unwrap();
        let mu = [0.1, 0.3, 0.2, 0.25, 0.15];
        let full = sinkhorn_flow(&c, &mu, &uniform(5), SinkhornParams::default()).unwrap();
        let early = sinkhorn_flow(
            &c,
            &mu,
            &uniform(5),
            SinkhornParams {
                tolerance: Some(1e-12),
                ..SinkhornParams::default()
            },
        )
        .unwrap();
        assert!(early.iterations <= full.iterations);
        let d_full = emd_distance(&top_l_flows(&full, &c, 5));
        let d_early = emd_distance(&top_l_flows(&early, &c, 5));
        assert!((d_full - d_early).abs() < 1e-9);
    }

    fn random_problem(m: usize, seed: u64) -> (CostMatrix, Vec<f64>, Vec<f64>) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..m * m).map(|_| rng.random_range(0.0..2.0)).collect();
        let mut marg = || {
            let v: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect::<Vec<_>>()
        };
        let mu = marg();
        let nu = marg();
        (CostMatrix::new(m, m, data).unwrap(), mu, nu)
    }

    proptest! {
        #[test]
        fn mass_and_monotone_residual(seed in any::<u64>(), m in 2usize..8) {
            let (c, mu, nu) = random_problem(m, seed);
            let f = sinkhorn_flow(&c, &mu, &nu, SinkhornParams::default()).unwrap();
            prop_assert!((f.total_mass() - 1.0).abs() < 1e-6);
            prop_assert!(f.flow.iter().all(|&x| x >= 0.0));
            for w in f.residuals.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12, "residual rose: {:?}", w);
            }
        }

        #[test]
        fn rounding_restores_exact_marginals(seed in any::<u64>(), m in 2usize..8, iters in 1usize..30) {
            let (c, mu, nu) = random_problem(m, seed);
            let p = SinkhornParams { epsilon: 0.01, iterations: iters, ..SinkhornParams::default() };
            let f = sinkhorn_flow(&c, &mu, &nu, p).unwrap();
            prop_assert!(f.flow.iter().all(|&x| x >= 0.0));
            prop_assert!(f.marginal_residual() < 1e-12, "residual {}", f.marginal_residual());
            prop_assert!((f.total_mass() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn transposed_problem_gives_transposed_flow(seed in any::<u64>(), m in 2usize..7) {
            let (c, _, _) = random_problem(m, seed);
            let u = uniform(m);
            let p = SinkhornParams { epsilon: 0.5, iterations: 5000, tolerance: Some(1e-13), round_to_marginals: false };
            let f = sinkhorn_flow(&c, &u, &u, p).unwrap();
            let ft = sinkhorn_flow(&c.transpose(), &u, &u, p).unwrap();
            for i in 0..m {
                for j in 0..m {
                    prop_assert!((f.get(i, j) - ft.get(j, i)).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn subset_cost_bounded_by_full(seed in any::<u64>(), m in 2usize..8, l in 1usize..10) {
            let (c, mu, nu) = random_problem(m, seed);
            let f = sinkhorn_flow(&c, &mu, &nu, SinkhornParams::default()).unwrap();
            let full = transport_cost(&c, &f);
            prop_assert!(emd_distance(&top_l_flows(&f, &c, l)) <= full + 1e-15);
            let all = emd_distance(&top_l_flows(&f, &c, m * m));
            prop_assert!((all - full).abs() < 1e-12);
        }
    }
}
