//! Comparison of class-relation graphs by exact discrete optimal transport.
//!
//! Similarity vectors are mapped onto the simplex with an affine shift and L1
//! normalization, then compared with the earth mover's distance under a ground
//! cost between classes. The transportation problem is solved exactly with the
//! primal transportation simplex (northwest-corner start, potentials for
//! pricing, Bland's rule against cycling on degenerate bases).

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::embeddings::EmotionVocabulary;
use crate::error::{Error, Result};
use crate::nn::linalg::Matrix;

/// One sample's similarity to every class representative, in class order.
#[derive(Debug, Clone, PartialEq)]
pub struct CrGraph(pub Vec<f64>);

impl CrGraph {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Keeps the listed classes only.
    pub fn restrict(&self, classes: &[usize]) -> CrGraph {
        CrGraph(classes.iter().map(|&k| self.0[k]).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundCostKind {
    /// 0 on the diagonal, 1 elsewhere.
    #[default]
    Discrete,
    /// `|j − k|`; only meaningful for ordered categories.
    IndexLinear,
    /// `1 − cos(v_j, v_k)` from the label vocabulary.
    Semantic,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GroundCost {
    Discrete,
    IndexLinear,
    Semantic(Matrix),
}

impl GroundCost {
    pub fn semantic(vocab: &EmotionVocabulary) -> Self {
        let sim = vocab.similarity_matrix().values;
        let c = sim.rows();
        let mut cost = Matrix::zeros(c, c);
        for j in 0..c {
            for k in 0..c {
                if j != k {
                    cost[(j, k)] = (1.0 - 0.5 * (sim[(j, k)] + sim[(k, j)])).max(0.0);
                }
            }
        }
        GroundCost::Semantic(cost)
    }

    pub fn from_kind(kind: GroundCostKind, vocab: &EmotionVocabulary) -> Self {
        match kind {
            GroundCostKind::Discrete => GroundCost::Discrete,
            GroundCostKind::IndexLinear => GroundCost::IndexLinear,
            GroundCostKind::Semantic => GroundCost::semantic(vocab),
        }
    }

    pub fn kind(&self) -> GroundCostKind {
        match self {
            GroundCost::Discrete => GroundCostKind::Discrete,
            GroundCost::IndexLinear => GroundCostKind::IndexLinear,
            GroundCost::Semantic(_) => GroundCostKind::Semantic,
        }
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        match self {
            GroundCost::Discrete => {
                if j == k {
                    0.0
                } else {
                    1.0
                }
            }
            GroundCost::IndexLinear => j.abs_diff(k) as f64,
            GroundCost::Semantic(m) => m[(j, k)],
        }
    }

    /// Cost restricted to the listed classes (for rounds with missing prototypes).
    pub fn restrict(&self, classes: &[usize]) -> GroundCost {
        match self {
            GroundCost::Semantic(m) => {
                let n = classes.len();
                let mut sub = Matrix::zeros(n, n);
                for (a, &j) in classes.iter().enumerate() {
                    for (b, &k) in classes.iter().enumerate() {
                        sub[(a, b)] = m[(j, k)];
                    }
                }
                GroundCost::Semantic(sub)
            }
            other => other.clone(),
        }
    }

    fn check_size(&self, n: usize) -> Result<()> {
        match self {
            GroundCost::Semantic(m) if m.rows() != n || m.cols() != n => {
                Err(Error::DimensionMismatch {
                    context: "ground cost",
                    expected: n,
                    got: m.rows(),
                })
            }
            _ => Ok(()),
        }
    }
}

/// Nonnegative vector summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexVector(Vec<f64>);

impl SimplexVector {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        crate::nn::loss::check_simplex(&p)?;
        Ok(Self(p.into_iter().map(|v| v.max(0.0)).collect()))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Optimal coupling: rows carry the source marginal, columns the target.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan(pub Matrix);

/// `p[k] = (S[k] + 1) / Σ_j (S[j] + 1)`, uniform when the mass vanishes.
pub fn normalize_similarities(s: &CrGraph) -> SimplexVector {
    let shifted: Vec<f64> = s.0.iter().map(|&v| (v + 1.0).max(0.0)).collect();
    let total: f64 = shifted.iter().sum();
    if total < 1e-12 {
        return SimplexVector::uniform(s.len());
    }
    SimplexVector(shifted.into_iter().map(|v| v / total).collect())
}

/// Exact earth mover's distance between `p` and `q` under `cost`.
pub fn wasserstein(
    p: &SimplexVector,
    q: &SimplexVector,
    cost: &GroundCost,
) -> Result<(f64, TransportPlan)> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            context: "wasserstein marginals",
            expected: p.len(),
            got: q.len(),
        });
    }
    if p.is_empty() {
        return Err(Error::NotSimplex { sum: 0.0, min: 0.0 });
    }
    for v in [p, q] {
        crate::nn::loss::check_simplex(&v.0)?;
    }
    let n = p.len();
    cost.check_size(n)?;
    let mut c = Matrix::zeros(n, n);
    for j in 0..n {
        for k in 0..n {
            c[(j, k)] = cost.get(j, k);
        }
    }
    let plan = solve_transportation(&p.0, &q.0, &c)?;
    let distance = plan
        .as_slice()
        .iter()
        .zip(c.as_slice())
        .map(|(x, w)| x * w)
        .sum::<f64>()
        .max(0.0);
    Ok((distance, TransportPlan(plan)))
}

/// Confidence `1 / (W(normalize(S_s), normalize(S_t)) + ε)`.
pub fn confidence(
    semantic: &CrGraph,
    task: &CrGraph,
    epsilon: f64,
    cost: &GroundCost,
) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "confidence epsilon must be positive, got {epsilon}"
        )));
    }
    let (w, _) = wasserstein(
        &normalize_similarities(semantic),
        &normalize_similarities(task),
        cost,
    )?;
    Ok(1.0 / (w + epsilon))
}

const MAX_PIVOTS: usize = 100_000;

/// Primal transportation simplex. Returns an optimal plan with row sums
/// `supply` and column sums `demand`.
fn solve_transportation(supply: &[f64], demand: &[f64], cost: &Matrix) -> Result<Matrix> {
    let (m, n) = (supply.len(), demand.len());
    let scale = cost
        .as_slice()
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .max(1.0);
    let price_tol = 1e-12 * scale;

    // Northwest-corner start: exactly m + n - 1 basic cells forming a spanning tree.
    let mut flow = Matrix::zeros(m, n);
    let mut basic = vec![false; m * n];
    let (mut a, mut b) = (supply.to_vec(), demand.to_vec());
    let (mut i, mut j) = (0, 0);
    loop {
        let x = a[i].min(b[j]).max(0.0);
        flow[(i, j)] = x;
        basic[i * n + j] = true;
        a[i] -= x;
        b[j] -= x;
        if i == m - 1 && j == n - 1 {
            break;
        }
        if j == n - 1 || (i < m - 1 && a[i] <= b[j]) {
            i += 1;
        } else {
            j += 1;
        }
    }
    // Floating residue from Σp ≠ Σq at round-off level lands in the corner cell.
    let corner = flow[(m - 1, n - 1)] + a[m - 1].min(b[n - 1]).max(0.0);
    flow[(m - 1, n - 1)] = corner.max(0.0);

    for _ in 0..MAX_PIVOTS {
        let (u, v) = potentials(&basic, cost, m, n);
        // Bland: lowest-index nonbasic cell with negative reduced cost.
        let entering = (0..m * n).find(|&cell| {
            !basic[cell] && cost.as_slice()[cell] - u[cell / n] - v[cell % n] < -price_tol
        });
        let Some(entering) = entering else {
            return Ok(flow);
        };
        let cycle = basis_cycle(&basic, m, n, entering);
        // cycle[0] is the entering cell (+), then alternating −, +, ...
        let mut leaving: Option<usize> = None;
        for &cell in cycle.iter().skip(1).step_by(2) {
            let x = flow.as_slice()[cell];
            leaving = match leaving {
                None => Some(cell),
                Some(best) => {
                    let bx = flow.as_slice()[best];
                    // Bland tie-break on equal ratios: lowest index leaves.
                    if x < bx || (x == bx && cell < best) {
                        Some(cell)
                    } else {
                        Some(best)
                    }
                }
            };
        }
        let leaving = leaving.expect("basis cycle has at least one donor cell");
        let theta = flow.as_slice()[leaving];
        let cells = flow.as_mut_slice();
        for (pos, &cell) in cycle.iter().enumerate() {
            if pos % 2 == 0 {
                cells[cell] += theta;
            } else {
                cells[cell] = (cells[cell] - theta).max(0.0);
            }
        }
        cells[leaving] = 0.0;
        basic[entering] = true;
        basic[leaving] = false;
    }
    Err(Error::SolverStalled(MAX_PIVOTS))
}

/// Dual potentials with `u_0 = 0` and `u_i + v_j = c_ij` on basic cells.
fn potentials(basic: &[bool], cost: &Matrix, m: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut u = vec![f64::NAN; m];
    let mut v = vec![f64::NAN; n];
    u[0] = 0.0;
    // Node ids: rows 0..m, columns m..m+n.
    let mut queue = VecDeque::from([0usize]);
    while let Some(node) = queue.pop_front() {
        if node < m {
            let i = node;
            for j in 0..n {
                if basic[i * n + j] && v[j].is_nan() {
                    v[j] = cost[(i, j)] - u[i];
                    queue.push_back(m + j);
                }
            }
        } else {
            let j = node - m;
            for i in 0..m {
                if basic[i * n + j] && u[i].is_nan() {
                    u[i] = cost[(i, j)] - v[j];
                    queue.push_back(i);
                }
            }
        }
    }
    (u, v)
}

/// Cells of the unique cycle created by adding `entering` to the basis tree,
/// starting with `entering` and alternating between row and column moves.
fn basis_cycle(basic: &[bool], m: usize, n: usize, entering: usize) -> Vec<usize> {
    let (ei, ej) = (entering / n, entering % n);
    // Tree path from column node ej to row node ei.
    let start = m + ej;
    let target = ei;
    let mut parent = vec![usize::MAX; m + n];
    parent[start] = start;
    let mut queue = VecDeque::from([start]);
    while let Some(node) = queue.pop_front() {
        if node == target {
            break;
        }
        if node < m {
            for j in 0..n {
                if basic[node * n + j] && parent[m + j] == usize::MAX {
                    parent[m + j] = node;
                    queue.push_back(m + j);
                }
            }
        } else {
            let j = node - m;
            for i in 0..m {
                if basic[i * n + j] && parent[i] == usize::MAX {
                    parent[i] = node;
                    queue.push_back(i);
                }
            }
        }
    }
    // Walk back from the row node to the column node; each hop is one basic cell.
    let mut cycle = vec![entering];
    let mut node = target;
    while node != start {
        let prev = parent[node];
        let cell = if node < m {
            node * n + (prev - m)
        } else {
            prev * n + (node - m)
        };
        cycle.push(cell);
        node = prev;
    }
    cycle
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn simplex(v: &[f64]) -> SimplexVector {
        SimplexVector::new(v.to_vec()).unwrap()
    }

    fn assert_marginals(plan: &TransportPlan, p: &[f64], q: &[f64]) {
        let m = &plan.0;
        for (i, &pi) in p.iter().enumerate() {
            assert!((m.row(i).iter().sum::<f64>() - pi).abs() < 1e-7);
        }
        for (j, &qj) in q.iter().enumerate() {
            let col: f64 = (0..m.rows()).map(|i| m[(i, j)]).sum();
            assert!((col - qj).abs() < 1e-7);
        }
        assert!(m.as_slice().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(
            normalize_similarities(&CrGraph(vec![1.0, -1.0])).as_slice(),
            &[1.0, 0.0]
        );
        assert_eq!(
            normalize_similarities(&CrGraph(vec![-1.0; 4])).as_slice(),
            &[0.25; 4]
        );
        for v in normalize_similarities(&CrGraph(vec![0.0; 3])).as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_marginals_cost_nothing() {
        let p = simplex(&[0.2, 0.3, 0.5]);
        let (d, plan) = wasserstein(&p, &p, &GroundCost::IndexLinear).unwrap();
        assert_eq!(d, 0.0);
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { p.as_slice()[i] } else { 0.0 };
                assert!((plan.0[(i, j)] - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn full_swap_under_discrete_cost() {
        let (d, plan) =
            wasserstein(&simplex(&[1.0, 0.0]), &simplex(&[0.0, 1.0]), &GroundCost::Discrete)
                .unwrap();
        assert_eq!(d, 1.0);
        assert_marginals(&plan, &[1.0, 0.0], &[0.0, 1.0]);
    }

    #[test]
    fn shifted_half_mass() {
        let p = simplex(&[0.5, 0.5, 0.0]);
        let q = simplex(&[0.0, 0.5, 0.5]);
        let (d, _) = wasserstein(&p, &q, &GroundCost::Discrete).unwrap();
        assert!((d - 0.5).abs() < 1e-12);
        let (d, plan) = wasserstein(&p, &q, &GroundCost::IndexLinear).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
        assert_marginals(&plan, p.as_slice(), q.as_slice());
    }

    #[test]
    fn length_mismatch_and_bad_simplex() {
        assert!(wasserstein(&simplex(&[1.0]), &simplex(&[0.5, 0.5]), &GroundCost::Discrete).is_err());
        assert!(SimplexVector::new(vec![0.6, 0.6]).is_err());
    }

    #[test]
    fn confidence_examples() {
        let s = CrGraph(vec![0.3, -0.2, 0.9]);
        let a = confidence(&s, &s, 1e-3, &GroundCost::Discrete).unwrap();
        assert!((a - 1000.0).abs() < 1e-9);
        // S = [1, -1] vs [-1, 1] normalizes to [1,0] vs [0,1]: distance 1.
        let a = confidence(
            &CrGraph(vec![1.0, -1.0]),
            &CrGraph(vec![-1.0, 1.0]),
            1e-3,
            &GroundCost::Discrete,
        )
        .unwrap();
        assert!((a - 1.0 / 1.001).abs() < 1e-12);
        assert!(confidence(&s, &s, 0.0, &GroundCost::Discrete).is_err());
    }

    #[test]
    fn half_distance_confidence() {
        // [0.5,0.5,0] vs [0,0.5,0.5] as similarity vectors: shift by +1 of
        // [0,0,-1] and [-1,0,0] gives the same normalized pair.
        let a = confidence(
            &CrGraph(vec![0.0, 0.0, -1.0]),
            &CrGraph(vec![-1.0, 0.0, 0.0]),
            1e-3,
            &GroundCost::Discrete,
        )
        .unwrap();
        assert!((a - 1.0 / 0.501).abs() < 1e-9);
        assert!((a - 1.996008).abs() < 1e-6);
    }

    #[test]
    fn semantic_cost_is_symmetric_with_zero_diagonal() {
        let cost = GroundCost::semantic(&EmotionVocabulary::fixture());
        for j in 0..7 {
            assert_eq!(cost.get(j, j), 0.0);
            for k in 0..7 {
                assert_eq!(cost.get(j, k), cost.get(k, j));
                assert!(cost.get(j, k) >= 0.0);
            }
        }
    }

    fn random_simplex(raw: &[f64]) -> SimplexVector {
        let s: f64 = raw.iter().sum();
        SimplexVector::new(raw.iter().map(|v| v / s).collect()).unwrap()
    }

    proptest! {
        #[test]
        fn plan_is_feasible_and_priced_consistently(
            a in prop::collection::vec(0.0f64..1.0, 2..9),
            b in prop::collection::vec(0.0f64..1.0, 9),
        ) {
            let n = a.len();
            prop_assume!(a.iter().sum::<f64>() > 1e-3 && b[..n].iter().sum::<f64>() > 1e-3);
            let (p, q) = (random_simplex(&a), random_simplex(&b[..n]));
            for cost in [GroundCost::Discrete, GroundCost::IndexLinear] {
                let (d, plan) = wasserstein(&p, &q, &cost).unwrap();
                assert_marginals(&plan, p.as_slice(), q.as_slice());
                let priced: f64 = (0..n)
                    .flat_map(|i| (0..n).map(move |j| (i, j)))
                    .map(|(i, j)| plan.0[(i, j)] * cost.get(i, j))
                    .sum();
                prop_assert!((priced - d).abs() < 1e-9);
                let (back, _) = wasserstein(&q, &p, &cost).unwrap();
                prop_assert!((back - d).abs() < 1e-9);
                prop_assert!(d >= 0.0);
            }
        }

        #[test]
        fn triangle_inequality(
            a in prop::collection::vec(0.01f64..1.0, 5),
            b in prop::collection::vec(0.01f64..1.0, 5),
            c in prop::collection::vec(0.01f64..1.0, 5),
        ) {
            let (p, q, r) = (random_simplex(&a), random_simplex(&b), random_simplex(&c));
            for cost in [GroundCost::Discrete, GroundCost::IndexLinear] {
                let pq = wasserstein(&p, &q, &cost).unwrap().0;
                let qr = wasserstein(&q, &r, &cost).unwrap().0;
                let pr = wasserstein(&p, &r, &cost).unwrap().0;
                prop_assert!(pr <= pq + qr + 1e-9);
            }
        }
    }
}
