//! Transport oracles: closed forms for the discrete and index-linear costs,
//! and two brute-force solvers for three classes under an arbitrary cost.

/// `½ ‖p − q‖₁`, the transport distance under the 0/1 cost.
pub fn discrete_closed_form(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// `Σ_k |P_k − Q_k|` over cumulative sums, the distance under `|j − k|`.
pub fn cdf_closed_form(p: &[f64], q: &[f64]) -> f64 {
    let (mut cp, mut cq, mut total) = (0.0, 0.0, 0.0);
    for k in 0..p.len().saturating_sub(1) {
        cp += p[k];
        cq += q[k];
        total += (cp - cq).abs();
    }
    total
}

/// A 3×3 plan with margins `p`, `q` written in the free cells
/// `x = (t00, t01, t10, t11)`: every cell is `offset + coef · x`.
fn cells(p: &[f64], q: &[f64]) -> [[(f64, [f64; 4]); 3]; 3] {
    [
        [(0.0, [1.0, 0.0, 0.0, 0.0]), (0.0, [0.0, 1.0, 0.0, 0.0]), (p[0], [-1.0, -1.0, 0.0, 0.0])],
        [(0.0, [0.0, 0.0, 1.0, 0.0]), (0.0, [0.0, 0.0, 0.0, 1.0]), (p[1], [0.0, 0.0, -1.0, -1.0])],
        [
            (q[0], [-1.0, 0.0, -1.0, 0.0]),
            (q[1], [0.0, -1.0, 0.0, -1.0]),
            (p[2] - q[0] - q[1], [1.0, 1.0, 1.0, 1.0]),
        ],
    ]
}

fn plan_cost(cost: &[[f64; 3]; 3], x: &[f64; 4], p: &[f64], q: &[f64]) -> f64 {
    let cl = cells(p, q);
    let mut total = 0.0;
    for j in 0..3 {
        for k in 0..3 {
            let (o, c) = cl[j][k];
            let t = o + (0..4).map(|i| c[i] * x[i]).sum::<f64>();
            total += cost[j][k] * t;
        }
    }
    total
}

/// Dual objective `Σ p_j u_j + Σ q_k min_j (C_jk − u_j)` with `u_0 = 0`.
/// Every value is a lower bound on the transport cost and the maximum
/// equals it.
fn dual_value(p: &[f64], q: &[f64], cost: &[[f64; 3]; 3], u: [f64; 3]) -> f64 {
    let rows: f64 = p.iter().zip(&u).map(|(a, b)| a * b).sum();
    let cols: f64 = (0..3)
        .map(|k| q[k] * (0..3).map(|j| cost[j][k] - u[j]).fold(f64::INFINITY, f64::min))
        .sum();
    rows + cols
}

/// Grid search with zoom over the two free row potentials of the dual.
/// The dual is concave and piecewise linear with kinks along the axes and
/// the diagonal; a shared step centred on the incumbent keeps those
/// directions on the lattice, so the zoom does not stall on a ridge.
pub fn grid_search_3(p: &[f64], q: &[f64], cost: &[[f64; 3]; 3]) -> f64 {
    const POINTS: i64 = 32;
    const SHRINK: f64 = 4.0;
    const RADIUS: i64 = 8;
    let cmax = cost.iter().flatten().copied().fold(0.0, f64::max);
    if cmax == 0.0 {
        return 0.0;
    }
    // Tree potentials differ by at most four edge costs for three classes.
    let bound = 4.0 * cmax;
    let mut step = 2.0 * bound / POINTS as f64;
    let mut centre = [-bound, -bound];
    let mut range = 0..=POINTS;
    let mut best = f64::NEG_INFINITY;
    while step > 1e-15 * cmax {
        let mut arg = centre;
        for i in range.clone() {
            for j in range.clone() {
                let u = [centre[0] + step * i as f64, centre[1] + step * j as f64];
                let v = dual_value(p, q, cost, [0.0, u[0], u[1]]);
                if v > best {
                    best = v;
                    arg = u;
                }
            }
        }
        centre = arg;
        step /= SHRINK;
        range = -RADIUS..=RADIUS;
    }
    best
}

/// Exact optimum by enumerating every vertex of the 3×3 transport polytope:
/// each choice of four tight cells fixes the free variables.
pub fn vertex_enumeration_3(p: &[f64], q: &[f64], cost: &[[f64; 3]; 3]) -> f64 {
    let cl = cells(p, q);
    let flat: Vec<(f64, [f64; 4])> = cl.iter().flatten().copied().collect();
    let mut best = f64::INFINITY;
    for a in 0..9 {
        for b in a + 1..9 {
            for c in b + 1..9 {
                for d in c + 1..9 {
                    let rows = [flat[a], flat[b], flat[c], flat[d]];
                    let Some(x) = solve4(rows) else { continue };
                    let feasible = flat
                        .iter()
                        .all(|(o, co)| o + (0..4).map(|i| co[i] * x[i]).sum::<f64>() >= -1e-12);
                    if feasible {
                        best = best.min(plan_cost(cost, &x, p, q));
                    }
                }
            }
        }
    }
    best
}

/// Solves `offset_r + coef_r · x = 0` for four rows by Gaussian elimination.
fn solve4(rows: [(f64, [f64; 4]); 4]) -> Option<[f64; 4]> {
    let mut m = [[0.0; 5]; 4];
    for (r, (o, c)) in rows.iter().enumerate() {
        m[r][..4].copy_from_slice(c);
        m[r][4] = -o;
    }
    for col in 0..4 {
        let piv = (col..4).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, piv);
        for r in 0..4 {
            if r != col {
                let f = m[r][col] / m[col][col];
                for k in col..5 {
                    m[r][k] -= f * m[col][k];
                }
            }
        }
    }
    Some([0, 1, 2, 3].map(|i| m[i][4] / m[i][i]))
}
