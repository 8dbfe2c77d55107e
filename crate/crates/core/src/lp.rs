//! Dense phase-one simplex for small feasibility problems.

use nalgebra::{DMatrix, DVector};

use crate::error::{MoeError, Result};

const PIVOT_EPS: f64 = 1e-11;

/// Finds y ≥ 0 with A y = b, or `None` when the system is infeasible.
///
/// Phase one of the tableau simplex with one artificial per row and Bland's
/// anti-cycling rule.
pub fn find_nonnegative_solution(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Option<DVector<f64>>> {
    let (m, n) = a.shape();
    if b.len() != m {
        return Err(MoeError::Dimension(format!("{m} constraint rows but {} right-hand sides", b.len())));
    }
    if m == 0 {
        return Ok(Some(DVector::zeros(n)));
    }
    let cols = n + m;
    // tableau rows 0..m, objective row m; last column is the right-hand side
    let mut t = DMatrix::zeros(m + 1, cols + 1);
    for i in 0..m {
        let s = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[(i, j)] = s * a[(i, j)];
        }
        t[(i, n + i)] = 1.0;
        t[(i, cols)] = s * b[i];
    }
    for j in 0..n {
        t[(m, j)] = -(0..m).map(|i| t[(i, j)]).sum::<f64>();
    }
    t[(m, cols)] = -(0..m).map(|i| t[(i, cols)]).sum::<f64>();
    let mut basis: Vec<usize> = (n..n + m).collect();
    let scale = 1.0 + b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let max_pivots = 50 * (m + cols) + 1000;
    let mut pivots = 0;
    loop {
        let Some(enter) = (0..cols).find(|&j| t[(m, j)] < -PIVOT_EPS * scale) else { break };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            let v = t[(i, enter)];
            if v > PIVOT_EPS {
                let ratio = t[(i, cols)] / v;
                let better = match leave {
                    None => true,
                    Some((k, r)) => ratio < r - 1e-14 || (ratio <= r + 1e-14 && basis[i] < basis[k]),
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
        }
        // unbounded directions cannot occur in phase one (objective ≥ 0)
        let Some((row, _)) = leave else { break };
        let piv = t[(row, enter)];
        for j in 0..=cols {
            t[(row, j)] /= piv;
        }
        for i in 0..=m {
            if i != row {
                let f = t[(i, enter)];
                if f != 0.0 {
                    for j in 0..=cols {
                        t[(i, j)] -= f * t[(row, j)];
                    }
                }
            }
        }
        basis[row] = enter;
        pivots += 1;
        if pivots > max_pivots {
            return Err(MoeError::Numerical("simplex did not terminate".into()));
        }
    }
    let infeasibility = -t[(m, cols)];
    if infeasibility > 1e-9 * scale {
        return Ok(None);
    }
    let mut y = DVector::zeros(n);
    for (i, &j) in basis.iter().enumerate() {
        if j < n {
            y[j] = t[(i, cols)].max(0.0);
        }
    }
    Ok(Some(y))
}

/// True when some γ (baseline row zero) makes every observation's own label
/// strictly most probable under the multinomial logit at `design`.
///
/// Decided through the Farkas alternative: the strict system M γ > 0 has a
/// solution iff no y ≥ 0 with Mᵀ y = 0, Σ y = 1 exists. A label with no
/// observations counts as separated.
pub fn complete_separation(design: &DMatrix<f64>, labels: &[usize], components: usize) -> Result<bool> {
    let (n, p) = design.shape();
    if labels.len() != n {
        return Err(MoeError::Dimension(format!("{} labels for {n} rows", labels.len())));
    }
    if components < 2 {
        return Ok(false);
    }
    let mut counts = vec![0usize; components];
    for &z in labels {
        if z >= components {
            return Err(MoeError::InvalidData(format!("label {z} outside 0..{components}")));
        }
        counts[z] += 1;
    }
    if counts.contains(&0) {
        return Ok(true);
    }
    let dim = (components - 1) * p;
    let rows = n * (components - 1);
    // column k of mt is the k-th strict inequality x_i(γ_{z_i} − γ_g) > 0
    let mut mt = DMatrix::zeros(dim + 1, rows);
    let mut k = 0;
    for i in 0..n {
        let z = labels[i];
        for g in (0..components).filter(|&g| g != z) {
            for c in 0..p {
                let x = design[(i, c)];
                if z > 0 {
                    mt[((z - 1) * p + c, k)] += x;
                }
                if g > 0 {
                    mt[((g - 1) * p + c, k)] -= x;
                }
            }
            mt[(dim, k)] = 1.0;
            k += 1;
        }
    }
    let mut rhs = DVector::zeros(dim + 1);
    rhs[dim] = 1.0;
    Ok(find_nonnegative_solution(&mt, &rhs)?.is_none())
}
