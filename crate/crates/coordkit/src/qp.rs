//! Small dense quadratic programming via non-negative least squares.
//!
//! Virtual-input selection needs `min ‖w − w₀‖²` subject to a handful of
//! linear inequalities. After shifting by `w₀` this is least-distance
//! programming (LDP), which Lawson & Hanson reduce to one non-negative
//! least-squares (NNLS) solve: a finite, deterministic active-set method
//! that also certifies infeasibility (the NNLS residual vanishes iff the
//! constraint set is empty). Problem sizes here are tiny (κ ≤ 6 variables,
//! a dozen rows), so the dense O(m·n²) inner solves are irrelevant.

use nalgebra::{DMatrix, DVector};

/// Solve `min ‖A·x − b‖₂` subject to `x ≥ 0` (Lawson–Hanson active set).
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>, tol: f64) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    let mut passive: Vec<usize> = Vec::new();
    let max_outer = 3 * n.max(1) * 10;

    for _ in 0..max_outer {
        let residual = b - a * &x;
        let gradient = a.transpose() * &residual;
        // most-violating free variable
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if passive.contains(&j) {
                continue;
            }
            if gradient[j] > tol && best.map(|(_, g)| gradient[j] > g).unwrap_or(true) {
                best = Some((j, gradient[j]));
            }
        }
        let Some((j, _)) = best else {
            break;
        };
        passive.push(j);

        // inner loop: keep the passive-set least-squares solution positive
        loop {
            let z = least_squares_subset(a, b, &passive);
            if z.iter().all(|v| *v > tol) {
                for (k, &col) in passive.iter().enumerate() {
                    x[col] = z[k];
                }
                for j in 0..n {
                    if !passive.contains(&j) {
                        x[j] = 0.0;
                    }
                }
                break;
            }
            // step toward z until the first variable hits zero
            let mut alpha = f64::MAX;
            for (k, &col) in passive.iter().enumerate() {
                if z[k] <= tol {
                    let step = x[col] / (x[col] - z[k]);
                    if step < alpha {
                        alpha = step;
                    }
                }
            }
            if !alpha.is_finite() {
                break;
            }
            for (k, &col) in passive.iter().enumerate() {
                x[col] += alpha * (z[k] - x[col]);
            }
            let retained: Vec<usize> = passive
                .iter()
                .cloned()
                .filter(|&col| x[col] > tol)
                .collect();
            for &col in &passive {
                if !retained.contains(&col) {
                    x[col] = 0.0;
                }
            }
            if retained.len() == passive.len() {
                // no variable left the passive set; accept to avoid cycling
                for (k, &col) in passive.iter().enumerate() {
                    x[col] = z[k].max(0.0);
                }
                break;
            }
            passive = retained;
            if passive.is_empty() {
                break;
            }
        }
    }
    x
}

fn least_squares_subset(a: &DMatrix<f64>, b: &DVector<f64>, cols: &[usize]) -> DVector<f64> {
    let mut sub = DMatrix::zeros(a.nrows(), cols.len());
    for (k, &col) in cols.iter().enumerate() {
        sub.column_mut(k).copy_from(&a.column(col));
    }
    let svd = sub.svd(true, true);
    svd.solve(b, 1e-13).unwrap_or_else(|_| DVector::zeros(cols.len()))
}

/// Outcome of a least-distance solve.
#[derive(Debug, Clone)]
pub enum LdpOutcome {
    Solved(DVector<f64>),
    Infeasible,
}

/// Least-distance programming: `min ‖x‖₂` subject to `G·x ≤ h`.
pub fn least_distance(g: &DMatrix<f64>, h: &DVector<f64>, tol: f64) -> LdpOutcome {
    let (m, n) = (g.nrows(), g.ncols());
    if m == 0 {
        return LdpOutcome::Solved(DVector::zeros(n));
    }
    // Lawson-Hanson: E = [-Gᵀ; -hᵀ] (n+1 × m), f = e_{n+1};
    // NNLS residual r = E·u − f yields x_k = −r_k / r_{n+1}.
    let mut e = DMatrix::zeros(n + 1, m);
    for row in 0..m {
        for col in 0..n {
            e[(col, row)] = -g[(row, col)];
        }
        e[(n, row)] = -h[row];
    }
    let mut f = DVector::zeros(n + 1);
    f[n] = 1.0;
    let u = nnls(&e, &f, 1e-12);
    let r = &e * &u - &f;
    let rn = r[n];
    if rn.abs() <= tol {
        return LdpOutcome::Infeasible;
    }
    let mut x = DVector::zeros(n);
    for k in 0..n {
        x[k] = -r[k] / rn;
    }
    LdpOutcome::Solved(x)
}

/// `min ‖w − w₀‖₂` subject to `G·w ≤ h` by shifting into LDP form.
pub fn least_distance_from(
    w0: &DVector<f64>,
    g: &DMatrix<f64>,
    h: &DVector<f64>,
    tol: f64,
) -> LdpOutcome {
    let shifted = h - g * w0;
    match least_distance(g, &shifted, tol) {
        LdpOutcome::Solved(x) => LdpOutcome::Solved(x + w0),
        LdpOutcome::Infeasible => LdpOutcome::Infeasible,
    }
}
