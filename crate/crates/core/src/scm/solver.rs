//! Ridge-penalised least squares on the unit simplex.
//!
//! Minimises `ℓ(ω) = Σ_t (Σ_i ω_i Y_{i,t} − y_t)² + ζ² T ‖ω‖²` subject to
//! `ω ≥ 0`, `Σ ω = 1`, where `T` is the number of pre-treatment periods.
//!
//! The problem is solved in normalised units: data are divided by
//! `c = max(1, max |Y|)` and the objective by `c² T`, so gradients are O(1)
//! and the KKT tolerance is scale-free. A primal active-set method gives
//! the exact optimum for the current support in finitely many steps; an
//! accelerated projected-gradient loop polishes the rare iterate that
//! misses the tolerance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// KKT tolerance on the normalised gradient.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-8,
            max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexSolution {
    pub omega: Vec<f64>,
    /// `ℓ(ω)` in the units of the input data.
    pub objective: f64,
    /// KKT residual of the normalised problem.
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// Normalised quadratic `f(ω) = ωᵀHω − 2hᵀω + const`.
struct Quadratic {
    hess: DMatrix<f64>,
    lin: DVector<f64>,
}

impl Quadratic {
    fn build(donor_pre: &[Vec<f64>], treated_pre: &[f64], zeta: f64) -> Self {
        let k = donor_pre.len();
        let t = treated_pre.len() as f64;
        let scale = donor_pre
            .iter()
            .flatten()
            .chain(treated_pre)
            .fold(1.0f64, |m, v| m.max(v.abs()));
        let norm = scale * scale * t;
        let mut hess = DMatrix::zeros(k, k);
        let mut lin = DVector::zeros(k);
        for i in 0..k {
            for j in i..k {
                let dot: f64 = donor_pre[i].iter().zip(&donor_pre[j]).map(|(a, b)| a * b).sum();
                hess[(i, j)] = dot / norm;
                hess[(j, i)] = dot / norm;
            }
            hess[(i, i)] += zeta * zeta * t / norm;
            lin[i] = donor_pre[i].iter().zip(treated_pre).map(|(a, b)| a * b).sum::<f64>() / norm;
        }
        Quadratic { hess, lin }
    }

    /// Full gradient `2(Hω − h)`.
    fn gradient(&self, omega: &DVector<f64>) -> DVector<f64> {
        (&self.hess * omega - &self.lin) * 2.0
    }
}

/// Largest violation of the simplex KKT conditions: gradient entries on the
/// support must agree, and entries off the support may not undercut them.
pub fn kkt_residual(omega: &[f64], grad: &[f64]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (w, g) in omega.iter().zip(grad) {
        if *w > 0.0 {
            lo = lo.min(*g);
            hi = hi.max(*g);
        }
    }
    if !lo.is_finite() {
        return f64::INFINITY;
    }
    let mut r = hi - lo;
    for (w, g) in omega.iter().zip(grad) {
        if *w <= 0.0 {
            r = r.max(lo - g);
        }
    }
    r
}

/// Evaluates `ℓ(ω)` directly from the data.
pub fn objective(donor_pre: &[Vec<f64>], treated_pre: &[f64], zeta: f64, omega: &[f64]) -> f64 {
    let t = treated_pre.len();
    let mut sse = 0.0;
    for s in 0..t {
        let fit: f64 = donor_pre.iter().zip(omega).map(|(row, w)| w * row[s]).sum();
        let r = fit - treated_pre[s];
        sse += r * r;
    }
    sse + zeta * zeta * t as f64 * omega.iter().map(|w| w * w).sum::<f64>()
}

pub fn solve_weights(
    donor_pre: &[Vec<f64>],
    treated_pre: &[f64],
    zeta: f64,
    opts: &SolverOptions,
) -> Result<SimplexSolution> {
    let k = donor_pre.len();
    if k == 0 {
        return Err(invalid("weight solver needs at least one donor"));
    }
    if treated_pre.len() < 2 {
        return Err(invalid("weight solver needs at least two pre-treatment periods"));
    }
    if let Some(row) = donor_pre.iter().find(|r| r.len() != treated_pre.len()) {
        return Err(invalid(format!(
            "donor series has {} pre-periods, treated has {}",
            row.len(),
            treated_pre.len()
        )));
    }
    if !(zeta >= 0.0) || !zeta.is_finite() {
        return Err(invalid(format!("zeta must be non-negative, got {zeta}")));
    }
    if donor_pre.iter().flatten().chain(treated_pre).any(|v| !v.is_finite()) {
        return Err(invalid("weight solver input contains non-finite values"));
    }

    let q = Quadratic::build(donor_pre, treated_pre, zeta);
    let (mut omega, mut iterations) = active_set(&q, opts);
    let mut residual = kkt_residual(omega.as_slice(), q.gradient(&omega).as_slice());

    if residual > opts.tol {
        let budget = opts.max_iter.saturating_sub(iterations);
        let (polished, used) = projected_gradient(&q, omega, opts.tol, budget);
        omega = polished;
        iterations += used;
        residual = kkt_residual(omega.as_slice(), q.gradient(&omega).as_slice());
    }
    let omega: Vec<f64> = omega.iter().copied().collect();
    if residual > opts.tol {
        return Err(Error::NonConvergence {
            iterations,
            kkt_residual: residual,
            best: omega,
        });
    }
    Ok(SimplexSolution {
        objective: objective(donor_pre, treated_pre, zeta, &omega),
        omega,
        kkt_residual: residual,
        iterations,
    })
}

/// Primal active-set iterations. A 1e-12 ridge keeps every equality
/// subproblem non-singular when ζ = 0 and donors outnumber periods; its
/// effect on the gradient is far below the KKT tolerance.
fn active_set(q: &Quadratic, opts: &SolverOptions) -> (DVector<f64>, usize) {
    let k = q.lin.len();
    let eps = 1e-12 * (q.hess.trace() / k as f64).max(1.0);
    let mut hess = q.hess.clone();
    for i in 0..k {
        hess[(i, i)] += eps;
    }
    let half_grad = |w: &DVector<f64>| &hess * w - &q.lin;

    let start = (0..k)
        .min_by(|&a, &b| {
            let fa = hess[(a, a)] - 2.0 * q.lin[a];
            let fb = hess[(b, b)] - 2.0 * q.lin[b];
            fa.total_cmp(&fb)
        })
        .unwrap_or(0);
    let mut omega = DVector::zeros(k);
    omega[start] = 1.0;
    let mut free = vec![start];

    let mut iter = 0;
    while iter < opts.max_iter {
        iter += 1;
        let Some(target) = equality_solution(&hess, &q.lin, &free) else {
            break;
        };
        if target.iter().all(|v| *v >= 0.0) {
            for (pos, &i) in free.iter().enumerate() {
                omega[i] = target[pos];
            }
            let g = half_grad(&omega);
            let mu = free.iter().map(|&i| g[i]).sum::<f64>() / free.len() as f64;
            let entering = (0..k)
                .filter(|i| !free.contains(i))
                .min_by(|&a, &b| g[a].total_cmp(&g[b]));
            match entering {
                // ∇ = 2g, so a quarter of tol on g leaves headroom
                Some(j) if g[j] - mu < -0.25 * opts.tol => free.push(j),
                _ => break,
            }
        } else {
            // Step toward the subproblem optimum until a weight hits zero.
            let mut alpha = 1.0f64;
            for (pos, &i) in free.iter().enumerate() {
                let step = target[pos] - omega[i];
                if step < 0.0 {
                    alpha = alpha.min(omega[i] / -step);
                }
            }
            for (pos, &i) in free.iter().enumerate() {
                omega[i] += alpha * (target[pos] - omega[i]);
            }
            let mut blocked = free
                .iter()
                .enumerate()
                .filter(|(pos, &i)| target[*pos] < 0.0 && omega[i] <= 1e-15)
                .map(|(_, &i)| i)
                .collect::<Vec<_>>();
            if blocked.is_empty() {
                // rounding left the blocking weight just above zero
                let (_, &i) = free
                    .iter()
                    .enumerate()
                    .filter(|(pos, _)| target[*pos] < 0.0)
                    .min_by(|a, b| omega[*a.1].total_cmp(&omega[*b.1]))
                    .expect("a negative target entry exists");
                blocked.push(i);
            }
            for i in blocked {
                omega[i] = 0.0;
                free.retain(|&f| f != i);
            }
            renormalise(&mut omega);
        }
    }
    clamp_to_simplex(&mut omega);
    (omega, iter)
}

/// Solves `min ωᵀHω − 2hᵀω` s.t. `Σ ω = 1` over the free coordinates.
fn equality_solution(hess: &DMatrix<f64>, lin: &DVector<f64>, free: &[usize]) -> Option<DVector<f64>> {
    let m = free.len();
    let mut kkt = DMatrix::zeros(m + 1, m + 1);
    let mut rhs = DVector::zeros(m + 1);
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            kkt[(a, b)] = hess[(i, j)];
        }
        kkt[(a, m)] = 1.0;
        kkt[(m, a)] = 1.0;
        rhs[a] = lin[i];
    }
    rhs[m] = 1.0;
    let sol = kkt.lu().solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(sol.rows(0, m).into_owned())
}

/// FISTA with gradient restarts, projecting onto the simplex each step.
#[cfg(test)]
pub(crate) fn projected_gradient_raw(
    donor_pre: &[Vec<f64>],
    treated_pre: &[f64],
    zeta: f64,
    tol: f64,
    max_iter: usize,
) -> (Vec<f64>, f64) {
    let q = Quadratic::build(donor_pre, treated_pre, zeta);
    let k = q.lin.len();
    let start = DVector::from_element(k, 1.0 / k as f64);
    let (w, _) = projected_gradient(&q, start, tol, max_iter);
    let r = kkt_residual(w.as_slice(), q.gradient(&w).as_slice());
    (w.iter().copied().collect(), r)
}

fn projected_gradient(q: &Quadratic, start: DVector<f64>, tol: f64, max_iter: usize) -> (DVector<f64>, usize) {
    // Lipschitz bound of ∇ = 2H via the max absolute row sum.
    let lipschitz = 2.0
        * q.hess
            .row_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(f64::MIN_POSITIVE, f64::max);
    let step = 1.0 / lipschitz;
    let mut x = start;
    let mut y = x.clone();
    let mut momentum = 1.0f64;
    for iter in 0..max_iter {
        let gy = q.gradient(&y);
        let next = project_simplex(&(&y - &gy * step));
        if (iter + 1) % 16 == 0 {
            let g = q.gradient(&next);
            if kkt_residual(next.as_slice(), g.as_slice()) <= tol {
                return (next, iter + 1);
            }
        }
        let m_next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let direction = &next - &x;
        // restart when the momentum step points uphill
        if gy.dot(&direction) > 0.0 {
            momentum = 1.0;
            y = next.clone();
        } else {
            y = &next + direction * ((momentum - 1.0) / m_next);
            momentum = m_next;
        }
        x = next;
    }
    (x, max_iter)
}

/// Euclidean projection onto the unit simplex (sort-and-threshold).
pub fn project_simplex(v: &DVector<f64>) -> DVector<f64> {
    let mut sorted: Vec<f64> = v.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, s) in sorted.iter().enumerate() {
        cum += s;
        let t = (cum - 1.0) / (i + 1) as f64;
        if s - t > 0.0 {
            theta = t;
        }
    }
    v.map(|x| (x - theta).max(0.0))
}

fn renormalise(w: &mut DVector<f64>) {
    let s: f64 = w.iter().sum();
    if s > 0.0 {
        *w /= s;
    }
}

fn clamp_to_simplex(w: &mut DVector<f64>) {
    for v in w.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    renormalise(w);
}
