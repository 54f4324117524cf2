//! Per-view sparse subproblems.
//!
//! Both solvers minimize a row-sparsity penalty subject to
//! `‖D - Γ Λ‖_∞ ≤ τ`, where `‖·‖_∞` is the maximum absolute row sum. That norm
//! splits the constraint into one independent constraint per row.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SidaError};
use crate::gev::DEGENERATE_REL;
use crate::graph::LaplacianMatrix;
use crate::linalg::{l2, row_norms};

/// Rows with `‖γ_i‖₂ > SUPPORT_REL · max_i ‖γ_i‖₂` count as selected.
pub const SUPPORT_REL: f64 = 1e-8;

/// One view's sparse problem: target `D = C Γ̃` (p x r), eigenvalues `Λ̃`,
/// radius `τ`, and for the smoothed variant a Laplacian and mix `η`.
#[derive(Debug, Clone, Copy)]
pub struct SparseSubproblem<'a> {
    pub d_mat: ArrayView2<'a, f64>,
    pub lambdas: ArrayView1<'a, f64>,
    pub tau: f64,
    pub eta: f64,
    pub laplacian: Option<&'a LaplacianMatrix>,
}

/// Indices of the usable (non-degenerate) eigen-directions.
pub fn active_directions(lambdas: ArrayView1<f64>) -> Vec<usize> {
    let lmax = lambdas.iter().cloned().fold(0.0f64, f64::max);
    (0..lambdas.len())
        .filter(|&k| lmax > 0.0 && lambdas[k] > DEGENERATE_REL * lmax)
        .collect()
}

/// Exact minimizer of `‖γ‖₂` subject to `Σ_k |d_k - λ_k γ_k| ≤ τ`.
///
/// With `γ_k = t_k d_k / λ_k`, `t ∈ [0, 1]^r`, the problem becomes
/// `min Σ t_k² d_k²/λ_k²` s.t. `Σ |d_k| t_k ≥ Σ |d_k| - τ`, whose KKT solution is
/// `t_k = clamp(μ λ_k² / (2 |d_k|), 0, 1)`. The constraint is piecewise linear in
/// `μ`, so `μ` is found exactly by sweeping the breakpoints `2 |d_k| / λ_k²`.
/// `lambdas` must be positive.
pub fn solve_row_sida(d: ArrayView1<f64>, lambdas: ArrayView1<f64>, tau: f64) -> Array1<f64> {
    let r = d.len();
    let mut out = Array1::zeros(r);
    let total: f64 = d.iter().map(|v| v.abs()).sum();
    if total <= tau {
        return out;
    }
    if tau <= 0.0 {
        for k in 0..r {
            out[k] = d[k] / lambdas[k];
        }
        return out;
    }
    let need = total - tau;
    let mut idx: Vec<usize> = (0..r).filter(|&k| d[k] != 0.0).collect();
    let brk = |k: usize| 2.0 * d[k].abs() / (lambdas[k] * lambdas[k]);
    idx.sort_by(|&a, &b| brk(a).total_cmp(&brk(b)).then(a.cmp(&b)));
    // h(μ) = saturated + μ · slope on the current segment
    let mut saturated = 0.0;
    let mut slope: f64 = idx.iter().map(|&k| 0.5 * lambdas[k] * lambdas[k]).sum();
    let mut mu = f64::INFINITY;
    let mut n_sat = idx.len();
    for (pos, &k) in idx.iter().enumerate() {
        let b = brk(k);
        if saturated + b * slope >= need {
            mu = (need - saturated) / slope;
            n_sat = pos;
            break;
        }
        saturated += d[k].abs();
        slope -= 0.5 * lambdas[k] * lambdas[k];
    }
    for (pos, &k) in idx.iter().enumerate() {
        let t = if pos < n_sat {
            1.0
        } else {
            (mu * lambdas[k] * lambdas[k] / (2.0 * d[k].abs())).clamp(0.0, 1.0)
        };
        out[k] = t * d[k] / lambdas[k];
    }
    out
}

/// Row-wise SIDA solve. Degenerate directions are dropped from the constraint
/// and come back as zero columns.
pub fn solve_view_sida(d_mat: ArrayView2<f64>, lambdas: ArrayView1<f64>, tau: f64) -> Array2<f64> {
    let active = active_directions(lambdas);
    let (p, r) = d_mat.dim();
    let mut out = Array2::zeros((p, r));
    if active.is_empty() {
        return out;
    }
    let lam = lambdas.select(Axis(0), &active);
    let sub = d_mat.select(Axis(1), &active);
    for i in 0..p {
        let g = solve_row_sida(sub.row(i), lam.view(), tau);
        for (c, &k) in active.iter().enumerate() {
            out[[i, k]] = g[c];
        }
    }
    out
}

/// `‖D - Γ Λ‖_∞` (max absolute row sum), over all columns.
pub fn constraint_violation(d_mat: ArrayView2<f64>, gamma: ArrayView2<f64>, lambdas: ArrayView1<f64>) -> f64 {
    let resid = &d_mat - &(&gamma * &lambdas);
    crate::linalg::max_abs_row_sum(resid.view())
}

/// `Σ_i ‖γ_i‖₂`.
pub fn row_l21(g: ArrayView2<f64>) -> f64 {
    row_norms(g).sum()
}

/// Euclidean projection of `v` onto `{γ : Σ_k w_k |γ_k - c_k| ≤ radius}`.
///
/// The projection is a weighted soft-threshold of `v - c` at level `θ w_k`; `θ`
/// is found exactly, without sorting, by fixed-point iteration on the active set.
pub fn project_weighted_l1(
    v: ArrayView1<f64>,
    weights: ArrayView1<f64>,
    center: ArrayView1<f64>,
    radius: f64,
) -> Array1<f64> {
    let u = &v - &center;
    let mass = |theta: f64| -> f64 {
        u.iter()
            .zip(weights.iter())
            .map(|(&x, &w)| w * (x.abs() - theta * w).max(0.0))
            .sum()
    };
    if mass(0.0) <= radius {
        return v.to_owned();
    }
    if radius <= 0.0 {
        return center.to_owned();
    }
    // θ = 0 is a lower bound on the threshold; re-solving on the current
    // active set increases θ monotonically and stops after at most `r` steps.
    let mut theta = 0.0f64;
    for _ in 0..=u.len() {
        let (mut num, mut den) = (0.0, 0.0);
        for (&x, &w) in u.iter().zip(weights.iter()) {
            if x.abs() > theta * w {
                num += w * x.abs();
                den += w * w;
            }
        }
        if den == 0.0 {
            break;
        }
        let next = ((num - radius) / den).max(theta);
        if next == theta {
            break;
        }
        theta = next;
    }
    let mut out = center.to_owned();
    for k in 0..u.len() {
        out[k] += u[k].signum() * (u[k].abs() - theta * weights[k]).max(0.0);
    }
    out
}

/// Splitting-method controls for the smoothed solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmmOptions {
    /// Initial penalty parameter.
    pub rho: f64,
    /// Relative tolerance on primal and dual residuals.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        Self {
            rho: 1.0,
            tol: 1e-6,
            max_iter: 5000,
        }
    }
}

/// `η Σ_i ‖(L Γ)_i‖₂ + (1 - η) Σ_i ‖Γ_i‖₂`.
pub fn sidanet_objective(g: ArrayView2<f64>, laplacian: &LaplacianMatrix, eta: f64) -> f64 {
    eta * row_l21(laplacian.mul(g).view()) + (1.0 - eta) * row_l21(g)
}

/// Block-wise Cholesky factors of `LᵀL + 2I`, one per connected component.
struct SystemFactor {
    blocks: Vec<(Vec<usize>, faer::linalg::solvers::Llt<f64>)>,
}

impl SystemFactor {
    fn new(l: &LaplacianMatrix) -> Result<Self> {
        let dense = l.to_dense();
        let mut blocks = Vec::new();
        for comp in l.components() {
            let m = comp.len();
            let sub = dense.select(Axis(0), &comp).select(Axis(1), &comp);
            let mut a = sub.t().dot(&sub);
            for i in 0..m {
                a[[i, i]] += 2.0;
            }
            let fa = Mat::<f64>::from_fn(m, m, |i, j| a[[i, j]]);
            let llt = fa
                .llt(Side::Lower)
                .map_err(|_| SidaError::NotPositiveDefinite(0.0))?;
            blocks.push((comp, llt));
        }
        Ok(Self { blocks })
    }

    fn solve(&self, rhs: &Array2<f64>) -> Array2<f64> {
        let r = rhs.ncols();
        let mut out = Array2::zeros(rhs.dim());
        for (comp, llt) in &self.blocks {
            let b = Mat::<f64>::from_fn(comp.len(), r, |i, j| rhs[[comp[i], j]]);
            let x = llt.solve(&b);
            for (i, &v) in comp.iter().enumerate() {
                for j in 0..r {
                    out[[v, j]] = x[(i, j)];
                }
            }
        }
        out
    }
}

fn row_shrink(a: &Array2<f64>, level: f64) -> Array2<f64> {
    let mut out = a.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let nrm = l2(row.view());
        let scale = if nrm > level { 1.0 - level / nrm } else { 0.0 };
        row.mapv_inplace(|v| v * scale);
    }
    out
}

const ADAPT_EVERY: usize = 10;

/// Report from the smoothed solver.
#[derive(Debug, Clone)]
pub struct SidanetSolution {
    pub gamma: Array2<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Final splitting iterates, for warm-starting a nearby subproblem.
    pub state: Option<AdmmState>,
}

/// Auxiliary blocks, scaled duals and penalty of a finished splitting run.
#[derive(Debug, Clone)]
pub struct AdmmState {
    z: [Array2<f64>; 3],
    u: [Array2<f64>; 3],
    rho: f64,
}

/// Smoothed row-sparse solve by ADMM over `Z₁ = LΓ`, `Z₂ = Γ`, `Z₃ = Γ`.
///
/// `Z₁`, `Z₂` take row-wise ℓ2 shrinkage, `Z₃` the per-row weighted-ℓ1
/// projection onto the constraint set; the `Γ` system `(LᵀL + 2I)` does not
/// depend on the penalty parameter and is factored once. The penalty adapts by
/// residual balancing. The result takes `Z₂`'s zero rows where zero is
/// feasible and the (feasible) projected rows elsewhere.
pub fn solve_view_sidanet(sub: &SparseSubproblem, opts: &AdmmOptions) -> Result<SidanetSolution> {
    solve_view_sidanet_warm(sub, opts, None)
}

/// As [`solve_view_sidanet`], resuming from `warm` when its shape matches.
pub fn solve_view_sidanet_warm(
    sub: &SparseSubproblem,
    opts: &AdmmOptions,
    warm: Option<&AdmmState>,
) -> Result<SidanetSolution> {
    let (p, r) = sub.d_mat.dim();
    let lap = match sub.laplacian {
        Some(l) if !l.is_zero() && sub.eta > 0.0 => l,
        _ => {
            return Ok(SidanetSolution {
                gamma: solve_view_sida(sub.d_mat, sub.lambdas, sub.tau),
                iterations: 0,
                converged: true,
                state: None,
            })
        }
    };
    if lap.dim() != p {
        return Err(SidaError::Dimension(format!(
            "Laplacian of size {} for a view with {} variables",
            lap.dim(),
            p
        )));
    }
    if !(0.0..=1.0).contains(&sub.eta) {
        return Err(SidaError::Validation(format!("eta {} outside [0, 1]", sub.eta)));
    }
    let active = active_directions(sub.lambdas);
    let mut gamma_full = Array2::zeros((p, r));
    if active.is_empty() {
        return Ok(SidanetSolution {
            gamma: gamma_full,
            iterations: 0,
            converged: true,
            state: None,
        });
    }
    let lam = sub.lambdas.select(Axis(0), &active);
    let dm = sub.d_mat.select(Axis(1), &active);
    let centers = &dm / &lam;
    let zero_ok: Vec<bool> = dm
        .axis_iter(Axis(0))
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>() <= sub.tau)
        .collect();
    let project = |a: &Array2<f64>| -> Array2<f64> {
        let mut out = a.clone();
        for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let pr = project_weighted_l1(a.row(i), lam.view(), centers.row(i), sub.tau);
            row.assign(&pr);
        }
        out
    };

    let factor = SystemFactor::new(lap)?;
    let eta = sub.eta;
    let ka = active.len();
    let (mut z1, mut z2, mut z3, mut u1, mut u2, mut u3, mut rho) = match warm {
        Some(w) if w.z[0].dim() == (p, ka) => (
            w.z[0].clone(),
            w.z[1].clone(),
            w.z[2].clone(),
            w.u[0].clone(),
            w.u[1].clone(),
            w.u[2].clone(),
            w.rho,
        ),
        _ => {
            // cold start from the unsmoothed solution
            let g = solve_view_sida(dm.view(), lam.view(), sub.tau);
            let zero = Array2::<f64>::zeros((p, ka));
            (lap.mul(g.view()), g.clone(), g, zero.clone(), zero.clone(), zero, opts.rho)
        }
    };
    let mut g;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let rhs = lap.mul((&z1 - &u1).view()) + (&z2 - &u2) + (&z3 - &u3);
        g = factor.solve(&rhs);
        let lg = lap.mul(g.view());
        let n1 = row_shrink(&(&lg + &u1), eta / rho);
        let n2 = row_shrink(&(&g + &u2), (1.0 - eta) / rho);
        let n3 = project(&(&g + &u3));
        let r1 = &lg - &n1;
        let r2 = &g - &n2;
        let r3 = &g - &n3;
        let dual = lap.mul((&n1 - &z1).view()) + (&n2 - &z2) + (&n3 - &z3);
        u1 += &r1;
        u2 += &r2;
        u3 += &r3;
        z1 = n1;
        z2 = n2;
        z3 = n3;
        let prim = (sq(&r1) + sq(&r2) + sq(&r3)).sqrt();
        let dres = rho * sq(&dual).sqrt();
        let ax = (sq(&lg) + 2.0 * sq(&g)).sqrt();
        let zn = (sq(&z1) + sq(&z2) + sq(&z3)).sqrt();
        // Γ carries no objective of its own, so ρAᵀu equals the dual residual
        // at every step; scale by the multipliers themselves instead.
        let aty = rho * (sq(&u1) + sq(&u2) + sq(&u3)).sqrt();
        let abs_tol = 1e-12 * ((p * ka) as f64).sqrt();
        if prim <= abs_tol + opts.tol * ax.max(zn) && dres <= abs_tol + opts.tol * aty {
            converged = true;
            break;
        }
        // adapting every step makes the penalty oscillate
        if iterations % ADAPT_EVERY != 0 {
        } else if prim > 10.0 * dres {
            rho *= 2.0;
            u1 /= 2.0;
            u2 /= 2.0;
            u3 /= 2.0;
        } else if dres > 10.0 * prim {
            rho /= 2.0;
            u1 *= 2.0;
            u2 *= 2.0;
            u3 *= 2.0;
        }
    }
    if !converged {
        log::warn!(
            "smoothed sparse solver stopped after {} iterations without reaching tolerance",
            iterations
        );
    }
    let z2_norms = row_norms(z2.view());
    let z3_feasible = project(&z3);
    for i in 0..p {
        let keep_zero = zero_ok[i] && z2_norms[i] == 0.0;
        if !keep_zero {
            for (c, &k) in active.iter().enumerate() {
                gamma_full[[i, k]] = z3_feasible[[i, c]];
            }
        }
    }
    Ok(SidanetSolution {
        gamma: gamma_full,
        iterations,
        converged,
        state: Some(AdmmState {
            z: [z1, z2, z3],
            u: [u1, u2, u3],
            rho,
        }),
    })
}

fn sq(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum()
}

/// Rows whose ℓ2 norm exceeds `SUPPORT_REL` times the largest row norm.
pub fn selected_rows(g: ArrayView2<f64>) -> Vec<usize> {
    let norms = row_norms(g);
    let max = norms.iter().cloned().fold(0.0f64, f64::max);
    if max == 0.0 {
        return Vec::new();
    }
    (0..norms.len())
        .filter(|&i| norms[i] > SUPPORT_REL * max)
        .collect()
}
