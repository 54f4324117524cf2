//! Nonsparse solutions of the coupled eigensystems: classical LDA for
//! initialization and the alternating per-view eigen-solver.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SidaError};
use crate::linalg::{
    aligned_distance, canonical_signs, fill_orthonormal_complement, frobenius, gram_schmidt,
    low_rank_top_eigen, matmul, sym_eigen, symmetrize,
};
use crate::scatter::{regularized_inv_sqrt, Ridge, ScatterSet};

/// Eigenvalues at or below this fraction of the largest are treated as degenerate.
pub const DEGENERATE_REL: f64 = 1e-10;

/// `(c1, c2)` weights: `c1 = ρ`, `c2 = 2(1 - ρ) / (D (D - 1))`, and `c2 = 0` for a
/// single view.
pub fn weights(rho: f64, n_views: usize) -> (f64, f64) {
    let c2 = if n_views < 2 {
        0.0
    } else {
        2.0 * (1.0 - rho) / (n_views * (n_views - 1)) as f64
    };
    (rho, c2)
}

#[derive(Debug, Clone)]
pub struct LdaDirections {
    /// p x r, orthonormal columns.
    pub directions: Array2<f64>,
    pub eigenvalues: Array1<f64>,
    /// Columns filled from an arbitrary orthonormal complement.
    pub degenerate: Vec<bool>,
}

/// Classical LDA: top-`r` eigenvectors of `Sw^{-1/2} Sb Sw^{-1/2}` mapped back
/// through `Sw^{-1/2}` and orthonormalized. `sw` must already be regularized.
pub fn lda_directions(sw: ArrayView2<f64>, sb: ArrayView2<f64>, r: usize) -> Result<LdaDirections> {
    let p = sw.nrows();
    if sb.dim() != (p, p) || r > p {
        return Err(SidaError::Dimension(format!(
            "LDA with Sw {:?}, Sb {:?}, r = {r}",
            sw.dim(),
            sb.dim()
        )));
    }
    let w = regularized_inv_sqrt(sw, Ridge::Fixed(0.0))?.w;
    let m = symmetrize(matmul(matmul(w.view(), sb).view(), w.view()).view());
    let e = sym_eigen(m.view())?;
    let lmax = e.values.iter().cloned().fold(0.0f64, f64::max);
    let mut degenerate = vec![false; r];
    let mut dirs = matmul(w.view(), e.vectors.slice(s![.., ..r]));
    let mut values = Array1::zeros(r);
    for k in 0..r {
        values[k] = e.values[k].max(0.0);
        if !(lmax > 0.0) || e.values[k] <= DEGENERATE_REL * lmax {
            degenerate[k] = true;
            dirs.column_mut(k).fill(0.0);
            values[k] = 0.0;
        }
    }
    let mut dirs = gram_schmidt(dirs.view());
    let zero: Vec<usize> = (0..r)
        .filter(|&k| dirs.column(k).iter().all(|&v| v == 0.0))
        .collect();
    for &k in &zero {
        degenerate[k] = true;
    }
    fill_orthonormal_complement(&mut dirs, &zero);
    canonical_signs(&mut dirs);
    Ok(LdaDirections {
        directions: dirs,
        eigenvalues: values,
        degenerate,
    })
}

/// Thin factor `F` with `C_d = F Fᵀ`:
/// `F = [√(2ρ) G_d, √(2 c2) N_dj Γ_j for j ≠ d]` where `M_d = G_d G_dᵀ`.
pub fn coefficient_factor(scat: &ScatterSet, d: usize, gammas: &[Array2<f64>], rho: f64) -> Array2<f64> {
    let dn = scat.n_views();
    let (c1, c2) = weights(rho, dn);
    let mut blocks: Vec<Array2<f64>> = Vec::with_capacity(dn);
    if c1 > 0.0 {
        blocks.push(scat.m_factor(d).to_owned() * (2.0 * c1).sqrt());
    }
    if c2 > 0.0 {
        for j in 0..dn {
            if j != d {
                blocks.push(scat.n_times(d, j, gammas[j].view()) * (2.0 * c2).sqrt());
            }
        }
    }
    if blocks.is_empty() {
        return Array2::zeros((scat.dim(d), 0));
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    concatenate(Axis(1), &views).expect("blocks share the row dimension")
}

/// Dense, explicitly symmetrized coefficient matrix
/// `C_d = c1 (M_d + M_dᵀ) + c2 Σ_{j≠d} (N_dj Γ_j Γ_jᵀ N_jd + transpose)`.
pub fn assemble_coefficient(scat: &ScatterSet, d: usize, gammas: &[Array2<f64>], rho: f64) -> Array2<f64> {
    let f = coefficient_factor(scat, d, gammas, rho);
    symmetrize(matmul(f.view(), f.t()).view())
}

/// Objective `ρ Σ_d tr(Γ_dᵀ M_d Γ_d) + c2 Σ_{d<j} ‖Γ_dᵀ N_dj Γ_j‖²_F`.
///
/// Its dependence on a single block `Γ_d` is `½ tr(Γ_dᵀ C_d Γ_d)` plus terms free
/// of `Γ_d`, so each block update of the alternating solver cannot decrease it.
pub fn objective(scat: &ScatterSet, gammas: &[Array2<f64>], rho: f64) -> f64 {
    let dn = scat.n_views();
    let (c1, c2) = weights(rho, dn);
    let mut total = 0.0;
    for d in 0..dn {
        let gm = scat.m_factor(d).t().dot(&gammas[d]);
        total += c1 * gm.iter().map(|v| v * v).sum::<f64>();
        if c2 > 0.0 {
            for j in d + 1..dn {
                let nj = scat.n_times(d, j, gammas[j].view());
                let t = gammas[d].t().dot(&nj);
                total += c2 * t.iter().map(|v| v * v).sum::<f64>();
            }
        }
    }
    total
}

/// One view's eigen-update.
#[derive(Debug, Clone)]
pub struct ViewEigen {
    pub gamma: Array2<f64>,
    pub lambda: Array1<f64>,
    pub degenerate: Vec<bool>,
}

/// Top-`r` eigenpairs of `C_d` built from the other views' current matrices, with
/// canonical signs and degenerate directions replaced by an orthonormal
/// complement (their eigenvalue is reported as 0).
pub fn view_eigen(scat: &ScatterSet, d: usize, gammas: &[Array2<f64>], rho: f64, r: usize) -> Result<ViewEigen> {
    let f = coefficient_factor(scat, d, gammas, rho);
    let e = low_rank_top_eigen(f.view(), r)?;
    Ok(finish_eigen(e.vectors, e.values))
}

fn finish_eigen(mut gamma: Array2<f64>, mut lambda: Array1<f64>) -> ViewEigen {
    let r = lambda.len();
    let lmax = lambda.iter().cloned().fold(0.0f64, f64::max);
    let mut degenerate = vec![false; r];
    let mut bad = Vec::new();
    for k in 0..r {
        if !(lmax > 0.0) || lambda[k] <= DEGENERATE_REL * lmax {
            degenerate[k] = true;
            lambda[k] = 0.0;
            bad.push(k);
        }
    }
    if !bad.is_empty() {
        fill_orthonormal_complement(&mut gamma, &bad);
    }
    canonical_signs(&mut gamma);
    ViewEigen {
        gamma,
        lambda,
        degenerate,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "seed")]
pub enum GevInit {
    /// Top eigenvectors of each `M_d`, i.e. classical LDA in whitened coordinates.
    Lda,
    /// Seeded random orthonormal matrices.
    Random(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GevOptions {
    pub rho: f64,
    pub r: usize,
    pub eps: f64,
    pub max_iter: usize,
    pub init: GevInit,
}

impl GevOptions {
    pub fn new(rho: f64, r: usize) -> Self {
        Self {
            rho,
            r,
            eps: 1e-6,
            max_iter: 200,
            init: GevInit::Lda,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GevSolution {
    pub gammas: Vec<Array2<f64>>,
    pub lambdas: Vec<Array1<f64>>,
    pub degenerate: Vec<Vec<bool>>,
    pub iterations: usize,
    pub converged: bool,
    /// `‖C_d Γ_d - Γ_d Λ_d‖_F / ‖C_d‖_F` at the returned iterate.
    pub residuals: Vec<f64>,
    /// Objective after initialization and after every sweep.
    pub objective_trace: Vec<f64>,
}

/// Initial per-view matrices.
pub fn initial_gammas(scat: &ScatterSet, r: usize, init: GevInit) -> Result<Vec<Array2<f64>>> {
    match init {
        GevInit::Lda => (0..scat.n_views())
            .map(|d| {
                let e = low_rank_top_eigen(scat.m_factor(d), r)?;
                Ok(finish_eigen(e.vectors, e.values).gamma)
            })
            .collect(),
        GevInit::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok((0..scat.n_views())
                .map(|d| {
                    let g = Array2::from_shape_fn((scat.dim(d), r), |_| StandardNormal.sample(&mut rng));
                    let mut q = gram_schmidt(g.view());
                    let zero: Vec<usize> = (0..r)
                        .filter(|&k| q.column(k).iter().all(|&v| v == 0.0))
                        .collect();
                    fill_orthonormal_complement(&mut q, &zero);
                    q
                })
                .collect())
        }
    }
}

/// Relative stationarity residual `‖C Γ - Γ Λ‖_F / ‖C‖_F` using the factor of `C`.
pub fn stationarity_residual(f: ArrayView2<f64>, gamma: ArrayView2<f64>, lambda: &Array1<f64>) -> f64 {
    let cg = f.dot(&f.t().dot(&gamma));
    let gl = &gamma * lambda;
    let cnorm = {
        // ‖F Fᵀ‖_F = ‖Fᵀ F‖_F
        let g = f.t().dot(&f);
        frobenius(g.view())
    };
    if cnorm == 0.0 {
        return 0.0;
    }
    frobenius((&cg - &gl).view()) / cnorm
}

/// Alternating solver: sweeps `d = 1..D`, replacing `Γ_d` by the top-`r`
/// eigenvectors of `C_d` assembled from the other views' current matrices, until
/// the largest sign-aligned change falls below `eps`.
pub fn solve_gev(scat: &ScatterSet, opts: &GevOptions) -> Result<GevSolution> {
    let dn = scat.n_views();
    let r = opts.r;
    if (0..dn).any(|d| scat.dim(d) < r) {
        return Err(SidaError::Dimension(format!(
            "every view needs at least r = {r} variables"
        )));
    }
    let mut gammas = initial_gammas(scat, r, opts.init)?;
    let mut lambdas = vec![Array1::zeros(r); dn];
    let mut degenerate = vec![vec![false; r]; dn];
    let mut trace = vec![objective(scat, &gammas, opts.rho)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let mut change = 0.0f64;
        for d in 0..dn {
            let upd = view_eigen(scat, d, &gammas, opts.rho, r)?;
            change = change.max(aligned_distance(upd.gamma.view(), gammas[d].view()));
            gammas[d] = upd.gamma;
            lambdas[d] = upd.lambda;
            degenerate[d] = upd.degenerate;
        }
        trace.push(objective(scat, &gammas, opts.rho));
        if change < opts.eps {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "eigen-solver stopped after {} sweeps without reaching tolerance {}",
            iterations,
            opts.eps
        );
    }
    let residuals = (0..dn)
        .map(|d| {
            let f = coefficient_factor(scat, d, &gammas, opts.rho);
            stationarity_residual(f.view(), gammas[d].view(), &lambdas[d])
        })
        .collect();
    Ok(GevSolution {
        gammas,
        lambdas,
        degenerate,
        iterations,
        converged,
        residuals,
        objective_trace: trace,
    })
}

/// `C_d Γ̃_d` from the factor, without forming `C_d`.
pub fn coefficient_times(f: ArrayView2<f64>, g: ArrayView2<f64>) -> Array2<f64> {
    f.dot(&f.t().dot(&g))
}
