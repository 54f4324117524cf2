//! Class scatter, cross-covariances and the whitened matrices that turn the
//! integrative problem into ordinary symmetric eigensystems.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::MultiViewDataset;
use crate::error::{Result, SidaError};
use crate::linalg::{matmul, sym_eigen};

/// Within/between scatter of one view.
#[derive(Debug, Clone)]
pub struct ClassScatter {
    /// `Σ_k Σ_{i in k} (x_i - μ_k)(x_i - μ_k)ᵀ`
    pub within: Array2<f64>,
    /// `Σ_k n_k (μ_k - μ)(μ_k - μ)ᵀ`
    pub between: Array2<f64>,
    /// p x K, column k is `sqrt(n_k) (μ_k - μ)`; `between = F Fᵀ`.
    pub between_factor: Array2<f64>,
    /// K x p
    pub class_means: Array2<f64>,
    pub overall_mean: Array1<f64>,
    pub class_counts: Vec<usize>,
}

/// Scatter matrices as unscaled sums. `labels` are 1-based in `1..=n_classes`.
pub fn scatter_matrices(x: ArrayView2<f64>, labels: &[usize], n_classes: usize) -> Result<ClassScatter> {
    let (n, p) = x.dim();
    if labels.len() != n {
        return Err(SidaError::Dimension(format!(
            "{} rows but {} labels",
            n,
            labels.len()
        )));
    }
    let mut counts = vec![0usize; n_classes];
    let mut means = Array2::<f64>::zeros((n_classes, p));
    for (row, &l) in x.axis_iter(Axis(0)).zip(labels) {
        if l == 0 || l > n_classes {
            return Err(SidaError::Validation(format!(
                "label {l} outside 1..={n_classes}"
            )));
        }
        counts[l - 1] += 1;
        let mut m = means.row_mut(l - 1);
        m += &row;
    }
    for (k, &c) in counts.iter().enumerate() {
        if c == 0 {
            return Err(SidaError::EmptyClass(k + 1));
        }
        means.row_mut(k).mapv_inplace(|v| v / c as f64);
    }
    let mut overall = Array1::<f64>::zeros(p);
    for (k, &c) in counts.iter().enumerate() {
        overall.scaled_add(c as f64 / n as f64, &means.row(k));
    }
    let mut centered = x.to_owned();
    for (mut row, &l) in centered.axis_iter_mut(Axis(0)).zip(labels) {
        row -= &means.row(l - 1);
    }
    let within = matmul(centered.t(), centered.view());
    let mut factor = Array2::<f64>::zeros((p, n_classes));
    for (k, &c) in counts.iter().enumerate() {
        let dev = &means.row(k) - &overall;
        factor.column_mut(k).assign(&(dev * (c as f64).sqrt()));
    }
    let between = factor.dot(&factor.t());
    Ok(ClassScatter {
        within,
        between,
        between_factor: factor,
        class_means: means,
        overall_mean: overall,
        class_counts: counts,
    })
}

/// Sample cross-covariance `Xdᵀ Xj / (n - 1)` of column-centered data. Inputs are
/// centered here, so raw data is accepted too.
pub fn cross_covariance(xd: ArrayView2<f64>, xj: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = xd.nrows();
    if xj.nrows() != n {
        return Err(SidaError::Dimension(format!(
            "cross-covariance of {} rows against {} rows",
            n,
            xj.nrows()
        )));
    }
    if n < 2 {
        return Err(SidaError::Validation(
            "cross-covariance needs at least two samples".into(),
        ));
    }
    let a = center(xd);
    let b = center(xj);
    let mut s = matmul(a.t(), b.view());
    s /= (n - 1) as f64;
    Ok(s)
}

fn center(x: ArrayView2<f64>) -> Array2<f64> {
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    &x - &mean
}

/// Ridge added to the within-class scatter before inversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Ridge {
    /// `κ · trace(Sw) / p`, never below `1e-8`, with `κ = 1e-3` when `Sw` has
    /// full rank and `κ = 1` when it is singular (`p ≥ n - K`).
    #[default]
    Auto,
    Fixed(f64),
}

pub const RIDGE_FLOOR: f64 = 1e-8;
pub const AUTO_FULL_RANK: f64 = 1e-3;
pub const AUTO_SINGULAR: f64 = 1.0;
/// Eigenvalues of `Sw` at or below this fraction of the largest count as zero.
pub const RANK_TOL: f64 = 1e-10;

impl Ridge {
    /// Ridge for a within-class scatter with the given trace, size and extreme
    /// eigenvalues.
    pub fn resolve(self, trace: f64, p: usize, min_eig: f64, max_eig: f64) -> f64 {
        match self {
            Ridge::Fixed(g) => g,
            Ridge::Auto => {
                let kappa = if max_eig > 0.0 && min_eig > RANK_TOL * max_eig {
                    AUTO_FULL_RANK
                } else {
                    AUTO_SINGULAR
                };
                (kappa * trace / p.max(1) as f64).max(RIDGE_FLOOR)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct InvSqrt {
    /// `(Sw + γI)^{-1/2}`
    pub w: Array2<f64>,
    pub gamma: f64,
}

/// Symmetric inverse square root of `Sw + γI`.
pub fn regularized_inv_sqrt(sw: ArrayView2<f64>, ridge: Ridge) -> Result<InvSqrt> {
    let p = sw.nrows();
    let e = sym_eigen(sw)?;
    if p == 0 {
        return Ok(InvSqrt {
            w: Array2::zeros((0, 0)),
            gamma: 0.0,
        });
    }
    let gamma = ridge.resolve(sw.diag().sum(), p, e.values[p - 1], e.values[0]);
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(SidaError::Validation(format!("invalid ridge {gamma}")));
    }
    let values = e.values.mapv(|v| v + gamma);
    let max = values[0];
    let min = values[p - 1];
    if !(max > 0.0) || min <= 1e-12 * max {
        return Err(SidaError::Singular {
            min_eig: min,
            max_eig: max,
        });
    }
    let scale = values.mapv(|v| 1.0 / v.sqrt());
    let scaled = &e.vectors * &scale;
    let w = matmul(scaled.view(), e.vectors.t());
    let w = crate::linalg::symmetrize(w.view());
    Ok(InvSqrt { w, gamma })
}

/// Whitened quantities of one view.
#[derive(Debug, Clone)]
pub struct ViewScatter {
    /// `Sw + γI`, when built from data.
    pub within: Option<Array2<f64>>,
    /// `(Sw + γI)^{-1/2}`, when built from data.
    pub whitener: Option<Array2<f64>>,
    pub between: Option<Array2<f64>>,
    /// `M = G Gᵀ` with this p x m factor.
    pub m_factor: Array2<f64>,
    pub gamma: f64,
}

#[derive(Debug, Clone)]
enum CrossTerms {
    /// `N_dj = Zdᵀ Zj / (n - 1)` with `Zd = Xd_centered · Wd`.
    Whitened { data: Vec<Array2<f64>>, denom: f64 },
    /// Explicit `N_dj` for `d < j`.
    Dense(BTreeMap<(usize, usize), Array2<f64>>),
}

/// Per-view `M_d = Wd Sb_d Wd` and pairwise `N_dj = Wd S_dj Wj`.
///
/// Both are kept in factored form; [`ScatterSet::m`] and [`ScatterSet::n`]
/// materialize them on demand.
#[derive(Debug, Clone)]
pub struct ScatterSet {
    views: Vec<ViewScatter>,
    cross: CrossTerms,
}

impl ScatterSet {
    /// Assembles a scatter set directly from symmetric PSD `M_d` matrices and
    /// cross terms `N_dj` (`d < j`, shape p_d x p_j).
    pub fn from_parts(m: Vec<Array2<f64>>, n: BTreeMap<(usize, usize), Array2<f64>>) -> Result<Self> {
        let dims: Vec<usize> = m.iter().map(|x| x.nrows()).collect();
        for (&(d, j), mat) in &n {
            if d >= j || j >= m.len() || mat.dim() != (dims[d], dims[j]) {
                return Err(SidaError::Dimension(format!(
                    "cross term ({d}, {j}) does not fit the views"
                )));
            }
        }
        let views = m
            .into_iter()
            .map(|md| {
                Ok(ViewScatter {
                    within: None,
                    whitener: None,
                    between: None,
                    m_factor: psd_factor(md.view())?,
                    gamma: 0.0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            views,
            cross: CrossTerms::Dense(n),
        })
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn dim(&self, d: usize) -> usize {
        self.views[d].m_factor.nrows()
    }

    pub fn view(&self, d: usize) -> &ViewScatter {
        &self.views[d]
    }

    pub fn m_factor(&self, d: usize) -> ArrayView2<'_, f64> {
        self.views[d].m_factor.view()
    }

    pub fn m(&self, d: usize) -> Array2<f64> {
        let f = &self.views[d].m_factor;
        matmul(f.view(), f.t())
    }

    /// Dense `N_dj` (p_d x p_j); `N_jd = N_djᵀ`.
    pub fn n(&self, d: usize, j: usize) -> Array2<f64> {
        match &self.cross {
            CrossTerms::Whitened { data, denom } => {
                let mut out = matmul(data[d].t(), data[j].view());
                out /= *denom;
                out
            }
            CrossTerms::Dense(map) => {
                if d < j {
                    map.get(&(d, j))
                        .cloned()
                        .unwrap_or_else(|| Array2::zeros((self.dim(d), self.dim(j))))
                } else if d > j {
                    map.get(&(j, d))
                        .map(|m| m.t().to_owned())
                        .unwrap_or_else(|| Array2::zeros((self.dim(d), self.dim(j))))
                } else {
                    panic!("N_dd is not defined")
                }
            }
        }
    }

    /// `N_dj G` without materializing `N_dj`.
    pub fn n_times(&self, d: usize, j: usize, g: ArrayView2<f64>) -> Array2<f64> {
        match &self.cross {
            CrossTerms::Whitened { data, denom } => {
                let inner = data[j].dot(&g);
                let mut out = data[d].t().dot(&inner);
                out /= *denom;
                out
            }
            CrossTerms::Dense(_) => self.n(d, j).dot(&g),
        }
    }
}

/// `F` with `A = F Fᵀ` for a symmetric PSD matrix, dropping null directions.
fn psd_factor(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    let e = sym_eigen(a.view())?;
    let max = e.values.iter().cloned().fold(0.0f64, f64::max);
    let keep: Vec<usize> = (0..e.values.len())
        .filter(|&i| e.values[i] > 1e-14 * max && e.values[i] > 0.0)
        .collect();
    let mut f = Array2::zeros((a.nrows(), keep.len()));
    for (c, &i) in keep.iter().enumerate() {
        f.column_mut(c)
            .assign(&(&e.vectors.column(i) * e.values[i].sqrt()));
    }
    Ok(f)
}

/// Builds every view's whitened scatter and the pairwise cross terms.
/// `ridges` has one entry per view.
pub fn build_scatter_set(ds: &MultiViewDataset, ridges: &[Ridge]) -> Result<ScatterSet> {
    if ridges.len() != ds.n_views() {
        return Err(SidaError::Validation(format!(
            "{} ridge values for {} views",
            ridges.len(),
            ds.n_views()
        )));
    }
    let n = ds.n_samples();
    if n < 2 {
        return Err(SidaError::Validation("need at least two samples".into()));
    }
    let mut views = Vec::with_capacity(ds.n_views());
    let mut whitened = Vec::with_capacity(ds.n_views());
    for (d, ridge) in ridges.iter().enumerate() {
        let x = ds.view(d);
        let sc = scatter_matrices(x, ds.labels(), ds.n_classes())?;
        let inv = regularized_inv_sqrt(sc.within.view(), *ridge)?;
        let m_factor = inv.w.dot(&sc.between_factor);
        let xc = center(x);
        whitened.push(matmul(xc.view(), inv.w.view()));
        let mut within = sc.within;
        for i in 0..within.nrows() {
            within[[i, i]] += inv.gamma;
        }
        views.push(ViewScatter {
            within: Some(within),
            whitener: Some(inv.w),
            between: Some(sc.between),
            m_factor,
            gamma: inv.gamma,
        });
    }
    Ok(ScatterSet {
        views,
        cross: CrossTerms::Whitened {
            data: whitened,
            denom: (n - 1) as f64,
        },
    })
}

/// Eigenvalue-count rank of a symmetric PSD matrix, relative to its largest
/// eigenvalue.
pub fn numerical_rank(a: ArrayView2<f64>, rel_tol: f64) -> Result<usize> {
    let e = sym_eigen(a)?;
    let max = e.values.iter().cloned().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return Ok(0);
    }
    Ok(e.values.iter().filter(|&&v| v > rel_tol * max).count())
}

pub fn mean_of(x: ArrayView1<f64>) -> f64 {
    x.sum() / x.len().max(1) as f64
}
