//! The outer alternating loop: refresh each view's nonsparse eigenpairs against
//! the other views' current sparse matrices, solve the view's sparse problem,
//! repeat; then orthonormalize and record centroids.

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{ColumnStats, MultiViewDataset, ViewRole};
use crate::error::{Result, SidaError};
use crate::gev::{coefficient_factor, coefficient_times, initial_gammas, view_eigen, GevInit};
use crate::graph::{build_laplacian, LaplacianKind, LaplacianMatrix, ViewGraph};
use crate::linalg::{aligned_distance, gram_schmidt};
use crate::scatter::{build_scatter_set, Ridge, ScatterSet};
use crate::sparse::{
    selected_rows, solve_view_sida, solve_view_sidanet_warm, AdmmOptions, AdmmState, SparseSubproblem,
};

/// How a view's discriminant matrix is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Row-sparse (block ℓ1/ℓ2) solution.
    Sida,
    /// Row-sparse with Laplacian smoothing over the view's graph.
    Sidanet,
    /// Unpenalized (`τ = 0`) covariate view.
    Covariate,
}

impl std::str::FromStr for Method {
    type Err = SidaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sida" => Ok(Method::Sida),
            "sidanet" => Ok(Method::Sidanet),
            "covariate" => Ok(Method::Covariate),
            other => Err(SidaError::Validation(format!(
                "unknown method '{other}' (expected sida, sidanet or covariate)"
            ))),
        }
    }
}

/// Covariate role wins, then a present graph selects the smoothed solver.
pub fn default_methods(ds: &MultiViewDataset, graphs: &[Option<ViewGraph>]) -> Vec<Method> {
    (0..ds.n_views())
        .map(|d| match ds.roles()[d] {
            ViewRole::Covariate => Method::Covariate,
            ViewRole::Penalized if graphs.get(d).map_or(false, |g| g.is_some()) => Method::Sidanet,
            ViewRole::Penalized => Method::Sida,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub rho: f64,
    pub eta: f64,
    pub ridge: Ridge,
    pub eps: f64,
    pub max_outer: usize,
    pub init: GevInit,
    pub admm: AdmmOptions,
    pub laplacian: LaplacianKind,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            rho: 0.5,
            eta: 0.5,
            ridge: Ridge::Auto,
            eps: 1e-6,
            max_outer: 50,
            init: GevInit::Lda,
            admm: AdmmOptions::default(),
            laplacian: LaplacianKind::Normalized,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(SidaError::Validation(format!("rho {} outside [0, 1]", self.rho)));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(SidaError::Validation(format!("eta {} outside [0, 1]", self.eta)));
        }
        if !(self.eps > 0.0) || self.max_outer == 0 {
            return Err(SidaError::Validation("eps must be positive and max_outer at least 1".into()));
        }
        if let Ridge::Fixed(g) = self.ridge {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(SidaError::Validation(format!("invalid ridge {g}")));
            }
        }
        Ok(())
    }
}

/// Configuration echoed into every fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub methods: Vec<Method>,
    pub taus: Vec<f64>,
    pub options: FitOptions,
    /// Ridge actually added to each view's within-class scatter.
    pub ridge_values: Vec<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewModel {
    pub names: Vec<String>,
    /// p x r.
    pub gamma: Array2<f64>,
    pub lambdas: Array1<f64>,
    /// 0-based indices of nonzero rows.
    pub selected: Vec<usize>,
    pub all_zero: bool,
    /// K x r centroids of this view's training scores.
    pub centroids: Array2<f64>,
}

/// A fitted sparse discriminant model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminantModel {
    pub config: ModelConfig,
    pub n_classes: usize,
    pub r: usize,
    pub views: Vec<ViewModel>,
    /// K x (D r) centroids of the concatenated training scores.
    pub pooled_centroids: Array2<f64>,
    pub stats: Vec<Vec<ColumnStats>>,
    pub iterations: usize,
    pub converged: bool,
}

impl DiscriminantModel {
    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn gamma(&self, d: usize) -> ArrayView2<'_, f64> {
        self.views[d].gamma.view()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.check()?;
        Ok(m)
    }

    /// Structural consistency of a deserialized model.
    pub fn check(&self) -> Result<()> {
        let dn = self.views.len();
        let bad = |msg: String| Err(SidaError::Validation(format!("malformed model: {msg}")));
        if dn == 0 || self.n_classes < 2 || self.r == 0 {
            return bad("needs views, at least two classes and r >= 1".into());
        }
        if self.stats.len() != dn || self.config.taus.len() != dn || self.config.methods.len() != dn {
            return bad("per-view lists disagree in length".into());
        }
        if self.pooled_centroids.dim() != (self.n_classes, dn * self.r) {
            return bad("pooled centroid shape".into());
        }
        for (d, v) in self.views.iter().enumerate() {
            let p = v.gamma.nrows();
            if v.gamma.ncols() != self.r
                || v.lambdas.len() != self.r
                || v.centroids.dim() != (self.n_classes, self.r)
                || self.stats[d].len() != p
                || (!v.names.is_empty() && v.names.len() != p)
                || v.selected.iter().any(|&i| i >= p)
            {
                return bad(format!("view {} shapes", d + 1));
            }
        }
        Ok(())
    }
}

/// Per-dataset work shared by every `τ` evaluated on it.
#[derive(Debug, Clone)]
pub struct Prepared<'a> {
    pub ds: &'a MultiViewDataset,
    pub scatter: ScatterSet,
    pub laplacians: Vec<Option<LaplacianMatrix>>,
    pub methods: Vec<Method>,
    pub r: usize,
}

/// Builds the whitened scatter set and Laplacians. The dataset must be
/// standardized.
pub fn prepare<'a>(
    ds: &'a MultiViewDataset,
    graphs: &[Option<ViewGraph>],
    methods: &[Method],
    opts: &FitOptions,
) -> Result<Prepared<'a>> {
    opts.validate()?;
    let dn = ds.n_views();
    if !ds.is_standardized() {
        return Err(SidaError::Validation("fit expects a standardized dataset".into()));
    }
    if methods.len() != dn {
        return Err(SidaError::Validation(format!(
            "{} methods for {} views",
            methods.len(),
            dn
        )));
    }
    if !graphs.is_empty() && graphs.len() != dn {
        return Err(SidaError::Validation(format!(
            "{} graph slots for {} views",
            graphs.len(),
            dn
        )));
    }
    let dims = ds.dims();
    let r = ds.n_classes() - 1;
    if let Some(d) = (0..dn).find(|&d| dims[d] < r) {
        return Err(SidaError::Dimension(format!(
            "view {} has {} variables but {} discriminant directions are needed",
            d + 1,
            dims[d],
            r
        )));
    }
    let mut laplacians = Vec::with_capacity(dn);
    for d in 0..dn {
        let g = graphs.get(d).and_then(|g| g.as_ref());
        match (methods[d], g) {
            (Method::Sidanet, None) => {
                return Err(SidaError::Validation(format!(
                    "view {} uses sidanet but has no graph",
                    d + 1
                )))
            }
            (Method::Covariate, _) if ds.roles()[d] != ViewRole::Covariate && d + 1 != dn => {
                return Err(SidaError::Validation(format!(
                    "only the last view may be a covariate view (view {})",
                    d + 1
                )))
            }
            _ => {}
        }
        if let Some(g) = g {
            if g.n_vertices() != dims[d] {
                return Err(SidaError::Dimension(format!(
                    "graph for view {} has {} vertices but the view has {} variables",
                    d + 1,
                    g.n_vertices(),
                    dims[d]
                )));
            }
        }
        laplacians.push(match (methods[d], g) {
            (Method::Sidanet, Some(g)) => Some(build_laplacian(g, opts.laplacian)),
            _ => None,
        });
    }
    let ridges = vec![opts.ridge; dn];
    let scatter = build_scatter_set(ds, &ridges)?;
    Ok(Prepared {
        ds,
        scatter,
        laplacians,
        methods: methods.to_vec(),
        r,
    })
}

/// Fits a model with per-view radii `taus`.
pub fn fit(
    ds: &MultiViewDataset,
    graphs: &[Option<ViewGraph>],
    methods: &[Method],
    taus: &[f64],
    opts: &FitOptions,
) -> Result<DiscriminantModel> {
    let prep = prepare(ds, graphs, methods, opts)?;
    fit_prepared(&prep, taus, opts)
}

/// The outer loop on a prepared dataset.
pub fn fit_prepared(prep: &Prepared, taus: &[f64], opts: &FitOptions) -> Result<DiscriminantModel> {
    let ds = prep.ds;
    let dn = ds.n_views();
    let r = prep.r;
    if taus.len() != dn {
        return Err(SidaError::Validation(format!("{} tau values for {} views", taus.len(), dn)));
    }
    if let Some(t) = taus.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        return Err(SidaError::Validation(format!("invalid tau {t}")));
    }
    let taus: Vec<f64> = (0..dn)
        .map(|d| if prep.methods[d] == Method::Covariate { 0.0 } else { taus[d] })
        .collect();
    let scat = &prep.scatter;
    let mut gammas = initial_gammas(scat, r, opts.init)?;
    let mut lambdas = vec![Array1::<f64>::zeros(r); dn];
    let mut warm: Vec<Option<AdmmState>> = vec![None; dn];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_outer {
        iterations += 1;
        let mut change = 0.0f64;
        for d in 0..dn {
            let eig = view_eigen(scat, d, &gammas, opts.rho, r)?;
            let f = coefficient_factor(scat, d, &gammas, opts.rho);
            let target = coefficient_times(f.view(), eig.gamma.view());
            let new = match (prep.methods[d], &prep.laplacians[d]) {
                (Method::Covariate, _) => eig.gamma.clone(),
                (Method::Sidanet, Some(lap)) => {
                    let sub = SparseSubproblem {
                        d_mat: target.view(),
                        lambdas: eig.lambda.view(),
                        tau: taus[d],
                        eta: opts.eta,
                        laplacian: Some(lap),
                    };
                    {
                    let s = solve_view_sidanet_warm(&sub, &opts.admm, warm[d].as_ref())?;
                    warm[d] = s.state;
                    s.gamma
                }
                }
                _ => solve_view_sida(target.view(), eig.lambda.view(), taus[d]),
            };
            change = change.max(aligned_distance(new.view(), gammas[d].view()));
            gammas[d] = new;
            lambdas[d] = eig.lambda;
        }
        if change < opts.eps {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "outer loop stopped after {} iterations without reaching tolerance {}",
            iterations,
            opts.eps
        );
    }

    let penalized_zero = (0..dn)
        .filter(|&d| prep.methods[d] != Method::Covariate)
        .all(|d| gammas[d].iter().all(|&v| v == 0.0));
    let any_penalized = prep.methods.iter().any(|&m| m != Method::Covariate);
    if any_penalized && penalized_zero {
        return Err(SidaError::TauTooLarge);
    }

    let mut views = Vec::with_capacity(dn);
    let mut all_scores = Vec::with_capacity(dn);
    for d in 0..dn {
        let support = selected_rows(gammas[d].view());
        let mut g = gram_schmidt(gammas[d].view());
        // orthonormalization must not resurrect rows outside the support
        let mut keep = vec![false; g.nrows()];
        for &i in &support {
            keep[i] = true;
        }
        for (i, mut row) in g.axis_iter_mut(Axis(0)).enumerate() {
            if !keep[i] {
                row.fill(0.0);
            }
        }
        let all_zero = g.iter().all(|&v| v == 0.0);
        if all_zero {
            log::warn!("view {} has an all-zero discriminant matrix", d + 1);
        }
        let scores = crate::linalg::matmul(ds.view(d), g.view());
        let centroids = class_centroids(scores.view(), ds.labels(), ds.n_classes());
        all_scores.push(scores);
        views.push(ViewModel {
            names: ds.names().get(d).cloned().unwrap_or_default(),
            gamma: g,
            lambdas: lambdas[d].clone(),
            selected: support,
            all_zero,
            centroids,
        });
    }
    let score_views: Vec<_> = all_scores.iter().map(|s| s.view()).collect();
    let pooled = concatenate(Axis(1), &score_views).expect("scores share rows");
    let pooled_centroids = class_centroids(pooled.view(), ds.labels(), ds.n_classes());
    let ridge_values = (0..dn).map(|d| scat.view(d).gamma).collect();
    Ok(DiscriminantModel {
        config: ModelConfig {
            methods: prep.methods.clone(),
            taus,
            options: *opts,
            ridge_values,
            seed: None,
        },
        n_classes: ds.n_classes(),
        r,
        views,
        pooled_centroids,
        stats: ds.stats().map(|s| s.to_vec()).unwrap_or_default(),
        iterations,
        converged,
    })
}

/// K x m matrix of per-class mean rows; classes without samples get zeros.
pub fn class_centroids(scores: ArrayView2<f64>, labels: &[usize], n_classes: usize) -> Array2<f64> {
    let mut out = Array2::zeros((n_classes, scores.ncols()));
    let mut counts = vec![0usize; n_classes];
    for (row, &l) in scores.axis_iter(Axis(0)).zip(labels) {
        counts[l - 1] += 1;
        let mut dst = out.row_mut(l - 1);
        dst += &row;
    }
    for (k, &c) in counts.iter().enumerate() {
        if c > 0 {
            out.row_mut(k).mapv_inplace(|v| v / c as f64);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gev::{solve_gev, GevOptions};
    use crate::linalg::{max_abs_row_sum, max_principal_angle};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn toy(seed: u64, n: usize, dims: &[usize], k: usize, shift: f64) -> MultiViewDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..n).map(|i| i % k + 1).collect();
        let views = dims
            .iter()
            .map(|&p| {
                let mut x = Array2::from_shape_fn((n, p), |_| rng.sample::<f64, _>(StandardNormal));
                for i in 0..n {
                    let c = labels[i] as f64;
                    x[[i, 0]] += shift * c;
                    x[[i, 1]] -= shift * (c - 1.5).abs();
                }
                x
            })
            .collect();
        MultiViewDataset::new(views, labels, vec![ViewRole::Penalized; dims.len()])
            .unwrap()
            .standardize()
    }

    #[test]
    fn zero_tau_recovers_the_nonsparse_solution() {
        let ds = toy(1, 60, &[8, 6], 3, 1.0);
        let opts = FitOptions::default();
        let methods = vec![Method::Sida; 2];
        let model = fit(&ds, &[], &methods, &[0.0, 0.0], &opts).unwrap();
        let prep = prepare(&ds, &[], &methods, &opts).unwrap();
        let sol = solve_gev(&prep.scatter, &GevOptions::new(0.5, 2)).unwrap();
        for d in 0..2 {
            let angle = max_principal_angle(model.gamma(d), sol.gammas[d].view()).unwrap();
            assert!(angle < 1e-6, "angle {angle}");
        }
    }

    #[test]
    fn huge_tau_is_rejected() {
        let ds = toy(2, 40, &[5, 5], 2, 1.0);
        let methods = vec![Method::Sida; 2];
        let opts = FitOptions::default();
        let prep = prepare(&ds, &[], &methods, &opts).unwrap();
        let sol = solve_gev(&prep.scatter, &GevOptions::new(0.5, 1)).unwrap();
        let taus: Vec<f64> = (0..2)
            .map(|d| {
                let c = crate::gev::assemble_coefficient(&prep.scatter, d, &sol.gammas, 0.5);
                max_abs_row_sum(c.view())
            })
            .collect();
        assert!(matches!(
            fit_prepared(&prep, &taus, &opts),
            Err(SidaError::TauTooLarge)
        ));
    }

    #[test]
    fn covariate_view_stays_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base = toy(3, 60, &[10], 2, 1.5);
        let cov = Array2::from_shape_fn((60, 3), |_| rng.sample::<f64, _>(StandardNormal));
        let ds = MultiViewDataset::new(
            vec![base.view(0).to_owned(), cov],
            base.labels().to_vec(),
            vec![ViewRole::Penalized, ViewRole::Covariate],
        )
        .unwrap()
        .standardize();
        let methods = default_methods(&ds, &[]);
        assert_eq!(methods, vec![Method::Sida, Method::Covariate]);
        let model = fit(&ds, &[], &methods, &[0.3, 5.0], &FitOptions::default()).unwrap();
        assert_eq!(model.config.taus[1], 0.0);
        assert_eq!(model.views[1].selected.len(), 3);
        assert!(model.views[0].selected.len() < 10);
    }

    #[test]
    fn model_columns_are_orthonormal_and_json_round_trips() {
        let ds = toy(4, 90, &[12, 9], 3, 1.0);
        let methods = vec![Method::Sida; 2];
        let model = fit(&ds, &[], &methods, &[0.05, 0.05], &FitOptions::default()).unwrap();
        for d in 0..2 {
            let g = model.gamma(d);
            let gram = g.t().dot(&g);
            for i in 0..2 {
                for j in 0..2 {
                    let norm_i = gram[[i, i]];
                    if norm_i == 0.0 {
                        continue;
                    }
                    let e = if i == j { 1.0 } else { 0.0 };
                    if gram[[j, j]] != 0.0 {
                        assert!((gram[[i, j]] - e).abs() < 1e-10);
                    }
                }
            }
        }
        let text = model.to_json().unwrap();
        let back = DiscriminantModel::from_json(&text).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn fits_are_bit_identical() {
        let ds = toy(5, 60, &[7, 7], 2, 1.0);
        let methods = vec![Method::Sida; 2];
        let a = fit(&ds, &[], &methods, &[0.1, 0.1], &FitOptions::default()).unwrap();
        let b = fit(&ds, &[], &methods, &[0.1, 0.1], &FitOptions::default()).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn sidanet_needs_a_graph() {
        let ds = toy(6, 40, &[5, 5], 2, 1.0);
        let err = fit(&ds, &[], &[Method::Sidanet, Method::Sida], &[0.1, 0.1], &FitOptions::default());
        assert!(matches!(err, Err(SidaError::Validation(_))));
    }

    #[test]
    fn unstandardized_input_is_rejected() {
        let ds = toy(7, 40, &[5, 5], 2, 1.0);
        let raw = MultiViewDataset::new(ds.views().to_vec(), ds.labels().to_vec(), ds.roles().to_vec()).unwrap();
        assert!(fit(&raw, &[], &[Method::Sida; 2], &[0.1, 0.1], &FitOptions::default()).is_err());
    }

    #[test]
    fn method_names_parse() {
        assert_eq!("SIDA".parse::<Method>().unwrap(), Method::Sida);
        assert_eq!("sidanet".parse::<Method>().unwrap(), Method::Sidanet);
        assert!("lasso".parse::<Method>().is_err());
    }
}
