//! Discriminant scores, nearest-centroid classification, selection and
//! association metrics, and stability selection.

use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::MultiViewDataset;
use crate::error::{Result, SidaError};
use crate::fit::{fit, DiscriminantModel, FitOptions, Method};
use crate::graph::ViewGraph;
use crate::linalg::{frobenius, matmul};
use crate::tuning::{cross_validate, stratified_folds, TuningSpec};

/// `U = X Γ̂_d`. `x` must already be standardized with the training statistics.
pub fn scores(x: ArrayView2<f64>, model: &DiscriminantModel, d: usize) -> Result<Array2<f64>> {
    let g = model.gamma(d);
    if x.ncols() != g.nrows() {
        return Err(SidaError::Dimension(format!(
            "view {} has {} columns but the model expects {}",
            d + 1,
            x.ncols(),
            g.nrows()
        )));
    }
    Ok(matmul(x, g))
}

/// Index (1-based) of the nearest row of `centroids`; ties go to the smallest.
fn nearest(v: ArrayView1<f64>, centroids: ArrayView2<f64>) -> usize {
    let mut best = (f64::INFINITY, 1);
    for (k, c) in centroids.axis_iter(Axis(0)).enumerate() {
        let dist: f64 = v.iter().zip(c.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        if dist < best.0 {
            best = (dist, k + 1);
        }
    }
    best.1
}

/// Pooled rule: concatenate every view's projection and pick the nearest pooled
/// centroid. All views must be present.
pub fn classify_pooled(z: &[ArrayView1<f64>], model: &DiscriminantModel) -> Result<usize> {
    if z.len() != model.n_views() {
        return Err(SidaError::Validation(format!(
            "pooled classification needs all {} views but got {}; use separate classification",
            model.n_views(),
            z.len()
        )));
    }
    let mut v = Vec::with_capacity(model.n_views() * model.r);
    for (d, zd) in z.iter().enumerate() {
        let g = model.gamma(d);
        if zd.len() != g.nrows() {
            return Err(SidaError::Dimension(format!(
                "view {} sample has {} values, model expects {}",
                d + 1,
                zd.len(),
                g.nrows()
            )));
        }
        v.extend(g.t().dot(zd).iter());
    }
    Ok(nearest(Array1::from(v).view(), model.pooled_centroids.view()))
}

/// Separate rule for a single view.
pub fn classify_separate(zd: ArrayView1<f64>, model: &DiscriminantModel, d: usize) -> Result<usize> {
    if d >= model.n_views() {
        return Err(SidaError::Validation(format!("model has no view {}", d + 1)));
    }
    let g = model.gamma(d);
    if zd.len() != g.nrows() {
        return Err(SidaError::Dimension(format!(
            "view {} sample has {} values, model expects {}",
            d + 1,
            zd.len(),
            g.nrows()
        )));
    }
    Ok(nearest(g.t().dot(&zd).view(), model.views[d].centroids.view()))
}

/// Pooled labels for every row of standardized views.
pub fn classify_pooled_matrix(model: &DiscriminantModel, views: &[Array2<f64>]) -> Result<Vec<usize>> {
    if views.len() != model.n_views() {
        return Err(SidaError::Validation(format!(
            "pooled classification needs all {} views but got {}",
            model.n_views(),
            views.len()
        )));
    }
    let s = views
        .iter()
        .enumerate()
        .map(|(d, x)| scores(x.view(), model, d))
        .collect::<Result<Vec<_>>>()?;
    let sv: Vec<_> = s.iter().map(|m| m.view()).collect();
    let pooled = concatenate(Axis(1), &sv).expect("views share rows");
    Ok(pooled
        .axis_iter(Axis(0))
        .map(|row| nearest(row, model.pooled_centroids.view()))
        .collect())
}

/// Separate-rule labels for every row of one standardized view.
pub fn classify_separate_matrix(model: &DiscriminantModel, x: ArrayView2<f64>, d: usize) -> Result<Vec<usize>> {
    if d >= model.n_views() {
        return Err(SidaError::Validation(format!("model has no view {}", d + 1)));
    }
    let s = scores(x, model, d)?;
    Ok(s.axis_iter(Axis(0))
        .map(|row| nearest(row, model.views[d].centroids.view()))
        .collect())
}

pub fn error_rate(pred: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let wrong = pred.iter().zip(truth).filter(|(a, b)| a != b).count();
    wrong as f64 / truth.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub tpr: f64,
    pub fpr: f64,
    pub f1: f64,
}

/// TPR = TP/|truth|, FPR = FP/(p - |truth|), F1 = 2TP/(2TP + FP + FN), each 0
/// when its denominator is 0. Indices are 0-based.
pub fn selection_metrics(selected: &[usize], truth: &[usize], p: usize) -> SelectionMetrics {
    let mut is_true = vec![false; p];
    for &t in truth {
        if t < p {
            is_true[t] = true;
        }
    }
    let mut is_sel = vec![false; p];
    for &s in selected {
        if s < p {
            is_sel[s] = true;
        }
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for i in 0..p {
        match (is_sel[i], is_true[i]) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    SelectionMetrics {
        tp,
        fp,
        fn_,
        tn,
        tpr: ratio(tp, tp + fn_),
        fpr: ratio(fp, fp + tn),
        f1: ratio(2 * tp, 2 * tp + fp + fn_),
    }
}

/// RV coefficient `tr(Σ_XY Σ_YX) / √(tr(Σ_XX²) tr(Σ_YY²))` of column-centered
/// inputs (centered again here); `0/0` gives 0.
pub fn rv_coefficient(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<f64> {
    if x.nrows() != y.nrows() {
        return Err(SidaError::Dimension(format!(
            "RV of {} rows against {} rows",
            x.nrows(),
            y.nrows()
        )));
    }
    let center = |m: ArrayView2<f64>| -> Array2<f64> {
        match m.mean_axis(Axis(0)) {
            Some(mu) => &m - &mu,
            None => m.to_owned(),
        }
    };
    let xc = center(x);
    let yc = center(y);
    let sxy = frobenius(xc.t().dot(&yc).view());
    let sxx = frobenius(xc.t().dot(&xc).view());
    let syy = frobenius(yc.t().dot(&yc).view());
    let den = sxx * syy;
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok(((sxy * sxy) / den).clamp(0.0, 1.0))
}

/// Mean pairwise RV of the projected (standardized) test views.
pub fn estimated_correlation(model: &DiscriminantModel, views: &[Array2<f64>]) -> Result<f64> {
    let dn = views.len();
    if dn < 2 || dn != model.n_views() {
        return Err(SidaError::Validation(format!(
            "correlation needs all {} (at least two) views, got {}",
            model.n_views(),
            dn
        )));
    }
    let proj = views
        .iter()
        .enumerate()
        .map(|(d, x)| scores(x.view(), model, d))
        .collect::<Result<Vec<_>>>()?;
    if proj.iter().all(|p| p.iter().all(|&v| v == 0.0)) {
        log::warn!("all projections are zero; reporting correlation 0");
        return Ok(0.0);
    }
    let mut total = 0.0;
    for d in 0..dn {
        for j in d + 1..dn {
            total += rv_coefficient(proj[d].view(), proj[j].view())?;
        }
    }
    Ok(2.0 * total / (dn * (dn - 1)) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewEval {
    pub selected: usize,
    pub separate_error: f64,
    pub selection: Option<SelectionMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_samples: usize,
    pub error_rate: f64,
    pub rho_hat: f64,
    pub views: Vec<ViewEval>,
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "samples      {}\nerror rate   {:.4}\nrho_hat      {:.4}\n\nview  selected  sep_error  TPR     FPR     F1\n",
            self.n_samples, self.error_rate, self.rho_hat
        );
        for (d, v) in self.views.iter().enumerate() {
            let (tpr, fpr, f1) = match &v.selection {
                Some(m) => (format!("{:.4}", m.tpr), format!("{:.4}", m.fpr), format!("{:.4}", m.f1)),
                None => ("-".into(), "-".into(), "-".into()),
            };
            s.push_str(&format!(
                "{:<5} {:<9} {:<10.4} {:<7} {:<7} {}\n",
                d + 1,
                v.selected,
                v.separate_error,
                tpr,
                fpr,
                f1
            ));
        }
        s
    }
}

/// Error, correlation and (when `truth` is given, 0-based per view) selection
/// metrics of `model` on a dataset already standardized with its statistics.
pub fn evaluate(model: &DiscriminantModel, ds: &MultiViewDataset, truth: Option<&[Vec<usize>]>) -> Result<EvalReport> {
    let pred = classify_pooled_matrix(model, ds.views())?;
    let error = error_rate(&pred, ds.labels());
    let rho_hat = if ds.n_views() >= 2 {
        estimated_correlation(model, ds.views())?
    } else {
        0.0
    };
    let views = (0..ds.n_views())
        .map(|d| {
            let sep = classify_separate_matrix(model, ds.view(d), d)?;
            let p = model.gamma(d).nrows();
            Ok(ViewEval {
                selected: model.views[d].selected.len(),
                separate_error: error_rate(&sep, ds.labels()),
                selection: truth
                    .and_then(|t| t.get(d))
                    .map(|t| selection_metrics(&model.views[d].selected, t, p)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        n_samples: ds.n_samples(),
        error_rate: error,
        rho_hat,
        views,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityOptions {
    pub reps: usize,
    pub freq_threshold: f64,
    pub effect_percentile: f64,
    pub seed: u64,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        Self {
            reps: 20,
            freq_threshold: 0.6,
            effect_percentile: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StableVariable {
    /// 0-based.
    pub index: usize,
    pub frequency: f64,
    pub mean_effect: f64,
}

/// Per-repetition record: selected rows and their effect (row ℓ2 norm / r).
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRun {
    pub selected: Vec<Vec<(usize, f64)>>,
}

/// Seed of repetition `rep`.
pub fn repetition_seed(master: u64, rep: usize) -> u64 {
    master.wrapping_add(1000).wrapping_add(rep as u64)
}

/// Stability selection: each repetition splits the data 50/50 by class, tunes
/// `τ` by cross-validation on one half and fits there. Variables kept are those
/// selected in at least `freq_threshold · reps` runs whose mean effect over the
/// runs selecting them ranks within the top `effect_percentile` of the view.
pub fn stability_selection(
    ds: &MultiViewDataset,
    graphs: &[Option<ViewGraph>],
    methods: &[Method],
    spec: &TuningSpec,
    opts: &FitOptions,
    stab: &StabilityOptions,
) -> Result<Vec<Vec<StableVariable>>> {
    if stab.reps < 2 {
        return Err(SidaError::Validation("stability selection needs at least 2 repetitions".into()));
    }
    if !(stab.freq_threshold > 0.0 && stab.freq_threshold <= 1.0)
        || !(stab.effect_percentile > 0.0 && stab.effect_percentile <= 1.0)
    {
        return Err(SidaError::Validation("thresholds must lie in (0, 1]".into()));
    }
    let runs = (0..stab.reps)
        .into_par_iter()
        .map(|rep| {
            let seed = repetition_seed(stab.seed, rep);
            let half = stratified_folds(ds.labels(), ds.n_classes(), 2, seed)?;
            let rows: Vec<usize> = (0..ds.n_samples()).filter(|&i| half[i] == 0).collect();
            let train = ds.subset(&rows);
            let rep_spec = TuningSpec { seed, ..*spec };
            let cv = cross_validate(&train, graphs, methods, &rep_spec, opts)?;
            let model = fit(&train, graphs, methods, &cv.best, opts)?;
            Ok(run_from_model(&model))
        })
        .collect::<Result<Vec<_>>>()?;
    let dims = ds.dims();
    Ok(aggregate_runs(&runs, &dims, stab))
}

pub fn run_from_model(model: &DiscriminantModel) -> SelectionRun {
    SelectionRun {
        selected: model
            .views
            .iter()
            .map(|v| {
                v.selected
                    .iter()
                    .map(|&i| {
                        let row = v.gamma.row(i);
                        (i, row.dot(&row).sqrt() / model.r as f64)
                    })
                    .collect()
            })
            .collect(),
    }
}

/// Frequency and effect filter over recorded runs.
pub fn aggregate_runs(runs: &[SelectionRun], dims: &[usize], stab: &StabilityOptions) -> Vec<Vec<StableVariable>> {
    let reps = runs.len() as f64;
    dims.iter()
        .enumerate()
        .map(|(d, &p)| {
            let mut count = vec![0usize; p];
            let mut effect = vec![0.0f64; p];
            for run in runs {
                for &(i, e) in &run.selected[d] {
                    count[i] += 1;
                    effect[i] += e;
                }
            }
            let mean: Vec<f64> = (0..p)
                .map(|i| if count[i] > 0 { effect[i] / count[i] as f64 } else { 0.0 })
                .collect();
            let top = ((stab.effect_percentile * p as f64).ceil() as usize).clamp(1, p);
            let mut sorted = mean.clone();
            sorted.sort_by(|a, b| b.total_cmp(a));
            let cutoff = sorted[top - 1];
            (0..p)
                .filter(|&i| {
                    count[i] > 0
                        && count[i] as f64 >= stab.freq_threshold * reps - 1e-9
                        && mean[i] >= cutoff
                        && mean[i] > 0.0
                })
                .map(|i| StableVariable {
                    index: i,
                    frequency: count[i] as f64 / reps,
                    mean_effect: mean[i],
                })
                .collect()
        })
        .collect()
}
