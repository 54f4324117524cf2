//! `τ` grids, random/grid search and stratified K-fold cross-validation.

use std::fmt::Write as _;

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{fmt_f64, MultiViewDataset};
use crate::error::{Result, SidaError};
use crate::fit::{fit_prepared, prepare, FitOptions, Method, Prepared};
use crate::gev::{assemble_coefficient, solve_gev, GevOptions};
use crate::graph::ViewGraph;
use crate::linalg::max_abs_row_sum;
use crate::predict::classify_pooled_matrix;

/// Offsets added to the master seed for each internal random stream.
pub const FOLD_SEED_OFFSET: u64 = 1;
pub const SEARCH_SEED_OFFSET: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    Random,
    Grid,
}

/// Which norm sets `τ_max`: the coefficient matrix `C` itself, or the target
/// `C Γ̃` (the exact radius above which the sparse solution is zero).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundRule {
    Coefficient,
    #[default]
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    Linear,
    Log,
}

/// Search configuration. `None` counts and fractions take the defaults for the
/// number of penalized views: 8 points and 20% with two, 5 points and 15% with
/// more.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningSpec {
    pub mode: SearchMode,
    pub points_per_view: Option<usize>,
    pub random_fraction: Option<f64>,
    pub folds: usize,
    pub seed: u64,
    pub spacing: Spacing,
    #[serde(default)]
    pub bound: BoundRule,
}

impl Default for TuningSpec {
    fn default() -> Self {
        Self {
            mode: SearchMode::Random,
            points_per_view: None,
            random_fraction: None,
            folds: 5,
            seed: 0,
            spacing: Spacing::Linear,
            bound: BoundRule::Target,
        }
    }
}

impl TuningSpec {
    pub fn points(&self, n_penalized: usize) -> usize {
        self.points_per_view
            .unwrap_or(if n_penalized > 2 { 5 } else { 8 })
    }

    pub fn fraction(&self, n_penalized: usize) -> f64 {
        self.random_fraction
            .unwrap_or(if n_penalized > 2 { 0.15 } else { 0.20 })
    }

    pub fn validate(&self, n_penalized: usize) -> Result<()> {
        if self.points(n_penalized) < 2 {
            return Err(SidaError::Validation("need at least 2 grid points per view".into()));
        }
        let f = self.fraction(n_penalized);
        if !(f > 0.0 && f <= 1.0) {
            return Err(SidaError::Validation(format!("random fraction {f} outside (0, 1]")));
        }
        if self.folds < 2 {
            return Err(SidaError::Validation("need at least 2 folds".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauBounds {
    pub min: f64,
    pub max: f64,
}

/// `τ_max = ‖C‖_∞` and `τ_min = √(ln p / n) τ_max`, with `τ_min` pulled down to
/// `0.1 τ_max` when the formula would not leave a range.
pub fn tau_bounds(c: ArrayView2<f64>, p: usize, n: usize) -> TauBounds {
    bounds_from_max(max_abs_row_sum(c), p, n)
}

pub fn bounds_from_max(max: f64, p: usize, n: usize) -> TauBounds {
    let mut min = ((p as f64).ln() / n as f64).sqrt() * max;
    if max > 0.0 && min >= max {
        log::warn!("lower tau bound exceeds the upper one (ln p > n); using 0.1 * tau_max");
        min = 0.1 * max;
    }
    TauBounds { min, max }
}

/// Equally spaced (or log-spaced) grid on `[min, max]`; a degenerate range gives
/// a single point.
pub fn view_grid(b: TauBounds, points: usize, spacing: Spacing) -> Vec<f64> {
    if b.max <= b.min || points < 2 {
        return vec![b.max];
    }
    let last = (points - 1) as f64;
    (0..points)
        .map(|i| {
            let t = i as f64 / last;
            match spacing {
                Spacing::Log if b.min > 0.0 => (b.min.ln() + t * (b.max.ln() - b.min.ln())).exp(),
                _ => b.min + t * (b.max - b.min),
            }
        })
        .collect()
}

/// Cartesian product of the penalized views' grids in lexicographic order (the
/// first view varies slowest). Views with `None` are pinned at `τ = 0`. Random
/// mode keeps `⌈fraction · total⌉` tuples drawn without replacement, in
/// lexicographic order.
pub fn make_candidates(spec: &TuningSpec, grids: &[Option<Vec<f64>>]) -> Vec<Vec<f64>> {
    let mut all: Vec<Vec<f64>> = vec![Vec::new()];
    for g in grids {
        let choices = g.clone().unwrap_or_else(|| vec![0.0]);
        let mut next = Vec::with_capacity(all.len() * choices.len());
        for prefix in &all {
            for &c in &choices {
                let mut t = prefix.clone();
                t.push(c);
                next.push(t);
            }
        }
        all = next;
    }
    match spec.mode {
        SearchMode::Grid => all,
        SearchMode::Random => {
            let n_pen = grids.iter().filter(|g| g.is_some()).count();
            let frac = spec.fraction(n_pen);
            let total = all.len();
            let take = ((frac * total as f64).ceil() as usize).clamp(1, total);
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(SEARCH_SEED_OFFSET));
            let mut idx = rand::seq::index::sample(&mut rng, total, take).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| all[i].clone()).collect()
        }
    }
}

/// Fold id (`0..k`) for every sample: each class is shuffled and dealt
/// round-robin, so per-class fold sizes differ by at most one.
pub fn stratified_folds(labels: &[usize], n_classes: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0usize; labels.len()];
    for class in 1..=n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < k {
            return Err(SidaError::Validation(format!(
                "class {} has {} samples, fewer than the {} folds",
                class,
                members.len(),
                k
            )));
        }
        members.shuffle(&mut rng);
        for (pos, &i) in members.iter().enumerate() {
            fold[i] = pos % k;
        }
    }
    Ok(fold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub bounds: Vec<TauBounds>,
    pub candidates: Vec<Vec<f64>>,
    pub mean_errors: Vec<f64>,
    pub mean_nonzeros: Vec<Vec<f64>>,
    /// `[candidate][fold]`
    pub fold_errors: Vec<Vec<f64>>,
    /// `[candidate][fold][view]`
    pub fold_nonzeros: Vec<Vec<Vec<usize>>>,
    pub best_index: usize,
    pub best: Vec<f64>,
}

impl CvResult {
    /// Columns `tau_1..tau_D, fold, error, nonzeros_1..nonzeros_D`; folds are 1-based.
    pub fn to_csv(&self) -> String {
        let dn = self.bounds.len();
        let mut s = String::new();
        let taus: Vec<String> = (1..=dn).map(|d| format!("tau_{d}")).collect();
        let nz: Vec<String> = (1..=dn).map(|d| format!("nonzeros_{d}")).collect();
        let _ = writeln!(s, "{},fold,error,{}", taus.join(","), nz.join(","));
        for (c, cand) in self.candidates.iter().enumerate() {
            for (f, err) in self.fold_errors[c].iter().enumerate() {
                let t: Vec<String> = cand.iter().map(|&v| fmt_f64(v)).collect();
                let z: Vec<String> = self.fold_nonzeros[c][f].iter().map(|v| v.to_string()).collect();
                let _ = writeln!(s, "{},{},{},{}", t.join(","), f + 1, fmt_f64(*err), z.join(","));
            }
        }
        s
    }
}

/// Per-view `τ` bounds from the nonsparse solution on a prepared dataset.
pub fn bounds_for(prep: &Prepared, opts: &FitOptions, rule: BoundRule) -> Result<Vec<TauBounds>> {
    let sol = solve_gev(
        &prep.scatter,
        &GevOptions {
            init: opts.init,
            ..GevOptions::new(opts.rho, prep.r)
        },
    )?;
    let n = prep.ds.n_samples();
    Ok((0..prep.ds.n_views())
        .map(|d| {
            if prep.methods[d] == Method::Covariate {
                return TauBounds { min: 0.0, max: 0.0 };
            }
            let c = assemble_coefficient(&prep.scatter, d, &sol.gammas, opts.rho);
            let p = prep.scatter.dim(d);
            match rule {
                BoundRule::Coefficient => tau_bounds(c.view(), p, n),
                BoundRule::Target => bounds_from_max(max_abs_row_sum(c.dot(&sol.gammas[d]).view()), p, n),
            }
        })
        .collect())
}

/// Runs `f` on a pool of `workers` threads (0 = rayon default).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| SidaError::Validation(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Cross-validated choice of `τ`. Every (candidate, fold) pair is evaluated
/// independently and results are reduced by candidate index, so the outcome
/// does not depend on scheduling.
pub fn cross_validate(
    ds: &MultiViewDataset,
    graphs: &[Option<ViewGraph>],
    methods: &[Method],
    spec: &TuningSpec,
    opts: &FitOptions,
) -> Result<CvResult> {
    let n_pen = methods.iter().filter(|&&m| m != Method::Covariate).count();
    spec.validate(n_pen)?;
    let full = prepare(ds, graphs, methods, opts)?;
    let bounds = bounds_for(&full, opts, spec.bound)?;
    drop(full);
    let points = spec.points(n_pen);
    let grids: Vec<Option<Vec<f64>>> = (0..ds.n_views())
        .map(|d| {
            (methods[d] != Method::Covariate).then(|| view_grid(bounds[d], points, spec.spacing))
        })
        .collect();
    let candidates = make_candidates(spec, &grids);
    evaluate_candidates(ds, graphs, methods, spec, opts, bounds, candidates)
}

/// Cross-validates an explicit candidate list.
pub fn evaluate_candidates(
    ds: &MultiViewDataset,
    graphs: &[Option<ViewGraph>],
    methods: &[Method],
    spec: &TuningSpec,
    opts: &FitOptions,
    bounds: Vec<TauBounds>,
    candidates: Vec<Vec<f64>>,
) -> Result<CvResult> {
    if candidates.is_empty() {
        return Err(SidaError::Validation("no tau candidates".into()));
    }
    let k = spec.folds;
    let fold_of = stratified_folds(
        ds.labels(),
        ds.n_classes(),
        k,
        spec.seed.wrapping_add(FOLD_SEED_OFFSET),
    )?;
    let splits: Vec<(MultiViewDataset, MultiViewDataset)> = (0..k)
        .map(|f| {
            let train: Vec<usize> = (0..ds.n_samples()).filter(|&i| fold_of[i] != f).collect();
            let test: Vec<usize> = (0..ds.n_samples()).filter(|&i| fold_of[i] == f).collect();
            (ds.subset(&train), ds.subset(&test))
        })
        .collect();
    for (f, (train, test)) in splits.iter().enumerate() {
        for (counts, _) in [(train.class_counts(), 0), (test.class_counts(), 1)] {
            if let Some(c) = counts.iter().position(|&c| c == 0) {
                return Err(SidaError::Stratification { fold: f + 1, class: c + 1 });
            }
        }
    }
    let preps: Vec<Prepared> = splits
        .par_iter()
        .map(|(train, _)| prepare(train, graphs, methods, opts))
        .collect::<Result<Vec<_>>>()?;
    let tasks: Vec<(usize, usize)> = (0..candidates.len())
        .flat_map(|c| (0..k).map(move |f| (c, f)))
        .collect();
    let outcomes: Vec<(f64, Vec<usize>)> = tasks
        .par_iter()
        .map(|&(c, f)| {
            let test = &splits[f].1;
            match fit_prepared(&preps[f], &candidates[c], opts) {
                Ok(model) => {
                    let pred = classify_pooled_matrix(&model, test.views())?;
                    let err = crate::predict::error_rate(&pred, test.labels());
                    let nz = model.views.iter().map(|v| v.selected.len()).collect();
                    Ok((err, nz))
                }
                // an empty model sends every sample to class 1
                Err(SidaError::TauTooLarge) => {
                    let wrong = test.labels().iter().filter(|&&l| l != 1).count();
                    Ok((wrong as f64 / test.n_samples() as f64, vec![0; ds.n_views()]))
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut fold_errors = vec![vec![0.0; k]; candidates.len()];
    let mut fold_nonzeros = vec![vec![Vec::new(); k]; candidates.len()];
    for (&(c, f), (err, nz)) in tasks.iter().zip(outcomes) {
        fold_errors[c][f] = err;
        fold_nonzeros[c][f] = nz;
    }
    let mean_errors: Vec<f64> = fold_errors
        .iter()
        .map(|e| e.iter().sum::<f64>() / k as f64)
        .collect();
    let mean_nonzeros: Vec<Vec<f64>> = fold_nonzeros
        .iter()
        .map(|per_fold| {
            (0..ds.n_views())
                .map(|d| per_fold.iter().map(|z| z[d] as f64).sum::<f64>() / k as f64)
                .collect()
        })
        .collect();
    // a fold fit that empties a penalized view has dropped that view entirely
    let collapsed: Vec<bool> = fold_nonzeros
        .iter()
        .map(|per_fold| {
            per_fold
                .iter()
                .any(|z| (0..ds.n_views()).any(|d| methods[d] != Method::Covariate && z[d] == 0))
        })
        .collect();
    // The grid reaches the full-data zero radius, so the winner is refitted on
    // all samples and passed over if a penalized view comes back empty.
    let order = rank_candidates(&candidates, &mean_errors, &collapsed);
    let full = prepare(ds, graphs, methods, opts)?;
    let best_index = order
        .iter()
        .copied()
        .find(|&c| match fit_prepared(&full, &candidates[c], opts) {
            Ok(m) => !m
                .views
                .iter()
                .zip(methods)
                .any(|(v, &meth)| meth != Method::Covariate && v.all_zero),
            Err(_) => false,
        })
        .unwrap_or_else(|| {
            log::warn!("every candidate empties a view on the full data; keeping the cross-validation winner");
            order[0]
        });
    Ok(CvResult {
        bounds,
        best: candidates[best_index].clone(),
        candidates,
        mean_errors,
        mean_nonzeros,
        fold_errors,
        fold_nonzeros,
        best_index,
    })
}

/// Candidate indices from best to worst: smaller mean error (compared after
/// rounding to 1e-10), then candidates that kept every penalized view nonzero
/// (`collapsed[i] == false`), then larger `τ` sum, then the lexicographically
/// smaller tuple.
pub fn rank_candidates(candidates: &[Vec<f64>], errors: &[f64], collapsed: &[bool]) -> Vec<usize> {
    let key = |e: f64| (e * 1e10).round() as i64;
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&i, &j| {
        key(errors[i])
            .cmp(&key(errors[j]))
            .then(collapsed[i].cmp(&collapsed[j]))
            .then_with(|| {
                let si: f64 = candidates[i].iter().sum();
                let sj: f64 = candidates[j].iter().sum();
                sj.total_cmp(&si)
            })
            .then_with(|| {
                candidates[i]
                    .iter()
                    .zip(&candidates[j])
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
    });
    order
}

pub fn select_best(candidates: &[Vec<f64>], errors: &[f64], collapsed: &[bool]) -> usize {
    rank_candidates(candidates, errors, collapsed)[0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn bounds_of_identity() {
        let b = tau_bounds(Array2::<f64>::eye(5).view(), 5, 100);
        assert_eq!(b.max, 1.0);
        assert!((b.min - 0.12686362411795196).abs() < 1e-12, "{}", b.min);
    }

    #[test]
    fn bounds_at_scale() {
        let b = bounds_from_max(10.0, 2000, 240);
        assert!((b.min - 1.7796186927192768).abs() < 1e-9, "{}", b.min);
    }

    #[test]
    fn zero_coefficient_gives_single_point_grid() {
        let b = tau_bounds(Array2::<f64>::zeros((3, 3)).view(), 3, 10);
        assert_eq!((b.min, b.max), (0.0, 0.0));
        assert_eq!(view_grid(b, 8, Spacing::Linear), vec![0.0]);
    }

    #[test]
    fn lower_bound_is_clamped_when_p_is_huge() {
        let b = bounds_from_max(2.0, 100_000, 5);
        assert_eq!(b.min, 0.2);
    }

    #[test]
    fn grids_are_spaced_as_requested() {
        let b = TauBounds { min: 1.0, max: 4.0 };
        assert_eq!(view_grid(b, 4, Spacing::Linear), vec![1.0, 2.0, 3.0, 4.0]);
        let g = view_grid(TauBounds { min: 1.0, max: 100.0 }, 3, Spacing::Log);
        assert!((g[1] - 10.0).abs() < 1e-12);
    }

    fn grids(points: usize, views: usize) -> Vec<Option<Vec<f64>>> {
        (0..views)
            .map(|_| Some((0..points).map(|i| i as f64).collect()))
            .collect()
    }

    #[test]
    fn random_search_counts() {
        let spec = TuningSpec::default();
        assert_eq!(make_candidates(&spec, &grids(spec.points(2), 2)).len(), 13);
        assert_eq!(make_candidates(&spec, &grids(spec.points(3), 3)).len(), 19);
    }

    #[test]
    fn grid_mode_is_the_full_lexicographic_product() {
        let spec = TuningSpec {
            mode: SearchMode::Grid,
            ..TuningSpec::default()
        };
        let c = make_candidates(&spec, &grids(3, 2));
        assert_eq!(c.len(), 9);
        assert_eq!(c[0], vec![0.0, 0.0]);
        assert_eq!(c[1], vec![0.0, 1.0]);
        assert_eq!(c[8], vec![2.0, 2.0]);
        let full = TuningSpec {
            random_fraction: Some(1.0),
            ..TuningSpec::default()
        };
        assert_eq!(make_candidates(&full, &grids(3, 2)), c);
    }

    #[test]
    fn covariate_views_are_pinned() {
        let spec = TuningSpec {
            mode: SearchMode::Grid,
            ..TuningSpec::default()
        };
        let mut g = grids(2, 2);
        g.push(None);
        let c = make_candidates(&spec, &g);
        assert_eq!(c.len(), 4);
        assert!(c.iter().all(|t| t[2] == 0.0));
    }

    #[test]
    fn random_search_is_seeded() {
        let a = TuningSpec { seed: 4, ..TuningSpec::default() };
        let b = TuningSpec { seed: 5, ..TuningSpec::default() };
        let g = grids(8, 2);
        assert_eq!(make_candidates(&a, &g), make_candidates(&a, &g));
        assert_ne!(make_candidates(&a, &g), make_candidates(&b, &g));
    }

    #[test]
    fn stratified_fold_sizes() {
        let labels: Vec<usize> = (0..53).map(|i| if i < 17 { 1 } else if i < 40 { 2 } else { 3 }).collect();
        let folds = stratified_folds(&labels, 3, 5, 9).unwrap();
        for class in 1..=3 {
            let mut sizes = [0usize; 5];
            for i in 0..53 {
                if labels[i] == class {
                    sizes[folds[i]] += 1;
                }
            }
            let (mn, mx) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            assert!(mx - mn <= 1);
        }
        assert!(stratified_folds(&labels, 3, 20, 9).is_err());
    }

    #[test]
    fn tie_break_prefers_sparser_then_lexicographic() {
        let c = vec![vec![1.0, 1.0], vec![2.0, 1.0], vec![1.0, 2.0], vec![0.5, 0.5]];
        let ok = [false; 4];
        assert_eq!(select_best(&c, &[0.1, 0.1, 0.1, 0.05], &ok), 3);
        assert_eq!(select_best(&c, &[0.1, 0.1, 0.1, 0.2], &ok), 2);
        assert_eq!(select_best(&c[..1], &[0.3], &ok[..1]), 0);
        assert_eq!(select_best(&c, &[0.1, 0.1, 0.1, 0.2], &[false, false, true, false]), 1);
    }
}
