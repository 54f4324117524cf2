//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and a
//! summary. Failures are reported, not fatal, unless SIDA_ACCEPTANCE_STRICT=1.
//! Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test -p sida-cli --test acceptance -- 4 5`.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use sida::fit::{default_methods, fit, FitOptions, Method};
use sida::gev::{solve_gev, GevOptions};
use sida::graph::{build_normalized_laplacian, Edge, ViewGraph};
use sida::linalg::{gram_schmidt, max_principal_angle, sym_eigen};
use sida::predict::{evaluate, rv_coefficient, EvalReport};
use sida::scatter::{build_scatter_set, Ridge, ScatterSet};
use sida::simgen::{generate, Scenario, ScenarioSpec};
use sida::sparse::{
    constraint_violation, selected_rows, sidanet_objective, solve_row_sida, solve_view_sida, solve_view_sidanet,
    AdmmOptions, SparseSubproblem,
};
use sida::tuning::{cross_validate, TuningSpec};
use sida::{MultiViewDataset, ViewRole};

type Check = Result<String, String>;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn normal(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| rng.sample::<f64, _>(StandardNormal))
}

/// simulate -> standardize -> random-search CV -> fit -> evaluate on the test draw.
fn pipeline(spec: &ScenarioSpec, methods: Option<Vec<Method>>, use_graphs: bool) -> Result<EvalReport, String> {
    let g = generate(spec).map_err(|e| e.to_string())?;
    let train = g.train.standardize();
    let graphs = if use_graphs { g.graphs.clone() } else { vec![None; g.graphs.len()] };
    let methods = methods.unwrap_or_else(|| default_methods(&train, &graphs));
    let tspec = TuningSpec {
        seed: spec.seed,
        ..TuningSpec::default()
    };
    let opts = FitOptions::default();
    let cv = cross_validate(&train, &graphs, &methods, &tspec, &opts).map_err(|e| e.to_string())?;
    let model = fit(&train, &graphs, &methods, &cv.best, &opts).map_err(|e| e.to_string())?;
    let test = g.test.standardize_with(&model.stats).map_err(|e| e.to_string())?;
    evaluate(&model, &test, Some(&g.truth)).map_err(|e| e.to_string())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sel_mean(reps: &[EvalReport], f: impl Fn(&sida::predict::SelectionMetrics) -> f64) -> f64 {
    let vals: Vec<f64> = reps
        .iter()
        .flat_map(|r| r.views.iter().map(|v| f(v.selection.as_ref().expect("truth given"))))
        .collect();
    mean(&vals)
}

fn s1_reports(setting: u8) -> Result<Vec<EvalReport>, String> {
    SEEDS
        .iter()
        .map(|&seed| {
            let spec = ScenarioSpec::new(Scenario::S1, setting, seed)
                .map_err(|e| e.to_string())?
                .with_dims(vec![300, 300]);
            pipeline(&spec, None, false)
        })
        .collect()
}

fn criterion_1() -> Check {
    let reps = s1_reports(1)?;
    let err = mean(&reps.iter().map(|r| r.error_rate).collect::<Vec<_>>());
    let rho = mean(&reps.iter().map(|r| r.rho_hat).collect::<Vec<_>>());
    let tpr = sel_mean(&reps, |m| m.tpr);
    let fpr = sel_mean(&reps, |m| m.fpr);
    let msg = format!("error {:.4}, TPR {:.4}, FPR {:.4}, rho_hat {:.4}", err, tpr, fpr, rho);
    if err <= 0.02 && tpr >= 0.95 && fpr <= 0.02 && rho >= 0.9 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_2() -> Check {
    let errs: Vec<f64> = (1..=3)
        .map(|s| s1_reports(s).map(|r| mean(&r.iter().map(|x| x.error_rate).collect::<Vec<_>>())))
        .collect::<Result<_, _>>()?;
    let msg = format!(
        "mean test error setting 1 {:.4}, setting 2 {:.4}, setting 3 {:.4}",
        errs[0], errs[1], errs[2]
    );
    if errs[2] > errs[1] && errs[1] > errs[0] {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_3() -> Check {
    let mut net = Vec::new();
    let mut fpr_wins = 0;
    let mut detail = Vec::new();
    for &seed in &SEEDS {
        let spec = ScenarioSpec::new(Scenario::Net1, 1, seed)
            .map_err(|e| e.to_string())?
            .with_dims(vec![120; 3]);
        let a = pipeline(&spec, Some(vec![Method::Sidanet; 3]), true)?;
        let b = pipeline(&spec, Some(vec![Method::Sida; 3]), false)?;
        let fa = sel_mean(std::slice::from_ref(&a), |m| m.fpr);
        let fb = sel_mean(std::slice::from_ref(&b), |m| m.fpr);
        if fa <= fb {
            fpr_wins += 1;
        }
        detail.push(format!("seed {seed}: FPR {:.4} vs {:.4}", fa, fb));
        net.push(a);
    }
    let err = mean(&net.iter().map(|r| r.error_rate).collect::<Vec<_>>());
    let min_view_tpr = (0..3)
        .map(|d| mean(&net.iter().map(|r| r.views[d].selection.as_ref().unwrap().tpr).collect::<Vec<_>>()))
        .fold(f64::INFINITY, f64::min);
    let fpr = sel_mean(&net, |m| m.fpr);
    let msg = format!(
        "SIDANet error {:.4}, min per-view TPR {:.4}, FPR {:.4}; FPR <= SIDA in {}/5 seeds ({})",
        err,
        min_view_tpr,
        fpr,
        fpr_wins,
        detail.join("; ")
    );
    if min_view_tpr >= 0.9 && fpr <= 0.05 && err <= 0.05 && fpr_wins >= 4 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn random_dataset(rng: &mut ChaCha8Rng, views: usize) -> MultiViewDataset {
    let k = 3;
    let n_k = rng.gen_range(12..20);
    let labels: Vec<usize> = (0..k * n_k).map(|i| i / n_k + 1).collect();
    let shift: Vec<Array2<f64>> = (0..views).map(|_| normal(rng, (k, 10))).collect();
    let shared = normal(rng, (k * n_k, 2));
    let xs: Vec<Array2<f64>> = (0..views)
        .map(|d| {
            let p = rng.gen_range(4..10);
            let mut x = normal(rng, (k * n_k, p));
            for i in 0..k * n_k {
                for j in 0..p {
                    x[[i, j]] += shift[d][[labels[i] - 1, j]] + 0.5 * shared[[i, j % 2]];
                }
            }
            x
        })
        .collect();
    MultiViewDataset::new(xs, labels, vec![ViewRole::Penalized; views])
        .unwrap()
        .standardize()
}

fn criterion_4() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0.0f64;
    for inst in 0..20 {
        let dn = 2 + inst % 2;
        let ds = random_dataset(&mut rng, dn);
        let opts = FitOptions::default();
        let methods = vec![Method::Sida; dn];
        let model = fit(&ds, &vec![None; dn], &methods, &vec![0.0; dn], &opts).map_err(|e| e.to_string())?;
        let scat = build_scatter_set(&ds, &vec![Ridge::Auto; dn]).map_err(|e| e.to_string())?;
        let sol = solve_gev(&scat, &GevOptions::new(opts.rho, 2)).map_err(|e| e.to_string())?;
        for d in 0..dn {
            let a = gram_schmidt(sol.gammas[d].view());
            let ang = max_principal_angle(a.view(), model.gamma(d)).map_err(|e| e.to_string())?;
            worst = worst.max(ang);
        }
    }
    let msg = format!("max principal angle {:.3e} over 20 instances", worst);
    if worst < 1e-6 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_5() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst = 0.0f64;
    for inst in 0..20 {
        let dn = 2 + inst % 2;
        let r = 1 + inst % 3;
        let ms: Vec<Array2<f64>> = (0..dn)
            .map(|_| {
                let p = rng.gen_range(r + 2..12);
                let g = normal(&mut rng, (p, r));
                g.dot(&g.t())
            })
            .collect();
        let scat = ScatterSet::from_parts(ms.clone(), BTreeMap::new()).map_err(|e| e.to_string())?;
        let rho = rng.gen_range(0.1..1.0);
        let sol = solve_gev(&scat, &GevOptions::new(rho, r)).map_err(|e| e.to_string())?;
        for d in 0..dn {
            let lda = sym_eigen(ms[d].view()).map_err(|e| e.to_string())?;
            for k in 0..r {
                worst = worst.max((sol.lambdas[d][k] - 2.0 * rho * lda.values[k]).abs());
            }
        }
    }
    let msg = format!("max |lambda - 2 rho lambda_LDA| {:.3e} over 20 instances", worst);
    if worst <= 1e-8 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Exact projection onto `{x : Σ w_k |x_k - c_k| ≤ radius}` by sorting the
/// breakpoints `|y_k| / w_k`.
fn sorted_projection(v: &Array1<f64>, w: &Array1<f64>, c: &Array1<f64>, radius: f64) -> Array1<f64> {
    let y = v - c;
    let used: f64 = y.iter().zip(w).map(|(a, b)| a.abs() * b).sum();
    if used <= radius {
        return v.clone();
    }
    let mut idx: Vec<usize> = (0..y.len()).collect();
    idx.sort_by(|&a, &b| (y[b].abs() / w[b]).total_cmp(&(y[a].abs() / w[a])));
    let (mut s1, mut s2) = (0.0, 0.0);
    let mut theta = 0.0;
    for (m, &k) in idx.iter().enumerate() {
        s1 += w[k] * y[k].abs();
        s2 += w[k] * w[k];
        let t = (s1 - radius) / s2;
        let next = idx.get(m + 1).map_or(0.0, |&j| y[j].abs() / w[j]);
        if t >= next {
            theta = t;
            break;
        }
    }
    Array1::from_shape_fn(y.len(), |k| {
        c[k] + y[k].signum() * (y[k].abs() - theta * w[k]).max(0.0)
    })
}

/// Brute-force minimum of ‖γ‖ over a refined grid of the feasible set (r ≤ 2).
fn grid_oracle(d: &Array1<f64>, l: &Array1<f64>, tau: f64) -> f64 {
    let r = d.len();
    let feasible = |g: &[f64]| (0..r).map(|k| (d[k] - l[k] * g[k]).abs()).sum::<f64>() <= tau;
    let c: Vec<f64> = (0..r).map(|k| d[k] / l[k]).collect();
    let mut lo: Vec<f64> = c.iter().map(|&v| v.min(0.0) - 0.1 * v.abs()).collect();
    let mut hi: Vec<f64> = c.iter().map(|&v| v.max(0.0) + 0.1 * v.abs()).collect();
    let n = 200;
    let mut best = (f64::INFINITY, vec![0.0; r]);
    for _level in 0..6 {
        let steps: Vec<f64> = (0..r).map(|k| (hi[k] - lo[k]) / n as f64).collect();
        let total = (n + 1usize).pow(r as u32);
        for flat in 0..total {
            let mut g = vec![0.0; r];
            let mut rem = flat;
            for k in 0..r {
                g[k] = lo[k] + (rem % (n + 1)) as f64 * steps[k];
                rem /= n + 1;
            }
            if feasible(&g) {
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm < best.0 {
                    best = (norm, g);
                }
            }
        }
        for k in 0..r {
            lo[k] = best.1[k] - 3.0 * steps[k];
            hi[k] = best.1[k] + 3.0 * steps[k];
        }
    }
    best.0
}

fn dense_laplacian(g: &ViewGraph) -> Array2<f64> {
    build_normalized_laplacian(g).to_dense()
}

fn random_graph(rng: &mut ChaCha8Rng, p: usize) -> ViewGraph {
    let mut edges = Vec::new();
    if rng.gen_bool(0.5) {
        let hub = rng.gen_range(0..p);
        for v in 0..p {
            if v != hub && rng.gen_bool(0.7) {
                edges.push(Edge { u: hub, v, w: 1.0 });
            }
        }
    } else {
        for u in 0..p {
            for v in u + 1..p {
                if rng.gen_bool(0.25) {
                    edges.push(Edge { u, v, w: rng.gen_range(0.2..2.0) });
                }
            }
        }
    }
    if edges.is_empty() {
        edges.push(Edge { u: 0, v: 1, w: 1.0 });
    }
    ViewGraph::new(p, edges).unwrap()
}

/// Projected subgradient with diminishing steps, best iterate kept.
fn subgradient_oracle(
    d: &Array2<f64>,
    lambdas: &Array1<f64>,
    tau: f64,
    lap: &Array2<f64>,
    eta: f64,
    iters: usize,
) -> f64 {
    let p = d.nrows();
    let c = d / lambdas;
    let objective = |g: &Array2<f64>| {
        let lg = lap.dot(g);
        eta * lg.axis_iter(Axis(0)).map(|row| row.dot(&row).sqrt()).sum::<f64>()
            + (1.0 - eta) * g.axis_iter(Axis(0)).map(|row| row.dot(&row).sqrt()).sum::<f64>()
    };
    let project = |g: &mut Array2<f64>| {
        for i in 0..p {
            let row = g.row(i).to_owned();
            let proj = sorted_projection(&row, lambdas, &c.row(i).to_owned(), tau);
            g.row_mut(i).assign(&proj);
        }
    };
    let unit_rows = |m: &Array2<f64>| {
        let mut out = m.clone();
        for mut row in out.axis_iter_mut(Axis(0)) {
            let n = row.dot(&row).sqrt();
            if n > 1e-14 {
                row /= n;
            } else {
                row.fill(0.0);
            }
        }
        out
    };
    let mut g = c.clone();
    let mut best = objective(&g);
    let scale = (c.iter().map(|v| v * v).sum::<f64>()).sqrt().max(1e-3) / (p as f64).sqrt();
    for t in 1..=iters {
        let sub = eta * lap.t().dot(&unit_rows(&lap.dot(&g))) + (1.0 - eta) * unit_rows(&g);
        let step = scale / (t as f64).sqrt();
        g = &g - &(sub * step);
        project(&mut g);
        let f = objective(&g);
        if f < best {
            best = f;
        }
    }
    best
}

fn criterion_6() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut row_worst = 0.0f64;
    let mut grid_worst = 0.0f64;
    for _ in 0..1000 {
        let r = rng.gen_range(1..=3);
        let d = Array1::from_shape_fn(r, |_| rng.sample::<f64, _>(StandardNormal));
        let l = Array1::from_shape_fn(r, |_| rng.gen_range(0.1..3.0));
        let total: f64 = d.iter().map(|v| v.abs()).sum();
        let tau = rng.gen_range(0.0..1.2) * total;
        let got = solve_row_sida(d.view(), l.view(), tau);
        let exact = sorted_projection(&Array1::zeros(r), &l, &(&d / &l), tau);
        row_worst = row_worst.max((&got - &exact).iter().fold(0.0f64, |a, v| a.max(v.abs())));
        if r <= 2 {
            let brute = grid_oracle(&d, &l, tau);
            grid_worst = grid_worst.max(got.dot(&got).sqrt() - brute);
        }
    }
    let mut net_worst = f64::NEG_INFINITY;
    let mut net_abs = 0.0f64;
    for _ in 0..50 {
        let p = rng.gen_range(4..=12);
        let r = rng.gen_range(1..=3);
        let graph = random_graph(&mut rng, p);
        let lap = build_normalized_laplacian(&graph);
        let d = normal(&mut rng, (p, r));
        let lambdas = Array1::from_shape_fn(r, |_| rng.gen_range(0.3..3.0));
        let max_row = d.axis_iter(Axis(0)).map(|row| row.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
        let tau = rng.gen_range(0.05..0.9) * max_row;
        let eta = rng.gen_range(0.1..0.9);
        let sub = SparseSubproblem {
            d_mat: d.view(),
            lambdas: lambdas.view(),
            tau,
            eta,
            laplacian: Some(&lap),
        };
        let sol = solve_view_sidanet(&sub, &AdmmOptions::default()).map_err(|e| e.to_string())?;
        if constraint_violation(d.view(), sol.gamma.view(), lambdas.view()) > tau + 1e-9 {
            return Err("SIDANet solution infeasible".into());
        }
        let ours = sidanet_objective(sol.gamma.view(), &lap, eta);
        let oracle = subgradient_oracle(&d, &lambdas, tau, &dense_laplacian(&graph), eta, 1_000_000);
        net_worst = net_worst.max(ours - oracle);
        net_abs = net_abs.max((ours - oracle).abs());
    }
    let msg = format!(
        "row solver vs exact oracle max diff {:.2e}, vs grid objective {:.2e} (1000 instances); \
         SIDANet objective minus subgradient oracle max {:.2e}, max |gap| {:.2e} (50 instances)",
        row_worst, grid_worst, net_worst, net_abs
    );
    if row_worst <= 1e-4 && grid_worst <= 1e-4 && net_worst <= 1e-4 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_7() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut worst_slack = f64::NEG_INFINITY;
    let mut sida_breaks = 0;
    // Graph smoothing can legitimately spread the support as tau loosens, so
    // SIDANet increases are reported, not failed.
    let mut net_increases = 0;
    for _ in 0..500 {
        let p = rng.gen_range(4..=12);
        let r = rng.gen_range(1..=3);
        let d = normal(&mut rng, (p, r));
        let lambdas = Array1::from_shape_fn(r, |_| rng.gen_range(0.2..3.0));
        let max_row = d.axis_iter(Axis(0)).map(|row| row.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
        let graph = random_graph(&mut rng, p);
        let lap = build_normalized_laplacian(&graph);
        let eta = rng.gen_range(0.0..1.0);
        let (mut last_sida, mut last_net) = (usize::MAX, usize::MAX);
        for i in 0..10 {
            let tau = 1.1 * max_row * i as f64 / 9.0;
            let sub = SparseSubproblem {
                d_mat: d.view(),
                lambdas: lambdas.view(),
                tau,
                eta,
                laplacian: Some(&lap),
            };
            let net = solve_view_sidanet(&sub, &AdmmOptions::default()).map_err(|e| e.to_string())?.gamma;
            let sida = solve_view_sida(d.view(), lambdas.view(), tau);
            for g in [&net, &sida] {
                worst_slack = worst_slack.max(constraint_violation(d.view(), g.view(), lambdas.view()) - tau);
            }
            let (ns, nn) = (selected_rows(sida.view()).len(), selected_rows(net.view()).len());
            sida_breaks += usize::from(ns > last_sida);
            net_increases += usize::from(nn > last_net);
            last_sida = ns;
            last_net = nn;
        }
    }
    let msg = format!(
        "max constraint slack {:.2e} (both solvers); SIDA support increases along tau: {}; \
         SIDANet support increases (informational): {} (500 instances x 10 tau values)",
        worst_slack, sida_breaks, net_increases
    );
    if worst_slack <= 1e-9 && sida_breaks == 0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_8() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(5..40);
        let (px, py) = (rng.gen_range(1..8), rng.gen_range(1..8));
        let x = normal(&mut rng, (n, px));
        let y = normal(&mut rng, (n, py));
        let e = |v: sida::Result<f64>| v.map_err(|e| e.to_string());
        worst = worst.max((e(rv_coefficient(x.view(), x.view()))? - 1.0).abs());
        worst = worst.max((e(rv_coefficient(x.view(), y.view()))? - e(rv_coefficient(y.view(), x.view()))?).abs());
        let a = x.column(0).to_owned();
        let b = y.column(0).to_owned();
        let (ma, mb) = (a.mean().unwrap(), b.mean().unwrap());
        let (ca, cb) = (&a - ma, &b - mb);
        let pearson = ca.dot(&cb) / (ca.dot(&ca).sqrt() * cb.dot(&cb).sqrt());
        let rv = e(rv_coefficient(a.view().insert_axis(Axis(1)), b.view().insert_axis(Axis(1))))?;
        worst = worst.max((rv - pearson * pearson).abs());
    }
    let msg = format!("max deviation {:.2e} over 100 instances", worst);
    if worst <= 1e-12 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn sida_bin() -> &'static str {
    env!("CARGO_BIN_EXE_sida")
}

fn run_sida(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(sida_bin())
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "sida {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn criterion_9() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let t0 = Instant::now();
    run_sida(dir.path(), &["simulate", "--scenario", "S1", "--setting", "1", "--seed", "9", "--out", "data"])?;
    let t1 = Instant::now();
    run_sida(
        dir.path(),
        &[
            "cv",
            "--views",
            "data/train_view1.csv,data/train_view2.csv",
            "--labels",
            "data/train_labels.csv",
            "--search",
            "random",
            "--folds",
            "5",
            "--seed",
            "9",
            "--workers",
            "4",
            "--out",
            "cv",
        ],
    )?;
    let cv_secs = t1.elapsed().as_secs_f64();
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let msg = format!(
        "5-fold random-search CV at n = 240, p = q = 2000 took {:.1} s (simulation {:.1} s) on {} core(s)",
        cv_secs,
        (t1 - t0).as_secs_f64(),
        cores
    );
    if cv_secs <= 30.0 * 60.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap());
    }
    out
}

fn criterion_10() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let views = "sim/train_view1.csv,sim/train_view2.csv,sim/train_view3.csv";
    let test_views = "sim/test_view1.csv,sim/test_view2.csv,sim/test_view3.csv";
    let graphs = "sim/graph_view1.tsv,sim/graph_view2.tsv,";
    let steps: Vec<(&str, Vec<&str>)> = vec![
        ("simulate", vec!["--scenario", "NET1", "--dims", "40,40,40", "--n-per-class", "20", "--seed", "7", "--out", "sim"]),
        ("cv", vec!["--views", views, "--labels", "sim/train_labels.csv", "--graphs", graphs, "--seed", "7", "--workers", "2", "--out", "cv"]),
        ("fit", vec!["--views", views, "--labels", "sim/train_labels.csv", "--graphs", graphs, "--tau-file", "cv/tau.json", "--seed", "7", "--out", "fit"]),
        ("predict", vec!["--model", "fit/model.json", "--views", test_views, "--separate", "--out", "pred"]),
        ("evaluate", vec!["--model", "fit/model.json", "--views", test_views, "--labels", "sim/test_labels.csv", "--truth", "sim/truth_view1.csv,sim/truth_view2.csv,sim/truth_view3.csv", "--out", "eval"]),
        ("stability", vec!["--views", views, "--labels", "sim/train_labels.csv", "--graphs", graphs, "--reps", "3", "--effect-percentile", "0.5", "--seed", "7", "--workers", "2", "--out", "stab"]),
    ];
    let mut checked = Vec::new();
    for (cmd, args) in &steps {
        let mut argv = vec![*cmd];
        argv.extend(args.iter().copied());
        run_sida(d, &argv)?;
        let out_dir = d.join(args[args.iter().position(|a| *a == "--out").unwrap() + 1]);
        let first = snapshot(&out_dir);
        let manifest = format!("{}/{}_manifest.json", out_dir.file_name().unwrap().to_string_lossy(), cmd);
        run_sida(d, &[cmd, "--config", &manifest])?;
        let second = snapshot(&out_dir);
        if first != second {
            let diff: Vec<&String> = first.keys().filter(|k| first.get(*k) != second.get(*k)).collect();
            return Err(format!("{cmd}: artifacts differ after re-run from manifest: {diff:?}"));
        }
        checked.push(format!("{cmd} ({} files)", first.len()));
    }
    Ok(format!("byte-identical re-runs: {}", checked.join(", ")))
}

fn main() {
    let wanted: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let criteria: Vec<(usize, &str, fn() -> Check)> = vec![
        (1, "strong-signal reproduction", criterion_1),
        (2, "weak-signal ordering", criterion_2),
        (3, "network benefit", criterion_3),
        (4, "tau = 0 recovery", criterion_4),
        (5, "decoupling", criterion_5),
        (6, "oracle equivalence", criterion_6),
        (7, "feasibility and monotonicity", criterion_7),
        (8, "RV properties", criterion_8),
        (9, "timing budget", criterion_9),
        (10, "determinism", criterion_10),
    ];
    let (mut passed, mut failed) = (0, 0);
    for (id, name, f) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let result = f();
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(msg) => {
                passed += 1;
                println!("PASS criterion {id} ({name}): {msg} [{secs:.1} s]");
            }
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {id} ({name}): {msg} [{secs:.1} s]");
            }
        }
    }
    println!("acceptance: {passed} passed, {failed} failed");
    if failed > 0 && std::env::var("SIDA_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
