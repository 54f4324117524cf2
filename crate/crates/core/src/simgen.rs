//! Synthetic multi-view data with known signal variables: three scenarios
//! without prior graphs and two with block-star networks.

use faer::{Mat, Side};
use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{MultiViewDataset, ViewRole};
use crate::error::{Result, SidaError};
use crate::graph::ViewGraph;
use crate::linalg::{matmul, sym_eigen};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Scenario {
    /// Three classes, common covariance.
    S1,
    /// Three classes, class-specific within-view covariance.
    S2,
    /// Two classes, common covariance.
    S3,
    /// Three views, all four networks carry signal.
    Net1,
    /// Three views, two of four networks carry signal.
    Net2,
}

impl std::str::FromStr for Scenario {
    type Err = SidaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "S1" => Ok(Scenario::S1),
            "S2" => Ok(Scenario::S2),
            "S3" => Ok(Scenario::S3),
            "NET1" => Ok(Scenario::Net1),
            "NET2" => Ok(Scenario::Net2),
            other => Err(SidaError::Validation(format!(
                "unknown scenario '{other}' (expected S1, S2, S3, NET1 or NET2)"
            ))),
        }
    }
}

impl Scenario {
    pub fn is_network(self) -> bool {
        matches!(self, Scenario::Net1 | Scenario::Net2)
    }

    pub fn n_classes(self) -> usize {
        if self == Scenario::S3 {
            2
        } else {
            3
        }
    }
}

/// `(ρ₁, ρ₂, c)` of the three association/separation settings.
pub fn setting_parameters(setting: u8) -> Result<(f64, f64, f64)> {
    match setting {
        1 => Ok((0.9, 0.7, 0.5)),
        2 => Ok((0.4, 0.2, 0.2)),
        3 => Ok((0.15, 0.05, 0.12)),
        other => Err(SidaError::Validation(format!("setting {other} not in 1..=3"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub setting: u8,
    pub dims: Vec<usize>,
    pub n_per_class: usize,
    pub rho1: f64,
    pub rho2: f64,
    pub c: f64,
    pub seed: u64,
}

impl ScenarioSpec {
    /// Defaults: 2000 variables per view and 80 samples per class without
    /// networks; three views of 500 variables, 40 per class, `ρ = (0.9, 0.7)` and
    /// `c = 0.2` with networks.
    pub fn new(scenario: Scenario, setting: u8, seed: u64) -> Result<Self> {
        if scenario.is_network() {
            return Ok(Self {
                scenario,
                setting,
                dims: vec![500; 3],
                n_per_class: 40,
                rho1: 0.9,
                rho2: 0.7,
                c: 0.2,
                seed,
            });
        }
        let (rho1, rho2, c) = setting_parameters(setting)?;
        Ok(Self {
            scenario,
            setting,
            dims: vec![2000; 2],
            n_per_class: 80,
            rho1,
            rho2,
            c,
            seed,
        })
    }

    pub fn with_dims(mut self, dims: Vec<usize>) -> Self {
        self.dims = dims;
        self
    }

    pub fn with_n_per_class(mut self, n: usize) -> Self {
        self.n_per_class = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let want = if self.scenario.is_network() { 3 } else { 2 };
        if self.dims.len() != want {
            return Err(SidaError::Validation(format!(
                "scenario needs {} views, got {}",
                want,
                self.dims.len()
            )));
        }
        if let Some(&p) = self.dims.iter().find(|&&p| p < 40) {
            return Err(SidaError::Validation(format!("views need at least 40 variables, got {p}")));
        }
        for (name, v) in [("rho1", self.rho1), ("rho2", self.rho2)] {
            if !(v >= 0.0 && v < 1.0) {
                return Err(SidaError::Validation(format!("{name} = {v} outside [0, 1)")));
            }
        }
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return Err(SidaError::Validation(format!("c = {} must be non-negative", self.c)));
        }
        if self.n_per_class < 2 {
            return Err(SidaError::Validation("need at least 2 samples per class".into()));
        }
        Ok(())
    }

    /// 0-based signal variables of every view.
    pub fn truth(&self) -> Vec<usize> {
        match self.scenario {
            Scenario::Net1 => (0..40).collect(),
            _ => (0..20).collect(),
        }
    }
}

/// Unit diagonal, constant off-diagonal `corr`.
pub fn compound_symmetric(size: usize, corr: f64) -> Array2<f64> {
    Array2::from_shape_fn((size, size), |(i, j)| if i == j { 1.0 } else { corr })
}

/// `base^{|i - j|}`.
pub fn ar1(size: usize, base: f64) -> Array2<f64> {
    Array2::from_shape_fn((size, size), |(i, j)| base.powi((i as i32 - j as i32).abs()))
}

/// A network block: hub row/column at 0.7, the other nine variables at 0.49.
pub fn network_block() -> Array2<f64> {
    let mut b = compound_symmetric(10, 0.49);
    for j in 1..10 {
        b[[0, j]] = 0.7;
        b[[j, 0]] = 0.7;
    }
    b
}

/// Within-view covariance shared by all classes (class 1 in the second scenario).
pub fn view_covariance(scenario: Scenario, p: usize) -> Array2<f64> {
    let mut sigma = Array2::eye(p);
    if scenario.is_network() {
        for b in 0..4 {
            sigma
                .slice_mut(s![10 * b..10 * b + 10, 10 * b..10 * b + 10])
                .assign(&network_block());
        }
    } else {
        for b in 0..2 {
            sigma
                .slice_mut(s![10 * b..10 * b + 10, 10 * b..10 * b + 10])
                .assign(&compound_symmetric(10, 0.7));
        }
    }
    sigma
}

/// `V (VᵀΣV)^{-1/2}` so that the result `W` satisfies `WᵀΣW = I`.
pub fn normalize_v(v: &Array2<f64>, sigma: &Array2<f64>) -> Result<Array2<f64>> {
    let gram = v.t().dot(&matmul(sigma.view(), v.view()));
    let e = sym_eigen(gram.view())?;
    if e.values.iter().any(|&x| !(x > 0.0)) {
        return Err(SidaError::NotPositiveDefinite(e.values[e.values.len() - 1]));
    }
    let scaled = &e.vectors * &e.values.mapv(|x| 1.0 / x.sqrt());
    Ok(v.dot(&scaled.dot(&e.vectors.t())))
}

/// Raw (unnormalized) loading matrix: U(0.5, 1) on signal rows, hub rows ×10 in
/// the network scenarios.
fn raw_v(rng: &mut ChaCha8Rng, scenario: Scenario, p: usize, signal: usize) -> Array2<f64> {
    let mut v = Array2::zeros((p, 2));
    for i in 0..signal {
        for k in 0..2 {
            v[[i, k]] = rng.gen_range(0.5..1.0);
        }
    }
    if scenario.is_network() {
        for b in (0..signal).step_by(10) {
            for k in 0..2 {
                v[[b, k]] *= 10.0;
            }
        }
    }
    v
}

/// Population covariance of the joint vector (views stacked) plus the
/// normalized loading matrices.
#[derive(Debug, Clone)]
pub struct JointCovariance {
    pub sigma: Array2<f64>,
    pub views: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
    pub offsets: Vec<usize>,
}

fn offsets(dims: &[usize]) -> Vec<usize> {
    let mut o = vec![0];
    for &p in dims {
        o.push(o.last().unwrap() + p);
    }
    o
}

/// Stacks within-view blocks with cross blocks `Σ_d V_d D V_jᵀ Σ_j`.
pub fn assemble_joint(views: &[Array2<f64>], v: &[Array2<f64>], rho: (f64, f64)) -> Array2<f64> {
    let dims: Vec<usize> = views.iter().map(|m| m.nrows()).collect();
    let off = offsets(&dims);
    let total = off[dims.len()];
    let mut sigma = Array2::zeros((total, total));
    let sv: Vec<Array2<f64>> = views
        .iter()
        .zip(v)
        .map(|(s, vv)| matmul(s.view(), vv.view()))
        .collect();
    let dmat = Array1::from(vec![rho.0, rho.1]);
    for d in 0..views.len() {
        sigma
            .slice_mut(s![off[d]..off[d + 1], off[d]..off[d + 1]])
            .assign(&views[d]);
        for j in d + 1..views.len() {
            let block = matmul((&sv[d] * &dmat).view(), sv[j].t());
            sigma
                .slice_mut(s![off[d]..off[d + 1], off[j]..off[j + 1]])
                .assign(&block);
            sigma
                .slice_mut(s![off[j]..off[j + 1], off[d]..off[d + 1]])
                .assign(&block.t());
        }
    }
    sigma
}

/// Signal rows carrying the loadings.
fn signal_rows(spec: &ScenarioSpec) -> usize {
    match spec.scenario {
        Scenario::Net1 => 40,
        _ => 20,
    }
}

/// Draws the loadings and assembles the (class-1) joint covariance.
pub fn build_joint_covariance(spec: &ScenarioSpec, rng: &mut ChaCha8Rng) -> Result<(JointCovariance, Vec<Array2<f64>>)> {
    spec.validate()?;
    let views: Vec<Array2<f64>> = spec.dims.iter().map(|&p| view_covariance(spec.scenario, p)).collect();
    let raw: Vec<Array2<f64>> = spec
        .dims
        .iter()
        .map(|&p| raw_v(rng, spec.scenario, p, signal_rows(spec)))
        .collect();
    let v = raw
        .iter()
        .zip(&views)
        .map(|(r, s)| normalize_v(r, s))
        .collect::<Result<Vec<_>>>()?;
    let sigma = assemble_joint(&views, &v, (spec.rho1, spec.rho2));
    Ok((
        JointCovariance {
            sigma,
            views,
            v,
            offsets: offsets(&spec.dims),
        },
        raw,
    ))
}

/// Mean-direction matrix `A` (total x 2, or total x 1 for two classes).
pub fn mean_directions(spec: &ScenarioSpec) -> Array2<f64> {
    let off = offsets(&spec.dims);
    let total = off[spec.dims.len()];
    let c = spec.c;
    let cols = if spec.scenario == Scenario::S3 { 1 } else { 2 };
    let mut a = Array2::zeros((total, cols));
    for d in 0..spec.dims.len() {
        let o = off[d];
        match spec.scenario {
            Scenario::S3 => a.slice_mut(s![o..o + 20, 0]).fill(c),
            Scenario::Net1 => {
                a.slice_mut(s![o..o + 20, 0]).fill(c);
                a.slice_mut(s![o + 20..o + 40, 1]).fill(-c);
            }
            _ => {
                a.slice_mut(s![o..o + 10, 0]).fill(c);
                a.slice_mut(s![o + 10..o + 20, 1]).fill(-c);
            }
        }
    }
    a
}

/// Class means: the columns of `[Σ A, 0]`.
pub fn class_means(sigma: &Array2<f64>, a: &Array2<f64>) -> Vec<Array1<f64>> {
    let sa = matmul(sigma.view(), a.view());
    let mut means: Vec<Array1<f64>> = sa.axis_iter(Axis(1)).map(|c| c.to_owned()).collect();
    means.push(Array1::zeros(sigma.nrows()));
    means
}

/// Lower Cholesky factor; fails when the matrix is not numerically positive
/// definite (smallest pivot at or below 1e-10).
pub fn cholesky(sigma: &Array2<f64>) -> Result<Array2<f64>> {
    let n = sigma.nrows();
    if n <= 1000 {
        let e = sym_eigen(sigma.view())?;
        let min = e.values[n - 1];
        if min <= 1e-10 {
            return Err(SidaError::NotPositiveDefinite(min));
        }
    }
    let m = Mat::<f64>::from_fn(n, n, |i, j| sigma[[i, j]]);
    let llt = m.llt(Side::Lower).map_err(|_| SidaError::NotPositiveDefinite(f64::NAN))?;
    let l = llt.L();
    let out = Array2::from_shape_fn((n, n), |(i, j)| if j <= i { l[(i, j)] } else { 0.0 });
    if (0..n).any(|i| out[[i, i]] * out[[i, i]] <= 1e-10) {
        return Err(SidaError::NotPositiveDefinite(f64::NAN));
    }
    Ok(out)
}

/// Per-class joint covariances. In the second scenario classes 2 and 3 swap the
/// within-view blocks for AR(1)(0.6) and the identity; the cross blocks keep the
/// class-1 construction when that stays positive definite and are otherwise
/// rebuilt from the same raw loadings normalized against the class's own blocks.
pub fn class_covariances(spec: &ScenarioSpec, joint: &JointCovariance, raw: &[Array2<f64>]) -> Result<Vec<Array2<f64>>> {
    let k = spec.scenario.n_classes();
    if spec.scenario != Scenario::S2 {
        return Ok(vec![joint.sigma.clone(); k]);
    }
    let mut out = vec![joint.sigma.clone()];
    for class in 2..=3 {
        let views: Vec<Array2<f64>> = spec
            .dims
            .iter()
            .map(|&p| if class == 2 { ar1(p, 0.6) } else { Array2::eye(p) })
            .collect();
        let mut sigma = joint.sigma.clone();
        for (d, w) in views.iter().enumerate() {
            let (a, b) = (joint.offsets[d], joint.offsets[d + 1]);
            sigma.slice_mut(s![a..b, a..b]).assign(w);
        }
        if cholesky(&sigma).is_err() {
            log::info!("class {class}: shared cross-covariance is not compatible; using class-specific loadings");
            let v = raw
                .iter()
                .zip(&views)
                .map(|(r, s)| normalize_v(r, s))
                .collect::<Result<Vec<_>>>()?;
            sigma = assemble_joint(&views, &v, (spec.rho1, spec.rho2));
        }
        out.push(sigma);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub spec: ScenarioSpec,
    pub train: MultiViewDataset,
    pub test: MultiViewDataset,
    /// 0-based signal indices per view.
    pub truth: Vec<Vec<usize>>,
    pub graphs: Vec<Option<ViewGraph>>,
}

/// Unit-weight star per size-10 block over the first 40 variables.
pub fn network_graph(p: usize) -> Result<ViewGraph> {
    let mut g = ViewGraph::empty(p);
    for b in 0..4 {
        g.add_star(10 * b, 9)?;
    }
    Ok(g)
}

fn draw(rng: &mut ChaCha8Rng, means: &[Array1<f64>], chols: &[Array2<f64>], n_k: usize, dims: &[usize]) -> Result<MultiViewDataset> {
    let total: usize = dims.iter().sum();
    let k = chols.len();
    let mut joint = Array2::<f64>::zeros((n_k * k, total));
    let mut labels = Vec::with_capacity(n_k * k);
    for class in 0..k {
        let z = Array2::from_shape_fn((n_k, total), |_| rng.sample::<f64, _>(StandardNormal));
        let x = matmul(z.view(), chols[class].t()) + &means[class];
        joint.slice_mut(s![class * n_k..(class + 1) * n_k, ..]).assign(&x);
        labels.extend(std::iter::repeat(class + 1).take(n_k));
    }
    let off = offsets(dims);
    let views: Vec<Array2<f64>> = (0..dims.len())
        .map(|d| joint.slice(s![.., off[d]..off[d + 1]]).to_owned())
        .collect();
    let names = dims
        .iter()
        .enumerate()
        .map(|(d, &p)| (1..=p).map(|j| format!("v{}_{}", d + 1, j)).collect())
        .collect();
    MultiViewDataset::new(views, labels, vec![ViewRole::Penalized; dims.len()])?.with_names(names)
}

/// Deterministic draw of a training and an independent test set.
pub fn generate(spec: &ScenarioSpec) -> Result<GeneratedData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (joint, raw) = build_joint_covariance(spec, &mut rng)?;
    let a = mean_directions(spec);
    let mut means = class_means(&joint.sigma, &a);
    means.truncate(spec.scenario.n_classes());
    let sigmas = class_covariances(spec, &joint, &raw)?;
    let chols = sigmas.iter().map(cholesky).collect::<Result<Vec<_>>>()?;
    let train = draw(&mut rng, &means, &chols, spec.n_per_class, &spec.dims)?;
    let test = draw(&mut rng, &means, &chols, spec.n_per_class, &spec.dims)?;
    let graphs = if spec.scenario.is_network() {
        spec.dims.iter().map(|&p| network_graph(p).map(Some)).collect::<Result<Vec<_>>>()?
    } else {
        vec![None; spec.dims.len()]
    };
    Ok(GeneratedData {
        truth: vec![spec.truth(); spec.dims.len()],
        spec: spec.clone(),
        train,
        test,
        graphs,
    })
}
