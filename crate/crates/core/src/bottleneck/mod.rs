//! Linear bottleneck predictor `x_{t+1} ~ W_out W_in [x_t; ...; x_{t-L+1}]`
//! trained on next-step MSE, and the score read-out `S = |W_out W_in|`.
//!
//! Training is full-batch, so the objective only needs the lagged second
//! moments of the (standardized) series; one epoch costs
//! `O(K * (K L)^2)` regardless of the series length.

mod score;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::baselines::LaggedDesign;
use crate::error::{param, Error, Result};
use crate::linalg::ColumnStats;
use crate::synthgen::Series;

pub use score::{Normalization, ScoreMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Bottleneck width; `None` means `d = K`.
    pub d: Option<usize>,
    pub max_lag: usize,
    pub lambda_sparse: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Z-score each column with training statistics before fitting.
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            d: None,
            max_lag: 1,
            lambda_sparse: 1e-3,
            learning_rate: 1e-2,
            epochs: 2000,
            standardize: true,
        }
    }
}

impl TrainConfig {
    pub fn lagged(max_lag: usize) -> Self {
        Self {
            max_lag,
            ..Self::default()
        }
    }
}

/// Penalised next-step objective on precomputed lagged moments:
/// `mse(B) + lambda (|W_in|_1 + |W_out|_1)` with `B = W_out W_in` and
/// `mse(B) = (1 / (N K)) sum_t |y_t - B z_t|^2`.
#[derive(Debug, Clone)]
pub struct Objective {
    /// `Z^T Z / N`.
    czz: DMatrix<f64>,
    /// `Z^T Y / N`.
    czy: DMatrix<f64>,
    /// `tr(Y^T Y) / N`.
    yy: f64,
    k: usize,
    lambda: f64,
}

impl Objective {
    pub fn new(design: &LaggedDesign, lambda: f64) -> Self {
        let n = design.n_rows() as f64;
        let zt = design.regressors.transpose();
        Self {
            czz: &zt * &design.regressors / n,
            czy: &zt * &design.targets / n,
            yy: design.targets.norm_squared() / n,
            k: design.n_vars(),
            lambda,
        }
    }

    pub fn mse_of_product(&self, b: &DMatrix<f64>) -> f64 {
        let cross = (b * &self.czy).trace();
        let quad = (b * &self.czz).component_mul(b).sum();
        ((self.yy - 2.0 * cross + quad) / self.k as f64).max(0.0)
    }

    pub fn mse(&self, w_in: &DMatrix<f64>, w_out: &DMatrix<f64>) -> f64 {
        self.mse_of_product(&(w_out * w_in))
    }

    pub fn loss(&self, w_in: &DMatrix<f64>, w_out: &DMatrix<f64>) -> f64 {
        self.mse(w_in, w_out) + self.lambda * (l1(w_in) + l1(w_out))
    }

    /// `(d loss / d W_in, d loss / d W_out)`; the L1 term contributes
    /// `lambda * sign(w)` (zero at zero).
    pub fn gradient(&self, w_in: &DMatrix<f64>, w_out: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let b = w_out * w_in;
        let g_b = (&b * &self.czz - self.czy.transpose()) * (2.0 / self.k as f64);
        let mut g_in = w_out.transpose() * &g_b;
        let mut g_out = &g_b * w_in.transpose();
        if self.lambda > 0.0 {
            g_in.zip_apply(w_in, |g, w| *g += self.lambda * sign(w));
            g_out.zip_apply(w_out, |g, w| *g += self.lambda * sign(w));
        }
        (g_in, g_out)
    }
}

fn l1(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v.abs()).sum()
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// A trained (or hand-built) bottleneck. Immutable once built.
#[derive(Debug, Clone)]
pub struct BottleneckModel {
    k: usize,
    max_lag: usize,
    w_in: DMatrix<f64>,
    w_out: DMatrix<f64>,
    init_w_in: DMatrix<f64>,
    init_w_out: DMatrix<f64>,
    stats: ColumnStats,
    config: TrainConfig,
    seed: u64,
    loss_history: Vec<f64>,
}

impl BottleneckModel {
    /// Wraps explicit weights (no standardization, no training history).
    pub fn from_weights(w_in: DMatrix<f64>, w_out: DMatrix<f64>, max_lag: usize) -> Result<Self> {
        let d = w_in.nrows();
        let k = w_out.nrows();
        if d == 0 || w_out.ncols() != d || w_in.ncols() != k * max_lag {
            return param(format!(
                "weight shapes {:?} / {:?} inconsistent with L={max_lag}",
                w_in.shape(),
                w_out.shape()
            ));
        }
        Ok(Self {
            k,
            max_lag,
            init_w_in: w_in.clone(),
            init_w_out: w_out.clone(),
            w_in,
            w_out,
            stats: ColumnStats::identity(k),
            config: TrainConfig {
                d: Some(d),
                max_lag,
                standardize: false,
                ..TrainConfig::default()
            },
            seed: 0,
            loss_history: Vec::new(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.w_in.nrows()
    }

    pub fn max_lag(&self) -> usize {
        self.max_lag
    }

    pub fn w_in(&self) -> &DMatrix<f64> {
        &self.w_in
    }

    pub fn w_out(&self) -> &DMatrix<f64> {
        &self.w_out
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Penalised training loss after every epoch.
    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    /// `W_out W_in`, before absolute values.
    pub fn product(&self) -> DMatrix<f64> {
        &self.w_out * &self.w_in
    }

    pub fn extract(&self) -> Result<ScoreMatrix> {
        extract_product(&self.product(), self.k, self.max_lag)
    }

    /// Scores the untrained initial weights would have given.
    pub fn extract_init(&self) -> Result<ScoreMatrix> {
        extract_product(&(&self.init_w_out * &self.init_w_in), self.k, self.max_lag)
    }
}

fn extract_product(b: &DMatrix<f64>, k: usize, max_lag: usize) -> Result<ScoreMatrix> {
    let s = ScoreMatrix::from_fn(k, max_lag, |i, j, tau| b[(i, (tau - 1) * k + j)].abs())?;
    match s.normalization() {
        Normalization::AllZero => Err(Error::DegenerateExtraction),
        Normalization::Max => Ok(s),
    }
}

/// `S^(tau) = |W_out W_in^(tau)|`, diagonal zeroed, divided by the max.
pub fn extract(model: &BottleneckModel) -> Result<ScoreMatrix> {
    model.extract()
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct Adam {
    m: DMatrix<f64>,
    v: DMatrix<f64>,
}

impl Adam {
    fn new(shape: (usize, usize)) -> Self {
        Self {
            m: DMatrix::zeros(shape.0, shape.1),
            v: DMatrix::zeros(shape.0, shape.1),
        }
    }

    fn step(&mut self, w: &mut DMatrix<f64>, g: &DMatrix<f64>, lr: f64, t: i32) {
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        for ((wi, gi), (mi, vi)) in w
            .iter_mut()
            .zip(g.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
            *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
            *wi -= lr * (*mi / c1) / ((*vi / c2).sqrt() + ADAM_EPS);
        }
    }
}

/// Train on next-step MSE with Adam and a cosine-decayed learning rate.
pub fn train(series: &Series, cfg: &TrainConfig, seed: u64) -> Result<BottleneckModel> {
    let k = series.n_vars();
    let d = cfg.d.unwrap_or(k);
    if d == 0 {
        return param("bottleneck width d must be >= 1");
    }
    if cfg.max_lag == 0 {
        return param("max_lag must be >= 1");
    }
    if series.len() <= cfg.max_lag + 10 {
        return param(format!(
            "series of length {} too short for max_lag {}",
            series.len(),
            cfg.max_lag
        ));
    }
    if !(cfg.lambda_sparse >= 0.0 && cfg.learning_rate > 0.0) {
        return param("lambda_sparse must be >= 0 and learning_rate > 0");
    }
    let stats = if cfg.standardize {
        ColumnStats::of(series.values())
    } else {
        ColumnStats::identity(k)
    };
    let design = LaggedDesign::new(&stats.apply(series.values()), cfg.max_lag)?;
    let objective = Objective::new(&design, cfg.lambda_sparse);

    let p = k * cfg.max_lag;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = Normal::new(0.0, 1.0 / (d.max(k) as f64).sqrt()).expect("valid sd");
    let mut w_in = DMatrix::from_fn(d, p, |_, _| init.sample(&mut rng));
    let mut w_out = DMatrix::from_fn(k, d, |_, _| init.sample(&mut rng));
    let (init_w_in, init_w_out) = (w_in.clone(), w_out.clone());

    let mut opt_in = Adam::new(w_in.shape());
    let mut opt_out = Adam::new(w_out.shape());
    let mut history = Vec::with_capacity(cfg.epochs);
    let epochs = cfg.epochs.max(1);
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / epochs as f64).cos());
        let (g_in, g_out) = objective.gradient(&w_in, &w_out);
        opt_in.step(&mut w_in, &g_in, lr, epoch as i32 + 1);
        opt_out.step(&mut w_out, &g_out, lr, epoch as i32 + 1);
        let loss = objective.loss(&w_in, &w_out);
        if !loss.is_finite() {
            return Err(Error::TrainingDivergence { epoch });
        }
        history.push(loss);
    }
    Ok(BottleneckModel {
        k,
        max_lag: cfg.max_lag,
        w_in,
        w_out,
        init_w_in,
        init_w_out,
        stats,
        config: TrainConfig { d: Some(d), ..cfg.clone() },
        seed,
        loss_history: history,
    })
}

/// Mean squared next-step error on `heldout`, in the units of `heldout`.
pub fn fit_predict_mse(model: &BottleneckModel, heldout: &Series) -> Result<f64> {
    if heldout.n_vars() != model.k {
        return param(format!(
            "held-out series has {} variables, model expects {}",
            heldout.n_vars(),
            model.k
        ));
    }
    if heldout.len() <= model.max_lag + 1 {
        return param("held-out series too short");
    }
    let design = LaggedDesign::new(&model.stats.apply(heldout.values()), model.max_lag)?;
    let pred = &design.regressors * model.product().transpose();
    let mut total = 0.0;
    for (j, sd) in model.stats.sds.iter().enumerate() {
        let diff = pred.column(j) - design.targets.column(j);
        total += diff.norm_squared() * sd * sd;
    }
    Ok(total / (design.n_rows() * model.k) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::gen_var_chain;

    #[test]
    fn identity_weights_are_degenerate() {
        let m = BottleneckModel::from_weights(DMatrix::identity(4, 4), DMatrix::identity(4, 4), 1).unwrap();
        assert!(matches!(m.extract(), Err(Error::DegenerateExtraction)));
    }

    #[test]
    fn single_entry_extraction() {
        let mut w_in = DMatrix::zeros(3, 3);
        w_in[(0, 1)] = 3.0;
        let m = BottleneckModel::from_weights(w_in, DMatrix::identity(3, 3), 1).unwrap();
        let s = m.extract().unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expected = if (i, j) == (0, 1) { 1.0 } else { 0.0 };
                assert_eq!(s.get(i, j, 1), expected);
            }
        }
    }

    #[test]
    fn lagged_blocks_map_to_lags() {
        // W_in has two K-wide blocks; put a weight in the lag-2 block only.
        let mut w_in = DMatrix::zeros(2, 4);
        w_in[(1, 2 + 0)] = -2.0; // lag 2, cause 0
        let m = BottleneckModel::from_weights(w_in, DMatrix::identity(2, 2), 2).unwrap();
        let s = m.extract().unwrap();
        assert_eq!(s.get(1, 0, 2), 1.0);
        assert_eq!(s.get(1, 0, 1), 0.0);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(BottleneckModel::from_weights(DMatrix::zeros(2, 3), DMatrix::zeros(2, 2), 1).is_err());
    }

    #[test]
    fn seed_determinism() {
        let (s, _) = gen_var_chain(4, 200, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 200,
            ..TrainConfig::default()
        };
        let a = train(&s, &cfg, 5).unwrap();
        let b = train(&s, &cfg, 5).unwrap();
        assert_eq!(a.w_in(), b.w_in());
        assert_eq!(a.w_out(), b.w_out());
        let c = train(&s, &cfg, 6).unwrap();
        assert_ne!(a.w_in(), c.w_in());
    }

    #[test]
    fn short_series_rejected() {
        let (s, _) = gen_var_chain(3, 20, 1).unwrap();
        let cfg = TrainConfig::lagged(10);
        assert!(matches!(train(&s, &cfg, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn divergence_is_reported() {
        let (s, _) = gen_var_chain(3, 100, 1).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e200,
            epochs: 50,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&s, &cfg, 0), Err(Error::TrainingDivergence { .. })));
    }

    #[test]
    fn mse_key_mismatch() {
        let (s, _) = gen_var_chain(3, 100, 1).unwrap();
        let (other, _) = gen_var_chain(4, 100, 1).unwrap();
        let m = train(&s, &TrainConfig { epochs: 10, ..TrainConfig::default() }, 0).unwrap();
        assert!(fit_predict_mse(&m, &other).is_err());
    }

    #[test]
    fn constant_heldout_mse_is_squared_bias() {
        let mut w_in = DMatrix::zeros(2, 2);
        w_in[(0, 0)] = 0.5;
        w_in[(1, 1)] = 0.25;
        w_in[(0, 1)] = 0.1;
        let m = BottleneckModel::from_weights(w_in.clone(), DMatrix::identity(2, 2), 1).unwrap();
        let c = 3.0;
        let held = Series::from_matrix(DMatrix::from_element(20, 2, c)).unwrap();
        // prediction for every row is B [c, c]; target is [c, c]
        let pred0 = (0.5 + 0.1) * c;
        let pred1 = 0.25 * c;
        let expected = ((pred0 - c).powi(2) + (pred1 - c).powi(2)) / 2.0;
        let mse = fit_predict_mse(&m, &held).unwrap();
        assert!((mse - expected).abs() < 1e-12, "{mse} vs {expected}");
    }
}
