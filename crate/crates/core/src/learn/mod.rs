//! Unsupervised optimization of the inhibition filter `T` and the feature transform `A`
//! on the multi-resolution spectral loss.

mod gradient;

use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::InhibitionFilter;
use crate::descriptors::{FeatureSet, FeatureTransform};
use crate::error::{Error, Result};
use crate::pointwise::Schedule;
use crate::spectral::Spectrum;

use gradient::{directed, Side};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
    Sgd,
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GradientMode {
    #[default]
    Analytic,
    /// Central differences with step `h`.
    FiniteDifference {
        h: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    /// Softmax temperature of the soft map.
    pub alpha: f64,
    pub schedule: Schedule,
    pub seed: u64,
    /// Reshuffle the pair order every epoch instead of plain round-robin.
    pub shuffle: bool,
    pub optimizer: Optimizer,
    pub gradient: GradientMode,
    /// Adds the Y -> X term to the loss.
    pub bidirectional: bool,
    pub learn_basis: bool,
    pub learn_transform: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            iterations: 200,
            alpha: 0.07,
            schedule: Schedule::new(20, 40, 10),
            seed: 0,
            shuffle: false,
            optimizer: Optimizer::default(),
            gradient: GradientMode::Analytic,
            bidirectional: false,
            learn_basis: true,
            learn_transform: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, k: usize) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {}", self.alpha)));
        }
        if let GradientMode::FiniteDifference { h } = self.gradient {
            if !(h > 0.0) {
                return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {h}")));
            }
        }
        if let Optimizer::Adam { beta1, beta2, epsilon } = self.optimizer {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && epsilon > 0.0) {
                return Err(Error::InvalidArgument("Adam needs 0 <= beta < 1 and epsilon > 0".into()));
            }
        }
        self.schedule.validate(k)
    }
}

/// Precomputed data of one shape.
#[derive(Debug, Clone)]
pub struct ShapeData {
    pub spectrum: Arc<Spectrum>,
    pub features: FeatureSet,
}

#[derive(Debug, Clone)]
pub struct TrainPair {
    pub x: Arc<ShapeData>,
    pub y: Arc<ShapeData>,
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    t: (Vec<f64>, Vec<f64>),
    a: (DMatrix<f64>, DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub filter: InhibitionFilter,
    pub transform: FeatureTransform,
    pub loss_history: Vec<f64>,
    pub iteration: usize,
    moments: Moments,
}

impl TrainState {
    /// `T = 0` over `k` indices and the identity transform on `d` channels.
    pub fn new(k: usize, d: usize) -> Self {
        Self::from_parts(InhibitionFilter::identity(k), FeatureTransform::identity(d, d))
    }

    pub fn from_parts(filter: InhibitionFilter, transform: FeatureTransform) -> Self {
        let (k, r, c) = (filter.k(), transform.input_dim(), transform.output_dim());
        TrainState {
            filter,
            transform,
            loss_history: Vec::new(),
            iteration: 0,
            moments: Moments { t: (vec![0.0; k], vec![0.0; k]), a: (DMatrix::zeros(r, c), DMatrix::zeros(r, c)) },
        }
    }

    /// `iteration,loss` rows.
    pub fn write_loss_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "iteration,loss")?;
        for (i, l) in self.loss_history.iter().enumerate() {
            writeln!(out, "{i},{l:?}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub loss: f64,
    /// `dL/dt_i` for every index of the filter.
    pub grad_t: Vec<f64>,
    /// `dL/dA`, same shape as the transform.
    pub grad_a: DMatrix<f64>,
}

fn check_pair(pair: &TrainPair, k: usize, transform: &FeatureTransform) -> Result<()> {
    for side in [&pair.x, &pair.y] {
        if side.spectrum.k() < k {
            return Err(Error::DimensionMismatch(format!("spectrum has k = {}, filter needs {k}", side.spectrum.k())));
        }
        if side.features.dim() != transform.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "features have {} channels, transform expects {}",
                side.features.dim(),
                transform.input_dim()
            )));
        }
        if side.features.vertex_count() != side.spectrum.vertex_count() {
            return Err(Error::DimensionMismatch("features and spectrum cover different vertex sets".into()));
        }
    }
    Ok(())
}

fn side(data: &ShapeData, k: usize) -> Side<'_> {
    Side { phi: data.spectrum.phi().columns(0, k), mass: data.spectrum.mass(), features: data.features.values() }
}

fn evaluate(
    pair: &TrainPair,
    t: &[f64],
    a: &DMatrix<f64>,
    config: &TrainConfig,
    want_grad: bool,
) -> Result<LossGradient> {
    let big_k = config.schedule.k_end;
    let gains: Vec<f64> = t.iter().map(|t| (-t).exp()).collect();
    let ks = config.schedule.ks();
    let (x, y) = (side(&pair.x, big_k), side(&pair.y, big_k));
    let mut out = directed(&x, &y, a, &gains, config.alpha, &ks, want_grad)?;
    if config.bidirectional {
        let back = directed(&y, &x, a, &gains, config.alpha, &ks, want_grad)?;
        out.loss += back.loss;
        for (g, b) in out.grad_g.iter_mut().zip(back.grad_g) {
            *g += b;
        }
        out.grad_a += back.grad_a;
    }
    let mut grad_t = vec![0.0; t.len()];
    for (i, dg) in out.grad_g.iter().enumerate() {
        grad_t[i] = -gains[i] * dg;
    }
    Ok(LossGradient { loss: out.loss, grad_t, grad_a: out.grad_a })
}

/// Loss and gradients at the state's parameters. Gradients of parameters the config does not
/// learn are reported as zero; `FiniteDifference` mode differences only the learned ones.
pub fn loss_and_gradient(state: &TrainState, pair: &TrainPair, config: &TrainConfig) -> Result<LossGradient> {
    let t = state.filter.t();
    let a = state.transform.matrix();
    config.validate(t.len())?;
    check_pair(pair, t.len(), &state.transform)?;
    let mut out = match config.gradient {
        GradientMode::Analytic => evaluate(pair, t, a, config, true)?,
        GradientMode::FiniteDifference { h } => {
            let loss = evaluate(pair, t, a, config, false)?.loss;
            let f = |t: &[f64], a: &DMatrix<f64>| evaluate(pair, t, a, config, false).map(|r| r.loss);
            let mut grad_t = vec![0.0; t.len()];
            if config.learn_basis {
                let mut tp = t.to_vec();
                for i in 0..t.len() {
                    tp[i] = t[i] + h;
                    let up = f(&tp, a)?;
                    tp[i] = t[i] - h;
                    let down = f(&tp, a)?;
                    tp[i] = t[i];
                    grad_t[i] = (up - down) / (2.0 * h);
                }
            }
            let mut grad_a = DMatrix::zeros(a.nrows(), a.ncols());
            if config.learn_transform {
                let mut ap = a.clone();
                for idx in 0..a.len() {
                    ap[idx] = a[idx] + h;
                    let up = f(t, &ap)?;
                    ap[idx] = a[idx] - h;
                    let down = f(t, &ap)?;
                    ap[idx] = a[idx];
                    grad_a[idx] = (up - down) / (2.0 * h);
                }
            }
            LossGradient { loss, grad_t, grad_a }
        }
    };
    if !config.learn_basis {
        out.grad_t.iter_mut().for_each(|g| *g = 0.0);
    }
    if !config.learn_transform {
        out.grad_a.fill(0.0);
    }
    Ok(out)
}

/// Loss only, at arbitrary parameters.
pub fn loss_at(
    pair: &TrainPair,
    filter: &InhibitionFilter,
    transform: &FeatureTransform,
    config: &TrainConfig,
) -> Result<f64> {
    check_pair(pair, filter.k(), transform)?;
    Ok(evaluate(pair, filter.t(), transform.matrix(), config, false)?.loss)
}

/// Runs `config.iterations` steps from the initial state.
pub fn train(pairs: &[TrainPair], config: &TrainConfig) -> Result<TrainState> {
    let first = pairs.first().ok_or_else(|| Error::InvalidArgument("training needs at least one pair".into()))?;
    let k = first.x.spectrum.k().min(first.y.spectrum.k());
    let state = TrainState::new(k, first.x.features.dim());
    train_from(state, pairs, config)
}

/// Continues optimization from `state`.
pub fn train_from(mut state: TrainState, pairs: &[TrainPair], config: &TrainConfig) -> Result<TrainState> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("training needs at least one pair".into()));
    }
    config.validate(state.filter.k())?;
    for pair in pairs {
        check_pair(pair, state.filter.k(), &state.transform)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for step in 0..config.iterations {
        let slot = step % pairs.len();
        if slot == 0 && config.shuffle {
            order.shuffle(&mut rng);
        }
        let it = state.iteration;
        let lg = match loss_and_gradient(&state, &pairs[order[slot]], config) {
            Ok(lg) => lg,
            Err(Error::Numerical(_)) => return Err(Error::NonFiniteLoss(it)),
            Err(e) => return Err(e),
        };
        if !lg.loss.is_finite() || lg.grad_t.iter().chain(lg.grad_a.iter()).any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss(it));
        }
        state.loss_history.push(lg.loss);
        apply_step(&mut state, &lg, config)?;
        state.iteration += 1;
    }
    Ok(state)
}

fn apply_step(state: &mut TrainState, lg: &LossGradient, config: &TrainConfig) -> Result<()> {
    let lr = config.learning_rate;
    let step = (state.iteration + 1) as i32;
    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| match config.optimizer {
        Optimizer::Sgd => *p -= lr * g,
        Optimizer::Adam { beta1, beta2, epsilon } => {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / (1.0 - beta1.powi(step));
            let v_hat = *v / (1.0 - beta2.powi(step));
            *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    };
    if config.learn_basis {
        let mut t = state.filter.t().to_vec();
        let (m, v) = &mut state.moments.t;
        for i in 0..t.len() {
            update(&mut t[i], lg.grad_t[i], &mut m[i], &mut v[i]);
        }
        state.filter = InhibitionFilter::projected(t)?;
    }
    if config.learn_transform {
        let mut a = state.transform.matrix().clone();
        let (m, v) = &mut state.moments.a;
        for i in 0..a.len() {
            update(&mut a[i], lg.grad_a[i], &mut m[i], &mut v[i]);
        }
        state.transform = FeatureTransform::new(a).map_err(|_| Error::NonFiniteLoss(state.iteration))?;
    }
    Ok(())
}

/// `(index, gain)` for every basis index, in order.
pub fn inhibition_profile(state: &TrainState) -> Vec<(usize, f64)> {
    state.filter.gains().into_iter().enumerate().collect()
}

/// Mean gain over the lowest and the highest quarter of indices.
pub fn quartile_means(gains: &[f64]) -> (f64, f64) {
    let q = (gains.len() / 4).max(1);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    (mean(&gains[..q]), mean(&gains[gains.len() - q..]))
}

pub fn write_profile_csv<W: Write>(profile: &[(usize, f64)], mut out: W) -> Result<()> {
    writeln!(out, "index,gain")?;
    for (i, g) in profile {
        writeln!(out, "{i},{g:?}")?;
    }
    Ok(())
}
