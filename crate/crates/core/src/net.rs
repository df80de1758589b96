//! Per-view multilayer perceptrons.
//!
//! Forward passes are pure and return an explicit tape; gradients, batch-norm
//! running-stat updates and Adam steps are separate operations so the trainer
//! controls exactly when state changes. All arithmetic is f64.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DeepIdaError, Result};
use crate::seeding;

/// Variance floor inside batch-norm denominators. Small enough that the
/// train-mode output variance stays within 1e-6 of 1 for unit-scale data.
pub const BN_EPS: f64 = 1e-8;
/// Running-stat update momentum: `running = (1 - m) * running + m * batch`.
/// Batch statistics use the biased (1/n) variance, and the same biased value
/// feeds the running estimate, so long-run running stats converge to batch
/// stats exactly.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    LeakyRelu { slope: f64 },
}

impl Activation {
    fn apply(&self, z: f64) -> f64 {
        match *self {
            Activation::Identity => z,
            Activation::LeakyRelu { slope } => {
                if z > 0.0 {
                    z
                } else {
                    slope * z
                }
            }
        }
    }

    fn grad(&self, z: f64) -> f64 {
        match *self {
            Activation::Identity => 1.0,
            Activation::LeakyRelu { slope } => {
                if z > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if let Activation::LeakyRelu { slope } = *self {
            if !slope.is_finite() || slope < 0.0 {
                return Err(DeepIdaError::InvalidSpec(format!(
                    "leaky slope must be nonnegative and finite, got {slope}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub batch_norm: bool,
}

/// Architecture template that concretizes to [`LayerSpec`]s once the input
/// dimension is known. Hidden widths at or above the input dimension are
/// dropped, so the default 512-256-64-20 stack scales itself down for
/// narrower inputs (input 100 becomes 100-64-20).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkPlan {
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub batch_norm: bool,
}

impl Default for NetworkPlan {
    fn default() -> Self {
        NetworkPlan {
            hidden: vec![512, 256, 64],
            output_dim: 20,
            activation: Activation::LeakyRelu { slope: 0.1 },
            batch_norm: true,
        }
    }
}

impl NetworkPlan {
    pub fn layer_specs(&self, input_dim: usize) -> Result<Vec<LayerSpec>> {
        if input_dim == 0 {
            return Err(DeepIdaError::InvalidSpec("input dimension must be positive".into()));
        }
        if self.output_dim == 0 {
            return Err(DeepIdaError::InvalidSpec("output dimension must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(DeepIdaError::InvalidSpec("hidden width must be positive".into()));
        }
        self.activation.validate()?;
        let mut dims = vec![input_dim];
        dims.extend(self.hidden.iter().copied().filter(|&h| h < input_dim));
        dims.push(self.output_dim);
        Ok(dims
            .windows(2)
            .map(|w| LayerSpec {
                in_dim: w[0],
                out_dim: w[1],
                activation: self.activation,
                batch_norm: self.batch_norm,
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// Weight matrix, `out_dim x in_dim`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub activation: Activation,
    pub bn: Option<BatchNorm>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    layers: Vec<Layer>,
    mode: Mode,
    /// Bumped on every mutation; tapes remember the version they saw.
    version: u64,
}

#[derive(Debug, Clone)]
struct BnTape {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    mean: Array1<f64>,
    var: Array1<f64>,
}

#[derive(Debug, Clone)]
struct LayerTape {
    x_in: Array2<f64>,
    z: Array2<f64>,
    bn: Option<BnTape>,
}

/// Intermediate values of one forward pass, tied to the model version that
/// produced them.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    version: u64,
    mode: Mode,
    layers: Vec<LayerTape>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub dw: Array2<f64>,
    pub db: Array1<f64>,
    pub dgamma: Option<Array1<f64>>,
    pub dbeta: Option<Array1<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<LayerGrads>,
}

impl MlpModel {
    /// Initializes weights from a fan-in scaled uniform (std `sqrt(2/fan_in)`)
    /// and biases at zero; batch-norm scale 1, shift 0, running stats (0, 1).
    pub fn init(specs: &[LayerSpec], seed: u64) -> Result<Self> {
        if specs.is_empty() {
            return Err(DeepIdaError::InvalidSpec("network needs at least one layer".into()));
        }
        for (i, s) in specs.iter().enumerate() {
            if s.in_dim == 0 || s.out_dim == 0 {
                return Err(DeepIdaError::InvalidSpec(format!(
                    "layer {} has a zero dimension ({} -> {})",
                    i + 1,
                    s.in_dim,
                    s.out_dim
                )));
            }
            s.activation.validate()?;
            if i > 0 && specs[i - 1].out_dim != s.in_dim {
                return Err(DeepIdaError::InvalidSpec(format!(
                    "layer {} expects {} inputs but layer {} emits {}",
                    i + 1,
                    s.in_dim,
                    i,
                    specs[i - 1].out_dim
                )));
            }
        }
        let layers = specs
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut rng = seeding::rng(seed, &[seeding::tags::NET_INIT, i as u64]);
                let bound = (6.0 / s.in_dim as f64).sqrt();
                let w = Array2::from_shape_fn((s.out_dim, s.in_dim), |_| {
                    rng.random_range(-bound..bound)
                });
                let bn = s.batch_norm.then(|| BatchNorm {
                    gamma: Array1::ones(s.out_dim),
                    beta: Array1::zeros(s.out_dim),
                    running_mean: Array1::zeros(s.out_dim),
                    running_var: Array1::ones(s.out_dim),
                });
                Layer { w, b: Array1::zeros(s.out_dim), activation: s.activation, bn }
            })
            .collect();
        Ok(MlpModel { layers, mode: Mode::Train, version: 0 })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("nonempty").w.nrows()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        if self.mode != mode {
            self.mode = mode;
            self.version += 1;
        }
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Pure forward pass. Train mode normalizes with batch statistics, eval
    /// mode with stored running statistics; neither mutates the model.
    pub fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, ForwardTape)> {
        if x.ncols() != self.in_dim() {
            return Err(DeepIdaError::ShapeMismatch(format!(
                "input has {} columns, network expects {}",
                x.ncols(),
                self.in_dim()
            )));
        }
        if x.nrows() == 0 {
            return Err(DeepIdaError::InvalidInput("forward pass on an empty batch".into()));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(DeepIdaError::InvalidInput("input contains a non-finite value".into()));
        }
        let needs_bn = self.layers.iter().any(|l| l.bn.is_some());
        if self.mode == Mode::Train && needs_bn && x.nrows() < 2 {
            return Err(DeepIdaError::InvalidBatch(
                "train-mode batch norm needs at least 2 rows".into(),
            ));
        }
        let n = x.nrows() as f64;
        let mut cur = x.clone();
        let mut tapes = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let x_in = cur;
            let z = x_in.dot(&layer.w.t()) + &layer.b;
            let a = z.mapv(|v| layer.activation.apply(v));
            let (out, bn_tape) = match (&layer.bn, self.mode) {
                (None, _) => (a, None),
                (Some(bn), Mode::Train) => {
                    let mean = a.mean_axis(Axis(0)).expect("nonempty");
                    let centered = &a - &mean;
                    let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).expect("nonempty");
                    let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                    let xhat = &centered * &inv_std;
                    let y = &xhat * &bn.gamma + &bn.beta;
                    (y, Some(BnTape { xhat, inv_std, mean, var }))
                }
                (Some(bn), Mode::Eval) => {
                    let inv_std = bn.running_var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                    let y = (&a - &bn.running_mean) * &inv_std * &bn.gamma + &bn.beta;
                    (y, None)
                }
            };
            tapes.push(LayerTape { x_in, z, bn: bn_tape });
            cur = out;
        }
        let _ = n;
        Ok((cur, ForwardTape { version: self.version, mode: self.mode, layers: tapes }))
    }

    /// Folds the batch statistics recorded on `tape` into the running
    /// statistics. Call after the backward pass and before the optimizer step.
    pub fn absorb_batch_stats(&mut self, tape: &ForwardTape) -> Result<()> {
        if tape.version != self.version {
            return Err(DeepIdaError::InvalidTape(format!(
                "tape was recorded at model version {}, model is at {}",
                tape.version, self.version
            )));
        }
        if tape.mode != Mode::Train {
            return Err(DeepIdaError::InvalidTape(
                "running stats can only be absorbed from a train-mode tape".into(),
            ));
        }
        for (layer, lt) in self.layers.iter_mut().zip(&tape.layers) {
            if let (Some(bn), Some(bt)) = (layer.bn.as_mut(), lt.bn.as_ref()) {
                bn.running_mean =
                    &bn.running_mean * (1.0 - BN_MOMENTUM) + &bt.mean * BN_MOMENTUM;
                bn.running_var = &bn.running_var * (1.0 - BN_MOMENTUM) + &bt.var * BN_MOMENTUM;
            }
        }
        self.version += 1;
        Ok(())
    }

    /// Flat parameter vector: per layer `w` row-major, then `b`, then
    /// batch-norm `gamma` and `beta` when present.
    pub fn param_vector(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for l in &self.layers {
            v.extend(l.w.iter());
            v.extend(l.b.iter());
            if let Some(bn) = &l.bn {
                v.extend(bn.gamma.iter());
                v.extend(bn.beta.iter());
            }
        }
        v
    }

    pub fn set_param_vector(&mut self, v: &[f64]) -> Result<()> {
        let mut it = v.iter();
        for l in &mut self.layers {
            for w in l.w.iter_mut() {
                *w = *it.next().ok_or_else(|| {
                    DeepIdaError::ShapeMismatch("parameter vector too short".into())
                })?;
            }
            for b in l.b.iter_mut() {
                *b = *it.next().ok_or_else(|| {
                    DeepIdaError::ShapeMismatch("parameter vector too short".into())
                })?;
            }
            if let Some(bn) = &mut l.bn {
                for g in bn.gamma.iter_mut().chain(bn.beta.iter_mut()) {
                    *g = *it.next().ok_or_else(|| {
                        DeepIdaError::ShapeMismatch("parameter vector too short".into())
                    })?;
                }
            }
        }
        if it.next().is_some() {
            return Err(DeepIdaError::ShapeMismatch("parameter vector too long".into()));
        }
        self.version += 1;
        Ok(())
    }
}

/// Backpropagates `grad_out` (gradient of a scalar loss in the network
/// output) through the tape, returning parameter gradients. The model is not
/// modified; the tape must come from a train-mode forward at the current
/// parameter version.
pub fn backward(model: &MlpModel, tape: &ForwardTape, grad_out: &Array2<f64>) -> Result<ParamGrads> {
    if tape.version != model.version {
        return Err(DeepIdaError::InvalidTape(format!(
            "tape was recorded at model version {}, model is at {}",
            tape.version, model.version
        )));
    }
    if tape.mode != Mode::Train {
        return Err(DeepIdaError::InvalidTape("gradients need a train-mode tape".into()));
    }
    let last = tape.layers.last().expect("nonempty");
    let n_rows = last.z.nrows();
    if grad_out.nrows() != n_rows || grad_out.ncols() != model.out_dim() {
        return Err(DeepIdaError::ShapeMismatch(format!(
            "output gradient is {}x{}, expected {}x{}",
            grad_out.nrows(),
            grad_out.ncols(),
            n_rows,
            model.out_dim()
        )));
    }
    if !grad_out.iter().all(|v| v.is_finite()) {
        return Err(DeepIdaError::InvalidInput("output gradient is non-finite".into()));
    }

    let n = n_rows as f64;
    let mut grads_rev = Vec::with_capacity(model.layers.len());
    let mut g = grad_out.clone();
    for (layer, lt) in model.layers.iter().zip(&tape.layers).rev() {
        let (da, dgamma, dbeta) = match (&layer.bn, &lt.bn) {
            (Some(bn), Some(bt)) => {
                let dbeta = g.sum_axis(Axis(0));
                let dgamma = (&g * &bt.xhat).sum_axis(Axis(0));
                let dxhat = &g * &bn.gamma;
                let mean_dxhat = dxhat.mean_axis(Axis(0)).expect("nonempty");
                let mean_dxhat_xhat =
                    (&dxhat * &bt.xhat).mean_axis(Axis(0)).expect("nonempty");
                let da =
                    (&(&dxhat - &mean_dxhat) - &(&bt.xhat * &mean_dxhat_xhat)) * &bt.inv_std;
                (da, Some(dgamma), Some(dbeta))
            }
            (None, None) => (g.clone(), None, None),
            _ => {
                return Err(DeepIdaError::InvalidTape(
                    "tape layout does not match the model's batch-norm layout".into(),
                ))
            }
        };
        let dz = &da * &lt.z.mapv(|z| layer.activation.grad(z));
        let dw = dz.t().dot(&lt.x_in);
        let db = dz.sum_axis(Axis(0));
        g = dz.dot(&layer.w);
        grads_rev.push(LayerGrads { dw, db, dgamma, dbeta });
    }
    let _ = n;
    grads_rev.reverse();
    Ok(ParamGrads { layers: grads_rev })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { alpha: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(DeepIdaError::InvalidInput(format!(
                "Adam step size must be positive, got {}",
                self.alpha
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(DeepIdaError::InvalidInput(format!(
                    "Adam {name} must lie in [0, 1), got {b}"
                )));
            }
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(DeepIdaError::InvalidInput(format!(
                "Adam epsilon must be positive, got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MomentSet {
    w: Array2<f64>,
    b: Array1<f64>,
    gamma: Option<Array1<f64>>,
    beta: Option<Array1<f64>>,
}

/// First/second moment accumulators plus the step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    step: u64,
    m: Vec<MomentSet>,
    v: Vec<MomentSet>,
}

impl AdamState {
    pub fn new(model: &MlpModel) -> Self {
        let zeros = |layer: &Layer| MomentSet {
            w: Array2::zeros(layer.w.raw_dim()),
            b: Array1::zeros(layer.b.len()),
            gamma: layer.bn.as_ref().map(|bn| Array1::zeros(bn.gamma.len())),
            beta: layer.bn.as_ref().map(|bn| Array1::zeros(bn.beta.len())),
        };
        AdamState {
            step: 0,
            m: model.layers.iter().map(zeros).collect(),
            v: model.layers.iter().map(zeros).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

fn adam_update<'a, I, J, K>(params: I, grads: J, moments: K, t: f64, hp: &AdamParams)
where
    I: Iterator<Item = &'a mut f64>,
    J: Iterator<Item = &'a f64>,
    K: Iterator<Item = (&'a mut f64, &'a mut f64)>,
{
    let bc1 = 1.0 - hp.beta1.powf(t);
    let bc2 = 1.0 - hp.beta2.powf(t);
    for ((p, &g), (m, v)) in params.zip(grads).zip(moments) {
        *m = hp.beta1 * *m + (1.0 - hp.beta1) * g;
        *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g;
        let mhat = *m / bc1;
        let vhat = *v / bc2;
        *p -= hp.alpha * mhat / (vhat.sqrt() + hp.eps);
    }
}

/// One Adam step with bias correction over every trainable tensor.
pub fn adam_step(
    model: &mut MlpModel,
    grads: &ParamGrads,
    state: &mut AdamState,
    hp: &AdamParams,
) -> Result<()> {
    hp.validate()?;
    if grads.layers.len() != model.layers.len() || state.m.len() != model.layers.len() {
        return Err(DeepIdaError::ShapeMismatch(
            "gradient/state layer count does not match the model".into(),
        ));
    }
    for (i, (layer, g)) in model.layers.iter().zip(&grads.layers).enumerate() {
        if g.dw.raw_dim() != layer.w.raw_dim()
            || g.db.len() != layer.b.len()
            || g.dgamma.is_some() != layer.bn.is_some()
        {
            return Err(DeepIdaError::ShapeMismatch(format!(
                "gradient shape mismatch at layer {}",
                i + 1
            )));
        }
        let finite = g.dw.iter().all(|v| v.is_finite())
            && g.db.iter().all(|v| v.is_finite())
            && g.dgamma.iter().all(|a| a.iter().all(|v| v.is_finite()))
            && g.dbeta.iter().all(|a| a.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(DeepIdaError::InvalidInput(format!(
                "non-finite gradient at layer {}",
                i + 1
            )));
        }
    }
    let t = (state.step + 1) as f64;
    for ((layer, g), (ms, vs)) in model
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        adam_update(
            layer.w.iter_mut(),
            g.dw.iter(),
            ms.w.iter_mut().zip(vs.w.iter_mut()),
            t,
            hp,
        );
        adam_update(
            layer.b.iter_mut(),
            g.db.iter(),
            ms.b.iter_mut().zip(vs.b.iter_mut()),
            t,
            hp,
        );
        if let (Some(bn), Some(dg), Some(db2)) = (layer.bn.as_mut(), &g.dgamma, &g.dbeta) {
            adam_update(
                bn.gamma.iter_mut(),
                dg.iter(),
                ms.gamma.as_mut().unwrap().iter_mut().zip(vs.gamma.as_mut().unwrap().iter_mut()),
                t,
                hp,
            );
            adam_update(
                bn.beta.iter_mut(),
                db2.iter(),
                ms.beta.as_mut().unwrap().iter_mut().zip(vs.beta.as_mut().unwrap().iter_mut()),
                t,
                hp,
            );
        }
    }
    state.step += 1;
    model.version += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand_distr::StandardNormal;

    fn spec(in_dim: usize, out_dim: usize, bn: bool) -> LayerSpec {
        LayerSpec {
            in_dim,
            out_dim,
            activation: Activation::LeakyRelu { slope: 0.1 },
            batch_norm: bn,
        }
    }

    fn random_input(n: usize, p: usize, seed: u64) -> Array2<f64> {
        use rand::Rng;
        let mut rng = seeding::rng(seed, &[1]);
        Array2::from_shape_fn((n, p), |_| rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn init_shapes_and_defaults() {
        let m = MlpModel::init(&[spec(4, 3, true), spec(3, 2, true)], 1).unwrap();
        assert_eq!(m.layers()[0].w.dim(), (3, 4));
        assert_eq!(m.layers()[1].w.dim(), (2, 3));
        assert!(m.layers().iter().all(|l| l.b.iter().all(|&b| b == 0.0)));
        let bn = m.layers()[0].bn.as_ref().unwrap();
        assert!(bn.gamma.iter().all(|&g| g == 1.0));
        assert!(bn.beta.iter().all(|&b| b == 0.0));
        assert!(bn.running_mean.iter().all(|&v| v == 0.0));
        assert!(bn.running_var.iter().all(|&v| v == 1.0));
        assert_eq!(m.mode(), Mode::Train);
    }

    #[test]
    fn init_rejects_bad_chains() {
        assert!(matches!(
            MlpModel::init(&[spec(4, 3, false), spec(2, 2, false)], 1),
            Err(DeepIdaError::InvalidSpec(_))
        ));
        assert!(MlpModel::init(&[], 1).is_err());
        assert!(MlpModel::init(&[spec(0, 3, false)], 1).is_err());
        let bad_slope = LayerSpec {
            in_dim: 2,
            out_dim: 2,
            activation: Activation::LeakyRelu { slope: -0.5 },
            batch_norm: false,
        };
        assert!(MlpModel::init(&[bad_slope], 1).is_err());
    }

    #[test]
    fn init_weight_std_matches_fan_in_scaling() {
        // 512 -> 20 gives 10240 samples of the fan-in-512 distribution
        let m = MlpModel::init(&[spec(512, 20, false)], 7).unwrap();
        let w = &m.layers()[0].w;
        let n = w.len() as f64;
        let mean = w.sum() / n;
        let std = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let target = (2.0 / 512.0_f64).sqrt();
        assert!(
            (std - target).abs() < 0.1 * target,
            "weight std {std:.5} vs target {target:.5}"
        );
        // bounded support of the scaled uniform
        let bound = (6.0 / 512.0_f64).sqrt();
        assert!(w.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = MlpModel::init(&[spec(6, 4, true)], 3).unwrap();
        let b = MlpModel::init(&[spec(6, 4, true)], 3).unwrap();
        let c = MlpModel::init(&[spec(6, 4, true)], 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn leaky_relu_values() {
        let act = Activation::LeakyRelu { slope: 0.1 };
        assert_eq!(act.apply(-2.0), -0.2);
        assert_eq!(act.apply(3.0), 3.0);
        assert_eq!(act.grad(-2.0), 0.1);
        assert_eq!(act.grad(3.0), 1.0);
    }

    #[test]
    fn train_mode_batch_norm_standardizes_columns() {
        let m = MlpModel::init(&[spec(10, 6, true)], 5).unwrap();
        let x = random_input(64, 10, 9);
        let (h, _) = m.forward(&x).unwrap();
        for col in h.columns() {
            let n = col.len() as f64;
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-12, "batch-norm output mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "batch-norm output variance {var}");
        }
    }

    #[test]
    fn forward_is_pure_and_repeatable() {
        let m = MlpModel::init(&[spec(5, 4, true), spec(4, 3, true)], 11).unwrap();
        let before = serde_json::to_vec(&m).unwrap();
        let x = random_input(16, 5, 2);
        let (h1, tape) = m.forward(&x).unwrap();
        let (h2, _) = m.forward(&x).unwrap();
        assert_eq!(h1, h2);
        let g = backward(&m, &tape, &Array2::ones((16, 3))).unwrap();
        assert_eq!(g.layers.len(), 2);
        assert_eq!(serde_json::to_vec(&m).unwrap(), before, "forward/backward mutated the model");
    }

    #[test]
    fn forward_shape_and_batch_guards() {
        let m = MlpModel::init(&[spec(5, 4, true)], 11).unwrap();
        assert!(matches!(
            m.forward(&Array2::zeros((3, 4))),
            Err(DeepIdaError::ShapeMismatch(_))
        ));
        assert!(matches!(
            m.forward(&Array2::zeros((1, 5))),
            Err(DeepIdaError::InvalidBatch(_))
        ));
        let mut nan = Array2::zeros((4, 5));
        nan[[0, 0]] = f64::NAN;
        assert!(matches!(m.forward(&nan), Err(DeepIdaError::InvalidInput(_))));
    }

    #[test]
    fn eval_mode_is_deterministic_and_uses_running_stats() {
        let mut m = MlpModel::init(&[spec(4, 3, true)], 13).unwrap();
        let x = random_input(32, 4, 3);
        let (train_out, tape) = m.forward(&x).unwrap();
        m.absorb_batch_stats(&tape).unwrap();
        m.set_mode(Mode::Eval);
        let (e1, _) = m.forward(&x).unwrap();
        let (e2, _) = m.forward(&x).unwrap();
        assert_eq!(e1, e2);
        // one absorb step leaves running stats far from batch stats
        assert!((&e1 - &train_out).mapv(f64::abs).sum() > 1e-3);
    }

    #[test]
    fn absorbing_same_batch_converges_running_to_batch_stats() {
        let mut m = MlpModel::init(&[spec(4, 3, true)], 13).unwrap();
        let x = random_input(32, 4, 3);
        let (train_out, _) = m.forward(&x).unwrap();
        for _ in 0..400 {
            let (_, tape) = m.forward(&x).unwrap();
            m.absorb_batch_stats(&tape).unwrap();
        }
        m.set_mode(Mode::Eval);
        let (eval_out, _) = m.forward(&x).unwrap();
        let diff = (&eval_out - &train_out).mapv(f64::abs).sum();
        assert!(diff < 1e-8, "eval output drifted {diff} from train output");
    }

    #[test]
    fn backward_matches_finite_differences() {
        let specs = [spec(6, 5, true), spec(5, 3, true)];
        let model = MlpModel::init(&specs, 21).unwrap();
        let x = random_input(12, 6, 4);
        // scalar loss: sum of fixed weights times outputs
        let wloss = random_input(12, 3, 8);
        let (_, tape) = model.forward(&x).unwrap();
        let analytic = backward(&model, &tape, &wloss).unwrap();
        let flat_analytic: Vec<f64> = analytic
            .layers
            .iter()
            .flat_map(|l| {
                l.dw.iter()
                    .chain(l.db.iter())
                    .chain(l.dgamma.iter().flatten())
                    .chain(l.dbeta.iter().flatten())
                    .copied()
                    .collect::<Vec<_>>()
            })
            .collect();

        let theta = model.param_vector();
        let h = 1e-6;
        let mut fd = Vec::with_capacity(theta.len());
        for i in 0..theta.len() {
            let mut plus = model.clone();
            let mut minus = model.clone();
            let mut tp = theta.clone();
            tp[i] += h;
            plus.set_param_vector(&tp).unwrap();
            tp[i] -= 2.0 * h;
            minus.set_param_vector(&tp).unwrap();
            let lp = (&plus.forward(&x).unwrap().0 * &wloss).sum();
            let lm = (&minus.forward(&x).unwrap().0 * &wloss).sum();
            fd.push((lp - lm) / (2.0 * h));
        }
        let num: f64 = flat_analytic
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let den: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        assert!(num / den < 1e-6, "gradient relative error {:.3e}", num / den);
    }

    #[test]
    fn backward_rejects_stale_and_eval_tapes() {
        let mut m = MlpModel::init(&[spec(4, 3, true)], 17).unwrap();
        let x = random_input(8, 4, 5);
        let (_, tape) = m.forward(&x).unwrap();
        let grads = backward(&m, &tape, &Array2::ones((8, 3))).unwrap();
        let mut state = AdamState::new(&m);
        adam_step(&mut m, &grads, &mut state, &AdamParams::default()).unwrap();
        assert!(matches!(
            backward(&m, &tape, &Array2::ones((8, 3))),
            Err(DeepIdaError::InvalidTape(_))
        ));
        m.set_mode(Mode::Eval);
        let (_, eval_tape) = m.forward(&x).unwrap();
        assert!(matches!(
            backward(&m, &eval_tape, &Array2::ones((8, 3))),
            Err(DeepIdaError::InvalidTape(_))
        ));
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut m = MlpModel::init(&[spec(3, 2, true)], 23).unwrap();
        let before = m.param_vector();
        let zero = ParamGrads {
            layers: vec![LayerGrads {
                dw: Array2::zeros((2, 3)),
                db: Array1::zeros(2),
                dgamma: Some(Array1::zeros(2)),
                dbeta: Some(Array1::zeros(2)),
            }],
        };
        let mut state = AdamState::new(&m);
        adam_step(&mut m, &zero, &mut state, &AdamParams::default()).unwrap();
        assert_eq!(m.param_vector(), before);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn adam_first_step_closed_form() {
        let mut m = MlpModel::init(&[LayerSpec {
            in_dim: 2,
            out_dim: 1,
            activation: Activation::Identity,
            batch_norm: false,
        }], 29)
        .unwrap();
        let before = m.param_vector();
        let g = vec![0.3, -4.0, 0.0];
        let grads = ParamGrads {
            layers: vec![LayerGrads {
                dw: Array2::from_shape_vec((1, 2), g[0..2].to_vec()).unwrap(),
                db: Array1::from_vec(vec![g[2]]),
                dgamma: None,
                dbeta: None,
            }],
        };
        let hp = AdamParams::default();
        let mut state = AdamState::new(&m);
        adam_step(&mut m, &grads, &mut state, &hp).unwrap();
        let after = m.param_vector();
        for ((&b, &a), &gi) in before.iter().zip(&after).zip(&g) {
            // bias correction at t=1 makes mhat = g, vhat = g^2
            let expect = b - hp.alpha * gi / (gi.abs() + hp.eps);
            assert_abs_diff_eq!(a, expect, epsilon = 1e-15);
        }
    }

    #[test]
    fn adam_descends_a_quadratic_bowl() {
        let mut m = MlpModel::init(&[LayerSpec {
            in_dim: 3,
            out_dim: 3,
            activation: Activation::Identity,
            batch_norm: false,
        }], 31)
        .unwrap();
        let target = random_input(3, 3, 6);
        let mut state = AdamState::new(&m);
        let hp = AdamParams { alpha: 0.05, ..AdamParams::default() };
        let loss = |m: &MlpModel| {
            m.layers()[0]
                .w
                .iter()
                .zip(target.iter())
                .map(|(w, t)| (w - t).powi(2))
                .sum::<f64>()
        };
        let initial = loss(&m);
        for _ in 0..200 {
            let dw = (&m.layers()[0].w - &target) * 2.0;
            let grads = ParamGrads {
                layers: vec![LayerGrads {
                    dw,
                    db: Array1::zeros(3),
                    dgamma: None,
                    dbeta: None,
                }],
            };
            adam_step(&mut m, &grads, &mut state, &hp).unwrap();
        }
        assert!(
            loss(&m) < initial / 100.0,
            "bowl loss only moved from {initial:.4} to {:.4}",
            loss(&m)
        );
    }

    #[test]
    fn adam_rejects_mismatched_and_nonfinite_grads() {
        let mut m = MlpModel::init(&[spec(3, 2, false)], 37).unwrap();
        let mut state = AdamState::new(&m);
        let wrong = ParamGrads {
            layers: vec![LayerGrads {
                dw: Array2::zeros((2, 4)),
                db: Array1::zeros(2),
                dgamma: None,
                dbeta: None,
            }],
        };
        assert!(matches!(
            adam_step(&mut m, &wrong, &mut state, &AdamParams::default()),
            Err(DeepIdaError::ShapeMismatch(_))
        ));
        let nan = ParamGrads {
            layers: vec![LayerGrads {
                dw: Array2::from_elem((2, 3), f64::NAN),
                db: Array1::zeros(2),
                dgamma: None,
                dbeta: None,
            }],
        };
        assert!(matches!(
            adam_step(&mut m, &nan, &mut state, &AdamParams::default()),
            Err(DeepIdaError::InvalidInput(_))
        ));
        let bad = AdamParams { alpha: -1.0, ..AdamParams::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn model_serialization_round_trips_bit_exactly() {
        let mut m = MlpModel::init(&[spec(5, 4, true), spec(4, 2, true)], 41).unwrap();
        let x = random_input(10, 5, 7);
        let (_, tape) = m.forward(&x).unwrap();
        m.absorb_batch_stats(&tape).unwrap();
        let bytes = serde_json::to_vec(&m).unwrap();
        let back: MlpModel = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(back, m);
        let p1 = m.param_vector();
        let p2 = back.param_vector();
        assert!(p1.iter().zip(&p2).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(serde_json::to_vec(&back).unwrap(), bytes);
    }

    #[test]
    fn network_plan_scales_down_for_narrow_inputs() {
        let plan = NetworkPlan::default();
        let dims = |input: usize| {
            plan.layer_specs(input)
                .unwrap()
                .iter()
                .map(|s| s.out_dim)
                .collect::<Vec<_>>()
        };
        assert_eq!(dims(1000), vec![512, 256, 64, 20]);
        assert_eq!(dims(100), vec![64, 20]);
        assert_eq!(dims(300), vec![256, 64, 20]);
        assert_eq!(dims(64), vec![20]);
        assert_eq!(plan.layer_specs(1000).unwrap()[0].in_dim, 1000);
        assert!(plan.layer_specs(0).is_err());
    }

    #[test]
    fn param_vector_round_trip() {
        let mut m = MlpModel::init(&[spec(4, 3, true)], 43).unwrap();
        let v = m.param_vector();
        assert_eq!(v.len(), 3 * 4 + 3 + 3 + 3);
        let doubled: Vec<f64> = v.iter().map(|x| x * 2.0).collect();
        m.set_param_vector(&doubled).unwrap();
        assert_eq!(m.param_vector(), doubled);
        assert!(m.set_param_vector(&doubled[1..]).is_err());
    }
}
