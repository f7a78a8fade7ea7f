//! Lagged-feature samples and the PReLU multilayer perceptron that maps them
//! to future braking intensity.
//!
//! Each sample at time `t` holds, for every feature series, the values at
//! `t − 200, t − 150, …, t` ms, followed by the measured brake at the same
//! lags; the target is the brake at `t + Δt`.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::signal::BrakeTrace;
use crate::spectral::FeatureSeries;
use crate::{Error, Result};

pub const LAGS: usize = 5;
pub const LAG_STEP_MS: f64 = 50.0;
pub const HIDDEN: [usize; 4] = [30, 20, 10, 5];
const INIT_SLOPE: f64 = 0.25;

/// Raw (unscaled) lagged inputs and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub inputs: DMatrix<f64>,
    pub targets: Vec<f64>,
    /// Feature timestamp `t` of each sample; the target sits at `t + Δt`.
    pub timestamps_ms: Vec<f64>,
    pub delta_t_ms: f64,
    pub include_brake: bool,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_inputs(&self) -> usize {
        self.inputs.ncols()
    }

    /// Stacks sample sets built with the same layout.
    pub fn concat(sets: &[SampleSet]) -> Result<SampleSet> {
        let first = sets.first().ok_or_else(|| Error::invalid("no sample sets to join"))?;
        let cols = first.n_inputs();
        if sets.iter().any(|s| s.n_inputs() != cols || s.include_brake != first.include_brake) {
            return Err(Error::invalid("sample sets differ in layout"));
        }
        let n: usize = sets.iter().map(SampleSet::len).sum();
        let mut inputs = DMatrix::zeros(n, cols);
        let mut row = 0;
        for s in sets {
            inputs.rows_mut(row, s.len()).copy_from(&s.inputs);
            row += s.len();
        }
        Ok(SampleSet {
            inputs,
            targets: sets.iter().flat_map(|s| s.targets.iter().copied()).collect(),
            timestamps_ms: sets.iter().flat_map(|s| s.timestamps_ms.iter().copied()).collect(),
            delta_t_ms: first.delta_t_ms,
            include_brake: first.include_brake,
        })
    }
}

pub fn n_inputs(n_features: usize, include_brake: bool) -> usize {
    LAGS * (n_features + usize::from(include_brake))
}

/// One sample per timestamp of the first series at which every lag and the
/// target exist.
pub fn build_samples(
    features: &[FeatureSeries],
    brake: &BrakeTrace,
    delta_t_ms: f64,
    include_brake: bool,
) -> Result<SampleSet> {
    if !(delta_t_ms > 0.0) {
        return Err(Error::invalid("prediction horizon must be positive"));
    }
    if features.is_empty() && !include_brake {
        return Err(Error::invalid("samples need at least one feature series or the brake history"));
    }
    for f in features {
        if (f.step_ms - LAG_STEP_MS).abs() > 1e-9 {
            return Err(Error::invalid(format!("feature step {} ms is not {LAG_STEP_MS} ms", f.step_ms)));
        }
    }
    let clock: Vec<f64> = match features.first() {
        Some(f) => f.timestamps_ms.clone(),
        None => {
            let end = brake.end_ms();
            (0..=((end / LAG_STEP_MS).floor() as usize)).map(|k| k as f64 * LAG_STEP_MS).collect()
        }
    };
    let cols = n_inputs(features.len(), include_brake);
    let mut data = Vec::new();
    let mut targets = Vec::new();
    let mut stamps = Vec::new();
    let mut row = Vec::with_capacity(cols);
    'time: for &t in &clock {
        let Some(target) = brake.at_ms(t + delta_t_ms) else {
            continue;
        };
        row.clear();
        for f in features {
            for k in (0..LAGS).rev() {
                match f.at_ms(t - k as f64 * LAG_STEP_MS) {
                    Some(v) => row.push(v),
                    None => continue 'time,
                }
            }
        }
        if include_brake {
            for k in (0..LAGS).rev() {
                let tau = t - k as f64 * LAG_STEP_MS;
                if tau < 0.0 {
                    continue 'time;
                }
                match brake.at_ms(tau) {
                    Some(v) => row.push(v),
                    None => continue 'time,
                }
            }
        }
        if row.iter().any(|v| !v.is_finite()) || !target.is_finite() {
            return Err(Error::invalid(format!("non-finite sample at t = {t} ms")));
        }
        data.extend_from_slice(&row);
        targets.push(target);
        stamps.push(t);
    }
    if targets.is_empty() {
        return Err(Error::invalid(format!(
            "no timestamp has all {LAGS} lags and a target {delta_t_ms} ms ahead"
        )));
    }
    Ok(SampleSet {
        inputs: DMatrix::from_row_slice(targets.len(), cols, &data),
        targets,
        timestamps_ms: stamps,
        delta_t_ms,
        include_brake,
    })
}

/// Per-column standardization `(x − mean) / scale`, frozen once fit.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaling {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaling {
    pub fn identity(cols: usize) -> Self {
        Self {
            mean: vec![0.0; cols],
            scale: vec![1.0; cols],
        }
    }

    /// Column mean and standard deviation; constant columns keep scale 1.
    pub fn fit(inputs: &DMatrix<f64>) -> Self {
        let n = inputs.nrows().max(1) as f64;
        let mut mean = Vec::with_capacity(inputs.ncols());
        let mut scale = Vec::with_capacity(inputs.ncols());
        for col in inputs.column_iter() {
            let m = col.sum() / n;
            let sd = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
            mean.push(m);
            scale.push(if sd > 1e-12 * m.abs().max(1.0) { sd } else { 1.0 });
        }
        Self { mean, scale }
    }

    pub fn apply(&self, inputs: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(inputs.nrows(), inputs.ncols(), |r, c| {
            (inputs[(r, c)] - self.mean[c]) / self.scale[c]
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    /// `[input, 30, 20, 10, 5, 1]` for the standard architecture.
    pub sizes: Vec<usize>,
    /// Layer `l` maps `sizes[l]` to `sizes[l + 1]`.
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
    /// One shared slope per hidden layer.
    pub slopes: Vec<f64>,
    pub scaling: Scaling,
    /// Mean training loss after each epoch.
    pub loss_log: Vec<f64>,
}

fn prelu(z: f64, a: f64) -> f64 {
    if z >= 0.0 {
        z
    } else {
        a * z
    }
}

impl MlpModel {
    /// Kaiming-uniform weights for PReLU at the initial slope, zero biases.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) || *sizes.last().unwrap() != 1 {
            return Err(Error::invalid("layer sizes must be nonzero and end in a single output"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gain = (2.0 / (1.0 + INIT_SLOPE * INIT_SLOPE)).sqrt();
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in sizes.windows(2) {
            let bound = gain * (3.0 / pair[0] as f64).sqrt();
            weights.push(DMatrix::from_fn(pair[1], pair[0], |_, _| rng.random_range(-bound..bound)));
            biases.push(DVector::zeros(pair[1]));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            weights,
            biases,
            slopes: vec![INIT_SLOPE; sizes.len() - 2],
            scaling: Scaling::identity(sizes[0]),
            loss_log: Vec::new(),
        })
    }

    pub fn standard(n_inputs: usize, seed: u64) -> Result<Self> {
        let mut sizes = vec![n_inputs];
        sizes.extend_from_slice(&HIDDEN);
        sizes.push(1);
        Self::new(&sizes, seed)
    }

    pub fn n_inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
            + self.slopes.len()
    }

    /// Weights (column-major per layer), then biases, then slopes.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for w in &self.weights {
            out.extend_from_slice(w.as_slice());
        }
        for b in &self.biases {
            out.extend_from_slice(b.as_slice());
        }
        out.extend_from_slice(&self.slopes);
        out
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                context: "parameter vector",
                expected: self.n_params(),
                actual: p.len(),
            });
        }
        let mut at = 0;
        for w in &mut self.weights {
            let n = w.len();
            w.as_mut_slice().copy_from_slice(&p[at..at + n]);
            at += n;
        }
        for b in &mut self.biases {
            let n = b.len();
            b.as_mut_slice().copy_from_slice(&p[at..at + n]);
            at += n;
        }
        self.slopes.copy_from_slice(&p[at..]);
        Ok(())
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.n_inputs() {
            return Err(Error::DimensionMismatch {
                context: "model input width",
                expected: self.n_inputs(),
                actual: cols,
            });
        }
        Ok(())
    }

    /// Forward pass over rows of already-scaled inputs; keeps pre-activations.
    fn forward_batch(&self, x: &DMatrix<f64>) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
        // activations are columns: layer inputs of shape (width × batch)
        let mut acts = vec![x.transpose()];
        let mut pre = Vec::new();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w * acts.last().unwrap();
            for mut col in z.column_iter_mut() {
                col += b;
            }
            let h = if l < last { z.map(|v| prelu(v, self.slopes[l])) } else { z.clone() };
            pre.push(z);
            acts.push(h);
        }
        (pre, acts)
    }

    /// Prediction for one already-scaled input vector.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x.len())?;
        let m = DMatrix::from_row_slice(1, x.len(), x);
        let (_, acts) = self.forward_batch(&m);
        Ok(acts.last().unwrap()[(0, 0)])
    }

    /// Predictions for raw inputs, applying the frozen scaling.
    pub fn predict(&self, raw_inputs: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.check_input(raw_inputs.ncols())?;
        let (_, acts) = self.forward_batch(&self.scaling.apply(raw_inputs));
        Ok(acts.last().unwrap().iter().copied().collect())
    }
}

pub fn mlp_forward(model: &MlpModel, x: &[f64]) -> Result<f64> {
    model.forward(x)
}

/// Batch-mean squared error and its gradient, flattened like [`MlpModel::params`].
/// Inputs are already scaled.
pub fn mlp_gradient(model: &MlpModel, inputs: &DMatrix<f64>, targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    model.check_input(inputs.ncols())?;
    if inputs.nrows() == 0 || inputs.nrows() != targets.len() {
        return Err(Error::invalid("gradient needs a nonempty batch with one target per row"));
    }
    let bsz = inputs.nrows() as f64;
    let (pre, acts) = model.forward_batch(inputs);
    let out = acts.last().unwrap();
    let mut loss = 0.0;
    let mut delta = DMatrix::zeros(1, inputs.nrows());
    for (j, &t) in targets.iter().enumerate() {
        let e = out[(0, j)] - t;
        loss += e * e;
        delta[(0, j)] = 2.0 * e / bsz;
    }
    loss /= bsz;
    let layers = model.weights.len();
    let mut gw = vec![DMatrix::zeros(0, 0); layers];
    let mut gb = vec![DVector::zeros(0); layers];
    let mut gs = vec![0.0; model.slopes.len()];
    // `delta` holds dL/dz for the current layer
    for l in (0..layers).rev() {
        gw[l] = &delta * acts[l].transpose();
        gb[l] = delta.column_sum();
        if l == 0 {
            break;
        }
        let dh = model.weights[l].transpose() * &delta;
        let z = &pre[l - 1];
        let a = model.slopes[l - 1];
        let mut slope_grad = 0.0;
        delta = DMatrix::from_fn(dh.nrows(), dh.ncols(), |r, c| {
            let zv = z[(r, c)];
            if zv >= 0.0 {
                dh[(r, c)]
            } else {
                slope_grad += dh[(r, c)] * zv;
                a * dh[(r, c)]
            }
        });
        gs[l - 1] = slope_grad;
    }
    let mut flat = Vec::with_capacity(model.n_params());
    for g in &gw {
        flat.extend_from_slice(g.as_slice());
    }
    for g in &gb {
        flat.extend_from_slice(g.as_slice());
    }
    flat.extend_from_slice(&gs);
    Ok((loss, flat))
}

/// Adam on batch-mean MSE. Fits the input scaling on `train_set`, stores it in
/// the model, and records the mean loss of each epoch.
pub fn train(mut model: MlpModel, train_set: &SampleSet, cfg: &TrainConfig) -> Result<MlpModel> {
    if train_set.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::invalid("batch size and learning rate must be positive"));
    }
    model.check_input(train_set.n_inputs())?;
    model.scaling = Scaling::fit(&train_set.inputs);
    let x = model.scaling.apply(&train_set.inputs);
    let n = x.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut p = model.params();
    let mut m = vec![0.0; p.len()];
    let mut v = vec![0.0; p.len()];
    let mut step = 0i32;
    model.loss_log.clear();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let xb = DMatrix::from_fn(chunk.len(), x.ncols(), |r, c| x[(chunk[r], c)]);
            let yb: Vec<f64> = chunk.iter().map(|&i| train_set.targets[i]).collect();
            let (loss, g) = mlp_gradient(&model, &xb, &yb)?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("MLP training at epoch {epoch}")));
            }
            total += loss * chunk.len() as f64;
            step += 1;
            let bc1 = 1.0 - cfg.beta1.powi(step);
            let bc2 = 1.0 - cfg.beta2.powi(step);
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                p[i] -= cfg.learning_rate * (m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.epsilon);
            }
            model.set_params(&p)?;
        }
        let mean = total / n as f64;
        if !mean.is_finite() {
            return Err(Error::Divergence(format!("MLP training at epoch {epoch}")));
        }
        model.loss_log.push(mean);
    }
    Ok(model)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictedTrace {
    /// Target times `t + Δt`.
    pub timestamps_ms: Vec<f64>,
    pub predicted: Vec<f64>,
    pub measured: Vec<f64>,
}

/// Open-loop predictions at the feature cadence using the measured brake history.
pub fn rolling_predict(
    model: &MlpModel,
    features: &[FeatureSeries],
    brake: &BrakeTrace,
    delta_t_ms: f64,
    include_brake: bool,
) -> Result<PredictedTrace> {
    let set = build_samples(features, brake, delta_t_ms, include_brake)?;
    Ok(PredictedTrace {
        timestamps_ms: set.timestamps_ms.iter().map(|t| t + delta_t_ms).collect(),
        predicted: model.predict(&set.inputs)?,
        measured: set.targets,
    })
}

pub const SECTION_MAGIC: &[u8; 4] = b"MLPD";
pub const SECTION_VERSION: u32 = 1;

pub fn encode_section(model: &MlpModel, w: &mut Writer) {
    w.bytes(SECTION_MAGIC);
    w.u32(SECTION_VERSION);
    w.len_u32(model.sizes.len());
    for &s in &model.sizes {
        w.len_u32(s);
    }
    w.f64_slice(&model.params());
    w.f64_slice(&model.scaling.mean);
    w.f64_slice(&model.scaling.scale);
    w.len_u32(model.loss_log.len());
    w.f64_slice(&model.loss_log);
}

pub fn decode_section(r: &mut Reader) -> Result<MlpModel> {
    r.expect_magic(SECTION_MAGIC, "model section magic")?;
    let at = r.offset();
    if r.u32("model section version")? != SECTION_VERSION {
        return Err(Error::Format {
            offset: at,
            field: "model section version",
            reason: "unsupported version".into(),
        });
    }
    let nl = r.count("layer count", 4)?;
    let sizes = (0..nl)
        .map(|_| r.u32("layer size").map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let mut model = MlpModel::new(&sizes, 0).map_err(|e| r.error("layer size", e.to_string()))?;
    let params = r.f64_vec(model.n_params(), "model parameters")?;
    if params.iter().any(|v| !v.is_finite()) {
        return Err(r.error("model parameters", "non-finite parameter"));
    }
    model.set_params(&params)?;
    model.scaling = Scaling {
        mean: r.f64_vec(sizes[0], "scaling mean")?,
        scale: r.f64_vec(sizes[0], "scaling scale")?,
    };
    let nlog = r.count("loss log length", 8)?;
    model.loss_log = r.f64_vec(nlog, "loss log")?;
    Ok(model)
}
