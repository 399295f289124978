//! Feed-forward MLPs with manual backpropagation and the AdamW optimizer.
//!
//! The same [`Mlp`] type serves as encoder, decoder, and synthetic-data
//! generator. Hidden layers use ReLU, the output layer is linear. A spec
//! flag can leave the final hidden layer linear as well, for generator
//! variants whose last hidden transition carries no activation.
//!
//! # Checkpoint layout
//!
//! [`Mlp::save`] writes a little-endian binary stream, stable across
//! versions:
//!
//! ```text
//! magic  b"MVML"
//! u32    format version (1)
//! u32    number of widths W
//! u32*W  layer widths (input, hidden..., output)
//! u8     1 if the last hidden layer is activated, 0 otherwise
//! then, for each of the W-1 layers:
//!   f64*(out*in)  weight matrix, row-major (out x in)
//!   f64*out       bias vector
//! ```

use std::io::{Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Architecture description: layer widths plus the activation policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input, hidden..., output widths. At least two entries, all positive.
    pub layer_widths: Vec<usize>,
    /// When false, the transition into the final hidden layer stays linear
    /// (only the earlier hidden layers get a ReLU).
    pub activate_last_hidden: bool,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>) -> Result<Self> {
        if layer_widths.len() < 2 {
            return Err(Error::invalid("MlpSpec needs at least 2 widths"));
        }
        if layer_widths.iter().any(|&w| w == 0) {
            return Err(Error::invalid("MlpSpec widths must be positive"));
        }
        Ok(MlpSpec {
            layer_widths,
            activate_last_hidden: true,
        })
    }

    pub fn with_linear_last_hidden(mut self) -> Self {
        self.activate_last_hidden = false;
        self
    }

    pub fn n_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    /// Whether a ReLU follows layer `l`.
    fn activated(&self, l: usize) -> bool {
        let n = self.n_layers();
        l + 1 < n && (self.activate_last_hidden || l + 2 < n)
    }
}

/// Weight-initialization scheme for [`init_mlp`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// Uniform on +-sqrt(6 / fan_in), biases zero. For trainable networks.
    HeUniform,
    /// All weights and biases i.i.d. standard normal. For fixed generator
    /// networks.
    StandardNormal,
}

static NEXT_MLP_ID: AtomicU64 = AtomicU64::new(1);

/// A feed-forward network: per-layer `out x in` weight matrices and bias
/// vectors.
#[derive(Debug, Clone)]
pub struct Mlp {
    spec: MlpSpec,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    id: u64,
    version: u64,
}

/// Per-parameter buffers with the same shapes as an [`Mlp`]'s parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Gradients {
            weights: mlp
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: mlp.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.add_assign(b);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
            && self
                .biases
                .iter()
                .all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Cached forward-pass intermediates needed by [`Mlp::backward`].
#[derive(Debug)]
pub struct Tape {
    mlp_id: u64,
    mlp_version: u64,
    batch: usize,
    layer_inputs: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
}

/// Builds an MLP with parameters drawn from the seeded `rng`.
pub fn init_mlp(spec: &MlpSpec, rng: &mut impl Rng, scheme: InitScheme) -> Mlp {
    let mut weights = Vec::with_capacity(spec.n_layers());
    let mut biases = Vec::with_capacity(spec.n_layers());
    for l in 0..spec.n_layers() {
        let fan_in = spec.layer_widths[l];
        let fan_out = spec.layer_widths[l + 1];
        let mut w = Matrix::zeros(fan_out, fan_in);
        for i in 0..fan_out {
            for j in 0..fan_in {
                w[(i, j)] = match scheme {
                    InitScheme::HeUniform => {
                        let bound = (6.0 / fan_in as f64).sqrt();
                        rng.random_range(-bound..bound)
                    }
                    InitScheme::StandardNormal => rng.sample::<f64, _>(StandardNormal),
                };
            }
        }
        let b = match scheme {
            InitScheme::HeUniform => vec![0.0; fan_out],
            InitScheme::StandardNormal => {
                (0..fan_out).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
            }
        };
        weights.push(w);
        biases.push(b);
    }
    Mlp {
        spec: spec.clone(),
        weights,
        biases,
        id: NEXT_MLP_ID.fetch_add(1, Ordering::Relaxed),
        version: 0,
    }
}

impl Mlp {
    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    /// Direct parameter access for diagnostics and gradient checks. Edits
    /// bypass the optimizer, so outstanding tapes become stale without
    /// being detected.
    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    pub fn param_count(&self) -> usize {
        self.spec
            .layer_widths
            .windows(2)
            .map(|w| w[1] * w[0] + w[1])
            .sum()
    }

    /// True when both networks hold bitwise-identical parameters.
    pub fn params_equal(&self, other: &Mlp) -> bool {
        self.spec == other.spec
            && self
                .weights
                .iter()
                .zip(&other.weights)
                .all(|(a, b)| a.data() == b.data())
            && self.biases == other.biases
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.spec.input_width() {
            return Err(Error::invalid(format!(
                "input width {} does not match network input {}",
                x.cols(),
                self.spec.input_width()
            )));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("network input".into()));
        }
        Ok(())
    }

    /// Forward pass that records the tape needed for [`Mlp::backward`].
    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, Tape)> {
        self.check_input(x)?;
        let mut layer_inputs = Vec::with_capacity(self.spec.n_layers());
        let mut pre_activations = Vec::with_capacity(self.spec.n_layers());
        let mut current = x.clone();
        for l in 0..self.spec.n_layers() {
            let mut z = current.mul_tr(&self.weights[l]);
            let bias = &self.biases[l];
            for i in 0..z.rows() {
                for (v, b) in z.row_mut(i).iter_mut().zip(bias) {
                    *v += b;
                }
            }
            layer_inputs.push(current);
            let next = if self.spec.activated(l) {
                let mut a = z.clone();
                a.data_mut().iter_mut().for_each(|v| {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                });
                a
            } else {
                z.clone()
            };
            pre_activations.push(z);
            current = next;
        }
        if !current.is_finite() {
            return Err(Error::NonFinite("network output".into()));
        }
        Ok((
            current,
            Tape {
                mlp_id: self.id,
                mlp_version: self.version,
                batch: x.rows(),
                layer_inputs,
                pre_activations,
            },
        ))
    }

    /// Forward pass without tape bookkeeping.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut current = x.clone();
        for l in 0..self.spec.n_layers() {
            let mut z = current.mul_tr(&self.weights[l]);
            let bias = &self.biases[l];
            for i in 0..z.rows() {
                for (v, b) in z.row_mut(i).iter_mut().zip(bias) {
                    *v += b;
                }
            }
            if self.spec.activated(l) {
                z.data_mut().iter_mut().for_each(|v| {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                });
            }
            current = z;
        }
        if !current.is_finite() {
            return Err(Error::NonFinite("network output".into()));
        }
        Ok(current)
    }

    /// Backpropagates `grad_y` (gradient of some scalar loss w.r.t. the
    /// network output) through the tape. Returns parameter gradients and the
    /// gradient w.r.t. the input batch.
    pub fn backward(&self, tape: &Tape, grad_y: &Matrix) -> Result<(Gradients, Matrix)> {
        if tape.mlp_id != self.id || tape.mlp_version != self.version {
            return Err(Error::ContractViolation(
                "tape was recorded by a different network or parameter version".into(),
            ));
        }
        if grad_y.rows() != tape.batch || grad_y.cols() != self.spec.output_width() {
            return Err(Error::invalid(format!(
                "grad_y shape {}x{} does not match batch {} x output {}",
                grad_y.rows(),
                grad_y.cols(),
                tape.batch,
                self.spec.output_width()
            )));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut g = grad_y.clone();
        for l in (0..self.spec.n_layers()).rev() {
            if self.spec.activated(l) {
                let z = &tape.pre_activations[l];
                for i in 0..g.rows() {
                    let z_row = z.row(i);
                    for (gv, zv) in g.row_mut(i).iter_mut().zip(z_row) {
                        if *zv <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                }
            }
            grads.weights[l] = g.tr_mul(&tape.layer_inputs[l]);
            let db = &mut grads.biases[l];
            for i in 0..g.rows() {
                for (d, gv) in db.iter_mut().zip(g.row(i)) {
                    *d += gv;
                }
            }
            g = g.matmul(&self.weights[l]);
        }
        if !grads.is_finite() || !g.is_finite() {
            return Err(Error::NonFinite("backward pass produced non-finite gradients".into()));
        }
        Ok((grads, g))
    }

    /// Writes the checkpoint format documented at the module level.
    pub fn save(&self, mut w: impl Write) -> Result<()> {
        w.write_all(b"MVML")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.spec.layer_widths.len() as u32).to_le_bytes())?;
        for &width in &self.spec.layer_widths {
            w.write_all(&(width as u32).to_le_bytes())?;
        }
        w.write_all(&[self.spec.activate_last_hidden as u8])?;
        for l in 0..self.spec.n_layers() {
            for v in self.weights[l].data() {
                w.write_all(&v.to_le_bytes())?;
            }
            for v in &self.biases[l] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(mut r: impl Read) -> Result<Mlp> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"MVML" {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != 1 {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let n_widths = read_u32(&mut r)? as usize;
        if !(2..=64).contains(&n_widths) {
            return Err(Error::Format(format!("implausible width count {n_widths}")));
        }
        let mut widths = Vec::with_capacity(n_widths);
        for _ in 0..n_widths {
            widths.push(read_u32(&mut r)? as usize);
        }
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let mut spec = MlpSpec::new(widths).map_err(|e| Error::Format(e.to_string()))?;
        spec.activate_last_hidden = flag[0] != 0;

        let mut weights = Vec::with_capacity(spec.n_layers());
        let mut biases = Vec::with_capacity(spec.n_layers());
        for l in 0..spec.n_layers() {
            let (fan_in, fan_out) = (spec.layer_widths[l], spec.layer_widths[l + 1]);
            let mut wdata = Vec::with_capacity(fan_out * fan_in);
            for _ in 0..fan_out * fan_in {
                wdata.push(read_f64(&mut r)?);
            }
            let w = Matrix::from_vec(fan_out, fan_in, wdata)
                .map_err(|e| Error::Format(e.to_string()))?;
            let mut b = Vec::with_capacity(fan_out);
            for _ in 0..fan_out {
                b.push(read_f64(&mut r)?);
            }
            if !b.iter().all(|v| v.is_finite()) {
                return Err(Error::Format("non-finite bias in checkpoint".into()));
            }
            weights.push(w);
            biases.push(b);
        }
        Ok(Mlp {
            spec,
            weights,
            biases,
            id: NEXT_MLP_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
        })
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

/// AdamW optimizer state for one network.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub first_moment: Gradients,
    pub second_moment: Gradients,
    pub step_count: u64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(mlp: &Mlp, learning_rate: f64, weight_decay: f64) -> Self {
        AdamState {
            first_moment: Gradients::zeros_like(mlp),
            second_moment: Gradients::zeros_like(mlp),
            step_count: 0,
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One decoupled-weight-decay Adam update. Decay applies to weights only,
/// never biases.
pub fn adamw_step(mlp: &mut Mlp, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if grads.weights.len() != mlp.weights.len() {
        return Err(Error::invalid("gradient layer count mismatch"));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient passed to adamw_step".into()));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let lr = state.learning_rate;

    for l in 0..mlp.weights.len() {
        let g = &grads.weights[l];
        let m = &mut state.first_moment.weights[l];
        let v = &mut state.second_moment.weights[l];
        let w = &mut mlp.weights[l];
        if g.rows() != w.rows() || g.cols() != w.cols() {
            return Err(Error::invalid("gradient shape mismatch"));
        }
        for i in 0..w.rows() {
            for j in 0..w.cols() {
                let gij = g[(i, j)];
                m[(i, j)] = state.beta1 * m[(i, j)] + (1.0 - state.beta1) * gij;
                v[(i, j)] = state.beta2 * v[(i, j)] + (1.0 - state.beta2) * gij * gij;
                let m_hat = m[(i, j)] / bc1;
                let v_hat = v[(i, j)] / bc2;
                w[(i, j)] -= lr * (m_hat / (v_hat.sqrt() + state.epsilon)
                    + state.weight_decay * w[(i, j)]);
            }
        }
        let gb = &grads.biases[l];
        let mb = &mut state.first_moment.biases[l];
        let vb = &mut state.second_moment.biases[l];
        let b = &mut mlp.biases[l];
        for j in 0..b.len() {
            let gj = gb[j];
            mb[j] = state.beta1 * mb[j] + (1.0 - state.beta1) * gj;
            vb[j] = state.beta2 * vb[j] + (1.0 - state.beta2) * gj * gj;
            let m_hat = mb[j] / bc1;
            let v_hat = vb[j] / bc2;
            b[j] -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    mlp.version += 1;
    Ok(())
}
