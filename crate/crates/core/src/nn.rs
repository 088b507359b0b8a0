//! Fixed-topology feedforward network with hand-written reverse mode.
//!
//! Parameters are stored in one flat vector, layer by layer: the weight
//! matrix (row-major, `out × in`) followed by the bias vector. Gradients use
//! the same layout, so optimizers work on plain slices.
//!
//! Hidden layers use `tanh`; the output layer is affine.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::NnError;

pub const FORMAT_NAME: &str = "mlp";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    params: Vec<f64>,
}

/// Activations recorded by [`Mlp::forward_traced`], consumed by [`Mlp::backward`].
#[derive(Debug, Clone, Default)]
pub struct Trace {
    // activations[0] is the input, activations[l + 1] the output of layer l
    activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> Option<&[f64]> {
        self.activations.last().map(Vec::as_slice)
    }
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// Uniform `±1/sqrt(fan_in)` weights, zero biases.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(dims);
        let mut off = 0;
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut net.params[off..off + fan_in * fan_out] {
                *p = rng.gen_range(-bound..bound);
            }
            off += fan_in * fan_out + fan_out;
        }
        net
    }

    pub fn zeros(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "an mlp needs at least an input and an output width");
        assert!(dims.iter().all(|&d| d > 0), "layer widths must be positive");
        Self {
            dims: dims.to_vec(),
            params: vec![0.0; param_count(dims)],
        }
    }

    pub fn from_parts(dims: Vec<usize>, params: Vec<f64>) -> Result<Self, NnError> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(NnError::Format(format!("invalid layer dims {dims:?}")));
        }
        let expected = param_count(&dims);
        if params.len() != expected {
            return Err(NnError::DimensionMismatch {
                expected,
                got: params.len(),
            });
        }
        Ok(Self { dims, params })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Weight and bias slices of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (w, b) = self.layer_span(l);
        (&self.params[w.clone()], &self.params[b])
    }

    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let (w, b) = self.layer_span(l);
        let (head, tail) = self.params.split_at_mut(b.start);
        (&mut head[w], &mut tail[..b.end - b.start])
    }

    fn layer_span(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let mut off = 0;
        for w in self.dims.windows(2).take(l) {
            off += w[0] * w[1] + w[1];
        }
        let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
        let w_end = off + fan_in * fan_out;
        (off..w_end, w_end..w_end + fan_out)
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NnError> {
        if x.len() != self.input_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_input(x)?;
        let mut a = x.to_vec();
        let mut off = 0;
        let last = self.num_layers() - 1;
        for (l, w) in self.dims.windows(2).enumerate() {
            a = self.affine(off, w[0], w[1], &a);
            if l < last {
                a.iter_mut().for_each(|v| *v = v.tanh());
            }
            off += w[0] * w[1] + w[1];
        }
        Ok(a)
    }

    pub fn forward_traced(&self, x: &[f64]) -> Result<Trace, NnError> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.dims.len());
        activations.push(x.to_vec());
        let mut off = 0;
        let last = self.num_layers() - 1;
        for (l, w) in self.dims.windows(2).enumerate() {
            let mut z = self.affine(off, w[0], w[1], activations.last().unwrap());
            if l < last {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            activations.push(z);
            off += w[0] * w[1] + w[1];
        }
        Ok(Trace { activations })
    }

    fn affine(&self, off: usize, fan_in: usize, fan_out: usize, x: &[f64]) -> Vec<f64> {
        let w = &self.params[off..off + fan_in * fan_out];
        let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
        w.chunks_exact(fan_in)
            .zip(b)
            .map(|(row, bias)| row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>() + bias)
            .collect()
    }

    /// Gradients of `upstream · output` with respect to every parameter.
    pub fn backward(&self, trace: &Trace, upstream: &[f64]) -> Result<Vec<f64>, NnError> {
        let mut grads = vec![0.0; self.params.len()];
        self.backward_accumulate(trace, upstream, &mut grads)?;
        Ok(grads)
    }

    /// Like [`Mlp::backward`] but adds into `grads`.
    pub fn backward_accumulate(
        &self,
        trace: &Trace,
        upstream: &[f64],
        grads: &mut [f64],
    ) -> Result<(), NnError> {
        if trace.activations.is_empty() {
            return Err(NnError::NoRecordedForward);
        }
        if trace.activations.len() != self.dims.len()
            || trace
                .activations
                .iter()
                .zip(&self.dims)
                .any(|(a, &d)| a.len() != d)
        {
            return Err(NnError::Format("trace was recorded on a different topology".into()));
        }
        if upstream.len() != self.output_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        if grads.len() != self.params.len() {
            return Err(NnError::DimensionMismatch {
                expected: self.params.len(),
                got: grads.len(),
            });
        }

        // delta holds dL/dz for the pre-activation of the current layer
        let mut delta = upstream.to_vec();
        let last = self.num_layers() - 1;
        for l in (0..self.num_layers()).rev() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            if l < last {
                let out = &trace.activations[l + 1];
                for (d, a) in delta.iter_mut().zip(out) {
                    *d *= 1.0 - a * a;
                }
            }
            let (w_span, b_span) = self.layer_span(l);
            let input = &trace.activations[l];
            let w_off = w_span.start;
            for (o, d) in delta.iter().enumerate() {
                let row = &mut grads[w_off + o * fan_in..w_off + (o + 1) * fan_in];
                for (g, x) in row.iter_mut().zip(input) {
                    *g += d * x;
                }
            }
            for (g, d) in grads[b_span].iter_mut().zip(&delta) {
                *g += d;
            }
            if l > 0 {
                let w = &self.params[w_span];
                let mut prev = vec![0.0; fan_in];
                for (o, d) in delta.iter().enumerate() {
                    for (p, wi) in prev.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                        *p += d * wi;
                    }
                }
                debug_assert_eq!(fan_out, delta.len());
                delta = prev;
            }
        }
        Ok(())
    }

    pub fn to_file(&self) -> MlpFile {
        let layers = (0..self.num_layers())
            .map(|l| {
                let (w, b) = self.layer(l);
                LayerParams {
                    weights: w.to_vec(),
                    biases: b.to_vec(),
                }
            })
            .collect();
        MlpFile {
            format: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            layer_dims: self.dims.clone(),
            layers,
        }
    }

    pub fn from_file(file: &MlpFile) -> Result<Self, NnError> {
        if file.format != FORMAT_NAME || file.version != FORMAT_VERSION {
            return Err(NnError::Format(format!(
                "unsupported format {} v{}",
                file.format, file.version
            )));
        }
        if file.layers.len() + 1 != file.layer_dims.len() {
            return Err(NnError::Format("layer count does not match layer_dims".into()));
        }
        let mut params = Vec::new();
        for (l, layer) in file.layers.iter().enumerate() {
            let (fan_in, fan_out) = (file.layer_dims[l], file.layer_dims[l + 1]);
            if layer.weights.len() != fan_in * fan_out || layer.biases.len() != fan_out {
                return Err(NnError::Format(format!("layer {l} has the wrong shape")));
            }
            params.extend_from_slice(&layer.weights);
            params.extend_from_slice(&layer.biases);
        }
        Self::from_parts(file.layer_dims.clone(), params)
    }
}

/// On-disk network: layer widths plus row-major parameters per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpFile {
    pub format: String,
    pub version: u32,
    pub layer_dims: Vec<usize>,
    pub layers: Vec<LayerParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerParams {
    /// `out × in`, row-major.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Serialize for Mlp {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_file().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Mlp {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let file = MlpFile::deserialize(d)?;
        Mlp::from_file(&file).map_err(serde::de::Error::custom)
    }
}

pub fn global_norm(grads: &[f64]) -> f64 {
    grads.iter().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales `grads` so that their global norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// Adaptive-moment optimizer over a flat parameter slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl Adam {
    pub fn new(num_params: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            steps: 0,
        }
    }

    pub fn for_net(net: &Mlp, learning_rate: f64) -> Self {
        Self::new(net.num_params(), learning_rate)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update. Non-finite gradients are rejected before any state changes.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), NnError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NnError::DimensionMismatch {
                expected: self.m.len(),
                got: grads.len().min(params.len()),
            });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(NnError::Divergence);
        }
        self.steps += 1;
        let t = self.steps as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }

    pub fn apply_update(&mut self, net: &mut Mlp, grads: &[f64]) -> Result<(), NnError> {
        self.step(net.params_mut(), grads)
    }
}
