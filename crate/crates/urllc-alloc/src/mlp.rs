//! Small fully connected network mapping normalized channel gains to a
//! power-split over users: ReLU hidden layers, softmax output (so the
//! fractions are positive and sum to one, making any output a feasible
//! split of the power budget). Forward, exact analytic backprop, and a
//! plain-text checkpoint format. All arithmetic in f64; weight matrices are
//! flat row-major buffers.

use crate::error::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use std::io::{BufRead, BufReader, Read, Write};

/// One dense layer: `z = W x + b`, `W` row-major `[out_dim x in_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    fn apply(&self, x: &[f64], z: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(z.len(), self.out_dim);
        for (i, zi) in z.iter_mut().enumerate() {
            let row = &self.w[i * self.in_dim..(i + 1) * self.in_dim];
            let mut acc = self.b[i];
            for (wij, xj) in row.iter().zip(x.iter()) {
                acc += wij * xj;
            }
            *zi = acc;
        }
    }
}

/// The network: every layer but the last feeds through ReLU; the last
/// feeds through a numerically stable softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Network input (already normalized by the caller).
    pub input: Vec<f64>,
    /// Post-ReLU activations of each hidden layer.
    pub hidden: Vec<Vec<f64>>,
    /// Softmax output: positive fractions summing to one.
    pub probs: Vec<f64>,
}

/// Gradient accumulator shaped like the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub dw: Vec<Vec<f64>>,
    pub db: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeroed(mlp: &Mlp) -> Self {
        MlpGrads {
            dw: mlp.layers.iter().map(|l| vec![0.0; l.w.len()]).collect(),
            db: mlp.layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
        }
    }

    pub fn zero(&mut self) {
        for v in self.dw.iter_mut().chain(self.db.iter_mut()) {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn scale(&mut self, f: f64) {
        for v in self.dw.iter_mut().chain(self.db.iter_mut()) {
            v.iter_mut().for_each(|x| *x *= f);
        }
    }

    /// Sum of absolute entries over every parameter gradient.
    pub fn l1_norm(&self) -> f64 {
        self.dw
            .iter()
            .chain(self.db.iter())
            .flat_map(|v| v.iter())
            .map(|x| x.abs())
            .sum()
    }

    pub fn n_params(&self) -> usize {
        self.dw.iter().map(Vec::len).sum::<usize>() + self.db.iter().map(Vec::len).sum::<usize>()
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

impl Mlp {
    /// Fresh network with the given layer widths (`dims[0]` inputs through
    /// `dims[last]` outputs). Weights are drawn from `N(0, 1/fan_in)` and
    /// biases start at zero, so initial outputs sit near the uniform split
    /// regardless of width. Deterministic in `seed`.
    pub fn new(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::invalid("network needs at least input and output dims".to_string()));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid("zero-width layer".to_string()));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for pair in dims.windows(2) {
            let (in_dim, out_dim) = (pair[0], pair[1]);
            let normal = Normal::new(0.0, (1.0 / in_dim as f64).sqrt())
                .expect("finite std");
            let w = (0..in_dim * out_dim)
                .map(|_| normal.sample(&mut rng))
                .collect();
            layers.push(Dense {
                in_dim,
                out_dim,
                w,
                b: vec![0.0; out_dim],
            });
        }
        Ok(Mlp { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.out_dim));
        dims
    }

    /// Forward pass keeping the activations needed for backprop.
    pub fn forward(&self, input: &[f64]) -> ForwardTrace {
        assert_eq!(input.len(), self.input_dim(), "input width mismatch");
        let n_hidden = self.layers.len() - 1;
        let mut hidden = Vec::with_capacity(n_hidden);
        let mut x = input.to_vec();
        for layer in &self.layers[..n_hidden] {
            let mut z = vec![0.0; layer.out_dim];
            layer.apply(&x, &mut z);
            z.iter_mut().for_each(|v| *v = v.max(0.0));
            hidden.push(z.clone());
            x = z;
        }
        let last = &self.layers[n_hidden];
        let mut z = vec![0.0; last.out_dim];
        last.apply(&x, &mut z);
        softmax_in_place(&mut z);
        ForwardTrace {
            input: input.to_vec(),
            hidden,
            probs: z,
        }
    }

    /// Inference without a trace; writes the output fractions into `out`.
    pub fn infer_into(&self, input: &[f64], out: &mut [f64]) {
        assert_eq!(out.len(), self.output_dim(), "output width mismatch");
        let n_hidden = self.layers.len() - 1;
        let mut x = input.to_vec();
        for layer in &self.layers[..n_hidden] {
            let mut z = vec![0.0; layer.out_dim];
            layer.apply(&x, &mut z);
            z.iter_mut().for_each(|v| *v = v.max(0.0));
            x = z;
        }
        self.layers[n_hidden].apply(&x, out);
        softmax_in_place(out);
    }

    /// Accumulate parameter gradients for one sample.
    ///
    /// `grad_probs` is the upstream derivative of the scalar loss with
    /// respect to the softmax outputs; the softmax Jacobian, the ReLU masks,
    /// and the dense-layer transposes are applied exactly. Gradients are
    /// *added* into `grads` so a batch can be accumulated and scaled once.
    pub fn backward(&self, trace: &ForwardTrace, grad_probs: &[f64], grads: &mut MlpGrads) {
        assert_eq!(grad_probs.len(), self.output_dim(), "grad width mismatch");
        let n_layers = self.layers.len();
        // Softmax Jacobian: dz_i = p_i * (g_i - sum_j p_j g_j).
        let p = &trace.probs;
        let dot: f64 = p.iter().zip(grad_probs.iter()).map(|(pi, gi)| pi * gi).sum();
        let mut dz: Vec<f64> = p
            .iter()
            .zip(grad_probs.iter())
            .map(|(pi, gi)| pi * (gi - dot))
            .collect();

        for li in (0..n_layers).rev() {
            let layer = &self.layers[li];
            let upstream_input: &[f64] = if li == 0 {
                &trace.input
            } else {
                &trace.hidden[li - 1]
            };
            // Accumulate dW, db for this layer.
            let dw = &mut grads.dw[li];
            let db = &mut grads.db[li];
            for (i, &dzi) in dz.iter().enumerate() {
                db[i] += dzi;
                let row = &mut dw[i * layer.in_dim..(i + 1) * layer.in_dim];
                for (slot, &xj) in row.iter_mut().zip(upstream_input.iter()) {
                    *slot += dzi * xj;
                }
            }
            if li == 0 {
                break;
            }
            // Propagate to the previous layer's post-activation, then
            // through its ReLU mask.
            let mut dx = vec![0.0; layer.in_dim];
            for (i, &dzi) in dz.iter().enumerate() {
                let row = &layer.w[i * layer.in_dim..(i + 1) * layer.in_dim];
                for (dxj, &wij) in dx.iter_mut().zip(row.iter()) {
                    *dxj += wij * dzi;
                }
            }
            let mask = &trace.hidden[li - 1];
            for (dxj, &hj) in dx.iter_mut().zip(mask.iter()) {
                if hj <= 0.0 {
                    *dxj = 0.0;
                }
            }
            dz = dx;
        }
    }

    /// Plain gradient step: `w -= lr * dw`.
    pub fn sgd_step(&mut self, grads: &MlpGrads, lr: f64) {
        for (li, layer) in self.layers.iter_mut().enumerate() {
            for (w, dw) in layer.w.iter_mut().zip(grads.dw[li].iter()) {
                *w -= lr * dw;
            }
            for (b, db) in layer.b.iter_mut().zip(grads.db[li].iter()) {
                *b -= lr * db;
            }
        }
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Serialize to a line-oriented text format. Floats are printed with
    /// Rust's shortest-round-trip formatting, so save/load is bit-exact.
    pub fn save<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "mlp-checkpoint v1")?;
        let dims: Vec<String> = self.layer_dims().iter().map(|d| d.to_string()).collect();
        writeln!(out, "dims {}", dims.join(" "))?;
        for (li, layer) in self.layers.iter().enumerate() {
            writeln!(out, "layer {li}")?;
            for i in 0..layer.out_dim {
                let row: Vec<String> = layer.w[i * layer.in_dim..(i + 1) * layer.in_dim]
                    .iter()
                    .map(|v| format!("{v}"))
                    .collect();
                writeln!(out, "w {}", row.join(" "))?;
            }
            let biases: Vec<String> = layer.b.iter().map(|v| format!("{v}")).collect();
            writeln!(out, "b {}", biases.join(" "))?;
        }
        Ok(())
    }

    /// Parse the format written by [`Mlp::save`].
    pub fn load<R: Read>(input: R) -> Result<Self> {
        let mut lines = BufReader::new(input).lines();
        let mut next_line = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::Parse("unexpected end of checkpoint".to_string()))?
                .map_err(Error::Io)
        };
        let header = next_line()?;
        if header.trim() != "mlp-checkpoint v1" {
            return Err(Error::Parse(format!("bad checkpoint header: {header:?}")));
        }
        let dims_line = next_line()?;
        let mut parts = dims_line.split_whitespace();
        if parts.next() != Some("dims") {
            return Err(Error::Parse("expected dims line".to_string()));
        }
        let dims: Vec<usize> = parts
            .map(|t| t.parse().map_err(|e| Error::Parse(format!("bad dim {t:?}: {e}"))))
            .collect::<Result<_>>()?;
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(Error::Parse(format!("bad layer dims {dims:?}")));
        }

        let parse_floats = |line: &str, tag: &str, want: usize| -> Result<Vec<f64>> {
            let mut toks = line.split_whitespace();
            if toks.next() != Some(tag) {
                return Err(Error::Parse(format!("expected {tag:?} line, got {line:?}")));
            }
            let vals: Vec<f64> = toks
                .map(|t| t.parse().map_err(|e| Error::Parse(format!("bad float {t:?}: {e}"))))
                .collect::<Result<_>>()?;
            if vals.len() != want {
                return Err(Error::Parse(format!(
                    "{tag:?} line has {} values, want {want}",
                    vals.len()
                )));
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse(format!("non-finite value in {tag:?} line")));
            }
            Ok(vals)
        };

        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (li, pair) in dims.windows(2).enumerate() {
            let (in_dim, out_dim) = (pair[0], pair[1]);
            let marker = next_line()?;
            if marker.trim() != format!("layer {li}") {
                return Err(Error::Parse(format!("expected 'layer {li}', got {marker:?}")));
            }
            let mut w = Vec::with_capacity(in_dim * out_dim);
            for _ in 0..out_dim {
                w.extend(parse_floats(&next_line()?, "w", in_dim)?);
            }
            let b = parse_floats(&next_line()?, "b", out_dim)?;
            layers.push(Dense { in_dim, out_dim, w, b });
        }
        Ok(Mlp { layers })
    }
}
