//! Fully-connected ReLU networks with hand-written backpropagation, the
//! AdamW optimizer, and parameter checkpoints.
//!
//! Parameters live in one flat vector, layer by layer: the `out x in`
//! weight matrix in row-major order followed by the `out` biases. Gradients
//! use the same layout, which is what [`AdamW`] steps over.

mod adamw;
pub mod checkpoint;

pub use adamw::{AdamW, AdamWConfig};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::ndcore::{DenseVector, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// `2d` outputs: means then log-variances.
    GaussianStats,
    /// `d` logits.
    BernoulliLogits,
    /// Reconstruction mean over the data dimensions.
    DecoderMean,
}

impl HeadKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::GaussianStats => "gaussian_stats",
            Self::BernoulliLogits => "bernoulli_logits",
            Self::DecoderMean => "decoder_mean",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gaussian_stats" => Some(Self::GaussianStats),
            "bernoulli_logits" => Some(Self::BernoulliLogits),
            "decoder_mean" => Some(Self::DecoderMean),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    /// Layer widths from input to output; at least two entries.
    sizes: Vec<usize>,
    head: HeadKind,
    params: Vec<f64>,
}

/// Activations recorded by [`Mlp::forward`].
#[derive(Debug, Clone)]
pub struct Tape {
    /// Input to every affine layer (post-ReLU for hidden layers).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of every hidden layer.
    pre: Vec<Vec<f64>>,
}

/// Gradient with respect to the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads(pub Vec<f64>);

impl ParamGrads {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    /// `self += a * other`.
    pub fn add_scaled(&mut self, a: f64, other: &ParamGrads) {
        for (s, o) in self.0.iter_mut().zip(&other.0) {
            *s += a * o;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for s in &mut self.0 {
            *s *= a;
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
}

impl Mlp {
    /// He-uniform weights `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, zero biases.
    pub fn new(sizes: &[usize], head: HeadKind, rng: &mut RngStream) -> Result<Self> {
        Self::check_sizes(sizes, head)?;
        let mut params = Vec::with_capacity(param_count(sizes));
        for w in sizes.windows(2) {
            let bound = (6.0 / w[0] as f64).sqrt();
            params.extend((0..w[0] * w[1]).map(|_| bound * (2.0 * rng.uniform() - 1.0)));
            params.extend(std::iter::repeat(0.0).take(w[1]));
        }
        Ok(Self { sizes: sizes.to_vec(), head, params })
    }

    pub fn from_params(sizes: &[usize], head: HeadKind, params: Vec<f64>) -> Result<Self> {
        Self::check_sizes(sizes, head)?;
        check_dim("Mlp parameters", param_count(sizes), params.len())?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("Mlp parameters"));
        }
        Ok(Self { sizes: sizes.to_vec(), head, params })
    }

    fn check_sizes(sizes: &[usize], head: HeadKind) -> Result<()> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidParameter(format!("bad layer sizes {sizes:?}")));
        }
        if head == HeadKind::GaussianStats && sizes[sizes.len() - 1] % 2 != 0 {
            return Err(Error::InvalidParameter(
                "Gaussian head needs an even output width".into(),
            ));
        }
        Ok(())
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn head(&self) -> HeadKind {
        self.head
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Order-sensitive hash of the exact parameter bits.
    pub fn checksum(&self) -> u64 {
        self.params
            .iter()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, p| (h ^ p.to_bits()).wrapping_mul(0x100_0000_01b3))
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut offset = 0;
        self.sizes.windows(2).map(move |w| {
            let start = offset;
            offset += w[1] * (w[0] + 1);
            (start, w[0], w[1])
        })
    }

    pub fn forward(&self, x: &DenseVector) -> Result<(DenseVector, Tape)> {
        check_dim("Mlp input", self.input_dim(), x.len())?;
        let n_layers = self.sizes.len() - 1;
        let mut tape = Tape { inputs: Vec::with_capacity(n_layers), pre: Vec::new() };
        let mut h = x.as_slice().to_vec();
        for (l, (off, n_in, n_out)) in self.layers().enumerate() {
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let mut out: Vec<f64> = (0..n_out)
                .map(|r| b[r] + w[r * n_in..(r + 1) * n_in].iter().zip(&h).map(|(w, h)| w * h).sum::<f64>())
                .collect();
            tape.inputs.push(std::mem::take(&mut h));
            if l + 1 < n_layers {
                tape.pre.push(out.clone());
                for v in &mut out {
                    *v = v.max(0.0);
                }
            }
            h = out;
        }
        let out = DenseVector::new(h).map_err(|_| Error::NonFinite("Mlp forward"))?;
        Ok((out, tape))
    }

    /// Gradients of `<upstream, output>` with respect to the parameters and
    /// the input.
    pub fn backward(&self, tape: &Tape, upstream: &[f64]) -> Result<(ParamGrads, DenseVector)> {
        check_dim("Mlp upstream gradient", self.output_dim(), upstream.len())?;
        check_dim("Mlp tape", self.sizes.len() - 1, tape.inputs.len())?;
        let mut grads = vec![0.0; self.params.len()];
        let mut g = upstream.to_vec();
        let layers: Vec<_> = self.layers().collect();
        for (l, &(off, n_in, n_out)) in layers.iter().enumerate().rev() {
            let input = &tape.inputs[l];
            check_dim("Mlp tape layer", n_in, input.len())?;
            let w = &self.params[off..off + n_in * n_out];
            let (gw, gb) = grads[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            let mut g_in = vec![0.0; n_in];
            for r in 0..n_out {
                let gr = g[r];
                gb[r] = gr;
                if gr == 0.0 {
                    continue;
                }
                let row = &w[r * n_in..(r + 1) * n_in];
                for c in 0..n_in {
                    gw[r * n_in + c] = gr * input[c];
                    g_in[c] += gr * row[c];
                }
            }
            if l > 0 {
                for (gi, p) in g_in.iter_mut().zip(&tape.pre[l - 1]) {
                    if *p <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
            g = g_in;
        }
        Ok((ParamGrads(grads), DenseVector::new(g).map_err(|_| Error::NonFinite("Mlp backward"))?))
    }
}
