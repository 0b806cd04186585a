//! Random test instances and flat-parameter views used by the oracle checks
//! and the acceptance suite.

use crate::analytic::{LinearDecoder, StatsGrad};
use crate::error::{Error, Result};
use crate::latent::{BernoulliVec, DiagGaussian, LatentDistribution, LatentKind};
use crate::ndcore::{DenseMatrix, DenseVector, RngStream};

#[derive(Debug, Clone)]
pub struct Instance {
    pub x: DenseVector,
    pub dec: LinearDecoder,
    /// Unaugmented latent distribution of dimension `d`.
    pub dist: LatentDistribution,
}

pub fn random_matrix(rng: &mut RngStream, rows: usize, cols: usize, scale: f64) -> DenseMatrix {
    DenseMatrix::from_raw(rows, cols, (0..rows * cols).map(|_| scale * rng.standard_normal()).collect())
}

pub fn random_distribution(rng: &mut RngStream, kind: LatentKind, d: usize) -> LatentDistribution {
    match kind {
        LatentKind::Gaussian => {
            let mean = (0..d).map(|_| 0.5 * rng.standard_normal()).collect();
            let var = (0..d).map(|_| 0.1 + 0.9 * rng.uniform()).collect();
            DiagGaussian::from_vecs(mean, var).expect("valid by construction").into()
        }
        LatentKind::Bernoulli => {
            let p = (0..d).map(|_| 0.05 + 0.9 * rng.uniform()).collect();
            BernoulliVec::from_vec(p).expect("valid by construction").into()
        }
    }
}

/// A `k x (d+1)` precision matrix whose bias column keeps `W_alpha z` well
/// away from zero.
pub fn random_precision_matrix(rng: &mut RngStream, k: usize, d: usize) -> DenseMatrix {
    let mut w = random_matrix(rng, k, d + 1, 0.25);
    for j in 0..k {
        w.set(j, d, 2.0 + rng.uniform()).expect("finite");
    }
    w
}

pub fn random_instance(
    rng: &mut RngStream,
    kind: LatentKind,
    k: usize,
    d: usize,
    learnable: bool,
) -> Instance {
    let wmu = random_matrix(rng, k, d + 1, 0.6);
    let walpha = learnable.then(|| random_precision_matrix(rng, k, d));
    let dist = random_distribution(rng, kind, d);
    let x = DenseVector::from_raw((0..k).map(|_| rng.standard_normal()).collect());
    Instance {
        x,
        dec: LinearDecoder::new(wmu, walpha).expect("shapes agree"),
        dist,
    }
}

/// Gaussian: means then variances. Bernoulli: probabilities.
pub fn stats_to_vec(dist: &LatentDistribution) -> Vec<f64> {
    match dist {
        LatentDistribution::DiagGaussian(g) => g.mean().iter().chain(g.var().iter()).copied().collect(),
        LatentDistribution::Bernoulli(b) => b.p().as_slice().to_vec(),
    }
}

pub fn dist_from_vec(kind: LatentKind, params: &[f64]) -> Result<LatentDistribution> {
    match kind {
        LatentKind::Gaussian => {
            if params.len() % 2 != 0 {
                return Err(Error::InvalidParameter("odd Gaussian parameter count".into()));
            }
            let d = params.len() / 2;
            Ok(DiagGaussian::from_vecs(params[..d].to_vec(), params[d..].to_vec())?.into())
        }
        LatentKind::Bernoulli => Ok(BernoulliVec::from_vec(params.to_vec())?.into()),
    }
}

pub fn stats_grad_to_vec(g: &StatsGrad) -> Vec<f64> {
    match g {
        StatsGrad::Gaussian { mean, var } => mean.iter().chain(var.iter()).copied().collect(),
        StatsGrad::Bernoulli { p } => p.as_slice().to_vec(),
    }
}

/// Decoder weights flattened as `W_mu` then (if present) `W_alpha`.
pub fn weights_to_vec(dec: &LinearDecoder) -> Vec<f64> {
    let mut v = dec.wmu().as_slice().to_vec();
    if let Some(wa) = dec.walpha() {
        v.extend_from_slice(wa.as_slice());
    }
    v
}

pub fn decoder_from_vec(template: &LinearDecoder, params: &[f64]) -> Result<LinearDecoder> {
    let (k, c) = (template.wmu().rows(), template.wmu().cols());
    let n = k * c;
    let wmu = DenseMatrix::new(k, c, params[..n].to_vec())?;
    let walpha = match template.walpha() {
        Some(_) => Some(DenseMatrix::new(k, c, params[n..2 * n].to_vec())?),
        None => None,
    };
    LinearDecoder::new(wmu, walpha)
}
