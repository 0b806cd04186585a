//! Bits per dimension and reconstruction error.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::ndcore::DenseVector;

/// Bits per dimension of quantized 8-bit data from a continuous
/// log-likelihood of the dequantized item. Each pixel bin has width 1/256,
/// so `log P(x_int) >= E[log p(y)] - k ln 256`.
pub fn bpd(loglik_per_item: f64, k: usize) -> f64 {
    let k = k as f64;
    (k * 256f64.ln() - loglik_per_item) / (k * std::f64::consts::LN_2)
}

/// Bits per dimension for continuous data: no dequantization correction.
pub fn bpd_continuous(loglik_per_item: f64, k: usize) -> f64 {
    -loglik_per_item / (k as f64 * std::f64::consts::LN_2)
}

pub fn mse(x: &DenseVector, recon_mean: &DenseVector) -> Result<f64> {
    check_dim("mse", x.len(), recon_mean.len())?;
    if x.is_empty() {
        return Err(Error::InvalidParameter("mse of empty vectors".into()));
    }
    Ok(x.iter().zip(recon_mean.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bpd: f64,
    pub mse: f64,
    pub n_items: usize,
}

impl MetricReport {
    /// Averages per-item log-likelihoods and squared errors in item order.
    pub fn from_items(logliks: &[f64], mses: &[f64], k: usize, discrete: bool) -> Result<Self> {
        check_dim("MetricReport items", logliks.len(), mses.len())?;
        if logliks.is_empty() {
            return Err(Error::InvalidParameter("no items to report".into()));
        }
        let n = logliks.len() as f64;
        let ll = logliks.iter().sum::<f64>() / n;
        Ok(Self {
            bpd: if discrete { bpd(ll, k) } else { bpd_continuous(ll, k) },
            mse: mses.iter().sum::<f64>() / n,
            n_items: logliks.len(),
        })
    }
}
