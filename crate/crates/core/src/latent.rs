//! Mean-field latent distributions: diagonal Gaussian and independent
//! Bernoulli vectors, their central moments up to order four, sampling, and
//! KL divergence to the fixed prior.
//!
//! Priors: `N(0, I)` for Gaussian latents, `Bern(0.5)` per dimension for
//! Bernoulli latents.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::ndcore::{DenseVector, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentKind {
    Gaussian,
    Bernoulli,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    mean: DenseVector,
    var: DenseVector,
}

impl DiagGaussian {
    pub fn new(mean: DenseVector, var: DenseVector) -> Result<Self> {
        check_dim("DiagGaussian::new", mean.len(), var.len())?;
        if let Some(i) = var.iter().position(|&v| v < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "negative variance {} in dimension {i}",
                var[i]
            )));
        }
        Ok(Self { mean, var })
    }

    pub fn from_vecs(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        Self::new(DenseVector::new(mean)?, DenseVector::new(var)?)
    }

    /// Builds from an encoder head that emits log-variances.
    pub fn from_log_var(mean: &[f64], log_var: &[f64]) -> Result<Self> {
        let var: Vec<f64> = log_var.iter().map(|lv| lv.exp()).collect();
        Self::from_vecs(mean.to_vec(), var)
    }

    pub fn mean(&self) -> &DenseVector {
        &self.mean
    }

    pub fn var(&self) -> &DenseVector {
        &self.var
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliVec {
    p: DenseVector,
    logits: Vec<f64>,
    spread: DenseVector,
}

impl BernoulliVec {
    pub fn new(p: DenseVector) -> Result<Self> {
        if let Some(i) = p.iter().position(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidParameter(format!(
                "Bernoulli probability {} outside [0, 1] in dimension {i}",
                p[i]
            )));
        }
        let logits = p.iter().map(|&v| logit(v)).collect();
        let spread = DenseVector::from_raw(p.iter().map(|&v| v * (1.0 - v)).collect());
        Ok(Self { p, logits, spread })
    }

    pub fn from_vec(p: Vec<f64>) -> Result<Self> {
        Self::new(DenseVector::new(p)?)
    }

    /// Keeps the logits so that `p (1 - p)` stays positive after `p` rounds
    /// to 0 or 1.
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        let logits = DenseVector::new(logits.to_vec())?.as_slice().to_vec();
        let p = DenseVector::from_raw(logits.iter().map(|&l| sigmoid(l)).collect());
        let spread = DenseVector::from_raw(logits.iter().map(|&l| sigmoid(l) * sigmoid(-l)).collect());
        Ok(Self { p, logits, spread })
    }

    pub fn p(&self) -> &DenseVector {
        &self.p
    }

    /// `ln p - ln(1 - p)`, infinite where `p` is exactly 0 or 1.
    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    /// `p (1 - p)` per dimension.
    pub fn spread(&self) -> &DenseVector {
        &self.spread
    }

    pub fn dim(&self) -> usize {
        self.p.len()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln p - ln(1 - p)`; infinite at the endpoints.
pub fn logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

#[derive(Debug, Clone, PartialEq)]
pub enum LatentDistribution {
    DiagGaussian(DiagGaussian),
    Bernoulli(BernoulliVec),
}

impl From<DiagGaussian> for LatentDistribution {
    fn from(d: DiagGaussian) -> Self {
        Self::DiagGaussian(d)
    }
}

impl From<BernoulliVec> for LatentDistribution {
    fn from(d: BernoulliVec) -> Self {
        Self::Bernoulli(d)
    }
}

/// Per-dimension central moments of order 2, 3 and 4. The first central
/// moment is identically zero and not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralMoments {
    m2: DenseVector,
    m3: DenseVector,
    m4: DenseVector,
}

impl CentralMoments {
    pub fn m2(&self) -> &DenseVector {
        &self.m2
    }
    pub fn m3(&self) -> &DenseVector {
        &self.m3
    }
    pub fn m4(&self) -> &DenseVector {
        &self.m4
    }
    pub fn dim(&self) -> usize {
        self.m2.len()
    }
}

pub(crate) fn gaussian_moments(var: f64) -> [f64; 3] {
    [var, 0.0, 3.0 * var * var]
}

pub(crate) fn bernoulli_moments(p: f64) -> [f64; 3] {
    let q = 1.0 - p;
    [p * q, p * q * (1.0 - 2.0 * p), p * q * (1.0 - 3.0 * p + 3.0 * p * p)]
}

impl LatentDistribution {
    pub fn kind(&self) -> LatentKind {
        match self {
            Self::DiagGaussian(_) => LatentKind::Gaussian,
            Self::Bernoulli(_) => LatentKind::Bernoulli,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::DiagGaussian(g) => g.dim(),
            Self::Bernoulli(b) => b.dim(),
        }
    }

    /// `E[z_i]` per dimension.
    pub fn means(&self) -> &DenseVector {
        match self {
            Self::DiagGaussian(g) => &g.mean,
            Self::Bernoulli(b) => &b.p,
        }
    }

    pub fn central_moments(&self) -> CentralMoments {
        let per_dim: Vec<[f64; 3]> = match self {
            Self::DiagGaussian(g) => g.var.iter().map(|&v| gaussian_moments(v)).collect(),
            Self::Bernoulli(b) => b.p.iter().map(|&p| bernoulli_moments(p)).collect(),
        };
        let col = |k: usize| DenseVector::from_raw(per_dim.iter().map(|m| m[k]).collect());
        CentralMoments {
            m2: col(0),
            m3: col(1),
            m4: col(2),
        }
    }

    /// Appends a point mass at 1 as the last dimension, so a linear map over
    /// the result carries a bias column.
    pub fn augment_with_bias(&self) -> LatentDistribution {
        match self {
            Self::DiagGaussian(g) => {
                let mut mean = g.mean.as_slice().to_vec();
                let mut var = g.var.as_slice().to_vec();
                mean.push(1.0);
                var.push(0.0);
                Self::DiagGaussian(DiagGaussian {
                    mean: DenseVector::from_raw(mean),
                    var: DenseVector::from_raw(var),
                })
            }
            Self::Bernoulli(b) => {
                let mut p = b.p.as_slice().to_vec();
                let mut logits = b.logits.clone();
                let mut spread = b.spread.as_slice().to_vec();
                p.push(1.0);
                logits.push(f64::INFINITY);
                spread.push(0.0);
                Self::Bernoulli(BernoulliVec {
                    p: DenseVector::from_raw(p),
                    logits,
                    spread: DenseVector::from_raw(spread),
                })
            }
        }
    }

    /// Gaussian: `mean + sqrt(var) * eps`. Bernoulli: hard `{0, 1}` draws.
    pub fn sample(&self, rng: &mut RngStream) -> DenseVector {
        match self {
            Self::DiagGaussian(g) => DenseVector::from_raw(
                g.mean
                    .iter()
                    .zip(g.var.iter())
                    .map(|(m, v)| m + v.sqrt() * rng.standard_normal())
                    .collect(),
            ),
            Self::Bernoulli(b) => DenseVector::from_raw(
                b.p.iter()
                    .map(|&p| if rng.uniform() < p { 1.0 } else { 0.0 })
                    .collect(),
            ),
        }
    }

    pub fn kl_to_prior(&self) -> Result<f64> {
        match self {
            Self::DiagGaussian(g) => {
                let mut kl = 0.0;
                for (i, (m, v)) in g.mean.iter().zip(g.var.iter()).enumerate() {
                    if *v == 0.0 {
                        return Err(Error::ZeroVariance(i));
                    }
                    kl += 0.5 * (v + m * m - 1.0 - v.ln());
                }
                Ok(kl)
            }
            Self::Bernoulli(b) => Ok(b.p.iter().map(|&p| bernoulli_kl_half(p)).sum()),
        }
    }
}

fn xlogx_over_half(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * (2.0 * x).ln()
    }
}

fn bernoulli_kl_half(p: f64) -> f64 {
    xlogx_over_half(p) + xlogx_over_half(1.0 - p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gauss(mean: Vec<f64>, var: Vec<f64>) -> LatentDistribution {
        DiagGaussian::from_vecs(mean, var).unwrap().into()
    }

    fn bern(p: Vec<f64>) -> LatentDistribution {
        BernoulliVec::from_vec(p).unwrap().into()
    }

    fn enumerate_central(p: f64, k: i32) -> f64 {
        (1.0 - p) * (0.0 - p).powi(k) + p * (1.0 - p).powi(k)
    }

    #[test]
    fn gaussian_standard_moments() {
        let m = gauss(vec![0.0], vec![1.0]).central_moments();
        assert_eq!((m.m2()[0], m.m3()[0], m.m4()[0]), (1.0, 0.0, 3.0));
        let m = gauss(vec![5.0], vec![0.0]).central_moments();
        assert_eq!((m.m2()[0], m.m3()[0], m.m4()[0]), (0.0, 0.0, 0.0));
    }

    #[test]
    fn bernoulli_half_moments() {
        let m = bern(vec![0.5]).central_moments();
        assert_eq!((m.m2()[0], m.m3()[0], m.m4()[0]), (0.25, 0.0, 0.0625));
    }

    #[test]
    fn bernoulli_moments_match_enumeration() {
        for &p in &[0.3, 0.0, 1.0, 0.01, 0.77] {
            let m = bern(vec![p]).central_moments();
            assert!((m.m2()[0] - enumerate_central(p, 2)).abs() < 1e-15);
            assert!((m.m3()[0] - enumerate_central(p, 3)).abs() < 1e-15);
            assert!((m.m4()[0] - enumerate_central(p, 4)).abs() < 1e-15);
        }
    }

    #[test]
    fn gaussian_moments_match_monte_carlo() {
        let (mu, var) = (0.7, 1.8);
        let d = gauss(vec![mu], vec![var]);
        let m = d.central_moments();
        let mut rng = RngStream::new(11);
        let n = 1_000_000usize;
        let mut acc = [[0.0f64; 2]; 3];
        for _ in 0..n {
            let t = d.sample(&mut rng)[0] - mu;
            for (k, a) in acc.iter_mut().enumerate() {
                let v = t.powi(k as i32 + 2);
                a[0] += v;
                a[1] += v * v;
            }
        }
        let exact = [m.m2()[0], m.m3()[0], m.m4()[0]];
        for k in 0..3 {
            let mean = acc[k][0] / n as f64;
            let se = ((acc[k][1] / n as f64 - mean * mean) / n as f64).sqrt();
            assert!((mean - exact[k]).abs() < 5.0 * se, "order {}: {mean} vs {}", k + 2, exact[k]);
        }
    }

    #[test]
    fn augmentation_appends_point_mass() {
        let g = gauss(vec![0.1, -0.2], vec![0.5, 2.0]).augment_with_bias();
        assert_eq!(g.dim(), 3);
        match &g {
            LatentDistribution::DiagGaussian(g) => {
                assert_eq!(g.mean()[2], 1.0);
                assert_eq!(g.var()[2], 0.0);
            }
            _ => unreachable!(),
        }
        let b = bern(vec![0.7]).augment_with_bias();
        assert_eq!(b.means().as_slice(), &[0.7, 1.0]);
        for d in [g, b] {
            let m = d.central_moments();
            let last = d.dim() - 1;
            assert_eq!((m.m2()[last], m.m3()[last], m.m4()[last]), (0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn sampling_degenerate_cases() {
        let mut rng = RngStream::new(1);
        assert_eq!(gauss(vec![2.0, 3.0], vec![0.0, 0.0]).sample(&mut rng).as_slice(), &[2.0, 3.0]);
        assert_eq!(bern(vec![1.0, 1.0, 1.0]).sample(&mut rng).as_slice(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn gaussian_sample_mean_within_clt_bound() {
        let (mu, var) = (-1.5, 4.0);
        let d = gauss(vec![mu], vec![var]);
        let mut rng = RngStream::new(9);
        let n = 1_000_000;
        let mean = (0..n).map(|_| d.sample(&mut rng)[0]).sum::<f64>() / n as f64;
        assert!((mean - mu).abs() < 4.0 * var.sqrt() / (n as f64).sqrt());
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(gauss(vec![0.0], vec![1.0]).kl_to_prior().unwrap(), 0.0);
        assert_eq!(bern(vec![0.5, 0.5]).kl_to_prior().unwrap(), 0.0);
        assert_eq!(gauss(vec![2.0], vec![1.0]).kl_to_prior().unwrap(), 2.0);
        assert!(matches!(
            gauss(vec![0.0, 0.0], vec![1.0, 0.0]).kl_to_prior(),
            Err(Error::ZeroVariance(1))
        ));
        let kl = bern(vec![0.0, 1.0]).kl_to_prior().unwrap();
        assert!((kl - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(DiagGaussian::from_vecs(vec![0.0], vec![-1.0]).is_err());
        assert!(BernoulliVec::from_vec(vec![1.5]).is_err());
        assert!(DiagGaussian::from_vecs(vec![0.0, 1.0], vec![1.0]).is_err());
    }

    #[test]
    fn sigmoid_logit_round_trip() {
        for &p in &[0.01, 0.3, 0.5, 0.99] {
            assert!((sigmoid(logit(p)) - p).abs() < 1e-15);
        }
        assert_eq!(sigmoid(f64::INFINITY), 1.0);
        assert_eq!(sigmoid(f64::NEG_INFINITY), 0.0);
    }

    proptest! {
        #[test]
        fn moment_invariants(p in 0.0f64..=1.0, var in 0.0f64..10.0) {
            for d in [bern(vec![p]), gauss(vec![0.3], vec![var])] {
                let m = d.central_moments();
                prop_assert!(m.m2()[0] >= 0.0);
                prop_assert!(m.m4()[0] >= m.m2()[0] * m.m2()[0] - 1e-15);
            }
            let m = gauss(vec![1.0], vec![var]).central_moments();
            prop_assert_eq!(m.m3()[0], 0.0);
        }

        #[test]
        fn kl_non_negative(p in 0.0f64..=1.0, mu in -5.0f64..5.0, var in 1e-3f64..10.0) {
            prop_assert!(bern(vec![p]).kl_to_prior().unwrap() >= 0.0);
            prop_assert!(gauss(vec![mu], vec![var]).kl_to_prior().unwrap() >= 0.0);
        }

        #[test]
        fn augmentation_preserves_moments(p in prop::collection::vec(0.0f64..=1.0, 1..6)) {
            let d = bern(p.clone());
            let m = d.central_moments();
            let ma = d.augment_with_bias().central_moments();
            prop_assert_eq!(&ma.m2().as_slice()[..p.len()], m.m2().as_slice());
            prop_assert_eq!(&ma.m3().as_slice()[..p.len()], m.m3().as_slice());
            prop_assert_eq!(&ma.m4().as_slice()[..p.len()], m.m4().as_slice());
        }
    }
}
