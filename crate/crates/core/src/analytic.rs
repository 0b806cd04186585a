//! Closed-form expectations for linear-Gaussian decoders over mean-field
//! latents, and their exact gradients.
//!
//! Everything is evaluated per output dimension `j`. With `u = W_mu z` and
//! `v = W_alpha z`, write `a_j = E[u_j]`, `b_j = E[v_j]` and let the centred
//! parts be `U_j = sum_i W_mu[j,i] (z_i - E z_i)`, `V_j` likewise. Mean-field
//! independence kills every mixed central moment except the diagonal ones,
//! which leaves a handful of per-row sums:
//!
//! ```text
//! SM2 = sum_i M_i^2 m2_i          SA2 = sum_i A_i^2 m2_i
//! C   = sum_i M_i A_i m2_i        G1  = sum_i M_i A_i^2 m3_i
//! G2  = sum_i M_i^2 A_i m3_i      H   = sum_i M_i^2 A_i^2 (m4_i - 3 m2_i^2)
//! A3  = sum_i A_i^3 m3_i          A4  = sum_i A_i^4 (m4_i - 3 m2_i^2)
//! ```
//!
//! from which
//!
//! ```text
//! E[u^2]         = a^2 + SM2
//! Cov(u, v^2)    = 2 b C + G1
//! Cov(u^2, v^2)  = 4 a b C + 2 a G1 + 2 b G2 + H + 2 C^2
//! Var(v^2)       = 4 b^2 SA2 + 4 b A3 + A4 + 2 SA2^2
//! ```
//!
//! All of it is O(k d). Gradients are derived by hand from these
//! expressions; there is no sampling anywhere in this module, so repeated
//! calls are bitwise identical.

use std::f64::consts::PI;

use crate::error::{check_dim, Error, Result};
use crate::latent::LatentDistribution;
use crate::ndcore::{DenseMatrix, DenseVector};

/// Names of the public analytic operations. The oracle registry must cover
/// each of these.
pub const OPERATIONS: &[&str] = &[
    "expected_sq_norm",
    "expected_sq_norm_per_dim",
    "cov_lin_sqnorm",
    "cov_sqnorm_sqnorm",
    "expected_recon_fixed",
    "taylor_log_expect",
    "expected_recon_learnable",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReconMode {
    Fixed { sigma2: f64 },
    Learnable,
}

/// Linear decoder over the bias-augmented latent: both matrices are
/// `k x (d + 1)`, the last column multiplying the constant 1.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDecoder {
    wmu: DenseMatrix,
    walpha: Option<DenseMatrix>,
}

impl LinearDecoder {
    pub fn new(wmu: DenseMatrix, walpha: Option<DenseMatrix>) -> Result<Self> {
        if wmu.cols() < 1 {
            return Err(Error::InvalidParameter(
                "decoder needs at least the bias column".into(),
            ));
        }
        if let Some(wa) = &walpha {
            check_dim("LinearDecoder rows", wmu.rows(), wa.rows())?;
            check_dim("LinearDecoder cols", wmu.cols(), wa.cols())?;
        }
        Ok(Self { wmu, walpha })
    }

    pub fn fixed(wmu: DenseMatrix) -> Result<Self> {
        Self::new(wmu, None)
    }

    pub fn learnable(wmu: DenseMatrix, walpha: DenseMatrix) -> Result<Self> {
        Self::new(wmu, Some(walpha))
    }

    pub fn wmu(&self) -> &DenseMatrix {
        &self.wmu
    }

    pub fn walpha(&self) -> Option<&DenseMatrix> {
        self.walpha.as_ref()
    }

    pub(crate) fn wmu_mut(&mut self) -> &mut DenseMatrix {
        &mut self.wmu
    }

    pub(crate) fn walpha_mut(&mut self) -> Option<&mut DenseMatrix> {
        self.walpha.as_mut()
    }

    pub fn data_dim(&self) -> usize {
        self.wmu.rows()
    }

    /// Latent dimension before bias augmentation.
    pub fn latent_dim(&self) -> usize {
        self.wmu.cols() - 1
    }

    /// `W_mu E[z~]`, the reconstruction mean at the latent mean.
    pub fn mean_prediction(&self, dist: &LatentDistribution) -> Result<DenseVector> {
        check_dim("mean_prediction", self.latent_dim(), dist.dim())?;
        self.wmu.matvec(dist.augment_with_bias().means())
    }

    /// `log p(x | z)` at a single latent point, with gradients with respect to
    /// `z` (unaugmented) and the decoder weights.
    pub fn sample_log_lik(
        &self,
        x: &DenseVector,
        z: &DenseVector,
        mode: ReconMode,
    ) -> Result<SampleLogLik> {
        let k = self.data_dim();
        let d = self.latent_dim();
        check_dim("sample_log_lik x", k, x.len())?;
        check_dim("sample_log_lik z", d, z.len())?;
        let mut zt = z.as_slice().to_vec();
        zt.push(1.0);
        let cols = d + 1;
        let mut grad_zt = vec![0.0; cols];
        let mut gwmu = vec![0.0; k * cols];
        let (value, gwalpha) = match (mode, &self.walpha) {
            (ReconMode::Fixed { sigma2 }, _) => {
                check_sigma2(sigma2)?;
                let mut sq = 0.0;
                for j in 0..k {
                    let row = self.wmu.row(j);
                    let u: f64 = row.iter().zip(&zt).map(|(w, z)| w * z).sum();
                    let res = x[j] - u;
                    sq += res * res;
                    let g_u = res / sigma2;
                    for i in 0..cols {
                        grad_zt[i] += g_u * row[i];
                        gwmu[j * cols + i] = g_u * zt[i];
                    }
                }
                let value = -sq / (2.0 * sigma2) - 0.5 * k as f64 * (2.0 * PI * sigma2).ln();
                (value, None)
            }
            (ReconMode::Learnable, Some(walpha)) => {
                let mut gwa = vec![0.0; k * cols];
                let mut value = -0.5 * k as f64 * (2.0 * PI).ln();
                for j in 0..k {
                    let mrow = self.wmu.row(j);
                    let arow = walpha.row(j);
                    let u: f64 = mrow.iter().zip(&zt).map(|(w, z)| w * z).sum();
                    let v: f64 = arow.iter().zip(&zt).map(|(w, z)| w * z).sum();
                    if v == 0.0 {
                        return Err(Error::DegeneratePrecision { index: j, value: 0.0 });
                    }
                    let res = x[j] - u;
                    value += -0.5 * (res * v).powi(2) + v.abs().ln();
                    let g_u = res * v * v;
                    let g_v = -res * res * v + 1.0 / v;
                    for i in 0..cols {
                        grad_zt[i] += g_u * mrow[i] + g_v * arow[i];
                        gwmu[j * cols + i] = g_u * zt[i];
                        gwa[j * cols + i] = g_v * zt[i];
                    }
                }
                (value, Some(gwa))
            }
            (ReconMode::Learnable, None) => {
                return Err(Error::InvalidParameter(
                    "learnable mode needs a W_alpha matrix".into(),
                ))
            }
        };
        grad_zt.truncate(d);
        let out = SampleLogLik {
            value,
            grad_z: DenseVector::new(grad_zt)?,
            grad_wmu: DenseMatrix::new(k, cols, gwmu)?,
            grad_walpha: gwalpha.map(|g| DenseMatrix::new(k, cols, g)).transpose()?,
        };
        if !out.value.is_finite() {
            return Err(Error::NonFinite("sample_log_lik"));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct SampleLogLik {
    pub value: f64,
    pub grad_z: DenseVector,
    pub grad_wmu: DenseMatrix,
    pub grad_walpha: Option<DenseMatrix>,
}

/// Gradient with respect to the distribution statistics, over the
/// unaugmented latent dimensions.
#[derive(Debug, Clone, PartialEq)]
pub enum StatsGrad {
    Gaussian { mean: DenseVector, var: DenseVector },
    Bernoulli { p: DenseVector },
}

/// Expected reconstruction log-likelihood and its exact gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticRecon {
    pub value: f64,
    pub grad_stats: StatsGrad,
    pub grad_wmu: DenseMatrix,
    pub grad_walpha: Option<DenseMatrix>,
}

struct Moments {
    mean: Vec<f64>,
    m2: Vec<f64>,
    m3: Vec<f64>,
    m4: Vec<f64>,
}

impl Moments {
    fn of(dist: &LatentDistribution) -> Self {
        let cm = dist.central_moments();
        Self {
            mean: dist.means().as_slice().to_vec(),
            m2: cm.m2().as_slice().to_vec(),
            m3: cm.m3().as_slice().to_vec(),
            m4: cm.m4().as_slice().to_vec(),
        }
    }

    /// `m4 - 3 m2^2`, the excess fourth moment; zero for Gaussians.
    fn excess4(&self, i: usize) -> f64 {
        self.m4[i] - 3.0 * self.m2[i] * self.m2[i]
    }
}

#[derive(Default, Clone, Copy)]
struct RowSums {
    a: f64,
    b: f64,
    sm2: f64,
    sa2: f64,
    c: f64,
    g1: f64,
    g2: f64,
    h: f64,
    a3: f64,
    a4: f64,
}

fn row_sums(mrow: &[f64], arow: &[f64], mom: &Moments) -> RowSums {
    let mut s = RowSums::default();
    for i in 0..mrow.len() {
        let (m, a) = (mrow[i], arow[i]);
        let (m2, m3, x4) = (mom.m2[i], mom.m3[i], mom.excess4(i));
        s.a += m * mom.mean[i];
        s.b += a * mom.mean[i];
        s.sm2 += m * m * m2;
        s.sa2 += a * a * m2;
        s.c += m * a * m2;
        s.g1 += m * a * a * m3;
        s.g2 += m * m * a * m3;
        s.h += m * m * a * a * x4;
        s.a3 += a * a * a * m3;
        s.a4 += a * a * a * a * x4;
    }
    s
}

impl RowSums {
    fn second_moment_v(&self) -> f64 {
        self.b * self.b + self.sa2
    }
    fn cov_lin_sq(&self) -> f64 {
        2.0 * self.b * self.c + self.g1
    }
    fn cov_sq_sq(&self) -> f64 {
        4.0 * self.a * self.b * self.c
            + 2.0 * self.a * self.g1
            + 2.0 * self.b * self.g2
            + self.h
            + 2.0 * self.c * self.c
    }
    fn var_v_sq(&self) -> f64 {
        4.0 * self.b * self.b * self.sa2 + 4.0 * self.b * self.a3 + self.a4 + 2.0 * self.sa2 * self.sa2
    }
}

fn check_cols(context: &'static str, w: &DenseMatrix, dist: &LatentDistribution) -> Result<()> {
    check_dim(context, w.cols(), dist.dim())
}

fn check_pair(context: &'static str, wmu: &DenseMatrix, walpha: &DenseMatrix) -> Result<()> {
    check_dim(context, wmu.rows(), walpha.rows())?;
    check_dim(context, wmu.cols(), walpha.cols())
}

fn finite_vec(context: &'static str, v: Vec<f64>) -> Result<DenseVector> {
    DenseVector::new(v).map_err(|_| Error::NonFinite(context))
}

fn check_sigma2(sigma2: f64) -> Result<()> {
    if sigma2 > 0.0 && sigma2.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "sigma2 must be positive and finite, got {sigma2}"
        )))
    }
}

/// `E||W z||^2 = ||W E[z]||^2 + sum_i ||w_i||^2 Var(z_i)`. `dist` must
/// already match the column count of `w` (augment first if `w` has a bias
/// column).
pub fn expected_sq_norm(w: &DenseMatrix, dist: &LatentDistribution) -> Result<f64> {
    Ok(expected_sq_norm_per_dim(w, dist)?.iter().sum())
}

/// `E[(W z)_j^2]` for every output `j`.
pub fn expected_sq_norm_per_dim(w: &DenseMatrix, dist: &LatentDistribution) -> Result<DenseVector> {
    check_cols("expected_sq_norm_per_dim", w, dist)?;
    let mean = dist.means().as_slice();
    let m2 = dist.central_moments().m2().clone();
    let out = (0..w.rows())
        .map(|j| {
            let row = w.row(j);
            let a: f64 = row.iter().zip(mean).map(|(w, e)| w * e).sum();
            let s: f64 = row.iter().zip(m2.iter()).map(|(w, v)| w * w * v).sum();
            a * a + s
        })
        .collect();
    finite_vec("expected_sq_norm_per_dim", out)
}

/// `Cov((W_mu z)_j, (W_alpha z)_j^2)` per output.
pub fn cov_lin_sqnorm(
    wmu: &DenseMatrix,
    walpha: &DenseMatrix,
    dist: &LatentDistribution,
) -> Result<DenseVector> {
    check_pair("cov_lin_sqnorm", wmu, walpha)?;
    check_cols("cov_lin_sqnorm", wmu, dist)?;
    let mom = Moments::of(dist);
    let out = (0..wmu.rows())
        .map(|j| row_sums(wmu.row(j), walpha.row(j), &mom).cov_lin_sq())
        .collect();
    finite_vec("cov_lin_sqnorm", out)
}

/// `Cov((W_mu z)_j^2, (W_alpha z)_j^2)` per output.
pub fn cov_sqnorm_sqnorm(
    wmu: &DenseMatrix,
    walpha: &DenseMatrix,
    dist: &LatentDistribution,
) -> Result<DenseVector> {
    check_pair("cov_sqnorm_sqnorm", wmu, walpha)?;
    check_cols("cov_sqnorm_sqnorm", wmu, dist)?;
    let mom = Moments::of(dist);
    let out = (0..wmu.rows())
        .map(|j| row_sums(wmu.row(j), walpha.row(j), &mom).cov_sq_sq())
        .collect();
    finite_vec("cov_sqnorm_sqnorm", out)
}

/// Second-order surrogate `E[ln Q] ~ ln E[Q] - Var[Q] / (2 E[Q]^2)`.
pub fn taylor_log_expect(mean_q: f64, var_q: f64) -> Result<f64> {
    if !(mean_q > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "log surrogate needs a positive mean, got {mean_q}"
        )));
    }
    Ok(mean_q.ln() - var_q / (2.0 * mean_q * mean_q))
}

/// Accumulated gradient with respect to the augmented moments.
struct MomentGrad {
    mean: Vec<f64>,
    m2: Vec<f64>,
    m3: Vec<f64>,
    m4: Vec<f64>,
}

impl MomentGrad {
    fn zeros(n: usize) -> Self {
        Self {
            mean: vec![0.0; n],
            m2: vec![0.0; n],
            m3: vec![0.0; n],
            m4: vec![0.0; n],
        }
    }

    /// Chains into the distribution's own parameters, dropping the bias
    /// dimension.
    fn into_stats(self, dist: &LatentDistribution) -> Result<StatsGrad> {
        let d = dist.dim();
        match dist {
            LatentDistribution::DiagGaussian(g) => {
                let var = g.var().as_slice();
                let gvar = (0..d).map(|i| self.m2[i] + self.m4[i] * 6.0 * var[i]).collect();
                Ok(StatsGrad::Gaussian {
                    mean: finite_vec("analytic gradient", self.mean[..d].to_vec())?,
                    var: finite_vec("analytic gradient", gvar)?,
                })
            }
            LatentDistribution::Bernoulli(b) => {
                let p = b.p().as_slice();
                let gp = (0..d)
                    .map(|i| {
                        let p = p[i];
                        self.mean[i]
                            + self.m2[i] * (1.0 - 2.0 * p)
                            + self.m3[i] * (1.0 - 6.0 * p + 6.0 * p * p)
                            + self.m4[i] * (1.0 - 8.0 * p + 18.0 * p * p - 12.0 * p * p * p)
                    })
                    .collect();
                Ok(StatsGrad::Bernoulli {
                    p: finite_vec("analytic gradient", gp)?,
                })
            }
        }
    }
}

fn check_recon_dims(x: &DenseVector, dec: &LinearDecoder, dist: &LatentDistribution) -> Result<()> {
    check_dim("expected_recon data dim", dec.data_dim(), x.len())?;
    check_dim("expected_recon latent dim", dec.latent_dim(), dist.dim())
}

/// Exact `E[log N(x; W_mu z~, sigma2 I)]` over `z ~ dist`, where `z~` is
/// `z` with a trailing 1.
pub fn expected_recon_fixed(
    x: &DenseVector,
    dec: &LinearDecoder,
    dist: &LatentDistribution,
    sigma2: f64,
) -> Result<AnalyticRecon> {
    check_sigma2(sigma2)?;
    check_recon_dims(x, dec, dist)?;
    let aug = dist.augment_with_bias();
    let mom = Moments::of(&aug);
    let k = dec.data_dim();
    let cols = aug.dim();
    let wmu = dec.wmu();
    let mut grad = MomentGrad::zeros(cols);
    let mut gw = vec![0.0; k * cols];
    let mut sq = 0.0;
    let g_sm2 = -0.5 / sigma2;
    for j in 0..k {
        let row = wmu.row(j);
        let mut a = 0.0;
        let mut sm2 = 0.0;
        for i in 0..cols {
            a += row[i] * mom.mean[i];
            sm2 += row[i] * row[i] * mom.m2[i];
        }
        let r = x[j] - a;
        sq += r * r + sm2;
        let g_a = r / sigma2;
        for i in 0..cols {
            let m = row[i];
            grad.mean[i] += g_a * m;
            grad.m2[i] += g_sm2 * m * m;
            gw[j * cols + i] = g_a * mom.mean[i] + g_sm2 * 2.0 * m * mom.m2[i];
        }
    }
    let value = -sq / (2.0 * sigma2) - 0.5 * k as f64 * (2.0 * PI * sigma2).ln();
    if !value.is_finite() {
        return Err(Error::NonFinite("expected_recon_fixed"));
    }
    Ok(AnalyticRecon {
        value,
        grad_stats: grad.into_stats(dist)?,
        grad_wmu: DenseMatrix::new(k, cols, gw).map_err(|_| Error::NonFinite("expected_recon_fixed"))?,
        grad_walpha: None,
    })
}

/// Expected reconstruction log-likelihood under the learnable-precision
/// decoder `N(x; W_mu z~, diag(1 / (W_alpha z~)^2))`.
///
/// The quadratic term `E[((x - u) v)^2]` is exact; `E[ln |v_j|]` uses the
/// second-order log surrogate on `Q_j = v_j^2`.
pub fn expected_recon_learnable(
    x: &DenseVector,
    dec: &LinearDecoder,
    dist: &LatentDistribution,
) -> Result<AnalyticRecon> {
    check_recon_dims(x, dec, dist)?;
    let walpha = dec.walpha().ok_or_else(|| {
        Error::InvalidParameter("learnable mode needs a W_alpha matrix".into())
    })?;
    let wmu = dec.wmu();
    let aug = dist.augment_with_bias();
    let mom = Moments::of(&aug);
    let k = dec.data_dim();
    let cols = aug.dim();
    let mut grad = MomentGrad::zeros(cols);
    let mut gwm = vec![0.0; k * cols];
    let mut gwa = vec![0.0; k * cols];
    let mut value = -0.5 * k as f64 * (2.0 * PI).ln();

    for j in 0..k {
        let mrow = wmu.row(j);
        let arow = walpha.row(j);
        let s = row_sums(mrow, arow, &mom);
        let q = s.second_moment_v();
        if !(q > 0.0) {
            return Err(Error::DegeneratePrecision { index: j, value: q });
        }
        let var_q = s.var_v_sq();
        let r = x[j] - s.a;
        let t = q * (r * r + s.sm2) - 4.0 * r * s.b * s.c - 2.0 * r * s.g1
            + 2.0 * s.b * s.g2
            + s.h
            + 2.0 * s.c * s.c;
        value += -0.5 * t + 0.5 * taylor_log_expect(q, var_q)?;

        // adjoints of the row value with respect to the row sums
        let dt = -0.5;
        let dvar_q = -1.0 / (4.0 * q * q);
        let dq = dt * (r * r + s.sm2) + 1.0 / (2.0 * q) + var_q / (2.0 * q * q * q);
        let g_a = -dt * (2.0 * r * q - 4.0 * s.b * s.c - 2.0 * s.g1);
        let g_b = dt * (-4.0 * r * s.c + 2.0 * s.g2)
            + dq * 2.0 * s.b
            + dvar_q * (8.0 * s.b * s.sa2 + 4.0 * s.a3);
        let g_sm2 = dt * q;
        let g_sa2 = dq + dvar_q * (4.0 * s.b * s.b + 4.0 * s.sa2);
        let g_c = dt * (4.0 * s.c - 4.0 * r * s.b);
        let g_g1 = dt * (-2.0 * r);
        let g_g2 = dt * (2.0 * s.b);
        let g_h = dt;
        let g_a3 = dvar_q * 4.0 * s.b;
        let g_a4 = dvar_q;

        for i in 0..cols {
            let (m, a) = (mrow[i], arow[i]);
            let (e, m2, m3) = (mom.mean[i], mom.m2[i], mom.m3[i]);
            let x4 = mom.excess4(i);
            let (mm, aa, ma) = (m * m, a * a, m * a);
            let quartic = g_h * mm * aa + g_a4 * aa * aa;
            grad.mean[i] += g_a * m + g_b * a;
            grad.m2[i] += g_sm2 * mm + g_sa2 * aa + g_c * ma - 6.0 * m2 * quartic;
            grad.m3[i] += g_g1 * m * aa + g_g2 * mm * a + g_a3 * aa * a;
            grad.m4[i] += quartic;
            gwm[j * cols + i] = g_a * e
                + g_sm2 * 2.0 * m * m2
                + g_c * a * m2
                + g_g1 * aa * m3
                + g_g2 * 2.0 * ma * m3
                + g_h * 2.0 * m * aa * x4;
            gwa[j * cols + i] = g_b * e
                + g_sa2 * 2.0 * a * m2
                + g_c * m * m2
                + g_g1 * 2.0 * ma * m3
                + g_g2 * mm * m3
                + g_h * 2.0 * mm * a * x4
                + g_a3 * 3.0 * aa * m3
                + g_a4 * 4.0 * aa * a * x4;
        }
    }
    if !value.is_finite() {
        return Err(Error::NonFinite("expected_recon_learnable"));
    }
    let nf = |_| Error::NonFinite("expected_recon_learnable");
    Ok(AnalyticRecon {
        value,
        grad_stats: grad.into_stats(dist)?,
        grad_wmu: DenseMatrix::new(k, cols, gwm).map_err(nf)?,
        grad_walpha: Some(DenseMatrix::new(k, cols, gwa).map_err(nf)?),
    })
}

/// Dispatches on `mode`.
pub fn expected_recon(
    x: &DenseVector,
    dec: &LinearDecoder,
    dist: &LatentDistribution,
    mode: ReconMode,
) -> Result<AnalyticRecon> {
    match mode {
        ReconMode::Fixed { sigma2 } => expected_recon_fixed(x, dec, dist, sigma2),
        ReconMode::Learnable => expected_recon_learnable(x, dec, dist),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::{BernoulliVec, DiagGaussian};
    use crate::ndcore::RngStream;

    fn gauss(mean: Vec<f64>, var: Vec<f64>) -> LatentDistribution {
        DiagGaussian::from_vecs(mean, var).unwrap().into()
    }

    fn rand_matrix(rng: &mut RngStream, r: usize, c: usize) -> DenseMatrix {
        DenseMatrix::new(r, c, (0..r * c).map(|_| rng.standard_normal()).collect()).unwrap()
    }

    /// Every outcome of a Bernoulli vector with its probability.
    fn outcomes(p: &[f64]) -> Vec<(f64, Vec<f64>)> {
        (0..1usize << p.len())
            .map(|mask| {
                let z: Vec<f64> = (0..p.len()).map(|i| ((mask >> i) & 1) as f64).collect();
                let w = z
                    .iter()
                    .zip(p)
                    .map(|(z, p)| if *z == 1.0 { *p } else { 1.0 - p })
                    .product();
                (w, z)
            })
            .collect()
    }

    #[test]
    fn sq_norm_hand_cases() {
        let w = DenseMatrix::identity(2);
        assert_eq!(expected_sq_norm(&w, &gauss(vec![1.0, 1.0], vec![0.0, 0.0])).unwrap(), 2.0);
        assert_eq!(expected_sq_norm(&w, &gauss(vec![0.0, 0.0], vec![1.0, 1.0])).unwrap(), 2.0);
        let per = expected_sq_norm_per_dim(&w, &gauss(vec![1.0, 0.0], vec![0.0, 1.0])).unwrap();
        assert_eq!(per.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn sq_norm_rejects_mismatch() {
        let w = DenseMatrix::identity(3);
        assert!(matches!(
            expected_sq_norm(&w, &gauss(vec![0.0; 2], vec![1.0; 2])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn covariances_vanish_for_point_mass_and_centred_gaussian() {
        let mut rng = RngStream::new(5);
        let wm = rand_matrix(&mut rng, 4, 3);
        let wa = rand_matrix(&mut rng, 4, 3);
        let point = gauss(vec![0.3, -1.0, 2.0], vec![0.0; 3]);
        assert!(cov_lin_sqnorm(&wm, &wa, &point).unwrap().iter().all(|&v| v == 0.0));
        assert!(cov_sqnorm_sqnorm(&wm, &wa, &point).unwrap().iter().all(|&v| v == 0.0));
        let centred = gauss(vec![0.0; 3], vec![0.5, 1.0, 2.0]);
        assert!(cov_lin_sqnorm(&wm, &wa, &centred).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn covariances_match_enumeration_single_bernoulli() {
        let (a, b, p) = (1.7, -0.6, 0.3);
        let wm = DenseMatrix::new(1, 1, vec![a]).unwrap();
        let wa = DenseMatrix::new(1, 1, vec![b]).unwrap();
        let dist: LatentDistribution = BernoulliVec::from_vec(vec![p]).unwrap().into();
        let (mut eu, mut ev2, mut euv2, mut eu2, mut eu2v2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (w, z) in outcomes(&[p]) {
            let (u, v) = (a * z[0], b * z[0]);
            eu += w * u;
            ev2 += w * v * v;
            euv2 += w * u * v * v;
            eu2 += w * u * u;
            eu2v2 += w * u * u * v * v;
        }
        let lin = cov_lin_sqnorm(&wm, &wa, &dist).unwrap()[0];
        let sq = cov_sqnorm_sqnorm(&wm, &wa, &dist).unwrap()[0];
        assert!((lin - (euv2 - eu * ev2)).abs() < 1e-14);
        assert!((sq - (eu2v2 - eu2 * ev2)).abs() < 1e-14);
    }

    #[test]
    fn covariances_match_enumeration_bernoulli_d6() {
        let mut rng = RngStream::new(17);
        let (k, d) = (3, 6);
        let wm = rand_matrix(&mut rng, k, d);
        let wa = rand_matrix(&mut rng, k, d);
        let p: Vec<f64> = (0..d).map(|_| 0.05 + 0.9 * rng.uniform()).collect();
        let dist: LatentDistribution = BernoulliVec::from_vec(p.clone()).unwrap().into();
        let lin = cov_lin_sqnorm(&wm, &wa, &dist).unwrap();
        let sq = cov_sqnorm_sqnorm(&wm, &wa, &dist).unwrap();
        let per = expected_sq_norm_per_dim(&wm, &dist).unwrap();
        for j in 0..k {
            let mut acc = [0.0f64; 6];
            for (w, z) in outcomes(&p) {
                let u: f64 = wm.row(j).iter().zip(&z).map(|(a, b)| a * b).sum();
                let v: f64 = wa.row(j).iter().zip(&z).map(|(a, b)| a * b).sum();
                for (slot, val) in acc.iter_mut().zip([u, v * v, u * v * v, u * u, u * u * v * v, 1.0]) {
                    *slot += w * val;
                }
            }
            let [eu, ev2, euv2, eu2, eu2v2, _] = acc;
            let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-12);
            assert!(rel(lin[j], euv2 - eu * ev2) < 1e-9);
            assert!(rel(sq[j], eu2v2 - eu2 * ev2) < 1e-9);
            assert!(rel(per[j], eu2) < 1e-10);
        }
    }

    #[test]
    fn taylor_surrogate_cases() {
        assert_eq!(taylor_log_expect(3.5, 0.0).unwrap(), 3.5f64.ln());
        assert_eq!(taylor_log_expect(1.0, 0.5).unwrap(), -0.25);
        assert!(taylor_log_expect(0.0, 1.0).is_err());
        assert!(taylor_log_expect(-1.0, 0.0).is_err());
    }

    #[test]
    fn fixed_recon_vanishes_at_exact_fit() {
        // x = W_mu E[z], Var = 0, k = 1, sigma2 = 1/(2 pi)
        let wmu = DenseMatrix::new(1, 3, vec![2.0, -1.0, 0.5]).unwrap();
        let dec = LinearDecoder::fixed(wmu).unwrap();
        let dist = gauss(vec![0.4, 1.1], vec![0.0, 0.0]);
        let x = DenseVector::new(vec![2.0 * 0.4 - 1.1 + 0.5]).unwrap();
        let r = expected_recon_fixed(&x, &dec, &dist, 1.0 / (2.0 * PI)).unwrap();
        assert!(r.value.abs() < 1e-14, "{}", r.value);
    }

    #[test]
    fn fixed_recon_rejects_bad_sigma() {
        let dec = LinearDecoder::fixed(DenseMatrix::zeros(1, 2)).unwrap();
        let dist = gauss(vec![0.0], vec![1.0]);
        let x = DenseVector::zeros(1);
        assert!(expected_recon_fixed(&x, &dec, &dist, 0.0).is_err());
        assert!(expected_recon_fixed(&x, &dec, &dist, -1.0).is_err());
    }

    #[test]
    fn learnable_requires_alpha_and_positive_precision() {
        let dec = LinearDecoder::fixed(DenseMatrix::zeros(2, 2)).unwrap();
        let dist = gauss(vec![0.0], vec![1.0]);
        let x = DenseVector::zeros(2);
        assert!(expected_recon_learnable(&x, &dec, &dist).is_err());
        let dec = LinearDecoder::learnable(DenseMatrix::zeros(2, 2), DenseMatrix::zeros(2, 2)).unwrap();
        assert!(matches!(
            expected_recon_learnable(&x, &dec, &dist),
            Err(Error::DegeneratePrecision { index: 0, .. })
        ));
    }

    #[test]
    fn learnable_point_mass_is_plain_gaussian_loglik() {
        let mut rng = RngStream::new(23);
        let (k, d) = (4, 3);
        let wmu = rand_matrix(&mut rng, k, d + 1);
        let mut wa = rand_matrix(&mut rng, k, d + 1);
        for j in 0..k {
            wa.set(j, d, 3.0 + wa.get(j, d).abs()).unwrap();
        }
        let mean: Vec<f64> = (0..d).map(|_| 0.1 * rng.standard_normal()).collect();
        let dist = gauss(mean.clone(), vec![0.0; d]);
        let x = DenseVector::new((0..k).map(|_| rng.standard_normal()).collect()).unwrap();
        let dec = LinearDecoder::learnable(wmu.clone(), wa.clone()).unwrap();
        let got = expected_recon_learnable(&x, &dec, &dist).unwrap().value;
        let mut zt = mean;
        zt.push(1.0);
        let zt = DenseVector::new(zt).unwrap();
        let mu = wmu.matvec(&zt).unwrap();
        let alpha = wa.matvec(&zt).unwrap();
        let want: f64 = (0..k)
            .map(|j| {
                let s = 1.0 / alpha[j];
                -0.5 * ((x[j] - mu[j]) / s).powi(2) - s.ln() - 0.5 * (2.0 * PI).ln()
            })
            .sum();
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }

    #[test]
    fn repeated_calls_are_bitwise_identical() {
        let mut rng = RngStream::new(2);
        let dec = LinearDecoder::learnable(rand_matrix(&mut rng, 3, 3), {
            let mut m = rand_matrix(&mut rng, 3, 3);
            for j in 0..3 {
                m.set(j, 2, 4.0).unwrap();
            }
            m
        })
        .unwrap();
        let dist = gauss(vec![0.2, -0.1], vec![0.3, 0.05]);
        let x = DenseVector::new(vec![0.5, 0.1, -0.3]).unwrap();
        let first = expected_recon_learnable(&x, &dec, &dist).unwrap();
        for _ in 0..100 {
            assert_eq!(expected_recon_learnable(&x, &dec, &dist).unwrap(), first);
        }
    }

    #[test]
    fn sample_log_lik_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(4);
        let (k, d) = (3, 2);
        let wmu = rand_matrix(&mut rng, k, d + 1);
        let mut wa = rand_matrix(&mut rng, k, d + 1);
        for j in 0..k {
            wa.set(j, d, 3.0).unwrap();
        }
        let dec = LinearDecoder::learnable(wmu, wa).unwrap();
        let x = DenseVector::new(vec![0.3, -0.2, 0.9]).unwrap();
        let z = DenseVector::new(vec![0.1, 0.2]).unwrap();
        for mode in [ReconMode::Fixed { sigma2: 0.3 }, ReconMode::Learnable] {
            let s = dec.sample_log_lik(&x, &z, mode).unwrap();
            for i in 0..d {
                let h = 1e-6;
                let mut zp = z.as_slice().to_vec();
                let mut zm = zp.clone();
                zp[i] += h;
                zm[i] -= h;
                let f = |v: Vec<f64>| dec.sample_log_lik(&x, &DenseVector::new(v).unwrap(), mode).unwrap().value;
                let fd = (f(zp) - f(zm)) / (2.0 * h);
                assert!((fd - s.grad_z[i]).abs() < 1e-6 * fd.abs().max(1.0));
            }
        }
    }
}
