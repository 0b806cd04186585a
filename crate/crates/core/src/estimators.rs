//! Gradient estimators for the reconstruction term, all reporting the loss
//! `-log p(x|z)` and its gradient with respect to the encoder's natural
//! parameters: `(mean, log-variance)` for Gaussian latents (mean block first)
//! and logits for Bernoulli latents.
//!
//! Every stochastic estimator has a `*_with_noise` form that takes the noise
//! explicitly; the seeded form just draws that noise from an [`RngStream`].

use serde::{Deserialize, Serialize};

use crate::analytic::{self, LinearDecoder, ReconMode, StatsGrad};
use crate::error::{check_dim, Error, Result};
use crate::latent::{sigmoid, BernoulliVec, DiagGaussian, LatentDistribution};
use crate::ndcore::{DenseVector, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Silent,
    Reparam,
    Gumbel,
    Reinforce,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Silent => "silent",
            Self::Reparam => "reparam",
            Self::Gumbel => "gumbel",
            Self::Reinforce => "reinforce",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "silent" => Some(Self::Silent),
            "reparam" => Some(Self::Reparam),
            "gumbel" => Some(Self::Gumbel),
            "reinforce" => Some(Self::Reinforce),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorOutput {
    pub loss: f64,
    /// `d loss / d natural params`; length `2d` (Gaussian) or `d` (Bernoulli).
    pub grad_stats: DenseVector,
    /// The latent point the decoder was evaluated at, when there was one.
    pub aux: Option<DenseVector>,
}

/// A decoder evaluated at a single latent point: returns `log p(x|z)` and
/// its gradient with respect to `z`. Implementations may record parameter
/// gradients as a side effect.
pub trait DecoderEval {
    fn eval(&mut self, x: &DenseVector, z: &DenseVector) -> Result<(f64, DenseVector)>;
}

impl<F> DecoderEval for F
where
    F: FnMut(&DenseVector, &DenseVector) -> Result<(f64, DenseVector)>,
{
    fn eval(&mut self, x: &DenseVector, z: &DenseVector) -> Result<(f64, DenseVector)> {
        self(x, z)
    }
}

/// A [`LinearDecoder`] evaluated pointwise.
pub struct LinearEval<'a> {
    pub dec: &'a LinearDecoder,
    pub mode: ReconMode,
}

impl DecoderEval for LinearEval<'_> {
    fn eval(&mut self, x: &DenseVector, z: &DenseVector) -> Result<(f64, DenseVector)> {
        let s = self.dec.sample_log_lik(x, z, self.mode)?;
        Ok((s.value, s.grad_z))
    }
}

fn finite_output(loss: f64, grad: Vec<f64>, aux: Option<DenseVector>) -> Result<EstimatorOutput> {
    if !loss.is_finite() {
        return Err(Error::NonFinite("estimator loss"));
    }
    Ok(EstimatorOutput {
        loss,
        grad_stats: DenseVector::new(grad).map_err(|_| Error::NonFinite("estimator gradient"))?,
        aux,
    })
}

pub fn reparam_grad<D: DecoderEval>(
    x: &DenseVector,
    decoder: &mut D,
    dist: &DiagGaussian,
    rng: &mut RngStream,
) -> Result<EstimatorOutput> {
    let eps: Vec<f64> = (0..dist.dim()).map(|_| rng.standard_normal()).collect();
    reparam_grad_with_noise(x, decoder, dist, &eps)
}

/// `z = mean + sqrt(var) * eps`, differentiated through `z`.
pub fn reparam_grad_with_noise<D: DecoderEval>(
    x: &DenseVector,
    decoder: &mut D,
    dist: &DiagGaussian,
    eps: &[f64],
) -> Result<EstimatorOutput> {
    let d = dist.dim();
    check_dim("reparam noise", d, eps.len())?;
    let sd: Vec<f64> = dist.var().iter().map(|v| v.sqrt()).collect();
    let z: Vec<f64> = (0..d).map(|i| dist.mean()[i] + sd[i] * eps[i]).collect();
    let z = DenseVector::new(z)?;
    let (ll, g) = decoder.eval(x, &z)?;
    check_dim("decoder gradient", d, g.len())?;
    let mut grad = vec![0.0; 2 * d];
    for i in 0..d {
        grad[i] = -g[i];
        grad[d + i] = -g[i] * eps[i] * sd[i] * 0.5;
    }
    finite_output(-ll, grad, Some(z))
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("temperature must be positive, got {t}")))
    }
}

pub fn gumbel_softmax_grad<D: DecoderEval>(
    x: &DenseVector,
    decoder: &mut D,
    dist: &BernoulliVec,
    temperature: f64,
    rng: &mut RngStream,
) -> Result<EstimatorOutput> {
    check_temperature(temperature)?;
    let noise: Vec<f64> = (0..dist.dim())
        .map(|_| {
            let u = rng.uniform_open();
            u.ln() - (-u).ln_1p()
        })
        .collect();
    gumbel_softmax_grad_with_noise(x, decoder, dist, temperature, &noise)
}

/// Binary-concrete relaxation `s = sigmoid((logit p + g) / t)` with logistic
/// noise `g`, differentiated through `s`.
pub fn gumbel_softmax_grad_with_noise<D: DecoderEval>(
    x: &DenseVector,
    decoder: &mut D,
    dist: &BernoulliVec,
    temperature: f64,
    noise: &[f64],
) -> Result<EstimatorOutput> {
    check_temperature(temperature)?;
    let d = dist.dim();
    check_dim("gumbel noise", d, noise.len())?;
    let s: Vec<f64> = (0..d)
        .map(|i| sigmoid((dist.logits()[i] + noise[i]) / temperature))
        .collect();
    let s = DenseVector::new(s)?;
    let (ll, g) = decoder.eval(x, &s)?;
    check_dim("decoder gradient", d, g.len())?;
    let grad = (0..d)
        .map(|i| -g[i] * s[i] * (1.0 - s[i]) / temperature)
        .collect();
    finite_output(-ll, grad, Some(s))
}

/// Global exponential moving average of the loss, used as the score-function
/// baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct ReinforceState {
    baseline: f64,
    momentum: f64,
}

impl ReinforceState {
    pub fn new(momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidParameter(format!("momentum must be in [0, 1), got {momentum}")));
        }
        Ok(Self { baseline: 0.0, momentum })
    }

    pub fn with_baseline(momentum: f64, baseline: f64) -> Result<Self> {
        if !baseline.is_finite() {
            return Err(Error::NonFinite("reinforce baseline"));
        }
        Ok(Self { baseline, ..Self::new(momentum)? })
    }

    pub fn baseline(&self) -> f64 {
        self.baseline
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn update(&mut self, loss: f64) {
        self.baseline = self.momentum * self.baseline + (1.0 - self.momentum) * loss;
    }
}

impl Default for ReinforceState {
    fn default() -> Self {
        Self { baseline: 0.0, momentum: 0.9 }
    }
}

pub fn reinforce_grad<D: DecoderEval>(
    x: &DenseVector,
    decoder: &mut D,
    dist: &BernoulliVec,
    state: &mut ReinforceState,
    rng: &mut RngStream,
) -> Result<EstimatorOutput> {
    let z = LatentDistribution::Bernoulli(dist.clone()).sample(rng);
    let out = reinforce_grad_at(x, decoder, dist, state.baseline, &z)?;
    state.update(out.loss);
    Ok(out)
}

/// Score-function gradient `(loss(z) - baseline) (z - p)` at a given hard
/// sample `z`, without touching any running state.
pub fn reinforce_grad_at<D: DecoderEval>(
    x: &DenseVector,
    decoder: &mut D,
    dist: &BernoulliVec,
    baseline: f64,
    z: &DenseVector,
) -> Result<EstimatorOutput> {
    let d = dist.dim();
    check_dim("reinforce sample", d, z.len())?;
    let (ll, _) = decoder.eval(x, z)?;
    let loss = -ll;
    let centred = loss - baseline;
    let grad = (0..d).map(|i| centred * (z[i] - dist.p()[i])).collect();
    finite_output(loss, grad, Some(z.clone()))
}

/// Re-expresses `d value / d stats` as `d loss / d natural params`, where
/// `loss = -value`.
pub fn natural_loss_grad(dist: &LatentDistribution, g: &StatsGrad) -> Result<DenseVector> {
    let out = match (dist, g) {
        (LatentDistribution::DiagGaussian(q), StatsGrad::Gaussian { mean, var }) => {
            let mut v: Vec<f64> = mean.iter().map(|m| -m).collect();
            v.extend(var.iter().zip(q.var().iter()).map(|(gv, s2)| -gv * s2));
            v
        }
        (LatentDistribution::Bernoulli(b), StatsGrad::Bernoulli { p }) => p
            .iter()
            .zip(b.spread().iter())
            .map(|(gp, s)| -gp * s)
            .collect(),
        _ => {
            return Err(Error::InvalidParameter(
                "gradient kind does not match the distribution".into(),
            ))
        }
    };
    DenseVector::new(out).map_err(|_| Error::NonFinite("natural gradient"))
}

/// Exact gradient of the expected loss under a linear decoder.
pub fn silent_grad(
    x: &DenseVector,
    dec: &LinearDecoder,
    dist: &LatentDistribution,
    mode: ReconMode,
) -> Result<EstimatorOutput> {
    let r = analytic::expected_recon(x, dec, dist, mode)?;
    Ok(EstimatorOutput {
        loss: -r.value,
        grad_stats: natural_loss_grad(dist, &r.grad_stats)?,
        aux: None,
    })
}

/// Gradient of the KL term with respect to the natural parameters, matching
/// [`LatentDistribution::kl_to_prior`].
pub fn kl_natural_grad(dist: &LatentDistribution) -> DenseVector {
    match dist {
        LatentDistribution::DiagGaussian(q) => {
            let mut v = q.mean().as_slice().to_vec();
            v.extend(q.var().iter().map(|s2| 0.5 * (s2 - 1.0)));
            DenseVector::from_raw(v)
        }
        LatentDistribution::Bernoulli(b) => {
            DenseVector::from_raw(
            b.logits()
                .iter()
                .zip(b.spread().iter())
                .map(|(&l, &s)| if s == 0.0 { 0.0 } else { l * s })
                .collect(),
        )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::logit;
    use crate::oracle::instances::random_instance;
    use crate::oracle::{enumerate_bernoulli, fd_gradient, relative_error};
    use crate::latent::LatentKind;

    const FIXED: ReconMode = ReconMode::Fixed { sigma2: 0.5 };

    fn bern(inst: &crate::oracle::instances::Instance) -> &BernoulliVec {
        match &inst.dist {
            LatentDistribution::Bernoulli(b) => b,
            _ => unreachable!(),
        }
    }

    fn gauss(inst: &crate::oracle::instances::Instance) -> &DiagGaussian {
        match &inst.dist {
            LatentDistribution::DiagGaussian(g) => g,
            _ => unreachable!(),
        }
    }

    #[test]
    fn reparam_zero_noise_evaluates_at_mean() {
        let inst = random_instance(&mut RngStream::new(1), LatentKind::Gaussian, 4, 3, false);
        let g = gauss(&inst);
        let mut eval = LinearEval { dec: &inst.dec, mode: FIXED };
        let out = reparam_grad_with_noise(&inst.x, &mut eval, g, &[0.0; 3]).unwrap();
        assert_eq!(out.aux.as_ref().unwrap(), g.mean());
        let s = inst.dec.sample_log_lik(&inst.x, g.mean(), FIXED).unwrap();
        for i in 0..3 {
            assert_eq!(out.grad_stats[i], -s.grad_z[i]);
            assert_eq!(out.grad_stats[3 + i], 0.0);
        }
        assert_eq!(out.loss, -s.value);
    }

    #[test]
    fn reparam_with_point_mass_has_no_spread() {
        let inst = random_instance(&mut RngStream::new(2), LatentKind::Gaussian, 4, 3, false);
        let point = DiagGaussian::new(gauss(&inst).mean().clone(), DenseVector::zeros(3)).unwrap();
        let mut eval = LinearEval { dec: &inst.dec, mode: FIXED };
        let mut rng = RngStream::new(9);
        let first = reparam_grad(&inst.x, &mut eval, &point, &mut rng).unwrap();
        for _ in 0..50 {
            let next = reparam_grad(&inst.x, &mut eval, &point, &mut rng).unwrap();
            assert_eq!(next.grad_stats, first.grad_stats);
        }
    }

    #[test]
    fn reparam_mean_matches_silent() {
        let inst = random_instance(&mut RngStream::new(3), LatentKind::Gaussian, 4, 3, false);
        let silent = silent_grad(&inst.x, &inst.dec, &inst.dist, FIXED).unwrap();
        let g = gauss(&inst);
        let root = RngStream::new(77);
        let n = 20_000;
        let mut sum = vec![0.0; 6];
        let mut sq = vec![0.0; 6];
        for s in 0..n {
            let mut eval = LinearEval { dec: &inst.dec, mode: FIXED };
            let out = reparam_grad(&inst.x, &mut eval, g, &mut root.split(s)).unwrap();
            for i in 0..6 {
                sum[i] += out.grad_stats[i];
                sq[i] += out.grad_stats[i] * out.grad_stats[i];
            }
        }
        for i in 0..6 {
            let mean = sum[i] / n as f64;
            let se = ((sq[i] / n as f64 - mean * mean) / (n as f64 - 1.0)).sqrt();
            assert!((mean - silent.grad_stats[i]).abs() <= 5.0 * se, "coord {i}");
        }
    }

    #[test]
    fn gumbel_zero_noise_unit_temperature_returns_p() {
        let p = [0.01, 0.2, 0.5, 0.77, 0.99];
        let b = BernoulliVec::from_vec(p.to_vec()).unwrap();
        let mut eval = |_: &DenseVector, z: &DenseVector| -> Result<(f64, DenseVector)> { Ok((0.0, z.clone())) };
        let out = gumbel_softmax_grad_with_noise(&DenseVector::zeros(1), &mut eval, &b, 1.0, &[0.0; 5]).unwrap();
        let s = out.aux.unwrap();
        for i in 0..5 {
            assert!((s[i] - p[i]).abs() <= 1e-15, "{} vs {}", s[i], p[i]);
        }
    }

    #[test]
    fn gumbel_saturates_at_low_temperature() {
        let b = BernoulliVec::from_vec(vec![0.3, 0.6, 0.5]).unwrap();
        let mut eval = |_: &DenseVector, z: &DenseVector| -> Result<(f64, DenseVector)> { Ok((0.0, z.clone())) };
        let out = gumbel_softmax_grad_with_noise(&DenseVector::zeros(1), &mut eval, &b, 1e-3, &[0.4, -1.1, 0.05]).unwrap();
        for s in out.aux.unwrap().iter() {
            assert!((s - s.round()).abs() < 1e-6);
        }
    }

    #[test]
    fn gumbel_finite_at_extreme_probabilities() {
        let inst = random_instance(&mut RngStream::new(4), LatentKind::Bernoulli, 3, 2, false);
        let b = BernoulliVec::from_vec(vec![0.01, 0.99]).unwrap();
        let mut rng = RngStream::new(5);
        for _ in 0..1000 {
            let mut eval = LinearEval { dec: &inst.dec, mode: FIXED };
            let out = gumbel_softmax_grad(&inst.x, &mut eval, &b, 0.5, &mut rng).unwrap();
            assert!(out.loss.is_finite() && out.grad_stats.iter().all(|g| g.is_finite()));
        }
        let mut eval = LinearEval { dec: &inst.dec, mode: FIXED };
        assert!(gumbel_softmax_grad(&inst.x, &mut eval, &b, 0.0, &mut rng).is_err());
        assert!(gumbel_softmax_grad(&inst.x, &mut eval, &b, -1.0, &mut rng).is_err());
    }

    #[test]
    fn reinforce_constant_loss_at_baseline_is_zero() {
        let b = BernoulliVec::from_vec(vec![0.2, 0.9, 0.5]).unwrap();
        let mut eval = |_: &DenseVector, z: &DenseVector| -> Result<(f64, DenseVector)> { Ok((-4.0, DenseVector::zeros(z.len()))) };
        let mut state = ReinforceState::with_baseline(0.9, 4.0).unwrap();
        let mut rng = RngStream::new(6);
        for _ in 0..20 {
            let out = reinforce_grad(&DenseVector::zeros(1), &mut eval, &b, &mut state, &mut rng).unwrap();
            assert!(out.grad_stats.iter().all(|g| *g == 0.0));
        }
        assert_eq!(state.baseline(), 4.0);
    }

    #[test]
    fn reinforce_baseline_tracks_loss() {
        let mut s = ReinforceState::new(0.9).unwrap();
        s.update(10.0);
        assert!((s.baseline() - 1.0).abs() < 1e-15);
        s.update(10.0);
        assert!((s.baseline() - 1.9).abs() < 1e-14);
        assert!(ReinforceState::new(1.0).is_err());
    }

    #[test]
    fn reinforce_expectation_is_exact_gradient() {
        let inst = random_instance(&mut RngStream::new(7), LatentKind::Bernoulli, 5, 4, false);
        let b = bern(&inst);
        let silent = silent_grad(&inst.x, &inst.dec, &inst.dist, FIXED).unwrap();
        for baseline in [0.0, 3.5] {
            let expected = enumerate_bernoulli(
                |z| {
                    let mut eval = LinearEval { dec: &inst.dec, mode: FIXED };
                    reinforce_grad_at(&inst.x, &mut eval, b, baseline, z).unwrap().grad_stats.into_vec()
                },
                b,
            )
            .unwrap();
            assert!(relative_error(&expected, silent.grad_stats.as_slice()) < 1e-12);
        }
    }

    #[test]
    fn silent_is_deterministic_and_matches_fd() {
        for (seed, kind) in [(8, LatentKind::Gaussian), (9, LatentKind::Bernoulli)] {
            for learnable in [false, true] {
                let inst = random_instance(&mut RngStream::new(seed), kind, 4, 3, learnable);
                let mode = if learnable { ReconMode::Learnable } else { FIXED };
                let a = silent_grad(&inst.x, &inst.dec, &inst.dist, mode).unwrap();
                let b = silent_grad(&inst.x, &inst.dec, &inst.dist, mode).unwrap();
                assert_eq!(a, b);
                let nat: Vec<f64> = match &inst.dist {
                    LatentDistribution::DiagGaussian(g) => {
                        g.mean().iter().copied().chain(g.var().iter().map(|v| v.ln())).collect()
                    }
                    LatentDistribution::Bernoulli(b) => b.p().iter().map(|&p| logit(p)).collect(),
                };
                let loss = |p: &[f64]| {
                    let dist: LatentDistribution = match kind {
                        LatentKind::Gaussian => DiagGaussian::from_log_var(&p[..3], &p[3..]).unwrap().into(),
                        LatentKind::Bernoulli => BernoulliVec::from_logits(p).unwrap().into(),
                    };
                    silent_grad(&inst.x, &inst.dec, &dist, mode).unwrap().loss
                };
                let fd = fd_gradient(loss, &nat, 1e-5).unwrap();
                assert!(relative_error(a.grad_stats.as_slice(), &fd) < 1e-5);
            }
        }
    }

    #[test]
    fn saturated_logits_keep_gradients_finite_and_nonzero() {
        // p rounds to exactly 0 and 1 here, the logits do not
        let b = BernoulliVec::from_logits(&[-60.0, 60.0, 0.0]).unwrap();
        assert_eq!(b.p().as_slice()[..2], [sigmoid(-60.0), 1.0]);
        let dist: LatentDistribution = b.clone().into();
        let kl = kl_natural_grad(&dist);
        assert!(kl.iter().all(|v| v.is_finite()));
        assert!(kl[0] < 0.0 && kl[1] > 0.0 && kl[2] == 0.0);
        let g = natural_loss_grad(&dist, &StatsGrad::Bernoulli { p: DenseVector::from_raw(vec![1.0, 1.0, 1.0]) }).unwrap();
        assert!(g.iter().all(|v| *v < 0.0));
        let mut dec = |_: &DenseVector, s: &DenseVector| -> Result<(f64, DenseVector)> { Ok((s.iter().sum(), s.clone())) };
        let out = gumbel_softmax_grad_with_noise(&DenseVector::from_raw(vec![0.0]), &mut dec, &b, 0.5, &[0.3, -0.3, 0.1]).unwrap();
        assert!(out.grad_stats.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn kl_gradient_matches_fd() {
        let g: LatentDistribution = DiagGaussian::from_vecs(vec![0.3, -1.2], vec![0.5, 2.0]).unwrap().into();
        let nat = [0.3, -1.2, 0.5f64.ln(), 2.0f64.ln()];
        let fd = fd_gradient(
            |p| LatentDistribution::from(DiagGaussian::from_log_var(&p[..2], &p[2..]).unwrap()).kl_to_prior().unwrap(),
            &nat,
            1e-5,
        )
        .unwrap();
        assert!(relative_error(kl_natural_grad(&g).as_slice(), &fd) < 1e-8);
        let b: LatentDistribution = BernoulliVec::from_vec(vec![0.1, 0.5, 0.8]).unwrap().into();
        let nat: Vec<f64> = [0.1, 0.5, 0.8].iter().map(|&p| logit(p)).collect();
        let fd = fd_gradient(
            |p| LatentDistribution::from(BernoulliVec::from_logits(p).unwrap()).kl_to_prior().unwrap(),
            &nat,
            1e-5,
        )
        .unwrap();
        assert!(relative_error(kl_natural_grad(&b).as_slice(), &fd) < 1e-8);
    }

    #[test]
    fn reinforce_noisier_than_gumbel_on_toy_problem() {
        let mut rng = RngStream::new(10);
        let inst = random_instance(&mut rng, LatentKind::Bernoulli, 16, 8, false);
        let b = bern(&inst);
        let mode = ReconMode::Fixed { sigma2: 0.01 };
        let var_of = |samples: &[Vec<f64>]| -> f64 {
            let n = samples.len() as f64;
            (0..samples[0].len())
                .map(|i| {
                    let m = samples.iter().map(|s| s[i]).sum::<f64>() / n;
                    samples.iter().map(|s| (s[i] - m).powi(2)).sum::<f64>() / (n - 1.0)
                })
                .sum()
        };
        let mut g = Vec::new();
        let mut r = Vec::new();
        let mut state = ReinforceState::default();
        for _ in 0..200 {
            let mut eval = LinearEval { dec: &inst.dec, mode };
            g.push(gumbel_softmax_grad(&inst.x, &mut eval, b, 1.0, &mut rng).unwrap().grad_stats.into_vec());
            let mut s = state.clone();
            r.push(reinforce_grad(&inst.x, &mut eval, b, &mut s, &mut rng).unwrap().grad_stats.into_vec());
            state = s;
        }
        let (vg, vr) = (var_of(&g), var_of(&r));
        assert!(vr > vg && vg > 0.0, "reinforce {vr} gumbel {vg}");
    }

    #[test]
    fn natural_grad_rejects_kind_mismatch() {
        let g: LatentDistribution = DiagGaussian::from_vecs(vec![0.0], vec![1.0]).unwrap().into();
        let wrong = StatsGrad::Bernoulli { p: DenseVector::zeros(1) };
        assert!(natural_loss_grad(&g, &wrong).is_err());
    }
}
