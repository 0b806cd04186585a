//! ELBO training with an encoder, an analytic linear decoder, and an
//! optional nonlinear decoder, mixing the encoder's gradient sources with a
//! linear annealing schedule and freezing the encoder at a cutoff epoch.
//!
//! Every random draw comes from a dedicated split of the run's seed, so
//! switching one component on or off never shifts the randomness another
//! component sees.

pub mod config;

pub use config::{DatasetKind, DecoderMode, EstimatorSpec, TrainConfig};

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::analytic::{self, LinearDecoder, ReconMode};
use crate::data::{self, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::estimators::{
    gumbel_softmax_grad, kl_natural_grad, natural_loss_grad, reinforce_grad, reparam_grad, DecoderEval,
    EstimatorKind, ReinforceState,
};
use crate::latent::{BernoulliVec, DiagGaussian, LatentDistribution, LatentKind};
use crate::metrics::{self, MetricReport};
use crate::nets::checkpoint::Checkpoint;
use crate::nets::{AdamW, AdamWConfig, HeadKind, Mlp, ParamGrads, Tape};
use crate::ndcore::{DenseMatrix, DenseVector, RngStream};

/// Losses above this abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e8;

/// `(w_lin, w_nl)` with `w_lin = max(0, 1 - epoch * lambda)`.
pub fn anneal_weights(epoch: usize, lambda: f64) -> (f64, f64) {
    let w_lin = (1.0 - epoch as f64 * lambda).max(0.0);
    (w_lin, 1.0 - w_lin)
}

/// Negative ELBO from the expected reconstruction log-likelihood and the KL.
pub fn elbo_loss(recon: f64, kl: f64) -> f64 {
    -recon + kl
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub total_loss: f64,
    pub recon_loss: f64,
    pub kl: f64,
    pub w_lin: f64,
    pub bpd: f64,
    pub mse: f64,
    pub seconds: f64,
}

pub const EPOCH_CSV_HEADER: &str = "epoch,total_loss,recon_loss,kl,w_lin,bpd,seconds";

/// Epoch rows as CSV. Wall time is written as 0 unless `timing` is set, so
/// that identical runs give identical files.
pub fn reports_csv(reports: &[EpochReport], timing: bool) -> String {
    let mut s = String::from(EPOCH_CSV_HEADER);
    s.push('\n');
    for r in reports {
        let secs = if timing { r.seconds } else { 0.0 };
        let _ = writeln!(s, "{},{},{},{},{},{},{}", r.epoch, r.total_loss, r.recon_loss, r.kl, r.w_lin, r.bpd, secs);
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradVarianceReport {
    pub estimator: EstimatorKind,
    pub n_samples: usize,
    /// Sum over encoder parameters of the per-parameter sample variance.
    pub total_variance: f64,
}

pub fn build_dataset(cfg: &TrainConfig) -> Result<Dataset> {
    let mut rng = RngStream::new(cfg.seed).split(20);
    match cfg.dataset {
        DatasetKind::Synthetic => {
            let spec = SyntheticSpec {
                d_true: cfg.synthetic_d_true,
                k: cfg.synthetic_k,
                mixing_seed: cfg.synthetic_mixing_seed,
                noise: cfg.synthetic_noise,
            };
            data::make_synthetic(&spec, cfg.n_items, &mut rng)
        }
        DatasetKind::Digits => Ok(data::digit_corpus(cfg.n_items, &mut rng)),
        DatasetKind::Idx => {
            let path = cfg.idx_path.as_ref().ok_or_else(|| Error::Config("idx_path missing".into()))?;
            let mut ds = data::load_idx(path)?;
            if cfg.n_items > 0 {
                ds.items.truncate(cfg.n_items);
            }
            if ds.is_empty() {
                return Err(Error::Config("IDX file holds no items".into()));
            }
            Ok(ds)
        }
    }
}

fn gaussian_loglik(x: &DenseVector, mean: &DenseVector, sigma2: f64) -> (f64, Vec<f64>) {
    let mut sq = 0.0;
    let g = x
        .iter()
        .zip(mean.iter())
        .map(|(x, m)| {
            let r = x - m;
            sq += r * r;
            r / sigma2
        })
        .collect();
    let k = x.len() as f64;
    (-sq / (2.0 * sigma2) - 0.5 * k * (2.0 * std::f64::consts::PI * sigma2).ln(), g)
}

/// Log-likelihood gradients of the decoder parameters from one evaluation.
enum DecoderGrads {
    Linear { wmu: DenseMatrix, walpha: Option<DenseMatrix> },
    Nonlinear(ParamGrads),
}

/// The decoder sampled by the stochastic estimators; remembers the
/// parameter gradients of its most recent evaluation.
struct SampledDecoder<'a> {
    linear: Option<(&'a LinearDecoder, ReconMode)>,
    nonlinear: Option<(&'a Mlp, f64)>,
    last: Option<DecoderGrads>,
}

impl DecoderEval for SampledDecoder<'_> {
    fn eval(&mut self, x: &DenseVector, z: &DenseVector) -> Result<(f64, DenseVector)> {
        if let Some((net, sigma2)) = self.nonlinear {
            let (mean, tape) = net.forward(z)?;
            let (ll, g) = gaussian_loglik(x, &mean, sigma2);
            let (pg, gz) = net.backward(&tape, &g)?;
            self.last = Some(DecoderGrads::Nonlinear(pg));
            Ok((ll, gz))
        } else {
            let (dec, mode) = self.linear.expect("a decoder is always present");
            let s = dec.sample_log_lik(x, z, mode)?;
            self.last = Some(DecoderGrads::Linear { wmu: s.grad_wmu, walpha: s.grad_walpha });
            Ok((s.value, s.grad_z))
        }
    }
}

/// Gradient sums over one batch, in loss (not log-likelihood) sign.
struct BatchGrads {
    encoder: Vec<f64>,
    wmu: Vec<f64>,
    walpha: Vec<f64>,
    nonlinear: Vec<f64>,
}

fn add_scaled(acc: &mut [f64], a: f64, g: &[f64]) {
    for (s, v) in acc.iter_mut().zip(g) {
        *s += a * v;
    }
}

/// Adds `w * g` to an upstream gradient that may not exist yet. The first
/// term is stored as is so a lone term is reproduced bit for bit.
fn accumulate(up: &mut Option<Vec<f64>>, w: f64, g: &DenseVector) {
    match up {
        None => *up = Some(g.iter().map(|v| w * v).collect()),
        Some(u) => add_scaled(u, w, g.as_slice()),
    }
}

pub struct TrainState {
    config: TrainConfig,
    data_dim: usize,
    encoder: Mlp,
    enc_opt: AdamW,
    linear: Option<LinearDecoder>,
    lin_mu_opt: Option<AdamW>,
    lin_alpha_opt: Option<AdamW>,
    nonlinear: Option<Mlp>,
    nl_opt: Option<AdamW>,
    reinforce: ReinforceState,
    shuffle_rng: RngStream,
    dequant_rng: RngStream,
    noisy_rng: RngStream,
    eval_rng: RngStream,
    epoch: usize,
    frozen: bool,
}

impl TrainState {
    pub fn new(config: &TrainConfig, data_dim: usize) -> Result<Self> {
        config.validate()?;
        let cfg = config.clone();
        let root = RngStream::new(cfg.seed);
        let d = cfg.latent_dim;
        let (head, head_dim) = match cfg.latent {
            LatentKind::Gaussian => (HeadKind::GaussianStats, 2 * d),
            LatentKind::Bernoulli => (HeadKind::BernoulliLogits, d),
        };
        let opt = |lr: f64, n: usize| AdamW::new(AdamWConfig { lr, weight_decay: cfg.weight_decay, ..AdamWConfig::default() }, n);

        let mut sizes = vec![data_dim];
        sizes.extend(&cfg.encoder_hidden);
        sizes.push(head_dim);
        let encoder = Mlp::new(&sizes, head, &mut root.split(1))?;
        let enc_opt = opt(cfg.lr_encoder, encoder.num_params())?;

        let (nonlinear, nl_opt) = if cfg.nonlinear_decoder {
            let mut sizes = vec![d];
            sizes.extend(&cfg.decoder_hidden);
            sizes.push(data_dim);
            let net = Mlp::new(&sizes, HeadKind::DecoderMean, &mut root.split(2))?;
            let o = opt(cfg.lr_nonlinear, net.num_params())?;
            (Some(net), Some(o))
        } else {
            (None, None)
        };

        let (linear, lin_mu_opt, lin_alpha_opt) = if cfg.estimator.silent || !cfg.nonlinear_decoder {
            let mut rng = root.split(3);
            // uniform 1/sqrt(fan_in) on weights and bias, the usual linear-layer default
            let bound = 1.0 / (d as f64).sqrt();
            let wmu = DenseMatrix::new(
                data_dim,
                d + 1,
                (0..data_dim * (d + 1)).map(|_| bound * (2.0 * rng.uniform() - 1.0)).collect(),
            )?;
            let walpha = match cfg.mode {
                DecoderMode::Fixed => None,
                DecoderMode::Learnable => {
                    let inv_sd = 1.0 / cfg.sigma2.sqrt();
                    let mut wa = DenseMatrix::zeros(data_dim, d + 1);
                    for j in 0..data_dim {
                        wa.set(j, d, inv_sd)?;
                    }
                    Some(wa)
                }
            };
            let n = data_dim * (d + 1);
            let mu_opt = opt(cfg.lr_linear_mu, n)?;
            let alpha_opt = walpha.as_ref().map(|_| opt(cfg.lr_linear_alpha, n)).transpose()?;
            (Some(LinearDecoder::new(wmu, walpha)?), Some(mu_opt), alpha_opt)
        } else {
            (None, None, None)
        };

        Ok(Self {
            reinforce: ReinforceState::new(cfg.reinforce_momentum)?,
            shuffle_rng: root.split(10),
            dequant_rng: root.split(11),
            noisy_rng: root.split(12),
            eval_rng: root.split(13),
            config: cfg,
            data_dim,
            encoder,
            enc_opt,
            linear,
            lin_mu_opt,
            lin_alpha_opt,
            nonlinear,
            nl_opt,
            epoch: 0,
            frozen: false,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn linear(&self) -> Option<&LinearDecoder> {
        self.linear.as_ref()
    }

    pub fn nonlinear(&self) -> Option<&Mlp> {
        self.nonlinear.as_ref()
    }

    /// Number of completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    fn recon_mode(&self) -> ReconMode {
        match self.config.mode {
            DecoderMode::Fixed => ReconMode::Fixed { sigma2: self.config.sigma2 },
            DecoderMode::Learnable => ReconMode::Learnable,
        }
    }

    /// `(w_lin, w_nl)` for a 1-based epoch.
    pub fn mix_weights(&self, epoch: usize) -> (f64, f64) {
        match (self.config.estimator.silent, self.config.estimator.noisy) {
            (true, None) => (1.0, 0.0),
            (false, _) => (0.0, 1.0),
            (true, Some(_)) => anneal_weights(epoch, self.config.anneal_rate),
        }
    }

    pub fn encode(&self, x: &DenseVector) -> Result<(LatentDistribution, Tape)> {
        let (h, tape) = self.encoder.forward(x)?;
        let d = self.config.latent_dim;
        let dist = match self.config.latent {
            LatentKind::Gaussian => DiagGaussian::from_log_var(&h.as_slice()[..d], &h.as_slice()[d..])?.into(),
            LatentKind::Bernoulli => BernoulliVec::from_logits(h.as_slice())?.into(),
        };
        Ok((dist, tape))
    }

    fn sampled_decoder(&self) -> SampledDecoder<'_> {
        SampledDecoder {
            linear: self.linear.as_ref().map(|l| (l, self.recon_mode())),
            nonlinear: self.nonlinear.as_ref().map(|n| (n, self.config.sigma2)),
            last: None,
        }
    }

    /// One stochastic estimate; `baseline` is the REINFORCE state to use and
    /// update.
    fn noisy_estimate(
        &self,
        kind: EstimatorKind,
        x: &DenseVector,
        dist: &LatentDistribution,
        baseline: &mut ReinforceState,
        rng: &mut RngStream,
    ) -> Result<(crate::estimators::EstimatorOutput, Option<DecoderGrads>)> {
        let mut dec = self.sampled_decoder();
        let out = match (kind, dist) {
            (EstimatorKind::Reparam, LatentDistribution::DiagGaussian(g)) => reparam_grad(x, &mut dec, g, rng)?,
            (EstimatorKind::Gumbel, LatentDistribution::Bernoulli(b)) => {
                gumbel_softmax_grad(x, &mut dec, b, self.config.gumbel_temperature, rng)?
            }
            (EstimatorKind::Reinforce, LatentDistribution::Bernoulli(b)) => reinforce_grad(x, &mut dec, b, baseline, rng)?,
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "estimator {} does not apply to this latent",
                    kind.name()
                )))
            }
        };
        Ok((out, dec.last))
    }

    fn check_loss(&self, epoch: usize, loss: f64) -> Result<()> {
        if loss.is_finite() && loss <= DIVERGENCE_LIMIT {
            Ok(())
        } else {
            Err(Error::Diverged { epoch, loss })
        }
    }

    fn item_step(&mut self, x: &DenseVector, epoch: usize, w: (f64, f64), acc: &mut BatchGrads) -> Result<()> {
        let (w_lin, w_nl) = w;
        let (dist, tape) = self.encode(x).map_err(|_| Error::Diverged { epoch, loss: f64::NAN })?;
        let kl = dist.kl_to_prior().map_err(|_| Error::Diverged { epoch, loss: f64::INFINITY })?;
        let mut up: Option<Vec<f64>> = None;
        let mut loss = kl;

        if self.config.estimator.silent {
            let lin = self.linear.as_ref().expect("silent runs keep a linear decoder");
            let r = analytic::expected_recon(x, lin, &dist, self.recon_mode())?;
            self.check_loss(epoch, -r.value)?;
            loss += -r.value;
            add_scaled(&mut acc.wmu, -1.0, r.grad_wmu.as_slice());
            if let Some(ga) = &r.grad_walpha {
                add_scaled(&mut acc.walpha, -1.0, ga.as_slice());
            }
            if w_lin > 0.0 && !self.frozen {
                accumulate(&mut up, w_lin, &natural_loss_grad(&dist, &r.grad_stats)?);
            }
        }

        if let Some(kind) = self.config.estimator.noisy {
            let mut baseline = self.reinforce.clone();
            let mut rng = self.noisy_rng.clone();
            let (out, grads) = self.noisy_estimate(kind, x, &dist, &mut baseline, &mut rng)?;
            self.reinforce = baseline;
            self.noisy_rng = rng;
            self.check_loss(epoch, out.loss)?;
            if !self.config.estimator.silent {
                loss += out.loss;
            }
            match grads.expect("decoder was evaluated") {
                DecoderGrads::Nonlinear(g) => add_scaled(&mut acc.nonlinear, -1.0, g.as_slice()),
                DecoderGrads::Linear { wmu, walpha } => {
                    add_scaled(&mut acc.wmu, -1.0, wmu.as_slice());
                    if let Some(ga) = walpha {
                        add_scaled(&mut acc.walpha, -1.0, ga.as_slice());
                    }
                }
            }
            if w_nl > 0.0 && !self.frozen {
                accumulate(&mut up, w_nl, &out.grad_stats);
            }
        }
        self.check_loss(epoch, loss)?;

        if !self.frozen {
            accumulate(&mut up, 1.0, &kl_natural_grad(&dist));
            let up = up.expect("KL term always present");
            let (pg, _) = self.encoder.backward(&tape, &up)?;
            add_scaled(&mut acc.encoder, 1.0, pg.as_slice());
        }
        Ok(())
    }

    fn apply(&mut self, acc: BatchGrads, n: usize) -> Result<()> {
        let s = 1.0 / n as f64;
        let scaled = |v: Vec<f64>| -> Vec<f64> { v.into_iter().map(|g| g * s).collect() };
        if !self.frozen {
            self.enc_opt.step(self.encoder.params_mut(), &scaled(acc.encoder))?;
        }
        if let Some(lin) = &mut self.linear {
            let opt = self.lin_mu_opt.as_mut().expect("optimizer paired with decoder");
            opt.step(lin.wmu_mut().as_mut_slice(), &scaled(acc.wmu))?;
            if let (Some(wa), Some(opt)) = (lin.walpha_mut(), self.lin_alpha_opt.as_mut()) {
                opt.step(wa.as_mut_slice(), &scaled(acc.walpha))?;
            }
        }
        if let (Some(net), Some(opt)) = (&mut self.nonlinear, self.nl_opt.as_mut()) {
            opt.step(net.params_mut(), &scaled(acc.nonlinear))?;
        }
        Ok(())
    }

    fn zero_grads(&self) -> BatchGrads {
        let lin_n = self.linear.as_ref().map_or(0, |l| l.wmu().as_slice().len());
        BatchGrads {
            encoder: vec![0.0; self.encoder.num_params()],
            wmu: vec![0.0; lin_n],
            walpha: vec![0.0; lin_n],
            nonlinear: vec![0.0; self.nonlinear.as_ref().map_or(0, |n| n.num_params())],
        }
    }

    /// Runs one epoch and evaluates the result.
    pub fn train_epoch(&mut self, data: &Dataset) -> Result<EpochReport> {
        if data.dim() != self.data_dim || data.is_empty() {
            return Err(Error::InvalidParameter("dataset does not match the model".into()));
        }
        let start = Instant::now();
        let epoch = self.epoch + 1;
        if self.config.cutoff_epoch == Some(epoch) {
            self.frozen = true;
        }
        let w = self.mix_weights(epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        self.shuffle_rng.shuffle(&mut order);
        for batch in order.chunks(self.config.batch_size) {
            let mut acc = self.zero_grads();
            for &i in batch {
                let x = if data.discrete {
                    data::dequantize(&data.items[i], &mut self.dequant_rng)
                } else {
                    data.items[i].clone()
                };
                self.item_step(&x, epoch, w, &mut acc)?;
            }
            self.apply(acc, batch.len())
                .map_err(|_| Error::Diverged { epoch, loss: f64::NAN })?;
        }
        self.epoch = epoch;
        let mut report = self.evaluate(data)?;
        report.seconds = start.elapsed().as_secs_f64();
        Ok(report)
    }

    /// Negative ELBO over the whole dataset with a fixed noise stream, so
    /// repeated evaluations of the same parameters agree exactly. Runs
    /// without a nonlinear decoder report the exact linear-decoder
    /// reconstruction term; runs with one report its one-sample estimate.
    pub fn evaluate(&self, data: &Dataset) -> Result<EpochReport> {
        let epoch = self.epoch;
        let mut rng = self.eval_rng.clone();
        let k = self.data_dim;
        let (mut recon_sum, mut kl_sum) = (0.0, 0.0);
        let mut lls = Vec::with_capacity(data.len());
        let mut mses = Vec::with_capacity(data.len());
        for item in &data.items {
            let x = if data.discrete { data::dequantize(item, &mut rng) } else { item.clone() };
            let (dist, _) = self.encode(&x).map_err(|_| Error::Diverged { epoch, loss: f64::NAN })?;
            let kl = dist.kl_to_prior().map_err(|_| Error::Diverged { epoch, loss: f64::INFINITY })?;
            let (recon, mean) = match &self.nonlinear {
                Some(net) => {
                    let z = dist.sample(&mut rng);
                    let (m, _) = net.forward(&z)?;
                    let (ll, _) = gaussian_loglik(&x, &m, self.config.sigma2);
                    (-ll, net.forward(dist.means())?.0)
                }
                None => {
                    let lin = self.linear.as_ref().expect("a decoder is always present");
                    let r = analytic::expected_recon(&x, lin, &dist, self.recon_mode())?;
                    (-r.value, lin.mean_prediction(&dist)?)
                }
            };
            recon_sum += recon;
            kl_sum += kl;
            lls.push(-(recon + kl));
            mses.push(metrics::mse(item, &mean)?);
        }
        let n = data.len() as f64;
        let m = MetricReport::from_items(&lls, &mses, k, data.discrete)?;
        let report = EpochReport {
            epoch,
            total_loss: elbo_loss(-recon_sum / n, kl_sum / n),
            recon_loss: recon_sum / n,
            kl: kl_sum / n,
            w_lin: self.mix_weights(epoch.max(1)).0,
            bpd: m.bpd,
            mse: m.mse,
            seconds: 0.0,
        };
        self.check_loss(epoch, report.total_loss)?;
        Ok(report)
    }

    pub fn metric_report(&self, data: &Dataset) -> Result<MetricReport> {
        let r = self.evaluate(data)?;
        Ok(MetricReport { bpd: r.bpd, mse: r.mse, n_items: data.len() })
    }

    /// Estimators whose gradient reaches the encoder in this run.
    pub fn estimators(&self) -> Vec<EstimatorKind> {
        let spec = self.config.estimator;
        let mut v = Vec::new();
        if spec.silent {
            v.push(EstimatorKind::Silent);
        }
        v.extend(spec.noisy);
        v
    }

    /// Total variance of the batch-mean reconstruction gradient with respect
    /// to the encoder parameters. The encoder runs once per item to fix the
    /// latent distributions; only the latent sampling varies between the
    /// `n_samples` draws.
    pub fn measure_gradient_variance(
        &self,
        batch: &[DenseVector],
        n_samples: usize,
        kind: EstimatorKind,
        rng: &mut RngStream,
    ) -> Result<GradVarianceReport> {
        if n_samples < 2 || batch.is_empty() {
            return Err(Error::InvalidParameter("variance needs n_samples >= 2 and a batch".into()));
        }
        let encoded: Vec<(LatentDistribution, Tape)> =
            batch.iter().map(|x| self.encode(x)).collect::<Result<_>>()?;
        let p = self.encoder.num_params();
        let mut mean = vec![0.0; p];
        let mut m2 = vec![0.0; p];
        let inv_b = 1.0 / batch.len() as f64;
        for s in 0..n_samples {
            let mut g = vec![0.0; p];
            for (x, (dist, tape)) in batch.iter().zip(&encoded) {
                let nat = match kind {
                    EstimatorKind::Silent => {
                        let lin = self.linear.as_ref().ok_or_else(|| {
                            Error::InvalidParameter("silent gradients need the linear decoder".into())
                        })?;
                        let r = analytic::expected_recon(x, lin, dist, self.recon_mode())?;
                        natural_loss_grad(dist, &r.grad_stats)?
                    }
                    _ => {
                        let mut baseline = self.reinforce.clone();
                        self.noisy_estimate(kind, x, dist, &mut baseline, rng)?.0.grad_stats
                    }
                };
                let (pg, _) = self.encoder.backward(tape, nat.as_slice())?;
                add_scaled(&mut g, inv_b, pg.as_slice());
            }
            let n = (s + 1) as f64;
            for i in 0..p {
                let delta = g[i] - mean[i];
                mean[i] += delta / n;
                m2[i] += delta * (g[i] - mean[i]);
            }
        }
        let total_variance = m2.iter().sum::<f64>() / (n_samples as f64 - 1.0);
        Ok(GradVarianceReport { estimator: kind, n_samples, total_variance })
    }

    /// Variance of the gradient that reaches the encoder in this run at the
    /// current epoch's mixing weights. The silent part is deterministic, so a
    /// mixed gradient's variance is `w_nl^2` times the sampled part's.
    pub fn encoder_gradient_variance(&self, batch: &[DenseVector], n_samples: usize, rng: &mut RngStream) -> Result<f64> {
        let spec = self.config.estimator;
        match spec.noisy {
            None => Ok(self.measure_gradient_variance(batch, n_samples, EstimatorKind::Silent, rng)?.total_variance),
            Some(kind) => {
                let w_nl = if spec.silent { self.mix_weights(self.epoch.max(1)).1 } else { 1.0 };
                let v = self.measure_gradient_variance(batch, n_samples, kind, rng)?.total_variance;
                Ok(w_nl * w_nl * v)
            }
        }
    }

    /// The fixed batch used for variance measurement: the first
    /// `batch_size` items, dequantized from a dedicated stream.
    pub fn variance_batch(&self, data: &Dataset) -> Vec<DenseVector> {
        let mut rng = RngStream::new(self.config.seed).split(14);
        data.items
            .iter()
            .take(self.config.batch_size)
            .map(|x| if data.discrete { data::dequantize(x, &mut rng) } else { x.clone() })
            .collect()
    }

    pub fn variance_rng(&self) -> RngStream {
        RngStream::new(self.config.seed).split(15)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        ck.meta.insert("epoch".into(), self.epoch.to_string());
        ck.meta.insert("estimator".into(), self.config.estimator.name());
        ck.merge_prefixed("encoder", self.encoder.to_checkpoint());
        if let Some(l) = &self.linear {
            ck.merge_prefixed("linear", l.to_checkpoint());
        }
        if let Some(n) = &self.nonlinear {
            ck.merge_prefixed("nonlinear", n.to_checkpoint());
        }
        ck
    }
}

#[cfg(test)]
mod tests;
