//! Flat `key = value` training configuration. Blank lines and `#` comments
//! are ignored; keys match the [`TrainConfig`] field names.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;
use crate::latent::LatentKind;

/// Which gradient reaches the encoder: the exact linear-decoder gradient,
/// a sampled estimator, or an annealed mix of both.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EstimatorSpec {
    pub silent: bool,
    pub noisy: Option<EstimatorKind>,
}

impl EstimatorSpec {
    pub fn parse(s: &str) -> Option<Self> {
        let (silent, rest) = match s.strip_prefix("silent") {
            Some("") => return Some(Self { silent: true, noisy: None }),
            Some(r) => (true, r.strip_prefix('+')?),
            None => (false, s),
        };
        let noisy = EstimatorKind::parse(rest).filter(|k| *k != EstimatorKind::Silent)?;
        Some(Self { silent, noisy: Some(noisy) })
    }

    pub fn name(&self) -> String {
        match (self.silent, self.noisy) {
            (true, None) => "silent".into(),
            (true, Some(k)) => format!("silent+{}", k.name()),
            (false, Some(k)) => k.name().into(),
            (false, None) => "none".into(),
        }
    }

    pub fn is_combined(&self) -> bool {
        self.silent && self.noisy.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderMode {
    Fixed,
    Learnable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Synthetic,
    Digits,
    Idx,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub estimator: EstimatorSpec,
    pub latent: LatentKind,
    pub latent_dim: usize,
    pub mode: DecoderMode,
    /// Output variance of fixed-mode linear decoders and of the nonlinear
    /// decoder; initial variance of learnable-mode linear decoders.
    pub sigma2: f64,
    /// 1-based epoch at whose start the encoder is frozen.
    pub cutoff_epoch: Option<usize>,
    pub anneal_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub lr_encoder: f64,
    pub lr_nonlinear: f64,
    pub lr_linear_mu: f64,
    pub lr_linear_alpha: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub gumbel_temperature: f64,
    pub reinforce_momentum: f64,
    pub nonlinear_decoder: bool,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub dataset: DatasetKind,
    pub idx_path: Option<PathBuf>,
    /// Number of items; 0 keeps every item of an IDX file.
    pub n_items: usize,
    pub synthetic_d_true: usize,
    pub synthetic_k: usize,
    pub synthetic_noise: f64,
    pub synthetic_mixing_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            estimator: EstimatorSpec { silent: true, noisy: None },
            latent: LatentKind::Gaussian,
            latent_dim: 16,
            mode: DecoderMode::Fixed,
            sigma2: 0.01,
            cutoff_epoch: None,
            anneal_rate: 0.0,
            max_epochs: 50,
            batch_size: 64,
            lr_encoder: 1e-3,
            lr_nonlinear: 1e-3,
            lr_linear_mu: 1e-3,
            lr_linear_alpha: 1e-3,
            weight_decay: 0.01,
            seed: 0,
            gumbel_temperature: 1.0,
            reinforce_momentum: 0.9,
            nonlinear_decoder: false,
            encoder_hidden: vec![128, 64],
            decoder_hidden: vec![64, 128],
            dataset: DatasetKind::Digits,
            idx_path: None,
            n_items: 1000,
            synthetic_d_true: 4,
            synthetic_k: 16,
            synthetic_noise: 0.1,
            synthetic_mixing_seed: 0,
        }
    }
}

pub const KEYS: &[&str] = &[
    "estimator",
    "latent",
    "latent_dim",
    "mode",
    "sigma2",
    "cutoff_epoch",
    "anneal_rate",
    "max_epochs",
    "batch_size",
    "lr_encoder",
    "lr_nonlinear",
    "lr_linear_mu",
    "lr_linear_alpha",
    "weight_decay",
    "seed",
    "gumbel_temperature",
    "reinforce_momentum",
    "nonlinear_decoder",
    "encoder_hidden",
    "decoder_hidden",
    "dataset",
    "idx_path",
    "n_items",
    "synthetic_d_true",
    "synthetic_k",
    "synthetic_noise",
    "synthetic_mixing_seed",
];

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| cfg_err(format!("{key}: cannot parse {v:?}")))
}

fn widths(key: &str, v: &str) -> Result<Vec<usize>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| num(key, s.trim())).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut unknown = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| cfg_err(format!("line {}: expected key = value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                unknown.push(key.to_string());
                continue;
            }
            cfg.set(key, value)?;
        }
        if !unknown.is_empty() {
            return Err(cfg_err(format!("unknown keys: {}", unknown.join(", "))));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| cfg_err(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "estimator" => {
                self.estimator = EstimatorSpec::parse(v).ok_or_else(|| cfg_err(format!("unknown estimator {v:?}")))?
            }
            "latent" => {
                self.latent = match v {
                    "gaussian" => LatentKind::Gaussian,
                    "bernoulli" => LatentKind::Bernoulli,
                    _ => return Err(cfg_err(format!("unknown latent {v:?}"))),
                }
            }
            "latent_dim" => self.latent_dim = num(key, v)?,
            "mode" => {
                self.mode = match v {
                    "fixed" => DecoderMode::Fixed,
                    "learnable" => DecoderMode::Learnable,
                    _ => return Err(cfg_err(format!("unknown mode {v:?}"))),
                }
            }
            "sigma2" => self.sigma2 = num(key, v)?,
            "cutoff_epoch" => {
                self.cutoff_epoch = if v == "none" { None } else { Some(num(key, v)?) }
            }
            "anneal_rate" => self.anneal_rate = num(key, v)?,
            "max_epochs" => self.max_epochs = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "lr_encoder" => self.lr_encoder = num(key, v)?,
            "lr_nonlinear" => self.lr_nonlinear = num(key, v)?,
            "lr_linear_mu" => self.lr_linear_mu = num(key, v)?,
            "lr_linear_alpha" => self.lr_linear_alpha = num(key, v)?,
            "weight_decay" => self.weight_decay = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "gumbel_temperature" => self.gumbel_temperature = num(key, v)?,
            "reinforce_momentum" => self.reinforce_momentum = num(key, v)?,
            "nonlinear_decoder" => self.nonlinear_decoder = num(key, v)?,
            "encoder_hidden" => self.encoder_hidden = widths(key, v)?,
            "decoder_hidden" => self.decoder_hidden = widths(key, v)?,
            "dataset" => {
                self.dataset = match v {
                    "synthetic" => DatasetKind::Synthetic,
                    "digits" => DatasetKind::Digits,
                    "idx" => DatasetKind::Idx,
                    _ => return Err(cfg_err(format!("unknown dataset {v:?}"))),
                }
            }
            "idx_path" => self.idx_path = Some(PathBuf::from(v)),
            "n_items" => self.n_items = num(key, v)?,
            "synthetic_d_true" => self.synthetic_d_true = num(key, v)?,
            "synthetic_k" => self.synthetic_k = num(key, v)?,
            "synthetic_noise" => self.synthetic_noise = num(key, v)?,
            "synthetic_mixing_seed" => self.synthetic_mixing_seed = num(key, v)?,
            _ => unreachable!("key list checked by caller"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sigma2", self.sigma2),
            ("lr_encoder", self.lr_encoder),
            ("lr_nonlinear", self.lr_nonlinear),
            ("lr_linear_mu", self.lr_linear_mu),
            ("lr_linear_alpha", self.lr_linear_alpha),
            ("gumbel_temperature", self.gumbel_temperature),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(cfg_err(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.anneal_rate >= 0.0 && self.anneal_rate.is_finite()) {
            return Err(cfg_err(format!("anneal_rate must be >= 0, got {}", self.anneal_rate)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(cfg_err("weight_decay must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.reinforce_momentum) {
            return Err(cfg_err("reinforce_momentum must be in [0, 1)"));
        }
        if self.latent_dim == 0 || self.max_epochs == 0 || self.batch_size == 0 {
            return Err(cfg_err("latent_dim, max_epochs and batch_size must be positive"));
        }
        if let Some(c) = self.cutoff_epoch {
            if c == 0 || c > self.max_epochs {
                return Err(cfg_err(format!("cutoff_epoch must be in 1..=max_epochs, got {c}")));
            }
        }
        match self.estimator.noisy {
            Some(EstimatorKind::Reparam) if self.latent != LatentKind::Gaussian => {
                return Err(cfg_err("reparam needs a gaussian latent"))
            }
            Some(EstimatorKind::Gumbel | EstimatorKind::Reinforce) if self.latent != LatentKind::Bernoulli => {
                return Err(cfg_err("gumbel and reinforce need a bernoulli latent"))
            }
            _ => {}
        }
        if self.estimator.is_combined() && !self.nonlinear_decoder {
            return Err(cfg_err("combined estimators need nonlinear_decoder = true"));
        }
        if self.estimator.silent && !self.estimator.is_combined() && self.nonlinear_decoder {
            return Err(cfg_err("pure silent training has no use for a nonlinear decoder"));
        }
        if self.dataset == DatasetKind::Idx && self.idx_path.is_none() {
            return Err(cfg_err("dataset = idx needs idx_path"));
        }
        if self.dataset != DatasetKind::Idx && self.n_items == 0 {
            return Err(cfg_err("n_items must be positive"));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("estimator", self.estimator.name());
        kv("latent", match self.latent {
            LatentKind::Gaussian => "gaussian".into(),
            LatentKind::Bernoulli => "bernoulli".into(),
        });
        kv("latent_dim", self.latent_dim.to_string());
        kv("mode", match self.mode {
            DecoderMode::Fixed => "fixed".into(),
            DecoderMode::Learnable => "learnable".into(),
        });
        kv("sigma2", self.sigma2.to_string());
        kv("cutoff_epoch", self.cutoff_epoch.map_or("none".into(), |c| c.to_string()));
        kv("anneal_rate", self.anneal_rate.to_string());
        kv("max_epochs", self.max_epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("lr_encoder", self.lr_encoder.to_string());
        kv("lr_nonlinear", self.lr_nonlinear.to_string());
        kv("lr_linear_mu", self.lr_linear_mu.to_string());
        kv("lr_linear_alpha", self.lr_linear_alpha.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        kv("seed", self.seed.to_string());
        kv("gumbel_temperature", self.gumbel_temperature.to_string());
        kv("reinforce_momentum", self.reinforce_momentum.to_string());
        kv("nonlinear_decoder", self.nonlinear_decoder.to_string());
        kv("encoder_hidden", join(&self.encoder_hidden));
        kv("decoder_hidden", join(&self.decoder_hidden));
        kv("dataset", match self.dataset {
            DatasetKind::Synthetic => "synthetic".into(),
            DatasetKind::Digits => "digits".into(),
            DatasetKind::Idx => "idx".into(),
        });
        if let Some(p) = &self.idx_path {
            kv("idx_path", p.display().to_string());
        }
        kv("n_items", self.n_items.to_string());
        kv("synthetic_d_true", self.synthetic_d_true.to_string());
        kv("synthetic_k", self.synthetic_k.to_string());
        kv("synthetic_noise", self.synthetic_noise.to_string());
        kv("synthetic_mixing_seed", self.synthetic_mixing_seed.to_string());
        s
    }

    /// Everything that determines the dataset, for checking that compared
    /// runs see the same data.
    pub fn dataset_key(&self) -> String {
        format!(
            "{:?}|{:?}|{}|{}|{}|{}|{}|{}",
            self.dataset,
            self.idx_path,
            self.n_items,
            self.synthetic_d_true,
            self.synthetic_k,
            self.synthetic_noise,
            self.synthetic_mixing_seed,
            self.seed
        )
    }
}
