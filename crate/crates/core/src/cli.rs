//! The work behind each `silentgrad` subcommand. Argument parsing lives in
//! the binary; everything here is deterministic in its inputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;
use crate::latent::LatentKind;
use crate::metrics::MetricReport;
use crate::oracle::registry::{report_csv, run_registry, CheckRow, Kernels};
use crate::train::{build_dataset, reports_csv, EpochReport, TrainConfig, TrainState};

pub const MIN_VERIFY_SAMPLES: usize = 1000;
pub const VERIFY_REPORT: &str = "verify_report.csv";
pub const DEFAULT_VARIANCE_SAMPLES: usize = 100;

pub struct VerifyOutcome {
    pub rows: Vec<CheckRow>,
    pub csv: String,
}

impl VerifyOutcome {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckRow> {
        self.rows.iter().filter(|r| !r.pass)
    }
}

/// Runs every oracle check and writes the report into `dir`.
pub fn run_verify(seed: u64, n_mc: usize, dir: &Path) -> Result<VerifyOutcome> {
    if n_mc < MIN_VERIFY_SAMPLES {
        return Err(Error::InvalidParameter(format!("n_mc must be at least {MIN_VERIFY_SAMPLES}")));
    }
    let rows = run_registry(&Kernels::standard(), seed, n_mc);
    let csv = report_csv(&rows);
    fs::write(dir.join(VERIFY_REPORT), &csv)?;
    Ok(VerifyOutcome { rows, csv })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub estimator: String,
    pub latent: String,
    pub epochs: usize,
    pub total_loss: f64,
    pub recon_loss: f64,
    pub kl: f64,
    pub metrics: MetricReport,
}

fn latent_name(k: LatentKind) -> &'static str {
    match k {
        LatentKind::Gaussian => "gaussian",
        LatentKind::Bernoulli => "bernoulli",
    }
}

pub struct TrainOutcome {
    pub state: TrainState,
    pub reports: Vec<EpochReport>,
    pub summary: RunSummary,
}

/// Epoch-by-epoch training that keeps the reports gathered before a
/// divergence.
pub fn train_run(
    cfg: &TrainConfig,
    data: &Dataset,
    mut on_epoch: impl FnMut(&TrainState, &EpochReport) -> Result<()>,
) -> std::result::Result<(TrainState, Vec<EpochReport>), (Error, Vec<EpochReport>)> {
    let mut st = TrainState::new(cfg, data.dim()).map_err(|e| (e, Vec::new()))?;
    let mut reports = Vec::with_capacity(cfg.max_epochs);
    for _ in 0..cfg.max_epochs {
        match st.train_epoch(data).and_then(|r| on_epoch(&st, &r).map(|_| r)) {
            Ok(r) => reports.push(r),
            Err(e) => return Err((e, reports)),
        }
    }
    Ok((st, reports))
}

fn summarize(cfg: &TrainConfig, st: &TrainState, reports: &[EpochReport], n: usize) -> RunSummary {
    let last = reports.last().copied().unwrap_or(EpochReport {
        epoch: 0,
        total_loss: f64::NAN,
        recon_loss: f64::NAN,
        kl: f64::NAN,
        w_lin: f64::NAN,
        bpd: f64::NAN,
        mse: f64::NAN,
        seconds: 0.0,
    });
    RunSummary {
        estimator: cfg.estimator.name(),
        latent: latent_name(cfg.latent).into(),
        epochs: st.epoch(),
        total_loss: last.total_loss,
        recon_loss: last.recon_loss,
        kl: last.kl,
        metrics: MetricReport { bpd: last.bpd, mse: last.mse, n_items: n },
    }
}

fn write_outputs(
    out: &Path,
    cfg: &TrainConfig,
    st: Option<&TrainState>,
    reports: &[EpochReport],
    summary: Option<&RunSummary>,
    timing: bool,
) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("epochs.csv"), reports_csv(reports, timing))?;
    fs::write(out.join("config.txt"), cfg.to_text())?;
    if let Some(s) = summary {
        fs::write(out.join("metrics.json"), serde_json::to_string_pretty(s)? + "\n")?;
    }
    if let Some(st) = st {
        let ck = st.to_checkpoint();
        ck.write_binary(&out.join("checkpoint.bin"))?;
        ck.write_json(&out.join("checkpoint.json"))?;
    }
    Ok(())
}

/// Loads and validates `config`, trains, and writes `epochs.csv`,
/// `metrics.json`, `config.txt` and `checkpoint.{bin,json}` into `out`.
/// Nothing is written when the config or data cannot be loaded. On
/// divergence the epochs completed so far are still written.
pub fn run_train(config: &Path, out: &Path, timing: bool) -> Result<TrainOutcome> {
    let cfg = TrainConfig::load(config)?;
    let data = build_dataset(&cfg)?;
    train_to_dir(&cfg, &data, out, timing)
}

fn train_to_dir(cfg: &TrainConfig, data: &Dataset, out: &Path, timing: bool) -> Result<TrainOutcome> {
    match train_run(cfg, data, |_, _| Ok(())) {
        Ok((state, reports)) => {
            let summary = summarize(cfg, &state, &reports, data.len());
            write_outputs(out, cfg, Some(&state), &reports, Some(&summary), timing)?;
            Ok(TrainOutcome { state, reports, summary })
        }
        Err((e, reports)) => {
            write_outputs(out, cfg, None, &reports, None, timing)?;
            Err(e)
        }
    }
}

pub fn parse_epoch_list(s: &str) -> Result<Vec<usize>> {
    let mut v = s
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| Error::Config(format!("bad epoch {t:?}"))))
        .collect::<Result<Vec<_>>>()?;
    if v.is_empty() || v.contains(&0) {
        return Err(Error::Config("epochs must be positive".into()));
    }
    v.sort_unstable();
    v.dedup();
    Ok(v)
}

/// Estimators that apply to a run's latent kind and decoders.
pub fn applicable_estimators(st: &TrainState) -> Vec<EstimatorKind> {
    let mut v = Vec::new();
    if st.linear().is_some() {
        v.push(EstimatorKind::Silent);
    }
    match st.config().latent {
        LatentKind::Gaussian => v.push(EstimatorKind::Reparam),
        LatentKind::Bernoulli => v.extend([EstimatorKind::Gumbel, EstimatorKind::Reinforce]),
    }
    v
}

pub const VARIANCE_CSV_HEADER: &str = "epoch,estimator,n_samples,total_variance";

/// Trains the config and, at each requested epoch, measures the encoder
/// gradient variance of every applicable estimator on the same fixed batch.
pub fn run_variance(cfg: &TrainConfig, epochs: &[usize], n_samples: usize) -> Result<String> {
    let data = build_dataset(cfg)?;
    let mut cfg = cfg.clone();
    let last = *epochs.iter().max().ok_or_else(|| Error::Config("no epochs requested".into()))?;
    cfg.max_epochs = cfg.max_epochs.max(last);
    if let Some(c) = cfg.cutoff_epoch {
        cfg.cutoff_epoch = Some(c.min(cfg.max_epochs));
    }
    let mut st = TrainState::new(&cfg, data.dim())?;
    let batch = st.variance_batch(&data);
    let mut csv = String::from(VARIANCE_CSV_HEADER);
    csv.push('\n');
    for &e in epochs {
        while st.epoch() < e {
            st.train_epoch(&data)?;
        }
        for kind in applicable_estimators(&st) {
            let mut rng = st.variance_rng();
            let r = st.measure_gradient_variance(&batch, n_samples, kind, &mut rng)?;
            let _ = writeln!(csv, "{},{},{},{}", e, kind.name(), r.n_samples, r.total_variance);
        }
    }
    Ok(csv)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub name: String,
    pub summary: RunSummary,
    pub variances: Vec<f64>,
}

/// Trains every config on the same data and batch order, writes each run
/// into its own subdirectory of `out`, and returns `summary.csv`'s rows.
pub fn run_compare(configs: &[PathBuf], out: &Path, variance_epochs: &[usize], n_samples: usize) -> Result<Vec<CompareRow>> {
    if configs.len() < 2 {
        return Err(Error::Config("compare needs at least two configs".into()));
    }
    let cfgs = configs.iter().map(|p| TrainConfig::load(p)).collect::<Result<Vec<_>>>()?;
    let key = cfgs[0].dataset_key();
    for (p, c) in configs.iter().zip(&cfgs) {
        if c.dataset_key() != key || c.batch_size != cfgs[0].batch_size {
            return Err(Error::Config(format!("{} uses different data, seed or batch size", p.display())));
        }
    }
    let data = build_dataset(&cfgs[0])?;
    let mut rows = Vec::new();
    for (i, (p, cfg)) in configs.iter().zip(&cfgs).enumerate() {
        let stem = p.file_stem().map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned());
        let name = format!("{i}_{stem}");
        let batch = TrainState::new(cfg, data.dim())?.variance_batch(&data);
        let mut variances = vec![f64::NAN; variance_epochs.len()];
        let run = train_run(cfg, &data, |st, r| {
            for (slot, &e) in variances.iter_mut().zip(variance_epochs) {
                if e == r.epoch {
                    *slot = st.encoder_gradient_variance(&batch, n_samples, &mut st.variance_rng())?;
                }
            }
            Ok(())
        });
        let dir = out.join(&name);
        let (st, reports) = match run {
            Ok(v) => v,
            Err((e, reports)) => {
                write_outputs(&dir, cfg, None, &reports, None, false)?;
                return Err(e);
            }
        };
        let summary = summarize(cfg, &st, &reports, data.len());
        write_outputs(&dir, cfg, Some(&st), &reports, Some(&summary), false)?;
        rows.push(CompareRow { name, summary, variances });
    }
    fs::write(out.join("summary.csv"), compare_csv(&rows, variance_epochs))?;
    Ok(rows)
}

pub fn compare_csv(rows: &[CompareRow], variance_epochs: &[usize]) -> String {
    let mut s = String::from("run,estimator,latent,epochs,total_loss,bpd,mse,kl");
    for e in variance_epochs {
        let _ = write!(s, ",grad_variance_epoch{e}");
    }
    s.push('\n');
    for r in rows {
        let m = &r.summary;
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.name, m.estimator, m.latent, m.epochs, m.total_loss, m.metrics.bpd, m.metrics.mse, m.kl
        );
        for v in &r.variances {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "dataset = synthetic\nsynthetic_k = 6\nsynthetic_d_true = 3\nlatent_dim = 3\n\
        n_items = 32\nbatch_size = 16\nmax_epochs = 3\nencoder_hidden = 8\ndecoder_hidden = 8\nsigma2 = 0.1\n";

    #[test]
    fn epoch_lists() {
        assert_eq!(parse_epoch_list("10,200,500").unwrap(), vec![10, 200, 500]);
        assert_eq!(parse_epoch_list("5, 1,5").unwrap(), vec![1, 5]);
        assert!(parse_epoch_list("0").is_err());
        assert!(parse_epoch_list("a").is_err());
    }

    #[test]
    fn missing_config_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        assert!(run_train(&dir.path().join("nope.cfg"), &out, false).is_err());
        assert!(!out.exists());
    }

    #[test]
    fn train_writes_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("a.cfg");
        fs::write(&cfg, SMALL).unwrap();
        let out = dir.path().join("out");
        let o = run_train(&cfg, &out, false).unwrap();
        assert_eq!(o.reports.len(), 3);
        for f in ["epochs.csv", "metrics.json", "config.txt", "checkpoint.bin", "checkpoint.json"] {
            assert!(out.join(f).exists(), "{f}");
        }
        let csv = fs::read_to_string(out.join("epochs.csv")).unwrap();
        assert_eq!(csv.lines().count(), 4);
        assert!(!csv.contains('\r'));
    }

    #[test]
    fn variance_rows_per_epoch_and_estimator() {
        let mut cfg = TrainConfig::parse(SMALL).unwrap();
        cfg.latent = LatentKind::Bernoulli;
        let csv = run_variance(&cfg, &[1, 2], 10).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], VARIANCE_CSV_HEADER);
        assert_eq!(lines.len(), 1 + 2 * 3);
        assert!(lines[1].starts_with("1,silent,10,0"));
    }

    #[test]
    fn compare_checks_inputs_and_reports_zero_silent_variance() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("silent.cfg");
        let b = dir.path().join("reparam.cfg");
        let c = dir.path().join("other.cfg");
        fs::write(&a, SMALL).unwrap();
        fs::write(&b, format!("{SMALL}estimator = reparam\nnonlinear_decoder = true\n")).unwrap();
        fs::write(&c, format!("{SMALL}seed = 9\n")).unwrap();
        let out = dir.path().join("out");
        assert!(run_compare(&[a.clone()], &out, &[1], 10).is_err());
        assert!(run_compare(&[a.clone(), c], &out, &[1], 10).is_err());
        let rows = run_compare(&[a, b], &out, &[1, 3], 10).unwrap();
        assert_eq!(rows[0].variances, vec![0.0, 0.0]);
        assert!(rows[1].variances.iter().all(|v| *v > 0.0));
        let csv = fs::read_to_string(out.join("summary.csv")).unwrap();
        assert!(csv.starts_with("run,estimator,latent,epochs,total_loss,bpd,mse,kl,grad_variance_epoch1,grad_variance_epoch3\n"));
        assert!(out.join("1_reparam").join("epochs.csv").exists());
    }
}
