use super::*;
use proptest::prelude::*;

fn small(estimator: &str, latent: LatentKind) -> TrainConfig {
    let mut c = TrainConfig::default();
    c.estimator = EstimatorSpec::parse(estimator).unwrap();
    c.latent = latent;
    c.latent_dim = 3;
    c.dataset = DatasetKind::Synthetic;
    c.synthetic_k = 6;
    c.synthetic_d_true = 3;
    c.n_items = 48;
    c.batch_size = 16;
    c.max_epochs = 6;
    c.encoder_hidden = vec![8];
    c.decoder_hidden = vec![8];
    c.nonlinear_decoder = c.estimator.noisy.is_some();
    c.sigma2 = 0.1;
    c
}

fn run(cfg: &TrainConfig, epochs: usize) -> (TrainState, Vec<EpochReport>) {
    let data = build_dataset(cfg).unwrap();
    let mut st = TrainState::new(cfg, data.dim()).unwrap();
    let reports = (0..epochs).map(|_| st.train_epoch(&data).unwrap()).collect();
    (st, reports)
}

#[test]
fn anneal_examples() {
    assert_eq!(anneal_weights(0, 0.01), (1.0, 0.0));
    assert_eq!(anneal_weights(50, 0.01), (0.5, 0.5));
    assert_eq!(anneal_weights(100, 0.01), (0.0, 1.0));
    assert_eq!(anneal_weights(500, 0.01), (0.0, 1.0));
    assert_eq!(anneal_weights(7, 0.0), (1.0, 0.0));
}

#[test]
fn elbo_examples() {
    assert_eq!(elbo_loss(-3.0, 0.5), 3.5);
    assert_eq!(elbo_loss(0.0, 0.0), 0.0);
}

proptest! {
    #[test]
    fn anneal_weights_stay_in_unit_interval(epoch in 0usize..10_000, lambda in 0.0f64..1.0) {
        let (a, b) = anneal_weights(epoch, lambda);
        prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
        prop_assert_eq!(a + b, 1.0);
        let (a_next, _) = anneal_weights(epoch + 1, lambda);
        prop_assert!(a_next <= a);
    }
}

#[test]
fn encoder_freezes_at_cutoff() {
    let mut cfg = small("silent", LatentKind::Gaussian);
    cfg.cutoff_epoch = Some(3);
    let data = build_dataset(&cfg).unwrap();
    let mut st = TrainState::new(&cfg, data.dim()).unwrap();
    let mut sums = Vec::new();
    let mut dec = Vec::new();
    for _ in 0..5 {
        st.train_epoch(&data).unwrap();
        sums.push(st.encoder().checksum());
        dec.push(st.linear().unwrap().wmu().as_slice().to_vec());
    }
    assert_ne!(sums[0], sums[1]);
    assert_eq!(sums[1], sums[2]);
    assert_eq!(sums[2], sums[4]);
    assert!(st.is_frozen());
    assert_ne!(dec[2], dec[4], "decoder keeps training after the cutoff");
}

#[test]
fn mix_weights_follow_the_schedule() {
    let mut cfg = small("silent+reparam", LatentKind::Gaussian);
    cfg.anneal_rate = 0.25;
    let st = TrainState::new(&cfg, 6).unwrap();
    assert_eq!(st.mix_weights(1), (0.75, 0.25));
    assert_eq!(st.mix_weights(4), (0.0, 1.0));
    let (_, reports) = run(&cfg, 5);
    let w: Vec<f64> = reports.iter().map(|r| r.w_lin).collect();
    assert_eq!(w, vec![0.75, 0.5, 0.25, 0.0, 0.0]);
}

#[test]
fn combined_without_annealing_matches_pure_silent_encoder() {
    let pure = small("silent", LatentKind::Gaussian);
    let mut comb = small("silent+reparam", LatentKind::Gaussian);
    comb.anneal_rate = 0.0;
    let (a, ra) = run(&pure, 4);
    let (b, _) = run(&comb, 4);
    assert_eq!(a.encoder().params(), b.encoder().params());
    assert_eq!(a.linear().unwrap(), b.linear().unwrap());
    assert!(ra.iter().all(|r| r.w_lin == 1.0));
}

#[test]
fn combined_at_zero_linear_weight_matches_pure_baseline_encoder() {
    for (est, base, latent) in [
        ("silent+reparam", "reparam", LatentKind::Gaussian),
        ("silent+reinforce", "reinforce", LatentKind::Bernoulli),
    ] {
        let mut comb = small(est, latent);
        comb.anneal_rate = 1.0;
        let pure = small(base, latent);
        let (a, _) = run(&comb, 3);
        let (b, _) = run(&pure, 3);
        assert_eq!(a.encoder().params(), b.encoder().params(), "{est}");
        assert_eq!(a.nonlinear().unwrap(), b.nonlinear().unwrap(), "{est}");
    }
}

#[test]
fn runs_are_deterministic() {
    for est in ["silent", "silent+gumbel"] {
        let cfg = small(est, LatentKind::Bernoulli);
        let (a, ra) = run(&cfg, 2);
        let (b, rb) = run(&cfg, 2);
        assert_eq!(ra.iter().map(|r| (r.total_loss, r.bpd)).collect::<Vec<_>>(), rb.iter().map(|r| (r.total_loss, r.bpd)).collect::<Vec<_>>());
        assert_eq!(a.to_checkpoint().to_bytes(), b.to_checkpoint().to_bytes());
    }
}

#[test]
fn silent_training_reduces_loss() {
    let mut cfg = small("silent", LatentKind::Gaussian);
    cfg.lr_encoder = 3e-3;
    cfg.lr_linear_mu = 3e-3;
    let (_, r) = run(&cfg, 30);
    assert!(r[29].total_loss < r[0].total_loss - 1.0, "{} -> {}", r[0].total_loss, r[29].total_loss);
}

#[test]
fn learnable_and_digit_runs_work() {
    let mut cfg = small("silent", LatentKind::Bernoulli);
    cfg.mode = DecoderMode::Learnable;
    cfg.dataset = DatasetKind::Digits;
    cfg.n_items = 32;
    let (st, r) = run(&cfg, 2);
    assert!(r.iter().all(|r| r.total_loss.is_finite() && r.bpd.is_finite()));
    assert!(st.linear().unwrap().walpha().is_some());
}

#[test]
fn silent_gradient_variance_is_zero_and_noisy_is_not() {
    let cfg = small("silent+gumbel", LatentKind::Bernoulli);
    let data = build_dataset(&cfg).unwrap();
    let st = TrainState::new(&cfg, data.dim()).unwrap();
    let batch = st.variance_batch(&data);
    let mut rng = st.variance_rng();
    let v = |k| st.measure_gradient_variance(&batch, 50, k, &mut rng.clone()).unwrap().total_variance;
    assert_eq!(v(EstimatorKind::Silent), 0.0);
    assert!(v(EstimatorKind::Gumbel) > 0.0);
    assert!(v(EstimatorKind::Reinforce) > 0.0);
    assert!(st.measure_gradient_variance(&batch, 1, EstimatorKind::Silent, &mut rng).is_err());
}

#[test]
fn divergence_is_reported() {
    let mut cfg = small("silent", LatentKind::Gaussian);
    cfg.lr_encoder = 1e6;
    cfg.lr_linear_mu = 1e6;
    let data = build_dataset(&cfg).unwrap();
    let mut st = TrainState::new(&cfg, data.dim()).unwrap();
    let err = (0..20).find_map(|_| st.train_epoch(&data).err()).expect("training should diverge");
    assert!(matches!(err, Error::Diverged { .. }), "{err:?}");
}

#[test]
fn epoch_csv_hides_time_unless_asked() {
    let r = EpochReport { epoch: 1, total_loss: 2.5, recon_loss: 2.0, kl: 0.5, w_lin: 1.0, bpd: 3.0, mse: 0.1, seconds: 1.25 };
    assert_eq!(reports_csv(&[r], false), "epoch,total_loss,recon_loss,kl,w_lin,bpd,seconds\n1,2.5,2,0.5,1,3,0\n");
    assert!(reports_csv(&[r], true).ends_with(",1.25\n"));
}
