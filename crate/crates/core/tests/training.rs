use std::sync::{Arc, Mutex, OnceLock};

use shapecomp::autodiff::ParamStore;
use shapecomp::data::{gen_shape, remove_parts, Category};
use shapecomp::networks::{Autoencoder, NetPreset, Vae};
use shapecomp::rng::seeded;
use shapecomp::training::*;
use shapecomp::{Error, PointCloud};

fn desk() -> NetPreset {
    NetPreset::desk()
}

fn quiet(cfg: TrainConfig) -> TrainConfig {
    TrainConfig { record_time: false, ..cfg }
}

fn shapes(category: Category, n: usize, seed: u64) -> Vec<PointCloud> {
    let mut rng = seeded(seed);
    (0..n).map(|_| gen_shape(category, 256, &mut rng).unwrap().union()).collect()
}

fn partials(n: usize, seed: u64) -> Vec<PointCloud> {
    let mut rng = seeded(seed);
    (0..n)
        .map(|_| {
            let s = gen_shape(Category::Chair, 256, &mut rng).unwrap();
            remove_parts(&s, 128, &mut rng).unwrap().0
        })
        .collect()
}

/// Small, briefly trained autoencoder and VAE shared by the GAN tests.
struct Fixture {
    ae: Autoencoder,
    vae: Vae,
    completes: Vec<PointCloud>,
    partials: Vec<PointCloud>,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let completes = shapes(Category::Chair, 10, 21);
        let cfg = quiet(TrainConfig { epochs_ae: 15, epochs_vae: 15, ..TrainConfig::desk() });
        let (ae, _) = train_autoencoder(&completes, &desk(), &cfg).unwrap();
        let (vae, _) = train_vae(&completes, &desk(), &cfg).unwrap();
        Fixture { ae, vae, completes, partials: partials(10, 22) }
    })
}

fn gan_cfg(epochs: usize) -> TrainConfig {
    quiet(TrainConfig { epochs_gan: epochs, ..TrainConfig::desk() })
}

#[test]
fn autoencoder_overfits_one_shape() {
    let one = shapes(Category::Table, 1, 3);
    let cfg = quiet(TrainConfig { epochs_ae: 300, ..TrainConfig::desk() });
    let (ae, log) = train_autoencoder(&one, &desk(), &cfg).unwrap();
    let emd = log.column("emd").unwrap();
    assert!(emd.iter().all(|v| *v >= 0.0));
    assert!(emd[299] < 0.1 * emd[0], "{} -> {}", emd[0], emd[299]);
    assert!(ae.is_frozen());
}

#[test]
fn empty_dataset_and_wrong_size_rejected() {
    let cfg = TrainConfig::desk();
    assert!(matches!(train_autoencoder(&[], &desk(), &cfg), Err(Error::InvalidInput(_))));
    let small = shapes(Category::Lamp, 2, 1).iter().map(|c| c.select(&[0, 1, 2]).unwrap()).collect::<Vec<_>>();
    assert!(matches!(train_vae(&small, &desk(), &cfg), Err(Error::InvalidShape(_))));
}

#[test]
fn vae_reconstruction_drops_and_posterior_is_centred() {
    let data = shapes(Category::Table, 20, 5);
    let cfg = quiet(TrainConfig { epochs_vae: 500, ..TrainConfig::desk() });
    let (vae, log) = train_vae(&data, &desk(), &cfg).unwrap();
    let recon = log.column("recon").unwrap();
    assert!(recon[499] * 5.0 <= recon[0], "{} -> {}", recon[0], recon[499]);
    assert!(vae.is_trained() && vae.is_frozen());
    let zs = shapecomp::eval::mode_vectors(&vae, &data).unwrap();
    for d in 0..desk().z_dim {
        let mean = zs.iter().map(|z| z.0[d]).sum::<f64>() / zs.len() as f64;
        assert!(mean.abs() < 0.5, "dimension {d} mean {mean}");
    }
}

#[test]
fn training_is_deterministic() {
    let data = shapes(Category::Chair, 4, 8);
    let cfg = quiet(TrainConfig { epochs_ae: 4, epochs_vae: 4, batch_ae: 2, ..TrainConfig::desk() });
    let (a1, l1) = train_autoencoder(&data, &desk(), &cfg).unwrap();
    let (a2, l2) = train_autoencoder(&data, &desk(), &cfg).unwrap();
    assert_eq!(l1, l2);
    assert_eq!(a1.params.fingerprint(), a2.params.fingerprint());
    let (v1, k1) = train_vae(&data, &desk(), &cfg).unwrap();
    let (v2, k2) = train_vae(&data, &desk(), &cfg).unwrap();
    assert_eq!(k1.to_csv(), k2.to_csv());
    assert_eq!(v1.params, v2.params);

    let f = fixture();
    let (g1, gl1, _) = train_gan(&f.partials, &f.completes, &f.ae, &f.vae, &gan_cfg(3)).unwrap();
    let (g2, gl2, _) = train_gan(&f.partials, &f.completes, &f.ae, &f.vae, &gan_cfg(3)).unwrap();
    assert_eq!(gl1.to_csv(), gl2.to_csv());
    assert_eq!(g1.generator.params, g2.generator.params);
}

/// Serializes and reloads a store, optimizer state included.
fn reload(store: &ParamStore) -> ParamStore {
    ParamStore::from_bytes(&store.to_bytes(true)).unwrap()
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let data = shapes(Category::Table, 4, 9);
    let cfg = quiet(TrainConfig { epochs_ae: 6, batch_ae: 3, ..TrainConfig::desk() });
    let (full, full_log) = train_autoencoder(&data, &desk(), &cfg).unwrap();

    let mut ae = init_autoencoder(&desk(), &cfg).unwrap();
    let mut log = TrainLog::new(&AE_COLUMNS);
    continue_autoencoder(&mut ae, &data, &cfg, &mut log, 3).unwrap();
    let mut ae = Autoencoder::from_params(desk(), reload(&ae.params), false);
    let mut log = TrainLog::from_csv("log".as_ref(), &log.to_csv()).unwrap();
    continue_autoencoder(&mut ae, &data, &cfg, &mut log, 6).unwrap();
    assert_eq!(log, full_log);
    assert_eq!(ae.params.fingerprint(), full.params.fingerprint());

    let f = fixture();
    let cfg = gan_cfg(4);
    let (gan_full, log_full, _) = train_gan(&f.partials, &f.completes, &f.ae, &f.vae, &cfg).unwrap();
    let mut t = GanTrainer::new(&f.ae, Gan::explicit(&f.vae, cfg.seed).unwrap(), &f.partials, &f.completes, &cfg).unwrap();
    t.run_until(2).unwrap();
    let (mut gan, half_log, _) = t.finish();
    gan.generator.params = reload(&gan.generator.params);
    gan.discriminator.params = reload(&gan.discriminator.params);
    let mut t = GanTrainer::new(&f.ae, gan, &f.partials, &f.completes, &cfg).unwrap().with_log(half_log).unwrap();
    t.run_until(4).unwrap();
    let (gan, log, _) = t.finish();
    assert_eq!(log.to_csv(), log_full.to_csv());
    assert_eq!(gan.generator.params, gan_full.generator.params);
    assert_eq!(log.last_epoch(), 4);
}

#[test]
fn gan_leaves_autoencoder_and_mode_encoder_untouched() {
    let f = fixture();
    let (ae_before, vae_before) = (f.ae.params.to_bytes(false), f.vae.params.to_bytes(false));
    let (gan, _, _) = train_gan(&f.partials, &f.completes, &f.ae, &f.vae, &gan_cfg(3)).unwrap();
    assert_eq!(f.ae.params.to_bytes(false), ae_before);
    assert_eq!(f.vae.params.to_bytes(false), vae_before);
    match &gan.mode_encoder {
        ModeEncoder::Explicit(v) => assert_eq!(v.params.to_bytes(false), vae_before),
        other => panic!("unexpected mode encoder {}", other.kind()),
    }
}

#[test]
fn gan_refuses_unfrozen_networks() {
    let f = fixture();
    let cfg = gan_cfg(1);
    let loose = Autoencoder::from_params(desk(), f.ae.params.clone(), false);
    let gan = Gan::explicit(&f.vae, 1).unwrap();
    assert!(matches!(
        GanTrainer::new(&loose, gan, &f.partials, &f.completes, &cfg),
        Err(Error::InvalidState(_))
    ));
    let untrained = Vae::new(desk(), &mut seeded(0)).unwrap();
    assert!(matches!(train_gan(&f.partials, &f.completes, &f.ae, &untrained, &cfg), Err(Error::InvalidState(_))));
}

/// Records every order request and hands out reversed orders.
#[derive(Clone, Default)]
struct Spy {
    calls: Arc<Mutex<Vec<(SetKind, usize, usize)>>>,
}

impl IndexSampler for Spy {
    fn order(&mut self, set: SetKind, len: usize, epoch: usize) -> Vec<usize> {
        self.calls.lock().unwrap().push((set, len, epoch));
        (0..len).rev().collect()
    }
}

#[test]
fn partial_and_complete_sets_are_sampled_independently() {
    let f = fixture();
    let spy = Spy::default();
    // unequal sizes: any joint indexing would run off the shorter set
    let partials = &f.partials[..7];
    let completes = &f.completes[..4];
    let cfg = TrainConfig { batch_gan: 3, ..gan_cfg(2) };
    let gan = Gan::explicit(&f.vae, 1).unwrap();
    let mut t = GanTrainer::new(&f.ae, gan, partials, completes, &cfg).unwrap().with_sampler(spy.clone());
    t.run_until(2).unwrap();
    let calls = spy.calls.lock().unwrap().clone();
    assert_eq!(
        calls,
        vec![
            (SetKind::Partial, 7, 1),
            (SetKind::Complete, 4, 1),
            (SetKind::Partial, 7, 2),
            (SetKind::Complete, 4, 2)
        ]
    );
    // an epoch covers the smaller set: batches of 3 + 1
    assert_eq!(t.steps.len(), 4);

    struct Bad;
    impl IndexSampler for Bad {
        fn order(&mut self, _: SetKind, len: usize, _: usize) -> Vec<usize> {
            vec![0; len]
        }
    }
    let gan = Gan::explicit(&f.vae, 1).unwrap();
    let mut t = GanTrainer::new(&f.ae, gan, partials, completes, &cfg).unwrap().with_sampler(Bad);
    assert!(matches!(t.run_until(1), Err(Error::InvalidState(_))));
}

#[test]
fn logged_total_decomposes() {
    let f = fixture();
    let cfg = TrainConfig { alpha: 6.0, beta: 7.5, gamma: 0.5, ..gan_cfg(2) };
    let (_, log, steps) = train_gan(&f.partials, &f.completes, &f.ae, &f.vae, &cfg).unwrap();
    assert_eq!(log.columns(), GAN_COLUMNS);
    for s in &steps {
        let expect = s.l_g + cfg.alpha * s.l_recon + cfg.beta * s.l_latent;
        assert!((s.total - expect).abs() <= 1e-12, "{s:?}");
    }
    let (_, log, steps) = train_gan_l2z(&f.partials, &f.completes, &f.ae, &cfg).unwrap();
    assert_eq!(log.columns(), GAN_KL_COLUMNS);
    for s in &steps {
        let expect = s.l_g + cfg.alpha * s.l_recon + cfg.beta * s.l_latent + cfg.gamma * s.l_kl;
        assert!((s.total - expect).abs() <= 1e-12, "{s:?}");
    }
}

#[test]
fn discriminator_alone_learns() {
    let f = fixture();
    let cfg = gan_cfg(200);
    let gan = Gan::explicit(&f.vae, 4).unwrap();
    let mut t = GanTrainer::new(&f.ae, gan, &f.partials, &f.completes, &cfg).unwrap();
    t.train_generator = false;
    let g_before = t.gan.generator.params.clone();
    t.run_until(200).unwrap();
    assert_eq!(t.steps.len(), 200);
    assert!(t.steps[199].l_f < t.steps[0].l_f, "{} -> {}", t.steps[0].l_f, t.steps[199].l_f);
    assert_eq!(t.gan.generator.params, g_before);
}

#[test]
fn frozen_cloud_encoder_without_kl_reduces_to_explicit() {
    let f = fixture();
    let cfg = TrainConfig { gamma: 0.0, ..gan_cfg(3) };
    let (_, _, explicit) = train_gan(&f.partials, &f.completes, &f.ae, &f.vae, &cfg).unwrap();
    let gan = Gan::new(&desk(), ModeEncoder::Cloud(f.vae.clone()), cfg.seed).unwrap();
    let mut t = GanTrainer::new(&f.ae, gan, &f.partials, &f.completes, &cfg).unwrap();
    t.train_mode_encoder = false;
    t.run_until(3).unwrap();
    let (gan, _, cloud) = t.finish();
    assert_eq!(explicit.len(), cloud.len());
    for (a, b) in explicit.iter().zip(&cloud) {
        assert_eq!((a.l_f, a.l_g, a.l_recon, a.l_latent, a.total), (b.l_f, b.l_g, b.l_recon, b.l_latent, b.total));
        assert_eq!(b.l_kl, 0.0);
    }
    assert_eq!(gan.mode_encoder.params().to_bytes(false), f.vae.params.to_bytes(false));
}

#[test]
fn implicit_variants_stay_finite() {
    let f = fixture();
    let cfg = gan_cfg(200);
    let (gan, log, _) = train_gan_l2z(&f.partials, &f.completes, &f.ae, &cfg).unwrap();
    assert_eq!(log.last_epoch(), 200);
    assert_eq!(gan.mode_encoder.kind(), "l2z");
    let cfg = gan_cfg(100);
    let (gan, log, _) = train_gan_pc2z(&f.partials, &f.completes, &f.ae, &cfg).unwrap();
    assert_eq!(log.last_epoch(), 100);
    match gan.mode_encoder {
        ModeEncoder::Cloud(v) => assert!(v.is_trained() && !v.has_decoder()),
        other => panic!("unexpected mode encoder {}", other.kind()),
    }
}
