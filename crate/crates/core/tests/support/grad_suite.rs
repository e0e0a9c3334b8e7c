//! Central finite differences against the tape, per op and along every
//! composite loss path, on a tiny network so each check stays cheap. Each
//! check panics with the offending label on failure.

use rand::Rng as _;
use shapecomp::autodiff::{BnMode, GradCheck, ParamStore, Tape, Tensor, Var, LEAKY_SLOPE};
use shapecomp::networks::{
    as_point_rows, clouds_tensor, reparameterize, Autoencoder, Discriminator, Generator, LatentModeEncoder, Mode,
    NetPreset, Vae,
};
use shapecomp::rng::{seeded, Rng};
use shapecomp::training::{emd_loss_on, hausdorff_loss_on, kl_on, latent_recon_on, lsgan_f_on, lsgan_g_on};
use shapecomp::{PointCloud, Result};

const TOL: f64 = 1e-4;
const SEEDS: [u64; 3] = [1, 2, 3];

fn tiny() -> NetPreset {
    NetPreset {
        name: "tiny".into(),
        points: 6,
        partial_points: 3,
        code_dim: 4,
        z_dim: 2,
        encoder_widths: vec![5, 4],
        decoder_widths: vec![6],
        gan_widths: vec![6, 5],
    }
}

fn uniform(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn cloud(rng: &mut Rng, n: usize) -> PointCloud {
    PointCloud::new((0..n).map(|_| [0; 3].map(|_| rng.random_range(-1.0..1.0))).collect()).unwrap()
}

/// `sum(y * r)` for a fixed random `r`, so every output entry contributes
/// with its own weight.
fn project(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(y).shape().to_vec();
    let r = tape.constant(uniform(&mut seeded(seed ^ 0xabc), &shape, -1.0, 1.0))?;
    let p = tape.mul(y, r)?;
    tape.sum(p)
}

fn check<F>(label: &str, f: F, x: &Tensor)
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let err = GradCheck::default().run(f, x).unwrap();
    assert!(err < TOL, "{label}: max relative error {err:e}");
}

/// Checks `loss` with respect to parameter `name` of `store` by routing the
/// probe through `Tape::override_param`.
fn check_param<F>(label: &str, store: &ParamStore, name: &str, loss: F)
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let x = store.get(name).unwrap().value.clone();
    check(
        &format!("{label} wrt {name}"),
        |t, v| {
            t.override_param(name, v);
            loss(t)
        },
        &x,
    );
}

type Unary = fn(&mut Tape, Var) -> Result<Var>;
type Binary = fn(&mut Tape, Var, Var) -> Result<Var>;

pub fn elementwise_ops() {
    let unary: [(&str, Unary); 10] = [
        ("relu", |t, v| t.relu(v)),
        ("leaky_relu", |t, v| t.leaky_relu(v, LEAKY_SLOPE)),
        ("scale", |t, v| t.scale(v, -2.5)),
        ("add_scalar", |t, v| t.add_scalar(v, 0.7)),
        ("exp", |t, v| t.exp(v)),
        ("square", |t, v| t.square(v)),
        ("abs", |t, v| t.abs(v)),
        ("reshape", |t, v| t.reshape(v, vec![2, 6])),
        ("slice_cols", |t, v| t.slice_cols(v, 1, 2)),
        ("maxpool_points", |t, v| t.maxpool_points(v, 2)),
    ];
    let binary: [(&str, Binary); 3] =
        [("add", |t, a, b| t.add(a, b)), ("sub", |t, a, b| t.sub(a, b)), ("mul", |t, a, b| t.mul(a, b))];
    for seed in SEEDS {
        let mut rng = seeded(seed);
        let x = uniform(&mut rng, &[4, 3], -1.0, 1.0);
        let other = uniform(&mut rng, &[4, 3], -1.0, 1.0);
        for (name, op) in unary {
            let f = |t: &mut Tape, v| {
                let y = op(t, v)?;
                project(t, y, seed)
            };
            check(name, f, &x);
        }
        for (name, op) in binary {
            let lhs = |t: &mut Tape, v| {
                let o = t.constant(other.clone())?;
                let y = op(t, v, o)?;
                project(t, y, seed)
            };
            check(&format!("{name} lhs"), lhs, &x);
            let rhs = |t: &mut Tape, v| {
                let o = t.constant(other.clone())?;
                let y = op(t, o, v)?;
                project(t, y, seed)
            };
            check(&format!("{name} rhs"), rhs, &x);
        }
        let sum = |t: &mut Tape, v| {
            let e = t.exp(v)?;
            t.sum(e)
        };
        check("sum", sum, &x);
        let mean = |t: &mut Tape, v| {
            let sq = t.square(v)?;
            t.mean(sq)
        };
        check("mean", mean, &x);
        let concat = |t: &mut Tape, v| {
            let o = t.constant(other.clone())?;
            let y = t.concat(&[o, v, v])?;
            project(t, y, seed)
        };
        check("concat", concat, &x);
    }
}

pub fn linear_and_batchnorm() {
    for seed in SEEDS {
        let mut rng = seeded(seed);
        let x = uniform(&mut rng, &[5, 3], -1.0, 1.0);
        let w = uniform(&mut rng, &[4, 3], -1.0, 1.0);
        let b = uniform(&mut rng, &[4], -0.5, 0.5);
        let gamma = uniform(&mut rng, &[3], 0.5, 1.5);
        let beta = uniform(&mut rng, &[3], -0.5, 0.5);
        let var = uniform(&mut rng, &[3], 0.5, 2.0).into_data();
        let mean = uniform(&mut rng, &[3], -0.3, 0.3).into_data();

        // one closure per differentiated operand
        let lin = |which: usize| {
            let (x, w, b) = (x.clone(), w.clone(), b.clone());
            move |t: &mut Tape, v: Var| {
                let mut ops = [x.clone(), w.clone(), b.clone()].map(Some);
                ops[which] = None;
                let vars: Vec<Var> = ops
                    .into_iter()
                    .map(|o| match o {
                        Some(c) => t.constant(c),
                        None => Ok(v),
                    })
                    .collect::<Result<_>>()?;
                let y = t.linear(vars[0], vars[1], vars[2])?;
                project(t, y, seed)
            }
        };
        check("linear x", lin(0), &x);
        check("linear w", lin(1), &w);
        check("linear b", lin(2), &b);

        let bn = |which: usize, train: bool| {
            let (x, gamma, beta, mean, var) = (x.clone(), gamma.clone(), beta.clone(), mean.clone(), var.clone());
            move |t: &mut Tape, v: Var| {
                let mut ops = [x.clone(), gamma.clone(), beta.clone()].map(Some);
                ops[which] = None;
                let vars: Vec<Var> = ops
                    .into_iter()
                    .map(|o| match o {
                        Some(c) => t.constant(c),
                        None => Ok(v),
                    })
                    .collect::<Result<_>>()?;
                let mode = if train {
                    BnMode::Train { name: "bn".into() }
                } else {
                    BnMode::Eval { mean: mean.clone(), var: var.clone() }
                };
                let y = t.batchnorm(vars[0], vars[1], vars[2], mode)?;
                project(t, y, seed)
            }
        };
        for train in [true, false] {
            check(&format!("batchnorm x train={train}"), bn(0, train), &x);
            check(&format!("batchnorm gamma train={train}"), bn(1, train), &gamma);
            check(&format!("batchnorm beta train={train}"), bn(2, train), &beta);
        }
    }
}

pub fn point_set_losses() {
    for seed in SEEDS {
        let mut rng = seeded(seed);
        let targets: Vec<PointCloud> = (0..2).map(|_| cloud(&mut rng, 6)).collect();
        let partials: Vec<PointCloud> = (0..2).map(|_| cloud(&mut rng, 3)).collect();
        let decoded = uniform(&mut rng, &[2, 18], -1.0, 1.0);
        let emd = |t: &mut Tape, v| {
            let refs: Vec<&PointCloud> = targets.iter().collect();
            emd_loss_on(t, v, &refs)
        };
        check("emd loss", emd, &decoded);
        let hd = |t: &mut Tape, v| {
            let refs: Vec<&PointCloud> = partials.iter().collect();
            hausdorff_loss_on(t, v, &refs)
        };
        check("hausdorff loss", hd, &decoded);
    }
}

pub fn small_loss_terms() {
    for seed in SEEDS {
        let mut rng = seeded(seed);
        let mu = uniform(&mut rng, &[3, 2], -1.0, 1.0);
        let logvar = uniform(&mut rng, &[3, 2], -1.0, 1.0);
        let eps = uniform(&mut rng, &[3, 2], -1.0, 1.0);
        let scores = uniform(&mut rng, &[3, 1], -1.0, 2.0);

        let kl_mu = |t: &mut Tape, v| {
            let lv = t.constant(logvar.clone())?;
            kl_on(t, v, lv)
        };
        check("kl mu", kl_mu, &mu);
        let kl_lv = |t: &mut Tape, v| {
            let m = t.constant(mu.clone())?;
            kl_on(t, m, v)
        };
        check("kl logvar", kl_lv, &logvar);
        let latent = |t: &mut Tape, v| {
            let z = t.constant(eps.clone())?;
            latent_recon_on(t, v, z)
        };
        check("latent", latent, &mu);
        let reparam = |t: &mut Tape, v| {
            let m = t.constant(mu.clone())?;
            let e = t.constant(eps.clone())?;
            let z = reparameterize(t, m, v, e)?;
            project(t, z, seed)
        };
        check("reparameterize", reparam, &logvar);
        let lf_real = |t: &mut Tape, v| {
            let fake = t.constant(scores.clone())?;
            lsgan_f_on(t, v, fake)
        };
        check("L_F real", lf_real, &scores);
        let lf_fake = |t: &mut Tape, v| {
            let real = t.constant(scores.clone())?;
            lsgan_f_on(t, real, v)
        };
        check("L_F fake", lf_fake, &scores);
        check("L_G", lsgan_g_on, &scores);
    }
}

struct Nets {
    ae: Autoencoder,
    vae: Vae,
    g: Generator,
    f: Discriminator,
    l2z: LatentModeEncoder,
    pc2z: Vae,
    completes: Vec<PointCloud>,
    tiled: Vec<PointCloud>,
    partials: Vec<PointCloud>,
    z: Tensor,
}

fn nets(seed: u64) -> Nets {
    let p = tiny();
    let mut rng = seeded(seed);
    let partials: Vec<PointCloud> = (0..3).map(|_| cloud(&mut rng, 3)).collect();
    Nets {
        ae: Autoencoder::new(p.clone(), &mut rng).unwrap(),
        vae: Vae::new(p.clone(), &mut rng).unwrap(),
        g: Generator::new(p.clone(), &mut rng).unwrap(),
        f: Discriminator::new(p.clone(), &mut rng).unwrap(),
        l2z: LatentModeEncoder::new(p.clone(), &mut rng).unwrap(),
        pc2z: Vae::new(p.clone(), &mut rng).unwrap().encoder_only(),
        completes: (0..3).map(|_| cloud(&mut rng, 6)).collect(),
        tiled: partials.iter().map(|c| shapecomp::data::duplicate_to_n(c, 6).unwrap()).collect(),
        partials,
        z: uniform(&mut rng, &[3, 2], -1.5, 1.5),
    }
}

fn input(t: &mut Tape, clouds: &[PointCloud]) -> Result<Var> {
    let refs: Vec<&PointCloud> = clouds.iter().collect();
    t.constant(clouds_tensor(&refs, 6)?)
}

pub fn autoencoder_emd_path() {
    for seed in SEEDS {
        let n = nets(seed);
        let loss = |t: &mut Tape| {
            let x = input(t, &n.completes)?;
            let code = n.ae.encode_on(t, x, Mode::Train, true)?;
            let out = n.ae.decode_on(t, code, true)?;
            let refs: Vec<&PointCloud> = n.completes.iter().collect();
            emd_loss_on(t, out, &refs)
        };
        for name in ["enc.0.w", "enc.0.bn.gamma", "enc.1.b", "dec.0.w", "dec.out.b"] {
            check_param("AE", &n.ae.params, name, loss);
        }
    }
}

pub fn vae_path() {
    for seed in SEEDS {
        let n = nets(seed);
        let eps = uniform(&mut seeded(seed + 10), &[3, 2], -1.0, 1.0);
        let loss = |t: &mut Tape| {
            let x = input(t, &n.completes)?;
            let (mu, logvar) = n.vae.encode_on(t, x, Mode::Train, true)?;
            let e = t.constant(eps.clone())?;
            let z = reparameterize(t, mu, logvar, e)?;
            let out = n.vae.decode_on(t, z, true)?;
            let refs: Vec<&PointCloud> = n.completes.iter().collect();
            let recon = emd_loss_on(t, out, &refs)?;
            let kl = kl_on(t, mu, logvar)?;
            let kl = t.scale(kl, 1e-2)?;
            t.add(recon, kl)
        };
        for name in ["enc.0.w", "enc.1.bn.beta", "enc.head.w", "dec.0.w", "dec.out.w"] {
            check_param("VAE", &n.vae.params, name, loss);
        }
    }
}

/// Codes of the tiled partials and of the complete clouds under the frozen
/// autoencoder, as constants. They are computed on a separate tape: the
/// autoencoder shares parameter names with the cloud mode encoder, and a
/// probe override must not reach it.
fn codes(t: &mut Tape, n: &Nets) -> Result<(Var, Var)> {
    let encode = |clouds: &[PointCloud]| -> Result<Tensor> {
        let mut side = Tape::new();
        let x = input(&mut side, clouds)?;
        let code = n.ae.encode_on(&mut side, x, Mode::Eval, false)?;
        Ok(side.value(code).clone())
    };
    Ok((t.constant(encode(&n.tiled)?)?, t.constant(encode(&n.completes)?)?))
}

pub fn discriminator_path() {
    for seed in SEEDS {
        let n = nets(seed);
        let loss = |t: &mut Tape| {
            let (xp, xc) = codes(t, &n)?;
            let z = t.constant(n.z.clone())?;
            let fake = n.g.generate_on(t, xp, z, false)?;
            let real = n.f.discriminate_on(t, xc, true)?;
            let fake = n.f.discriminate_on(t, fake, true)?;
            lsgan_f_on(t, real, fake)
        };
        for name in ["f.0.w", "f.1.b", "f.out.w"] {
            check_param("L_F", &n.f.params, name, loss);
        }
    }
}

/// Which mode encoder closes the latent loop.
#[derive(Clone, Copy)]
enum Ez {
    Explicit,
    L2z,
    Pc2z,
}

/// The generator objective `L_G + a*recon + b*latent (+ c*KL)`.
fn generator_objective(t: &mut Tape, n: &Nets, ez: Ez) -> Result<Var> {
    let (alpha, beta, gamma) = (6.0, 7.5, 1.0);
    let (xp, xc) = codes(t, n)?;
    let z = t.constant(n.z.clone())?;
    let fake = n.g.generate_on(t, xp, z, true)?;
    let score = n.f.discriminate_on(t, fake, false)?;
    let l_g = lsgan_g_on(t, score)?;
    let decoded = n.ae.decode_on(t, fake, false)?;
    let refs: Vec<&PointCloud> = n.partials.iter().collect();
    let recon = hausdorff_loss_on(t, decoded, &refs)?;
    let (latent, kl) = match ez {
        Ez::Explicit => {
            let rows = as_point_rows(t, decoded, 6)?;
            let (mu, _) = n.vae.encode_on(t, rows, Mode::Eval, false)?;
            (latent_recon_on(t, mu, z)?, None)
        }
        Ez::L2z => {
            let (mu, _) = n.l2z.encode_on(t, fake, true)?;
            let (m, lv) = n.l2z.encode_on(t, xc, true)?;
            (latent_recon_on(t, mu, z)?, Some(kl_on(t, m, lv)?))
        }
        Ez::Pc2z => {
            let rows = as_point_rows(t, decoded, 6)?;
            let (mu, _) = n.pc2z.encode_on(t, rows, Mode::Train, true)?;
            let c = input(t, &n.completes)?;
            let (m, lv) = n.pc2z.encode_on(t, c, Mode::Train, true)?;
            (latent_recon_on(t, mu, z)?, Some(kl_on(t, m, lv)?))
        }
    };
    let recon = t.scale(recon, alpha)?;
    let latent = t.scale(latent, beta)?;
    let mut total = t.add(l_g, recon)?;
    total = t.add(total, latent)?;
    if let Some(kl) = kl {
        let kl = t.scale(kl, gamma)?;
        total = t.add(total, kl)?;
    }
    Ok(total)
}

pub fn generator_path_with_explicit_encoder() {
    for seed in SEEDS {
        let n = nets(seed);
        for name in ["g.0.w", "g.1.b", "g.out.w"] {
            check_param("G objective", &n.g.params, name, |t| generator_objective(t, &n, Ez::Explicit));
        }
    }
}

pub fn implicit_encoder_paths() {
    for seed in SEEDS {
        let n = nets(seed);
        for name in ["ez.0.w", "ez.out.b"] {
            check_param("l2z objective", &n.l2z.params, name, |t| generator_objective(t, &n, Ez::L2z));
        }
        check_param("l2z objective", &n.g.params, "g.out.b", |t| generator_objective(t, &n, Ez::L2z));
        for name in ["enc.0.w", "enc.1.bn.gamma", "enc.head.w"] {
            check_param("pc2z objective", &n.pc2z.params, name, |t| generator_objective(t, &n, Ez::Pc2z));
        }
        check_param("pc2z objective", &n.g.params, "g.0.b", |t| generator_objective(t, &n, Ez::Pc2z));
    }
}

pub const SUITE: [(&str, fn()); 9] = [
    ("elementwise_ops", elementwise_ops),
    ("linear_and_batchnorm", linear_and_batchnorm),
    ("point_set_losses", point_set_losses),
    ("small_loss_terms", small_loss_terms),
    ("autoencoder_emd_path", autoencoder_emd_path),
    ("vae_path", vae_path),
    ("discriminator_path", discriminator_path),
    ("generator_path_with_explicit_encoder", generator_path_with_explicit_encoder),
    ("implicit_encoder_paths", implicit_encoder_paths),
];
