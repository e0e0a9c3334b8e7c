//! Training loops: the point-set autoencoder, the VAE that provides the mode
//! encoder, and the conditional latent GAN with its two implicit-encoder
//! variants.
//!
//! Every loop is driven by per-epoch random streams derived from the config
//! seed, and all optimizer state lives in the parameter stores, so training
//! to epoch `n` in one go or in several resumed chunks gives the same
//! result.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamConfig, ParamStore, Tape, Tensor, Var};
use crate::data::duplicate_to_n;
use crate::error::{Error, Result};
use crate::geometry::{emd, emd_grad, hausdorff_uni, hausdorff_uni_with_grad, PointCloud};
use crate::networks::{
    as_point_rows, clouds_tensor, decoded_cloud, reparameterize, Autoencoder, Discriminator, Generator,
    LatentModeEncoder, Mode, NetPreset, Vae,
};
use crate::rng::{stream, Rng};

/// Loss weights, optimizer constants and schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the partial reconstruction (Hausdorff) term.
    pub alpha: f64,
    /// Weight of the latent (mode) reconstruction term.
    pub beta: f64,
    /// Weight of the KL term in the implicit-encoder variants.
    pub gamma: f64,
    pub lr: f64,
    pub beta1_ae: f64,
    pub beta1_gan: f64,
    /// KL weight in the VAE objective.
    pub kl_weight: f64,
    pub epochs_ae: usize,
    pub epochs_vae: usize,
    pub epochs_gan: usize,
    pub batch_ae: usize,
    pub batch_gan: usize,
    pub seed: u64,
    /// Record wall-clock seconds per epoch in the log; zero otherwise.
    pub record_time: bool,
}

impl TrainConfig {
    pub fn paper() -> Self {
        Self {
            epochs_ae: 2000,
            epochs_vae: 2000,
            epochs_gan: 1000,
            batch_ae: 200,
            batch_gan: 50,
            ..Self::desk()
        }
    }

    pub fn desk() -> Self {
        Self {
            alpha: 6.0,
            beta: 7.5,
            gamma: 1.0,
            lr: 5e-4,
            beta1_ae: 0.9,
            beta1_gan: 0.5,
            kl_weight: 1e-2,
            epochs_ae: 300,
            epochs_vae: 300,
            epochs_gan: 200,
            batch_ae: 10,
            batch_gan: 10,
            seed: 1,
            record_time: true,
        }
    }

    pub fn by_preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            _ => Err(Error::InvalidInput(format!("unknown preset {name:?} (expected paper or desk)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let weights = [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma), ("kl_weight", self.kl_weight)];
        if let Some((name, w)) = weights.iter().find(|(_, w)| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidInput(format!("{name} must be a finite non-negative weight, got {w}")));
        }
        AdamConfig::new(self.lr, self.beta1_ae).validate()?;
        AdamConfig::new(self.lr, self.beta1_gan).validate()?;
        if self.batch_ae < 2 {
            return Err(Error::InvalidInput("batch_ae must be at least 2 while batch norm trains".into()));
        }
        if self.batch_gan == 0 {
            return Err(Error::InvalidInput("batch_gan must be positive".into()));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

pub const AE_COLUMNS: [&str; 1] = ["emd"];
pub const VAE_COLUMNS: [&str; 3] = ["recon", "kl", "total"];
pub const GAN_COLUMNS: [&str; 5] = ["L_F", "L_G", "L_recon", "L_latent", "total"];
pub const GAN_KL_COLUMNS: [&str; 6] = ["L_F", "L_G", "L_recon", "L_latent", "L_kl", "total"];

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub values: Vec<f64>,
    pub seconds: f64,
}

/// Per-epoch loss table, written as CSV `epoch,<columns>,seconds`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    columns: Vec<String>,
    rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[LogRow] {
        &self.rows
    }

    /// Last recorded epoch, 0 when empty.
    pub fn last_epoch(&self) -> usize {
        self.rows.last().map_or(0, |r| r.epoch)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r.values[i]).collect())
    }

    pub fn push(&mut self, row: LogRow) -> Result<()> {
        if row.epoch != self.last_epoch() + 1 {
            return Err(Error::InvalidState(format!("log expects epoch {}, got {}", self.last_epoch() + 1, row.epoch)));
        }
        if row.values.len() != self.columns.len() {
            return Err(Error::InvalidShape(format!("log row has {} values for {} columns", row.values.len(), self.columns.len())));
        }
        if let Some(i) = row.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Diagnostic(format!("{} is non-finite at epoch {}", self.columns[i], row.epoch)));
        }
        self.rows.push(row);
        Ok(())
    }

    /// Keeps the rows up to and including `epoch`.
    pub fn truncate(&mut self, epoch: usize) {
        self.rows.retain(|r| r.epoch <= epoch);
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("epoch,{},seconds\n", self.columns.join(","));
        for r in &self.rows {
            let _ = write!(out, "{}", r.epoch);
            for v in &r.values {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{:.3}", r.seconds);
        }
        out
    }

    pub fn from_csv(path: &Path, text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::format(path, 1, "empty log"))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 2 || cols[0] != "epoch" || cols[cols.len() - 1] != "seconds" {
            return Err(Error::format(path, 1, "header must be `epoch,...,seconds`"));
        }
        let mut log = TrainLog::new(&cols[1..cols.len() - 1]);
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::format(path, i + 1, msg);
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols.len() {
                return Err(bad("wrong number of fields"));
            }
            let epoch = fields[0].parse().map_err(|_| bad("invalid epoch"))?;
            let nums = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad("invalid number"))?;
            let (seconds, values) = nums.split_last().expect("at least two fields");
            log.push(LogRow { epoch, values: values.to_vec(), seconds: *seconds }).map_err(|e| bad(&e.to_string()))?;
        }
        Ok(log)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(path, &text)
    }
}

// ---------------------------------------------------------------------------
// Loss terms

/// Mean EMD between each row of a `[B, N*3]` decoder output and its target.
pub fn emd_loss_on(tape: &mut Tape, decoded: Var, targets: &[&PointCloud]) -> Result<Var> {
    let t = tape.value(decoded);
    let (b, _) = t.dims2()?;
    if b != targets.len() {
        return Err(Error::InvalidShape(format!("{b} decoded clouds for {} targets", targets.len())));
    }
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(t.len());
    for (i, target) in targets.iter().enumerate() {
        let c = decoded_cloud(t, i)?;
        let m = emd(&c, target)?;
        let (ga, _) = emd_grad(&c, target, &m)?;
        total += m.cost;
        grad.extend(ga.iter().flatten().map(|g| g / b as f64));
    }
    tape.external(decoded, total / b as f64, grad)
}

/// Unidirectional Hausdorff distance from a partial to its completion.
pub fn partial_recon_loss(partial: &PointCloud, completion: &PointCloud) -> f64 {
    hausdorff_uni(partial, completion)
}

/// Mean over the batch of the partial reconstruction loss, differentiated
/// with respect to the `[B, N*3]` completions.
pub fn hausdorff_loss_on(tape: &mut Tape, decoded: Var, partials: &[&PointCloud]) -> Result<Var> {
    let t = tape.value(decoded);
    let (b, _) = t.dims2()?;
    if b != partials.len() {
        return Err(Error::InvalidShape(format!("{b} completions for {} partials", partials.len())));
    }
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(t.len());
    for (i, p) in partials.iter().enumerate() {
        let c = decoded_cloud(t, i)?;
        let (d, g) = hausdorff_uni_with_grad(p, &c);
        total += d;
        grad.extend(g.iter().flatten().map(|g| g / b as f64));
    }
    tape.external(decoded, total / b as f64, grad)
}

/// `KL(N(mu, exp(logvar)) || N(0, I))` for one sample.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> f64 {
    -0.5 * mu.iter().zip(logvar).map(|(m, lv)| 1.0 + lv - m * m - lv.exp()).sum::<f64>()
}

/// Batch mean of [`kl_divergence`] over the rows of `[B, |z|]` inputs.
pub fn kl_on(tape: &mut Tape, mu: Var, logvar: Var) -> Result<Var> {
    let (b, _) = tape.value(mu).dims2()?;
    let mu2 = tape.square(mu)?;
    let var = tape.exp(logvar)?;
    let t = tape.sub(logvar, mu2)?;
    let t = tape.sub(t, var)?;
    let t = tape.add_scalar(t, 1.0)?;
    let s = tape.sum(t)?;
    tape.scale(s, -0.5 / b as f64)
}

/// Least-squares GAN losses `(L_F, L_G)` from raw scores.
pub fn lsgan_losses(real: &[f64], fake: &[f64]) -> (f64, f64) {
    let mean = |v: &[f64], f: &dyn Fn(f64) -> f64| v.iter().map(|&x| f(x)).sum::<f64>() / v.len() as f64;
    let l_f = mean(real, &|x| (x - 1.0) * (x - 1.0)) + mean(fake, &|x| x * x);
    let l_g = mean(fake, &|x| (x - 1.0) * (x - 1.0));
    (l_f, l_g)
}

/// Tape form of `L_F`.
pub fn lsgan_f_on(tape: &mut Tape, real: Var, fake: Var) -> Result<Var> {
    let r = tape.add_scalar(real, -1.0)?;
    let r = tape.square(r)?;
    let r = tape.mean(r)?;
    let f = tape.square(fake)?;
    let f = tape.mean(f)?;
    tape.add(r, f)
}

/// Tape form of `L_G`.
pub fn lsgan_g_on(tape: &mut Tape, fake: Var) -> Result<Var> {
    let f = tape.add_scalar(fake, -1.0)?;
    let f = tape.square(f)?;
    tape.mean(f)
}

/// Mean absolute difference between a mode vector and its re-encoding.
pub fn latent_recon_loss(z: &[f64], z_tilde: &[f64]) -> f64 {
    z.iter().zip(z_tilde).map(|(a, b)| (a - b).abs()).sum::<f64>() / z.len() as f64
}

pub fn latent_recon_on(tape: &mut Tape, z_tilde: Var, z: Var) -> Result<Var> {
    let d = tape.sub(z_tilde, z)?;
    let d = tape.abs(d)?;
    tape.mean(d)
}

// ---------------------------------------------------------------------------
// Autoencoder and VAE

fn shuffled(len: usize, rng: &mut Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    order
}

fn normals(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn seconds_since(start: Instant, cfg: &TrainConfig) -> f64 {
    if cfg.record_time {
        start.elapsed().as_secs_f64()
    } else {
        0.0
    }
}

fn check_clouds(clouds: &[PointCloud], points: usize) -> Result<()> {
    if clouds.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    if let Some(c) = clouds.iter().find(|c| c.len() != points) {
        return Err(Error::InvalidShape(format!("training cloud has {} points, preset expects {points}", c.len())));
    }
    Ok(())
}

/// The untrained autoencoder that [`train_autoencoder`] starts from.
pub fn init_autoencoder(preset: &NetPreset, cfg: &TrainConfig) -> Result<Autoencoder> {
    Autoencoder::new(preset.clone(), &mut stream(cfg.seed, "ae/init", 0))
}

/// The untrained VAE that [`train_vae`] starts from.
pub fn init_vae(preset: &NetPreset, cfg: &TrainConfig) -> Result<Vae> {
    Vae::new(preset.clone(), &mut stream(cfg.seed, "vae/init", 0))
}

/// Trains a fresh autoencoder for `cfg.epochs_ae` epochs and freezes it.
pub fn train_autoencoder(clouds: &[PointCloud], preset: &NetPreset, cfg: &TrainConfig) -> Result<(Autoencoder, TrainLog)> {
    cfg.validate()?;
    check_clouds(clouds, preset.points)?;
    let mut ae = init_autoencoder(preset, cfg)?;
    let mut log = TrainLog::new(&AE_COLUMNS);
    continue_autoencoder(&mut ae, clouds, cfg, &mut log, cfg.epochs_ae)?;
    ae.freeze();
    Ok((ae, log))
}

/// Runs the epochs after `log.last_epoch()` up to `until`.
pub fn continue_autoencoder(
    ae: &mut Autoencoder,
    clouds: &[PointCloud],
    cfg: &TrainConfig,
    log: &mut TrainLog,
    until: usize,
) -> Result<()> {
    if ae.is_frozen() {
        return Err(Error::InvalidState("autoencoder is frozen".into()));
    }
    cfg.validate()?;
    check_clouds(clouds, ae.preset.points)?;
    let adam = AdamConfig::new(cfg.lr, cfg.beta1_ae);
    for epoch in log.last_epoch() + 1..=until {
        let start = Instant::now();
        let order = shuffled(clouds.len(), &mut stream(cfg.seed, "ae/order", epoch as u64));
        let mut sum = 0.0;
        for batch in order.chunks(cfg.batch_ae) {
            let targets: Vec<&PointCloud> = batch.iter().map(|&i| &clouds[i]).collect();
            let mut tape = Tape::new();
            let x = tape.constant(clouds_tensor(&targets, ae.preset.points)?)?;
            let code = ae.encode_on(&mut tape, x, Mode::Train, true)?;
            let out = ae.decode_on(&mut tape, code, true)?;
            let loss = emd_loss_on(&mut tape, out, &targets)?;
            tape.backward(loss)?;
            ae.params.accumulate_grads(&tape)?;
            ae.params.absorb_bn_stats(&tape)?;
            adam_step(&mut ae.params, &adam)?;
            sum += tape.value(loss).item() * batch.len() as f64;
        }
        let values = vec![sum / clouds.len() as f64];
        log.push(LogRow { epoch, values, seconds: seconds_since(start, cfg) })?;
    }
    Ok(())
}

/// Trains a fresh VAE for `cfg.epochs_vae` epochs, marks it trained and
/// freezes it.
pub fn train_vae(clouds: &[PointCloud], preset: &NetPreset, cfg: &TrainConfig) -> Result<(Vae, TrainLog)> {
    cfg.validate()?;
    check_clouds(clouds, preset.points)?;
    let mut vae = init_vae(preset, cfg)?;
    let mut log = TrainLog::new(&VAE_COLUMNS);
    continue_vae(&mut vae, clouds, cfg, &mut log, cfg.epochs_vae)?;
    vae.mark_trained();
    vae.freeze();
    Ok((vae, log))
}

pub fn continue_vae(vae: &mut Vae, clouds: &[PointCloud], cfg: &TrainConfig, log: &mut TrainLog, until: usize) -> Result<()> {
    if vae.is_frozen() {
        return Err(Error::InvalidState("VAE is frozen".into()));
    }
    if !vae.has_decoder() {
        return Err(Error::InvalidState("VAE has no decoder".into()));
    }
    cfg.validate()?;
    check_clouds(clouds, vae.preset.points)?;
    let adam = AdamConfig::new(cfg.lr, cfg.beta1_ae);
    let zdim = vae.preset.z_dim;
    for epoch in log.last_epoch() + 1..=until {
        let start = Instant::now();
        let order = shuffled(clouds.len(), &mut stream(cfg.seed, "vae/order", epoch as u64));
        let mut noise = stream(cfg.seed, "vae/noise", epoch as u64);
        let mut sums = [0.0; 3];
        for batch in order.chunks(cfg.batch_ae) {
            let targets: Vec<&PointCloud> = batch.iter().map(|&i| &clouds[i]).collect();
            let mut tape = Tape::new();
            let x = tape.constant(clouds_tensor(&targets, vae.preset.points)?)?;
            let (mu, logvar) = vae.encode_on(&mut tape, x, Mode::Train, true)?;
            let eps = tape.constant(Tensor::matrix(batch.len(), zdim, normals(&mut noise, batch.len() * zdim))?)?;
            let z = reparameterize(&mut tape, mu, logvar, eps)?;
            let out = vae.decode_on(&mut tape, z, true)?;
            let recon = emd_loss_on(&mut tape, out, &targets)?;
            let kl = kl_on(&mut tape, mu, logvar)?;
            let weighted = tape.scale(kl, cfg.kl_weight)?;
            let total = tape.add(recon, weighted)?;
            tape.backward(total)?;
            vae.params.accumulate_grads(&tape)?;
            vae.params.absorb_bn_stats(&tape)?;
            adam_step(&mut vae.params, &adam)?;
            for (s, v) in sums.iter_mut().zip([recon, kl, total]) {
                *s += tape.value(v).item() * batch.len() as f64;
            }
        }
        let values = sums.iter().map(|s| s / clouds.len() as f64).collect();
        log.push(LogRow { epoch, values, seconds: seconds_since(start, cfg) })?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Latent GAN

/// The network that maps completions back to mode vectors.
#[derive(Debug, Clone)]
pub enum ModeEncoder {
    /// Pre-trained VAE encoder, held fixed.
    Explicit(Vae),
    /// Jointly trained encoder on shape codes.
    Latent(LatentModeEncoder),
    /// Jointly trained encoder on point clouds (a VAE encoder without
    /// decoder).
    Cloud(Vae),
}

impl ModeEncoder {
    pub fn params(&self) -> &ParamStore {
        match self {
            ModeEncoder::Explicit(v) | ModeEncoder::Cloud(v) => &v.params,
            ModeEncoder::Latent(e) => &e.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        match self {
            ModeEncoder::Explicit(v) | ModeEncoder::Cloud(v) => &mut v.params,
            ModeEncoder::Latent(e) => &mut e.params,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ModeEncoder::Explicit(_) => "explicit",
            ModeEncoder::Latent(_) => "l2z",
            ModeEncoder::Cloud(_) => "pc2z",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Gan {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub mode_encoder: ModeEncoder,
}

impl Gan {
    /// Fresh generator and discriminator around `mode_encoder`.
    pub fn new(preset: &NetPreset, mode_encoder: ModeEncoder, seed: u64) -> Result<Self> {
        Ok(Self {
            generator: Generator::new(preset.clone(), &mut stream(seed, "gan/init-g", 0))?,
            discriminator: Discriminator::new(preset.clone(), &mut stream(seed, "gan/init-f", 0))?,
            mode_encoder,
        })
    }

    /// Fresh networks around a trained, frozen VAE encoder.
    pub fn explicit(vae: &Vae, seed: u64) -> Result<Self> {
        Self::new(&vae.preset.clone(), ModeEncoder::Explicit(vae.clone()), seed)
    }

    /// Fresh networks with an untrained code-to-mode encoder.
    pub fn l2z(preset: &NetPreset, seed: u64) -> Result<Self> {
        let ez = LatentModeEncoder::new(preset.clone(), &mut stream(seed, "gan/init-ez", 0))?;
        Self::new(preset, ModeEncoder::Latent(ez), seed)
    }

    /// Fresh networks with an untrained cloud-to-mode encoder.
    pub fn pc2z(preset: &NetPreset, seed: u64) -> Result<Self> {
        let ez = Vae::new(preset.clone(), &mut stream(seed, "gan/init-ez", 0))?.encoder_only();
        Self::new(preset, ModeEncoder::Cloud(ez), seed)
    }
}

/// Which training set an index order is for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetKind {
    Partial,
    Complete,
}

/// Supplies the per-epoch visiting order of each training set. The trainer
/// asks for the two orders separately and never relates an index of one set
/// to the other.
pub trait IndexSampler {
    fn order(&mut self, set: SetKind, len: usize, epoch: usize) -> Vec<usize>;
}

/// Independent seeded shuffles per set and epoch.
#[derive(Debug, Clone)]
pub struct ShuffleSampler {
    pub seed: u64,
}

impl IndexSampler for ShuffleSampler {
    fn order(&mut self, set: SetKind, len: usize, epoch: usize) -> Vec<usize> {
        let tag = match set {
            SetKind::Partial => "gan/partial-order",
            SetKind::Complete => "gan/complete-order",
        };
        shuffled(len, &mut stream(self.seed, tag, epoch as u64))
    }
}

/// Loss terms of one generator/discriminator update pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanStep {
    pub epoch: usize,
    pub l_f: f64,
    pub l_g: f64,
    pub l_recon: f64,
    pub l_latent: f64,
    pub l_kl: f64,
    pub total: f64,
}

/// Alternating discriminator/generator training on unpaired partial and
/// complete sets, with the autoencoder frozen.
pub struct GanTrainer<'a> {
    ae: &'a Autoencoder,
    partials: &'a [PointCloud],
    completes: &'a [PointCloud],
    partial_codes: Vec<Vec<f64>>,
    complete_codes: Vec<Vec<f64>>,
    cfg: TrainConfig,
    sampler: Box<dyn IndexSampler + 'a>,
    pub gan: Gan,
    pub log: TrainLog,
    pub steps: Vec<GanStep>,
    /// Update the generator (off for discriminator-only runs).
    pub train_generator: bool,
    /// Update an implicit mode encoder jointly with the generator.
    pub train_mode_encoder: bool,
}

fn encode_all(ae: &Autoencoder, clouds: &[PointCloud]) -> Result<Vec<Vec<f64>>> {
    let mut codes = Vec::with_capacity(clouds.len());
    for chunk in clouds.chunks(32) {
        let refs: Vec<&PointCloud> = chunk.iter().collect();
        codes.extend(ae.encode(&refs)?.into_iter().map(|c| c.0));
    }
    Ok(codes)
}

fn gather(rows: &[Vec<f64>], idx: &[usize]) -> Result<Tensor> {
    let width = rows[0].len();
    Tensor::matrix(idx.len(), width, idx.iter().flat_map(|&i| rows[i].iter().copied()).collect())
}

fn check_order(order: &[usize], len: usize, set: SetKind) -> Result<()> {
    let mut seen = vec![false; len];
    for &i in order {
        if i >= len || std::mem::replace(&mut seen[i], true) {
            return Err(Error::InvalidState(format!("{set:?} sampler returned an invalid order")));
        }
    }
    if order.len() != len {
        return Err(Error::InvalidState(format!("{set:?} sampler returned {} indices for {len}", order.len())));
    }
    Ok(())
}

impl<'a> GanTrainer<'a> {
    pub fn new(
        ae: &'a Autoencoder,
        gan: Gan,
        partials: &'a [PointCloud],
        completes: &'a [PointCloud],
        cfg: &TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if !ae.is_frozen() {
            return Err(Error::InvalidState("GAN training needs a frozen autoencoder".into()));
        }
        let explicit = matches!(gan.mode_encoder, ModeEncoder::Explicit(_));
        if let ModeEncoder::Explicit(vae) = &gan.mode_encoder {
            if !vae.is_trained() || !vae.is_frozen() {
                return Err(Error::InvalidState("the explicit mode encoder must be a trained, frozen VAE".into()));
            }
        }
        if partials.is_empty() || completes.is_empty() {
            return Err(Error::InvalidInput("GAN training needs partial and complete shapes".into()));
        }
        let preset = &ae.preset;
        if let Some(p) = partials.iter().find(|p| p.len() > preset.points) {
            return Err(Error::InvalidShape(format!("partial of {} points exceeds N = {}", p.len(), preset.points)));
        }
        check_clouds(completes, preset.points)?;
        let tiled = partials.iter().map(|p| duplicate_to_n(p, preset.points)).collect::<Result<Vec<_>>>()?;
        let columns: &[&str] = if explicit { &GAN_COLUMNS } else { &GAN_KL_COLUMNS };
        Ok(Self {
            ae,
            partials,
            completes,
            partial_codes: encode_all(ae, &tiled)?,
            complete_codes: encode_all(ae, completes)?,
            cfg: cfg.clone(),
            sampler: Box::new(ShuffleSampler { seed: cfg.seed }),
            gan,
            log: TrainLog::new(columns),
            steps: Vec::new(),
            train_generator: true,
            train_mode_encoder: !explicit,
        })
    }

    pub fn with_sampler(mut self, sampler: impl IndexSampler + 'a) -> Self {
        self.sampler = Box::new(sampler);
        self
    }

    /// Continues from a previous log (for resumed runs).
    pub fn with_log(mut self, log: TrainLog) -> Result<Self> {
        if log.columns() != self.log.columns() {
            return Err(Error::InvalidState(format!("log columns {:?} do not match {:?}", log.columns(), self.log.columns())));
        }
        self.log = log;
        Ok(self)
    }

    pub fn run_until(&mut self, until: usize) -> Result<()> {
        if self.train_mode_encoder && matches!(self.gan.mode_encoder, ModeEncoder::Explicit(_)) {
            return Err(Error::InvalidState("the explicit mode encoder is frozen".into()));
        }
        let (np, nc) = (self.partials.len(), self.completes.len());
        let len = np.min(nc);
        for epoch in self.log.last_epoch() + 1..=until {
            let start = Instant::now();
            let po = self.sampler.order(SetKind::Partial, np, epoch);
            check_order(&po, np, SetKind::Partial)?;
            let co = self.sampler.order(SetKind::Complete, nc, epoch);
            check_order(&co, nc, SetKind::Complete)?;
            let mut noise = stream(self.cfg.seed, "gan/noise", epoch as u64);
            let mut sums = [0.0; 6];
            let mut lo = 0;
            while lo < len {
                let hi = (lo + self.cfg.batch_gan).min(len);
                let s = self.step(epoch, &po[lo..hi], &co[lo..hi], &mut noise)?;
                for (acc, v) in sums.iter_mut().zip([s.l_f, s.l_g, s.l_recon, s.l_latent, s.l_kl, s.total]) {
                    *acc += v * (hi - lo) as f64;
                }
                self.steps.push(s);
                lo = hi;
            }
            let mut values: Vec<f64> = sums.iter().map(|s| s / len as f64).collect();
            if self.log.columns().len() == GAN_COLUMNS.len() {
                values.remove(4);
            }
            self.log.push(LogRow { epoch, values, seconds: seconds_since(start, &self.cfg) })?;
        }
        Ok(())
    }

    fn step(&mut self, epoch: usize, pidx: &[usize], cidx: &[usize], noise: &mut Rng) -> Result<GanStep> {
        let b = pidx.len();
        let preset = &self.ae.preset;
        let xp = gather(&self.partial_codes, pidx)?;
        let xc = gather(&self.complete_codes, cidx)?;
        let z = Tensor::matrix(b, preset.z_dim, normals(noise, b * preset.z_dim))?;
        let adam = AdamConfig::new(self.cfg.lr, self.cfg.beta1_gan);
        let Gan { generator, discriminator, mode_encoder } = &mut self.gan;

        // discriminator update
        let l_f = {
            let mut tape = Tape::new();
            let xp_v = tape.constant(xp.clone())?;
            let z_v = tape.constant(z.clone())?;
            let fake = generator.generate_on(&mut tape, xp_v, z_v, false)?;
            let xc_v = tape.constant(xc.clone())?;
            let real_s = discriminator.discriminate_on(&mut tape, xc_v, true)?;
            let fake_s = discriminator.discriminate_on(&mut tape, fake, true)?;
            let loss = lsgan_f_on(&mut tape, real_s, fake_s)?;
            tape.backward(loss)?;
            discriminator.params.accumulate_grads(&tape)?;
            adam_step(&mut discriminator.params, &adam)?;
            tape.value(loss).item()
        };

        // generator (and implicit mode encoder) update
        let train_g = self.train_generator;
        let train_ez = self.train_mode_encoder;
        let mut tape = Tape::new();
        let xp_v = tape.constant(xp)?;
        let z_v = tape.constant(z)?;
        let fake = generator.generate_on(&mut tape, xp_v, z_v, train_g)?;
        let score = discriminator.discriminate_on(&mut tape, fake, false)?;
        let l_g = lsgan_g_on(&mut tape, score)?;
        let decoded = self.ae.decode_on(&mut tape, fake, false)?;
        let partials: Vec<&PointCloud> = pidx.iter().map(|&i| &self.partials[i]).collect();
        let l_recon = hausdorff_loss_on(&mut tape, decoded, &partials)?;
        let explicit = matches!(mode_encoder, ModeEncoder::Explicit(_));
        let want_kl = !explicit && (train_ez || self.cfg.gamma > 0.0);
        let (l_latent, l_kl) = match mode_encoder {
            ModeEncoder::Explicit(vae) | ModeEncoder::Cloud(vae) => {
                let mut rows = as_point_rows(&mut tape, decoded, preset.points)?;
                if self.cfg.beta == 0.0 && !train_ez {
                    // the term carries no gradient; skip the backward pass through it
                    rows = tape.constant(tape.value(rows).clone())?;
                }
                let mode = if train_ez { Mode::Train } else { Mode::Eval };
                let (mu, _) = vae.encode_on(&mut tape, rows, mode, train_ez)?;
                let latent = latent_recon_on(&mut tape, mu, z_v)?;
                let kl = if want_kl {
                    let refs: Vec<&PointCloud> = cidx.iter().map(|&i| &self.completes[i]).collect();
                    let c = tape.constant(clouds_tensor(&refs, preset.points)?)?;
                    let (m, lv) = vae.encode_on(&mut tape, c, mode, train_ez)?;
                    Some(kl_on(&mut tape, m, lv)?)
                } else {
                    None
                };
                (latent, kl)
            }
            ModeEncoder::Latent(enc) => {
                let (mu, _) = enc.encode_on(&mut tape, fake, train_ez)?;
                let latent = latent_recon_on(&mut tape, mu, z_v)?;
                let kl = if want_kl {
                    let c = tape.constant(xc)?;
                    let (m, lv) = enc.encode_on(&mut tape, c, train_ez)?;
                    Some(kl_on(&mut tape, m, lv)?)
                } else {
                    None
                };
                (latent, kl)
            }
        };
        let recon_w = tape.scale(l_recon, self.cfg.alpha)?;
        let latent_w = tape.scale(l_latent, self.cfg.beta)?;
        let mut total = tape.add(l_g, recon_w)?;
        total = tape.add(total, latent_w)?;
        if let Some(kl) = l_kl {
            let kl_w = tape.scale(kl, self.cfg.gamma)?;
            total = tape.add(total, kl_w)?;
        }
        tape.backward(total)?;
        if train_g {
            generator.params.accumulate_grads(&tape)?;
            adam_step(&mut generator.params, &adam)?;
        }
        if train_ez {
            let params = mode_encoder.params_mut();
            params.accumulate_grads(&tape)?;
            params.absorb_bn_stats(&tape)?;
            adam_step(params, &adam)?;
        }
        let v = |var: Var| tape.value(var).item();
        Ok(GanStep {
            epoch,
            l_f,
            l_g: v(l_g),
            l_recon: v(l_recon),
            l_latent: v(l_latent),
            l_kl: l_kl.map_or(0.0, v),
            total: v(total),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Finished model and log. A jointly trained cloud encoder is marked
    /// trained so it can serve as a mode encoder afterwards.
    pub fn finish(self) -> (Gan, TrainLog, Vec<GanStep>) {
        let mut gan = self.gan;
        if let ModeEncoder::Cloud(v) = &mut gan.mode_encoder {
            v.mark_trained();
            v.freeze();
        }
        (gan, self.log, self.steps)
    }
}

/// GAN training with the VAE encoder as the fixed mode encoder.
pub fn train_gan(
    partials: &[PointCloud],
    completes: &[PointCloud],
    ae: &Autoencoder,
    vae: &Vae,
    cfg: &TrainConfig,
) -> Result<(Gan, TrainLog, Vec<GanStep>)> {
    let gan = Gan::explicit(vae, cfg.seed)?;
    let mut t = GanTrainer::new(ae, gan, partials, completes, cfg)?;
    t.run_until(cfg.epochs_gan)?;
    Ok(t.finish())
}

/// Variant whose mode encoder reads shape codes and trains jointly with a
/// KL term.
pub fn train_gan_l2z(
    partials: &[PointCloud],
    completes: &[PointCloud],
    ae: &Autoencoder,
    cfg: &TrainConfig,
) -> Result<(Gan, TrainLog, Vec<GanStep>)> {
    let gan = Gan::l2z(&ae.preset, cfg.seed)?;
    let mut t = GanTrainer::new(ae, gan, partials, completes, cfg)?;
    t.run_until(cfg.epochs_gan)?;
    Ok(t.finish())
}

/// Variant whose mode encoder reads point clouds and trains jointly with a
/// KL term.
pub fn train_gan_pc2z(
    partials: &[PointCloud],
    completes: &[PointCloud],
    ae: &Autoencoder,
    cfg: &TrainConfig,
) -> Result<(Gan, TrainLog, Vec<GanStep>)> {
    let gan = Gan::pc2z(&ae.preset, cfg.seed)?;
    let mut t = GanTrainer::new(ae, gan, partials, completes, cfg)?;
    t.run_until(cfg.epochs_gan)?;
    Ok(t.finish())
}
