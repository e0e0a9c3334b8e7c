//! PointNet autoencoder, VAE, latent generator and discriminator.
//!
//! Each network owns a [`ParamStore`] and exposes two surfaces: `*_on`
//! methods that record onto a caller's [`Tape`] (for training and gradient
//! checks), and plain methods that run a fresh eval-mode forward pass.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BnMode, ParamStore, Tape, Tensor, Var, LEAKY_SLOPE};
use crate::data::duplicate_to_n;
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::rng::Rng;

/// Layer widths and cardinalities for one model size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetPreset {
    pub name: String,
    /// Points per complete cloud (N).
    pub points: usize,
    /// Points per partial cloud (K).
    pub partial_points: usize,
    /// Shape code length |x|.
    pub code_dim: usize,
    /// Mode vector length |z|.
    pub z_dim: usize,
    /// Shared per-point layers of the PointNet trunk; the last equals `code_dim`.
    pub encoder_widths: Vec<usize>,
    /// Hidden layers of the point decoder; the output layer is `points * 3`.
    pub decoder_widths: Vec<usize>,
    /// Hidden layers of the generator and discriminator.
    pub gan_widths: Vec<usize>,
}

impl NetPreset {
    /// Full-size architecture.
    pub fn paper() -> Self {
        Self {
            name: "paper".into(),
            points: 2048,
            partial_points: 1024,
            code_dim: 128,
            z_dim: 64,
            encoder_widths: vec![64, 128, 128, 256, 128],
            decoder_widths: vec![256, 256],
            gan_widths: vec![256, 512],
        }
    }

    /// Halved widths and an eighth of the points; the default everywhere.
    pub fn desk() -> Self {
        Self {
            name: "desk".into(),
            points: 256,
            partial_points: 128,
            code_dim: 64,
            z_dim: 16,
            encoder_widths: vec![32, 64, 64, 128, 64],
            decoder_widths: vec![128, 128],
            gan_widths: vec![128, 256],
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::InvalidInput(format!("unknown preset {other:?} (expected paper or desk)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_widths.last() != Some(&self.code_dim) {
            return Err(Error::InvalidInput("last encoder width must equal the code length".into()));
        }
        if self.partial_points == 0 || self.partial_points > self.points || self.z_dim == 0 {
            return Err(Error::InvalidInput(format!("inconsistent preset {self:?}")));
        }
        Ok(())
    }
}

/// A shape code `x` in the autoencoder's latent space.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode(pub Vec<f64>);

/// A mode condition `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeVector(pub Vec<f64>);

/// Batch-norm behaviour for a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn init_dense(store: &mut ParamStore, name: &str, input: usize, output: usize, gain: f64, rng: &mut Rng) -> Result<()> {
    let bound = gain * (3.0 / input as f64).sqrt();
    let w = (0..input * output).map(|_| rng.random_range(-bound..bound)).collect();
    store.insert_param(&format!("{name}.w"), Tensor::matrix(output, input, w)?)?;
    store.insert_param(&format!("{name}.b"), Tensor::zeros(&[output]))
}

fn init_bn(store: &mut ParamStore, name: &str, width: usize) -> Result<()> {
    store.insert_param(&format!("{name}.gamma"), Tensor::filled(&[width], 1.0))?;
    store.insert_param(&format!("{name}.beta"), Tensor::zeros(&[width]))?;
    store.insert_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[width]))?;
    store.insert_buffer(&format!("{name}.running_var"), Tensor::filled(&[width], 1.0))
}

const RELU_GAIN: f64 = std::f64::consts::SQRT_2;

fn dense(tape: &mut Tape, store: &ParamStore, name: &str, x: Var, track: bool) -> Result<Var> {
    let w = tape.param(store, &format!("{name}.w"), track)?;
    let b = tape.param(store, &format!("{name}.b"), track)?;
    tape.linear(x, w, b)
}

fn bn(tape: &mut Tape, store: &ParamStore, name: &str, x: Var, mode: Mode, track: bool) -> Result<Var> {
    let gamma = tape.param(store, &format!("{name}.gamma"), track)?;
    let beta = tape.param(store, &format!("{name}.beta"), track)?;
    let mode = match mode {
        Mode::Train => BnMode::Train { name: name.to_string() },
        Mode::Eval => BnMode::Eval {
            mean: store.get(&format!("{name}.running_mean"))?.value.data().to_vec(),
            var: store.get(&format!("{name}.running_var"))?.value.data().to_vec(),
        },
    };
    tape.batchnorm(x, gamma, beta, mode)
}

/// Shared per-point layers with batch norm and ReLU, then a global max pool.
fn init_pointnet(store: &mut ParamStore, prefix: &str, widths: &[usize], rng: &mut Rng) -> Result<()> {
    let mut input = 3;
    for (l, &w) in widths.iter().enumerate() {
        init_dense(store, &format!("{prefix}.{l}"), input, w, RELU_GAIN, rng)?;
        init_bn(store, &format!("{prefix}.{l}.bn"), w)?;
        input = w;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn pointnet(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    layers: usize,
    x: Var,
    points: usize,
    mode: Mode,
    track: bool,
) -> Result<Var> {
    let mut h = x;
    for l in 0..layers {
        let name = format!("{prefix}.{l}");
        h = dense(tape, store, &name, h, track)?;
        h = bn(tape, store, &format!("{name}.bn"), h, mode, track)?;
        h = tape.relu(h)?;
    }
    tape.maxpool_points(h, points)
}

/// MLP with ReLU hidden layers and a linear output.
fn init_mlp(store: &mut ParamStore, prefix: &str, input: usize, hidden: &[usize], output: usize, rng: &mut Rng) -> Result<()> {
    let mut i = input;
    for (l, &w) in hidden.iter().enumerate() {
        init_dense(store, &format!("{prefix}.{l}"), i, w, RELU_GAIN, rng)?;
        i = w;
    }
    init_dense(store, &format!("{prefix}.out"), i, output, 1.0, rng)
}

fn mlp(tape: &mut Tape, store: &ParamStore, prefix: &str, hidden: usize, x: Var, leaky: bool, track: bool) -> Result<Var> {
    let mut h = x;
    for l in 0..hidden {
        h = dense(tape, store, &format!("{prefix}.{l}"), h, track)?;
        h = if leaky { tape.leaky_relu(h, LEAKY_SLOPE)? } else { tape.relu(h)? };
    }
    dense(tape, store, &format!("{prefix}.out"), h, track)
}

/// Stacks clouds of equal size into a `[B*M, 3]` tensor.
pub fn clouds_tensor(clouds: &[&PointCloud], expected: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(clouds.len() * expected * 3);
    for c in clouds {
        if c.len() != expected {
            return Err(Error::InvalidShape(format!("cloud has {} points, network expects {expected}", c.len())));
        }
        data.extend(c.points().iter().flatten());
    }
    Tensor::matrix(clouds.len() * expected, 3, data)
}

fn rows_tensor(rows: &[&[f64]], width: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(rows.len() * width);
    for r in rows {
        if r.len() != width {
            return Err(Error::InvalidShape(format!("vector of length {} where {width} is expected", r.len())));
        }
        data.extend_from_slice(r);
    }
    Tensor::matrix(rows.len(), width, data)
}

fn split_rows(t: &Tensor) -> Vec<Vec<f64>> {
    let (_, cols) = t.dims2().expect("matrix output");
    t.data().chunks(cols).map(<[f64]>::to_vec).collect()
}

/// Complete-shape autoencoder `(E_AE, D_AE)`.
#[derive(Debug, Clone)]
pub struct Autoencoder {
    pub preset: NetPreset,
    pub params: ParamStore,
    frozen: bool,
}

impl Autoencoder {
    pub fn new(preset: NetPreset, rng: &mut Rng) -> Result<Self> {
        preset.validate()?;
        let mut params = ParamStore::new();
        init_pointnet(&mut params, "enc", &preset.encoder_widths, rng)?;
        init_mlp(&mut params, "dec", preset.code_dim, &preset.decoder_widths, preset.points * 3, rng)?;
        Ok(Self { preset, params, frozen: false })
    }

    pub fn from_params(preset: NetPreset, params: ParamStore, frozen: bool) -> Self {
        Self { preset, params, frozen }
    }

    /// Weights are fixed from here on; downstream stages require this.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// `[B*N, 3] -> [B, |x|]`.
    pub fn encode_on(&self, tape: &mut Tape, x: Var, mode: Mode, track: bool) -> Result<Var> {
        let layers = self.preset.encoder_widths.len();
        pointnet(tape, &self.params, "enc", layers, x, self.preset.points, mode, track)
    }

    /// `[B, |x|] -> [B, N*3]`.
    pub fn decode_on(&self, tape: &mut Tape, code: Var, track: bool) -> Result<Var> {
        mlp(tape, &self.params, "dec", self.preset.decoder_widths.len(), code, false, track)
    }

    pub fn encode(&self, clouds: &[&PointCloud]) -> Result<Vec<LatentCode>> {
        let mut tape = Tape::new();
        let x = tape.constant(clouds_tensor(clouds, self.preset.points)?)?;
        let code = self.encode_on(&mut tape, x, Mode::Eval, false)?;
        Ok(split_rows(tape.value(code)).into_iter().map(LatentCode).collect())
    }

    pub fn encode_one(&self, cloud: &PointCloud) -> Result<LatentCode> {
        Ok(self.encode(&[cloud])?.remove(0))
    }

    /// Encodes a partial cloud after tiling it up to `N` points.
    pub fn encode_partial(&self, partial: &PointCloud) -> Result<LatentCode> {
        self.encode_one(&duplicate_to_n(partial, self.preset.points)?)
    }

    pub fn decode(&self, codes: &[&LatentCode]) -> Result<Vec<PointCloud>> {
        let rows: Vec<&[f64]> = codes.iter().map(|c| c.0.as_slice()).collect();
        let mut tape = Tape::new();
        let x = tape.constant(rows_tensor(&rows, self.preset.code_dim)?)?;
        let out = self.decode_on(&mut tape, x, false)?;
        tape.value(out).data().chunks(self.preset.points * 3).map(PointCloud::from_flat).collect()
    }

    pub fn decode_one(&self, code: &LatentCode) -> Result<PointCloud> {
        Ok(self.decode(&[code])?.remove(0))
    }
}

/// Variational autoencoder `(E_VAE, D_VAE)`; its encoder mean is the
/// explicit mode encoder `E_z`.
#[derive(Debug, Clone)]
pub struct Vae {
    pub preset: NetPreset,
    pub params: ParamStore,
    frozen: bool,
    trained: bool,
}

impl Vae {
    pub fn new(preset: NetPreset, rng: &mut Rng) -> Result<Self> {
        preset.validate()?;
        let mut params = ParamStore::new();
        init_pointnet(&mut params, "enc", &preset.encoder_widths, rng)?;
        init_dense(&mut params, "enc.head", preset.code_dim, 2 * preset.z_dim, 1.0, rng)?;
        init_mlp(&mut params, "dec", preset.z_dim, &preset.decoder_widths, preset.points * 3, rng)?;
        Ok(Self { preset, params, frozen: false, trained: false })
    }

    pub fn from_params(preset: NetPreset, params: ParamStore, trained: bool, frozen: bool) -> Self {
        Self { preset, params, frozen, trained }
    }

    /// Drops the decoder, leaving a cloud-to-mode encoder.
    pub fn encoder_only(mut self) -> Self {
        self.params.retain(|name| !name.starts_with("dec."));
        self
    }

    pub fn has_decoder(&self) -> bool {
        self.params.contains("dec.out.w")
    }

    pub fn mark_trained(&mut self) {
        self.trained = true;
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// `[B*N, 3] -> (mu [B, |z|], logvar [B, |z|])`.
    pub fn encode_on(&self, tape: &mut Tape, x: Var, mode: Mode, track: bool) -> Result<(Var, Var)> {
        let layers = self.preset.encoder_widths.len();
        let h = pointnet(tape, &self.params, "enc", layers, x, self.preset.points, mode, track)?;
        let stats = dense(tape, &self.params, "enc.head", h, track)?;
        let z = self.preset.z_dim;
        Ok((tape.slice_cols(stats, 0, z)?, tape.slice_cols(stats, z, z)?))
    }

    /// `[B, |z|] -> [B, N*3]`.
    pub fn decode_on(&self, tape: &mut Tape, z: Var, track: bool) -> Result<Var> {
        mlp(tape, &self.params, "dec", self.preset.decoder_widths.len(), z, false, track)
    }

    /// Posterior mean and log-variance of a complete cloud.
    pub fn encode_vae(&self, cloud: &PointCloud) -> Result<(ModeVector, ModeVector)> {
        let mut tape = Tape::new();
        let x = tape.constant(clouds_tensor(&[cloud], self.preset.points)?)?;
        let (mu, logvar) = self.encode_on(&mut tape, x, Mode::Eval, false)?;
        Ok((ModeVector(tape.value(mu).data().to_vec()), ModeVector(tape.value(logvar).data().to_vec())))
    }

    /// Deterministic mode vector of a complete cloud (the posterior mean).
    pub fn mode_encode(&self, cloud: &PointCloud) -> Result<ModeVector> {
        if !self.trained {
            return Err(Error::InvalidState("mode encoder used before VAE training".into()));
        }
        Ok(self.encode_vae(cloud)?.0)
    }

    pub fn decode(&self, z: &ModeVector) -> Result<PointCloud> {
        let mut tape = Tape::new();
        let x = tape.constant(rows_tensor(&[&z.0], self.preset.z_dim)?)?;
        let out = self.decode_on(&mut tape, x, false)?;
        PointCloud::from_flat(tape.value(out).data())
    }
}

/// `mu + exp(logvar / 2) * eps` with `eps` supplied by the caller.
pub fn reparameterize(tape: &mut Tape, mu: Var, logvar: Var, eps: Var) -> Result<Var> {
    let half = tape.scale(logvar, 0.5)?;
    let std = tape.exp(half)?;
    let noise = tape.mul(std, eps)?;
    tape.add(mu, noise)
}

/// Conditional generator `G(x_p, z)`.
#[derive(Debug, Clone)]
pub struct Generator {
    pub preset: NetPreset,
    pub params: ParamStore,
}

impl Generator {
    pub fn new(preset: NetPreset, rng: &mut Rng) -> Result<Self> {
        preset.validate()?;
        let mut params = ParamStore::new();
        init_mlp(&mut params, "g", preset.code_dim + preset.z_dim, &preset.gan_widths, preset.code_dim, rng)?;
        Ok(Self { preset, params })
    }

    /// `([B, |x|], [B, |z|]) -> [B, |x|]`.
    pub fn generate_on(&self, tape: &mut Tape, code: Var, z: Var, track: bool) -> Result<Var> {
        let joint = tape.concat(&[code, z])?;
        mlp(tape, &self.params, "g", self.preset.gan_widths.len(), joint, true, track)
    }

    pub fn generate(&self, code: &LatentCode, z: &ModeVector) -> Result<LatentCode> {
        let mut tape = Tape::new();
        let c = tape.constant(rows_tensor(&[&code.0], self.preset.code_dim)?)?;
        let zv = tape.constant(rows_tensor(&[&z.0], self.preset.z_dim)?)?;
        let out = self.generate_on(&mut tape, c, zv, false)?;
        Ok(LatentCode(tape.value(out).data().to_vec()))
    }
}

/// Latent discriminator `F`; raw scores, no sigmoid.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub preset: NetPreset,
    pub params: ParamStore,
}

impl Discriminator {
    pub fn new(preset: NetPreset, rng: &mut Rng) -> Result<Self> {
        preset.validate()?;
        let mut params = ParamStore::new();
        init_mlp(&mut params, "f", preset.code_dim, &preset.gan_widths, 1, rng)?;
        Ok(Self { preset, params })
    }

    /// `[B, |x|] -> [B, 1]`.
    pub fn discriminate_on(&self, tape: &mut Tape, code: Var, track: bool) -> Result<Var> {
        mlp(tape, &self.params, "f", self.preset.gan_widths.len(), code, true, track)
    }

    pub fn discriminate(&self, code: &LatentCode) -> Result<f64> {
        let mut tape = Tape::new();
        let c = tape.constant(rows_tensor(&[&code.0], self.preset.code_dim)?)?;
        let out = self.discriminate_on(&mut tape, c, false)?;
        Ok(tape.value(out).item())
    }
}

/// Mode encoder on shape codes, `|x| -> (mu, logvar)`, used by the
/// latent-to-z training variant.
#[derive(Debug, Clone)]
pub struct LatentModeEncoder {
    pub preset: NetPreset,
    pub params: ParamStore,
}

impl LatentModeEncoder {
    pub fn new(preset: NetPreset, rng: &mut Rng) -> Result<Self> {
        preset.validate()?;
        let mut params = ParamStore::new();
        let hidden = [preset.gan_widths[0]];
        init_mlp(&mut params, "ez", preset.code_dim, &hidden, 2 * preset.z_dim, rng)?;
        Ok(Self { preset, params })
    }

    pub fn encode_on(&self, tape: &mut Tape, code: Var, track: bool) -> Result<(Var, Var)> {
        let stats = mlp(tape, &self.params, "ez", 1, code, true, track)?;
        let z = self.preset.z_dim;
        Ok((tape.slice_cols(stats, 0, z)?, tape.slice_cols(stats, z, z)?))
    }
}

/// `[B, N*3]` decoder output viewed as `[B*N, 3]` point rows.
pub fn as_point_rows(tape: &mut Tape, decoded: Var, points: usize) -> Result<Var> {
    let batch = tape.value(decoded).len() / (points * 3);
    tape.reshape(decoded, vec![batch * points, 3])
}

/// Row `b` of a `[B, N*3]` decoder output as a cloud.
pub fn decoded_cloud(t: &Tensor, b: usize) -> Result<PointCloud> {
    let (_, cols) = t.dims2()?;
    PointCloud::from_flat(&t.data()[b * cols..(b + 1) * cols])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn paper_preset_matches_published_widths() {
        let p = NetPreset::paper();
        assert_eq!(p.encoder_widths, vec![64, 128, 128, 256, 128]);
        assert_eq!(p.decoder_widths, vec![256, 256]);
        assert_eq!(p.gan_widths, vec![256, 512]);
        assert_eq!((p.points, p.partial_points, p.code_dim, p.z_dim), (2048, 1024, 128, 64));
        p.validate().unwrap();

        let mut r = rng::seeded(0);
        let ae = Autoencoder::new(p.clone(), &mut r).unwrap();
        let shape = |n: &str| ae.params.get(n).unwrap().value.shape().to_vec();
        assert_eq!(shape("enc.0.w"), vec![64, 3]);
        assert_eq!(shape("enc.3.w"), vec![256, 128]);
        assert_eq!(shape("enc.4.w"), vec![128, 256]);
        assert_eq!(shape("dec.0.w"), vec![256, 128]);
        assert_eq!(shape("dec.1.w"), vec![256, 256]);
        assert_eq!(shape("dec.out.w"), vec![2048 * 3, 256]);
        let g = Generator::new(p.clone(), &mut r).unwrap();
        assert_eq!(g.params.get("g.0.w").unwrap().value.shape(), &[256, 128 + 64]);
        assert_eq!(g.params.get("g.1.w").unwrap().value.shape(), &[512, 256]);
        assert_eq!(g.params.get("g.out.w").unwrap().value.shape(), &[128, 512]);
        let f = Discriminator::new(p.clone(), &mut r).unwrap();
        assert_eq!(f.params.get("f.0.w").unwrap().value.shape(), &[256, 128]);
        assert_eq!(f.params.get("f.1.w").unwrap().value.shape(), &[512, 256]);
        assert_eq!(f.params.get("f.out.w").unwrap().value.shape(), &[1, 512]);
        let v = Vae::new(p, &mut r).unwrap();
        assert_eq!(v.params.get("enc.head.w").unwrap().value.shape(), &[128, 128]);
        assert_eq!(v.params.get("dec.0.w").unwrap().value.shape(), &[256, 64]);
    }

    #[test]
    fn unknown_preset() {
        assert!(NetPreset::by_name("huge").is_err());
        assert_eq!(NetPreset::by_name("desk").unwrap(), NetPreset::desk());
    }
}
