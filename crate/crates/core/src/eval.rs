//! Completion inference, quality/diversity/fidelity metrics, the
//! KNN-latent baseline and the two trend experiments.
//!
//! Metrics (all on the Chamfer convention of [`crate::geometry::chamfer`]):
//!
//! - MMD: mean over test shapes of the Chamfer distance to the nearest
//!   completion in the pooled generated set.
//! - TMD: per partial, the sum over its `k` completions of the mean Chamfer
//!   distance to the other `k - 1`; averaged over partials.
//! - UHD: per partial, the mean unidirectional Hausdorff distance from the
//!   partial to each completion; averaged over partials.
//!
//! Reports scale them by 1e3, 1e2 and 1e2.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::autodiff::{Tape, Tensor};
use crate::data::{duplicate_to_n, remove_n_parts, write_vectors, PartedShape};
use crate::error::{Error, Result};
use crate::geometry::{chamfer, hausdorff_uni, PointCloud};
use crate::networks::{clouds_tensor, decoded_cloud, Autoencoder, Generator, LatentCode, Mode, ModeVector, Vae};
use crate::rng::{stream, Rng};
use crate::training::{train_gan, TrainConfig};

/// The `k` completions of one partial and the mode vectors behind them.
#[derive(Debug, Clone)]
pub struct CompletionSet {
    pub partial_id: String,
    pub completions: Vec<PointCloud>,
    pub codes: Vec<LatentCode>,
    pub zs: Vec<ModeVector>,
}

/// Frozen networks needed at inference time.
#[derive(Debug, Clone)]
pub struct Completer {
    pub ae: Autoencoder,
    pub generator: Generator,
    pub mode_encoder: Option<Vae>,
}

impl Completer {
    pub fn new(ae: Autoencoder, generator: Generator, mode_encoder: Option<Vae>) -> Result<Self> {
        if !ae.is_frozen() {
            return Err(Error::InvalidState("completion needs a trained, frozen autoencoder".into()));
        }
        if generator.preset != ae.preset {
            return Err(Error::InvalidState("generator and autoencoder presets differ".into()));
        }
        Ok(Self { ae, generator, mode_encoder })
    }

    /// One completion per mode vector: `D_AE(G(E_AE(tile(P)), z))`.
    pub fn complete_with_zs(&self, partial: &PointCloud, zs: &[ModeVector]) -> Result<(Vec<PointCloud>, Vec<LatentCode>)> {
        let preset = &self.ae.preset;
        if zs.is_empty() {
            return Err(Error::InvalidInput("need at least one mode vector".into()));
        }
        let code = self.ae.encode_partial(partial)?;
        let mut tape = Tape::new();
        let rows: Vec<f64> = zs.iter().flat_map(|_| code.0.iter().copied()).collect();
        let x = tape.constant(Tensor::matrix(zs.len(), preset.code_dim, rows)?)?;
        let zflat: Vec<f64> = zs.iter().flat_map(|z| z.0.iter().copied()).collect();
        if zflat.len() != zs.len() * preset.z_dim {
            return Err(Error::InvalidShape(format!("mode vectors must have length {}", preset.z_dim)));
        }
        let z = tape.constant(Tensor::matrix(zs.len(), preset.z_dim, zflat)?)?;
        let gen = self.generator.generate_on(&mut tape, x, z, false)?;
        let out = self.ae.decode_on(&mut tape, gen, false)?;
        let clouds = (0..zs.len()).map(|b| decoded_cloud(tape.value(out), b)).collect::<Result<Vec<_>>>()?;
        let codes = tape.value(gen).data().chunks(preset.code_dim).map(|c| LatentCode(c.to_vec())).collect();
        Ok((clouds, codes))
    }

    /// `k` completions with `z ~ N(0, I)` drawn from `rng`.
    pub fn complete_k(&self, partial: &PointCloud, k: usize, rng: &mut Rng) -> Result<CompletionSet> {
        if k == 0 {
            return Err(Error::InvalidInput("k must be at least 1".into()));
        }
        let zdim = self.ae.preset.z_dim;
        let zs: Vec<ModeVector> =
            (0..k).map(|_| ModeVector((0..zdim).map(|_| rng.sample(StandardNormal)).collect())).collect();
        let (completions, codes) = self.complete_with_zs(partial, &zs)?;
        Ok(CompletionSet { partial_id: String::new(), completions, codes, zs })
    }

    /// Completion steered by the mode vector of a reference shape.
    pub fn complete_with_reference(&self, partial: &PointCloud, reference: &PointCloud) -> Result<PointCloud> {
        let vae = self
            .mode_encoder
            .as_ref()
            .ok_or_else(|| Error::InvalidState("reference completion needs the trained mode encoder".into()))?;
        let z = vae.mode_encode(reference)?;
        Ok(self.complete_with_zs(partial, &[z])?.0.remove(0))
    }
}

fn nonempty<T>(v: &[T], what: &str) -> Result<()> {
    if v.is_empty() {
        return Err(Error::InvalidInput(format!("{what} is empty")));
    }
    Ok(())
}

/// Minimal matching distance of `test` against `generated`.
pub fn mmd(test: &[PointCloud], generated: &[PointCloud]) -> Result<f64> {
    nonempty(test, "test set")?;
    nonempty(generated, "generated set")?;
    let total: f64 = test
        .par_iter()
        .map(|s| generated.iter().map(|g| chamfer(s, g)).fold(f64::INFINITY, f64::min))
        .collect::<Vec<_>>()
        .iter()
        .sum();
    Ok(total / test.len() as f64)
}

/// Total mutual difference of one partial's completions; 0 for `k = 1`.
pub fn tmd(completions: &[PointCloud]) -> Result<f64> {
    nonempty(completions, "completion set")?;
    let k = completions.len();
    if k == 1 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for j in 0..k {
        for l in j + 1..k {
            sum += chamfer(&completions[j], &completions[l]);
        }
    }
    Ok(2.0 * sum / (k - 1) as f64)
}

pub fn tmd_mean(sets: &[Vec<PointCloud>]) -> Result<f64> {
    nonempty(sets, "completion sets")?;
    let vals = sets.par_iter().map(|s| tmd(s)).collect::<Result<Vec<_>>>()?;
    Ok(vals.iter().sum::<f64>() / sets.len() as f64)
}

/// Mean unidirectional Hausdorff distance from `partial` to each completion.
pub fn uhd(partial: &PointCloud, completions: &[PointCloud]) -> Result<f64> {
    nonempty(completions, "completion set")?;
    Ok(completions.iter().map(|c| hausdorff_uni(partial, c)).sum::<f64>() / completions.len() as f64)
}

pub fn uhd_mean(pairs: &[(&PointCloud, &[PointCloud])]) -> Result<f64> {
    nonempty(pairs, "completion sets")?;
    let vals = pairs.par_iter().map(|(p, cs)| uhd(p, cs)).collect::<Result<Vec<_>>>()?;
    Ok(vals.iter().sum::<f64>() / pairs.len() as f64)
}

/// Complete training shapes with their codes, for nearest-neighbour
/// retrieval.
#[derive(Debug, Clone)]
pub struct KnnPool {
    codes: Vec<LatentCode>,
    clouds: Vec<PointCloud>,
}

impl KnnPool {
    pub fn new(ae: &Autoencoder, clouds: Vec<PointCloud>) -> Result<Self> {
        nonempty(&clouds, "retrieval pool")?;
        let mut codes = Vec::with_capacity(clouds.len());
        for chunk in clouds.chunks(32) {
            let refs: Vec<&PointCloud> = chunk.iter().collect();
            codes.extend(ae.encode(&refs)?);
        }
        Ok(Self { codes, clouds })
    }

    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    /// Indices of the `k` codes most cosine-similar to `code`, best first;
    /// ties go to the lower index.
    pub fn nearest(&self, code: &LatentCode, k: usize) -> Result<Vec<usize>> {
        if k == 0 || k > self.len() {
            return Err(Error::InvalidInput(format!("cannot retrieve {k} of {} shapes", self.len())));
        }
        let mut scored: Vec<(f64, usize)> = self.codes.iter().map(|c| cosine(&code.0, &c.0)).zip(0..).collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        Ok(scored.into_iter().take(k).map(|(_, i)| i).collect())
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Baseline: the `k` stored training shapes whose codes are most similar to
/// the partial's code.
pub fn knn_latent(ae: &Autoencoder, pool: &KnnPool, partial: &PointCloud, k: usize) -> Result<Vec<PointCloud>> {
    let code = ae.encode_one(&duplicate_to_n(partial, ae.preset.points)?)?;
    Ok(pool.nearest(&code, k)?.into_iter().map(|i| pool.clouds[i].clone()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Mmd,
    Tmd,
    Uhd,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Mmd, Metric::Tmd, Metric::Uhd];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Mmd => "mmd",
            Metric::Tmd => "tmd",
            Metric::Uhd => "uhd",
        }
    }

    /// Reporting factor.
    pub fn scale(self) -> f64 {
        match self {
            Metric::Mmd => 1e3,
            Metric::Tmd | Metric::Uhd => 1e2,
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown metric {s:?}; valid metrics: mmd, tmd, uhd")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricValue {
    pub metric: Metric,
    pub raw: f64,
    pub scaled: f64,
}

impl MetricValue {
    pub fn new(metric: Metric, raw: f64) -> Self {
        Self { metric, raw, scaled: raw * metric.scale() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapeMetrics {
    pub id: String,
    pub tmd: f64,
    pub uhd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub k: usize,
    pub seed: u64,
    pub fingerprint: String,
    pub metrics: Vec<MetricValue>,
    pub per_shape: Vec<ShapeMetrics>,
}

impl EvalReport {
    pub fn get(&self, metric: Metric) -> Option<&MetricValue> {
        self.metrics.iter().find(|m| m.metric == metric)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,raw,scaled\n");
        for m in &self.metrics {
            let _ = writeln!(out, "{},{},{}", m.metric.name(), m.raw, m.scaled);
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (ext, text) in [("csv", self.to_csv()), ("json", self.to_json())] {
            let path = dir.join(format!("{stem}.{ext}"));
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Hash of the networks and evaluation settings behind a report.
pub fn fingerprint(completer: &Completer, k: usize, seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(completer.ae.params.fingerprint());
    h.update(completer.generator.params.fingerprint());
    h.update((k as u64).to_le_bytes());
    h.update(seed.to_le_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Completes every test partial `k` times; partial `i` draws its mode
/// vectors from its own stream so results do not depend on scheduling.
pub fn complete_all(
    completer: &Completer,
    partials: &[(String, PointCloud)],
    k: usize,
    seed: u64,
) -> Result<Vec<CompletionSet>> {
    partials
        .par_iter()
        .enumerate()
        .map(|(i, (id, p))| {
            let mut set = completer.complete_k(p, k, &mut stream(seed, "eval/z", i as u64))?;
            set.partial_id = id.clone();
            Ok(set)
        })
        .collect()
}

/// Evaluates the requested metrics on a test split.
pub fn evaluate(
    completer: &Completer,
    partials: &[(String, PointCloud)],
    test_complete: &[PointCloud],
    k: usize,
    metrics: &[Metric],
    seed: u64,
) -> Result<(EvalReport, Vec<CompletionSet>)> {
    nonempty(partials, "test partials")?;
    nonempty(metrics, "metric list")?;
    let sets = complete_all(completer, partials, k, seed)?;
    let per_shape = sets
        .iter()
        .zip(partials)
        .map(|(s, (id, p))| Ok(ShapeMetrics { id: id.clone(), tmd: tmd(&s.completions)?, uhd: uhd(p, &s.completions)? }))
        .collect::<Result<Vec<_>>>()?;
    let n = per_shape.len() as f64;
    let mut values = Vec::new();
    for &m in metrics {
        let raw = match m {
            Metric::Mmd => {
                let pooled: Vec<PointCloud> = sets.iter().flat_map(|s| s.completions.iter().cloned()).collect();
                mmd(test_complete, &pooled)?
            }
            Metric::Tmd => per_shape.iter().map(|s| s.tmd).sum::<f64>() / n,
            Metric::Uhd => per_shape.iter().map(|s| s.uhd).sum::<f64>() / n,
        };
        values.push(MetricValue::new(m, raw));
    }
    let report = EvalReport { k, seed, fingerprint: fingerprint(completer, k, seed), metrics: values, per_shape };
    Ok((report, sets))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaRow {
    pub beta: f64,
    pub tmd: f64,
    pub uhd: f64,
}

/// Result of a β sweep: one row per β plus, per β and test partial, the
/// latent codes of the `k` completions.
#[derive(Debug, Clone)]
pub struct BetaSweep {
    pub rows: Vec<BetaRow>,
    pub latents: Vec<Vec<Vec<LatentCode>>>,
}

impl BetaSweep {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("beta,tmd,uhd\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", r.beta, r.tmd, r.uhd);
        }
        out
    }

    /// One file per β, `k` lines per partial in test order.
    pub fn write_latents(&self, dir: &Path) -> Result<()> {
        for (row, per_partial) in self.rows.iter().zip(&self.latents) {
            let vectors: Vec<Vec<f64>> = per_partial.iter().flatten().map(|c| c.0.clone()).collect();
            write_vectors(dir.join(format!("latents_beta_{}.txt", row.beta)), &vectors)?;
        }
        Ok(())
    }
}

/// Trains one GAN per β on the same data and seed and evaluates TMD and UHD
/// on the test partials.
#[allow(clippy::too_many_arguments)]
pub fn sweep_beta(
    betas: &[f64],
    train_partials: &[PointCloud],
    train_complete: &[PointCloud],
    test_partials: &[(String, PointCloud)],
    ae: &Autoencoder,
    vae: &Vae,
    cfg: &TrainConfig,
    k: usize,
) -> Result<BetaSweep> {
    if betas.len() < 2 {
        return Err(Error::InvalidInput("a sweep needs at least two values".into()));
    }
    let mut rows = Vec::new();
    let mut latents = Vec::new();
    for &beta in betas {
        let cfg = TrainConfig { beta, ..cfg.clone() };
        let (gan, _, _) = train_gan(train_partials, train_complete, ae, vae, &cfg)?;
        let completer = Completer::new(ae.clone(), gan.generator, Some(vae.clone()))?;
        let (report, sets) = evaluate(&completer, test_partials, &[], k, &[Metric::Tmd, Metric::Uhd], cfg.seed)?;
        let value = |m| report.get(m).expect("requested metric").raw;
        rows.push(BetaRow { beta, tmd: value(Metric::Tmd), uhd: value(Metric::Uhd) });
        latents.push(sets.into_iter().map(|s| s.codes).collect());
    }
    Ok(BetaSweep { rows, latents })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IncompletenessRow {
    pub removed: usize,
    pub tmd: f64,
    pub shapes: usize,
}

/// For each `j`, removes exactly `j` parts from every shape, completes the
/// result `k` times and reports the mean TMD.
pub fn sweep_incompleteness(
    completer: &Completer,
    shapes: &[PartedShape],
    js: &[usize],
    k: usize,
    seed: u64,
) -> Result<Vec<IncompletenessRow>> {
    nonempty(shapes, "shape set")?;
    nonempty(js, "removal counts")?;
    if js.contains(&0) {
        return Err(Error::InvalidInput("at least one part must be removed (j >= 1)".into()));
    }
    let max_j = *js.iter().max().expect("non-empty");
    if let Some(s) = shapes.iter().find(|s| s.parts().len() <= max_j) {
        return Err(Error::InvalidInput(format!(
            "a {} with {} parts cannot lose {max_j}",
            s.category(),
            s.parts().len()
        )));
    }
    let partial_points = completer.ae.preset.partial_points;
    js.iter()
        .map(|&j| {
            let sets = shapes
                .par_iter()
                .enumerate()
                .map(|(i, s)| {
                    let mut rng = stream(seed, &format!("sweep/removed-{j}"), i as u64);
                    let (partial, _) = remove_n_parts(s, j, partial_points, &mut rng)?;
                    Ok(completer.complete_k(&partial, k, &mut rng)?.completions)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(IncompletenessRow { removed: j, tmd: tmd_mean(&sets)?, shapes: shapes.len() })
        })
        .collect()
}

/// Encodes complete clouds with the mode encoder in eval mode.
pub fn mode_vectors(vae: &Vae, clouds: &[PointCloud]) -> Result<Vec<ModeVector>> {
    let mut out = Vec::with_capacity(clouds.len());
    for chunk in clouds.chunks(32) {
        let refs: Vec<&PointCloud> = chunk.iter().collect();
        let mut tape = Tape::new();
        let x = tape.constant(clouds_tensor(&refs, vae.preset.points)?)?;
        let (mu, _) = vae.encode_on(&mut tape, x, Mode::Eval, false)?;
        out.extend(tape.value(mu).data().chunks(vae.preset.z_dim).map(|c| ModeVector(c.to_vec())));
    }
    Ok(out)
}
