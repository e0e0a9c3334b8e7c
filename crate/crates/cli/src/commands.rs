use std::fs;
use std::path::{Path, PathBuf};

use shapecomp::data::{generate_dataset, read_cloud, write_cloud, DatasetManifest, DatasetSpec, ShapeSample, Split};
use shapecomp::eval::{evaluate, sweep_beta, sweep_incompleteness, Completer};
use shapecomp::networks::{Autoencoder, NetPreset, Vae};
use shapecomp::rng::stream;
use shapecomp::training::{
    continue_autoencoder, continue_vae, init_autoencoder, init_vae, Gan, GanTrainer, ModeEncoder, TrainLog,
    AE_COLUMNS, VAE_COLUMNS,
};
use shapecomp::{Error, PointCloud};

use crate::config::{Overrides, RunConfig};
use crate::rundir::{RunDir, Stage};
use crate::{resolve, CliError, CompleteArgs, EvalArgs, GenDataArgs, RunArgs, Sweep, TrainArgs};

fn load_config(a: &RunArgs) -> Result<RunConfig, CliError> {
    let flags = Overrides { preset: a.preset.clone(), seed: a.seed, data: a.data.clone(), run: a.run.clone() };
    let mut cfg = RunConfig::load(a.config.as_deref(), flags)?;
    cfg.data = resolve(&cfg.data);
    cfg.run = resolve(&cfg.run);
    Ok(cfg)
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
    }
    fs::write(path, text).map_err(|e| CliError::Runtime(Error::Io { path: path.to_path_buf(), source: e }))
}

pub fn gen_data(a: GenDataArgs) -> Result<(), CliError> {
    let preset = NetPreset::by_name(&a.preset)?;
    let mut spec = DatasetSpec::new(a.category, a.count, a.seed);
    spec.protocol = a.protocol;
    spec.scan_views = a.scan_views;
    spec.points = preset.points;
    spec.partial_points = preset.partial_points;
    if preset.name == "paper" {
        spec.complete_views = 27;
    }
    spec.preset = preset.name;
    let out = resolve(&a.out);
    let manifest = generate_dataset(&spec, &out)?;
    let test = manifest.entries.iter().filter(|e| e.split == Split::Test).count();
    let partials: usize = manifest.entries.iter().map(|e| e.partials.len()).sum();
    println!(
        "wrote {} shapes ({} train, {test} test) and {partials} partials to {}",
        manifest.entries.len(),
        manifest.entries.len() - test,
        out.display()
    );
    Ok(())
}

/// Loads and checks the dataset in `manifest_path` against the preset.
fn load_samples(manifest_path: &Path, preset: &NetPreset) -> Result<Vec<ShapeSample>, CliError> {
    if !manifest_path.is_file() {
        return Err(CliError::Prerequisite(format!(
            "no dataset at {}; run `shapecomp gen-data` first",
            manifest_path.display()
        )));
    }
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let manifest = DatasetManifest::load(manifest_path)?;
    if manifest.points != preset.points || manifest.partial_points > preset.points {
        return Err(CliError::Usage(format!(
            "dataset has {} points per shape but preset {} expects {}",
            manifest.points, preset.name, preset.points
        )));
    }
    manifest.validate(root)?;
    Ok(manifest.read_samples(root)?)
}

fn split_of(samples: &[ShapeSample], split: Split) -> impl Iterator<Item = &ShapeSample> {
    samples.iter().filter(move |s| s.split == split)
}

fn completes_of(samples: &[ShapeSample], split: Split) -> Vec<PointCloud> {
    split_of(samples, split).map(|s| s.complete.clone()).collect()
}

fn partials_of(samples: &[ShapeSample], split: Split) -> Vec<(String, PointCloud)> {
    split_of(samples, split)
        .flat_map(|s| s.partials.iter().enumerate().map(move |(n, (p, _))| (format!("{}_{n}", s.id), p.clone())))
        .collect()
}

/// Calls `step(until)` in chunks of `every` epochs up to `target`; each
/// call trains, saves and returns the latest loss.
fn chunked(
    mut last: usize,
    target: usize,
    every: usize,
    stage: Stage,
    mut step: impl FnMut(usize) -> Result<Option<f64>, CliError>,
) -> Result<(), CliError> {
    while last < target {
        let until = (last + every).min(target);
        if let Some(loss) = step(until)? {
            println!("{stage} epoch {until}/{target} loss {loss:.6}");
        }
        last = until;
    }
    Ok(())
}

fn resumable(rd: &RunDir, stage: Stage, nets: &[Option<&str>]) -> bool {
    rd.log(stage).is_file() && nets.iter().all(|n| rd.ckpt(stage, *n).is_file())
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    if a.save_every == 0 {
        return Err(CliError::Usage("--save-every must be at least 1".into()));
    }
    let mut cfg = load_config(&a.run)?;
    if a.no_timing {
        cfg.train.record_time = false;
    }
    let stage = a.stage;
    let rd = RunDir::new(cfg.run.clone(), cfg.preset.clone());
    rd.require(stage.prerequisites(), &format!("stage {stage}"))?;
    let samples = load_samples(&cfg.data.join("manifest.json"), &cfg.preset)?;
    let completes = completes_of(&samples, Split::Train);
    let partials: Vec<PointCloud> = partials_of(&samples, Split::Train).into_iter().map(|(_, p)| p).collect();
    if completes.is_empty() {
        return Err(CliError::Usage("the dataset has no training shapes".into()));
    }
    rd.clear_done(stage)?;
    let tc = &cfg.train;
    let log_path = rd.log(stage);
    let resume = a.resume && resumable(&rd, stage, &stage_nets(stage));
    if a.resume && !resume {
        println!("nothing to resume for {stage}; starting fresh");
    }
    match stage {
        Stage::Ae => {
            let (mut ae, mut log) = if resume {
                (Autoencoder::from_params(cfg.preset.clone(), rd.load(stage, None)?, false), TrainLog::read_csv(&log_path)?)
            } else {
                (init_autoencoder(&cfg.preset, tc)?, TrainLog::new(&AE_COLUMNS))
            };
            chunked(log.last_epoch(), tc.epochs_ae, a.save_every, stage, |until| {
                continue_autoencoder(&mut ae, &completes, tc, &mut log, until)?;
                rd.save(stage, None, &ae.params)?;
                log.write_csv(&log_path)?;
                Ok(log.rows().last().map(|r| r.values[0]))
            })?;
            rd.mark_done(stage, log.last_epoch(), &ae.params.fingerprint())?;
        }
        Stage::Vae => {
            let (mut vae, mut log) = if resume {
                let params = rd.load(stage, None)?;
                (Vae::from_params(cfg.preset.clone(), params, false, false), TrainLog::read_csv(&log_path)?)
            } else {
                (init_vae(&cfg.preset, tc)?, TrainLog::new(&VAE_COLUMNS))
            };
            chunked(log.last_epoch(), tc.epochs_vae, a.save_every, stage, |until| {
                continue_vae(&mut vae, &completes, tc, &mut log, until)?;
                rd.save(stage, None, &vae.params)?;
                log.write_csv(&log_path)?;
                Ok(log.rows().last().map(|r| r.values[2]))
            })?;
            rd.mark_done(stage, log.last_epoch(), &vae.params.fingerprint())?;
        }
        Stage::Gan | Stage::GanL2z | Stage::GanPc2z => {
            let ae = rd.frozen_ae()?;
            let vae = if stage == Stage::Gan { Some(rd.frozen_vae()?) } else { None };
            let gan = if resume {
                rd.load_gan(stage, vae)?
            } else {
                match (stage, vae) {
                    (Stage::Gan, Some(vae)) => Gan::explicit(&vae, tc.seed)?,
                    (Stage::GanL2z, _) => Gan::l2z(&cfg.preset, tc.seed)?,
                    _ => Gan::pc2z(&cfg.preset, tc.seed)?,
                }
            };
            let mut trainer = GanTrainer::new(&ae, gan, &partials, &completes, tc)?;
            if resume {
                trainer = trainer.with_log(TrainLog::read_csv(&log_path)?)?;
            }
            chunked(trainer.log.last_epoch(), tc.epochs_gan, a.save_every, stage, |until| {
                trainer.run_until(until)?;
                rd.save_gan(stage, &trainer.gan)?;
                trainer.log.write_csv(&log_path)?;
                Ok(trainer.log.rows().last().and_then(|r| r.values.last().copied()))
            })?;
            let (gan, log, _) = trainer.finish();
            rd.mark_done(stage, log.last_epoch(), &gan.generator.params.fingerprint())?;
        }
    }
    println!("{stage} done; checkpoints in {}", rd.root.display());
    Ok(())
}

fn stage_nets(stage: Stage) -> Vec<Option<&'static str>> {
    match stage {
        Stage::Ae | Stage::Vae => vec![None],
        Stage::Gan => vec![Some("g"), Some("f")],
        Stage::GanL2z | Stage::GanPc2z => vec![Some("g"), Some("f"), Some("ez")],
    }
}

/// The inference networks of a trained GAN stage.
fn completer(rd: &RunDir, stage: Stage) -> Result<Completer, CliError> {
    if !stage.is_gan() {
        return Err(CliError::Usage(format!("--stage must be a GAN stage, not {stage}")));
    }
    rd.require(&[stage], "completion")?;
    let ae = rd.frozen_ae()?;
    let vae = if stage == Stage::Gan { Some(rd.frozen_vae()?) } else { None };
    let gan = rd.load_gan(stage, vae)?;
    let mode_encoder = match gan.mode_encoder {
        ModeEncoder::Explicit(v) => Some(v),
        ModeEncoder::Cloud(v) => Some(Vae::from_params(v.preset, v.params, true, true)),
        ModeEncoder::Latent(_) => None,
    };
    Ok(Completer::new(ae, gan.generator, mode_encoder)?)
}

pub fn complete(a: CompleteArgs) -> Result<(), CliError> {
    if a.k == 0 {
        return Err(CliError::Usage("--k must be at least 1".into()));
    }
    if a.k > 1 && a.reference.is_some() {
        return Err(CliError::Usage("--reference gives exactly one completion; it cannot be combined with --k > 1".into()));
    }
    let cfg = load_config(&a.run)?;
    let rd = RunDir::new(cfg.run.clone(), cfg.preset.clone());
    let comp = completer(&rd, a.stage)?;
    let partial = read_cloud(&a.input)?;
    let out = resolve(&a.out);
    match &a.reference {
        Some(r) => {
            if comp.mode_encoder.is_none() {
                return Err(CliError::Usage(format!("stage {} has no cloud mode encoder for --reference", a.stage)));
            }
            let reference = read_cloud(r)?;
            let path = out.join("completion.xyz");
            write_cloud(&path, &comp.complete_with_reference(&partial, &reference)?)?;
            println!("wrote {}", path.display());
        }
        None => {
            let set = comp.complete_k(&partial, a.k, &mut stream(cfg.seed, "complete/z", 0))?;
            for (i, c) in set.completions.iter().enumerate() {
                write_cloud(out.join(format!("completion_{i}.xyz")), c)?;
            }
            println!("wrote {} completions to {}", a.k, out.display());
        }
    }
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    if a.k == 0 {
        return Err(CliError::Usage("--k must be at least 1".into()));
    }
    let cfg = load_config(&a.run)?;
    let rd = RunDir::new(cfg.run.clone(), cfg.preset.clone());
    let manifest: PathBuf = match &a.manifest {
        Some(m) => resolve(m),
        None => cfg.data.join("manifest.json"),
    };
    let out = resolve(&a.out);
    match a.sweep {
        None => {
            let comp = completer(&rd, a.stage)?;
            let samples = load_samples(&manifest, &cfg.preset)?;
            let partials = partials_of(&samples, Split::Test);
            if partials.is_empty() {
                return Err(CliError::Usage("the dataset has no test partials".into()));
            }
            let (report, _) =
                evaluate(&comp, &partials, &completes_of(&samples, Split::Test), a.k, &a.metrics, cfg.seed)?;
            report.write(&out, "report")?;
            for m in &report.metrics {
                println!("{} {:.4}", m.metric.name(), m.scaled);
            }
        }
        Some(Sweep::Beta) => {
            rd.require(&[Stage::Ae, Stage::Vae], "the beta sweep")?;
            let (ae, vae) = (rd.frozen_ae()?, rd.frozen_vae()?);
            let samples = load_samples(&manifest, &cfg.preset)?;
            let train_partials: Vec<PointCloud> =
                partials_of(&samples, Split::Train).into_iter().map(|(_, p)| p).collect();
            let sweep = sweep_beta(
                &a.betas,
                &train_partials,
                &completes_of(&samples, Split::Train),
                &partials_of(&samples, Split::Test),
                &ae,
                &vae,
                &cfg.train,
                a.k,
            )?;
            write_file(&out.join("beta_sweep.csv"), &sweep.to_csv())?;
            sweep.write_latents(&out)?;
            for r in &sweep.rows {
                println!("beta {} tmd {:.4} uhd {:.4}", r.beta, r.tmd * 1e2, r.uhd * 1e2);
            }
        }
        Some(Sweep::Incompleteness) => {
            let comp = completer(&rd, a.stage)?;
            let samples = load_samples(&manifest, &cfg.preset)?;
            let max_j = a.removed.iter().copied().max().unwrap_or(0);
            let shapes: Vec<_> =
                split_of(&samples, Split::Test).map(|s| s.shape.clone()).filter(|s| s.parts().len() > max_j).collect();
            if shapes.is_empty() {
                return Err(CliError::Usage(format!("no test shape has more than {max_j} parts")));
            }
            let rows = sweep_incompleteness(&comp, &shapes, &a.removed, a.k, cfg.seed)?;
            let mut csv = String::from("removed,tmd,shapes\n");
            for r in &rows {
                csv.push_str(&format!("{},{},{}\n", r.removed, r.tmd, r.shapes));
                println!("removed {} tmd {:.4}", r.removed, r.tmd * 1e2);
            }
            write_file(&out.join("incompleteness.csv"), &csv)?;
        }
    }
    Ok(())
}
