//! Layout of a run directory.
//!
//! Each stage writes its checkpoints (with optimizer state, so training can
//! resume), `<stage>_log.csv`, and finally a `<stage>.done` marker. The
//! autoencoder and VAE use `<stage>.ckpt`; GAN stages write one file per
//! network, `<stage>.g.ckpt`, `<stage>.f.ckpt` and, for the jointly trained
//! mode encoders, `<stage>.ez.ckpt`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use shapecomp::autodiff::{load_store, save_store, ParamStore};
use shapecomp::networks::{Autoencoder, Discriminator, Generator, LatentModeEncoder, NetPreset, Vae};
use shapecomp::training::{Gan, ModeEncoder};
use shapecomp::Error;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    Ae,
    Vae,
    Gan,
    #[value(name = "gan-l2z")]
    GanL2z,
    #[value(name = "gan-pc2z")]
    GanPc2z,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Ae => "ae",
            Stage::Vae => "vae",
            Stage::Gan => "gan",
            Stage::GanL2z => "gan-l2z",
            Stage::GanPc2z => "gan-pc2z",
        }
    }

    pub fn prerequisites(self) -> &'static [Stage] {
        match self {
            Stage::Ae | Stage::Vae => &[],
            Stage::Gan => &[Stage::Ae, Stage::Vae],
            Stage::GanL2z | Stage::GanPc2z => &[Stage::Ae],
        }
    }

    pub fn is_gan(self) -> bool {
        matches!(self, Stage::Gan | Stage::GanL2z | Stage::GanPc2z)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub struct RunDir {
    pub root: PathBuf,
    pub preset: NetPreset,
}

impl RunDir {
    pub fn new(root: PathBuf, preset: NetPreset) -> Self {
        Self { root, preset }
    }

    pub fn ckpt(&self, stage: Stage, net: Option<&str>) -> PathBuf {
        match net {
            Some(n) => self.root.join(format!("{stage}.{n}.ckpt")),
            None => self.root.join(format!("{stage}.ckpt")),
        }
    }

    pub fn log(&self, stage: Stage) -> PathBuf {
        self.root.join(format!("{stage}_log.csv"))
    }

    pub fn done(&self, stage: Stage) -> PathBuf {
        self.root.join(format!("{stage}.done"))
    }

    pub fn is_done(&self, stage: Stage) -> bool {
        self.done(stage).is_file()
    }

    /// Exit-3 error unless every stage in `stages` has finished.
    pub fn require(&self, stages: &[Stage], needed_by: &str) -> Result<(), CliError> {
        match stages.iter().find(|s| !self.is_done(**s)) {
            Some(s) => Err(CliError::Prerequisite(format!(
                "{needed_by} needs the {s} stage; run `shapecomp train --stage {s}` first (no {})",
                self.done(*s).display()
            ))),
            None => Ok(()),
        }
    }

    pub fn mark_done(&self, stage: Stage, epochs: usize, fingerprint: &str) -> Result<(), CliError> {
        let path = self.done(stage);
        fs::write(&path, format!("epochs {epochs}\nfingerprint {fingerprint}\n")).map_err(|e| io(&path, e))
    }

    pub fn clear_done(&self, stage: Stage) -> Result<(), CliError> {
        let path = self.done(stage);
        match fs::remove_file(&path) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(io(&path, e)),
            _ => Ok(()),
        }
    }

    pub fn save(&self, stage: Stage, net: Option<&str>, store: &ParamStore) -> Result<(), CliError> {
        fs::create_dir_all(&self.root).map_err(|e| io(&self.root, e))?;
        Ok(save_store(store, &self.ckpt(stage, net), true)?)
    }

    pub fn load(&self, stage: Stage, net: Option<&str>) -> Result<ParamStore, CliError> {
        Ok(load_store(&self.ckpt(stage, net))?)
    }

    pub fn frozen_ae(&self) -> Result<Autoencoder, CliError> {
        self.require(&[Stage::Ae], "this command")?;
        Ok(Autoencoder::from_params(self.preset.clone(), self.load(Stage::Ae, None)?, true))
    }

    pub fn frozen_vae(&self) -> Result<Vae, CliError> {
        self.require(&[Stage::Vae], "this command")?;
        Ok(Vae::from_params(self.preset.clone(), self.load(Stage::Vae, None)?, true, true))
    }

    pub fn save_gan(&self, stage: Stage, gan: &Gan) -> Result<(), CliError> {
        self.save(stage, Some("g"), &gan.generator.params)?;
        self.save(stage, Some("f"), &gan.discriminator.params)?;
        if !matches!(gan.mode_encoder, ModeEncoder::Explicit(_)) {
            self.save(stage, Some("ez"), gan.mode_encoder.params())?;
        }
        Ok(())
    }

    /// A GAN checkpoint around the given mode encoder; implicit encoders
    /// are read from the stage's own files.
    pub fn load_gan(&self, stage: Stage, explicit: Option<Vae>) -> Result<Gan, CliError> {
        let preset = self.preset.clone();
        let mode_encoder = match (stage, explicit) {
            (Stage::Gan, Some(vae)) => ModeEncoder::Explicit(vae),
            (Stage::GanL2z, _) => {
                ModeEncoder::Latent(LatentModeEncoder { preset: preset.clone(), params: self.load(stage, Some("ez"))? })
            }
            (Stage::GanPc2z, _) => {
                ModeEncoder::Cloud(Vae::from_params(preset.clone(), self.load(stage, Some("ez"))?, false, false))
            }
            _ => return Err(CliError::Runtime(Error::InvalidState(format!("{stage} is not a GAN stage")))),
        };
        Ok(Gan {
            generator: Generator { preset: preset.clone(), params: self.load(stage, Some("g"))? },
            discriminator: Discriminator { preset, params: self.load(stage, Some("f"))? },
            mode_encoder,
        })
    }
}

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(Error::Io { path: path.to_path_buf(), source: e })
}
