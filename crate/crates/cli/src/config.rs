//! Declarative pipeline configuration, read from TOML and validated before any work starts.

use std::path::{Path, PathBuf};

use renaldet::dataset::BuildOptions;
use renaldet::detector::TrainConfig;
use renaldet::error::{Error, Result};
use renaldet::evaluation::EvalConfig;
use renaldet::phantom::CorpusSpec;
use renaldet::selftrain::SelfTrainPlan;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Processed dataset root (manifest, slices, labels).
    pub data_root: PathBuf,
    /// Root for everything a run writes.
    pub output_root: PathBuf,
    /// Raw `volumes/` and `masks/` tree consumed by `build-dataset`.
    pub raw_root: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            data_root: PathBuf::from("data"),
            output_root: PathBuf::from("out"),
            raw_root: None,
        }
    }
}

/// Synthetic corpus settings; slice selection and preprocessing come from `[build]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSection {
    pub n_patients: usize,
    pub unannotated_fraction: f64,
    pub linked_study_fraction: f64,
    pub volume_shape: [usize; 3],
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PhantomSection {
    fn default() -> Self {
        let d = CorpusSpec::default();
        PhantomSection {
            n_patients: d.n_patients,
            unannotated_fraction: d.unannotated_fraction,
            linked_study_fraction: d.linked_study_fraction,
            volume_shape: d.volume_shape,
            noise_sigma: d.noise_sigma,
            seed: d.seed,
        }
    }
}

impl PhantomSection {
    pub fn corpus_spec(&self, build: &BuildOptions) -> CorpusSpec {
        CorpusSpec {
            n_patients: self.n_patients,
            unannotated_fraction: self.unannotated_fraction,
            linked_study_fraction: self.linked_study_fraction,
            volume_shape: self.volume_shape,
            noise_sigma: self.noise_sigma,
            seed: self.seed,
            build: build.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    /// Preprocessing and slice selection, including the normalization parameters.
    pub build: BuildOptions,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub selftrain: SelfTrainPlan,
    /// Synthetic corpus used by the `phantom` subcommand.
    pub phantom: Option<PhantomSection>,
    pub log_level: Option<String>,
}

/// Which paths a subcommand needs to exist before it starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Needs {
    Nothing,
    RawRoot,
    DataRoot,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("config: {e}")))
    }

    /// Reads a config file; relative paths inside it resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.paths.data_root = base.join(&cfg.paths.data_root);
        cfg.paths.output_root = base.join(&cfg.paths.output_root);
        cfg.paths.raw_root = cfg.paths.raw_root.map(|r| base.join(r));
        Ok(cfg)
    }

    /// Sets every seed in the config.
    pub fn override_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.selftrain.seed = seed;
        if let Some(p) = &mut self.phantom {
            p.seed = seed;
        }
    }

    pub fn validate(&self, needs: Needs) -> Result<()> {
        self.build.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        self.selftrain.validate()?;
        if let Some(p) = &self.phantom {
            p.corpus_spec(&self.build).validate()?;
        }
        if let Some(level) = &self.log_level {
            level
                .parse::<log::LevelFilter>()
                .map_err(|_| Error::InvalidConfig(format!("log_level {level:?}")))?;
        }
        let must_exist = |p: &Path, what: &str| {
            if p.is_dir() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!(
                    "{what} {} does not exist",
                    p.display()
                )))
            }
        };
        match needs {
            Needs::Nothing => Ok(()),
            Needs::DataRoot => must_exist(&self.paths.data_root, "data_root"),
            Needs::RawRoot => match &self.paths.raw_root {
                Some(r) => must_exist(r, "raw_root"),
                None => Err(Error::InvalidConfig("paths.raw_root is required".into())),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_defaults() {
        let cfg = PipelineConfig::from_toml("").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        cfg.validate(Needs::Nothing).unwrap();
    }

    #[test]
    fn sections_parse() {
        let cfg = PipelineConfig::from_toml(
            r#"
            log_level = "debug"
            [paths]
            data_root = "d"
            [train]
            epochs = 3
            image_size = 64
            grid_size = 4
            channels = [4, 8]
            lr_schedule = { kind = "cosine", min_factor = 0.1 }
            [selftrain]
            n_benchmarks = 2
            selection_metric = "f1"
            [phantom]
            n_patients = 6
            "#,
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.selftrain.n_benchmarks, 2);
        assert_eq!(cfg.phantom.as_ref().unwrap().n_patients, 6);
        cfg.validate(Needs::Nothing).unwrap();
    }

    #[test]
    fn unknown_top_level_key_rejected() {
        assert!(PipelineConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn out_of_range_values_rejected() {
        let cfg = PipelineConfig::from_toml("[selftrain]\ntest_fraction = 1.0").unwrap();
        assert!(matches!(
            cfg.validate(Needs::Nothing),
            Err(Error::InvalidConfig(_))
        ));
        let cfg = PipelineConfig::from_toml("log_level = \"loud\"").unwrap();
        assert!(cfg.validate(Needs::Nothing).is_err());
    }

    #[test]
    fn missing_data_root_rejected() {
        let mut cfg = PipelineConfig::default();
        cfg.paths.data_root = PathBuf::from("/definitely/not/here");
        assert!(cfg.validate(Needs::DataRoot).is_err());
    }

    #[test]
    fn seed_override_reaches_every_stage() {
        let mut cfg = PipelineConfig {
            phantom: Some(PhantomSection::default()),
            ..Default::default()
        };
        cfg.override_seed(42);
        assert_eq!(
            (
                cfg.train.seed,
                cfg.selftrain.seed,
                cfg.phantom.unwrap().seed
            ),
            (42, 42, 42)
        );
    }
}
