//! TOML run configuration. Every section and key is optional; missing values
//! take the library defaults.

use std::path::Path;

use nrsfm_core::nrsfm::TrainConfig;
use nrsfm_core::student::StudentConfig;
use nrsfm_core::synth::SynthConfig;
use nrsfm_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub nrsfm: TrainConfig,
    pub student: StudentConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config {
            field: e
                .span()
                .and_then(|s| text.get(s))
                .map_or_else(|| "config".to_owned(), |s| s.trim().to_owned()),
            reason: e.message().to_owned(),
        })
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// `seed` replaces the seed of every stage.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(seed) = seed {
            self.synth.seed = seed;
            self.nrsfm.seed = seed;
            self.student.seed = seed;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.nrsfm.validate()?;
        self.student.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn sections_override_defaults() {
        let cfg = RunConfig::parse(
            "[synth]\nsamples = 12\n[synth.camera]\nkind = \"azimuth\"\nrange_deg = 45.0\nelevation_deg = 10.0\n[nrsfm]\nlevel_sizes = [16, 8]\n",
        )
        .unwrap();
        assert_eq!(cfg.synth.samples, 12);
        assert_eq!(cfg.nrsfm.level_sizes, vec![16, 8]);
        assert_eq!(cfg.student, StudentConfig::default());
    }

    #[test]
    fn errors_name_the_offending_field() {
        let err = RunConfig::parse("[synth]\nsampels = 3\n").unwrap_err().to_string();
        assert!(err.contains("sampels"), "{err}");
        let err = RunConfig::parse("[synth]\nsamples = \"many\"\n").unwrap_err().to_string();
        assert!(err.contains("many"), "{err}");
        let err = RunConfig::parse("[nrsfm]\nlambda = -1.0\n").unwrap().validate().unwrap_err().to_string();
        assert!(err.contains("lambda"), "{err}");
    }

    #[test]
    fn seed_override_reaches_every_stage() {
        let cfg = RunConfig::default().with_seed(Some(9));
        assert_eq!((cfg.synth.seed, cfg.nrsfm.seed, cfg.student.seed), (9, 9, 9));
    }

    #[test]
    fn shipped_configs_parse() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let default = RunConfig::load(Some(&dir.join("default.toml"))).unwrap();
        assert_eq!(default, RunConfig::default());
        let bench = RunConfig::load(Some(&dir.join("ambiguity.toml"))).unwrap();
        bench.validate().unwrap();
        let expected = nrsfm_core::pipeline::BenchmarkConfig::default();
        assert_eq!((bench.synth, bench.nrsfm, bench.student), (expected.synth, expected.nrsfm, expected.student));
    }
}
