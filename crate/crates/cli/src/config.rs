//! Run configuration: one JSON file, with command-line flags taking precedence.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use eigencl::data::SynthConfig;
use eigencl::encoder::EncoderConfig;
use eigencl::pipeline::{ClassifyConfig, ClusterConfig, PipelineConfig, StagingMode, StatsConfig};
use eigencl::spectral::GammaPolicy;
use eigencl::trainer::{GridSpec, TrainConfig};
use serde::{Deserialize, Serialize};

/// Where the shifted-domain corpus for `transfer` comes from. With neither
/// field set, the main synthetic corpus is shifted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferSource {
    pub dataset: Option<PathBuf>,
    pub synth: Option<SynthConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Existing dataset CSV. Mutually exclusive with `synth`.
    pub dataset: Option<PathBuf>,
    pub synth: Option<SynthConfig>,
    pub out: PathBuf,
    pub seed: u64,
    pub gamma: GammaPolicy,
    pub spectrum_components: usize,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub clustering: ClusterConfig,
    pub staging: StagingMode,
    pub crossing_threshold: f64,
    pub classify: ClassifyConfig,
    pub stats: StatsConfig,
    pub bootstrap_resamples: usize,
    pub transfer: TransferSource,
    pub grid: GridSpec,
    /// Epochs per grid cell; the search runs at reduced length.
    pub grid_epochs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        RunConfig {
            dataset: None,
            synth: None,
            out: PathBuf::from("out"),
            seed: p.seed,
            gamma: p.gamma,
            spectrum_components: p.spectrum_components,
            encoder: p.encoder,
            train: p.train,
            clustering: p.clustering,
            staging: p.staging,
            crossing_threshold: p.crossing_threshold,
            classify: p.classify,
            stats: p.stats,
            bootstrap_resamples: p.bootstrap_resamples,
            transfer: TransferSource::default(),
            grid: GridSpec::default(),
            grid_epochs: 5,
        }
    }
}

/// Flag values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> anyhow::Result<RunConfig> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text)
                    .map_err(eigencl::Error::from)
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fills in the default corpus when no data source is named and pushes
    /// the flag values down. `--seed` reseeds the synthetic corpus too.
    pub fn apply(&mut self, o: &Overrides) {
        if self.dataset.is_none() && self.synth.is_none() {
            self.synth = Some(SynthConfig::default());
        }
        if let Some(seed) = o.seed {
            self.seed = seed;
            if let Some(s) = self.synth.as_mut() {
                s.seed = seed;
            }
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.dataset.is_some() && self.synth.is_some() {
            bail!(eigencl::Error::Config(
                "set either `dataset` or `synth`, not both".into()
            ));
        }
        if self.transfer.dataset.is_some() && self.transfer.synth.is_some() {
            bail!(eigencl::Error::Config(
                "set either `transfer.dataset` or `transfer.synth`, not both".into()
            ));
        }
        for s in self.synth.iter().chain(self.transfer.synth.iter()) {
            s.validate()?;
        }
        self.encoder.validate()?;
        self.train.validate()?;
        self.grid.validate()?;
        if self.grid_epochs == 0 {
            bail!(eigencl::Error::Config(
                "grid_epochs must be positive".into()
            ));
        }
        Ok(())
    }

    /// Pipeline settings sized for series of length `n_dates`.
    pub fn pipeline(&self, n_dates: usize) -> PipelineConfig {
        PipelineConfig {
            seed: self.seed,
            gamma: self.gamma,
            spectrum_components: self.spectrum_components,
            encoder: self.encoder.clone(),
            train: self.train.clone(),
            clustering: self.clustering.clone(),
            staging: self.staging,
            crossing_threshold: self.crossing_threshold,
            classify: self.classify.clone(),
            stats: self.stats.clone(),
            bootstrap_resamples: self.bootstrap_resamples,
        }
        .resolved(n_dates)
    }

    /// Synthetic settings for the transfer corpus, if it is generated.
    pub fn transfer_synth(&self) -> anyhow::Result<Option<SynthConfig>> {
        if self.transfer.dataset.is_some() {
            return Ok(None);
        }
        if let Some(s) = &self.transfer.synth {
            return Ok(Some(s.clone()));
        }
        match &self.synth {
            Some(s) => Ok(Some(s.shifted())),
            None => bail!(eigencl::Error::Config(
                "transfer needs `transfer.dataset` or `transfer.synth` when the main corpus is a file".into()
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_means_default_corpus() {
        let mut c: RunConfig = serde_json::from_str("{}").unwrap();
        c.apply(&Overrides::default());
        assert_eq!(c.synth, Some(SynthConfig::default()));
        c.validate().unwrap();
    }

    #[test]
    fn flags_win() {
        let mut c: RunConfig =
            serde_json::from_str(r#"{"seed": 3, "out": "a", "synth": {"seed": 3}}"#).unwrap();
        c.apply(&Overrides {
            seed: Some(11),
            out: Some("b".into()),
        });
        assert_eq!(c.seed, 11);
        assert_eq!(c.synth.unwrap().seed, 11);
        assert_eq!(c.out, PathBuf::from("b"));
    }

    #[test]
    fn both_sources_rejected() {
        let c: RunConfig = serde_json::from_str(r#"{"dataset": "x.csv", "synth": {}}"#).unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn bad_stage_mix_rejected() {
        let mut c: RunConfig =
            serde_json::from_str(r#"{"synth": {"stage_mix": [0.5, 0.2, 0.1, 0.1]}}"#).unwrap();
        c.apply(&Overrides::default());
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sead": 3}"#).is_err());
    }

    #[test]
    fn transfer_defaults_to_shifted_corpus() {
        let mut c = RunConfig::default();
        c.apply(&Overrides::default());
        assert_eq!(
            c.transfer_synth().unwrap(),
            Some(SynthConfig::default().shifted())
        );
        let file = RunConfig {
            dataset: Some("x.csv".into()),
            ..RunConfig::default()
        };
        assert!(file.transfer_synth().is_err());
    }
}
