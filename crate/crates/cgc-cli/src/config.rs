//! Pipeline configuration: one TOML document, versioned, with every knob
//! optional and defaulting to the desk preset.
//!
//! Each section mirrors one library parameter struct but wraps every field
//! in `Option`, so a config file only has to name the values it changes.
//! Relative paths are resolved against the config file's own directory,
//! which keeps a checked-in preset usable from any working directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cgc::alloc::{EvoConfig, Transfer};
use cgc::density::{ConsistencyMode, DensityParams};
use cgc::redsim::{DestructionWeighting, Theorem1Params, Theorem2Params};
use cgc::sae::SaeConfig;
use cgc::tinylm::{CalibrationParams, EvalParams, ModelConfig, TrainParams};

use crate::corpus::CorpusParams;
use crate::CliError;

/// The config document format this binary understands.
pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub config_version: u32,
    /// Label recorded in manifests: "desk" for the shipped preset values,
    /// "custom" otherwise. Purely descriptive.
    #[serde(default = "default_preset")]
    pub preset: String,
    #[serde(default)]
    pub paths: PathsSection,
    #[serde(default)]
    pub corpus: CorpusSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub calibration: CalibrationSection,
    #[serde(default)]
    pub sae: SaeSection,
    #[serde(default)]
    pub density: DensitySection,
    #[serde(default)]
    pub alloc: AllocSection,
    #[serde(default)]
    pub evo: EvoSection,
    #[serde(default)]
    pub theorem1: Theorem1Section,
    #[serde(default)]
    pub theorem2: Theorem2Section,
}

fn default_preset() -> String {
    "desk".into()
}

impl PipelineConfig {
    /// Parse a TOML config file and return it with its base directory (the
    /// directory relative paths resolve against).
    pub fn load(path: &Path) -> Result<(PipelineConfig, PathBuf), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: PipelineConfig = toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
        if cfg.config_version != CONFIG_VERSION {
            return Err(CliError::Usage(format!(
                "unsupported config_version {} (this binary understands {})",
                cfg.config_version, CONFIG_VERSION
            )));
        }
        if cfg.preset != "desk" && cfg.preset != "custom" {
            return Err(CliError::Usage(format!(
                "preset must be \"desk\" or \"custom\", got {:?}",
                cfg.preset
            )));
        }
        let base = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok((cfg, base))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    /// Corpus file; written by gen-corpus, read by everything else.
    pub corpus: PathBuf,
    /// Directory all other artifacts live in.
    pub workdir: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            corpus: PathBuf::from("work/corpus.txt"),
            workdir: PathBuf::from("work"),
        }
    }
}

impl PathsSection {
    pub fn corpus_path(&self, base: &Path) -> PathBuf {
        resolve(base, &self.corpus)
    }

    pub fn workdir_path(&self, base: &Path) -> PathBuf {
        resolve(base, &self.workdir)
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub seed: Option<u64>,
    pub bytes: Option<usize>,
    pub vocab_words: Option<usize>,
    pub zipf_exponent: Option<f64>,
}

impl CorpusSection {
    pub fn resolve(&self) -> CorpusParams {
        let base = CorpusParams::default();
        CorpusParams {
            seed: self.seed.unwrap_or(base.seed),
            bytes: self.bytes.unwrap_or(base.bytes),
            vocab_words: self.vocab_words.unwrap_or(base.vocab_words),
            zipf_exponent: self.zipf_exponent.unwrap_or(base.zipf_exponent),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub n_layers: Option<usize>,
    pub n_heads: Option<usize>,
    pub d_head: Option<usize>,
    pub d_ffn: Option<usize>,
    pub context_len: Option<usize>,
    pub seed: Option<u64>,
}

impl ModelSection {
    pub fn resolve(&self) -> ModelConfig {
        let base = ModelConfig::default();
        let n_heads = self.n_heads.unwrap_or(base.n_heads);
        let d_head = self.d_head.unwrap_or(base.d_head);
        ModelConfig {
            n_layers: self.n_layers.unwrap_or(base.n_layers),
            n_heads,
            // d_model is defined, not configured: heads tile it exactly.
            d_model: n_heads * d_head,
            d_head,
            d_ffn: self.d_ffn.unwrap_or(base.d_ffn),
            vocab_size: base.vocab_size,
            context_len: self.context_len.unwrap_or(base.context_len),
            seed: self.seed.unwrap_or(base.seed),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub steps: Option<usize>,
    pub batch_seqs: Option<usize>,
    pub lr_max: Option<f64>,
    pub lr_min_frac: Option<f64>,
    pub warmup_steps: Option<usize>,
    pub weight_decay: Option<f64>,
    pub grad_clip: Option<f64>,
    /// Batch-order seed (weight init has its own seed under [model]).
    pub seed: Option<u64>,
}

impl TrainSection {
    pub fn resolve(&self) -> (TrainParams, u64) {
        let base = TrainParams::default();
        let params = TrainParams {
            steps: self.steps.unwrap_or(base.steps),
            batch_seqs: self.batch_seqs.unwrap_or(base.batch_seqs),
            lr_max: self.lr_max.unwrap_or(base.lr_max),
            lr_min_frac: self.lr_min_frac.unwrap_or(base.lr_min_frac),
            warmup_steps: self.warmup_steps.unwrap_or(base.warmup_steps),
            weight_decay: self.weight_decay.unwrap_or(base.weight_decay),
            grad_clip: self.grad_clip.unwrap_or(base.grad_clip),
        };
        (params, self.seed.unwrap_or(42))
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub n_chunks: Option<usize>,
    pub chunk_len: Option<usize>,
}

impl EvalSection {
    pub fn resolve(&self) -> EvalParams {
        let base = EvalParams::default();
        EvalParams {
            n_chunks: self.n_chunks.unwrap_or(base.n_chunks),
            chunk_len: self.chunk_len.unwrap_or(base.chunk_len),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationSection {
    pub n_seq: Option<usize>,
    pub seq_len: Option<usize>,
    pub n_categories: Option<usize>,
    pub seed: Option<u64>,
}

impl CalibrationSection {
    pub fn resolve(&self) -> CalibrationParams {
        let base = CalibrationParams::default();
        CalibrationParams {
            n_seq: self.n_seq.unwrap_or(base.n_seq),
            seq_len: self.seq_len.unwrap_or(base.seq_len),
            n_categories: self.n_categories.unwrap_or(base.n_categories),
            seed: self.seed.unwrap_or(base.seed),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaeSection {
    pub n_features: Option<usize>,
    pub k: Option<usize>,
    pub l1_coeff: Option<f64>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    /// Base seed; each head trains from a value derived from it.
    pub seed: Option<u64>,
}

impl SaeSection {
    /// `d_input` always comes from the model's head width.
    pub fn resolve(&self, d_input: usize) -> (SaeConfig, u64) {
        let base = SaeConfig::for_d_input(d_input);
        let config = SaeConfig {
            d_input,
            n_features: self.n_features.unwrap_or(base.n_features),
            k: self.k.unwrap_or(base.k),
            l1_coeff: self.l1_coeff.unwrap_or(base.l1_coeff),
            epochs: self.epochs.unwrap_or(base.epochs),
            lr: self.lr.unwrap_or(base.lr),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
        };
        (config, self.seed.unwrap_or(777))
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DensitySection {
    pub tau_min: Option<f64>,
    pub alpha: Option<[f64; 3]>,
    pub gamma: Option<f64>,
    pub n_pairs: Option<usize>,
    pub pair_seed: Option<u64>,
    pub mode: Option<ConsistencyMode>,
}

impl DensitySection {
    pub fn resolve(&self) -> DensityParams {
        let base = DensityParams::default();
        DensityParams {
            tau_min: self.tau_min.unwrap_or(base.tau_min),
            alpha: self.alpha.unwrap_or(base.alpha),
            gamma: self.gamma.unwrap_or(base.gamma),
            n_pairs: self.n_pairs.unwrap_or(base.n_pairs),
            pair_seed: self.pair_seed.unwrap_or(base.pair_seed),
            mode: self.mode.unwrap_or(base.mode),
        }
    }
}

/// Budget-allocation knobs shared by every allocate method.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AllocSection {
    pub rho: Option<f64>,
    pub rho_min: Option<f64>,
    pub rho_max: Option<f64>,
    /// Concavity of the density-to-ceiling transfer (1.0 = linear).
    pub transfer_gamma: Option<f64>,
    /// Retention levels are multiples of 1/grid_steps.
    pub grid_steps: Option<usize>,
}

/// Resolved allocation knobs.
#[derive(Clone, Debug, Serialize)]
pub struct AllocSettings {
    pub rho: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    pub transfer: Transfer,
    pub grid_steps: usize,
}

impl AllocSection {
    pub fn resolve(&self) -> AllocSettings {
        AllocSettings {
            rho: self.rho.unwrap_or(0.5),
            rho_min: self.rho_min.unwrap_or(0.2),
            rho_max: self.rho_max.unwrap_or(1.0),
            transfer: Transfer::Concave {
                gamma: self.transfer_gamma.unwrap_or(2.0),
            },
            grid_steps: self.grid_steps.unwrap_or(16),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvoSection {
    pub population: Option<usize>,
    pub generations: Option<usize>,
    pub mutations: Option<usize>,
    pub fitness_sample: Option<usize>,
    pub elite: Option<usize>,
    pub seed: Option<u64>,
}

impl EvoSection {
    pub fn resolve(&self) -> EvoConfig {
        let base = EvoConfig::default();
        EvoConfig {
            population: self.population.unwrap_or(base.population),
            generations: self.generations.unwrap_or(base.generations),
            mutations: self.mutations.unwrap_or(base.mutations),
            fitness_sample: self.fitness_sample.unwrap_or(base.fitness_sample),
            elite: self.elite.unwrap_or(base.elite),
            seed: self.seed.unwrap_or(base.seed),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Theorem1Section {
    pub d: Option<usize>,
    pub n_features: Option<usize>,
    pub zipf_exponents: Option<Vec<f64>>,
    pub s_grid: Option<Vec<f64>>,
    pub correlation_s: Option<f64>,
    pub eta: Option<f64>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub weighting: Option<DestructionWeighting>,
}

impl Theorem1Section {
    pub fn resolve(&self) -> Theorem1Params {
        let base = Theorem1Params::default();
        Theorem1Params {
            d: self.d.unwrap_or(base.d),
            n_features: self.n_features.unwrap_or(base.n_features),
            zipf_exponents: self.zipf_exponents.clone().unwrap_or(base.zipf_exponents),
            s_grid: self.s_grid.clone().unwrap_or(base.s_grid),
            correlation_s: self.correlation_s.unwrap_or(base.correlation_s),
            eta: self.eta.unwrap_or(base.eta),
            trials: self.trials.unwrap_or(base.trials),
            seed: self.seed.unwrap_or(base.seed),
            weighting: self.weighting.unwrap_or(base.weighting),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Theorem2Section {
    pub d: Option<usize>,
    pub n_features: Option<usize>,
    pub zipf_exponents: Option<Vec<f64>>,
    pub rho: Option<f64>,
    pub rho_min: Option<f64>,
    pub rho_max: Option<f64>,
    pub transfer_gamma: Option<f64>,
    pub grid_steps: Option<usize>,
    pub eta: Option<f64>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub weighting: Option<DestructionWeighting>,
}

impl Theorem2Section {
    pub fn resolve(&self) -> Theorem2Params {
        let base = Theorem2Params::default();
        Theorem2Params {
            d: self.d.unwrap_or(base.d),
            n_features: self.n_features.unwrap_or(base.n_features),
            zipf_exponents: self.zipf_exponents.clone().unwrap_or(base.zipf_exponents),
            rho: self.rho.unwrap_or(base.rho),
            rho_min: self.rho_min.unwrap_or(base.rho_min),
            rho_max: self.rho_max.unwrap_or(base.rho_max),
            transfer: match self.transfer_gamma {
                Some(g) => Transfer::Concave { gamma: g },
                None => base.transfer,
            },
            grid_steps: self.grid_steps.unwrap_or(base.grid_steps),
            eta: self.eta.unwrap_or(base.eta),
            trials: self.trials.unwrap_or(base.trials),
            seed: self.seed.unwrap_or(base.seed),
            weighting: self.weighting.unwrap_or(base.weighting),
        }
    }
}
