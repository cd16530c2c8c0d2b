//! Experiment description read from TOML, and the builders that turn its
//! sections into channels, ensembles and measurements.

use std::path::{Path, PathBuf};

use mlme_qpt::channel::{
    builtin_channel, choi_from_kraus, imperfect_cnot, noisy_cnot, random_channel, ChoiOperator,
};
use mlme_qpt::random::derive_seed;
use mlme_qpt::setup::{
    product_sic_pom, qubit_tetrahedron, random_pom, sic_inputs, sic_inputs_builtin,
    standard_product_inputs, Copies,
};
use mlme_qpt::solver::MlmeConfig;
use mlme_qpt::strategy::{random_order, Scheme, StrategyConfig};
use mlme_qpt::{Choi, Ensemble, Measurement};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Seed-derivation tag for the shared first input.
const FIRST_INPUT_TAG: u64 = 0x6669_7273;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelSpec {
    /// `cnot`, `toffoli`, `identity` or `identity:D`.
    Builtin { name: String },
    ImperfectCnot { epsilon: f64 },
    NoisyCnot {
        epsilon: f64,
        n_noise: usize,
        seed: u64,
    },
    /// Haar-random channel; with `per_run` the seed is re-derived for each run.
    Random {
        d_in: usize,
        d_out: usize,
        rank: usize,
        seed: u64,
        #[serde(default)]
        per_run: bool,
    },
    /// Choi operator stored as JSON.
    File { path: PathBuf },
}

impl ChannelSpec {
    pub fn build(&self, base: &Path, run: u64) -> Result<Choi> {
        Ok(match self {
            ChannelSpec::Builtin { name } => builtin_channel(name)?,
            ChannelSpec::ImperfectCnot { epsilon } => choi_from_kraus(&imperfect_cnot(*epsilon)?),
            ChannelSpec::NoisyCnot {
                epsilon,
                n_noise,
                seed,
            } => choi_from_kraus(&noisy_cnot(*epsilon, *n_noise, *seed)?),
            ChannelSpec::Random {
                d_in,
                d_out,
                rank,
                seed,
                per_run,
            } => {
                let seed = if *per_run { derive_seed(*seed, &[run]) } else { *seed };
                random_channel(*d_in, *d_out, *rank, seed)?
            }
            ChannelSpec::File { path } => {
                let text = std::fs::read_to_string(resolve(base, path))?;
                serde_json::from_str::<ChoiOperator<f64>>(&text)?
            }
        })
    }

    pub fn varies_per_run(&self) -> bool {
        matches!(self, ChannelSpec::Random { per_run: true, .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnsembleSpec {
    /// Tensor products of `|0⟩, |1⟩, |+⟩, |+i⟩`.
    Product {
        qubits: usize,
        #[serde(default)]
        count: Option<usize>,
    },
    /// Weyl–Heisenberg SIC states, from a bundled or user fiducial.
    Sic {
        dim: usize,
        #[serde(default)]
        fiducial: Option<PathBuf>,
        #[serde(default)]
        count: Option<usize>,
    },
    Tetrahedron,
}

impl EnsembleSpec {
    pub fn build(&self, base: &Path) -> Result<Ensemble> {
        let (ens, count) = match self {
            EnsembleSpec::Product { qubits, count } => (standard_product_inputs(*qubits)?, *count),
            EnsembleSpec::Sic {
                dim,
                fiducial,
                count,
            } => {
                let e = match fiducial {
                    Some(p) => sic_inputs(*dim, &resolve(base, p))?,
                    None => sic_inputs_builtin(*dim)?,
                };
                (e, *count)
            }
            EnsembleSpec::Tetrahedron => (qubit_tetrahedron().0, None),
        };
        Ok(match count {
            Some(n) if n > ens.len() => {
                return Err(HarnessError::Config(format!(
                    "ensemble has {} states, {n} requested",
                    ens.len()
                )))
            }
            Some(n) => ens.select(&(0..n).collect::<Vec<_>>()),
            None => ens,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PomSpec {
    ProductSic {
        qubits: usize,
        #[serde(default)]
        efficiency: Option<f64>,
    },
    Random {
        dim: usize,
        outcomes: usize,
        seed: u64,
        #[serde(default)]
        efficiency: Option<f64>,
    },
    Tetrahedron {
        #[serde(default)]
        efficiency: Option<f64>,
    },
}

impl PomSpec {
    pub fn build(&self) -> Result<Measurement> {
        let (pom, eta) = match self {
            PomSpec::ProductSic { qubits, efficiency } => (product_sic_pom(*qubits)?, *efficiency),
            PomSpec::Random {
                dim,
                outcomes,
                seed,
                efficiency,
            } => (random_pom(*dim, *outcomes, *seed)?, *efficiency),
            PomSpec::Tetrahedron { efficiency } => (qubit_tetrahedron().1, *efficiency),
        };
        Ok(match eta {
            Some(e) => pom.with_uniform_efficiency(e)?,
            None => pom,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    /// Copies per input state.
    #[serde(default = "default_copies")]
    pub copies: u64,
    /// Exact probabilities instead of sampled counts.
    #[serde(default)]
    pub noiseless: bool,
}

fn default_copies() -> u64 {
    10_000
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            copies: default_copies(),
            noiseless: false,
        }
    }
}

impl DataSpec {
    pub fn copies(&self) -> Copies {
        if self.noiseless {
            Copies::Noiseless
        } else {
            Copies::Finite(self.copies)
        }
    }
}

/// Order of the non-adaptive scheme after the run's first input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OrderSpec {
    /// A fresh permutation per run.
    Random,
    /// Ensemble order.
    #[default]
    Natural,
    /// Used as given; its head is the first input of every scheme.
    Fixed { indices: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub seed: u64,
    #[serde(default = "default_runs")]
    pub runs: usize,
    pub schemes: Vec<Scheme>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub channel: ChannelSpec,
    pub prior: ChannelSpec,
    pub inputs: EnsembleSpec,
    pub pom: PomSpec,
    #[serde(default)]
    pub data: DataSpec,
    #[serde(default)]
    pub order: OrderSpec,
    #[serde(default)]
    pub solver: MlmeConfig,
    #[serde(default)]
    pub strategy: StrategyConfig,
    /// Directory that relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_runs() -> usize {
    1
}

fn default_out() -> PathBuf {
    PathBuf::from("results")
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Command-line overrides applied after parsing.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub runs: Option<usize>,
    pub noiseless: bool,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(r) = o.runs {
            self.runs = r;
        }
        if o.noiseless {
            self.data.noiseless = true;
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        resolve(&self.base_dir, &self.out)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }

    /// Builds every fixed object and checks that the pieces fit together.
    pub fn resolve(&self) -> Result<Resolved> {
        if self.runs == 0 {
            return Err(HarnessError::Config("runs must be >= 1".into()));
        }
        if self.schemes.is_empty() {
            return Err(HarnessError::Config("no schemes listed".into()));
        }
        self.solver.validate()?;
        self.strategy.validate()?;
        let base = &self.base_dir;
        let channel = self.channel.build(base, 0)?;
        let prior = self.prior.build(base, 0)?;
        let inputs = self.inputs.build(base)?;
        let pom = self.pom.build()?;
        if prior.d_in() != channel.d_in() || prior.d_out() != channel.d_out() {
            return Err(HarnessError::Config("prior and channel differ in dimensions".into()));
        }
        if inputs.dim() != channel.d_in() {
            return Err(HarnessError::Config(format!(
                "inputs act on dimension {}, channel input is {}",
                inputs.dim(),
                channel.d_in()
            )));
        }
        if pom.dim() != channel.d_out() {
            return Err(HarnessError::Config(format!(
                "POM acts on dimension {}, channel output is {}",
                pom.dim(),
                channel.d_out()
            )));
        }
        if let Some(i) = self.strategy.first_input {
            if i >= inputs.len() {
                return Err(HarnessError::Config(format!("first_input {i} out of range")));
            }
        }
        if let OrderSpec::Fixed { indices } = &self.order {
            let mut sorted = indices.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.is_empty() || sorted.len() != indices.len() || sorted.last().is_some_and(|&m| m >= inputs.len()) {
                return Err(HarnessError::Config("order must list distinct ensemble indices".into()));
            }
            if self.strategy.first_input.is_some_and(|i| i != indices[0]) {
                return Err(HarnessError::Config("first_input must head a fixed order".into()));
            }
        }
        Ok(Resolved {
            channel,
            prior,
            inputs,
            pom,
        })
    }

    /// First input of a run, shared by every scheme: the configured one, the
    /// head of a fixed order, or a uniform draw from the run seed.
    pub fn first_input_for(&self, n: usize, run_seed: u64) -> usize {
        if let Some(first) = self.strategy.first_input {
            return first;
        }
        match &self.order {
            OrderSpec::Fixed { indices } => indices[0],
            _ => random_order(n, derive_seed(run_seed, &[FIRST_INPUT_TAG]))[0],
        }
    }

    /// Strategy settings of a run, with the first input resolved.
    pub fn strategy_for(&self, n: usize, run_seed: u64) -> StrategyConfig {
        StrategyConfig {
            first_input: Some(self.first_input_for(n, run_seed)),
            ..self.strategy
        }
    }

    /// Input order of the non-adaptive scheme for a run: the run's first
    /// input, then the rest in random or natural order.
    pub fn order_for(&self, n: usize, run_seed: u64) -> Vec<usize> {
        let mut order = match &self.order {
            OrderSpec::Random => random_order(n, run_seed),
            OrderSpec::Natural => (0..n).collect(),
            OrderSpec::Fixed { indices } => return indices.clone(),
        };
        let first = self.first_input_for(n, run_seed);
        if let Some(pos) = order.iter().position(|&i| i == first) {
            order[..=pos].rotate_right(1);
        }
        order
    }
}

/// Objects built from a configuration.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub channel: Choi,
    pub prior: Choi,
    pub inputs: Ensemble,
    pub pom: Measurement,
}
