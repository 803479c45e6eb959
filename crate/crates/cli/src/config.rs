use std::path::{Path, PathBuf};

use covkernel::align::{SpsaConfig, TargetKind};
use covkernel::data::{CovariantSpec, DatasetManifest, SubspaceSpec};
use covkernel::featuremap::{Axes, CouplingMap};
use covkernel::kernel::{CalibrationConfig, KernelConfig, Shots};
use covkernel::seed;
use covkernel::sim::NoiseModel;
use covkernel::svc::{ClassicalKernel, DEFAULT_C};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const SEED_ENV: &str = "COVK_SEED";
pub const OUTPUT_ENV: &str = "COVK_OUTPUT_DIR";

/// Synthetic generators take their seed from the run's master seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    UnionOfSubspaces {
        ambient_dim: usize,
        dims: Vec<usize>,
        samples_per_class: usize,
        #[serde(default = "yes")]
        rotate: bool,
    },
    CovariantBell {
        samples_per_class: usize,
    },
    Csv {
        path: PathBuf,
    },
}

fn yes() -> bool {
    true
}

impl DatasetSource {
    pub fn resolve(&self, seed: u64) -> DatasetManifest {
        match self {
            DatasetSource::UnionOfSubspaces {
                ambient_dim,
                dims,
                samples_per_class,
                rotate,
            } => DatasetManifest::UnionOfSubspaces(SubspaceSpec {
                ambient_dim: *ambient_dim,
                dims: dims.clone(),
                samples_per_class: *samples_per_class,
                rotate: *rotate,
                seed,
            }),
            DatasetSource::CovariantBell { samples_per_class } => {
                DatasetManifest::Covariant(CovariantSpec::bell(*samples_per_class, seed))
            }
            DatasetSource::Csv { path } => DatasetManifest::Csv {
                path: path.display().to_string(),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CouplingSource {
    Line,
    Ring,
    HeavyHex { rows: usize, row_len: usize },
    EdgeList { path: PathBuf },
}

impl CouplingSource {
    /// Coupling map with at least `n` physical qubits.
    pub fn build(&self, n: usize) -> CliResult<CouplingMap> {
        Ok(match self {
            CouplingSource::Line => CouplingMap::line(n),
            CouplingSource::Ring => CouplingMap::ring(n),
            CouplingSource::HeavyHex { rows, row_len } => CouplingMap::heavy_hex(*rows, *row_len),
            CouplingSource::EdgeList { path } => CouplingMap::load_edge_list(path)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureMapConfig {
    pub coupling: CouplingSource,
    pub axes: Axes,
    pub angle_scale: f64,
}

impl Default for FeatureMapConfig {
    fn default() -> Self {
        Self {
            coupling: CouplingSource::Line,
            axes: Axes::default(),
            angle_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassicalGrid {
    pub kernels: Vec<ClassicalKernel>,
    pub cs: Vec<f64>,
    pub folds: usize,
}

impl Default for ClassicalGrid {
    fn default() -> Self {
        let mut kernels: Vec<ClassicalKernel> = [0.1, 0.5, 1.0, 2.0, 5.0]
            .iter()
            .map(|&gamma| ClassicalKernel::Rbf { gamma })
            .collect();
        for sigma1 in [0.25, 0.5, 1.0] {
            for sigma2 in [1.0, 2.0, 4.0] {
                kernels.push(ClassicalKernel::GeneralizedRbf {
                    gamma1: 1.0,
                    sigma1,
                    gamma2: 0.5,
                    sigma2,
                });
            }
        }
        Self {
            kernels,
            cs: vec![0.1, 1.0, 10.0, 100.0],
            folds: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvcConfig {
    pub c: f64,
    /// Classical baseline grid; `None` skips the baseline unless
    /// `--classical-only` is given.
    pub classical: Option<ClassicalGrid>,
}

impl Default for SvcConfig {
    fn default() -> Self {
        Self {
            c: DEFAULT_C,
            classical: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateConfig {
    pub ns: Vec<usize>,
    pub thresholds: Vec<f64>,
    pub samples: usize,
    pub shots: Shots,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        let base = CalibrationConfig::default();
        Self {
            ns: base.ns,
            thresholds: base.thresholds,
            samples: base.samples,
            shots: base.shots,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub sphere_dims: Vec<usize>,
    pub sphere_trials: usize,
    pub subspace_dims: Vec<usize>,
    pub subspace_trials: usize,
    /// Angle scale of the `⊗RX(scale·x)` closed-form kernel.
    pub closed_form_scale: f64,
    pub closed_form_pairs: usize,
    pub inequality_trials: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            sphere_dims: (2..=10).collect(),
            sphere_trials: 1_000_000,
            subspace_dims: (1..=6).collect(),
            subspace_trials: 100_000,
            closed_form_scale: 2.0,
            closed_form_pairs: 100,
            inequality_trials: 200_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub master_seed: u64,
    pub dataset: DatasetSource,
    pub train_fraction: f64,
    pub feature_map: FeatureMapConfig,
    pub kernel: KernelConfig,
    pub noise: NoiseModel,
    pub spsa: SpsaConfig,
    pub target: TargetKind,
    pub svc: SvcConfig,
    pub calibration: CalibrateConfig,
    pub verify: VerifyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("covkernel-run"),
            master_seed: 0,
            dataset: DatasetSource::CovariantBell { samples_per_class: 16 },
            train_fraction: 0.5,
            feature_map: FeatureMapConfig::default(),
            kernel: KernelConfig::exact(0),
            noise: NoiseModel::noiseless(),
            spsa: SpsaConfig::calibrated(100, 0),
            target: TargetKind::ZeroOne,
            svc: SvcConfig::default(),
            calibration: CalibrateConfig::default(),
            verify: VerifyConfig::default(),
        }
    }
}

/// Seed streams derived from the master seed.
#[derive(Clone, Copy, Debug)]
pub enum Stream {
    Dataset = 1,
    Split = 2,
    Kernel = 3,
    Spsa = 4,
    Fiducial = 5,
    Calibration = 6,
    Folds = 7,
    Verify = 8,
}

impl RunConfig {
    /// Reads `path` (or the defaults) and applies the environment overrides.
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let mut config: RunConfig = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| CliError::Io {
                    path: p.to_path_buf(),
                    source,
                })?;
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Ok(v) = std::env::var(SEED_ENV) {
            config.master_seed = v
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        if let Ok(v) = std::env::var(OUTPUT_ENV) {
            if v.is_empty() {
                return Err(CliError::Config(format!("{OUTPUT_ENV} is empty")));
            }
            config.output_dir = PathBuf::from(v);
        }
        config.resolve_seeds();
        config.validate()?;
        Ok(config)
    }

    pub fn seed(&self, stream: Stream) -> u64 {
        seed::derive(self.master_seed, &[stream as u64])
    }

    /// Overwrites the per-stage seeds with values derived from the master
    /// seed, so the resolved configuration records every seed in use.
    fn resolve_seeds(&mut self) {
        self.kernel.master_seed = self.seed(Stream::Kernel);
        self.spsa.seed = self.seed(Stream::Spsa);
    }

    fn validate(&self) -> CliResult<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(CliError::Config(format!(
                "train_fraction {} outside (0, 1)",
                self.train_fraction
            )));
        }
        if !(self.svc.c > 0.0) {
            return Err(CliError::Config("svc.c must be positive".into()));
        }
        if !self.feature_map.angle_scale.is_finite() {
            return Err(CliError::Config("feature_map.angle_scale must be finite".into()));
        }
        self.noise.validate()?;
        self.spsa.validate()?;
        Ok(())
    }

    pub fn calibration_config(&self) -> CalibrationConfig {
        CalibrationConfig {
            ns: self.calibration.ns.clone(),
            noise: self.noise,
            shots: self.calibration.shots,
            thresholds: self.calibration.thresholds.clone(),
            samples: self.calibration.samples,
            angle_scale: self.feature_map.angle_scale,
            master_seed: self.seed(Stream::Calibration),
        }
    }
}
