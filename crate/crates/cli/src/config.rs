use std::path::{Path, PathBuf};

use lognet::analysis::SweptParam;
use lognet::chaos::MapParams;
use lognet::dataio::SplitPlan;
use lognet::network::{Architecture, TrainConfig};
use lognet::reservoir::{Activation, FillMethod, ProjectionMode, ReservoirConfig, SnakeStart};
use lognet::rpso::SwarmConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seed shared by every random component of a run.
    pub seed: u64,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub model: PathBuf,
    pub data: DataSection,
    pub reservoir: ReservoirSection,
    pub train: TrainSection,
    pub optimize: OptimizeSection,
    pub analyze: AnalyzeSection,
    pub report: ReportSection,
    pub grid: GridSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data_dir: PathBuf::from("data/mnist"),
            out_dir: PathBuf::from("runs/latest"),
            model: PathBuf::from("model.json"),
            data: DataSection::default(),
            reservoir: ReservoirSection::default(),
            train: TrainSection::default(),
            optimize: OptimizeSection::default(),
            analyze: AnalyzeSection::default(),
            report: ReportSection::default(),
            grid: GridSection::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Use only the first `train_limit` training images.
    pub train_limit: Option<usize>,
    /// Use only the first `test_limit` test images.
    pub test_limit: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParamsSection {
    pub a: f64,
    pub b: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
}

impl From<MapParams> for ParamsSection {
    fn from(p: MapParams) -> Self {
        Self {
            a: p.a,
            b: p.b,
            a1: p.a1,
            a2: p.a2,
            a3: p.a3,
            a4: p.a4,
        }
    }
}

impl Default for ParamsSection {
    fn default() -> Self {
        MapParams::reference(0.7).into()
    }
}

impl ParamsSection {
    pub fn map_params(&self) -> MapParams {
        MapParams::new(self.a, self.b, self.a1, self.a2, self.a3, self.a4)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReservoirSection {
    pub method: u8,
    pub architecture: String,
    pub activation: Activation,
    pub snake: SnakeStart,
    pub params: ParamsSection,
}

impl Default for ReservoirSection {
    fn default() -> Self {
        Self {
            method: 4,
            architecture: "784:25:10".into(),
            activation: Activation::default(),
            snake: SnakeStart::default(),
            params: ParamsSection::default(),
        }
    }
}

impl ReservoirSection {
    pub fn method(&self) -> Result<FillMethod, CliError> {
        FillMethod::from_id(self.method).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn architecture(&self) -> Result<Architecture, CliError> {
        self.architecture
            .parse()
            .map_err(|e: lognet::Error| CliError::Config(format!("reservoir.architecture: {e}")))
    }

    pub fn config_for(
        &self,
        method: FillMethod,
        params: MapParams,
        neurons: usize,
    ) -> ReservoirConfig {
        let mut cfg = ReservoirConfig::new(method, params, neurons);
        cfg.activation = self.activation;
        cfg.snake = self.snake;
        cfg
    }

    pub fn config(&self) -> Result<ReservoirConfig, CliError> {
        let cfg = self.config_for(
            self.method()?,
            self.params.map_params(),
            self.architecture()?.reservoir,
        );
        cfg.validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            max_epochs: t.max_epochs,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
        }
    }
}

impl TrainSection {
    pub fn config(&self, seed: u64) -> Result<TrainConfig, CliError> {
        let cfg = TrainConfig {
            max_epochs: self.max_epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            rng_seed: seed,
        };
        cfg.validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizeSection {
    pub particles: usize,
    pub iterations: usize,
    pub omega: f64,
    pub c1: f64,
    pub c2: f64,
    pub immigrant_fraction: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Share of the training base used for fitness training.
    pub optimization_fraction: f64,
    pub stratified: bool,
    /// Refuse to run unless the training base has exactly 60 000 images.
    pub require_full_base: bool,
    /// Epoch cap while scoring particles.
    pub max_epochs: usize,
}

impl Default for OptimizeSection {
    fn default() -> Self {
        let s = SwarmConfig::default();
        let p = SplitPlan::default();
        Self {
            particles: s.particle_count,
            iterations: s.iterations,
            omega: s.omega,
            c1: s.c1,
            c2: s.c2,
            immigrant_fraction: s.immigrant_fraction,
            lower: s.lower,
            upper: s.upper,
            optimization_fraction: p.optimization_fraction,
            stratified: p.stratified,
            require_full_base: true,
            max_epochs: 20,
        }
    }
}

impl OptimizeSection {
    pub fn swarm(&self, seed: u64) -> Result<SwarmConfig, CliError> {
        let cfg = SwarmConfig {
            particle_count: self.particles,
            iterations: self.iterations,
            omega: self.omega,
            c1: self.c1,
            c2: self.c2,
            immigrant_fraction: self.immigrant_fraction,
            lower: self.lower.clone(),
            upper: self.upper.clone(),
            rng_seed: seed,
        };
        cfg.validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn split(&self, seed: u64) -> SplitPlan {
        SplitPlan {
            optimization_fraction: self.optimization_fraction,
            stratified: self.stratified,
            rng_seed: seed,
            expected_base: self.require_full_base.then_some(lognet::dataio::TRAIN_SIZE),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyzeSection {
    pub parameter: SweptParam,
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
    /// Bifurcation iterates recorded per swept value.
    pub samples: usize,
    /// Length of the weight-filling series used for entropy.
    pub series_len: usize,
    pub poincare_count: usize,
    pub apen_m: usize,
    pub apen_r: f64,
}

impl Default for AnalyzeSection {
    fn default() -> Self {
        Self {
            parameter: SweptParam::A1,
            lo: 0.1,
            hi: 1.5,
            step: 0.1,
            samples: 200,
            series_len: 2000,
            poincare_count: 1000,
            apen_m: 2,
            apen_r: 0.025,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    pub mode: ProjectionMode,
    pub bytes_per_value: usize,
}

impl Default for ReportSection {
    fn default() -> Self {
        Self {
            mode: ProjectionMode::Streaming,
            bytes_per_value: lognet::memory_report::DEFAULT_BYTES_PER_VALUE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub methods: Vec<u8>,
    pub architectures: Vec<String>,
    /// Search map parameters per cell before training; otherwise use `reservoir.params`.
    pub optimize: bool,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            methods: (1..=6).collect(),
            architectures: ["784:25:10", "784:100:10", "784:200:10", "784:100:60:10"]
                .map(String::from)
                .to_vec(),
            optimize: false,
        }
    }
}

impl RunConfig {
    /// Merges `paths` in order (later files win per key), applies `key=value`
    /// overrides and validates the result.
    pub fn load(paths: &[PathBuf], overrides: &[String]) -> Result<Self, CliError> {
        let mut tree = toml::Table::new();
        for p in paths {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            let layer = text
                .parse::<toml::Table>()
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            merge(&mut tree, layer);
        }
        for item in overrides {
            apply_override(&mut tree, item)?;
        }
        let cfg: RunConfig = toml::Value::Table(tree)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.reservoir.config()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is always representable as TOML")
    }
}

fn merge(base: &mut toml::Table, layer: toml::Table) {
    for (key, value) in layer {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(dst)), toml::Value::Table(src)) => merge(dst, src),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

/// Sets a dotted `key=value` in `tree`. The value is read as a TOML value
/// when it parses as one and as a bare string otherwise.
pub fn apply_override(tree: &mut toml::Table, item: &str) -> Result<(), CliError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {item:?} is not key=value")))?;
    let value = parse_value(raw.trim());
    let mut parts: Vec<&str> = key.trim().split('.').collect();
    let last = parts
        .pop()
        .filter(|k| !k.is_empty())
        .ok_or_else(|| CliError::Config(format!("empty key in {item:?}")))?;
    let mut node = tree;
    for part in parts {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("{key}: {part} is not a table")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// Resolved configuration as TOML.
    pub config: String,
    pub hash: String,
}

impl Manifest {
    /// The hash covers everything except `out_dir`, which does not affect results.
    pub fn new(command: &str, config: &RunConfig) -> Self {
        let text = config.to_toml();
        let hashed = RunConfig {
            out_dir: PathBuf::new(),
            ..config.clone()
        };
        let mut hasher = Sha256::new();
        hasher.update(command.as_bytes());
        hasher.update(b"\n");
        hasher.update(hashed.to_toml().as_bytes());
        Self {
            tool: "lognet".into(),
            version: VERSION.into(),
            command: command.into(),
            seed: config.seed,
            config: text,
            hash: hex::encode(hasher.finalize()),
        }
    }

    /// Comment line placed at the top of every emitted CSV.
    pub fn comment(&self) -> String {
        format!("lognet {} manifest={}", self.version, self.hash)
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(dir.join("manifest.json"), text + "\n").map_err(|e| CliError::io(dir, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let cfg = RunConfig::load(
            &[],
            &[
                "reservoir.method=6".into(),
                "reservoir.params.a1=0.55".into(),
                "optimize.particles=10".into(),
                "out_dir=/tmp/x".into(),
                "reservoir.architecture=784:100:60:10".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.reservoir.method, 6);
        assert_eq!(cfg.reservoir.params.a1, 0.55);
        assert_eq!(cfg.optimize.particles, 10);
        assert_eq!(cfg.out_dir, PathBuf::from("/tmp/x"));
        assert_eq!(
            cfg.reservoir.architecture().unwrap(),
            Architecture::with_hidden(100, 60)
        );
    }

    #[test]
    fn bad_values_are_config_errors() {
        for bad in [
            "reservoir.method=9",
            "nonsense=1",
            "train.batch_size=\"x\"",
            "reservoir.architecture=1:2",
        ] {
            let err = RunConfig::load(&[], &[bad.into()]).unwrap_err();
            assert!(matches!(err, CliError::Config(_)), "{bad}: {err:?}");
        }
        assert!(apply_override(&mut toml::Table::new(), "novalue").is_err());
    }

    #[test]
    fn later_files_override_earlier_ones() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("base.toml");
        let best = dir.path().join("best.toml");
        std::fs::write(&base, "seed = 3\n[reservoir]\nmethod = 6\n[reservoir.params]\na = 0.2\nb = 0.3\na1 = 0.4\na2 = 0.5\na3 = 0.6\na4 = 0.7\n").unwrap();
        std::fs::write(
            &best,
            "[reservoir.params]\na1 = 0.9\na = 0.2\nb = 0.3\na2 = 0.5\na3 = 0.6\na4 = 0.7\n",
        )
        .unwrap();
        let cfg = RunConfig::load(&[base, best], &["reservoir.params.a4=0.1".into()]).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.reservoir.method, 6);
        assert_eq!(cfg.reservoir.params.a1, 0.9);
        assert_eq!(cfg.reservoir.params.a4, 0.1);
    }

    #[test]
    fn manifest_hash_tracks_config() {
        let a = Manifest::new("train", &RunConfig::default());
        let b = Manifest::new("train", &RunConfig::default());
        assert_eq!(a.hash, b.hash);
        let cfg = RunConfig {
            seed: 1,
            ..RunConfig::default()
        };
        assert_ne!(Manifest::new("train", &cfg).hash, a.hash);
        assert_ne!(
            Manifest::new("optimize", &RunConfig::default()).hash,
            a.hash
        );
        assert!(a.comment().starts_with("lognet "));
        let moved = RunConfig {
            out_dir: "elsewhere".into(),
            ..RunConfig::default()
        };
        assert_eq!(Manifest::new("train", &moved).hash, a.hash);
    }
}
