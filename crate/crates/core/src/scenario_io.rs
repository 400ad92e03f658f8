//! Scenario, game and results files.
//!
//! All files are JSON. Input files reject unknown fields and report errors
//! with the JSON path of the offending value. Output files are written with
//! a fixed field order and every float printed with 17 significant digits,
//! so identical runs produce identical bytes.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::PlannerConfig;
use crate::error::{Error, Result};
use crate::geometry::{Footprint, Pose};
use crate::ibr::{GameState, InteractionTable, RewardWeights, UpdateOrder};
use crate::map::{LaneSpec, RoadMap};
use crate::metrics::MetricsReport;
use crate::simulator::{AgentSpec, Behavior, EgoSpec, Scenario, SimTrace};
use crate::trajectory::State;

pub const SCHEMA_VERSION: u32 = 1;

/// JSON Schema describing [`ScenarioFile`].
pub const SCENARIO_SCHEMA: &str = include_str!("../schema/scenario.schema.json");

/// Scenarios shipped with the library, by name.
pub const BUNDLED: [(&str, &str); 4] = [
    ("straight_empty", include_str!("../scenarios/straight_empty.json")),
    ("follow_idm", include_str!("../scenarios/follow_idm.json")),
    ("lane_change_dense", include_str!("../scenarios/lane_change_dense.json")),
    ("merge_gap", include_str!("../scenarios/merge_gap.json")),
];

pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

fn default_dt() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapFile {
    pub lanes: Vec<LaneSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoFile {
    pub pose: Pose,
    pub speed: f64,
    #[serde(default)]
    pub footprint: Footprint,
    pub route: Vec<String>,
    pub expert_progress: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentFile {
    pub id: String,
    pub pose: Pose,
    pub speed: f64,
    #[serde(default)]
    pub footprint: Footprint,
    pub behavior: Behavior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    pub name: String,
    /// Recorded for provenance; the pipeline is deterministic.
    #[serde(default)]
    pub seed: u64,
    pub duration: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub map: MapFile,
    pub ego: EgoFile,
    #[serde(default)]
    pub agents: Vec<AgentFile>,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        parse_versioned(text)
    }

    pub fn to_scenario(&self) -> Result<Scenario> {
        let map = RoadMap::new(self.map.lanes.clone()).map_err(|e| Error::validation("map.lanes", e.to_string()))?;
        let state = |p: &Pose, v: f64| State::new(Pose::new(p.x, p.y, p.heading), v);
        let scenario = Scenario {
            name: self.name.clone(),
            map,
            ego: EgoSpec {
                state: state(&self.ego.pose, self.ego.speed),
                footprint: self.ego.footprint,
                route: self.ego.route.clone(),
                expert_progress: self.ego.expert_progress,
            },
            agents: self
                .agents
                .iter()
                .map(|a| AgentSpec {
                    id: a.id.clone(),
                    state: state(&a.pose, a.speed),
                    footprint: a.footprint,
                    behavior: a.behavior.clone(),
                })
                .collect(),
            duration: self.duration,
            dt: self.dt,
            seed: self.seed,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses a JSON document whose `schema_version` must be supported,
/// reporting type errors with their JSON path.
fn parse_versioned<T: DeserializeOwned>(text: &str) -> Result<T> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    match value.get("schema_version") {
        None => return Err(Error::validation("schema_version", "missing field")),
        Some(Value::Number(n)) if n.as_u64() == Some(SCHEMA_VERSION as u64) => {}
        Some(other) => {
            return Err(Error::SchemaVersion {
                found: other.to_string(),
                supported: SCHEMA_VERSION,
            })
        }
    }
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        Error::Parse {
            path,
            message: e.into_inner().to_string(),
        }
    })
}

/// Loads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    load_scenario_file(path)?.to_scenario()
}

pub fn load_scenario_file(path: impl AsRef<Path>) -> Result<ScenarioFile> {
    ScenarioFile::parse(&read_text(path.as_ref())?)
}

/// A scenario file path, or the name of a bundled scenario.
pub fn resolve_scenario(spec: &str) -> Result<ScenarioFile> {
    let path = Path::new(spec);
    if path.exists() {
        return load_scenario_file(path);
    }
    match bundled(spec) {
        Some(text) => ScenarioFile::parse(text),
        None => Err(Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or bundled scenario"),
        }),
    }
}

/// Pretty printer that writes every float in scientific notation with 17
/// significant digits.
#[derive(Default)]
pub struct CanonicalFormatter {
    inner: PrettyFormatter<'static>,
}

macro_rules! delegate {
    ($($name:ident($($arg:ident: $ty:ty),*);)*) => {
        $(
            fn $name<W: ?Sized + Write>(&mut self, w: &mut W $(, $arg: $ty)*) -> std::io::Result<()> {
                self.inner.$name(w $(, $arg)*)
            }
        )*
    };
}

impl Formatter for CanonicalFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> std::io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> std::io::Result<()> {
        self.write_f64(w, value as f64)
    }

    delegate! {
        begin_array();
        end_array();
        begin_array_value(first: bool);
        end_array_value();
        begin_object();
        end_object();
        begin_object_key(first: bool);
        end_object_key();
        begin_object_value();
        end_object_value();
    }
}

/// Canonical serialization used for every output file.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, CanonicalFormatter::default());
    value
        .serialize(&mut ser)
        .map_err(|e| Error::invalid(format!("serialization failed: {e}")))?;
    out.push(b'\n');
    Ok(out)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &to_canonical_json(value)?)
}

/// SHA-256 over the compact JSON of the scenario and planner configuration.
pub fn config_hash(scenario: &ScenarioFile, cfg: &PlannerConfig) -> String {
    #[derive(Serialize)]
    struct Hashed<'a> {
        scenario: &'a ScenarioFile,
        config: &'a PlannerConfig,
    }
    let bytes = serde_json::to_vec(&Hashed { scenario, config: cfg }).expect("plain data serializes");
    hex::encode(Sha256::digest(&bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    Results,
    Sweep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultsFile {
    pub kind: OutputKind,
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: PlannerConfig,
    pub metrics: MetricsReport,
    /// Mean over cycles of the ego relative entropy per iteration.
    pub ego_entropy: Option<Vec<f64>>,
    pub agent_entropy: Option<Vec<f64>>,
    pub trace: SimTrace,
}

impl ResultsFile {
    pub fn new(scenario: &ScenarioFile, cfg: &PlannerConfig, trace: SimTrace, metrics: MetricsReport) -> Self {
        Self {
            kind: OutputKind::Results,
            schema_version: SCHEMA_VERSION,
            scenario: scenario.name.clone(),
            seed: scenario.seed,
            config_hash: config_hash(scenario, cfg),
            config: cfg.clone(),
            metrics,
            ego_entropy: trace.mean_ego_entropy(),
            agent_entropy: trace.mean_agent_entropy(),
            trace,
        }
    }
}

/// Writes the results file and its flat CSV sidecar (`<path>.csv` with the
/// extension replaced).
pub fn write_results(results: &ResultsFile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_json(results, path)?;
    let csv = metrics_csv("scenario", &[(results.scenario.clone(), results.metrics)]);
    write_bytes(&path.with_extension("csv"), csv.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRun {
    pub value: String,
    pub config_hash: String,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFile {
    pub kind: OutputKind,
    pub schema_version: u32,
    pub scenario: String,
    pub axis: String,
    pub runs: Vec<SweepRun>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OutputFile {
    Results(Box<ResultsFile>),
    Sweep(SweepFile),
}

pub fn read_output(path: impl AsRef<Path>) -> Result<OutputFile> {
    let text = read_text(path.as_ref())?;
    #[derive(Deserialize)]
    struct Kind {
        kind: OutputKind,
    }
    let kind: Kind = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: "kind".into(),
        message: e.to_string(),
    })?;
    Ok(match kind.kind {
        OutputKind::Results => OutputFile::Results(Box::new(parse_versioned(&text)?)),
        OutputKind::Sweep => OutputFile::Sweep(parse_versioned(&text)?),
    })
}

pub fn read_results(path: impl AsRef<Path>) -> Result<ResultsFile> {
    match read_output(path)? {
        OutputFile::Results(r) => Ok(*r),
        OutputFile::Sweep(_) => Err(Error::validation("kind", "expected a results file, found a sweep")),
    }
}

/// Formats a float for CSV output (shortest round-trip form).
pub fn csv_float(v: f64) -> String {
    format!("{v}")
}

pub const METRIC_COLUMNS: [&str; 11] = [
    "nc", "dac", "ddc", "mp", "ttc", "ep", "sc", "comfort", "composite", "min_ttc", "progress",
];

pub fn metrics_row(m: &MetricsReport) -> Vec<String> {
    let mut row: Vec<String> = [m.nc, m.dac, m.ddc, m.mp, m.ttc, m.ep, m.sc, m.comfort, m.composite]
        .iter()
        .map(|v| csv_float(*v))
        .collect();
    row.push(m.min_ttc.map_or_else(|| "inf".to_string(), csv_float));
    row.push(csv_float(m.progress));
    row
}

/// One header line plus one row per labelled report.
pub fn metrics_csv(label: &str, rows: &[(String, MetricsReport)]) -> String {
    let mut out = String::new();
    out.push_str(label);
    for c in METRIC_COLUMNS {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for (value, m) in rows {
        out.push_str(value);
        for cell in metrics_row(m) {
            out.push(',');
            out.push_str(&cell);
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameAgent {
    pub id: String,
    /// Number of pure strategies.
    pub trajectories: usize,
    /// Defaults to uniform.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_probs: Option<Vec<f64>>,
    /// Defaults to 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GamePair {
    pub i: usize,
    pub j: usize,
    /// `psi[l][m]`: score of agent `i`'s strategy `l` against `j`'s `m`.
    pub psi: Vec<Vec<f64>>,
}

/// An abstract game for the Nash oracle: interaction scores without
/// trajectories. Agent 0 is the ego.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameFile {
    pub schema_version: u32,
    pub agents: Vec<GameAgent>,
    #[serde(default)]
    pub pairs: Vec<GamePair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ego_progress: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ego_comfort: Option<Vec<f64>>,
    #[serde(default)]
    pub reward: RewardWeights,
    #[serde(default = "default_game_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub order: UpdateOrder,
}

fn default_game_iterations() -> usize {
    50
}

impl GameFile {
    pub fn parse(text: &str) -> Result<Self> {
        parse_versioned(text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&read_text(path.as_ref())?)
    }

    pub fn table(&self) -> Result<InteractionTable> {
        let sizes: Vec<usize> = self.agents.iter().map(|a| a.trajectories).collect();
        let cfg = &self.reward;
        let mut pairs = BTreeMap::new();
        for (k, p) in self.pairs.iter().enumerate() {
            let path = format!("pairs[{k}]");
            if p.i >= p.j || p.j >= sizes.len() {
                return Err(Error::validation(path, "pairs need 0 <= i < j < number of agents"));
            }
            if p.psi.len() != sizes[p.i] || p.psi.iter().any(|row| row.len() != sizes[p.j]) {
                return Err(Error::validation(
                    format!("{path}.psi"),
                    format!("expected a {} x {} matrix", sizes[p.i], sizes[p.j]),
                ));
            }
            if p.psi.iter().flatten().any(|v| *v != cfg.u_c && *v != cfg.u_d && *v != 0.0) {
                return Err(Error::validation(format!("{path}.psi"), "entries must be u_c, u_d or 0"));
            }
            if pairs.insert((p.i, p.j), p.psi.concat()).is_some() {
                return Err(Error::validation(path, format!("duplicate pair ({}, {})", p.i, p.j)));
            }
        }
        let m0 = sizes.first().copied().unwrap_or(0);
        let progress = self.ego_progress.clone().unwrap_or_else(|| vec![0.0; m0]);
        let comfort = self.ego_comfort.clone().unwrap_or_else(|| vec![0.0; m0]);
        if progress.iter().any(|p| !(0.0..=cfg.alpha + cfg.beta).contains(p)) {
            return Err(Error::validation("ego_progress", "entries must lie in [0, alpha + beta]"));
        }
        if comfort.iter().any(|c| *c != 0.0 && *c != 1.0) {
            return Err(Error::validation("ego_comfort", "entries must be 0 or 1"));
        }
        InteractionTable::from_parts(sizes, pairs, progress, comfort).map_err(|e| Error::validation("agents", e.to_string()))
    }

    pub fn game_state(&self) -> Result<GameState> {
        let table = self.table()?;
        let base = self
            .agents
            .iter()
            .map(|a| a.base_probs.clone().unwrap_or_else(|| vec![1.0 / a.trajectories as f64; a.trajectories]))
            .collect();
        GameState::new(
            self.agents.iter().map(|a| a.id.clone()).collect(),
            base,
            self.agents.iter().map(|a| vec![1.0; a.trajectories]).collect(),
            table,
            self.reward,
            self.agents.iter().map(|a| a.confidence.unwrap_or(1.0)).collect(),
            self.order,
        )
        .map_err(|e| Error::validation("agents", e.to_string()))
    }
}
