//! Scenario grids, batch simulation and labeling, features, splits and
//! dataset files.

mod features;
mod io;
mod split;

pub use features::{extract_features, features_from_snapshots, wrap_angle, NodeFeatures, V_MAG_MAX};
pub use io::{Manifest, DATASET_MAGIC, META_FIELDS, SCHEMA_VERSION};
pub use split::{split_dataset, split_sizes, DatasetSplit, SPLIT_FRACTIONS};

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::grid::{write_network, Adjacency, FaultSpec, Network};
use crate::labeling::{
    label_trace, Bracket, CctResult, CctSearchConfig, ClearingOracle, Criterion, MarginLabels,
};
use crate::tds::{clearing_time_s, simulate, solve_equilibrium, EquilibriumState, Scenario};
use crate::{Error, Result};

pub const DEFAULT_WINDOW_STEPS: usize = 20;

/// Cartesian scenario grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lines: Vec<usize>,
    pub location_fractions: Vec<f64>,
    pub motor_fractions: Vec<f64>,
    pub clearing_cycles: Vec<u32>,
    #[serde(default = "default_window")]
    pub window_steps: usize,
}

fn default_window() -> usize {
    DEFAULT_WINDOW_STEPS
}

impl GridConfig {
    /// Every fault-eligible line, five locations, three motor shares and
    /// clearing after 3 to 11 cycles.
    pub fn paper(network: &Network) -> Self {
        Self {
            lines: network.fault_eligible_lines(),
            location_fractions: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            motor_fractions: vec![0.5, 0.6, 0.7],
            clearing_cycles: (3..=11).collect(),
            window_steps: DEFAULT_WINDOW_STEPS,
        }
    }

    /// Small grid on the bundled 39-bus case: six lines, three locations, one
    /// motor share, five clearing times.
    pub fn desk() -> Self {
        Self {
            lines: vec![9, 16, 22, 25, 34, 43],
            location_fractions: vec![0.1, 0.5, 0.9],
            motor_fractions: vec![0.6],
            clearing_cycles: vec![3, 5, 7, 9, 11],
            window_steps: DEFAULT_WINDOW_STEPS,
        }
    }

    pub fn scenario_count(&self) -> usize {
        self.lines.len() * self.location_fractions.len() * self.motor_fractions.len() * self.clearing_cycles.len()
    }

    pub fn validate(&self, network: &Network) -> Result<()> {
        if self.lines.is_empty()
            || self.location_fractions.is_empty()
            || self.motor_fractions.is_empty()
            || self.clearing_cycles.is_empty()
        {
            return Err(Error::InvalidArgument("every grid list must be nonempty".into()));
        }
        if self.window_steps == 0 {
            return Err(Error::InvalidArgument("window_steps must be at least 1".into()));
        }
        let eligible = network.fault_eligible_lines();
        for &l in &self.lines {
            if !eligible.contains(&l) {
                return Err(Error::InvalidArgument(format!("line {l} is not fault-eligible")));
            }
        }
        for &x in &self.location_fractions {
            if !(x > 0.0 && x < 1.0) {
                return Err(Error::InvalidArgument(format!("location fraction {x} outside (0, 1)")));
            }
        }
        for &x in &self.motor_fractions {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::InvalidArgument(format!("motor fraction {x} outside [0, 1]")));
            }
        }
        for &c in &self.clearing_cycles {
            if c == 0 {
                return Err(Error::InvalidArgument("clearing cycles must be positive".into()));
            }
        }
        Ok(())
    }

    /// Canonical one-line text form, used for hashing.
    pub fn canonical(&self) -> String {
        let join = |v: Vec<String>| v.join(",");
        format!(
            "lines={};locations={};motor={};cycles={};window={}",
            join(self.lines.iter().map(|x| x.to_string()).collect()),
            join(self.location_fractions.iter().map(|x| x.to_string()).collect()),
            join(self.motor_fractions.iter().map(|x| x.to_string()).collect()),
            join(self.clearing_cycles.iter().map(|x| x.to_string()).collect()),
            self.window_steps
        )
    }
}

/// One grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridScenario {
    pub id: usize,
    pub line: usize,
    pub location_fraction: f64,
    pub motor_fraction: f64,
    pub clearing_cycles: u32,
}

impl GridScenario {
    pub fn fault(&self) -> FaultSpec {
        FaultSpec::bolted(self.line, self.location_fraction)
    }

    pub fn scenario(&self) -> Scenario {
        Scenario::new(self.fault(), self.motor_fraction, self.clearing_cycles as f64)
    }
}

/// Grid points in lexicographic (line, location, motor share, clearing) order.
pub fn enumerate_scenarios(cfg: &GridConfig) -> Vec<GridScenario> {
    let mut out = Vec::with_capacity(cfg.scenario_count());
    for &line in &cfg.lines {
        for &location_fraction in &cfg.location_fractions {
            for &motor_fraction in &cfg.motor_fractions {
                for &clearing_cycles in &cfg.clearing_cycles {
                    out.push(GridScenario {
                        id: out.len(),
                        line,
                        location_fraction,
                        motor_fraction,
                        clearing_cycles,
                    });
                }
            }
        }
    }
    out
}

pub const FLAG_CLAMPED: u32 = 1;
pub const FLAG_DIVERGED: u32 = 1 << 1;
pub const FLAG_ISLANDED: u32 = 1 << 2;
pub const FLAG_TAS_BELOW: u32 = 1 << 3;
pub const FLAG_TAS_ABOVE: u32 = 1 << 4;
pub const FLAG_TVS_BELOW: u32 = 1 << 5;
pub const FLAG_TVS_ABOVE: u32 = 1 << 6;
/// Class label and margin sign disagree (stability not monotone in clearing time).
pub const FLAG_NON_MONOTONE: u32 = 1 << 7;

/// Labels stored with a sample. Real values are kept at f32 precision so a
/// sample read back from disk equals the one written.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleLabels {
    pub tas_stable: bool,
    pub tvs_stable: bool,
    /// Margin when positive, minus the instability degree otherwise.
    pub tas_target: f64,
    pub tvs_target: f64,
    pub tsi_deg: f64,
    pub v_min_pu: f64,
    pub tas_cct_s: f64,
    pub tvs_cct_s: f64,
    pub flags: u32,
}

fn q32(x: f64) -> f64 {
    x as f32 as f64
}

impl SampleLabels {
    pub fn joint_class(&self) -> (bool, bool) {
        (self.tas_stable, self.tvs_stable)
    }

    pub fn has(&self, flag: u32) -> bool {
        self.flags & flag != 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub scenario: GridScenario,
    pub features: NodeFeatures,
    /// Post-fault topology.
    pub adjacency: Adjacency,
    pub labels: SampleLabels,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_buses: usize,
    pub window: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn classes(&self) -> Vec<(bool, bool)> {
        self.samples.iter().map(|s| s.labels.joint_class()).collect()
    }

    pub fn split(&self, seed: u64) -> Result<DatasetSplit> {
        split_dataset(&self.classes(), seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildConfig {
    pub grid: GridConfig,
    pub cct: CctSearchConfig,
    /// Recorded in the manifest; used downstream for the split.
    pub seed: u64,
}

impl BuildConfig {
    pub fn new(grid: GridConfig, network: &Network, seed: u64) -> Self {
        Self { grid, cct: CctSearchConfig::default_for(network.nominal_hz), seed }
    }

    /// SHA-256 over the grid, the search settings, the seed and the network.
    pub fn hash(&self, network: &Network) -> String {
        let mut h = Sha256::new();
        h.update(self.grid.canonical());
        h.update(format!(
            ";cct={},{},{},{};seed={}\n",
            self.cct.t_min_s, self.cct.t_max_s, self.cct.coarse_step_s, self.cct.tolerance_s, self.seed
        ));
        h.update(write_network(network));
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFailure {
    pub id: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct BuildOutput {
    pub dataset: Dataset,
    pub failures: Vec<ScenarioFailure>,
    pub manifest: Manifest,
}

fn bracket_flag(r: &CctResult, below: u32, above: u32) -> u32 {
    match r.bracket {
        Bracket::Within => 0,
        Bracket::Below => below,
        Bracket::Above => above,
    }
}

/// Simulates and labels one (line, location, motor share) group across its
/// clearing times. The group's runs seed the CCT searches.
fn build_group(
    network: &Network,
    eq: &EquilibriumState,
    group: &[GridScenario],
    cfg: &BuildConfig,
) -> Vec<std::result::Result<Sample, ScenarioFailure>> {
    let fail = |id: usize, e: Error| ScenarioFailure { id, message: e.to_string() };
    let fault = group[0].fault();
    let mut oracle = ClearingOracle::new(network, fault, eq);
    let mut runs = Vec::with_capacity(group.len());
    for sc in group {
        let t_clear = clearing_time_s(sc.clearing_cycles as f64, network.nominal_hz);
        let run = simulate(network, &sc.scenario(), eq).and_then(|trace| {
            let labels = label_trace(&trace)?;
            oracle.insert(t_clear, labels);
            Ok((trace, labels))
        });
        runs.push(run);
    }
    let ccts = oracle
        .find_cct(Criterion::Tas, &cfg.cct)
        .and_then(|tas| Ok((tas, oracle.find_cct(Criterion::Tvs, &cfg.cct)?)))
        .map_err(|e| e.to_string());
    log::debug!(
        "line {} at {} share {}: {} simulations",
        fault.line_index,
        fault.location_fraction,
        group[0].motor_fraction,
        oracle.runs() + group.len()
    );
    let adjacency = Adjacency::for_network(network, Some(fault.line_index));
    group
        .iter()
        .zip(runs)
        .map(|(sc, run)| {
            let (trace, st) = run.map_err(|e| fail(sc.id, e))?;
            let (tas_cct, tvs_cct) =
                ccts.clone().map_err(|message| ScenarioFailure { id: sc.id, message })?;
            let t_clear = clearing_time_s(sc.clearing_cycles as f64, network.nominal_hz);
            let m = MarginLabels::new(tas_cct, tvs_cct, t_clear).map_err(|e| fail(sc.id, e))?;
            let start = trace.fault_step.unwrap_or(0);
            let features = features::extract_features_padded(&trace, start, cfg.grid.window_steps)
                .map_err(|e| fail(sc.id, e))?;
            let mut flags = bracket_flag(&tas_cct, FLAG_TAS_BELOW, FLAG_TAS_ABOVE)
                | bracket_flag(&tvs_cct, FLAG_TVS_BELOW, FLAG_TVS_ABOVE);
            if features.clamped {
                flags |= FLAG_CLAMPED;
            }
            if trace.diverged {
                flags |= FLAG_DIVERGED;
            }
            if trace.islanded {
                flags |= FLAG_ISLANDED;
            }
            if st.tas_stable != m.tas.is_margin() || st.tvs_stable != m.tvs.is_margin() {
                log::warn!(
                    "scenario {}: class label and margin sign disagree (tas {} / {:?}, tvs {} / {:?})",
                    sc.id,
                    st.tas_stable,
                    m.tas,
                    st.tvs_stable,
                    m.tvs
                );
                flags |= FLAG_NON_MONOTONE;
            }
            Ok(Sample {
                scenario: *sc,
                features,
                adjacency: adjacency.clone(),
                labels: SampleLabels {
                    tas_stable: st.tas_stable,
                    tvs_stable: st.tvs_stable,
                    tas_target: q32(m.tas.signed()),
                    tvs_target: q32(m.tvs.signed()),
                    tsi_deg: q32(st.tsi_deg),
                    v_min_pu: q32(st.v_min_pu),
                    tas_cct_s: q32(tas_cct.t_cct_s),
                    tvs_cct_s: q32(tvs_cct.t_cct_s),
                    flags,
                },
            })
        })
        .collect()
}

/// Runs every grid scenario, labels it, and assembles the dataset. Groups
/// run in parallel; results keep grid order. Failed scenarios are left out
/// and reported.
pub fn build_dataset(network: &Network, cfg: &BuildConfig) -> Result<BuildOutput> {
    network.validate()?;
    cfg.grid.validate(network)?;
    cfg.cct.validate()?;
    let scenarios = enumerate_scenarios(&cfg.grid);

    let mut equilibria: BTreeMap<u64, std::result::Result<EquilibriumState, String>> = BTreeMap::new();
    for &share in &cfg.grid.motor_fractions {
        equilibria
            .entry(share.to_bits())
            .or_insert_with(|| solve_equilibrium(network, share).map_err(|e| e.to_string()));
    }

    let groups: Vec<&[GridScenario]> = scenarios.chunks(cfg.grid.clearing_cycles.len()).collect();
    let results: Vec<Vec<std::result::Result<Sample, ScenarioFailure>>> = groups
        .par_iter()
        .map(|group| match &equilibria[&group[0].motor_fraction.to_bits()] {
            Ok(eq) => build_group(network, eq, group, cfg),
            Err(msg) => group
                .iter()
                .map(|sc| Err(ScenarioFailure { id: sc.id, message: format!("equilibrium: {msg}") }))
                .collect(),
        })
        .collect();

    let mut samples = Vec::with_capacity(scenarios.len());
    let mut failures = Vec::new();
    for r in results.into_iter().flatten() {
        match r {
            Ok(s) => samples.push(s),
            Err(f) => {
                log::warn!("scenario {} failed: {}", f.id, f.message);
                failures.push(f);
            }
        }
    }
    let dataset = Dataset { n_buses: network.bus_count(), window: cfg.grid.window_steps, samples };
    let manifest = Manifest::from_build(network, cfg, &dataset, &failures);
    Ok(BuildOutput { dataset, failures, manifest })
}
