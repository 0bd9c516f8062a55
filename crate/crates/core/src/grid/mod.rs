//! Power network description and network matrices.

mod admittance;
mod format;

pub use admittance::{
    adjacency_from_network, build_admittance, split_line, Adjacency, Admittance, LineSection,
    SplitLine, Topology,
};
pub use format::{load_network, parse_network, write_network};

use num_complex::Complex64;

use crate::{Error, Result};

/// Default bolted-fault shunt, in per unit.
pub const BOLTED_FAULT_ADMITTANCE: Complex64 = Complex64::new(0.0, -1.0e6);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

impl BusKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BusKind::Slack => "slack",
            BusKind::Pv => "pv",
            BusKind::Pq => "pq",
        }
    }
}

impl std::str::FromStr for BusKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "slack" => Ok(BusKind::Slack),
            "pv" => Ok(BusKind::Pv),
            "pq" => Ok(BusKind::Pq),
            other => Err(format!("unknown bus kind '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: usize,
    pub base_kv: f64,
    pub kind: BusKind,
    /// Shunt admittance to ground (per unit).
    pub shunt: Complex64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub from_bus: usize,
    pub to_bus: usize,
    pub series_impedance: Complex64,
    /// Total line charging susceptance, split evenly between the two ends.
    pub charging_susceptance: f64,
    pub has_transformer: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub bus: usize,
    pub inertia_h: f64,
    pub damping_d: f64,
    pub xd_prime: f64,
    pub p_mech: f64,
    pub e_prime_mag: f64,
}

/// Induction motor equivalent-circuit data. Impedances are per unit on a
/// base equal to the motor's share of the bus real-power demand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotorParams {
    pub stator_r: f64,
    pub stator_x: f64,
    pub rotor_r: f64,
    pub rotor_x: f64,
    pub magnetizing_x: f64,
    pub inertia_h: f64,
    pub load_torque_exponent: f64,
}

/// Induction motor in parallel with a constant impedance.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeLoad {
    pub bus: usize,
    pub p_total: f64,
    pub q_total: f64,
    pub motor_fraction: f64,
    pub motor_params: MotorParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    pub loads: Vec<CompositeLoad>,
    pub base_mva: f64,
    pub nominal_hz: f64,
}

/// A three-phase shunt fault somewhere along a transmission line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultSpec {
    pub line_index: usize,
    pub location_fraction: f64,
    pub fault_admittance: Complex64,
}

impl FaultSpec {
    pub fn bolted(line_index: usize, location_fraction: f64) -> Self {
        Self { line_index, location_fraction, fault_admittance: BOLTED_FAULT_ADMITTANCE }
    }
}

const NE39_SOURCE: &str = include_str!("../../data/ne39.net");

impl Network {
    /// The New England 39-bus test system shipped with the crate.
    pub fn new_england_39() -> Self {
        parse_network(NE39_SOURCE).expect("bundled 39-bus network is valid")
    }

    /// Raw text of the bundled 39-bus network file.
    pub fn new_england_39_source() -> &'static str {
        NE39_SOURCE
    }

    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    pub fn slack_bus(&self) -> usize {
        self.buses
            .iter()
            .find(|b| b.kind == BusKind::Slack)
            .map(|b| b.id)
            .expect("validated network has a slack bus")
    }

    /// Indices of lines a fault may be placed on (no transformer).
    pub fn fault_eligible_lines(&self) -> Vec<usize> {
        self.lines
            .iter()
            .enumerate()
            .filter(|(_, l)| !l.has_transformer)
            .map(|(i, _)| i)
            .collect()
    }

    /// Buses that carry a load with positive real power.
    pub fn load_buses(&self) -> Vec<usize> {
        let mut buses: Vec<usize> =
            self.loads.iter().filter(|l| l.p_total > 0.0).map(|l| l.bus).collect();
        buses.sort_unstable();
        buses.dedup();
        buses
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.buses.len();
        if n == 0 {
            return Err(Error::Validation("network has no buses".into()));
        }
        let mut seen = vec![false; n];
        for bus in &self.buses {
            if bus.id >= n {
                return Err(Error::Validation(format!(
                    "bus ids must be contiguous from 0; found id {} with {} buses",
                    bus.id, n
                )));
            }
            if seen[bus.id] {
                return Err(Error::Validation(format!("duplicate bus id {}", bus.id)));
            }
            seen[bus.id] = true;
        }
        if self.buses.iter().enumerate().any(|(i, b)| b.id != i) {
            return Err(Error::Validation("buses must be listed in id order".into()));
        }
        let slack_count = self.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
        if slack_count != 1 {
            return Err(Error::Validation(format!(
                "expected exactly one slack bus, found {slack_count}"
            )));
        }
        for (i, line) in self.lines.iter().enumerate() {
            if line.from_bus >= n || line.to_bus >= n {
                return Err(Error::Validation(format!("line {i} references a missing bus")));
            }
            if line.from_bus == line.to_bus {
                return Err(Error::Validation(format!("line {i} is a self-loop")));
            }
            if !(line.series_impedance.norm() > 0.0) {
                return Err(Error::Validation(format!("line {i} has zero series impedance")));
            }
        }
        for (i, g) in self.generators.iter().enumerate() {
            if g.bus >= n {
                return Err(Error::Validation(format!("generator {i} references a missing bus")));
            }
            if !(g.inertia_h > 0.0) {
                return Err(Error::Validation(format!("generator {i} needs inertia_h > 0")));
            }
            if !(g.xd_prime > 0.0) {
                return Err(Error::Validation(format!("generator {i} needs xd_prime > 0")));
            }
            if !(g.e_prime_mag > 0.0) {
                return Err(Error::Validation(format!("generator {i} needs e_prime_mag > 0")));
            }
        }
        let slack = self.slack_bus();
        if !self.generators.iter().any(|g| g.bus == slack) {
            return Err(Error::Validation("slack bus has no generator".into()));
        }
        for (i, l) in self.loads.iter().enumerate() {
            if l.bus >= n {
                return Err(Error::Validation(format!("load {i} references a missing bus")));
            }
            if !(l.p_total >= 0.0) {
                return Err(Error::Validation(format!("load {i} needs p_total >= 0")));
            }
            if !(0.0..=1.0).contains(&l.motor_fraction) {
                return Err(Error::Validation(format!("load {i} motor_fraction outside [0, 1]")));
            }
            if l.motor_fraction > 0.0 && !(l.motor_params.inertia_h > 0.0) {
                return Err(Error::Validation(format!("load {i} motor needs inertia_h > 0")));
            }
        }
        if !(self.base_mva > 0.0 && self.nominal_hz > 0.0) {
            return Err(Error::Validation("base_mva and nominal_hz must be positive".into()));
        }
        if !self.is_connected(None) {
            return Err(Error::Validation("network graph is not connected".into()));
        }
        Ok(())
    }

    /// Connectivity check, optionally ignoring one line.
    pub fn is_connected(&self, without_line: Option<usize>) -> bool {
        let n = self.buses.len();
        if n == 0 {
            return false;
        }
        let mut neighbors = vec![Vec::new(); n];
        for (i, l) in self.lines.iter().enumerate() {
            if Some(i) == without_line {
                continue;
            }
            neighbors[l.from_bus].push(l.to_bus);
            neighbors[l.to_bus].push(l.from_bus);
        }
        let mut visited = vec![false; n];
        let mut stack = vec![0];
        visited[0] = true;
        while let Some(b) = stack.pop() {
            for &nb in &neighbors[b] {
                if !visited[nb] {
                    visited[nb] = true;
                    stack.push(nb);
                }
            }
        }
        visited.into_iter().all(|v| v)
    }

    pub fn validate_fault(&self, fault: &FaultSpec) -> Result<()> {
        let line = self.lines.get(fault.line_index).ok_or_else(|| {
            Error::InvalidArgument(format!("fault line {} does not exist", fault.line_index))
        })?;
        if line.has_transformer {
            return Err(Error::InvalidArgument(format!(
                "fault line {} is a transformer branch",
                fault.line_index
            )));
        }
        if !(fault.location_fraction > 0.0 && fault.location_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "fault location {} outside (0, 1)",
                fault.location_fraction
            )));
        }
        Ok(())
    }
}
