//! Time-domain simulation: classical generators and first-order induction
//! motors coupled through the network nodal equations.

mod dynamic;
mod equilibrium;
mod motor;
mod simulate;
mod trace;

pub use dynamic::MotorState;
pub use equilibrium::{solve_equilibrium, EquilibriumState, MISMATCH_TOLERANCE};
pub use simulate::simulate;
pub use trace::{Trace, TRACE_MAGIC};

use crate::grid::{FaultSpec, Network};
use crate::{Error, Result};

pub const DEFAULT_FAULT_START_S: f64 = 1.0;
pub const DEFAULT_DURATION_S: f64 = 10.0;
pub const DEFAULT_STEP_S: f64 = 0.01;

/// One fault case. `fault = None` runs the undisturbed system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub fault: Option<FaultSpec>,
    pub motor_fraction: f64,
    /// Clearing delay in cycles of nominal frequency. Fractional values are
    /// allowed so that critical-clearing searches can refine below a cycle.
    pub clearing_cycles: f64,
    pub fault_start_s: f64,
    pub duration_s: f64,
    pub step_s: f64,
}

impl Scenario {
    pub fn new(fault: FaultSpec, motor_fraction: f64, clearing_cycles: f64) -> Self {
        Self {
            fault: Some(fault),
            motor_fraction,
            clearing_cycles,
            fault_start_s: DEFAULT_FAULT_START_S,
            duration_s: DEFAULT_DURATION_S,
            step_s: DEFAULT_STEP_S,
        }
    }

    pub fn undisturbed(motor_fraction: f64) -> Self {
        Self {
            fault: None,
            motor_fraction,
            clearing_cycles: 0.0,
            fault_start_s: DEFAULT_FAULT_START_S,
            duration_s: DEFAULT_DURATION_S,
            step_s: DEFAULT_STEP_S,
        }
    }

    pub fn clearing_time_s(&self, nominal_hz: f64) -> f64 {
        clearing_time_s(self.clearing_cycles, nominal_hz)
    }

    pub fn validate(&self, network: &Network) -> Result<()> {
        if !(self.step_s > 0.0 && self.duration_s > self.step_s) {
            return Err(Error::InvalidArgument("need 0 < step_s < duration_s".into()));
        }
        if !(self.clearing_cycles >= 0.0) {
            return Err(Error::InvalidArgument("clearing_cycles must be >= 0".into()));
        }
        if let Some(f) = &self.fault {
            network.validate_fault(f)?;
            if !(self.fault_start_s >= 0.0) {
                return Err(Error::InvalidArgument("fault_start_s must be >= 0".into()));
            }
            let end = self.fault_start_s + self.clearing_time_s(network.nominal_hz);
            if end >= self.duration_s {
                return Err(Error::InvalidArgument(format!(
                    "fault cleared at {end} s, after the {} s window",
                    self.duration_s
                )));
            }
        }
        Ok(())
    }
}

/// Converts a clearing delay in cycles to seconds.
pub fn clearing_time_s(clearing_cycles: f64, nominal_hz: f64) -> f64 {
    clearing_cycles / nominal_hz
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cycles_to_seconds() {
        assert!((clearing_time_s(3.0, 60.0) - 0.05).abs() < 1e-15);
        assert!((clearing_time_s(11.0, 60.0) - 0.183_333_333_333_333_33).abs() < 1e-15);
        assert_eq!(clearing_time_s(0.0, 60.0), 0.0);
    }

    #[test]
    fn clearing_must_fit_window() {
        let net = Network::new_england_39();
        let mut sc = Scenario::new(FaultSpec::bolted(0, 0.5), 0.6, 3.0);
        assert!(sc.validate(&net).is_ok());
        sc.duration_s = 1.02;
        assert!(sc.validate(&net).is_err());
    }
}
