//! Network algebraic equations with machine and load models attached.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::motor;
use super::EquilibriumState;
use crate::grid::{build_admittance, MotorParams, Network, Topology};
use crate::{Error, Result};

/// An induction motor attached to a bus, initialized at equilibrium.
#[derive(Debug, Clone, PartialEq)]
pub struct MotorState {
    pub bus: usize,
    /// Motor base power in system per unit.
    pub base: f64,
    pub params: MotorParams,
    pub initial_slip: f64,
    /// Load torque at the initial slip (motor base).
    pub load_torque: f64,
}

impl MotorState {
    pub(crate) fn load_torque_at(&self, slip: f64) -> f64 {
        motor::load_torque(&self.params, self.load_torque, self.initial_slip, slip)
    }
}

/// Nodal equations `Y V = I` for one topology. Generators enter as Norton
/// sources behind transient reactance, loads as admittances.
pub(crate) struct DynamicNetwork {
    base: DMatrix<Complex64>,
    gen_bus: Vec<usize>,
    gen_admittance: Vec<Complex64>,
    gen_emf: Vec<f64>,
    pub(crate) islanded: bool,
}

impl DynamicNetwork {
    pub(crate) fn new(
        network: &Network,
        topology: Topology,
        load_admittances: &[(usize, Complex64)],
    ) -> Result<Self> {
        let adm = build_admittance(network, topology)?;
        let mut base = adm.matrix;
        let mut gen_admittance = Vec::with_capacity(network.generators.len());
        for g in &network.generators {
            let y = Complex64::new(0.0, g.xd_prime).inv();
            base[(g.bus, g.bus)] += y;
            gen_admittance.push(y);
        }
        for &(bus, y) in load_admittances {
            base[(bus, bus)] += y;
        }
        Ok(Self {
            base,
            gen_bus: network.generators.iter().map(|g| g.bus).collect(),
            gen_admittance,
            gen_emf: network.generators.iter().map(|g| g.e_prime_mag).collect(),
            islanded: adm.islanded,
        })
    }

    pub(crate) fn dim(&self) -> usize {
        self.base.nrows()
    }

    /// Solves for bus voltages given rotor angles and motor slips.
    pub(crate) fn solve(
        &self,
        angles: &[f64],
        slips: &[f64],
        motors: &[MotorState],
    ) -> Result<DVector<Complex64>> {
        let mut y = self.base.clone();
        for (m, &s) in motors.iter().zip(slips) {
            y[(m.bus, m.bus)] += motor::input_admittance(&m.params, s) * m.base;
        }
        let mut rhs = DVector::<Complex64>::zeros(self.dim());
        for i in 0..self.gen_bus.len() {
            let e = Complex64::from_polar(self.gen_emf[i], angles[i]);
            rhs[self.gen_bus[i]] += e * self.gen_admittance[i];
        }
        let v = y.lu().solve(&rhs).ok_or(Error::Singular)?;
        if v.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::Singular);
        }
        Ok(v)
    }

    /// Electrical power output of each generator.
    pub(crate) fn electrical_power(&self, angles: &[f64], v: &DVector<Complex64>) -> Vec<f64> {
        (0..self.gen_bus.len())
            .map(|i| {
                let e = Complex64::from_polar(self.gen_emf[i], angles[i]);
                let current = (e - v[self.gen_bus[i]]) * self.gen_admittance[i];
                (e * current.conj()).re
            })
            .collect()
    }
}

/// Builds the dynamic network for the pre-fault topology from an equilibrium.
pub(crate) fn prefault_network(
    network: &Network,
    eq: &EquilibriumState,
) -> Result<DynamicNetwork> {
    DynamicNetwork::new(network, Topology::Prefault, &eq.load_admittances)
}
