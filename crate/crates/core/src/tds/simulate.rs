use super::dynamic::{DynamicNetwork, MotorState};
use super::{motor, EquilibriumState, Scenario, Trace};
use crate::grid::{Network, Topology};
use crate::{Error, Result};

/// Event positions closer than this to a grid point (in steps) snap to it.
const SNAP: f64 = 1e-6;

pub(crate) fn event_position(time_s: f64, step_s: f64) -> f64 {
    let pos = time_s / step_s;
    let rounded = pos.round();
    if (pos - rounded).abs() < SNAP {
        rounded
    } else {
        pos
    }
}

/// First sample index at or after an event position.
pub(crate) fn first_step_at(pos: f64) -> usize {
    pos.ceil() as usize
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Phase {
    Pre,
    Faulted,
    Post,
}

struct Model<'a> {
    motors: &'a [MotorState],
    inertia: Vec<f64>,
    damping: Vec<f64>,
    p_mech: Vec<f64>,
    omega_s: f64,
    ng: usize,
}

impl Model<'_> {
    fn split<'x>(&self, x: &'x [f64]) -> (&'x [f64], &'x [f64], &'x [f64]) {
        let (delta, rest) = x.split_at(self.ng);
        let (omega, slip) = rest.split_at(self.ng);
        (delta, omega, slip)
    }

    fn derivative(&self, net: &DynamicNetwork, x: &[f64], dx: &mut [f64]) -> Result<()> {
        let ng = self.ng;
        let (delta, omega, slip_raw) = self.split(x);
        let slip: Vec<f64> = slip_raw.iter().map(|s| s.min(1.0)).collect();
        let v = net.solve(delta, &slip, self.motors)?;
        let pe = net.electrical_power(delta, &v);
        for i in 0..ng {
            dx[i] = self.omega_s * omega[i];
            dx[ng + i] =
                (self.p_mech[i] - pe[i] - self.damping[i] * omega[i]) / (2.0 * self.inertia[i]);
        }
        for (k, m) in self.motors.iter().enumerate() {
            let te = motor::electrical_torque(&m.params, v[m.bus].norm(), slip[k]);
            let mut ds = (m.load_torque_at(slip[k]) - te) / (2.0 * m.params.inertia_h);
            if slip_raw[k] >= 1.0 && ds > 0.0 {
                ds = 0.0;
            }
            dx[2 * ng + k] = ds;
        }
        Ok(())
    }

    fn rk4(&self, net: &DynamicNetwork, x: &mut [f64], h: f64) -> Result<()> {
        let len = x.len();
        let mut k1 = vec![0.0; len];
        let mut k2 = vec![0.0; len];
        let mut k3 = vec![0.0; len];
        let mut k4 = vec![0.0; len];
        let mut tmp = vec![0.0; len];
        self.derivative(net, x, &mut k1)?;
        for i in 0..len {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        self.derivative(net, &tmp, &mut k2)?;
        for i in 0..len {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        self.derivative(net, &tmp, &mut k3)?;
        for i in 0..len {
            tmp[i] = x[i] + h * k3[i];
        }
        self.derivative(net, &tmp, &mut k4)?;
        for i in 0..len {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        for s in &mut x[2 * self.ng..] {
            *s = s.min(1.0);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("state".into()));
        }
        Ok(())
    }
}

/// Fixed-step RK4 simulation of `scenario` from `init`.
///
/// Topology switches happen exactly at the fault and clearing instants;
/// an RK4 step that straddles an instant is split there. Samples are
/// recorded on the `step_s` grid; a sample at a switching instant reflects
/// the new topology.
pub fn simulate(network: &Network, scenario: &Scenario, init: &EquilibriumState) -> Result<Trace> {
    scenario.validate(network)?;
    let n = network.bus_count();
    let ng = network.generators.len();
    let h = scenario.step_s;
    let steps = (scenario.duration_s / h).round() as usize;

    let pre = DynamicNetwork::new(network, Topology::Prefault, &init.load_admittances)?;
    let (faulted, post, fault_pos, clear_pos) = match scenario.fault {
        Some(f) => {
            let faulted = DynamicNetwork::new(network, Topology::Faulted(f), &init.load_admittances)?;
            let post = DynamicNetwork::new(network, Topology::Postfault(f), &init.load_admittances)?;
            let t_clear = scenario.fault_start_s + scenario.clearing_time_s(network.nominal_hz);
            (
                Some(faulted),
                Some(post),
                event_position(scenario.fault_start_s, h),
                event_position(t_clear, h),
            )
        }
        None => (None, None, f64::INFINITY, f64::INFINITY),
    };
    let phase_at = |pos: f64| {
        if pos >= clear_pos {
            Phase::Post
        } else if pos >= fault_pos {
            Phase::Faulted
        } else {
            Phase::Pre
        }
    };
    let net_for = |phase: Phase| -> &DynamicNetwork {
        match phase {
            Phase::Pre => &pre,
            Phase::Faulted => faulted.as_ref().expect("fault network"),
            Phase::Post => post.as_ref().expect("post-fault network"),
        }
    };

    let model = Model {
        motors: &init.motors,
        inertia: network.generators.iter().map(|g| g.inertia_h).collect(),
        damping: network.generators.iter().map(|g| g.damping_d).collect(),
        p_mech: init.p_mech.clone(),
        omega_s: 2.0 * std::f64::consts::PI * network.nominal_hz,
        ng,
    };

    let mut x: Vec<f64> = Vec::with_capacity(2 * ng + init.motors.len());
    x.extend_from_slice(&init.generator_angles);
    x.extend(std::iter::repeat(0.0).take(ng));
    x.extend_from_slice(&init.motor_slips);

    let mut trace = Trace::new(network, init.motors.len(), h);
    trace.islanded = post.as_ref().is_some_and(|p| p.islanded);
    if scenario.fault.is_some() {
        trace.fault_step = Some(first_step_at(fault_pos));
        trace.clear_step = Some(first_step_at(clear_pos));
        trace.clear_time_s = Some(scenario.fault_start_s + scenario.clearing_time_s(network.nominal_hz));
    }

    let record = |trace: &mut Trace, k: usize, x: &[f64]| -> Result<()> {
        let net = net_for(phase_at(k as f64));
        let (delta, _, slip) = model.split(x);
        let slip: Vec<f64> = slip.iter().map(|s| s.min(1.0)).collect();
        let v = net.solve(delta, &slip, model.motors)?;
        trace.push(k as f64 * h, delta, &v.as_slice()[..n], &slip);
        Ok(())
    };

    if record(&mut trace, 0, &x).is_err() {
        trace.diverged = true;
        return Ok(trace);
    }
    for k in 0..steps {
        let lo = k as f64;
        let hi = (k + 1) as f64;
        let mut cuts = vec![lo];
        for e in [fault_pos, clear_pos] {
            if e > lo && e < hi {
                cuts.push(e);
            }
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        cuts.push(hi);
        let mut ok = true;
        for w in cuts.windows(2) {
            if model.rk4(net_for(phase_at(w[0])), &mut x, (w[1] - w[0]) * h).is_err() {
                ok = false;
                break;
            }
        }
        if !ok || record(&mut trace, k + 1, &x).is_err() {
            trace.diverged = true;
            break;
        }
    }
    Ok(trace)
}
