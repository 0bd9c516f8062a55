//! Pre-fault operating point.
//!
//! The power flow runs on an augmented network in which every generator's
//! internal EMF node is connected to its terminal through the transient
//! reactance. Internal nodes are voltage-controlled at `e_prime_mag` and
//! inject `p_mech`; the slack generator's internal node is the angle
//! reference. Terminal buses are PQ with the scheduled load.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::dynamic::{prefault_network, MotorState};
use super::motor;
use crate::grid::{build_admittance, Network, Topology};
use crate::{Error, Result};

const MAX_ITERATIONS: usize = 50;
const TARGET_MISMATCH: f64 = 1e-11;
/// Largest mismatch accepted as converged.
pub const MISMATCH_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumState {
    pub bus_voltages: Vec<Complex64>,
    pub generator_angles: Vec<f64>,
    /// Mechanical power of each generator; equal to its electrical output.
    pub p_mech: Vec<f64>,
    pub motor_slips: Vec<f64>,
    pub motors: Vec<MotorState>,
    /// Constant-impedance part of each composite load.
    pub load_admittances: Vec<(usize, Complex64)>,
    pub motor_fraction: f64,
    /// Infinity norm of the power-flow mismatch, per unit.
    pub mismatch_norm: f64,
}

/// Newton power flow over a dense admittance matrix.
///
/// `reference` is the angle reference, `pq` marks nodes whose magnitude is
/// unknown, `p_spec`/`q_spec` are scheduled injections.
fn newton_power_flow(
    y: &DMatrix<Complex64>,
    v0: &[Complex64],
    reference: usize,
    pq: &[bool],
    p_spec: &[f64],
    q_spec: &[f64],
) -> Result<(Vec<Complex64>, f64)> {
    let n = y.nrows();
    let mut vm: Vec<f64> = v0.iter().map(|v| v.norm()).collect();
    let mut va: Vec<f64> = v0.iter().map(|v| v.arg()).collect();
    let angle_idx: Vec<usize> = (0..n).filter(|&i| i != reference).collect();
    let mag_idx: Vec<usize> = (0..n).filter(|&i| pq[i] && i != reference).collect();
    let (na, nm) = (angle_idx.len(), mag_idx.len());

    let mismatch = |vm: &[f64], va: &[f64]| -> (DVector<Complex64>, DVector<Complex64>, DVector<f64>) {
        let v = DVector::from_iterator(n, (0..n).map(|i| Complex64::from_polar(vm[i], va[i])));
        let current = y * &v;
        let mut f = DVector::zeros(na + nm);
        for (r, &i) in angle_idx.iter().enumerate() {
            f[r] = (v[i] * current[i].conj()).re - p_spec[i];
        }
        for (r, &i) in mag_idx.iter().enumerate() {
            f[na + r] = (v[i] * current[i].conj()).im - q_spec[i];
        }
        (v, current, f)
    };

    let mut best = f64::INFINITY;
    for iteration in 0..=MAX_ITERATIONS {
        let (v, current, f) = mismatch(&vm, &va);
        let norm = f.amax();
        if !norm.is_finite() {
            return Err(Error::NonConvergence { iterations: iteration, mismatch: norm });
        }
        best = best.min(norm);
        if norm < TARGET_MISMATCH || (iteration == MAX_ITERATIONS && norm < MISMATCH_TOLERANCE) {
            return Ok((v.iter().copied().collect(), norm));
        }
        if iteration == MAX_ITERATIONS {
            break;
        }
        // Complex power sensitivities:
        //   dS/dVa = j diag(V) conj(diag(I) - Y diag(V))
        //   dS/dVm = diag(V) conj(Y diag(V/|V|)) + conj(diag(I)) diag(V/|V|)
        let unit: Vec<Complex64> = (0..n).map(|i| v[i] / vm[i]).collect();
        let jac_entry = |i: usize, k: usize| -> (Complex64, Complex64) {
            let yik = y[(i, k)];
            let mut d_va = -v[i] * (yik * v[k]).conj();
            let mut d_vm = v[i] * (yik * unit[k]).conj();
            if i == k {
                d_va += v[i] * current[i].conj();
                d_vm += current[i].conj() * unit[i];
            }
            (Complex64::new(0.0, 1.0) * d_va, d_vm)
        };
        let mut jac = DMatrix::<f64>::zeros(na + nm, na + nm);
        for (r, &i) in angle_idx.iter().enumerate() {
            for (c, &k) in angle_idx.iter().enumerate() {
                jac[(r, c)] = jac_entry(i, k).0.re;
            }
            for (c, &k) in mag_idx.iter().enumerate() {
                jac[(r, na + c)] = jac_entry(i, k).1.re;
            }
        }
        for (r, &i) in mag_idx.iter().enumerate() {
            for (c, &k) in angle_idx.iter().enumerate() {
                jac[(na + r, c)] = jac_entry(i, k).0.im;
            }
            for (c, &k) in mag_idx.iter().enumerate() {
                jac[(na + r, na + c)] = jac_entry(i, k).1.im;
            }
        }
        let dx = jac
            .lu()
            .solve(&(-f))
            .ok_or(Error::NonConvergence { iterations: iteration, mismatch: norm })?;
        for (r, &i) in angle_idx.iter().enumerate() {
            va[i] += dx[r];
        }
        for (r, &i) in mag_idx.iter().enumerate() {
            vm[i] += dx[na + r];
        }
    }
    Err(Error::NonConvergence { iterations: MAX_ITERATIONS, mismatch: best })
}

/// Solves the pre-fault operating point with every load's motor share set
/// to `motor_fraction`.
pub fn solve_equilibrium(network: &Network, motor_fraction: f64) -> Result<EquilibriumState> {
    if !(0.0..=1.0).contains(&motor_fraction) {
        return Err(Error::InvalidArgument(format!("motor fraction {motor_fraction} outside [0, 1]")));
    }
    let n = network.bus_count();
    let ng = network.generators.len();
    let slack = network.slack_bus();
    let slack_gen = network
        .generators
        .iter()
        .position(|g| g.bus == slack)
        .ok_or_else(|| Error::Validation("slack bus has no generator".into()))?;

    // Augmented network: terminals 0..n, internal EMF nodes n..n+ng.
    let y_net = build_admittance(network, Topology::Prefault)?.matrix;
    let dim = n + ng;
    let mut y = DMatrix::<Complex64>::zeros(dim, dim);
    y.view_mut((0, 0), (n, n)).copy_from(&y_net);
    for (i, g) in network.generators.iter().enumerate() {
        let ys = Complex64::new(0.0, g.xd_prime).inv();
        let k = n + i;
        y[(g.bus, g.bus)] += ys;
        y[(k, k)] += ys;
        y[(g.bus, k)] -= ys;
        y[(k, g.bus)] -= ys;
    }
    let mut p_spec = vec![0.0; dim];
    let mut q_spec = vec![0.0; dim];
    for load in &network.loads {
        p_spec[load.bus] -= load.p_total;
        q_spec[load.bus] -= load.q_total;
    }
    let mut pq = vec![true; dim];
    let mut v0 = vec![Complex64::new(1.0, 0.0); dim];
    for (i, g) in network.generators.iter().enumerate() {
        p_spec[n + i] = g.p_mech;
        pq[n + i] = false;
        v0[n + i] = Complex64::new(g.e_prime_mag, 0.0);
    }
    let reference = n + slack_gen;
    let (v, mismatch_norm) = newton_power_flow(&y, &v0, reference, &pq, &p_spec, &q_spec)?;
    if mismatch_norm >= MISMATCH_TOLERANCE {
        return Err(Error::NonConvergence { iterations: MAX_ITERATIONS, mismatch: mismatch_norm });
    }
    let bus_voltages: Vec<Complex64> = v[..n].to_vec();
    let generator_angles: Vec<f64> = (0..ng).map(|i| v[n + i].arg()).collect();

    // Split each load into a motor drawing its share at the solved voltage
    // and a constant admittance carrying the remainder.
    let mut motors = Vec::new();
    let mut load_admittances = Vec::new();
    for load in &network.loads {
        let vb = bus_voltages[load.bus];
        let vmag = vb.norm();
        let mut s_rest = Complex64::new(load.p_total, load.q_total);
        let p_motor = motor_fraction * load.p_total;
        if p_motor > 0.0 {
            let params = load.motor_params;
            let slip = motor::operating_slip(&params, vmag, 1.0).ok_or_else(|| {
                Error::Infeasible(format!(
                    "motor at bus {} cannot draw its share at {vmag:.4} pu",
                    load.bus
                ))
            })?;
            let y_motor = motor::input_admittance(&params, slip) * p_motor;
            s_rest -= (y_motor * vb).conj() * vb;
            motors.push(MotorState {
                bus: load.bus,
                base: p_motor,
                params,
                initial_slip: slip,
                load_torque: 0.0,
            });
        }
        load_admittances.push((load.bus, s_rest.conj() / (vmag * vmag)));
    }

    let mut eq = EquilibriumState {
        bus_voltages,
        generator_angles,
        p_mech: vec![0.0; ng],
        motor_slips: motors.iter().map(|m| m.initial_slip).collect(),
        motors,
        load_admittances,
        motor_fraction,
        mismatch_norm,
    };

    // Close the loop through the dynamic model so that t = 0 is an exact
    // fixed point of the simulator.
    let dynamic = prefault_network(network, &eq)?;
    let v_dyn = dynamic.solve(&eq.generator_angles, &eq.motor_slips, &eq.motors)?;
    let drift = (0..n).map(|i| (v_dyn[i] - eq.bus_voltages[i]).norm()).fold(0.0, f64::max);
    if drift > 1e-6 {
        return Err(Error::Infeasible(format!(
            "dynamic initialization disagrees with power flow by {drift:e}"
        )));
    }
    eq.p_mech = dynamic.electrical_power(&eq.generator_angles, &v_dyn);
    for m in eq.motors.iter_mut() {
        m.load_torque = motor::electrical_torque(&m.params, v_dyn[m.bus].norm(), m.initial_slip);
    }
    eq.bus_voltages = (0..n).map(|i| v_dyn[i]).collect();
    Ok(eq)
}
