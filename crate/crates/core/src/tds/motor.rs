//! Steady-state induction motor equivalent circuit.

use num_complex::Complex64;

use crate::grid::MotorParams;

const J: Complex64 = Complex64::new(0.0, 1.0);

/// Input admittance seen from the motor terminals (motor base).
pub(crate) fn input_admittance(p: &MotorParams, slip: f64) -> Complex64 {
    let (_, z_in, _) = branches(p, slip);
    z_in.inv()
}

/// Rotor branch admittance, parallel branch impedance and input impedance.
/// The rotor branch is written as `s / (rr + j s xr)`, which stays finite at
/// zero slip.
fn branches(p: &MotorParams, slip: f64) -> (Complex64, Complex64, Complex64) {
    let y_rotor = Complex64::new(slip, 0.0) / Complex64::new(p.rotor_r, slip * p.rotor_x);
    let y_mag = (J * p.magnetizing_x).inv();
    let z_par = (y_rotor + y_mag).inv();
    let z_in = Complex64::new(p.stator_r, p.stator_x) + z_par;
    (y_rotor, z_par, z_in)
}

/// Electrical (air-gap) torque at terminal voltage magnitude `v`, motor base.
pub(crate) fn electrical_torque(p: &MotorParams, v: f64, slip: f64) -> f64 {
    let (y_rotor, z_par, z_in) = branches(p, slip);
    let e_air = Complex64::new(v, 0.0) * z_par / z_in;
    e_air.norm_sqr() * y_rotor.re
}

/// Real power drawn at terminal voltage `v`, motor base.
pub(crate) fn input_power(p: &MotorParams, v: f64, slip: f64) -> f64 {
    v * v * input_admittance(p, slip).re
}

/// Mechanical load torque at `slip` given the torque `t0` at `slip0`.
pub(crate) fn load_torque(p: &MotorParams, t0: f64, slip0: f64, slip: f64) -> f64 {
    let speed = (1.0 - slip).max(0.0);
    let speed0 = 1.0 - slip0;
    if p.load_torque_exponent == 0.0 {
        t0
    } else {
        t0 * (speed / speed0).powf(p.load_torque_exponent)
    }
}

/// Slip at which the motor draws `target` real power (motor base) at
/// voltage `v`, on the stable side of the power-slip curve.
pub(crate) fn operating_slip(p: &MotorParams, v: f64, target: f64) -> Option<f64> {
    let mut lo = 0.0;
    let mut hi = 1e-5;
    while input_power(p, v, hi) < target {
        lo = hi;
        hi *= 1.05;
        if hi > 1.0 {
            return None;
        }
        // Past the peak of the power curve there is no stable solution.
        if input_power(p, v, hi) < input_power(p, v, lo) {
            return None;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if input_power(p, v, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Some(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn params() -> MotorParams {
        MotorParams {
            stator_r: 0.031,
            stator_x: 0.1,
            rotor_r: 0.018,
            rotor_x: 0.18,
            magnetizing_x: 3.2,
            inertia_h: 0.7,
            load_torque_exponent: 1.0,
        }
    }

    #[test]
    fn zero_slip_has_no_torque() {
        assert_eq!(electrical_torque(&params(), 1.0, 0.0), 0.0);
    }

    #[test]
    fn torque_matches_rotor_current_form() {
        // |I_r|^2 r_r / s computed from the textbook circuit.
        let p = params();
        let (v, s) = (0.95, 0.03);
        let zr = Complex64::new(p.rotor_r / s, p.rotor_x);
        let zm = Complex64::new(0.0, p.magnetizing_x);
        let zpar = zr * zm / (zr + zm);
        let i = Complex64::new(v, 0.0) / (Complex64::new(p.stator_r, p.stator_x) + zpar);
        let ir = i * zm / (zr + zm);
        let expected = ir.norm_sqr() * p.rotor_r / s;
        assert!((electrical_torque(&p, v, s) - expected).abs() < 1e-12);
    }

    #[test]
    fn operating_slip_hits_target() {
        let p = params();
        let s = operating_slip(&p, 1.0, 1.0).unwrap();
        assert!(s > 0.0 && s < 0.1, "{s}");
        assert!((input_power(&p, 1.0, s) - 1.0).abs() < 1e-10);
        assert!(operating_slip(&p, 0.2, 1.0).is_none());
    }
}
