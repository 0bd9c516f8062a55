//! Line-oriented network file format.
//!
//! ```text
//! # comment
//! SYSTEM
//! base_mva, nominal_hz
//! BUS
//! id, base_kv, kind, shunt_g, shunt_b
//! LINE
//! from, to, r, x, b, transformer
//! GEN
//! bus, inertia_h, damping_d, xd_prime, p_mech, e_prime_mag
//! LOAD
//! bus, p, q, motor_fraction, stator_r, stator_x, rotor_r, rotor_x,
//!     magnetizing_x, motor_inertia_h, load_torque_exponent
//! ```
//!
//! A bare keyword starts a section; `#` starts a comment anywhere on a line.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;

use super::{Bus, BusKind, CompositeLoad, Generator, Line, MotorParams, Network};
use crate::{Error, Result};

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    System,
    Bus,
    Line,
    Gen,
    Load,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

fn num(field: &str, line: usize, what: &str) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|_| parse_err(line, format!("cannot parse {what} from '{field}'")))
}

fn index(field: &str, line: usize, what: &str) -> Result<usize> {
    field
        .parse::<usize>()
        .map_err(|_| parse_err(line, format!("cannot parse {what} from '{field}'")))
}

fn expect_fields<'a>(
    fields: &'a [&'a str],
    count: usize,
    line: usize,
    section: &str,
) -> Result<&'a [&'a str]> {
    if fields.len() != count {
        return Err(parse_err(
            line,
            format!("{section} record needs {count} fields, found {}", fields.len()),
        ));
    }
    Ok(fields)
}

/// Parses and validates a network description.
pub fn parse_network(text: &str) -> Result<Network> {
    let mut section = Section::None;
    let mut system: Option<(f64, f64)> = None;
    let mut buses = Vec::new();
    let mut lines = Vec::new();
    let mut generators = Vec::new();
    let mut loads = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        match content.to_ascii_uppercase().as_str() {
            "SYSTEM" => {
                section = Section::System;
                continue;
            }
            "BUS" => {
                section = Section::Bus;
                continue;
            }
            "LINE" => {
                section = Section::Line;
                continue;
            }
            "GEN" => {
                section = Section::Gen;
                continue;
            }
            "LOAD" => {
                section = Section::Load;
                continue;
            }
            _ => {}
        }
        let fields: Vec<&str> = content.split(',').map(str::trim).collect();
        match section {
            Section::None => {
                return Err(parse_err(lineno, "record outside of any section"));
            }
            Section::System => {
                let f = expect_fields(&fields, 2, lineno, "SYSTEM")?;
                if system.is_some() {
                    return Err(parse_err(lineno, "duplicate SYSTEM record"));
                }
                system = Some((num(f[0], lineno, "base_mva")?, num(f[1], lineno, "nominal_hz")?));
            }
            Section::Bus => {
                let f = expect_fields(&fields, 5, lineno, "BUS")?;
                let kind = f[2].parse::<BusKind>().map_err(|e| parse_err(lineno, e))?;
                buses.push(Bus {
                    id: index(f[0], lineno, "bus id")?,
                    base_kv: num(f[1], lineno, "base_kv")?,
                    kind,
                    shunt: Complex64::new(
                        num(f[3], lineno, "shunt_g")?,
                        num(f[4], lineno, "shunt_b")?,
                    ),
                });
            }
            Section::Line => {
                let f = expect_fields(&fields, 6, lineno, "LINE")?;
                let has_transformer = match f[5] {
                    "0" | "false" => false,
                    "1" | "true" => true,
                    other => {
                        return Err(parse_err(lineno, format!("bad transformer flag '{other}'")))
                    }
                };
                lines.push(Line {
                    from_bus: index(f[0], lineno, "from bus")?,
                    to_bus: index(f[1], lineno, "to bus")?,
                    series_impedance: Complex64::new(
                        num(f[2], lineno, "r")?,
                        num(f[3], lineno, "x")?,
                    ),
                    charging_susceptance: num(f[4], lineno, "b")?,
                    has_transformer,
                });
            }
            Section::Gen => {
                let f = expect_fields(&fields, 6, lineno, "GEN")?;
                generators.push(Generator {
                    bus: index(f[0], lineno, "generator bus")?,
                    inertia_h: num(f[1], lineno, "inertia_h")?,
                    damping_d: num(f[2], lineno, "damping_d")?,
                    xd_prime: num(f[3], lineno, "xd_prime")?,
                    p_mech: num(f[4], lineno, "p_mech")?,
                    e_prime_mag: num(f[5], lineno, "e_prime_mag")?,
                });
            }
            Section::Load => {
                let f = expect_fields(&fields, 11, lineno, "LOAD")?;
                loads.push(CompositeLoad {
                    bus: index(f[0], lineno, "load bus")?,
                    p_total: num(f[1], lineno, "p")?,
                    q_total: num(f[2], lineno, "q")?,
                    motor_fraction: num(f[3], lineno, "motor_fraction")?,
                    motor_params: MotorParams {
                        stator_r: num(f[4], lineno, "stator_r")?,
                        stator_x: num(f[5], lineno, "stator_x")?,
                        rotor_r: num(f[6], lineno, "rotor_r")?,
                        rotor_x: num(f[7], lineno, "rotor_x")?,
                        magnetizing_x: num(f[8], lineno, "magnetizing_x")?,
                        inertia_h: num(f[9], lineno, "motor inertia_h")?,
                        load_torque_exponent: num(f[10], lineno, "load_torque_exponent")?,
                    },
                });
            }
        }
    }

    let (base_mva, nominal_hz) = system.unwrap_or((100.0, 60.0));
    let network = Network { buses, lines, generators, loads, base_mva, nominal_hz };
    network.validate()?;
    Ok(network)
}

/// Reads a network file from disk.
pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    let text = std::fs::read_to_string(path)?;
    parse_network(&text)
}

/// Serializes a network. Floats are written in shortest round-trip form.
pub fn write_network(network: &Network) -> String {
    let mut out = String::new();
    out.push_str("# network file\nSYSTEM\n");
    let _ = writeln!(out, "{}, {}", network.base_mva, network.nominal_hz);
    out.push_str("BUS\n");
    for b in &network.buses {
        let _ = writeln!(
            out,
            "{}, {}, {}, {}, {}",
            b.id,
            b.base_kv,
            b.kind.as_str(),
            b.shunt.re,
            b.shunt.im
        );
    }
    out.push_str("LINE\n");
    for l in &network.lines {
        let _ = writeln!(
            out,
            "{}, {}, {}, {}, {}, {}",
            l.from_bus,
            l.to_bus,
            l.series_impedance.re,
            l.series_impedance.im,
            l.charging_susceptance,
            u8::from(l.has_transformer)
        );
    }
    out.push_str("GEN\n");
    for g in &network.generators {
        let _ = writeln!(
            out,
            "{}, {}, {}, {}, {}, {}",
            g.bus, g.inertia_h, g.damping_d, g.xd_prime, g.p_mech, g.e_prime_mag
        );
    }
    out.push_str("LOAD\n");
    for l in &network.loads {
        let m = &l.motor_params;
        let _ = writeln!(
            out,
            "{}, {}, {}, {}, {}, {}, {}, {}, {}, {}, {}",
            l.bus,
            l.p_total,
            l.q_total,
            l.motor_fraction,
            m.stator_r,
            m.stator_x,
            m.rotor_r,
            m.rotor_x,
            m.magnetizing_x,
            m.inertia_h,
            m.load_torque_exponent
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const TWO_BUS: &str = "\
SYSTEM
100, 60
BUS
0, 345, slack, 0, 0
1, 345, pq, 0, 0
LINE
0, 1, 0.0, 0.1, 0.0, 0
GEN
0, 5.0, 1.0, 0.2, 0.0, 1.0
";

    #[test]
    fn two_bus_minimal() {
        let net = parse_network(TWO_BUS).unwrap();
        assert_eq!(net.buses.len(), 2);
        assert_eq!(net.lines.len(), 1);
        assert_eq!(net.generators.len(), 1);
        assert!(net.loads.is_empty());
    }

    #[test]
    fn new_england_counts() {
        let net = Network::new_england_39();
        assert_eq!(net.buses.len(), 39);
        assert_eq!(net.generators.len(), 10);
        assert_eq!(net.lines.len(), 46);
        assert_eq!(net.fault_eligible_lines().len(), 34);
    }

    #[test]
    fn duplicate_bus_rejected() {
        let text = TWO_BUS.replace("1, 345, pq", "0, 345, pq");
        match parse_network(&text) {
            Err(Error::Validation(msg)) => assert!(msg.contains("duplicate"), "{msg}"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn parse_error_reports_line() {
        let text = TWO_BUS.replace("0, 1, 0.0, 0.1, 0.0, 0", "0, 1, zero, 0.1, 0.0, 0");
        match parse_network(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn two_slack_buses_rejected() {
        let text = TWO_BUS.replace("1, 345, pq", "1, 345, slack");
        assert!(matches!(parse_network(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn disconnected_rejected() {
        let text = TWO_BUS.replace("LINE\n0, 1, 0.0, 0.1, 0.0, 0\n", "");
        assert!(matches!(parse_network(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn writer_round_trips_bundled_case() {
        let net = Network::new_england_39();
        let again = parse_network(&write_network(&net)).unwrap();
        assert_eq!(net, again);
    }

    proptest::proptest! {
        #[test]
        fn numeric_round_trip(r in 1e-6f64..1.0, x in 1e-6f64..1.0, b in 0.0f64..2.0, h in 0.1f64..600.0) {
            let mut net = parse_network(TWO_BUS).unwrap();
            net.lines[0].series_impedance = Complex64::new(r, x);
            net.lines[0].charging_susceptance = b;
            net.generators[0].inertia_h = h;
            let again = parse_network(&write_network(&net)).unwrap();
            proptest::prop_assert_eq!(net, again);
        }
    }
}
