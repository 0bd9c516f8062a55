//! Simulated time series and their binary/CSV export.

use std::fmt::Write as _;
use std::io::{Read, Write};

use num_complex::Complex64;

use crate::grid::Network;
use crate::{Error, Result};

pub const TRACE_MAGIC: &[u8; 4] = b"TSA1";

/// Time series of one simulation. Per-step quantities are stored row-major
/// (step, element).
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub step_s: f64,
    pub n_buses: usize,
    pub n_generators: usize,
    pub n_motors: usize,
    pub times: Vec<f64>,
    pub rotor_angles: Vec<f64>,
    pub bus_v_mag: Vec<f64>,
    pub bus_v_ang: Vec<f64>,
    pub motor_slips: Vec<f64>,
    pub diverged: bool,
    /// The post-fault topology splits the network.
    pub islanded: bool,
    /// First sample showing the faulted topology.
    pub fault_step: Option<usize>,
    /// First sample showing the post-fault topology.
    pub clear_step: Option<usize>,
    pub clear_time_s: Option<f64>,
    pub load_buses: Vec<usize>,
    pub slack_bus: usize,
}

impl Trace {
    pub(crate) fn new(network: &Network, n_motors: usize, step_s: f64) -> Self {
        Self {
            step_s,
            n_buses: network.bus_count(),
            n_generators: network.generators.len(),
            n_motors,
            times: Vec::new(),
            rotor_angles: Vec::new(),
            bus_v_mag: Vec::new(),
            bus_v_ang: Vec::new(),
            motor_slips: Vec::new(),
            diverged: false,
            islanded: false,
            fault_step: None,
            clear_step: None,
            clear_time_s: None,
            load_buses: network.load_buses(),
            slack_bus: network.slack_bus(),
        }
    }

    pub(crate) fn push(&mut self, t: f64, angles: &[f64], v: &[Complex64], slips: &[f64]) {
        self.times.push(t);
        self.rotor_angles.extend_from_slice(angles);
        self.bus_v_mag.extend(v.iter().map(|c| c.norm()));
        self.bus_v_ang.extend(v.iter().map(|c| c.arg()));
        self.motor_slips.extend_from_slice(slips);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn angles_at(&self, step: usize) -> &[f64] {
        &self.rotor_angles[step * self.n_generators..(step + 1) * self.n_generators]
    }

    pub fn v_mag_at(&self, step: usize) -> &[f64] {
        &self.bus_v_mag[step * self.n_buses..(step + 1) * self.n_buses]
    }

    pub fn v_ang_at(&self, step: usize) -> &[f64] {
        &self.bus_v_ang[step * self.n_buses..(step + 1) * self.n_buses]
    }

    pub fn slips_at(&self, step: usize) -> &[f64] {
        &self.motor_slips[step * self.n_motors..(step + 1) * self.n_motors]
    }

    /// Binary export: magic, counts, step, flags, event steps, then one
    /// record per step of little-endian f32 values
    /// `t, |V|[n], angle[n], delta[g], slip[m]`.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(TRACE_MAGIC)?;
        for v in [self.n_buses, self.n_generators, self.n_motors, self.len()] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        w.write_all(&(self.step_s as f32).to_le_bytes())?;
        w.write_all(&[u8::from(self.diverged) | (u8::from(self.islanded) << 1)])?;
        for s in [self.fault_step, self.clear_step] {
            w.write_all(&s.map_or(-1i32, |v| v as i32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(4 * (1 + 2 * self.n_buses + self.n_generators + self.n_motors));
        for k in 0..self.len() {
            buf.clear();
            let values = std::iter::once(self.times[k])
                .chain(self.v_mag_at(k).iter().copied())
                .chain(self.v_ang_at(k).iter().copied())
                .chain(self.angles_at(k).iter().copied())
                .chain(self.slips_at(k).iter().copied());
            for v in values {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    /// Reads a binary trace. Values come back at f32 precision; bus metadata
    /// not stored in the file (load buses, slack) is left empty/zero.
    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != TRACE_MAGIC {
            return Err(Error::Format("not a TSA1 trace".into()));
        }
        let mut u32s = [0usize; 4];
        for v in u32s.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *v = u32::from_le_bytes(b) as usize;
        }
        let [n_buses, n_generators, n_motors, len] = u32s;
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let step_s = f32::from_le_bytes(b4) as f64;
        let mut flags = [0u8; 1];
        r.read_exact(&mut flags)?;
        let mut steps = [None, None];
        for s in steps.iter_mut() {
            r.read_exact(&mut b4)?;
            let v = i32::from_le_bytes(b4);
            *s = (v >= 0).then_some(v as usize);
        }
        let mut trace = Trace {
            step_s,
            n_buses,
            n_generators,
            n_motors,
            times: Vec::with_capacity(len),
            rotor_angles: Vec::new(),
            bus_v_mag: Vec::new(),
            bus_v_ang: Vec::new(),
            motor_slips: Vec::new(),
            diverged: flags[0] & 1 != 0,
            islanded: flags[0] & 2 != 0,
            fault_step: steps[0],
            clear_step: steps[1],
            clear_time_s: None,
            load_buses: Vec::new(),
            slack_bus: 0,
        };
        let width = 1 + 2 * n_buses + n_generators + n_motors;
        let mut rec = vec![0u8; 4 * width];
        for _ in 0..len {
            r.read_exact(&mut rec)?;
            let vals: Vec<f64> = rec
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            trace.times.push(vals[0]);
            let mut at = 1;
            trace.bus_v_mag.extend_from_slice(&vals[at..at + n_buses]);
            at += n_buses;
            trace.bus_v_ang.extend_from_slice(&vals[at..at + n_buses]);
            at += n_buses;
            trace.rotor_angles.extend_from_slice(&vals[at..at + n_generators]);
            at += n_generators;
            trace.motor_slips.extend_from_slice(&vals[at..at + n_motors]);
        }
        Ok(trace)
    }

    /// CSV export for debugging.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for i in 0..self.n_buses {
            let _ = write!(out, ",vm_{i}");
        }
        for i in 0..self.n_buses {
            let _ = write!(out, ",va_{i}");
        }
        for i in 0..self.n_generators {
            let _ = write!(out, ",delta_{i}");
        }
        for i in 0..self.n_motors {
            let _ = write!(out, ",slip_{i}");
        }
        out.push('\n');
        for k in 0..self.len() {
            let _ = write!(out, "{}", self.times[k]);
            for v in self
                .v_mag_at(k)
                .iter()
                .chain(self.v_ang_at(k))
                .chain(self.angles_at(k))
                .chain(self.slips_at(k))
            {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}
