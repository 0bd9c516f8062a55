use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use super::{
    BuildConfig, Dataset, GridScenario, NodeFeatures, Sample, SampleLabels, ScenarioFailure, FLAG_CLAMPED,
    FLAG_DIVERGED, FLAG_ISLANDED, FLAG_NON_MONOTONE, FLAG_TAS_ABOVE, FLAG_TAS_BELOW, FLAG_TVS_ABOVE,
    FLAG_TVS_BELOW,
};
use crate::grid::{Adjacency, Network};
use crate::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"TSD1";
pub const SCHEMA_VERSION: u32 = 1;
/// Leading per-record values before the features.
pub const META_FIELDS: usize = 14;

/// Shortest decimal that reads back as `v`, parsed at f64 precision. Short
/// decimal grid values such as 0.1 come back exactly.
fn widen(v: f32) -> f64 {
    v.to_string().parse().expect("float display parses")
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn flag(b: bool) -> f32 {
    if b {
        1.0
    } else {
        0.0
    }
}

impl Dataset {
    pub fn record_len(&self) -> usize {
        META_FIELDS + self.n_buses * 2 * self.window + self.n_buses * self.n_buses
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(DATASET_MAGIC)?;
        for v in [self.samples.len() as u32, self.n_buses as u32, self.window as u32, SCHEMA_VERSION] {
            w.write_all(&v.to_le_bytes())?;
        }
        let mut rec: Vec<f32> = Vec::with_capacity(self.record_len());
        let mut bytes: Vec<u8> = Vec::with_capacity(4 * self.record_len());
        for s in &self.samples {
            if s.features.n_buses != self.n_buses || s.features.window != self.window || s.adjacency.len() != self.n_buses
            {
                return Err(Error::Shape(format!("sample {} does not match dataset dimensions", s.scenario.id)));
            }
            let (sc, l) = (&s.scenario, &s.labels);
            rec.clear();
            rec.extend_from_slice(&[
                sc.id as f32,
                sc.line as f32,
                sc.location_fraction as f32,
                sc.motor_fraction as f32,
                sc.clearing_cycles as f32,
                flag(l.tas_stable),
                flag(l.tvs_stable),
                l.tas_target as f32,
                l.tvs_target as f32,
                l.tsi_deg as f32,
                l.v_min_pu as f32,
                l.tas_cct_s as f32,
                l.tvs_cct_s as f32,
                l.flags as f32,
            ]);
            rec.extend_from_slice(&s.features.values);
            rec.extend(s.adjacency.to_f32());
            bytes.clear();
            for v in &rec {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&bytes)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != DATASET_MAGIC {
            return Err(Error::Format("not a TSD1 dataset".into()));
        }
        let count = read_u32(&mut r)? as usize;
        let n_buses = read_u32(&mut r)? as usize;
        let window = read_u32(&mut r)? as usize;
        let version = read_u32(&mut r)?;
        if version != SCHEMA_VERSION {
            return Err(Error::Format(format!("unsupported dataset schema version {version}")));
        }
        let mut ds = Dataset { n_buses, window, samples: Vec::with_capacity(count) };
        let width = 2 * window;
        let mut bytes = vec![0u8; 4 * ds.record_len()];
        for _ in 0..count {
            r.read_exact(&mut bytes)?;
            let rec: Vec<f32> =
                bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            let flags = rec[13] as u32;
            let features = NodeFeatures {
                n_buses,
                window,
                values: rec[META_FIELDS..META_FIELDS + n_buses * width].to_vec(),
                clamped: flags & FLAG_CLAMPED != 0,
            };
            let adjacency = Adjacency::from_values(n_buses, &rec[META_FIELDS + n_buses * width..])?;
            ds.samples.push(Sample {
                scenario: GridScenario {
                    id: rec[0] as usize,
                    line: rec[1] as usize,
                    location_fraction: widen(rec[2]),
                    motor_fraction: widen(rec[3]),
                    clearing_cycles: rec[4] as u32,
                },
                features,
                adjacency,
                labels: SampleLabels {
                    tas_stable: rec[5] != 0.0,
                    tvs_stable: rec[6] != 0.0,
                    tas_target: rec[7] as f64,
                    tvs_target: rec[8] as f64,
                    tsi_deg: rec[9] as f64,
                    v_min_pu: rec[10] as f64,
                    tas_cct_s: rec[11] as f64,
                    tvs_cct_s: rec[12] as f64,
                    flags,
                },
            });
        }
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// One row per sample: ids, classes, raw criteria, CCTs, signed targets
    /// and saturation flags.
    pub fn labels_csv(&self) -> String {
        let mut out = String::from(
            "scenario_id,tas_stable,tvs_stable,tsi_deg,v_min_pu,tas_cct_s,tvs_cct_s,\
             tas_margin_or_degree,tvs_margin_or_degree,saturation_flags\n",
        );
        for s in &self.samples {
            let l = &s.labels;
            let mut sat = Vec::new();
            for (bit, name) in [
                (FLAG_TAS_BELOW, "tas_below"),
                (FLAG_TAS_ABOVE, "tas_above"),
                (FLAG_TVS_BELOW, "tvs_below"),
                (FLAG_TVS_ABOVE, "tvs_above"),
                (FLAG_CLAMPED, "clamped"),
                (FLAG_DIVERGED, "diverged"),
                (FLAG_ISLANDED, "islanded"),
                (FLAG_NON_MONOTONE, "non_monotone"),
            ] {
                if l.has(bit) {
                    sat.push(name);
                }
            }
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                s.scenario.id,
                u8::from(l.tas_stable),
                u8::from(l.tvs_stable),
                l.tsi_deg,
                l.v_min_pu,
                l.tas_cct_s,
                l.tvs_cct_s,
                l.tas_target,
                l.tvs_target,
                sat.join("|")
            );
        }
        out
    }
}

/// Ordered `key = value` record describing a dataset build.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_usize(&self, key: &str) -> Option<usize> {
        self.get(key)?.parse().ok()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse { line: i + 1, message: "expected key = value".into() })?;
            m.set(k.trim(), v.trim());
        }
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub(super) fn from_build(
        network: &Network,
        cfg: &BuildConfig,
        dataset: &Dataset,
        failures: &[ScenarioFailure],
    ) -> Self {
        let mut m = Manifest::default();
        let list = |v: Vec<String>| v.join(",");
        m.set("format", "TSD1");
        m.set("schema_version", SCHEMA_VERSION);
        m.set("config_hash", cfg.hash(network));
        m.set("seed", cfg.seed);
        m.set("grid.lines", list(cfg.grid.lines.iter().map(|x| x.to_string()).collect()));
        m.set("grid.location_fractions", list(cfg.grid.location_fractions.iter().map(|x| x.to_string()).collect()));
        m.set("grid.motor_fractions", list(cfg.grid.motor_fractions.iter().map(|x| x.to_string()).collect()));
        m.set("grid.clearing_cycles", list(cfg.grid.clearing_cycles.iter().map(|x| x.to_string()).collect()));
        m.set("window_steps", cfg.grid.window_steps);
        m.set("window_start", "fault_inception");
        m.set("adjacency", "postfault");
        m.set("cct.t_min_s", cfg.cct.t_min_s);
        m.set("cct.t_max_s", cfg.cct.t_max_s);
        m.set("cct.coarse_step_s", cfg.cct.coarse_step_s);
        m.set("cct.tolerance_s", cfg.cct.tolerance_s);
        m.set("n_buses", dataset.n_buses);
        m.set("scenarios", cfg.grid.scenario_count());
        m.set("samples", dataset.len());
        m.set("failed", failures.len());
        let ids: Vec<String> = failures.iter().map(|f| f.id.to_string()).collect();
        m.set("failed_ids", ids.join(","));
        let count = |f: &dyn Fn(&SampleLabels) -> bool| dataset.samples.iter().filter(|s| f(&s.labels)).count();
        m.set("tas_stable", count(&|l| l.tas_stable));
        m.set("tas_unstable", count(&|l| !l.tas_stable));
        m.set("tvs_stable", count(&|l| l.tvs_stable));
        m.set("tvs_unstable", count(&|l| !l.tvs_stable));
        for (a, b) in [(true, true), (true, false), (false, true), (false, false)] {
            let key = format!("joint.tas_{}_tvs_{}", if a { "s" } else { "u" }, if b { "s" } else { "u" });
            m.set(&key, count(&|l| l.joint_class() == (a, b)));
        }
        for (name, bit) in [
            ("diverged", FLAG_DIVERGED),
            ("islanded", FLAG_ISLANDED),
            ("clamped", FLAG_CLAMPED),
            ("tas_cct_below_bracket", FLAG_TAS_BELOW),
            ("tas_cct_above_bracket", FLAG_TAS_ABOVE),
            ("tvs_cct_below_bracket", FLAG_TVS_BELOW),
            ("tvs_cct_above_bracket", FLAG_TVS_ABOVE),
            ("non_monotone", FLAG_NON_MONOTONE),
        ] {
            m.set(name, count(&|l| l.has(bit)));
        }
        m
    }
}
