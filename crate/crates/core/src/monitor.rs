//! Online assessment over a stream of voltage snapshots.
//!
//! Stream lines are one of
//!
//! * `t,<v_mag_0>,...,<v_mag_{n-1}>,<v_ang_0>,...,<v_ang_{n-1}>`: a snapshot
//!   at time `t` seconds, magnitudes in pu and angles in radians;
//! * `topo,open,<line>` or `topo,close,<line>`: a branch switching;
//! * blank lines and lines starting with `#`, which are ignored.

use std::collections::{BTreeSet, VecDeque};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::dataset::{extract_features, features_from_snapshots};
use crate::grid::{Adjacency, Network};
use crate::nn::{GraphInput, Model, ModelOutput};
use crate::tds::Trace;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Stable,
    Unstable,
}

impl Decision {
    fn from_stable(stable: bool) -> Self {
        if stable {
            Decision::Stable
        } else {
            Decision::Unstable
        }
    }
}

/// One assessment. The values are margins for a stable decision and
/// instability degrees for an unstable one, both in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorEvent {
    pub timestamp: f64,
    pub tas_decision: Decision,
    pub tvs_decision: Decision,
    pub tas_value: f64,
    pub tvs_value: f64,
    pub gate_weights: Vec<Vec<f64>>,
}

fn value_for(decision: Decision, signed: f64) -> f64 {
    match decision {
        Decision::Stable => signed.clamp(0.0, 1.0),
        Decision::Unstable => (-signed).clamp(0.0, 1.0),
    }
}

impl MonitorEvent {
    pub fn from_output(timestamp: f64, out: &ModelOutput) -> Self {
        let tas_decision = Decision::from_stable(out.tas_stable());
        let tvs_decision = Decision::from_stable(out.tvs_stable());
        Self {
            timestamp,
            tas_decision,
            tvs_decision,
            tas_value: value_for(tas_decision, out.tas_margin),
            tvs_value: value_for(tvs_decision, out.tvs_margin),
            gate_weights: out.gate_weights.to_vec(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("event serializes")
    }

    pub fn from_json(line: &str) -> Result<Self> {
        serde_json::from_str(line).map_err(|e| Error::Format(format!("bad event line: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StreamRecord {
    Snapshot { t: f64, v_mag: Vec<f64>, v_ang: Vec<f64> },
    Open(usize),
    Close(usize),
}

/// Parses one stream line; `None` for blank and comment lines.
pub fn parse_record(line: &str, n_buses: usize) -> Result<Option<StreamRecord>> {
    let line = line.trim();
    if line.is_empty() || line.starts_with('#') {
        return Ok(None);
    }
    let bad = |m: String| Error::Parse { line: 0, message: m };
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields[0] == "topo" {
        if fields.len() != 3 {
            return Err(bad("topology record needs an action and a line".into()));
        }
        let idx: usize = fields[2].parse().map_err(|_| bad(format!("bad line index {:?}", fields[2])))?;
        return match fields[1] {
            "open" => Ok(Some(StreamRecord::Open(idx))),
            "close" => Ok(Some(StreamRecord::Close(idx))),
            other => Err(bad(format!("unknown topology action {other:?}"))),
        };
    }
    if fields.len() != 1 + 2 * n_buses {
        return Err(bad(format!("expected {} fields, found {}", 1 + 2 * n_buses, fields.len())));
    }
    let mut vals = Vec::with_capacity(fields.len());
    for f in &fields {
        let v: f64 = f.parse().map_err(|_| bad(format!("bad number {f:?}")))?;
        vals.push(v);
    }
    let t = vals[0];
    if !t.is_finite() {
        return Err(bad("non-finite timestamp".into()));
    }
    Ok(Some(StreamRecord::Snapshot {
        t,
        v_mag: vals[1..=n_buses].to_vec(),
        v_ang: vals[1 + n_buses..].to_vec(),
    }))
}

/// Sliding-window assessor.
#[derive(Debug, Clone)]
pub struct Monitor {
    model: Model,
    window: usize,
    n_buses: usize,
    slack_bus: usize,
    line_ends: Vec<(usize, usize)>,
    open: BTreeSet<usize>,
    adjacency: Adjacency,
    buffer: VecDeque<(f64, Vec<f64>, Vec<f64>)>,
}

impl Monitor {
    pub fn new(model: Model, network: &Network, window: usize) -> Result<Self> {
        if window == 0 || model.config.input_dim != 2 * window {
            return Err(Error::Shape(format!(
                "model expects {} features per node, a window of {window} gives {}",
                model.config.input_dim,
                2 * window
            )));
        }
        Ok(Self {
            model,
            window,
            n_buses: network.bus_count(),
            slack_bus: network.slack_bus(),
            line_ends: network.lines.iter().map(|l| (l.from_bus, l.to_bus)).collect(),
            open: BTreeSet::new(),
            adjacency: Adjacency::for_network(network, None),
            buffer: VecDeque::with_capacity(window + 1),
        })
    }

    pub fn n_buses(&self) -> usize {
        self.n_buses
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    fn rebuild(&mut self) {
        let edges = self.line_ends.iter().enumerate().filter(|(i, _)| !self.open.contains(i)).map(|(_, &e)| e);
        self.adjacency = Adjacency::from_edges(self.n_buses, edges);
    }

    /// Applies a record; returns an event once the window is full.
    pub fn push(&mut self, record: StreamRecord) -> Result<Option<MonitorEvent>> {
        match record {
            StreamRecord::Open(l) | StreamRecord::Close(l) if l >= self.line_ends.len() => {
                Err(Error::InvalidArgument(format!("line {l} does not exist")))
            }
            StreamRecord::Open(l) => {
                self.open.insert(l);
                self.rebuild();
                Ok(None)
            }
            StreamRecord::Close(l) => {
                self.open.remove(&l);
                self.rebuild();
                Ok(None)
            }
            StreamRecord::Snapshot { t, v_mag, v_ang } => {
                if v_mag.len() != self.n_buses || v_ang.len() != self.n_buses {
                    return Err(Error::Shape("snapshot width differs from the network".into()));
                }
                if self.buffer.len() == self.window {
                    self.buffer.pop_front();
                }
                self.buffer.push_back((t, v_mag, v_ang));
                if self.buffer.len() < self.window {
                    return Ok(None);
                }
                let mags: Vec<&[f64]> = self.buffer.iter().map(|s| s.1.as_slice()).collect();
                let angs: Vec<&[f64]> = self.buffer.iter().map(|s| s.2.as_slice()).collect();
                let f = features_from_snapshots(&mags, &angs, self.slack_bus)?;
                let x = GraphInput::from_features(&f, &self.adjacency)?;
                let out = self.model.forward(std::slice::from_ref(&x))?;
                Ok(Some(MonitorEvent::from_output(t, &out[0])))
            }
        }
    }

    pub fn push_line(&mut self, line: &str) -> Result<Option<MonitorEvent>> {
        match parse_record(line, self.n_buses)? {
            Some(r) => self.push(r),
            None => Ok(None),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunSummary {
    pub events: usize,
    pub skipped: usize,
}

/// Reads a stream to its end, writing one JSON line per event. Malformed
/// lines are skipped with a warning.
pub fn run_stream<R: BufRead, W: Write>(monitor: &mut Monitor, input: R, mut output: W) -> Result<RunSummary> {
    let mut summary = RunSummary::default();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        match monitor.push_line(&line) {
            Ok(Some(ev)) => {
                writeln!(output, "{}", ev.to_json())?;
                summary.events += 1;
            }
            Ok(None) => {}
            Err(e) => {
                log::warn!("stream line {}: {e}; skipped", i + 1);
                summary.skipped += 1;
            }
        }
    }
    output.flush()?;
    Ok(summary)
}

/// Writes `trace` as a stream. When `opened_line` is given, an open record
/// precedes the first post-clearing snapshot.
pub fn write_replay<W: Write>(trace: &Trace, opened_line: Option<usize>, mut out: W) -> Result<()> {
    let n = trace.n_buses;
    writeln!(out, "# t,v_mag_0..v_mag_{},v_ang_0..v_ang_{}", n - 1, n - 1)?;
    let mut line = String::new();
    for k in 0..trace.len() {
        if let (Some(l), Some(c)) = (opened_line, trace.clear_step) {
            if k == c {
                writeln!(out, "topo,open,{l}")?;
            }
        }
        line.clear();
        line.push_str(&trace.times[k].to_string());
        for v in trace.v_mag_at(k).iter().chain(trace.v_ang_at(k)) {
            line.push(',');
            line.push_str(&v.to_string());
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

/// Decisions computed directly from `trace` for every complete window,
/// using the post-fault topology from the clearing step on.
pub fn offline_events(
    model: &Model,
    network: &Network,
    trace: &Trace,
    opened_line: Option<usize>,
    window: usize,
) -> Result<Vec<MonitorEvent>> {
    if window == 0 || trace.len() < window {
        return Ok(Vec::new());
    }
    let pre = Adjacency::for_network(network, None);
    let post = opened_line.map(|l| Adjacency::for_network(network, Some(l)));
    let mut events = Vec::with_capacity(trace.len() + 1 - window);
    for end in window - 1..trace.len() {
        let adj = match (&post, trace.clear_step) {
            (Some(p), Some(c)) if end >= c => p,
            _ => &pre,
        };
        let f = extract_features(trace, end + 1 - window, window)?;
        let x = GraphInput::from_features(&f, adj)?;
        let out = model.forward(std::slice::from_ref(&x))?;
        events.push(MonitorEvent::from_output(trace.times[end], &out[0]));
    }
    Ok(events)
}
