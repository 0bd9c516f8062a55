use std::f64::consts::PI;

use crate::tds::Trace;
use crate::{Error, Result};

/// Per-bus feature matrix, row-major `n_buses x 2T`: the first `T` columns
/// are voltage magnitudes, the last `T` angles relative to the slack bus.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatures {
    pub n_buses: usize,
    pub window: usize,
    pub values: Vec<f32>,
    /// Some value was out of range or non-finite and got clamped.
    pub clamped: bool,
}

impl NodeFeatures {
    pub fn width(&self) -> usize {
        2 * self.window
    }

    pub fn row(&self, bus: usize) -> &[f32] {
        &self.values[bus * self.width()..(bus + 1) * self.width()]
    }
}

pub const V_MAG_MAX: f64 = 2.0;

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let w = a - 2.0 * PI * ((a + PI) / (2.0 * PI)).floor();
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// Builds features from raw snapshots: `v_mag[k]` and `v_ang[k]` hold all
/// buses at window step `k`.
pub fn features_from_snapshots(v_mag: &[&[f64]], v_ang: &[&[f64]], slack_bus: usize) -> Result<NodeFeatures> {
    let window = v_mag.len();
    if window == 0 || v_ang.len() != window {
        return Err(Error::Shape("feature window needs matching nonempty snapshots".into()));
    }
    let n = v_mag[0].len();
    if v_mag.iter().chain(v_ang).any(|row| row.len() != n) || slack_bus >= n {
        return Err(Error::Shape("snapshot widths differ".into()));
    }
    let width = 2 * window;
    let mut values = vec![0f32; n * width];
    let mut clamped = false;
    for bus in 0..n {
        let row = &mut values[bus * width..(bus + 1) * width];
        let mut prev: Option<f64> = None;
        for k in 0..window {
            let m = v_mag[k][bus];
            let m = if m.is_finite() {
                if !(0.0..=V_MAG_MAX).contains(&m) {
                    clamped = true;
                }
                m.clamp(0.0, V_MAG_MAX)
            } else {
                clamped = true;
                0.0
            };
            row[k] = m as f32;

            let rel = v_ang[k][bus] - v_ang[k][slack_bus];
            let a = if rel.is_finite() {
                let w = wrap_angle(rel);
                match prev {
                    Some(p) => w + 2.0 * PI * ((p - w) / (2.0 * PI)).round(),
                    None => w,
                }
            } else {
                clamped = true;
                prev.unwrap_or(0.0)
            };
            prev = Some(a);
            row[window + k] = a as f32;
        }
    }
    Ok(NodeFeatures { n_buses: n, window, values, clamped })
}

/// Features over steps `start..start + window` of `trace`.
pub fn extract_features(trace: &Trace, start: usize, window: usize) -> Result<NodeFeatures> {
    if window == 0 {
        return Err(Error::InvalidArgument("feature window must be at least one step".into()));
    }
    if start + window > trace.len() {
        return Err(Error::InvalidArgument(format!(
            "trace has {} steps, window needs {}",
            trace.len(),
            start + window
        )));
    }
    let mags: Vec<&[f64]> = (start..start + window).map(|k| trace.v_mag_at(k)).collect();
    let angs: Vec<&[f64]> = (start..start + window).map(|k| trace.v_ang_at(k)).collect();
    features_from_snapshots(&mags, &angs, trace.slack_bus)
}

/// Like [`extract_features`], but a trace cut short by divergence is padded
/// by holding its last sample; padding marks the features as clamped.
pub(crate) fn extract_features_padded(trace: &Trace, start: usize, window: usize) -> Result<NodeFeatures> {
    if start + window <= trace.len() || trace.is_empty() {
        return extract_features(trace, start, window);
    }
    let last = trace.len() - 1;
    let mags: Vec<&[f64]> = (start..start + window).map(|k| trace.v_mag_at(k.min(last))).collect();
    let angs: Vec<&[f64]> = (start..start + window).map(|k| trace.v_ang_at(k.min(last))).collect();
    let mut f = features_from_snapshots(&mags, &angs, trace.slack_bus)?;
    f.clamped = true;
    Ok(f)
}
