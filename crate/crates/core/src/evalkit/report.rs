use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::metrics::{ate_rmse, maa, rra_rta, Alignment};
use super::trajectory::{match_frames, Trajectory};
use super::EvalError;

pub const DEFAULT_THRESHOLDS: [f64; 3] = [5.0, 15.0, 30.0];

/// Pose accuracy of one trajectory against ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub rra_at: BTreeMap<u32, f64>,
    pub rta_at: BTreeMap<u32, f64>,
    pub ate_rmse: f64,
    pub maa_at_30: f64,
    /// Fraction of ground-truth frames with an estimate.
    pub registered_fraction: f64,
    pub frames: usize,
}

fn threshold_key(t: f64) -> Result<u32, EvalError> {
    if t > 0.0 && t <= 180.0 && t.fract() == 0.0 {
        Ok(t as u32)
    } else {
        Err(EvalError::InvalidInput(format!("threshold {t} is not a whole number of degrees in (0, 180]")))
    }
}

/// Runs every metric on the frames of `gt`.
pub fn evaluate(
    est: &Trajectory,
    gt: &Trajectory,
    thresholds: &[f64],
    alignment: Alignment,
) -> Result<MetricsReport, EvalError> {
    let keys = thresholds.iter().map(|&t| threshold_key(t)).collect::<Result<Vec<_>, _>>()?;
    let (e, g) = match_frames(est, gt)?;
    let (rra, rta) = rra_rta(&e, &g, thresholds)?;
    Ok(MetricsReport {
        rra_at: keys.iter().copied().zip(rra).collect(),
        rta_at: keys.iter().copied().zip(rta).collect(),
        ate_rmse: ate_rmse(&e, &g, alignment)?,
        maa_at_30: maa(&e, &g, 30)?,
        registered_fraction: e.len() as f64 / gt.len() as f64,
        frames: g.len(),
    })
}

impl MetricsReport {
    /// Flat metric name to value map, e.g. `rra@5`.
    pub fn to_map(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        for (t, v) in &self.rra_at {
            m.insert(format!("rra@{t}"), *v);
        }
        for (t, v) in &self.rta_at {
            m.insert(format!("rta@{t}"), *v);
        }
        m.insert("ate_rmse".into(), self.ate_rmse);
        m.insert("maa@30".into(), self.maa_at_30);
        m.insert("registered".into(), self.registered_fraction);
        m.insert("frames".into(), self.frames as f64);
        m
    }

    /// `name = value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_map() {
            writeln!(s, "{k} = {v}").expect("writing to a string");
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_map()).expect("finite metrics serialize")
    }
}
