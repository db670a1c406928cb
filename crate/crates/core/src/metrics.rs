//! Gust rejection percentage, settled GRP, rise time, and the three
//! consistency standard deviations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Division guard on the baseline lift-change denominator, newtons.
pub const DENOMINATOR_GUARD: f64 = 1e-6;

/// GRP over the gust segment, plus the quantities it was computed from.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GrpTrace {
    /// Sample times in seconds over the gust segment, ascending, last = T.
    pub times: Vec<f64>,
    /// GRP in percent at each sample.
    pub grp: Vec<f64>,
    /// Time-averaged |ΔL_B| over the gust: the shared denominator, newtons.
    pub baseline_mean_delta: f64,
    /// Controlled lift change ΔL_C(t), newtons.
    pub controlled_delta: Vec<f64>,
}

/// Pointwise GRP(t) = (1 - |ΔL_C(t)| / |mean ΔL_B|) × 100 over the gust
/// segment. Both traces must cover the same timestep grid; the baseline comes
/// from the unactuated plant under the identical gust.
pub fn grp_timeseries(
    controlled_lift: &[f64],
    baseline_lift: &[f64],
    goal_lift: f64,
    times: &[f64],
) -> Result<GrpTrace> {
    if controlled_lift.len() != baseline_lift.len() {
        return Err(Error::LengthMismatch(
            controlled_lift.len(),
            baseline_lift.len(),
        ));
    }
    if controlled_lift.len() != times.len() {
        return Err(Error::LengthMismatch(controlled_lift.len(), times.len()));
    }
    if times.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let n = times.len() as f64;
    let mean_baseline_delta =
        baseline_lift.iter().map(|l| l - goal_lift).sum::<f64>() / n;
    let denom = mean_baseline_delta.abs();
    if denom < DENOMINATOR_GUARD {
        return Err(Error::DegenerateGust(denom));
    }
    let controlled_delta: Vec<f64> = controlled_lift.iter().map(|l| l - goal_lift).collect();
    let grp = controlled_delta
        .iter()
        .map(|d| (1.0 - d.abs() / denom) * 100.0)
        .collect();
    Ok(GrpTrace {
        times: times.to_vec(),
        grp,
        baseline_mean_delta: denom,
        controlled_delta,
    })
}

/// Mean GRP over the last half of the gust window; a sample exactly at the
/// midpoint is included.
pub fn settled_grp(trace: &GrpTrace) -> Result<f64> {
    let t_end = *trace.times.last().ok_or(Error::EmptyWindow)?;
    let half = t_end / 2.0;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (&t, &g) in trace.times.iter().zip(&trace.grp) {
        if t >= half - 1e-12 {
            sum += g;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyWindow);
    }
    Ok(sum / count as f64)
}

/// Time for GRP to go from 10% to 90% of the settled value, with linear
/// interpolation between samples. `None` means unmeasurable: the settled
/// value is nonpositive or a threshold is never crossed.
pub fn rise_time(trace: &GrpTrace, settled: f64) -> Option<f64> {
    if settled <= 0.0 || trace.times.is_empty() {
        return None;
    }
    let t10 = first_crossing(trace, 0.1 * settled)?;
    let t90 = first_crossing(trace, 0.9 * settled)?;
    Some(t90 - t10)
}

/// First upward crossing of a threshold, linearly interpolated. The trace is
/// anchored at an implicit (t0 - dt, 0) origin at gust onset.
fn first_crossing(trace: &GrpTrace, threshold: f64) -> Option<f64> {
    let dt = if trace.times.len() >= 2 {
        trace.times[1] - trace.times[0]
    } else {
        trace.times[0].max(f64::MIN_POSITIVE)
    };
    let mut prev_t = trace.times[0] - dt;
    let mut prev_g = 0.0;
    for (&t, &g) in trace.times.iter().zip(&trace.grp) {
        if g >= threshold {
            if g == prev_g {
                return Some(t);
            }
            let frac = (threshold - prev_g) / (g - prev_g);
            return Some(prev_t + frac.clamp(0.0, 1.0) * (t - prev_t));
        }
        prev_t = t;
        prev_g = g;
    }
    None
}

/// Keys identifying where a settled-GRP observation came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SettledObservation {
    pub controller_id: String,
    /// Signed gust deflection identifying the gust condition.
    pub deflection: f64,
    pub repetition: u32,
    pub settled_grp: f64,
}

/// The three consistency standard deviations (population STD, descriptive).
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct ConsistencySummary {
    /// STD across repetitions within (controller, condition), averaged.
    pub within_test: f64,
    /// STD across gust conditions of per-condition means within a controller, averaged.
    pub across_conditions: f64,
    /// STD across controllers of per-controller means within a condition, averaged.
    pub across_controllers: f64,
    /// Groups skipped because they held fewer than two members.
    pub excluded_groups: usize,
}

fn population_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Average a set of per-group STDs, skipping groups with fewer than two members.
fn averaged_group_std<K: Ord>(groups: BTreeMap<K, Vec<f64>>, excluded: &mut usize) -> f64 {
    let stds: Vec<f64> = groups
        .values()
        .filter(|v| {
            if v.len() < 2 {
                *excluded += 1;
                false
            } else {
                true
            }
        })
        .map(|v| population_std(v))
        .collect();
    if stds.is_empty() {
        0.0
    } else {
        mean(&stds)
    }
}

/// Consistency of settled GRP between repetitions, gust conditions, and
/// trained controllers.
pub fn consistency_stds(observations: &[SettledObservation]) -> ConsistencySummary {
    let mut excluded = 0usize;
    let key_d = |d: f64| (d * 1e6).round() as i64;

    // (C): repetitions within (controller, condition).
    let mut within: BTreeMap<(String, i64), Vec<f64>> = BTreeMap::new();
    for o in observations {
        within
            .entry((o.controller_id.clone(), key_d(o.deflection)))
            .or_default()
            .push(o.settled_grp);
    }
    // Per-(controller, condition) means feed the other two groupings.
    let mut cell_means: BTreeMap<(String, i64), f64> = BTreeMap::new();
    for (k, v) in &within {
        cell_means.insert(k.clone(), mean(v));
    }
    let within_test = averaged_group_std(within, &mut excluded);

    // (D): per-condition means across conditions, within controller.
    let mut per_controller: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for ((ctrl, _), m) in &cell_means {
        per_controller.entry(ctrl.clone()).or_default().push(*m);
    }
    let across_conditions = averaged_group_std(per_controller, &mut excluded);

    // (E): per-controller means across controllers, within condition.
    let mut per_condition: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for ((_, d), m) in &cell_means {
        per_condition.entry(*d).or_default().push(*m);
    }
    let across_controllers = averaged_group_std(per_condition, &mut excluded);

    ConsistencySummary {
        within_test,
        across_conditions,
        across_controllers,
        excluded_groups: excluded,
    }
}
