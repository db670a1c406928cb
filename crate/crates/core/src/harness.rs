//! Experiment harness: the closed loop between the surrogate plant and a
//! policy, the training protocol, gust-rejection tests, and the sensor
//! ablation campaign with resumable record storage.

use std::collections::BTreeMap;
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{FlightCondition, FlightConditionConfig, ObsWindow, TapConfig, WINDOW_LEN};
use crate::error::{Error, Result};
use crate::manifest::{derive_seed, hex};
use crate::metrics::{
    consistency_stds, grp_timeseries, rise_time, settled_grp, ConsistencySummary,
    SettledObservation,
};
use crate::nn::PolicyBundle;
use crate::plant::{GustSchedule, Plant, PlantParams, StepOutput};
use crate::ppo::{
    ppo_update, reward_from_lift, select_action, PpoHyperparams, SelectionMode, Transition,
};
use crate::records::{
    save_reward_curve, save_trace, EpisodeStat, GustTestRecord, RecordStore, TraceHeader,
    TraceStep,
};
use crate::stats::{cluster_bootstrap_diff, PairwiseComparison};

/// Plant steps taken before the schedule starts, filling the observation
/// window exactly once.
pub const INIT_STEPS: usize = WINDOW_LEN;

/// Closed-loop environment: plant, observation window, and tap selection.
pub struct GustEnv {
    pub plant: Plant,
    window: ObsWindow,
    taps: TapConfig,
    rng: ChaCha8Rng,
    zero_action: usize,
}

impl GustEnv {
    /// Reset the plant and run the initialization steps (zero action) so the
    /// window holds real signals before the schedule begins.
    pub fn new(
        cfg: &FlightConditionConfig,
        params: &PlantParams,
        schedule: GustSchedule,
        taps: TapConfig,
        seed: u64,
    ) -> Result<GustEnv> {
        let zero_action = cfg
            .action_deltas
            .iter()
            .position(|&a| a == 0.0)
            .ok_or_else(|| Error::InvalidConfig("action set lacks a zero action".into()))?;
        let mut env = GustEnv {
            plant: Plant::reset(cfg, params, schedule, INIT_STEPS)?,
            window: ObsWindow::new(taps.channel_count()),
            taps,
            rng: ChaCha8Rng::seed_from_u64(seed),
            zero_action,
        };
        for _ in 0..INIT_STEPS {
            env.step(env.zero_action)?;
        }
        Ok(env)
    }

    fn window_vec(&self, out: &StepOutput) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .taps
            .indices()
            .iter()
            .map(|&i| out.tap_signals[i])
            .collect();
        v.push(out.mfc_signal);
        v
    }

    /// Advance one plant step and push the new signals into the window.
    pub fn step(&mut self, action: usize) -> Result<StepOutput> {
        let out = self.plant.step(action, &mut self.rng)?;
        self.window.push(self.window_vec(&out));
        Ok(out)
    }

    /// Current flattened network input.
    pub fn observation(&self) -> Vec<f64> {
        self.window.as_network_input()
    }

    pub fn goal_lift(&self) -> f64 {
        self.plant.state.goal_lift
    }

    pub fn zero_action(&self) -> usize {
        self.zero_action
    }
}

fn running_avg(totals: &[f64]) -> f64 {
    let tail = &totals[totals.len().saturating_sub(100)..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

/// Train one controller: alternating neutral/random initial deflections, a
/// random held gust per episode, sampled actions, one PPO update per episode.
pub fn run_training(
    cfg: &FlightConditionConfig,
    params: &PlantParams,
    hp: &PpoHyperparams,
    taps: TapConfig,
    episodes: usize,
    config_hash: [u8; 32],
    seed: u64,
) -> Result<(PolicyBundle, Vec<EpisodeStat>)> {
    cfg.validate()?;
    params.validate()?;
    hp.validate()?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "init"));
    let mut bundle = PolicyBundle::init(
        taps.channel_count(),
        cfg.action_deltas.len(),
        hp.conv_filters,
        hp.learning_rate,
        config_hash,
        &mut init_rng,
    )?;

    let episode_secs = cfg.episode_steps as f64 * cfg.timestep;
    let mut curve = Vec::with_capacity(episodes);
    let mut totals = Vec::with_capacity(episodes);

    for episode in 0..episodes {
        let mut sched_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("episode/{episode}/schedule")));
        // Half of all episodes start from the neutral shape, the other half
        // from a random deflection, so the policy sees varied goal states.
        let d_init = if episode % 2 == 0 {
            0.0
        } else {
            cfg.sample_training_deflection(&mut sched_rng)
        };
        let d_gust = cfg.sample_training_deflection(&mut sched_rng);
        let schedule = GustSchedule::training_hold(d_init, d_gust, episode_secs);

        let env_seed = derive_seed(seed, &format!("episode/{episode}/env"));
        let mut env = GustEnv::new(cfg, params, schedule, taps, env_seed)?;
        let mut action_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("episode/{episode}/actions")));

        let goal = env.goal_lift();
        let mut rollout = Vec::with_capacity(cfg.episode_steps);
        let mut total_reward = 0.0;
        for step in 0..cfg.episode_steps {
            let obs = env.observation();
            let choice = select_action(
                &bundle.actor,
                &bundle.critic,
                &obs,
                SelectionMode::Sample,
                &mut action_rng,
            )?;
            let out = env.step(choice.index)?;
            let reward = reward_from_lift(out.lift, goal);
            total_reward += reward;
            rollout.push(Transition {
                observation: obs,
                action: choice.index,
                log_prob: choice.log_prob,
                value: choice.value,
                reward,
                done: step + 1 == cfg.episode_steps,
            });
        }
        if !total_reward.is_finite() {
            return Err(Error::TrainingDiverged(
                episode,
                "non-finite episode reward".into(),
            ));
        }

        let mut update_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("episode/{episode}/update")));
        ppo_update(&mut bundle, &rollout, hp, &mut update_rng)
            .map_err(|e| Error::TrainingDiverged(episode, e.to_string()))?;

        totals.push(total_reward);
        curve.push(EpisodeStat {
            episode,
            total_reward,
            running_avg: running_avg(&totals),
        });
    }
    Ok((bundle, curve))
}

/// Step grid for the test schedule's gust half: (index of first gust step,
/// number of gust steps, total steps for the whole schedule).
pub fn test_gust_grid(cfg: &FlightConditionConfig) -> (usize, usize, usize) {
    let t = cfg.gust_duration;
    let start = (t / 2.0 / cfg.timestep).round() as usize;
    let len = (t / cfg.timestep).round() as usize;
    (start, len, 2 * len)
}

/// Unactuated, noise-free plant response to a test gust; the Eq. 1 baseline.
#[derive(Clone, Debug)]
pub struct BaselineTrace {
    pub deflection: f64,
    pub goal_lift: f64,
    /// Lift at every step of the full test schedule.
    pub lift: Vec<f64>,
    /// Lift over the gust half only.
    pub gust_segment: Vec<f64>,
    /// Times of the gust-segment samples, measured from gust onset.
    pub times: Vec<f64>,
    pub steps: Vec<TraceStep>,
}

pub fn baseline_gust_trace(
    cfg: &FlightConditionConfig,
    params: &PlantParams,
    deflection: f64,
) -> Result<BaselineTrace> {
    let mut quiet = params.clone();
    quiet.profile.noise_sigma = 0.0;
    quiet.lift_noise_sigma = 0.0;
    let schedule = GustSchedule::test_quarters(deflection, cfg.gust_duration);
    let mut env = GustEnv::new(cfg, &quiet, schedule, TapConfig::Six, 0)?;
    let (start, len, total) = test_gust_grid(cfg);
    let zero = env.zero_action();
    let mut lift = Vec::with_capacity(total);
    let mut steps = Vec::with_capacity(total);
    for _ in 0..total {
        let out = env.step(zero)?;
        lift.push(out.lift);
        steps.push(trace_step(&env, &out));
    }
    let gust_segment = lift[start..start + len].to_vec();
    let times = (1..=len).map(|i| i as f64 * cfg.timestep).collect();
    Ok(BaselineTrace {
        deflection,
        goal_lift: env.goal_lift(),
        lift,
        gust_segment,
        times,
        steps,
    })
}

fn trace_step(env: &GustEnv, out: &StepOutput) -> TraceStep {
    let s = &env.plant.state;
    TraceStep {
        time: s.time,
        generator_deflection: s.generator_deflection,
        wake_deflection: s.wake_deflection,
        tap_signals: out.tap_signals,
        mfc_signal: out.mfc_signal,
        camber: s.actuator.effective_camber,
        lift: out.lift,
    }
}

/// One greedy test episode against a test gust; returns the record plus the
/// full plant trace.
#[allow(clippy::too_many_arguments)]
pub fn run_gust_test(
    bundle: &PolicyBundle,
    cfg: &FlightConditionConfig,
    params: &PlantParams,
    taps: TapConfig,
    baseline: &BaselineTrace,
    controller_id: &str,
    repetition: u32,
    seed: u64,
    config_hash_hex: &str,
) -> Result<(GustTestRecord, Vec<TraceStep>)> {
    let schedule = GustSchedule::test_quarters(baseline.deflection, cfg.gust_duration);
    let mut env = GustEnv::new(cfg, params, schedule, taps, seed)?;
    let (start, len, total) = test_gust_grid(cfg);
    let goal = env.goal_lift();
    let mut action_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "greedy"));
    let mut lift = Vec::with_capacity(total);
    let mut steps = Vec::with_capacity(total);
    for _ in 0..total {
        let obs = env.observation();
        let choice = select_action(
            &bundle.actor,
            &bundle.critic,
            &obs,
            SelectionMode::Greedy,
            &mut action_rng,
        )?;
        let out = env.step(choice.index)?;
        lift.push(out.lift);
        steps.push(trace_step(&env, &out));
    }
    let controlled = &lift[start..start + len];
    let trace = grp_timeseries(controlled, &baseline.gust_segment, goal, &baseline.times)?;
    let settled = settled_grp(&trace)?;
    let rise = rise_time(&trace, settled);
    let record = GustTestRecord {
        key: GustTestRecord::make_key(controller_id, baseline.deflection, repetition),
        controller_id: controller_id.to_string(),
        condition: cfg.condition,
        tap_count: taps.count(),
        deflection: baseline.deflection,
        repetition,
        seed,
        settled_grp: settled,
        rise_time: rise,
        baseline_mean_delta: trace.baseline_mean_delta,
        config_hash: config_hash_hex.to_string(),
        trace_file: None,
    };
    Ok((record, steps))
}

/// One flight condition's population sizes in a campaign.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CampaignCell {
    pub condition: FlightCondition,
    pub controllers: usize,
    pub repetitions: u32,
}

/// Full ablation-campaign layout.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub preset: String,
    /// Training episodes per controller.
    pub episodes: usize,
    pub cells: Vec<CampaignCell>,
    pub tap_configs: Vec<TapConfig>,
    pub bootstrap_resamples: usize,
}

impl CampaignConfig {
    /// Small layout that finishes on a workstation: one condition, two
    /// controllers per tap configuration, three repetitions.
    pub fn desk() -> Self {
        CampaignConfig {
            preset: "desk".into(),
            episodes: 200,
            cells: vec![CampaignCell {
                condition: FlightCondition::HighLift,
                controllers: 2,
                repetitions: 3,
            }],
            tap_configs: TapConfig::ALL.to_vec(),
            bootstrap_resamples: 2000,
        }
    }

    /// Full study layout: ten controllers per cell at high lift, five at the
    /// other conditions, ten repetitions everywhere.
    pub fn paper() -> Self {
        let cell = |condition, controllers| CampaignCell {
            condition,
            controllers,
            repetitions: 10,
        };
        CampaignConfig {
            preset: "paper".into(),
            episodes: 1000,
            cells: vec![
                cell(FlightCondition::HighLift, 10),
                cell(FlightCondition::MedLift, 5),
                cell(FlightCondition::LowLift, 5),
            ],
            tap_configs: TapConfig::ALL.to_vec(),
            bootstrap_resamples: crate::stats::DEFAULT_RESAMPLES,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::InvalidConfig(format!(
                "unknown campaign preset '{other}' (expected desk or paper)"
            ))),
        }
    }

    /// Records this layout produces for one condition (controllers × taps ×
    /// six test gusts × repetitions).
    pub fn record_count_for(&self, condition: FlightCondition) -> usize {
        self.cells
            .iter()
            .filter(|c| c.condition == condition)
            .map(|c| c.controllers * self.tap_configs.len() * 6 * c.repetitions as usize)
            .sum()
    }

    pub fn record_count(&self) -> usize {
        FlightCondition::ALL
            .iter()
            .map(|&c| self.record_count_for(c))
            .sum()
    }
}

/// One planned evaluation episode in the campaign matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixEntry {
    pub condition: FlightCondition,
    pub taps: TapConfig,
    pub controller: usize,
    pub controller_id: String,
    pub deflection: f64,
    pub repetition: u32,
    pub key: String,
}

pub fn controller_id(condition: FlightCondition, taps: TapConfig, controller: usize) -> String {
    format!("{condition}/{}tap/c{controller:02}", taps.count())
}

/// Deterministic enumeration of every test episode a campaign will run, in
/// execution order.
pub fn enumerate_matrix(
    campaign: &CampaignConfig,
    resolve: &dyn Fn(FlightCondition) -> Result<FlightConditionConfig>,
) -> Result<Vec<MatrixEntry>> {
    let mut out = Vec::with_capacity(campaign.record_count());
    for cell in &campaign.cells {
        let cfg = resolve(cell.condition)?;
        for &taps in &campaign.tap_configs {
            for controller in 0..cell.controllers {
                let id = controller_id(cell.condition, taps, controller);
                for &deflection in &cfg.testing_deflections {
                    for repetition in 0..cell.repetitions {
                        out.push(MatrixEntry {
                            condition: cell.condition,
                            taps,
                            controller,
                            controller_id: id.clone(),
                            deflection,
                            repetition,
                            key: GustTestRecord::make_key(&id, deflection, repetition),
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Per-(condition, tap-configuration) aggregate over all its records.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellSummary {
    pub condition: FlightCondition,
    pub tap_count: usize,
    pub records: usize,
    pub mean_settled_grp: f64,
    pub std_settled_grp: f64,
    /// Mean/median over the records whose rise time was measurable.
    pub mean_rise_time: Option<f64>,
    pub median_rise_time: Option<f64>,
    pub unmeasurable_rise: usize,
    pub consistency: ConsistencySummary,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub cells: Vec<CellSummary>,
    pub comparisons: Vec<PairwiseComparison>,
    pub total_records: usize,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn population_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Aggregate raw records into per-cell summaries and pairwise tap-count
/// significance tests (per condition, on settled GRP, controllers as
/// clusters). Pairs lacking two controllers on either side are skipped.
pub fn summarize_records(
    records: &[GustTestRecord],
    resamples: usize,
    seed: u64,
) -> CampaignSummary {
    let mut by_cell: BTreeMap<(FlightCondition, usize), Vec<&GustTestRecord>> = BTreeMap::new();
    for r in records {
        by_cell.entry((r.condition, r.tap_count)).or_default().push(r);
    }

    let mut cells = Vec::new();
    for (&(condition, tap_count), rs) in &by_cell {
        let settled: Vec<f64> = rs.iter().map(|r| r.settled_grp).collect();
        let mut rises: Vec<f64> = rs.iter().filter_map(|r| r.rise_time).collect();
        let unmeasurable = rs.len() - rises.len();
        let observations: Vec<SettledObservation> = rs
            .iter()
            .map(|r| SettledObservation {
                controller_id: r.controller_id.clone(),
                deflection: r.deflection,
                repetition: r.repetition,
                settled_grp: r.settled_grp,
            })
            .collect();
        cells.push(CellSummary {
            condition,
            tap_count,
            records: rs.len(),
            mean_settled_grp: mean(&settled),
            std_settled_grp: population_std(&settled),
            mean_rise_time: (!rises.is_empty()).then(|| mean(&rises)),
            median_rise_time: (!rises.is_empty()).then(|| median(&mut rises)),
            unmeasurable_rise: unmeasurable,
            consistency: consistency_stds(&observations),
        });
    }

    // Per-controller settled-GRP clusters feed the bootstrap comparisons.
    let mut comparisons = Vec::new();
    for &condition in &FlightCondition::ALL {
        let clusters_for = |tap_count: usize| -> Vec<Vec<f64>> {
            let mut by_ctrl: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
            if let Some(rs) = by_cell.get(&(condition, tap_count)) {
                for r in rs {
                    by_ctrl
                        .entry(r.controller_id.as_str())
                        .or_default()
                        .push(r.settled_grp);
                }
            }
            by_ctrl.into_values().collect()
        };
        for (a, b) in [(6usize, 3usize), (6, 1), (3, 1)] {
            let ca = clusters_for(a);
            let cb = clusters_for(b);
            if ca.len() < 2 || cb.len() < 2 {
                continue;
            }
            if let Ok(cmp) = cluster_bootstrap_diff(
                &format!("{condition}/{a}tap"),
                &ca,
                &format!("{condition}/{b}tap"),
                &cb,
                "settled-grp",
                resamples,
                derive_seed(seed, &format!("bootstrap/{condition}")),
            ) {
                comparisons.push(cmp);
            }
        }
    }

    CampaignSummary {
        cells,
        comparisons,
        total_records: records.len(),
    }
}

/// Campaign run result: the aggregate summary plus resume/failure accounting.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CampaignOutcome {
    pub summary: CampaignSummary,
    pub new_records: usize,
    pub skipped_records: usize,
    /// "what: error" strings for units that failed; the campaign continues
    /// past them.
    pub failures: Vec<String>,
}

/// Run (or resume) the full ablation campaign: train every controller in the
/// matrix, evaluate it on every test gust, and aggregate. Already-recorded
/// tests are skipped; failed units are noted and do not abort the campaign.
pub fn run_ablation_campaign(
    campaign: &CampaignConfig,
    hp: &PpoHyperparams,
    out_dir: &Path,
    seed: u64,
    config_hash: [u8; 32],
    resolve: &dyn Fn(FlightCondition) -> Result<(FlightConditionConfig, PlantParams)>,
    progress: &mut dyn FnMut(&str),
) -> Result<CampaignOutcome> {
    let mut store = RecordStore::open(&out_dir.join("records.jsonl"))?;
    let hash_hex = hex(&config_hash);
    let mut new_records = 0usize;
    let mut skipped = 0usize;
    let mut failures = Vec::new();

    for cell in &campaign.cells {
        let (cfg, params) = resolve(cell.condition)?;

        // One baseline per test gust, shared by every controller in the cell.
        let mut baselines: BTreeMap<i64, BaselineTrace> = BTreeMap::new();
        for &d in &cfg.testing_deflections {
            baselines.insert((d * 1e6).round() as i64, baseline_gust_trace(&cfg, &params, d)?);
        }

        for &taps in &campaign.tap_configs {
            for controller in 0..cell.controllers {
                let id = controller_id(cell.condition, taps, controller);
                let pending: Vec<(f64, u32)> = cfg
                    .testing_deflections
                    .iter()
                    .flat_map(|&d| (0..cell.repetitions).map(move |r| (d, r)))
                    .filter(|&(d, r)| !store.contains(&GustTestRecord::make_key(&id, d, r)))
                    .collect();
                let done = cfg.testing_deflections.len() * cell.repetitions as usize
                    - pending.len();
                skipped += done;
                if pending.is_empty() {
                    progress(&format!("{id}: complete, skipping"));
                    continue;
                }

                let policy_path = out_dir
                    .join("policies")
                    .join(format!("{}.policy", id.replace('/', "-")));
                let bundle = if policy_path.exists() {
                    let bytes = std::fs::read(&policy_path)
                        .map_err(|e| Error::io(policy_path.display().to_string(), e))?;
                    match PolicyBundle::from_bytes_expecting(&bytes, taps.channel_count()) {
                        Ok(b) => {
                            progress(&format!("{id}: loaded saved policy"));
                            b
                        }
                        Err(e) => {
                            failures.push(format!("{id} (policy load): {e}"));
                            continue;
                        }
                    }
                } else {
                    progress(&format!("{id}: training {} episodes", campaign.episodes));
                    let train_seed = derive_seed(seed, &format!("train/{id}"));
                    match run_training(
                        &cfg,
                        &params,
                        hp,
                        taps,
                        campaign.episodes,
                        config_hash,
                        train_seed,
                    ) {
                        Ok((bundle, curve)) => {
                            crate::manifest::write_atomic(&policy_path, &bundle.to_bytes())?;
                            let curve_path = out_dir
                                .join("curves")
                                .join(format!("{}.jsonl", id.replace('/', "-")));
                            save_reward_curve(&curve_path, &curve)?;
                            bundle
                        }
                        Err(e) => {
                            failures.push(format!("{id} (training): {e}"));
                            continue;
                        }
                    }
                };

                for (deflection, repetition) in pending {
                    let baseline = &baselines[&((deflection * 1e6).round() as i64)];
                    let key = GustTestRecord::make_key(&id, deflection, repetition);
                    let test_seed = derive_seed(seed, &format!("test/{key}"));
                    match run_gust_test(
                        &bundle, &cfg, &params, taps, baseline, &id, repetition, test_seed,
                        &hash_hex,
                    ) {
                        Ok((record, _trace)) => {
                            store.append(&record)?;
                            new_records += 1;
                        }
                        Err(e) => failures.push(format!("{key} (test): {e}")),
                    }
                }
                progress(&format!("{id}: evaluated"));
            }
        }
    }

    let records = crate::records::load_records(&out_dir.join("records.jsonl"))?;
    let summary = summarize_records(&records, campaign.bootstrap_resamples, seed);
    Ok(CampaignOutcome {
        summary,
        new_records,
        skipped_records: skipped,
        failures,
    })
}

/// Write a baseline trace to a file for inspection.
pub fn save_baseline_trace(
    path: &Path,
    cfg: &FlightConditionConfig,
    baseline: &BaselineTrace,
    config_hash_hex: &str,
) -> Result<()> {
    let header = TraceHeader {
        config_hash: config_hash_hex.to_string(),
        seed: 0,
        condition: cfg.condition,
        deflection: baseline.deflection,
    };
    save_trace(path, &header, &baseline.steps)
}
