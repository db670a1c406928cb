//! Command-line interface: train, eval, campaign, baseline, and metrics
//! subcommands, with manifests for every run.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::json;

use crate::config::{FlightCondition, TapConfig};
use crate::error::{Error, Result};
use crate::harness::{
    baseline_gust_trace, run_ablation_campaign, run_gust_test, run_training, save_baseline_trace,
    summarize_records, CampaignSummary,
};
use crate::manifest::{config_hash, hex, write_atomic, RunManifest};
use crate::nn::PolicyBundle;
use crate::records::{load_records, save_reward_curve, RecordStore};
use crate::settings::FileConfig;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "GUSTRL_OUT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_PARTIAL: i32 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "gustrl",
    version,
    about = "Gust-rejection reinforcement learning on a surrogate morphing-wing plant"
)]
pub struct Cli {
    /// TOML config file with [condition.*], [plant], [ppo], [training],
    /// [campaign] override sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory (default: $GUSTRL_OUT or ./runs).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one controller and save its policy and reward curve.
    Train {
        /// Flight condition: high-lift, med-lift, or low-lift.
        #[arg(long)]
        condition: String,
        /// Pressure taps fed to the controller: 1, 3, or 6.
        #[arg(long, default_value_t = 6)]
        taps: usize,
        /// Training episodes (overrides config file).
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Evaluate a saved policy on every test gust of a condition.
    Eval {
        /// Path to a saved policy file.
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        condition: String,
        #[arg(long, default_value_t = 6)]
        taps: usize,
        /// Repetitions per test gust.
        #[arg(long, default_value_t = 10)]
        reps: u32,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Run (or resume) the full sensor-ablation campaign.
    Campaign {
        /// Scale preset: desk or paper.
        #[arg(long, default_value = "desk")]
        preset: String,
        /// Training episodes per controller (overrides preset and file).
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Record the unactuated plant's response to each test gust.
    Baseline {
        #[arg(long)]
        condition: String,
    },
    /// Recompute summaries and significance tests from stored records.
    Metrics {
        /// Path to a records.jsonl file.
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        resamples: Option<usize>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

/// Map an error to the CLI exit code classes.
fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig(_)
        | Error::Toml(_)
        | Error::SpecMismatch(_)
        | Error::DeflectionOutOfRange(..)
        | Error::UnknownActionDelta(..) => EXIT_VALIDATION,
        _ => EXIT_RUNTIME,
    }
}

pub fn run(cli: Cli) -> i32 {
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn out_dir(cli_out: &Option<PathBuf>) -> PathBuf {
    cli_out.clone().unwrap_or_else(|| {
        std::env::var_os(OUT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"))
    })
}

fn load_file_config(path: &Option<PathBuf>) -> Result<FileConfig> {
    match path {
        Some(p) => FileConfig::load(p),
        None => Ok(FileConfig::default()),
    }
}

fn command_line() -> String {
    std::env::args().collect::<Vec<_>>().join(" ")
}

fn write_summary(out: &Path, summary: &CampaignSummary, manifest: &mut RunManifest) -> Result<()> {
    let json = serde_json::to_string_pretty(summary)?;
    write_atomic(&out.join("summary.json"), json.as_bytes())?;
    manifest.add_artifact("summary.json");

    let mut tsv = String::from(
        "condition\ttaps\trecords\tmean_settled_grp\tstd_settled_grp\tmean_rise\tmedian_rise\tunmeasurable\twithin_test_std\tacross_conditions_std\tacross_controllers_std\n",
    );
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    for c in &summary.cells {
        tsv.push_str(&format!(
            "{}\t{}\t{}\t{:.4}\t{:.4}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\n",
            c.condition,
            c.tap_count,
            c.records,
            c.mean_settled_grp,
            c.std_settled_grp,
            opt(c.mean_rise_time),
            opt(c.median_rise_time),
            c.unmeasurable_rise,
            c.consistency.within_test,
            c.consistency.across_conditions,
            c.consistency.across_controllers,
        ));
    }
    write_atomic(&out.join("summary.tsv"), tsv.as_bytes())?;
    manifest.add_artifact("summary.tsv");

    let mut sig = String::from("group_a\tgroup_b\tmetric\tobserved_diff\tp_value\tresamples\tmethod\n");
    for c in &summary.comparisons {
        sig.push_str(&format!(
            "{}\t{}\t{}\t{:.6}\t{:.6}\t{}\t{}\n",
            c.group_a, c.group_b, c.metric, c.observed_diff, c.p_value, c.resamples, c.method
        ));
    }
    write_atomic(&out.join("significance.tsv"), sig.as_bytes())?;
    manifest.add_artifact("significance.tsv");
    Ok(())
}

fn execute(cli: Cli) -> Result<i32> {
    let out = out_dir(&cli.out);
    let fc = load_file_config(&cli.config)?;

    match cli.command {
        Command::Train {
            condition,
            taps,
            episodes,
            seed,
        } => {
            let condition: FlightCondition = condition.parse()?;
            let taps = TapConfig::from_count(taps)?;
            let cfg = fc.resolve_condition(condition)?;
            let params = fc.resolve_plant(&cfg)?;
            let hp = fc.resolve_ppo()?;
            let episodes = episodes.unwrap_or_else(|| fc.resolve_episodes(1000));

            let resolved = json!({
                "command": "train",
                "condition": cfg,
                "plant": params,
                "ppo": hp,
                "taps": taps.count(),
                "episodes": episodes,
            });
            let hash = config_hash(&resolved);
            let mut manifest = RunManifest::new(command_line(), seed, resolved);
            let train_seed = manifest.record_seed("training");

            let (bundle, curve) =
                run_training(&cfg, &params, &hp, taps, episodes, hash, train_seed)?;
            write_atomic(&out.join("policy.bin"), &bundle.to_bytes())?;
            manifest.add_artifact("policy.bin");
            save_reward_curve(&out.join("reward-curve.jsonl"), &curve)?;
            manifest.add_artifact("reward-curve.jsonl");
            manifest.save(&out.join("manifest.json"))?;
            if let Some(last) = curve.last() {
                println!(
                    "trained {episodes} episodes; final 100-episode mean reward {:.4}",
                    last.running_avg
                );
            }
            Ok(EXIT_OK)
        }

        Command::Eval {
            policy,
            condition,
            taps,
            reps,
            seed,
        } => {
            let condition: FlightCondition = condition.parse()?;
            let taps = TapConfig::from_count(taps)?;
            let cfg = fc.resolve_condition(condition)?;
            let params = fc.resolve_plant(&cfg)?;
            let bytes = std::fs::read(&policy)
                .map_err(|e| Error::io(policy.display().to_string(), e))?;
            let bundle = PolicyBundle::from_bytes_expecting(&bytes, taps.channel_count())?;

            let resolved = json!({
                "command": "eval",
                "condition": cfg,
                "plant": params,
                "taps": taps.count(),
                "reps": reps,
                "policy": policy.display().to_string(),
            });
            let hash_hex = hex(&config_hash(&resolved));
            let mut manifest = RunManifest::new(command_line(), seed, resolved);

            let controller_id = policy
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "policy".into());
            let mut store = RecordStore::open(&out.join("records.jsonl"))?;
            manifest.add_artifact("records.jsonl");
            for &deflection in &cfg.testing_deflections {
                let baseline = baseline_gust_trace(&cfg, &params, deflection)?;
                for rep in 0..reps {
                    let key =
                        crate::records::GustTestRecord::make_key(&controller_id, deflection, rep);
                    let test_seed = manifest.record_seed(&format!("test/{key}"));
                    let (record, _) = run_gust_test(
                        &bundle,
                        &cfg,
                        &params,
                        taps,
                        &baseline,
                        &controller_id,
                        rep,
                        test_seed,
                        &hash_hex,
                    )?;
                    store.append(&record)?;
                }
            }
            let records = load_records(&out.join("records.jsonl"))?;
            let summary = summarize_records(&records, crate::stats::DEFAULT_RESAMPLES, seed);
            write_summary(&out, &summary, &mut manifest)?;
            manifest.save(&out.join("manifest.json"))?;
            println!("evaluated {} records", records.len());
            Ok(EXIT_OK)
        }

        Command::Campaign {
            preset,
            episodes,
            seed,
        } => {
            let mut campaign = fc.resolve_campaign(&preset)?;
            if let Some(e) = episodes {
                campaign.episodes = e;
            }
            let hp = fc.resolve_ppo()?;

            let mut per_condition = serde_json::Map::new();
            for cell in &campaign.cells {
                let cfg = fc.resolve_condition(cell.condition)?;
                let params = fc.resolve_plant(&cfg)?;
                per_condition.insert(
                    cell.condition.to_string(),
                    json!({"condition": cfg, "plant": params}),
                );
            }
            let resolved = json!({
                "command": "campaign",
                "campaign": campaign,
                "ppo": hp,
                "conditions": per_condition,
            });
            let hash = config_hash(&resolved);
            let mut manifest = RunManifest::new(command_line(), seed, resolved);
            manifest.record_seed("campaign");

            let fc_ref = &fc;
            let outcome = run_ablation_campaign(
                &campaign,
                &hp,
                &out,
                seed,
                hash,
                &|c| {
                    let cfg = fc_ref.resolve_condition(c)?;
                    let params = fc_ref.resolve_plant(&cfg)?;
                    Ok((cfg, params))
                },
                &mut |msg| eprintln!("{msg}"),
            )?;

            manifest.add_artifact("records.jsonl");
            write_summary(&out, &outcome.summary, &mut manifest)?;
            for f in &outcome.failures {
                manifest.add_artifact(format!("FAILED: {f}"));
            }
            manifest.save(&out.join("manifest.json"))?;
            println!(
                "campaign {}: {} new records, {} skipped, {} failures",
                campaign.preset,
                outcome.new_records,
                outcome.skipped_records,
                outcome.failures.len()
            );
            if outcome.failures.is_empty() {
                Ok(EXIT_OK)
            } else {
                for f in &outcome.failures {
                    eprintln!("failed: {f}");
                }
                Ok(EXIT_PARTIAL)
            }
        }

        Command::Baseline { condition } => {
            let condition: FlightCondition = condition.parse()?;
            let cfg = fc.resolve_condition(condition)?;
            let params = fc.resolve_plant(&cfg)?;
            let resolved = json!({
                "command": "baseline",
                "condition": cfg,
                "plant": params,
            });
            let hash_hex = hex(&config_hash(&resolved));
            let mut manifest = RunManifest::new(command_line(), 0, resolved);
            for &d in &cfg.testing_deflections {
                let baseline = baseline_gust_trace(&cfg, &params, d)?;
                let name = format!("baseline-{condition}-{d}.jsonl");
                save_baseline_trace(&out.join(&name), &cfg, &baseline, &hash_hex)?;
                manifest.add_artifact(name);
                println!(
                    "{condition} {d:+}°: settled baseline ΔL = {:+.6} N",
                    baseline.gust_segment.last().unwrap() - baseline.goal_lift
                );
            }
            manifest.save(&out.join("manifest.json"))?;
            Ok(EXIT_OK)
        }

        Command::Metrics {
            records,
            resamples,
            seed,
        } => {
            let recs = load_records(&records)?;
            let resamples = resamples.unwrap_or(crate::stats::DEFAULT_RESAMPLES);
            let resolved = json!({
                "command": "metrics",
                "records": records.display().to_string(),
                "resamples": resamples,
            });
            let mut manifest = RunManifest::new(command_line(), seed, resolved);
            let summary = summarize_records(&recs, resamples, seed);
            write_summary(&out, &summary, &mut manifest)?;
            manifest.save(&out.join("manifest.json"))?;
            println!(
                "summarized {} records into {} cells",
                summary.total_records,
                summary.cells.len()
            );
            Ok(EXIT_OK)
        }
    }
}
