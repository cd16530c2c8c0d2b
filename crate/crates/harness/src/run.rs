//! Monte Carlo batches over runs and schemes, and the files they produce.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use mlme_qpt::random::derive_seed;
use mlme_qpt::strategy::{run_scheme, Experiment, Scheme, SelectedState, StopReason, TrajectoryRow};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::Result;

pub const TRAJECTORIES: &str = "trajectories.csv";
pub const SUMMARY: &str = "summary.csv";
pub const MANIFEST: &str = "manifest.json";
pub const MPL_STATES: &str = "mpl_states.json";

/// Seed of run `r` (zero-based).
pub fn run_seed(master: u64, run: usize) -> u64 {
    derive_seed(master, &[run as u64])
}

/// Seed of one scheme's trajectory within a run.
pub fn scheme_seed(run_seed: u64, scheme: Scheme) -> u64 {
    derive_seed(run_seed, &[scheme.id()])
}

#[derive(Clone, Debug, Serialize)]
pub struct SchemeRun {
    pub scheme: Scheme,
    pub seed: u64,
    pub stop: StopReason,
    pub inputs: usize,
    /// Steps whose estimator did not reach the residual tolerance.
    pub non_converged_steps: Vec<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunEntry {
    pub run: usize,
    pub run_seed: u64,
    /// Seed of the true channel when it is drawn per run.
    pub channel_seed: Option<u64>,
    pub schemes: Vec<SchemeRun>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub name: String,
    pub version: String,
    pub master_seed: u64,
    pub runs: usize,
    pub config: ExperimentConfig,
    pub entries: Vec<RunEntry>,
}

#[derive(Clone, Debug, Serialize)]
pub struct MplStates {
    pub run: usize,
    pub run_seed: u64,
    pub scheme: Scheme,
    pub states: Vec<SelectedState<f64>>,
}

/// Per-scheme, per-`L` aggregate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scheme: String,
    #[serde(rename = "L")]
    pub l: usize,
    pub mean_trace_distance: f64,
    pub stderr: f64,
    pub mean_loglik_max: Option<f64>,
    pub mean_delta: Option<f64>,
    pub n_runs: usize,
}

/// Everything a batch produced, before it is written out.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub rows: Vec<TrajectoryRow>,
    pub summary: Vec<SummaryRow>,
    pub manifest: Manifest,
    pub mpl_states: Vec<MplStates>,
}

struct Job {
    run: usize,
    scheme_pos: usize,
    scheme: Scheme,
}

struct JobResult {
    rows: Vec<TrajectoryRow>,
    scheme_run: SchemeRun,
    states: Vec<SelectedState<f64>>,
}

/// Validates the configuration, then simulates every (run, scheme) pair.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome> {
    let fixed = cfg.resolve()?;
    let copies = cfg.data.copies();
    let jobs: Vec<Job> = (0..cfg.runs)
        .flat_map(|run| {
            cfg.schemes
                .iter()
                .enumerate()
                .map(move |(scheme_pos, &scheme)| Job {
                    run,
                    scheme_pos,
                    scheme,
                })
        })
        .collect();
    let results: Vec<Result<JobResult>> = jobs
        .par_iter()
        .map(|job| {
            let rs = run_seed(cfg.seed, job.run);
            let channel = if cfg.channel.varies_per_run() {
                cfg.channel.build(&cfg.base_dir, rs)?
            } else {
                fixed.channel.clone()
            };
            let exp = Experiment {
                channel: &channel,
                pom: &fixed.pom,
                copies,
                e_prior: &fixed.prior,
                solver: cfg.solver,
                strategy: cfg.strategy_for(fixed.inputs.len(), rs),
            };
            let seed = scheme_seed(rs, job.scheme);
            let order = cfg.order_for(fixed.inputs.len(), rs);
            let t = run_scheme(job.scheme, &exp, &fixed.inputs, &order, seed)?;
            Ok(JobResult {
                rows: t.rows(),
                scheme_run: SchemeRun {
                    scheme: job.scheme,
                    seed,
                    stop: t.stop,
                    inputs: t.steps.len(),
                    non_converged_steps: t.steps.iter().filter(|s| !s.converged).map(|s| s.step).collect(),
                },
                states: t.mpl_states(),
            })
        })
        .collect();

    let mut rows = Vec::new();
    let mut entries: Vec<RunEntry> = (0..cfg.runs)
        .map(|run| {
            let rs = run_seed(cfg.seed, run);
            RunEntry {
                run,
                run_seed: rs,
                channel_seed: cfg.channel.varies_per_run().then(|| match &cfg.channel {
                    crate::config::ChannelSpec::Random { seed, .. } => derive_seed(*seed, &[rs]),
                    _ => unreachable!(),
                }),
                schemes: Vec::new(),
            }
        })
        .collect();
    let mut mpl_states = Vec::new();
    // Jobs are in (run, scheme position) order, so assembly is deterministic.
    for (job, res) in jobs.iter().zip(results) {
        let res = res?;
        debug_assert_eq!(cfg.schemes[job.scheme_pos], job.scheme);
        rows.extend(res.rows);
        if !res.states.is_empty() {
            mpl_states.push(MplStates {
                run: job.run,
                run_seed: entries[job.run].run_seed,
                scheme: job.scheme,
                states: res.states,
            });
        }
        entries[job.run].schemes.push(res.scheme_run);
    }
    let summary = summarize(&rows, &cfg.schemes);
    Ok(Outcome {
        rows,
        summary,
        manifest: Manifest {
            name: cfg.name.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed: cfg.seed,
            runs: cfg.runs,
            config: cfg.clone(),
            entries,
        },
        mpl_states,
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard error of the mean; zero for a single value.
pub fn stderr(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

/// Per-`L` means, with schemes in the given order and any others after them
/// alphabetically.
pub fn summarize(rows: &[TrajectoryRow], schemes: &[Scheme]) -> Vec<SummaryRow> {
    let rank = |name: &str| {
        schemes
            .iter()
            .position(|s| s.name() == name)
            .unwrap_or(schemes.len())
    };
    let mut groups: BTreeMap<(usize, String, usize), Vec<&TrajectoryRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((rank(&r.scheme), r.scheme.clone(), r.l)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((_, scheme, l), g)| {
            let d: Vec<f64> = g.iter().map(|r| r.trace_distance_to_true).collect();
            let opt_mean = |f: fn(&TrajectoryRow) -> Option<f64>| {
                let v: Vec<f64> = g.iter().filter_map(|r| f(r)).collect();
                (!v.is_empty()).then(|| mean(&v))
            };
            SummaryRow {
                scheme,
                l,
                mean_trace_distance: mean(&d),
                stderr: stderr(&d),
                mean_loglik_max: opt_mean(|r| r.loglik_max),
                mean_delta: opt_mean(|r| r.delta),
                n_runs: g.len(),
            }
        })
        .collect()
}

pub fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectories(path: &Path) -> Result<Vec<TrajectoryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

impl Outcome {
    /// Writes the four result files into `dir`, returning their paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let paths: Vec<PathBuf> = [TRAJECTORIES, SUMMARY, MANIFEST, MPL_STATES]
            .iter()
            .map(|f| dir.join(f))
            .collect();
        write_csv(&paths[0], &self.rows)?;
        write_csv(&paths[1], &self.summary)?;
        write_json(&paths[2], &self.manifest)?;
        write_json(&paths[3], &self.mpl_states)?;
        Ok(paths)
    }

    /// Non-converged (run, scheme, step) triples.
    pub fn non_converged(&self) -> Vec<(usize, Scheme, usize)> {
        self.manifest
            .entries
            .iter()
            .flat_map(|e| {
                e.schemes
                    .iter()
                    .flat_map(move |s| s.non_converged_steps.iter().map(move |&l| (e.run, s.scheme, l)))
            })
            .collect()
    }
}

/// Rebuilds the summary from a stored trajectory file.
pub fn emit_summary(trajectories: &Path, out: &Path) -> Result<Vec<SummaryRow>> {
    let rows = read_trajectories(trajectories)?;
    let summary = summarize(&rows, &Scheme::ALL);
    write_csv(out, &summary)?;
    Ok(summary)
}
