//! Command-line front end: `simulate`, `fit`, `diagnose`, `prior-study`,
//! `compare-ranks`.
//!
//! Options may also come from a `key=value` file given with `--config`;
//! keys are long flag names and flags on the command line win. Exit codes:
//! 0 success, 1 runtime failure, 2 usage error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use crate::dataio::{
    filter_low_participation, load_chain, load_vote_matrix, save_chain, save_truth, save_vote_matrix,
    simulate_scenario, write_manifest, BodyFormat, ScenarioGeometry, ScenarioSpec, VoteFormat,
};
use crate::diagnostics::{
    accuracy_from_theta, dic_from_parts, gelman_rubin, pns_great_decomposition, prior_variance_study, PriorFamily,
};
use crate::distributions::HyperpriorConfig;
use crate::error::Error;
use crate::geometry::UnitVector;
use crate::model::{prior_predictive_theta, VoteMatrix};
use crate::postprocess::{
    align_chain, circular_ranks, euclidean_ranks, ordinal_ranks, orient_ranks, spearman, summarize,
};
use crate::sampler::{
    random_seed, run_chain, run_euclidean_chain, stream_rng, ChainOutput, ChainSettings, GhmcConfig, ModelKind,
    Sample, SphericalOptions,
};

/// R-hat above this value flags a fit as not converged.
pub const RHAT_WARNING: f64 = 1.1;

#[derive(Debug, Parser)]
#[command(name = "spherefactor", version, about = "Bayesian spherical factor models for binary data")]
struct Cli {
    /// Worker threads (chains and per-position updates run in parallel).
    #[arg(long, global = true, env = "SPHEREFACTOR_THREADS")]
    threads: Option<usize>,
    /// Directory for all outputs.
    #[arg(long, global = true, env = "SPHEREFACTOR_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,
    /// key=value file with defaults for any long option.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset from one of the simulation scenarios.
    Simulate(SimulateArgs),
    /// Run MCMC on a vote matrix.
    Fit(FitArgs),
    /// DIC, accuracy, R-hat and PNS tables from chain files.
    Diagnose(DiagnoseArgs),
    /// Monte Carlo prior variance of theta across dimensions.
    PriorStudy(PriorStudyArgs),
    /// Median subject ranks from a circular and a 1-D Euclidean fit.
    CompareRanks(CompareRanksArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VoteFormatArg {
    CsvWide,
    CsvLong,
}

impl From<VoteFormatArg> for VoteFormat {
    fn from(v: VoteFormatArg) -> Self {
        match v {
            VoteFormatArg::CsvWide => VoteFormat::CsvWide,
            VoteFormatArg::CsvLong => VoteFormat::CsvLong,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BodyArg {
    Csv,
    Binary,
}

impl From<BodyArg> for BodyFormat {
    fn from(v: BodyArg) -> Self {
        match v {
            BodyArg::Csv => BodyFormat::Csv,
            BodyArg::Binary => BodyFormat::Binary,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelArg {
    Spherical,
    Euclidean,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum HyperpriorArg {
    Default,
    Alternative,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq)]
enum PresetArg {
    /// Start with the smaller steps and switch during burn-in.
    Auto,
    Narrow,
    Wide,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FamilyArg {
    Vmf,
    Svm,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// sphere2, sphere3, sphere5 or euclid3.
    #[arg(long, default_value = "sphere2")]
    scenario: String,
    #[arg(long, default_value_t = 100)]
    subjects: usize,
    #[arg(long, default_value_t = 700)]
    items: usize,
    /// Overrides the scenario dimension.
    #[arg(long)]
    k: Option<usize>,
    /// Link concentration of every item (spherical scenarios).
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "csv-wide")]
    format: VoteFormatArg,
    /// Output file prefix.
    #[arg(long, default_value = "sim")]
    name: String,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    votes: PathBuf,
    #[arg(long, value_enum, default_value = "csv-wide")]
    format: VoteFormatArg,
    #[arg(long, value_enum, default_value = "spherical")]
    model: ModelArg,
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Kept samples per chain.
    #[arg(long, default_value_t = 20_000)]
    iterations: usize,
    #[arg(long, default_value_t = 10_000)]
    burn_in: usize,
    #[arg(long, default_value_t = 1)]
    thin: usize,
    #[arg(long, default_value_t = 1)]
    chains: usize,
    /// Base seed; chain c uses seed + c.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "default")]
    hyperprior: HyperpriorArg,
    #[arg(long, value_enum, default_value = "auto")]
    preset: PresetArg,
    /// Drop subjects missing more than this fraction of votes first.
    #[arg(long)]
    max_missing: Option<f64>,
    #[arg(long, value_enum, default_value = "csv")]
    body: BodyArg,
    #[arg(long, default_value = "fit")]
    name: String,
    /// Credible level of the interval summaries.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    #[arg(long)]
    votes: PathBuf,
    #[arg(long, value_enum, default_value = "csv-wide")]
    format: VoteFormatArg,
    /// Chain files; chains with the same model and K are pooled.
    #[arg(long, num_args = 1.., value_delimiter = ',', required = true)]
    chains: Vec<PathBuf>,
    #[arg(long, default_value = "diagnostics")]
    name: String,
}

#[derive(Debug, Args)]
struct PriorStudyArgs {
    #[arg(long, value_enum, default_value = "svm")]
    family: FamilyArg,
    #[arg(long, value_delimiter = ',', default_value = "0.5,2,10")]
    omegas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.5,2,10")]
    taus: Vec<f64>,
    #[arg(long, default_value_t = 30)]
    k_max: usize,
    #[arg(long, default_value_t = 50.0)]
    kappa: f64,
    /// Draws per (omega, tau, K).
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    /// Also write prior-predictive histograms of theta for these K.
    #[arg(long, value_delimiter = ',')]
    histogram_k: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    bins: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "prior_study")]
    name: String,
}

#[derive(Debug, Args)]
struct CompareRanksArgs {
    #[arg(long)]
    spherical: PathBuf,
    #[arg(long)]
    euclidean: PathBuf,
    #[arg(long, default_value = "ranks")]
    name: String,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Reads `key=value` lines; blank lines and `#` comments are skipped.
fn read_config_file(path: &Path) -> CliResult<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("{}:{}: expected key=value", path.display(), n + 1)))?;
        out.push((k.trim().replace('_', "-"), v.trim().to_string()));
    }
    Ok(out)
}

/// Appends config-file options that are not already on the command line.
fn merge_config(args: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let strs: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let cfg_path = strs.iter().enumerate().find_map(|(i, a)| {
        if a == "--config" {
            strs.get(i + 1).cloned()
        } else {
            a.strip_prefix("--config=").map(str::to_string)
        }
    });
    let Some(cfg_path) = cfg_path else {
        return Ok(args);
    };
    let present = |key: &str| {
        let flag = format!("--{key}");
        strs.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}=")))
    };
    let mut out = args;
    for (k, v) in read_config_file(Path::new(&cfg_path))? {
        if k == "config" || present(&k) {
            continue;
        }
        match v.as_str() {
            "true" => out.push(format!("--{k}").into()),
            "false" => {}
            _ => {
                out.push(format!("--{k}").into());
                out.push(v.into());
            }
        }
    }
    Ok(out)
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match merge_config(args) {
        Ok(a) => a,
        Err(e) => return report(e),
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => report(e),
    }
}

fn report(e: CliError) -> i32 {
    match e {
        CliError::Usage(m) => {
            eprintln!("error: {m}");
            2
        }
        CliError::Runtime(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn execute(cli: Cli) -> CliResult<()> {
    if cli.threads == Some(0) {
        return Err(usage("--threads must be at least 1"));
    }
    std::fs::create_dir_all(&cli.out_dir).map_err(Error::from)?;
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(t) = cli.threads {
            b = b.num_threads(t);
        }
        b.build().map_err(|e| CliError::Runtime(Error::Domain(format!("thread pool: {e}"))))?
    };
    let common = json!({
        "threads": cli.threads,
        "out_dir": cli.out_dir,
        "config_file": cli.config,
        "version": env!("CARGO_PKG_VERSION"),
    });
    let out = cli.out_dir.clone();
    pool.install(|| match cli.command {
        Command::Simulate(a) => cmd_simulate(a, &out, common),
        Command::Fit(a) => cmd_fit(a, &out, common),
        Command::Diagnose(a) => cmd_diagnose(a, &out, common),
        Command::PriorStudy(a) => cmd_prior_study(a, &out, common),
        Command::CompareRanks(a) => cmd_compare_ranks(a, &out, common),
    })
}

fn seed_or_generate(seed: Option<u64>) -> (u64, bool) {
    match seed {
        Some(s) => (s, false),
        None => (random_seed(), true),
    }
}

fn cmd_simulate(a: SimulateArgs, out: &Path, common: serde_json::Value) -> CliResult<()> {
    let mut spec = ScenarioSpec::preset(&a.scenario, a.subjects, a.items).map_err(|e| usage(e.to_string()))?;
    if let Some(k) = a.k {
        spec.geometry = match spec.geometry {
            ScenarioGeometry::Sphere { precision, .. } => ScenarioGeometry::Sphere { k, precision },
            ScenarioGeometry::Euclidean { .. } => ScenarioGeometry::Euclidean { k },
        };
    }
    if let Some(kappa) = a.kappa {
        spec.kappa = kappa;
    }
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let (seed, generated) = seed_or_generate(a.seed);
    let sim = simulate_scenario(&spec, seed)?;
    let votes_path = out.join(format!("{}_votes.csv", a.name));
    let truth_path = out.join(format!("{}_truth.csv", a.name));
    save_vote_matrix(&sim.votes, &votes_path, a.format.into())?;
    save_truth(&sim.truth, &truth_path)?;
    write_manifest(
        &out.join(format!("{}_manifest.json", a.name)),
        &json!({
            "command": "simulate",
            "scenario": a.scenario,
            "spec": spec,
            "kappa_rule": format!("kappa_j = {} for every item", spec.kappa),
            "seed": seed,
            "seed_generated": generated,
            "n_subjects": sim.votes.n_subjects(),
            "n_items": sim.votes.n_items(),
            "format": VoteFormat::from(a.format).to_string(),
            "data_hash": sim.votes.content_hash(),
            "files": { "votes": votes_path, "truth": truth_path },
            "common": common,
        }),
    )?;
    println!("wrote {} ({} x {})", votes_path.display(), sim.votes.n_subjects(), sim.votes.n_items());
    Ok(())
}

fn chain_file_name(name: &str, model: ModelKind, k: usize, c: usize, body: BodyFormat) -> String {
    let ext = match body {
        BodyFormat::Csv => "csv",
        BodyFormat::Binary => "bin",
    };
    format!("{name}_{model}_k{k}_chain{c}.{ext}")
}

fn acceptance_json(chain: &ChainOutput) -> serde_json::Value {
    let s = &chain.stats;
    let rates = |a: &crate::sampler::AcceptanceStats| {
        json!({
            "beta": a.beta.rate(), "psi": a.psi.rate(), "zeta": a.zeta.rate(),
            "omega": a.omega.rate(), "tau": a.tau.rate(), "kappa": a.kappa.rate(),
            "nonfinite_rejections": a.beta.nonfinite + a.psi.nonfinite + a.zeta.nonfinite,
        })
    };
    json!({
        "seed": chain.seed,
        "burn_in": rates(&s.burn_in),
        "sampling": rates(&s.sampling),
        "subject_preset": s.subject_preset,
        "item_preset": s.item_preset,
        "max_norm_drift": s.max_norm_drift,
        "theta_floor_events": s.theta_floor_events,
        "link_clamp_events": s.link_clamp_events,
    })
}

fn cmd_fit(a: FitArgs, out: &Path, common: serde_json::Value) -> CliResult<()> {
    if a.k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    if a.chains == 0 {
        return Err(usage("--chains must be at least 1"));
    }
    if a.thin == 0 {
        return Err(usage("--thin must be at least 1"));
    }
    if !(a.level > 0.0 && a.level < 1.0) {
        return Err(usage("--level must be in (0, 1)"));
    }
    let mut y = load_vote_matrix(&a.votes, a.format.into())?;
    let mut dropped = Vec::new();
    if let Some(t) = a.max_missing {
        let r = filter_low_participation(&y, t)?;
        y = r.votes;
        dropped = r.dropped;
    }
    let (seed, generated) = seed_or_generate(a.seed);
    let hyper = match a.hyperprior {
        HyperpriorArg::Default => HyperpriorConfig::default(),
        HyperpriorArg::Alternative => HyperpriorConfig::alternative(),
    };
    let mut opts = SphericalOptions {
        hyper,
        ..SphericalOptions::default()
    };
    match a.preset {
        PresetArg::Auto => {}
        PresetArg::Narrow => {
            opts.subject_presets = vec![GhmcConfig::subjects_narrow()];
            opts.item_presets = vec![GhmcConfig::items_narrow()];
            opts.select_presets = false;
        }
        PresetArg::Wide => {
            opts.subject_presets = vec![GhmcConfig::subjects_wide()];
            opts.item_presets = vec![GhmcConfig::items_wide()];
            opts.select_presets = false;
        }
    }
    let model = match a.model {
        ModelArg::Spherical => ModelKind::Spherical,
        ModelArg::Euclidean => ModelKind::Euclidean,
    };
    let chains: Vec<ChainOutput> = (0..a.chains)
        .into_par_iter()
        .map(|c| {
            let mut s = ChainSettings::new(a.k, a.iterations, a.burn_in, seed.wrapping_add(c as u64));
            s.thin = a.thin;
            match model {
                ModelKind::Spherical => run_chain(&y, &s, &opts, None),
                ModelKind::Euclidean => run_euclidean_chain(&y, &s),
            }
        })
        .collect::<crate::Result<_>>()?;

    let body: BodyFormat = a.body.into();
    let mut files = Vec::new();
    for (c, chain) in chains.iter().enumerate() {
        let p = out.join(chain_file_name(&a.name, model, a.k, c, body));
        save_chain(chain, &p, body)?;
        files.push(p);
    }
    let rhat = if chains.len() >= 2 && a.iterations >= 2 {
        let traces: Vec<Vec<f64>> = chains.iter().map(|c| c.loglik.clone()).collect();
        Some(gelman_rubin(&traces)?)
    } else {
        None
    };
    let not_converged = rhat.is_some_and(|r| !(r <= RHAT_WARNING));
    if not_converged {
        log::warn!("R-hat {:.3} exceeds {RHAT_WARNING}; chains may not have converged", rhat.unwrap_or(f64::NAN));
    }

    let summary_path = out.join(format!("{}_{model}_k{}_summary.csv", a.name, a.k));
    if a.iterations > 0 {
        write_summary(&chains, &y, a.level, &summary_path)?;
    }
    let report_path = out.join(format!("{}_{model}_k{}_acceptance.json", a.name, a.k));
    write_manifest(
        &report_path,
        &json!({ "chains": chains.iter().map(acceptance_json).collect::<Vec<_>>(), "rhat_loglik": rhat }),
    )?;
    write_manifest(
        &out.join(format!("{}_{model}_k{}_manifest.json", a.name, a.k)),
        &json!({
            "command": "fit",
            "model": model,
            "k": a.k,
            "iterations": a.iterations,
            "burn_in": a.burn_in,
            "thin": a.thin,
            "chains": a.chains,
            "seed": seed,
            "seed_generated": generated,
            "chain_seeds": chains.iter().map(|c| c.seed).collect::<Vec<_>>(),
            "hyperprior": opts.hyper,
            "preset": format!("{:?}", a.preset).to_lowercase(),
            "subject_presets": opts.subject_presets,
            "item_presets": opts.item_presets,
            "max_missing": a.max_missing,
            "dropped_subjects": dropped,
            "votes": a.votes,
            "data_hash": y.content_hash(),
            "n_subjects": y.n_subjects(),
            "n_items": y.n_items(),
            "rhat_loglik": rhat,
            "convergence_warning": not_converged,
            "files": { "chains": files, "summary": summary_path, "acceptance": report_path },
            "common": common,
        }),
    )?;
    println!("wrote {} chain file(s) to {}", files.len(), out.display());
    Ok(())
}

fn write_summary(chains: &[ChainOutput], y: &VoteMatrix, level: f64, path: &Path) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
    w.write_record(["chain", "block", "index", "id", "coord", "posterior_mean", "angle_center", "angle_lower", "angle_upper"])
        .map_err(Error::from)?;
    let f = |v: f64| format!("{v:?}");
    for (c, chain) in chains.iter().enumerate() {
        match chain.model {
            ModelKind::Spherical => {
                let aligned = align_chain(chain, 0)?;
                let s = summarize(&aligned, level)?;
                for (block, list, ids) in [
                    ("beta", &s.subjects, y.subject_ids()),
                    ("psi", &s.psi, y.item_ids()),
                    ("zeta", &s.zeta, y.item_ids()),
                ] {
                    for (i, p) in list.iter().enumerate() {
                        for d in 0..p.mean.len() {
                            let (ac, al, au) = if d < p.angle_center.len() {
                                (f(p.angle_center[d]), f(p.angle_lower[d]), f(p.angle_upper[d]))
                            } else {
                                (String::new(), String::new(), String::new())
                            };
                            w.write_record([
                                c.to_string(),
                                block.into(),
                                i.to_string(),
                                ids[i].clone(),
                                d.to_string(),
                                f(p.mean[d]),
                                ac,
                                al,
                                au,
                            ])
                            .map_err(Error::from)?;
                        }
                    }
                }
                for (name, v) in [("omega", s.omega_mean), ("tau", s.tau_mean), ("inv_lambda", s.inv_lambda_mean)] {
                    w.write_record([c.to_string(), name.into(), "0".into(), String::new(), "0".into(), f(v), String::new(), String::new(), String::new()])
                        .map_err(Error::from)?;
                }
            }
            ModelKind::Euclidean => {
                let n = chain.samples.len() as f64;
                let first = match &chain.samples[0] {
                    Sample::Euclidean(p) => p.clone(),
                    _ => unreachable!("euclidean chain"),
                };
                let mut acc = first;
                for s in &chain.samples[1..] {
                    if let Sample::Euclidean(p) = s {
                        acc.mu.iter_mut().zip(&p.mu).for_each(|(a, b)| *a += b);
                        for (x, z) in acc.alpha.iter_mut().zip(&p.alpha) {
                            x.iter_mut().zip(z).for_each(|(a, b)| *a += b);
                        }
                        for (x, z) in acc.beta.iter_mut().zip(&p.beta) {
                            x.iter_mut().zip(z).for_each(|(a, b)| *a += b);
                        }
                    }
                }
                let mut row = |block: &str, i: usize, id: &str, d: usize, v: f64| {
                    w.write_record([c.to_string(), block.into(), i.to_string(), id.into(), d.to_string(), f(v / n), String::new(), String::new(), String::new()])
                };
                for (i, b) in acc.beta.iter().enumerate() {
                    for (d, v) in b.iter().enumerate() {
                        row("beta", i, &y.subject_ids()[i], d, *v).map_err(Error::from)?;
                    }
                }
                for (j, m) in acc.mu.iter().enumerate() {
                    row("mu", j, &y.item_ids()[j], 0, *m).map_err(Error::from)?;
                }
                for (j, a) in acc.alpha.iter().enumerate() {
                    for (d, v) in a.iter().enumerate() {
                        row("alpha", j, &y.item_ids()[j], d, *v).map_err(Error::from)?;
                    }
                }
            }
        }
    }
    w.flush().map_err(Error::from)?;
    Ok(())
}

/// Long-format diagnostic rows `(model, K, metric, value)` for chain groups.
pub fn diagnose_chains(y: &VoteMatrix, chains: &[ChainOutput]) -> crate::Result<Vec<(ModelKind, usize, String, f64)>> {
    let hash = y.content_hash();
    for c in chains {
        if c.data_hash != hash {
            return Err(Error::Incompatible(format!(
                "chain (seed {}) was fit to different data (hash {} vs {})",
                c.seed, c.data_hash, hash
            )));
        }
    }
    let mut groups: BTreeMap<(u8, usize), Vec<&ChainOutput>> = BTreeMap::new();
    for c in chains {
        let m = match c.model {
            ModelKind::Spherical => 0,
            ModelKind::Euclidean => 1,
        };
        groups.entry((m, c.k)).or_default().push(c);
    }
    let mut rows = Vec::new();
    for ((_, k), group) in groups {
        let model = group[0].model;
        let pooled = ChainOutput {
            samples: group.iter().flat_map(|c| c.samples.iter().cloned()).collect(),
            loglik: group.iter().flat_map(|c| c.loglik.iter().copied()).collect(),
            ..group[0].clone()
        };
        let theta = crate::diagnostics::posterior_mean_theta(&pooled)?;
        let d = dic_from_parts(y, &theta, &pooled.loglik)?;
        rows.push((model, k, "dic".to_string(), d.dic));
        rows.push((model, k, "dic_fit_term".to_string(), d.fit_term));
        rows.push((model, k, "dic_complexity".to_string(), d.complexity_term));
        rows.push((model, k, "accuracy".to_string(), accuracy_from_theta(y, &theta)));
        rows.push((model, k, "mean_loglik".to_string(), crate::diagnostics::mean_var(&pooled.loglik).0));
        if group.len() >= 2 {
            let traces: Vec<Vec<f64>> = group.iter().map(|c| c.loglik.clone()).collect();
            rows.push((model, k, "rhat_loglik".to_string(), gelman_rubin(&traces)?));
        }
        if model == ModelKind::Spherical && k >= 1 {
            let aligned = align_chain(group[0], 0)?;
            let s = summarize(&aligned, 0.95)?;
            let pts: Vec<UnitVector> = s.subjects.iter().map(|p| UnitVector::from_unnormalized(p.mean.clone())).collect();
            match pns_great_decomposition(&pts) {
                Ok(r) => {
                    for (d, f) in r.fractions.iter().enumerate() {
                        rows.push((model, k, format!("pns_fraction_{}", d + 1), *f));
                    }
                }
                Err(e) => log::info!("PNS skipped for K={k}: {e}"),
            }
        }
    }
    Ok(rows)
}

fn cmd_diagnose(a: DiagnoseArgs, out: &Path, common: serde_json::Value) -> CliResult<()> {
    let y = load_vote_matrix(&a.votes, a.format.into())?;
    let chains: Vec<ChainOutput> = a.chains.iter().map(|p| load_chain(p)).collect::<crate::Result<_>>()?;
    let rows = diagnose_chains(&y, &chains)?;
    let path = out.join(format!("{}.csv", a.name));
    let mut w = csv::Writer::from_path(&path).map_err(Error::from)?;
    w.write_record(["model", "k", "metric", "value"]).map_err(Error::from)?;
    for (m, k, metric, v) in &rows {
        w.write_record([m.to_string(), k.to_string(), metric.clone(), format!("{v:?}")])
            .map_err(Error::from)?;
    }
    w.flush().map_err(Error::from)?;
    write_manifest(
        &out.join(format!("{}_manifest.json", a.name)),
        &json!({
            "command": "diagnose",
            "votes": a.votes,
            "chains": a.chains,
            "data_hash": y.content_hash(),
            "dic_convention": "l(posterior mean theta) - 2 Var(l); higher is better",
            "accuracy_tie_rule": "theta >= 0.5 predicts 1",
            "output": path,
            "common": common,
        }),
    )?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_prior_study(a: PriorStudyArgs, out: &Path, common: serde_json::Value) -> CliResult<()> {
    if a.n < 2 {
        return Err(usage("--n must be at least 2"));
    }
    if a.k_max == 0 || a.omegas.is_empty() || a.taus.is_empty() {
        return Err(usage("need --k-max >= 1 and at least one omega and tau"));
    }
    if a.omegas.iter().chain(&a.taus).any(|v| !(*v > 0.0)) || !(a.kappa > 0.0) {
        return Err(usage("omega, tau and kappa must be positive"));
    }
    if a.histogram_k.contains(&0) || a.bins == 0 {
        return Err(usage("histogram K and bins must be positive"));
    }
    let (seed, generated) = seed_or_generate(a.seed);
    let family = match a.family {
        FamilyArg::Vmf => PriorFamily::Vmf,
        FamilyArg::Svm => PriorFamily::SvmPolynomial,
    };
    let ks: Vec<usize> = (1..=a.k_max).collect();
    let path = out.join(format!("{}.csv", a.name));
    let mut w = csv::Writer::from_path(&path).map_err(Error::from)?;
    w.write_record(["family", "omega", "tau", "k", "n", "mean", "mean_se", "var", "var_se"])
        .map_err(Error::from)?;
    let fam = format!("{:?}", a.family).to_lowercase();
    for (s, (&om, &ta)) in a.omegas.iter().flat_map(|o| a.taus.iter().map(move |t| (o, t))).enumerate() {
        let rows = prior_variance_study(family, om, ta, &ks, a.kappa, a.n, seed.wrapping_add(s as u64))?;
        for r in rows {
            w.write_record([
                fam.clone(),
                format!("{om:?}"),
                format!("{ta:?}"),
                r.k.to_string(),
                r.n.to_string(),
                format!("{:?}", r.mean),
                format!("{:?}", r.mean_se),
                format!("{:?}", r.var),
                format!("{:?}", r.var_se),
            ])
            .map_err(Error::from)?;
        }
    }
    w.flush().map_err(Error::from)?;

    let mut hist_path = None;
    if !a.histogram_k.is_empty() {
        let p = out.join(format!("{}_histogram.csv", a.name));
        let mut h = csv::Writer::from_path(&p).map_err(Error::from)?;
        h.write_record(["k", "bin_lower", "bin_upper", "density"]).map_err(Error::from)?;
        let cfg = HyperpriorConfig::default();
        for &k in &a.histogram_k {
            let mut rng = stream_rng(seed, k as u64, 300, 0);
            let draws = prior_predictive_theta(k, &cfg, a.n, &mut rng)?;
            let mut counts = vec![0usize; a.bins];
            for t in draws {
                counts[((t * a.bins as f64) as usize).min(a.bins - 1)] += 1;
            }
            let width = 1.0 / a.bins as f64;
            for (b, c) in counts.iter().enumerate() {
                h.write_record([
                    k.to_string(),
                    format!("{:?}", b as f64 * width),
                    format!("{:?}", (b + 1) as f64 * width),
                    format!("{:?}", *c as f64 / (a.n as f64 * width)),
                ])
                .map_err(Error::from)?;
            }
        }
        h.flush().map_err(Error::from)?;
        hist_path = Some(p);
    }
    write_manifest(
        &out.join(format!("{}_manifest.json", a.name)),
        &json!({
            "command": "prior-study",
            "family": fam,
            "omegas": a.omegas,
            "taus": a.taus,
            "k_max": a.k_max,
            "kappa": a.kappa,
            "n": a.n,
            "seed": seed,
            "seed_generated": generated,
            "series": a.omegas.len() * a.taus.len(),
            "files": { "variance": path, "histogram": hist_path },
            "common": common,
        }),
    )?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Median ranks of the spherical (circle) and Euclidean fits, the latter
/// oriented to agree with the former.
pub fn compare_ranks(spherical: &ChainOutput, euclidean: &ChainOutput) -> crate::Result<(Vec<f64>, Vec<f64>)> {
    if spherical.model != ModelKind::Spherical || euclidean.model != ModelKind::Euclidean {
        return Err(Error::Incompatible("expected one spherical and one Euclidean chain".into()));
    }
    if spherical.k != 1 || euclidean.k != 1 {
        return Err(Error::Incompatible("rank comparison needs K = 1 chains".into()));
    }
    if spherical.n_subjects() != euclidean.n_subjects() {
        return Err(Error::Incompatible("chains have different numbers of subjects".into()));
    }
    let aligned = align_chain(spherical, 0)?;
    let rs = circular_ranks(&aligned.configs)?;
    let eu: Vec<_> = euclidean
        .samples
        .iter()
        .filter_map(|s| match s {
            Sample::Euclidean(p) => Some(p.clone()),
            _ => None,
        })
        .collect();
    let re = orient_ranks(&euclidean_ranks(&eu)?, &rs);
    Ok((rs, re))
}

fn cmd_compare_ranks(a: CompareRanksArgs, out: &Path, common: serde_json::Value) -> CliResult<()> {
    let s = load_chain(&a.spherical)?;
    let e = load_chain(&a.euclidean)?;
    if s.data_hash != e.data_hash {
        return Err(Error::Incompatible("chains were fit to different data".into()).into());
    }
    let (rs, re) = compare_ranks(&s, &e)?;
    let path = out.join(format!("{}.csv", a.name));
    let mut w = csv::Writer::from_path(&path).map_err(Error::from)?;
    w.write_record(["subject", "spherical_median_rank", "euclidean_median_rank", "spherical_order", "euclidean_order"])
        .map_err(Error::from)?;
    let (os, oe) = (ordinal_ranks(&rs), ordinal_ranks(&re));
    for i in 0..rs.len() {
        w.write_record([
            i.to_string(),
            format!("{:?}", rs[i]),
            format!("{:?}", re[i]),
            os[i].to_string(),
            oe[i].to_string(),
        ])
        .map_err(Error::from)?;
    }
    w.flush().map_err(Error::from)?;
    let rho = spearman(&rs, &re);
    write_manifest(
        &out.join(format!("{}_manifest.json", a.name)),
        &json!({
            "command": "compare-ranks",
            "spherical": a.spherical,
            "euclidean": a.euclidean,
            "spearman": rho,
            "output": path,
            "common": common,
        }),
    )?;
    println!("spearman {rho:.4}; wrote {}", path.display());
    Ok(())
}
