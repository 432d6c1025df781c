mod bundle;
mod config;
mod pipeline;
mod sources;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::{error, warn};
use serde::Serialize;

use scpanel::datagen::{generate_panel, FactorModelSpec};
use scpanel::ingest::write_daily_counts;

use bundle::{full, sha256_hex, Bundle, Table};
use config::{RunConfig, SourceKind};
use pipeline::{OutcomeResult, Stages};

#[derive(Debug, Parser)]
#[command(name = "scpanel", version, about = "Ridge synthetic control with placebo inference, plus ITS")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,

    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Clone, clap::Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Only process this outcome.
    #[arg(long)]
    outcome: Option<String>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Generator seed for datagen sources (outcome k gets seed + k).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Verb {
    /// Parse incident files into daily counts plus an audit report.
    Ingest(Common),
    /// Build the per-outcome block panels.
    Panel(Common),
    /// Fit synthetic control weights for each outcome.
    Fit(Common),
    /// Unit placebos, p-values, bounds, in-time and early roll-in runs.
    Placebo(Common),
    /// Interrupted time series on the treated unit's daily counts.
    Its(Common),
    /// Everything: fit, placebo inference, ITS if configured, smoothed series.
    Run(Common),
    /// Generate a factor-model panel from a FactorModelSpec TOML file.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Serialize)]
struct SmoothingMeta {
    method: &'static str,
    degree: u8,
    kernel: &'static str,
    robustness_iterations: u8,
    span: f64,
    display_only: bool,
}

#[derive(Serialize)]
struct Meta {
    tool: &'static str,
    version: &'static str,
    verb: &'static str,
    config_sha256: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    complete: bool,
    outcomes: BTreeMap<String, pipeline::OutcomeStatus>,
    #[serde(skip_serializing_if = "Option::is_none")]
    smoothing: Option<SmoothingMeta>,
}

fn meta(verb: &'static str, config: &Path, seed: Option<u64>) -> Result<Meta> {
    let bytes = std::fs::read(config).with_context(|| format!("reading {}", config.display()))?;
    Ok(Meta {
        tool: "scpanel",
        version: env!("CARGO_PKG_VERSION"),
        verb,
        config_sha256: sha256_hex(&bytes),
        seed,
        complete: true,
        outcomes: BTreeMap::new(),
        smoothing: None,
    })
}

/// Loads the config and applies command-line overrides. Nothing is written.
fn prepare(c: &Common) -> Result<(RunConfig, Vec<String>, PathBuf)> {
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.override_seed(seed)?;
        cfg.validate()?;
    }
    let mut names = cfg.outcome_names();
    if let Some(o) = &c.outcome {
        if !names.contains(o) {
            bail!("--outcome {o:?} is not configured (have: {})", names.join(", "));
        }
        names = vec![o.clone()];
    }
    if let Some(n) = c.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let out = c.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok((cfg, names, out))
}

/// Returns whether every outcome completed.
fn run_verb(verb: &'static str, c: &Common) -> Result<bool> {
    let (cfg, names, out) = prepare(c)?;
    let mut m = meta(verb, &c.config, c.seed)?;

    if verb == "its" && cfg.its.is_none() {
        bail!("the config has no [its] table");
    }
    let ingested = if cfg.source_kind() == SourceKind::Incidents {
        Some(sources::ingest(&cfg)?)
    } else {
        None
    };
    let mut bundle = Bundle::create(&out)?;

    if verb == "ingest" {
        let ing = ingested.context("`ingest` needs an incident source")?;
        let mut buf = Vec::new();
        write_daily_counts(&mut buf, &ing.counts)?;
        bundle.write("daily_counts.csv", &buf)?;
        bundle.write("audit.txt", ing.audit.render().as_bytes())?;
        bundle.finish(m)?;
        return Ok(true);
    }

    let data = sources::load_outcomes(&cfg, &names, ingested.as_ref());

    if verb == "panel" {
        let mut results = BTreeMap::new();
        for (name, d) in &data {
            let r = d
                .as_ref()
                .map_err(|e| anyhow::anyhow!("{e:#}"))
                .and_then(|d| d.panel().map_err(Into::into));
            match r {
                Ok(p) => {
                    let file = format!("panels/{name}.csv");
                    std::fs::create_dir_all(bundle.path("panels"))?;
                    p.write_csv(&bundle.path(&file))?;
                    bundle.register(&file)?;
                    bundle.register(&format!("panels/{name}.meta.json"))?;
                    results.insert(name.clone(), Ok(()));
                }
                Err(e) => {
                    results.insert(name.clone(), Err(e));
                }
            }
        }
        m.outcomes = pipeline::statuses(&results, |_| Vec::new());
        return finish(bundle, m);
    }

    if verb == "its" {
        let mut fits = BTreeMap::new();
        for (name, d) in &data {
            let r = d
                .as_ref()
                .map_err(|e| anyhow::anyhow!("{e:#}"))
                .and_then(|d| pipeline::its_fit(&cfg, name, d));
            fits.insert(name.clone(), r);
        }
        let ok = fits
            .iter()
            .filter_map(|(k, r)| r.as_ref().ok().map(|f| (k.clone(), f.clone())))
            .collect();
        pipeline::write_its(&mut bundle, &ok, cfg.alpha)?;
        m.outcomes = pipeline::statuses(&fits, |_| Vec::new());
        return finish(bundle, m);
    }

    let stages = match verb {
        "fit" => Stages::default(),
        "placebo" => Stages {
            placebo: true,
            ..Stages::default()
        },
        _ => Stages {
            placebo: true,
            its: true,
            smooth: true,
        },
    };
    let results = pipeline::analyze_all(&cfg, &data, stages);
    let ok: Vec<&OutcomeResult> = results.values().filter_map(|r| r.as_ref().ok()).collect();
    if verb != "placebo" {
        pipeline::write_fit_tables(&mut bundle, &ok)?;
    }
    if stages.placebo {
        pipeline::write_placebo_tables(&mut bundle, &ok, cfg.alpha)?;
    }
    if stages.its && cfg.its.is_some() {
        let fits = ok
            .iter()
            .filter_map(|r| r.its.clone().map(|f| (r.name.clone(), f)))
            .collect();
        pipeline::write_its(&mut bundle, &fits, cfg.alpha)?;
    }
    if stages.smooth {
        pipeline::write_smoothed(&mut bundle, &ok)?;
        m.smoothing = Some(SmoothingMeta {
            method: "loess",
            degree: 1,
            kernel: "tricube",
            robustness_iterations: 0,
            span: cfg.smoothing.span,
            display_only: true,
        });
    }
    m.outcomes = pipeline::statuses(&results, |r| r.dropped.clone());
    finish(bundle, m)
}

fn finish(bundle: Bundle, mut m: Meta) -> Result<bool> {
    m.complete = m.outcomes.values().all(|s| s.status == "ok");
    for (name, s) in &m.outcomes {
        if let Some(e) = &s.error {
            error!("outcome {name} failed: {e}");
        }
    }
    let complete = m.complete;
    bundle.finish(m)?;
    Ok(complete)
}

fn gen(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let text = std::fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let mut spec: FactorModelSpec = toml::from_str(&text).with_context(|| format!("invalid spec {}", config.display()))?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let g = generate_panel(&spec)?;
    let mut m = meta("gen", config, seed)?;
    m.outcomes.insert(
        "panel".into(),
        pipeline::OutcomeStatus {
            status: "ok",
            error: None,
            dropped_donors: Vec::new(),
        },
    );
    let mut bundle = Bundle::create(out)?;
    g.panel.write_csv(&bundle.path("panel.csv"))?;
    bundle.register("panel.csv")?;
    bundle.register("panel.meta.json")?;
    let mut truth = Table::new(&["block_start", "true_effect"])?;
    for (d, e) in g.panel.block_starts().iter().zip(&g.true_effect) {
        truth.row([d.to_string(), full(*e)])?;
    }
    bundle.write("truth.csv", &truth.into_bytes()?)?;
    if let Some(mix) = &g.treated_mix {
        let mut t = Table::new(&["unit", "weight"])?;
        for (u, w) in g.panel.units()[1..].iter().zip(mix) {
            t.row([u.clone(), full(*w)])?;
        }
        bundle.write("treated_mix.csv", &t.into_bytes()?)?;
    }
    bundle.finish(m)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();

    let result = match &cli.verb {
        Verb::Ingest(c) => run_verb("ingest", c),
        Verb::Panel(c) => run_verb("panel", c),
        Verb::Fit(c) => run_verb("fit", c),
        Verb::Placebo(c) => run_verb("placebo", c),
        Verb::Its(c) => run_verb("its", c),
        Verb::Run(c) => run_verb("run", c),
        Verb::Gen { config, out, seed } => gen(config, out, *seed).map(|()| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            warn!("some outcomes failed; partial outputs written");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

