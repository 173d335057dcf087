//! The `vmfuq` command line.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use crate::config::CliConfig;
use crate::manifest::ingest_manifest;
use crate::report::{calibrate, report, ReportOptions};
use crate::run::{run, RunOptions, CACHE_DIR};
use crate::{CliError, Result};
use vmfuq_core::backends::cache::CacheStore;
use vmfuq_core::backends::{expand_prompt, BackendSet};
use vmfuq_core::calibration::Component;
use vmfuq_core::oracle::{decomposition_audit, HierarchicalModelSpec};
use vmfuq_core::pipeline::{Pipeline, PipelineConfig, ReportStatus};

/// Aleatoric/epistemic uncertainty for text-to-video models.
#[derive(Parser)]
#[command(name = "vmfuq", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Named backend set from the config, or `synthetic`.
    #[arg(long = "backend-set")]
    backend_set: Option<String>,
}

#[derive(Args)]
struct Single {
    prompt: String,
    #[command(flatten)]
    common: Common,
    /// Cache results under DIR/cache.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Calibration {
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    metric: Option<String>,
    #[arg(long, default_value = "total")]
    component: Component,
    #[arg(long = "filter-k")]
    filter_k: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Print N latent prompts for PROMPT.
    Expand(Single),
    /// Estimate h(Z|l) for PROMPT.
    Aleatoric(Single),
    /// Estimate h(V|Z) for PROMPT.
    Epistemic(Single),
    /// Full uncertainty report for PROMPT.
    Total(Single),
    /// Run every task of a manifest into a run directory.
    Run {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Print the calibration of a run without writing files.
    Calibrate(Calibration),
    /// Decomposition audit on a synthetic hierarchical model.
    Simulate {
        /// HierarchicalModelSpec JSON; defaults to dims 8/8, kappa 20/50.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Monte-Carlo sample count.
        #[arg(long, default_value_t = 500_000)]
        samples: usize,
        /// Also write audit.json into DIR.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write calibration.csv, scatter.svg and summary.json into a run directory.
    Report(Calibration),
}

fn pipeline_config(common: &Common) -> Result<PipelineConfig> {
    CliConfig::load_or_default(common.config.as_deref())?.resolve(common.backend_set.as_deref(), common.seed)
}

fn single_pipeline(single: &Single) -> Result<Pipeline> {
    let cfg = pipeline_config(&single.common)?;
    let mut backends = BackendSet::from_config(&cfg.backends)?;
    if let Some(out) = &single.out {
        backends = backends.cached(Arc::new(CacheStore::open(out.join(CACHE_DIR))?));
    }
    Ok(Pipeline::new(cfg, backends)?)
}

fn print(out: &mut dyn Write, value: &impl serde::Serialize) -> Result<()> {
    writeln!(out, "{}", serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn calibration_options(c: &Calibration) -> ReportOptions {
    ReportOptions {
        metric: c.metric.clone(),
        component: c.component,
        filter_k: c.filter_k,
    }
}

fn execute(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Expand(single) => {
            let p = single_pipeline(&single)?;
            let cfg = p.config();
            let latents = expand_prompt(p.backends().expander.as_ref(), &single.prompt, cfg.n_latents, cfg.seed)?;
            let texts: Vec<&str> = latents.iter().map(|z| z.text.as_str()).collect();
            print(out, &texts)?;
            Ok(0)
        }
        Command::Aleatoric(single) => {
            let est = single_pipeline(&single)?.aleatoric(&single.prompt)?;
            print(out, &json!({
                "prompt": single.prompt,
                "aleatoric": est.entropy,
                "latent_fit": est.latent_fit(),
                "latents": est.latents.iter().map(|z| json!({"id": z.id, "text": z.text})).collect::<Vec<_>>(),
            }))?;
            Ok(0)
        }
        Command::Epistemic(single) => {
            let est = single_pipeline(&single)?.epistemic(&single.prompt)?;
            print(out, &json!({
                "prompt": single.prompt,
                "epistemic": est.entropy,
                "per_latent": est.per_latent,
            }))?;
            Ok(if est.dropped() > 0 { 2 } else { 0 })
        }
        Command::Total(single) => {
            let r = single_pipeline(&single)?.total(&single.prompt, &single.prompt)?;
            print(out, &r)?;
            Ok(if r.status == ReportStatus::Partial { 2 } else { 0 })
        }
        Command::Run {
            manifest,
            common,
            out: dir,
            jobs,
        } => {
            if jobs == 0 {
                return Err(CliError::Usage("--jobs must be at least 1".into()));
            }
            let cfg = pipeline_config(&common)?;
            let entries = ingest_manifest(&manifest)?;
            let outcome = run(&entries, &cfg, &RunOptions { out: dir, jobs })?;
            let m = &outcome.manifest;
            for t in m.tasks.iter().filter(|t| t.error.is_some()) {
                writeln!(err, "task {} failed: {}", t.task_id, t.error.as_deref().unwrap_or_default())?;
            }
            print(out, &json!({
                "run_id": m.run_id,
                "config_hash": m.config_hash,
                "tasks": m.tasks.len(),
                "ok": m.count(crate::run::TaskStatus::Ok),
                "partial": m.count(crate::run::TaskStatus::Partial),
                "failed": m.count(crate::run::TaskStatus::Failed),
                "resumed": m.tasks.iter().filter(|t| t.resumed).count(),
                "cache_hits": outcome.cache_hits,
                "cache_misses": outcome.cache_misses,
            }))?;
            Ok(m.exit_code())
        }
        Command::Calibrate(c) => {
            let summary = calibrate(&c.out, &calibration_options(&c))?;
            print(out, &summary.calibration)?;
            Ok(0)
        }
        Command::Simulate {
            config,
            seed,
            samples,
            out: dir,
        } => {
            let mut spec = match config {
                Some(path) => serde_json::from_slice(&std::fs::read(path)?)?,
                None => HierarchicalModelSpec::constant(8, 20.0, 50.0, 0)?,
            };
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            let audit = decomposition_audit(&spec, samples)?;
            let value = json!({
                "spec": spec,
                "audit": audit,
                "gap": audit.gap(),
                "combined_std_error": audit.combined_std_error(),
                "two_term_identity_holds_3sigma": audit.holds(3.0),
                "with_posterior_holds_3sigma": audit.holds_with_posterior(3.0),
            });
            if let Some(dir) = dir {
                crate::write_atomic(&dir.join("audit.json"), &crate::to_json_bytes(&value)?)?;
            }
            print(out, &value)?;
            Ok(0)
        }
        Command::Report(c) => {
            let files = report(&c.out, &calibration_options(&c), None)?;
            for f in [&files.calibration_csv, &files.scatter_svg, &files.summary_json] {
                writeln!(out, "{}", display(f))?;
            }
            Ok(0)
        }
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

/// Runs the `vmfuq` command line with `args` (including the program name),
/// writing results to `out` and diagnostics to `err`. Returns the exit code.
pub fn main_with(args: impl IntoIterator<Item = OsString>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    match execute(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
