use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use cmtad::alerting::{aggregate_alerts, fit_priority_bins, grouping_from_column, plot_series, read_maintenance_csv, write_alerts_csv};
use cmtad::backbone::{load_checkpoint, save_checkpoint, ModelState};
use cmtad::data::{ingest_csv, read_labels, read_split_file, LabelSet, Schema, SplitTag};
use cmtad::evaluation::{evaluate, random_baseline, MetricReport};
use cmtad::experiments::{axis_variants, run_ablation, AblationAxis};
use cmtad::pipeline::{prepare, test_streams, train_model, PrepareOptions, Prepared};
use cmtad::presets::Preset;
use cmtad::scoring::{
    compute_residuals, flag_anomalies, read_decisions_csv, read_residuals_csv, read_thresholds_csv, write_decisions_csv,
    write_residuals_csv, write_thresholds_csv, ScoreOptions,
};
use cmtad::synthgen::{generate, read_spec};
use serde::Serialize;

use crate::{CliError, RunConfig};

type Result<T> = std::result::Result<T, CliError>;

/// Output root used when neither `--out` nor the config sets one.
pub const OUT_ENV: &str = "CMTAD_OUT";

#[derive(Debug, Parser)]
#[command(name = "cmtad", version, about = "Context-conditioned KPI anomaly detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the first configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labelled population from a spec file.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        quiet: bool,
    },
    /// Train a model and write its checkpoint and training log.
    Train(Common),
    /// Fit per-unit thresholds and priority bins on validation residuals.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compute residuals and test decisions.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        thresholds: Option<PathBuf>,
    },
    /// Metric report of test decisions, with random baseline rows.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        decisions: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Aggregated alert stream and plot-ready series.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        decisions: Option<PathBuf>,
        #[arg(long)]
        residuals: Option<PathBuf>,
    },
    /// One-factor ablation over seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// gat_version, context_blocks or context_mode; repeatable.
        #[arg(long = "axis", required = true)]
        axes: Vec<String>,
        /// Comma-separated seeds; the configured seeds when absent.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
}

/// Resolves the output directory: flag, then config, then the environment.
pub fn output_dir(flag: Option<&Path>, cfg: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.map(Path::to_path_buf))
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("cmtad-out"))
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    seed: u64,
    quiet: bool,
}

impl Ctx {
    fn new(c: &Common) -> Result<Self> {
        let preset = c.preset.as_deref().map(str::parse::<Preset>).transpose()?;
        let cfg = RunConfig::load(&c.config, preset)?;
        let out = output_dir(c.out.as_deref(), cfg.out.as_deref());
        std::fs::create_dir_all(&out)?;
        std::fs::copy(&c.config, out.join("config.toml"))?;
        std::fs::write(out.join("config.resolved.toml"), cfg.to_toml()?)?;
        Ok(Self {
            seed: c.seed.unwrap_or(cfg.seeds[0]),
            cfg,
            out,
            quiet: c.quiet,
        })
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn path_or(&self, p: &Option<PathBuf>, name: &str) -> PathBuf {
        p.clone().unwrap_or_else(|| self.out.join(name))
    }

    fn prepare(&self) -> Result<Prepared> {
        let d = &self.cfg.data;
        let schema: Schema = toml::from_str(&std::fs::read_to_string(&d.schema)?).map_err(cmtad::Error::from)?;
        let raw = ingest_csv(&d.csv, &schema)?;
        let splits = d.splits.as_ref().map(|p| read_split_file(p, &raw)).transpose()?;
        let opts = PrepareOptions {
            test_frac: d.test_frac,
            val_frac: d.val_frac,
            max_missing_frac: d.max_missing_frac,
            ..PrepareOptions::default()
        };
        let prep = prepare(&raw, splits, self.cfg.model.l, self.cfg.model.h, &opts)?;
        if !prep.removed.removed.is_empty() {
            self.say(format!("eligibility filter removed {} NE(s)", prep.removed.removed.len()));
        }
        Ok(prep)
    }

    fn score_options(&self) -> ScoreOptions {
        let e = &self.cfg.evaluation;
        ScoreOptions {
            stride: e.score_stride,
            batch_size: e.score_batch,
            forecast_weight: e.forecast_weight,
            ..ScoreOptions::default()
        }
    }

    fn labels(&self, flag: &Option<PathBuf>) -> Result<LabelSet> {
        let p = flag
            .clone()
            .or_else(|| self.cfg.data.labels.clone())
            .ok_or_else(|| CliError::MissingInput("no labels file (set data.labels or --labels)".into()))?;
        Ok(read_labels(p)?)
    }

    fn checkpoint(&self, flag: &Option<PathBuf>) -> Result<ModelState> {
        let p = self.path_or(flag, "checkpoint.bin");
        if !p.exists() {
            return Err(CliError::MissingInput(format!("checkpoint {} not found", p.display())));
        }
        Ok(load_checkpoint(&p)?)
    }

    fn write_json<T: Serialize>(&self, name: &str, v: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(v)?;
        s.push('\n');
        std::fs::write(self.out.join(name), s)?;
        Ok(())
    }

    fn write_text(&self, name: &str, s: &str) -> Result<()> {
        std::fs::write(self.out.join(name), s)?;
        if !self.quiet {
            print!("{s}");
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct Evaluation {
    model: MetricReport,
    random: Vec<MetricReport>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { spec, out, seed, quiet } => {
            let mut s = read_spec(&spec)?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let out = output_dir(out.as_deref(), None);
            let gen = generate(&s)?;
            gen.write(&out)?;
            std::fs::copy(&spec, out.join("config.toml"))?;
            std::fs::write(out.join("config.resolved.toml"), toml::to_string_pretty(&s).map_err(cmtad::Error::from)?)?;
            if !quiet {
                eprintln!(
                    "wrote {} NEs x {} rows, {} labelled cells to {}",
                    gen.dataset.nes.len(),
                    s.t,
                    gen.labels.len(),
                    out.display()
                );
            }
        }
        Command::Train(c) => {
            let ctx = Ctx::new(&c)?;
            let prep = ctx.prepare()?;
            let model = prep.model_config(ctx.cfg.model.clone());
            ctx.say(format!("training {} NEs, k={}, seed {}", prep.ds.nes.len(), model.k, ctx.seed));
            let (state, run) = train_model(&prep, model, &ctx.cfg.train, ctx.seed)?;
            save_checkpoint(&state, &ctx.out.join("checkpoint.bin"))?;
            run.save_curves(&ctx.out.join("train_log.csv"))?;
            ctx.write_json("train_run.json", &run)?;
            ctx.say(format!(
                "best epoch {} of {}, val total {:.6}",
                run.best_epoch,
                run.curves.len(),
                run.best_val_total()
            ));
        }
        Command::Calibrate { common, checkpoint } => {
            let ctx = Ctx::new(&common)?;
            let state = ctx.checkpoint(&checkpoint)?;
            let prep = ctx.prepare()?;
            let opts = ScoreOptions {
                splits: vec![SplitTag::Val],
                ..ctx.score_options()
            };
            let frame = compute_residuals(&state, &prep.ds, &prep.splits, &opts)?;
            let table = cmtad::scoring::calibrate(&frame, &ctx.cfg.calibration)?;
            let bins = fit_priority_bins(&frame, &ctx.cfg.calibration.priority_quantiles)?;
            write_thresholds_csv(&table, ctx.out.join("thresholds.csv"))?;
            ctx.write_json("bins.json", &bins)?;
            for w in table.warnings.iter().chain(&bins.warnings) {
                ctx.say(format!("warning: {w}"));
            }
            ctx.say(format!("{} thresholds at p = {}", table.entries.len(), table.p));
        }
        Command::Score {
            common,
            checkpoint,
            thresholds,
        } => {
            let ctx = Ctx::new(&common)?;
            let state = ctx.checkpoint(&checkpoint)?;
            let table = read_thresholds_csv(ctx.path_or(&thresholds, "thresholds.csv"))?;
            let prep = ctx.prepare()?;
            let frame = compute_residuals(&state, &prep.ds, &prep.splits, &ctx.score_options())?;
            let d = flag_anomalies(&frame, &table, SplitTag::Test)?;
            write_residuals_csv(&frame, ctx.out.join("residuals.csv"))?;
            write_decisions_csv(&d, ctx.out.join("decisions.csv"))?;
            ctx.say(format!("{} of {} test cells flagged", d.flagged().len(), d.entries.len()));
        }
        Command::Evaluate {
            common,
            decisions,
            labels,
        } => {
            let ctx = Ctx::new(&common)?;
            let d = read_decisions_csv(ctx.path_or(&decisions, "decisions.csv"))?;
            let labels = ctx.labels(&labels)?;
            let prep = ctx.prepare()?;
            let streams = test_streams(&prep, &d, &labels)?;
            let model = evaluate(&streams, "model")?;
            let random = ctx
                .cfg
                .evaluation
                .random_seeds
                .iter()
                .map(|&s| evaluate(&random_baseline(&streams, s), &format!("random_{s}")))
                .collect::<cmtad::Result<Vec<_>>>()?;
            let mut text = model.render_table();
            for r in &random {
                text.push('\n');
                text.push_str(&r.render_table());
            }
            ctx.write_json("metrics.json", &Evaluation { model, random })?;
            ctx.write_text("metrics.txt", &text)?;
        }
        Command::Report {
            common,
            decisions,
            residuals,
        } => {
            let ctx = Ctx::new(&common)?;
            let d = read_decisions_csv(ctx.path_or(&decisions, "decisions.csv"))?;
            let frame = read_residuals_csv(
                ctx.path_or(&residuals, "residuals.csv"),
                ctx.cfg.evaluation.forecast_weight,
            )?;
            let bins = fit_priority_bins(&frame, &ctx.cfg.calibration.priority_quantiles)?;
            let grouping = match &ctx.cfg.alerting.group_column {
                Some(col) => grouping_from_column(&ctx.prepare()?.ds, col)?,
                None => frame.ne_ids.iter().map(|n| (n.clone(), n.clone())).collect::<BTreeMap<_, _>>(),
            };
            let maintenance = match &ctx.cfg.alerting.maintenance {
                Some(p) => read_maintenance_csv(p)?,
                None => Vec::new(),
            };
            let alerts = aggregate_alerts(&d, &bins, &grouping, &maintenance)?;
            write_alerts_csv(&alerts, ctx.out.join("alerts.csv"))?;
            ctx.write_json("plot.json", &plot_series(&alerts))?;
            ctx.say(format!("{} alert records", alerts.len()));
        }
        Command::Ablate { common, axes, seeds } => {
            let ctx = Ctx::new(&common)?;
            let seeds = if seeds.is_empty() { ctx.cfg.seeds.clone() } else { seeds };
            let prep = ctx.prepare()?;
            for axis in &axes {
                let a: AblationAxis = axis.parse()?;
                let variants = axis_variants(&ctx.cfg.model, a);
                let report = run_ablation(
                    &prep,
                    &variants,
                    &ctx.cfg.train,
                    &ctx.cfg.calibration,
                    &ctx.score_options(),
                    &seeds,
                    |v, s| ctx.say(format!("[{axis}] {v} seed {s}")),
                )?;
                ctx.write_json(&format!("ablation_{axis}.json"), &report)?;
                ctx.write_text(&format!("ablation_{axis}.txt"), &report.render_table())?;
            }
        }
    }
    Ok(())
}
