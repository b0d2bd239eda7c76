use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::error;

use sise_core::harness::dataset::Dataset;
use sise_core::harness::explain::ExplainRequest;
use sise_core::harness::synthetic::SyntheticConfig;
use sise_core::harness::train::{train_to_dir, TrainRecipe};
use sise_core::harness::{
    ablate, bench, eval, explain, sanity, synthetic, ClassSelection, Method, RunConfig,
};
use sise_core::model::ScoreSurface;

#[derive(Parser)]
#[command(
    name = "sise",
    version,
    about = "Semantic input sampling explanations for CNNs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Explain one class of one image.
    Explain {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        class_id: usize,
        /// Also write every attribution mask and per-layer map as XMAP.
        #[arg(long)]
        dump_masks: bool,
        /// Also write a PNG overlay.
        #[arg(long)]
        heatmap: bool,
    },
    /// Explain every ground-truth label of the test split and score it.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Evaluate SISE at several values of mu.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        data: DataArgs,
        #[arg(
            long = "mu-list",
            value_delimiter = ',',
            default_value = "0,0.3,0.5,0.75"
        )]
        mu_list: Vec<f64>,
    },
    /// Compare explanations of the trained model with progressively
    /// re-randomized copies.
    Sanity {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Time SISE against RISE and report exact pass counts.
    Bench {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        trials: usize,
    },
    /// Render a synthetic shapes corpus with exact ground truth.
    GenSynthetic {
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 200)]
        test_count: usize,
        /// Image size as HxW.
        #[arg(long, default_value = "32x32", value_parser = parse_size)]
        size: (u32, u32),
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        max_shapes: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the desk CNN on a corpus.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Defaults to `<data>/recipe.json`.
        #[arg(long)]
        recipe: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    mu: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "sise")]
    method: Method,
    #[arg(long, default_value_t = 4000)]
    rise_masks: usize,
    /// Score explained by gradients and sampling: logit or probability.
    #[arg(long)]
    score_surface: Option<ScoreSurface>,
    /// Score used by Drop% and Increase%.
    #[arg(long, default_value = "probability")]
    metric_surface: ScoreSurface,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    /// Evaluate at most this many test images.
    #[arg(long)]
    limit: Option<usize>,
    /// Comma-separated class ids; all ground-truth labels when omitted.
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<usize>>,
}

fn parse_size(s: &str) -> Result<(u32, u32), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got `{s}`"))?;
    let h = h.trim().parse().map_err(|e| format!("bad height: {e}"))?;
    let w = w.trim().parse().map_err(|e| format!("bad width: {e}"))?;
    Ok((h, w))
}

impl RunArgs {
    fn config(&self, data: Option<&DataArgs>) -> RunConfig {
        RunConfig {
            model: self.model.clone(),
            data: data.map(|d| d.data.clone()),
            classes: match data.and_then(|d| d.classes.clone()) {
                Some(ids) => ClassSelection::Ids(ids),
                None => ClassSelection::AllGroundTruth,
            },
            mu: self.mu,
            batch_size: self.batch_size,
            seed: self.seed,
            out: self.out.clone(),
            method: self.method,
            score_surface: self.score_surface,
            metric_surface: self.metric_surface,
            rise_masks: self.rise_masks,
            limit: data.and_then(|d| d.limit),
            ..RunConfig::default()
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Explain {
            run,
            image,
            class_id,
            dump_masks,
            heatmap,
        } => {
            let config = run.config(None);
            let manifest = explain::run_explain(
                &config,
                &ExplainRequest {
                    image,
                    class_id,
                    dump_masks,
                    heatmap,
                },
            )?;
            println!(
                "{}: {} masks, {} forward / {} backward passes",
                config.out.join(&manifest.xmap).display(),
                manifest.mask_count,
                manifest.passes.forward,
                manifest.passes.backward
            );
        }
        Command::Eval { run, data } => {
            let report = eval::run_eval(&run.config(Some(&data)))?;
            print!("{}", eval::report_table(&report));
        }
        Command::Ablate { run, data, mu_list } => {
            let rows = ablate::run_ablate(&run.config(Some(&data)), &mu_list)?;
            print!("{}", ablate::ablation_table(&rows));
        }
        Command::Sanity { run, data } => {
            let report = sanity::run_sanity(&run.config(Some(&data)))?;
            print!("{}", sanity::sanity_table(&report));
        }
        Command::Bench { run, data, trials } => {
            let mut config = run.config(None);
            config.data = data;
            let rows = bench::run_bench(&config, trials)?;
            print!("{}", bench::bench_table(&rows));
        }
        Command::GenSynthetic {
            count,
            test_count,
            size,
            seed,
            max_shapes,
            out,
        } => {
            let config = SyntheticConfig {
                count,
                test_count,
                height: size.0,
                width: size.1,
                seed,
                max_shapes,
            };
            let summary = synthetic::generate(&config, &out)?;
            println!("{}", serde_json::to_string(&summary)?);
        }
        Command::Train { data, recipe, out } => {
            let dataset = Dataset::open(&data)?;
            let recipe_path = recipe.unwrap_or_else(|| data.join("recipe.json"));
            let recipe = TrainRecipe::read(&recipe_path)
                .with_context(|| format!("reading recipe {}", recipe_path.display()))?;
            let report = train_to_dir(&dataset, &recipe, &out)?;
            println!(
                "test top-1 hit rate {:.3}, final loss {:.4}",
                report.test_top1_hit,
                report.epochs.last().map_or(f64::NAN, |e| e.loss)
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SISE_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e:#}");
            eprintln!("error: {e:#}");
            let code = e
                .chain()
                .find_map(|c| c.downcast_ref::<sise_core::Error>())
                .map_or(1, |e| e.exit_code());
            ExitCode::from(code as u8)
        }
    }
}
