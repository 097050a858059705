//! `shenet`: cluster, train, predict, evaluate and report from a TOML config.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use log::info;

use shenet_core::bank::{cluster_summary, TrajectoryBank};
use shenet_core::complexity::{self, DEFAULT_SIZES};
use shenet_core::config::{self, PredictorKind};
use shenet_core::metrics::{encode_points, evaluate, ConstantVelocity, EvalReport, Predictor};
use shenet_core::neural::ShenetParams;
use shenet_core::pipeline::{self, loss_curve_csv, RawRetrieval};
use shenet_core::{report, trajdata, Error, ExperimentConfig, Result, ShenetModel};

#[derive(Parser, Debug)]
#[command(name = "shenet", version, about = "Scene-history trajectory prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `-s bank.k=24`. Repeatable.
    #[arg(short = 's', long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Control-point rule for CS metrics and the CS loss: mid, lsq or literal:t0.
    #[arg(long, value_name = "RULE", global = true)]
    cs_control: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Cluster the training set into the initial trajectory bank.
    Cluster(Common),
    /// Train the refinement network and grow the bank.
    Train(Common),
    /// Predict futures for the test set from a trained model.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Number of candidates per trajectory (defaults to eval.top_k).
        #[arg(short = 'k', long)]
        top_k: Option<usize>,
    },
    /// Score the configured predictor on the test set.
    Evaluate(Common),
    /// Time bank search and update over several bank sizes.
    BenchSearch {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SIZES.to_vec())]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 1000)]
        queries: usize,
        #[arg(long, default_value_t = 5)]
        reps: usize,
    },
    /// Write the configured synthetic scene as a trajectory file and raster.
    Synth(Common),
    /// Render an evaluation CSV as an SVG plot.
    Report {
        #[command(flatten)]
        common: Common,
        eval_csv: PathBuf,
        out_svg: PathBuf,
        /// Trajectories to draw (defaults to eval.report_samples).
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Train (or fit the baseline) and evaluate, writing every artifact.
    Run(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Cluster(c) | Command::Train(c) | Command::Evaluate(c) | Command::Synth(c) | Command::Run(c) => c,
            Command::Predict { common, .. } | Command::BenchSearch { common, .. } | Command::Report { common, .. } => common,
        }
    }
}

fn command_with_keys() -> clap::Command {
    let keys = format!("Config keys (section.key  default):\n{}", config::keys_help());
    let mut cmd = Cli::command().after_long_help(keys.clone());
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    for name in names {
        let k = keys.clone();
        cmd = cmd.mut_subcommand(name, |s| s.after_help(k));
    }
    cmd
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut overrides = c.set.clone();
    if let Some(rule) = &c.cs_control {
        overrides.push(format!("eval.control=\"{rule}\""));
        overrides.push(format!("train.cs_control=\"{rule}\""));
    }
    match &c.config {
        Some(p) => ExperimentConfig::load(p, &overrides),
        None => ExperimentConfig::from_toml_str("", &overrides),
    }
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let out = cfg.output_dir();
    fs::create_dir_all(&out)?;
    Ok(out)
}

fn load_model(cfg: &ExperimentConfig, data: &pipeline::ExperimentData, dir: &Path) -> Result<ShenetModel> {
    let bank = TrajectoryBank::load(dir.join("bank.json"))?.frozen();
    let s = &data.scene;
    let mc = cfg.model_config(s.n_cls(), s.h(), s.w(), cfg.data.t_fut);
    let params = ShenetParams::load(dir.join("checkpoint.json"), Some(&mc))?;
    ShenetModel::new(bank, params)
}

fn cmd_cluster(cfg: &ExperimentConfig) -> Result<()> {
    let data = pipeline::load_data(cfg)?;
    let (bank, summary) = cluster_summary(&data.train, &cfg.bank_params(f64::INFINITY))?;
    let out = out_dir(cfg)?;
    bank.save(out.join("bank.json"))?;
    let mut csv = String::from("cluster,size,mean_distance\n");
    for s in &summary {
        let _ = writeln!(csv, "{},{},{}", s.cluster, s.size, s.mean_distance);
    }
    fs::write(out.join("clusters.csv"), csv)?;
    println!("K={} entries={} trajectories={}", cfg.bank.k, bank.len(), data.train.len());
    Ok(())
}

fn cmd_train(cfg: &ExperimentConfig) -> Result<()> {
    let data = pipeline::load_data(cfg)?;
    let (model, state, theta) = pipeline::fit(cfg, &data)?;
    let out = out_dir(cfg)?;
    model.bank.save(out.join("bank.json"))?;
    model.params.save(out.join("checkpoint.json"))?;
    fs::write(out.join("loss_curve.csv"), loss_curve_csv(&state))?;
    println!(
        "epochs={} steps={} theta={theta:.6} bank={} additions={} final_loss={:.6}",
        state.epoch,
        state.step,
        model.bank.len(),
        state.bank_additions,
        state.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_predict(cfg: &ExperimentConfig, k: Option<usize>) -> Result<()> {
    let data = pipeline::load_data(cfg)?;
    let out = out_dir(cfg)?;
    let model = load_model(cfg, &data, &out)?;
    let k = k.unwrap_or(cfg.eval.top_k);
    let mut csv = String::from("index,person_id,rank,prediction\n");
    for (i, t) in data.test.iter().enumerate() {
        for (rank, p) in model.predict(&t.past(), &data.scene, k)?.iter().enumerate() {
            let _ = writeln!(csv, "{i},{},{rank},{}", t.person_id(), encode_points(p));
        }
    }
    let path = out.join("predictions.csv");
    fs::write(&path, csv)?;
    println!("{} trajectories × {k} candidates -> {}", data.test.len(), path.display());
    Ok(())
}

fn cmd_evaluate(cfg: &ExperimentConfig) -> Result<()> {
    let data = pipeline::load_data(cfg)?;
    let out = out_dir(cfg)?;
    let opts = cfg.eval_options();
    let k = cfg.eval.top_k;
    let score = |p: &dyn Predictor| evaluate(&data.test, &data.scene, p, k, &opts);
    let report = match cfg.train.predictor {
        PredictorKind::ConstantVelocity => score(&ConstantVelocity { t_fut: cfg.data.t_fut })?,
        PredictorKind::RawRetrieval => {
            let bank = TrajectoryBank::load(out.join("bank.json"))?.frozen();
            score(&RawRetrieval { bank: &bank })?
        }
        PredictorKind::Shenet => score(&load_model(cfg, &data, &out)?)?,
    };
    report.write(out.join("eval.csv"), out.join("eval.json"))?;
    print_metrics(&report);
    Ok(())
}

fn print_metrics(r: &EvalReport) {
    let a = &r.aggregate;
    println!(
        "n={} best_of={} ADE={:.4} FDE={:.4} CS-ADE={:.4} CS-FDE={:.4}",
        r.n, r.best_of_k, a.ade, a.fde, a.cs_ade, a.cs_fde
    );
}

fn cmd_bench(cfg: &ExperimentConfig, sizes: &[usize], queries: usize, reps: usize) -> Result<()> {
    if sizes.len() < 2 || queries == 0 {
        return Err(Error::Config("bench-search needs at least two sizes and one query".into()));
    }
    let (t_pas, t_fut, seed) = (cfg.data.t_pas, cfg.data.t_fut, cfg.bank.seed);
    let search = complexity::bench_search(sizes, queries, reps, t_pas, t_fut, seed)?;
    let update = complexity::bench_update(sizes, queries, reps, t_pas, t_fut, seed)?;
    println!("operation,size,mean_ns");
    for (op, timings) in [("search", &search), ("update", &update)] {
        for t in timings {
            println!("{op},{},{:.1}", t.size, t.mean_ns);
        }
    }
    let (slope, intercept, r2) = complexity::fit_timings(&search);
    println!("search linear fit: slope {slope:.3} ns/entry, intercept {intercept:.1} ns, R² {r2:.4}");
    println!("update max/min ratio {:.3}", complexity::spread_ratio(&update));
    Ok(())
}

fn cmd_synth(cfg: &ExperimentConfig) -> Result<()> {
    let d = &cfg.data;
    let ds = trajdata::generate_synthetic_scene(d.n_groups, d.per_group, d.noise_sigma, d.seed, d.t_pas, d.t_fut)?;
    let out = out_dir(cfg)?;
    trajdata::dump(&ds, out.join("synthetic.txt"))?;
    ds.scene().save(out.join("scene.json"))?;
    println!("{} trajectories -> {}", ds.len(), out.join("synthetic.txt").display());
    Ok(())
}

fn cmd_report(cfg: &ExperimentConfig, csv: &Path, svg: &Path, samples: Option<usize>) -> Result<()> {
    let report = EvalReport::from_csv(&fs::read_to_string(csv)?, cfg.eval.top_k)?;
    fs::write(svg, report::render_svg(&report, samples.unwrap_or(cfg.eval.report_samples)))?;
    println!("{} trajectories -> {}", report.n, svg.display());
    Ok(())
}

fn cmd_run(cfg: &ExperimentConfig) -> Result<()> {
    let outcome = pipeline::run_experiment(cfg)?;
    if let Some(theta) = outcome.theta {
        info!("theta {theta:.6}");
    }
    print_metrics(&outcome.report);
    println!("artifacts in {}", outcome.output_dir.display());
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli.command.common())?;
    match &cli.command {
        Command::Cluster(_) => cmd_cluster(&cfg),
        Command::Train(_) => cmd_train(&cfg),
        Command::Predict { top_k, .. } => cmd_predict(&cfg, *top_k),
        Command::Evaluate(_) => cmd_evaluate(&cfg),
        Command::BenchSearch { sizes, queries, reps, .. } => cmd_bench(&cfg, sizes, *queries, *reps),
        Command::Synth(_) => cmd_synth(&cfg),
        Command::Report { eval_csv, out_svg, samples, .. } => cmd_report(&cfg, eval_csv, out_svg, *samples),
        Command::Run(_) => cmd_run(&cfg),
    }
}

fn parse() -> Cli {
    let matches: ArgMatches = command_with_keys().get_matches();
    Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
