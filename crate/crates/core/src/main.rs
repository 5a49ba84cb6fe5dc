use std::fs::File;
use std::io::{BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use demediate::config::{Config, FULL_BOOTSTRAP, FULL_NSIM};
use demediate::dag::{format_set, parse_dag};
use demediate::dgm::{
    apply_calibration, calibrate, implied_decline_share, read_dataset_csv, true_value_oracle, ScenarioParams,
};
use demediate::gest::Method;
use demediate::special::norm_cdf;
use demediate::stochastics::StreamKey;
use demediate::study::{
    analyze_trial, emit_results, read_trials_csv, render_table, run_grid, run_scenario, scenario_truth,
    summarize, summarize_with_failures, write_summary_csv, AnalysisPlan, Emit, GridConfig, TrialResult, CALIBRATION_BRANCH,
};
use demediate::{Error, Result};

#[derive(Parser)]
#[command(name = "demediate", version, about = "De-mediation estimators, trial simulator and study harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario config (TOML).
    config: PathBuf,
    /// Directory for the CSV outputs.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of simulated trials; overrides the config.
    #[arg(long)]
    nsim: Option<usize>,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Bootstrap replicates per trial; 0 disables.
    #[arg(long)]
    bootstrap: Option<usize>,
    /// Skip the jackknife.
    #[arg(long)]
    no_jackknife: bool,
    /// nsim = 10000 and B = 1000 unless given explicitly.
    #[arg(long)]
    full_scale: bool,
    /// Print the resolved study settings and exit.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte Carlo study (or grid) described by a config file.
    Simulate(SimulateArgs),
    /// Apply the estimators to one dataset CSV.
    Analyze {
        /// Dataset CSV with patient_id, treat, y0, y05, y1, y15, y2, sym05, sym1, sym15.
        dataset: PathBuf,
        /// Comma-separated subset of mmrm, established, mod1, mod2, mod3.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
        /// Bootstrap replicates for the g-estimators; 0 disables.
        #[arg(long, default_value_t = 0)]
        bootstrap: usize,
        /// Add jackknife standard errors for the g-estimators.
        #[arg(long)]
        jackknife: bool,
        /// Seed of the bootstrap resamples.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output format.
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// True value of the estimand for a config's scenario.
    Oracle {
        /// Scenario config (TOML).
        config: PathBuf,
        /// Simulated patients, both arms together.
        #[arg(long, default_value_t = 10_000_000)]
        n: usize,
        /// Seed of the oracle population.
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Calibrate the decline variance and tau to a target placebo SD of Y2*.
    Calibrate {
        /// Scenario config (TOML) used as the template.
        config: PathBuf,
        /// Target SD of the year-2 score in the placebo arm.
        #[arg(long)]
        target_sd: f64,
        /// Share of non-baseline variance due to the decline rate; defaults
        /// to the share implied by the config.
        #[arg(long)]
        share: Option<f64>,
        /// Seed of the calibration population.
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Minimal adjustment sets of a DAGitty graph.
    DagAdjust {
        /// Graph in DAGitty syntax.
        file: PathBuf,
        /// Defaults to the node flagged `exposure`.
        #[arg(long)]
        exposure: Option<String>,
        /// Defaults to the node flagged `outcome`.
        #[arg(long)]
        outcome: Option<String>,
    },
    /// Summarise an existing trials.csv.
    Report {
        /// trials.csv written by `simulate`.
        trials: PathBuf,
        /// Also write the summary CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn open(path: &PathBuf) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| Error::Io { path: path.clone(), source })
}

/// Scenario parameters after the config's [calibrate] block, if any.
fn calibrated(cfg: &Config, params: &ScenarioParams, seed: u64) -> Result<ScenarioParams> {
    let Some(c) = &cfg.calibrate else {
        return Ok(params.clone());
    };
    let key = StreamKey::new(seed, vec![CALIBRATION_BRANCH]);
    let share = match c.decline_share {
        Some(s) => s,
        None => implied_decline_share(params, &key)?,
    };
    let cal = calibrate(c.target_sd, share, params, &key)?;
    eprintln!(
        "calibrated: decline variance {:.5}, tau {:.3}, SD(Y2*) {:.3}",
        cal.decline_var, cal.tau, cal.achieved_sd
    );
    Ok(apply_calibration(params, &cal))
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let SimulateArgs {
        config,
        out,
        seed,
        nsim,
        threads,
        bootstrap,
        no_jackknife,
        full_scale,
        dry_run,
    } = args;
    let cfg = Config::from_path(&config)?;
    let mut study = cfg.study.clone();
    if full_scale {
        study.nsim = FULL_NSIM;
        study.bootstrap = Some(FULL_BOOTSTRAP);
    }
    if let Some(s) = seed {
        study.master_seed = s;
    }
    if let Some(n) = nsim {
        study.nsim = n;
    }
    if let Some(b) = bootstrap {
        study.bootstrap = (b > 0).then_some(b);
    }
    if no_jackknife {
        study.jackknife = false;
    }
    study.threads = threads.or(study.threads);
    if dry_run {
        println!(
            "nsim {} bootstrap {} jackknife {} seed {} methods {}",
            study.nsim,
            study.bootstrap.unwrap_or(0),
            study.jackknife,
            study.master_seed,
            study.methods.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(","),
        );
        return Ok(());
    }

    if let Some(grid) = &cfg.grid {
        let template = study.params.clone();
        let key = StreamKey::new(study.master_seed, vec![CALIBRATION_BRANCH]);
        let axis = grid.axis.resolve(|| implied_decline_share(&template, &key))?;
        let axis_name = axis.name();
        let gc = GridConfig {
            sym_sds: grid.sym_sds.clone(),
            axis,
            sym_width: grid.sym_width,
            base: study,
            n_oracle: cfg.oracle_n,
        };
        let cells = run_grid(&gc)?;
        for c in &cells {
            println!("sym_sd {} {axis_name} {} theta_true {:.4}", c.sym_sd, c.axis_value, c.theta_true);
            match &c.error {
                Some(e) => println!("  skipped: {e}"),
                None => print!("{}", render_table(&c.summary)),
            }
        }
        for p in emit_results(Emit::Grid { cells: &cells, axis: axis_name }, &out)? {
            eprintln!("wrote {}", p.display());
        }
        return Ok(());
    }

    study.params = calibrated(&cfg, &study.params, study.master_seed)?;
    let truth = scenario_truth(&study.params, cfg.oracle_n, study.master_seed)?;
    let run = run_scenario(&study)?;
    let summary = summarize_with_failures(&run.results, truth, &run.failures);
    println!("theta_true {truth:.4}");
    print!("{}", render_table(&summary));
    for p in emit_results(Emit::Run { run: &run, theta_true: truth }, &out)? {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn analyze(
    dataset: PathBuf,
    methods: Option<Vec<Method>>,
    bootstrap: usize,
    jackknife: bool,
    seed: u64,
    format: Format,
) -> Result<()> {
    let trial = read_dataset_csv(open(&dataset)?)?;
    let plan = AnalysisPlan {
        methods: methods.unwrap_or_else(|| Method::ALL.to_vec()),
        gest: Default::default(),
        bootstrap: (bootstrap > 0).then_some(bootstrap),
        jackknife,
        alpha: demediate::resample::DEFAULT_ALPHA,
    };
    let rows = analyze_trial(&trial, &plan, &StreamKey::new(seed, vec![]));
    // One-sided p-value for benefit (theta < 0).
    let p = |t: &TrialResult, se: Option<f64>| se.map(|s| norm_cdf(t.theta_hat / s));
    let num = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
    let mut stdout = std::io::stdout().lock();
    let io = |e| Error::Io { path: "<stdout>".into(), source: e };
    match format {
        Format::Csv => writeln!(
            stdout,
            "method,theta_hat,se_model,p_model,se_bootstrap,p_bootstrap,se_jackknife,p_jackknife,error"
        )
        .map_err(io)?,
        Format::Text => writeln!(
            stdout,
            "{:<12} {:>10} {:>9} {:>8} {:>9} {:>8} {:>9} {:>8}",
            "method", "theta_hat", "se_model", "p_model", "se_boot", "p_boot", "se_jack", "p_jack"
        )
        .map_err(io)?,
    }
    let mut failed = 0;
    for (m, r) in rows {
        let line = match (&r, format) {
            (Ok(t), Format::Csv) => format!(
                "{m},{:.6},{:.6},{},{},{},{},{},",
                t.theta_hat,
                t.se_model,
                num(p(t, Some(t.se_model))),
                num(t.se_bootstrap),
                num(p(t, t.se_bootstrap)),
                num(t.se_jackknife),
                num(p(t, t.se_jackknife)),
            ),
            (Ok(t), Format::Text) => format!(
                "{:<12} {:>10.4} {:>9.4} {:>8.4} {:>9} {:>8} {:>9} {:>8}",
                m.as_str(),
                t.theta_hat,
                t.se_model,
                p(t, Some(t.se_model)).unwrap_or(f64::NAN),
                t.se_bootstrap.map_or("NA".into(), |v| format!("{v:.4}")),
                p(t, t.se_bootstrap).map_or("NA".into(), |v| format!("{v:.4}")),
                t.se_jackknife.map_or("NA".into(), |v| format!("{v:.4}")),
                p(t, t.se_jackknife).map_or("NA".into(), |v| format!("{v:.4}")),
            ),
            (Err(e), Format::Csv) => {
                failed += 1;
                format!("{m},,,,,,,,\"{}\"", e.to_string().replace('"', "'"))
            }
            (Err(e), Format::Text) => {
                failed += 1;
                format!("{:<12} failed: {e}", m.as_str())
            }
        };
        writeln!(stdout, "{line}").map_err(io)?;
    }
    if failed > 0 {
        return Err(Error::Estimability(format!("{failed} method(s) failed on this dataset")));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Analyze {
            dataset,
            methods,
            bootstrap,
            jackknife,
            seed,
            format,
        } => analyze(dataset, methods, bootstrap, jackknife, seed, format),
        Command::Oracle { config, n, seed } => {
            let cfg = Config::from_path(&config)?;
            let params = calibrated(&cfg, &cfg.study.params, cfg.study.master_seed)?;
            let o = true_value_oracle(&params, n, &StreamKey::new(seed, vec![]))?;
            println!("theta {:.4} se {:.4} n {}", o.theta, o.se, o.n);
            Ok(())
        }
        Command::Calibrate {
            config,
            target_sd,
            share,
            seed,
        } => {
            let cfg = Config::from_path(&config)?;
            let key = StreamKey::new(seed, vec![]);
            let share = match share {
                Some(s) => s,
                None => implied_decline_share(&cfg.study.params, &key)?,
            };
            let c = calibrate(target_sd, share, &cfg.study.params, &key)?;
            println!(
                "decline_share {share:.4} decline_var {:.6} tau {:.4} sd_y2_star {:.4}",
                c.decline_var, c.tau, c.achieved_sd
            );
            Ok(())
        }
        Command::DagAdjust { file, exposure, outcome } => {
            let text = std::fs::read_to_string(&file).map_err(|source| Error::Io { path: file.clone(), source })?;
            let g = parse_dag(&text)?;
            let x = exposure
                .or_else(|| g.exposure().map(str::to_string))
                .ok_or_else(|| Error::Config("no --exposure given and none flagged in the graph".into()))?;
            let y = outcome
                .or_else(|| g.outcome().map(str::to_string))
                .ok_or_else(|| Error::Config("no --outcome given and none flagged in the graph".into()))?;
            let mut sets: Vec<String> = g.minimal_adjustment_sets(&x, &y)?.iter().map(format_set).collect();
            sets.sort();
            for s in sets {
                println!("{s}");
            }
            Ok(())
        }
        Command::Report { trials, out } => {
            let (results, theta_true) = read_trials_csv(open(&trials)?)?;
            if results.is_empty() {
                return Err(Error::Schema(format!("{} has no rows", trials.display())));
            }
            let s = summarize(&results, theta_true);
            println!("theta_true {theta_true:.4}");
            print!("{}", render_table(&s));
            if let Some(p) = out {
                let f = File::create(&p).map_err(|source| Error::Io { path: p.clone(), source })?;
                write_summary_csv(&s, f)?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
