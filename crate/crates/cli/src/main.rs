use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lfe_design::designers::{DesignMode, DesignWeights};
use lfe_design::harness::{self, ExperimentConfig, Method};
use lfe_design::net::load_network;
use lfe_design::ode::{ModelName, OdeModel};
use lfe_design::risk::{evaluate, write_rows, NetworkEstimator, ReportRow};
use lfe_design::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "lfe-design", version, about = "Joint training of experimental designs and likelihood-free estimators")]
struct Cli {
    /// TOML experiment config; flags given on the command line override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Reduced sizes that run on a laptop in minutes.
    #[arg(long, global = true)]
    desk_scale: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Task {
    /// exp, 3tc or ppm
    #[arg(long)]
    model: Option<String>,
    /// Comma-separated sparsity levels.
    #[arg(long, value_delimiter = ',')]
    sparsity: Option<Vec<usize>>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a design and estimator jointly.
    Train {
        #[command(flatten)]
        task: Task,
        /// continuous or tabu
        #[arg(long)]
        method: Option<String>,
        /// Comma-separated data-risk weights.
        #[arg(long, value_delimiter = ',')]
        gamma: Option<Vec<f64>>,
    },
    /// Evaluate a saved network on fresh samples.
    Evaluate {
        network: PathBuf,
        /// Design CSV; defaults to the file recorded in the network header.
        #[arg(long)]
        design: Option<PathBuf>,
        #[arg(long)]
        n_sets: Option<usize>,
        #[arg(long)]
        set_size: Option<usize>,
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Greedy design search over a quasi-Newton MAP estimator.
    Greedy {
        #[command(flatten)]
        task: Task,
    },
    /// Exhaustive A-optimal design for the exponential model.
    Aopt {
        #[arg(long, value_delimiter = ',')]
        sparsity: Option<Vec<usize>>,
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Train estimators on random designs.
    RandomBaseline {
        #[command(flatten)]
        task: Task,
        /// continuous or binary
        #[arg(long)]
        mode: Option<String>,
        /// Number of random designs.
        #[arg(long)]
        n: Option<usize>,
        /// Draw continuous weights on every grid point.
        #[arg(long)]
        dense: bool,
    },
    /// Continuous training at one sparsity for several data-risk weights.
    GammaSweep {
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        sparsity: Option<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,10,100,1000,10000")]
        gammas: Vec<f64>,
    },
    /// Write the canonical time grids.
    Grid {
        /// One model; all when omitted.
        #[arg(long)]
        model: Option<String>,
    },
}

fn base_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p, cli.desk_scale)?,
        None if cli.desk_scale => ExperimentConfig::desk_scale(),
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn apply_task(cfg: &mut ExperimentConfig, task: &Task) {
    if let Some(m) = &task.model {
        cfg.model = m.clone();
    }
    if let Some(s) = &task.sparsity {
        cfg.sparsity = s.clone();
    }
}

fn run_with(mut cfg: ExperimentConfig, method: Method) -> Result<()> {
    cfg.method = method;
    cfg.validate()?;
    let art = harness::run_experiment(&cfg)?;
    for r in &art.reports {
        println!(
            "{} {} s={} gamma={} l_q={:.4e} l_d={:.4e} l_T={:.4e} sem={:.2e}",
            r.model, r.method, r.sparsity, r.gamma, r.l_q, r.l_d, r.l_t, r.sem_l_t
        );
    }
    for f in &art.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = base_config(&cli)?;
    match cli.command {
        Command::Train { task, method, gamma } => {
            apply_task(&mut cfg, &task);
            if let Some(m) = method {
                cfg.method = m.parse()?;
            }
            if !matches!(cfg.method, Method::Continuous | Method::Tabu) {
                return Err(Error::config(format!("train expects continuous or tabu, got {}", cfg.method.as_str())));
            }
            if let Some(g) = gamma {
                cfg.gamma = g;
            }
            let m = cfg.method;
            run_with(cfg, m)
        }
        Command::Greedy { task } => {
            apply_task(&mut cfg, &task);
            run_with(cfg, Method::Greedy)
        }
        Command::Aopt { sparsity, sigma } => {
            cfg.model = ModelName::Exponential.as_str().into();
            if let Some(s) = sparsity {
                cfg.sparsity = s;
            }
            if let Some(s) = sigma {
                cfg.aopt_sigma = s;
            }
            run_with(cfg, Method::Aopt)
        }
        Command::RandomBaseline { task, mode, n, dense } => {
            apply_task(&mut cfg, &task);
            if let Some(m) = mode {
                cfg.random_mode = parse_mode(&m)?;
            }
            if let Some(n) = n {
                cfg.n_random_designs = n;
            }
            cfg.random_dense |= dense;
            run_with(cfg, Method::Random)
        }
        Command::GammaSweep { model, sparsity, gammas } => {
            if let Some(m) = model {
                cfg.model = m;
            }
            let s = sparsity.or_else(|| cfg.sparsity.first().copied()).unwrap_or(cfg.train.sparsity_target);
            cfg.sparsity = vec![s];
            cfg.gamma = gammas;
            cfg.validate()?;
            let m = cfg.build_model()?;
            let rows = harness::gamma_sweep(&m, s, &cfg.gamma, &cfg.train, &cfg.eval, cfg.seed)?;
            std::fs::create_dir_all(&cfg.out)?;
            let path = cfg.out.join(format!("gamma_sweep_{}_s{s}.csv", m.name.as_str()));
            write_rows(&path, &rows)?;
            for r in &rows {
                println!("gamma={} l_q={:.4e} l_d={:.4e}", r.gamma, r.l_q, r.l_d);
            }
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Evaluate {
            network,
            design,
            n_sets,
            set_size,
            gamma,
        } => evaluate_network(&cfg, &network, design.as_deref(), n_sets, set_size, gamma),
        Command::Grid { model } => {
            let names = match model {
                Some(m) => vec![m.parse::<ModelName>()?],
                None => vec![ModelName::Exponential, ModelName::ThreeTissue, ModelName::PredatorPrey],
            };
            std::fs::create_dir_all(&cfg.out)?;
            for name in names {
                let path = cfg.out.join(format!("grid_{}.csv", name.as_str()));
                OdeModel::by_name(name).grid.write_csv(&path)?;
                println!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}

fn parse_mode(s: &str) -> Result<DesignMode> {
    match s {
        "continuous" => Ok(DesignMode::Continuous),
        "binary" => Ok(DesignMode::Binary),
        other => Err(Error::config(format!("unknown design mode '{other}' (continuous or binary)"))),
    }
}

fn evaluate_network(
    cfg: &ExperimentConfig,
    network: &Path,
    design: Option<&Path>,
    n_sets: Option<usize>,
    set_size: Option<usize>,
    gamma: Option<f64>,
) -> Result<()> {
    let (net, header) = load_network(network)?;
    let design = match (design, &header.design_file) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(f)) => network.parent().unwrap_or(Path::new(".")).join(f),
        (None, None) => return Err(Error::config("network header names no design file; pass --design")),
    };
    let (w, _) = DesignWeights::read_csv(&design)?;
    let mut c = cfg.clone();
    c.model = header.model.clone();
    let model = c.build_model()?;
    let n_sets = n_sets.unwrap_or(cfg.eval.n_sets);
    let set_size = set_size.unwrap_or(cfg.eval.set_size);
    let gamma = gamma.unwrap_or(cfg.train.gamma);
    let r = evaluate(
        &NetworkEstimator { net: &net, w: &w.values },
        &model,
        gamma,
        n_sets,
        set_size,
        harness::eval_seed(cfg.seed, &header.model),
    )?;
    let row = ReportRow::new(&header.model, "evaluate", w.sparsity(), header.seed, &r);
    println!(
        "{} samples={} l_q={:.4e} l_d={:.4e} l_T={:.4e} sem={:.2e}",
        header.model,
        r.total_samples(),
        r.l_q,
        r.l_d,
        r.l_t,
        r.sem_l_t
    );
    std::fs::create_dir_all(&cfg.out)?;
    let path = cfg.out.join("evaluation.csv");
    write_rows(&path, &[row])?;
    println!("wrote {}", path.display());
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        3
    } else if matches!(e, Error::Config { .. } | Error::Format { .. } | Error::Domain(_) | Error::Shape { .. }) {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
