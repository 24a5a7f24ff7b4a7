mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use fmlctl::data::{generate_dataset, read_dataset, write_dataset};
use fmlctl::fml::{flowmap_widths, load_model, save_model, train_flowmap};
use fmlctl::harness::{
    build_report, format_table, held_out_trajectories, open_loop_error, read_logs, run_closed_loop,
    write_report_csv, Controller,
};
use fmlctl::plant::{make_plant, spinup, PlantParams};
use fmlctl::rl::{load_policy, ppo_train, save_policy, SpinupPool};
use fmlctl::scalar::fmt17;

use config::{ControllerKind, ExperimentConfig};

#[derive(Parser, Debug)]
#[command(name = "fmlctl", version, about = "Flow-map learning and drag control experiments")]
struct Cli {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the experiment seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the plant regime parameter r.
    #[arg(long, global = true)]
    regime: Option<f64>,
    #[arg(long, global = true, value_enum)]
    controller: Option<ControllerKind>,
    /// Flow-map model file.
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Policy file.
    #[arg(long, global = true)]
    policy: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Closed-loop duration in time units.
    #[arg(long, global = true)]
    duration: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Writes the uncontrolled spinup history at the configured regime.
    Spinup,
    /// Generates the random-excitation dataset.
    GenData,
    /// Trains the flow map on the dataset.
    TrainFml,
    /// Compares surrogate and plant rollouts on held-out excitation.
    ValidateOpenLoop,
    /// Trains a policy with PPO inside the surrogate.
    TrainPpo,
    /// Runs one closed-loop experiment against the plant.
    RunControl,
    /// Summarizes closed-loop logs.
    Report,
}

fn settings(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.data.master_seed = s;
        cfg.fml.train.seed = s;
        cfg.rl.ppo.seed = s;
    }
    if let Some(r) = cli.regime {
        cfg.plant.regime = r;
    }
    if let Some(c) = cli.controller {
        cfg.control.controller = c;
    }
    if let Some(m) = &cli.model {
        cfg.control.model = Some(m.clone());
    }
    if let Some(p) = &cli.policy {
        cfg.control.policy = Some(p.clone());
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    if let Some(d) = cli.duration {
        cfg.control.duration = d;
    }
    std::fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    Ok(cfg)
}

fn require(path: &Path, what: &str) -> anyhow::Result<()> {
    if !path.exists() {
        return Err(fmlctl::Error::Config(format!("{what} {} does not exist", path.display())).into());
    }
    Ok(())
}

fn plant(cfg: &ExperimentConfig) -> anyhow::Result<PlantParams<f64>> {
    Ok(make_plant(cfg.plant.regime)?)
}

fn cmd_spinup(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let hist = spinup(&plant(cfg)?, cfg.plant.t_spin, cfg.plant.h0, cfg.plant.dt)?;
    let mut out = String::from("t,c_d,c_l\n");
    let t0 = cfg.plant.t_spin - (hist.v.len() - 1) as f64 * cfg.plant.dt;
    for (k, v) in hist.v.iter().enumerate() {
        out.push_str(&format!("{},{},{}\n", fmt17(t0 + k as f64 * cfg.plant.dt), fmt17(v.c_d), fmt17(v.c_l)));
    }
    let path = cfg.out_dir.join("spinup.csv");
    std::fs::write(&path, out).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {} ({} samples, state q={:.6} p={:.6})", path.display(), hist.v.len(), hist.state.q, hist.state.p);
    Ok(())
}

fn cmd_gen_data(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let mut dc = cfg.data.clone();
    dc.master_seed = cfg.seed;
    let ds = generate_dataset::<f64>(&dc)?;
    let dir = cfg.dataset_dir();
    write_dataset(&ds, &dir)?;
    println!("wrote {} trajectories of {} steps to {}", ds.len(), ds.meta.n_step, dir.display());
    Ok(())
}

fn cmd_train_fml(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let dir = cfg.dataset_dir();
    require(&dir, "dataset directory")?;
    let ds = read_dataset::<f64>(&dir)?;
    let mut tc = cfg.fml.train.clone();
    tc.seed = cfg.seed;
    log::info!("training widths {:?}", flowmap_widths(cfg.fml.n_m, &cfg.fml.hidden));
    let (model, report) = train_flowmap(&ds, cfg.fml.n_m, &cfg.fml.hidden, &tc)?;
    let path = cfg.model_path();
    save_model(&model, &path)?;
    let mut curve = String::from("update,loss\n");
    for (u, l) in &report.loss_curve {
        curve.push_str(&format!("{u},{}\n", fmt17(*l)));
    }
    let curve_path = cfg.out_dir.join("fml_loss.csv");
    std::fs::write(&curve_path, curve).with_context(|| format!("writing {}", curve_path.display()))?;
    let last = report.loss_curve.last().map(|x| x.1).unwrap_or(f64::NAN);
    println!("wrote {} after {} updates (final loss {last:.3e})", path.display(), report.updates);
    Ok(())
}

fn cmd_validate(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let path = cfg.model_path();
    require(&path, "model file")?;
    let model = load_model::<f64>(&path)?;
    let v = &cfg.validate;
    let mut out = String::from("regime,trajectories,steps,rmse_cd,rmse_cl,std_cd,std_cl,nrmse_cd,nrmse_cl\n");
    println!("{:>10}  {:>10}  {:>10}", "regime", "nRMSE c_d", "nRMSE c_l");
    for &r in &v.regimes {
        let trajs = held_out_trajectories::<f64>(r, v.trajectories, model.n_memory(), v.steps, cfg.plant.dt, cfg.plant.t_spin, v.seed)?;
        let e = open_loop_error(&model, &trajs, v.steps)?;
        println!("{:>10.2}  {:>10.4}  {:>10.4}", r, e.nrmse_cd(), e.nrmse_cl());
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            fmt17(r),
            e.trajectories,
            e.steps,
            fmt17(e.rmse_cd),
            fmt17(e.rmse_cl),
            fmt17(e.std_cd),
            fmt17(e.std_cl),
            fmt17(e.nrmse_cd()),
            fmt17(e.nrmse_cl())
        ));
    }
    let p = cfg.out_dir.join("open_loop.csv");
    std::fs::write(&p, out).with_context(|| format!("writing {}", p.display()))?;
    Ok(())
}

fn cmd_train_ppo(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let path = cfg.model_path();
    require(&path, "model file")?;
    let model = load_model::<f64>(&path)?;
    let plants = cfg
        .rl
        .pool_regimes
        .iter()
        .map(|&r| make_plant(r))
        .collect::<fmlctl::Result<Vec<_>>>()?;
    let pool = SpinupPool::from_plants(&plants, &cfg.rl.pool_t_spins, cfg.plant.h0, cfg.plant.dt)?;
    let mut rc = cfg.rl.ppo.clone();
    rc.seed = cfg.seed;
    let (policy, report) = ppo_train(&model, &pool, &rc)?;
    let out = cfg.policy_path();
    save_policy(&policy, &out)?;
    report.write_csv(&cfg.out_dir.join("ppo_log.csv"))?;
    if let (Some(first), Some(last)) = (report.iterations.first(), report.iterations.last()) {
        println!(
            "wrote {} ({} samples; mean return {:.4} -> {:.4})",
            out.display(),
            report.samples,
            first.mean_return,
            last.mean_return
        );
    }
    Ok(())
}

fn cmd_run_control(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let controller = match cfg.control.controller {
        ControllerKind::None => Controller::None,
        ControllerKind::Drl => {
            let p = cfg.policy_path();
            require(&p, "policy file")?;
            Controller::Drl {
                policy: load_policy(&p)?,
                alpha: cfg.rl.ppo.alpha,
                stochastic: cfg.control.stochastic,
                seed: cfg.seed,
            }
        }
        ControllerKind::Mpc => {
            let p = cfg.model_path();
            require(&p, "model file")?;
            Controller::Mpc { model: load_model(&p)?, config: cfg.mpc.clone() }
        }
        ControllerKind::OracleMpc => Controller::OracleMpc { config: cfg.mpc.clone() },
    };
    let log = run_closed_loop(&plant(cfg)?, &controller, &cfg.closed_loop(), cfg.seed)?;
    let dir = cfg.out_dir.join("runs");
    let stem = format!("{}_r{}_s{}", controller.tag(), cfg.plant.regime, cfg.seed);
    log.write(&dir, &stem)?;
    let cd = log.mean_after(&log.cd_win, cfg.control.t_settle)?;
    println!("wrote {}/{stem}.csv (mean windowed c_d after t={}: {cd:.5})", dir.display(), cfg.control.t_settle);
    Ok(())
}

fn cmd_report(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let logs = read_logs(&cfg.out_dir.join("runs"))?;
    let rows = build_report(&logs, cfg.control.t_settle)?;
    let path = cfg.out_dir.join("report.csv");
    write_report_csv(&rows, &path)?;
    print!("{}", format_table(&rows));
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let Some(e) = err.chain().find_map(|c| c.downcast_ref::<fmlctl::Error>()) else {
        return 1;
    };
    match e.category() {
        "config" => 3,
        "shape" => 4,
        "format" => 5,
        "numerics" => 6,
        "input" => 7,
        "io" => 8,
        "contract" => 9,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = settings(&cli).and_then(|cfg| match cli.command {
        Command::Spinup => cmd_spinup(&cfg),
        Command::GenData => cmd_gen_data(&cfg),
        Command::TrainFml => cmd_train_fml(&cfg),
        Command::ValidateOpenLoop => cmd_validate(&cfg),
        Command::TrainPpo => cmd_train_ppo(&cfg),
        Command::RunControl => cmd_run_control(&cfg),
        Command::Report => cmd_report(&cfg),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e
                .chain()
                .find_map(|c| c.downcast_ref::<fmlctl::Error>())
                .map_or("error", fmlctl::Error::category);
            eprintln!("fmlctl: {category} error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
