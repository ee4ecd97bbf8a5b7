mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use relburgers::fv::{cell_velocities, front_location, fv_run, write_snapshots_csv};
use relburgers::network::save_model;
use relburgers::parallel::Parallelism;
use relburgers::trainer::{train, ScenarioKind, TrainReport};
use relburgers::{Error, Result};
use serde::Serialize;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "relburgers", about = "Relativistic Burgers solvers on a Schwarzschild exterior")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate a closed-form solution.
    Analytic(Common),
    /// Run the finite-volume reference solver.
    Fv(Common),
    /// Train the shock-aware network with the staged schedule.
    Train(Common),
}

#[derive(Args)]
struct Common {
    /// steady_state, steady_shock, moving_shock or riemann
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// TOML file of flat key = value settings
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set fv_cells=4000`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Comma-separated output times
    #[arg(long)]
    times: Option<String>,
    /// Finite-volume cells
    #[arg(long)]
    cells: Option<usize>,
    /// Interior collocation points
    #[arg(long)]
    n_eqn: Option<usize>,
    /// Iteration cap applied to every training phase
    #[arg(long)]
    maxiter: Option<usize>,
    /// Run without the thread pool
    #[arg(long)]
    sequential: bool,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = config::load(self.config.as_deref(), &self.sets)?;
        if let Some(s) = &self.scenario {
            cfg.scenario = ScenarioKind::parse(s)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = out.to_string_lossy().into_owned();
        }
        if let Some(t) = &self.times {
            let times = t
                .split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|e| Error::Parse(format!("time '{x}': {e}"))))
                .collect::<Result<Vec<_>>>()?;
            cfg.times = Some(times);
        }
        if let Some(n) = self.cells {
            cfg.fv_cells = n;
        }
        if let Some(n) = self.n_eqn {
            cfg.n_eqn = n;
        }
        if let Some(m) = self.maxiter {
            cfg.phase_maxiter.iter_mut().for_each(|x| *x = m);
        }
        if self.sequential {
            cfg.parallelism = Parallelism::Sequential;
        }
        Ok(cfg)
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(dir.join(name), text + "\n")?;
    Ok(())
}

fn prepare(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(&cfg.out);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.toml"), config::to_toml(cfg)?)?;
    Ok(dir)
}

fn cmd_analytic(cfg: &RunConfig) -> Result<()> {
    let sc = cfg.scenario()?;
    if !sc.has_closed_form() {
        return Err(Error::Parameter(format!("scenario {} has no closed-form solution", sc.kind.name())));
    }
    let times = cfg.output_times(sc.t_final)?;
    if cfg.n_r < 2 {
        return Err(Error::Parameter("n_r must be at least 2".into()));
    }
    let dir = prepare(cfg)?;
    let mut w = create(&dir, "analytic.csv")?;
    writeln!(w, "t,r,v")?;
    let d = sc.domain;
    for &t in &times {
        for i in 0..cfg.n_r {
            let r = if i + 1 == cfg.n_r { d.r_max } else { d.r_min + d.length() * i as f64 / (cfg.n_r - 1) as f64 };
            writeln!(w, "{t:.16e},{r:.16e},{:.16e}", sc.exact(t, r)?)?;
        }
    }
    w.flush()?;
    eprintln!("wrote {} rows to {}", times.len() * cfg.n_r, dir.join("analytic.csv").display());
    Ok(())
}

#[derive(Serialize)]
struct FvManifest<'a> {
    config: &'a RunConfig,
    n_cells: usize,
    dr: f64,
    steps: usize,
    /// `(t, r)` of the largest cell-to-cell jump per snapshot.
    fronts: Vec<(f64, f64)>,
}

fn cmd_fv(cfg: &RunConfig) -> Result<()> {
    let sc = cfg.scenario()?;
    let fv_cfg = cfg.fv_config()?;
    let times = cfg.output_times(sc.t_final)?;
    let dir = prepare(cfg)?;
    let start = Instant::now();
    let run = fv_run(&sc, &fv_cfg, &times)?;
    let mut w = create(&dir, "snapshots.csv")?;
    write_snapshots_csv(&mut w, &run.grid, sc.bh, &run.snapshots)?;
    w.flush()?;
    let fronts = run
        .snapshots
        .iter()
        .map(|s| Ok((s.time, front_location(&run.grid, &cell_velocities(&run.grid, sc.bh, s)?))))
        .collect::<Result<Vec<_>>>()?;
    let manifest = FvManifest { config: cfg, n_cells: run.grid.n_cells, dr: run.grid.dr(), steps: run.steps, fronts };
    write_json(&dir, "manifest.json", &manifest)?;
    eprintln!("{} steps on {} cells in {:.2?}", run.steps, run.grid.n_cells, start.elapsed());
    Ok(())
}

#[derive(Serialize)]
struct ReportFile<'a> {
    model_file: &'a str,
    #[serde(flatten)]
    report: &'a TrainReport,
}

fn cmd_train(cfg: &RunConfig) -> Result<bool> {
    let sc = cfg.scenario()?;
    let spec = cfg.model_spec(&sc);
    let train_cfg = cfg.train_config()?;
    let dir = prepare(cfg)?;
    let start = Instant::now();
    let out = train(&sc, &spec, &train_cfg, cfg.seed)?;
    let report = &out.report;

    save_model(&dir.join("model.txt"), &out.model)?;
    write_json(&dir, "report.json", &ReportFile { model_file: "model.txt", report })?;
    for (i, p) in report.phases.iter().enumerate() {
        let mut w = create(&dir, &format!("trace_phase{}.csv", i + 1))?;
        p.trace.write_csv(&mut w)?;
        w.flush()?;
    }
    let table = &out.table;
    let mut pred = create(&dir, "prediction.csv")?;
    let mut err = create(&dir, "error.csv")?;
    writeln!(pred, "t,r,v")?;
    writeln!(err, "t,r,v,v_ref,err")?;
    for (j, t) in table.t.iter().enumerate() {
        for (i, r) in table.r.iter().enumerate() {
            let k = j * table.r.len() + i;
            let (v, v_ref) = (table.pred[k], table.reference[k]);
            writeln!(pred, "{t:.16e},{r:.16e},{v:.16e}")?;
            writeln!(err, "{t:.16e},{r:.16e},{v:.16e},{v_ref:.16e},{:.16e}", v - v_ref)?;
        }
    }
    pred.flush()?;
    err.flush()?;
    if !report.metrics.shock_path.is_empty() {
        let mut w = create(&dir, "shock.csv")?;
        writeln!(w, "t,r_s,r_ref")?;
        for s in &report.metrics.shock_path {
            writeln!(w, "{:.16e},{:.16e},{:.16e}", s.t, s.r_s, s.reference)?;
        }
        w.flush()?;
    }

    for (i, p) in report.phases.iter().enumerate() {
        eprintln!(
            "phase {}: loss {:.3e} -> {:.3e} in {} iterations ({})",
            i + 1,
            p.start.total,
            p.end.total,
            p.trace.iterations(),
            p.trace.reason
        );
    }
    let m = &report.metrics;
    eprintln!("relative L2 error: {:.4e}", m.rel_l2);
    if let Some(e) = m.shock_location_max_error {
        eprintln!("max shock location error: {e:.4e}");
    }
    if let Some(e) = m.rel_l2_away {
        eprintln!("relative L2 error away from the shock: {e:.4e}");
    }
    if let Some(e) = m.l1_away_max {
        eprintln!("max L1 error away from the shock: {e:.4e}");
    }
    eprintln!("trained in {:.1?}; outputs in {}", start.elapsed(), dir.display());
    if let Some(msg) = &report.aborted {
        eprintln!("training aborted: {msg}");
        return Ok(false);
    }
    Ok(true)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric(_) => 3,
        Error::Domain(_) | Error::Parameter(_) | Error::Parse(_) => 2,
        Error::Io(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Analytic(c) => c.resolve().and_then(|cfg| cmd_analytic(&cfg)).map(|_| true),
        Command::Fv(c) => c.resolve().and_then(|cfg| cmd_fv(&cfg)).map(|_| true),
        Command::Train(c) => c.resolve().and_then(|cfg| cmd_train(&cfg)),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
