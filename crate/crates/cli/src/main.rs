use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;

use podvar::assimilate::SolverKind;
use podvar::config::RunConfig;
use podvar::exec::{with_workers, Execution};
use podvar::experiments::{
    run_assimilation, run_bootstrap, run_covariance_grid, run_measurement, run_twin, ExperimentReport,
};
use podvar::io::{self, Provenance};
use podvar::pce::InputTransform;
use podvar::pod::{fit_pod, SnapshotMatrix};
use podvar::surrogate::{build_poden, build_podpce};
use podvar::toymodel::{sample_parameters, ToyModel};
use podvar::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "podvar", version, about = "POD/PCE surrogate 3DVAR calibration of a toy tidal model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON run configuration; defaults apply to absent keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for parallel sections.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct EnsembleInput {
    /// Parameter CSV written by `sample`; drawn from the config when absent.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Snapshot CSV written by `simulate`; simulated when absent.
    #[arg(long)]
    snapshots: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw parameter sets uniformly in the calibration box.
    Sample(Common),
    /// Run the toy model on a parameter CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// POD of a snapshot ensemble.
    FitPod {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: EnsembleInput,
    },
    /// Per-mode polynomial chaos expansions of the POD coefficients.
    FitPce {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: EnsembleInput,
    },
    /// POD-PCE or joint-POD surrogate, as set in `surrogate.kind`.
    BuildSurrogate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: EnsembleInput,
    },
    /// One twin assimilation with the `assimilate` settings.
    Assimilate(Common),
    /// Noise, training-size and truncation sweep.
    Twin(Common),
    /// Covariance-scaling grid.
    Covgrid(Common),
    /// Surrogate refits on random member subsets.
    Bootstrap(Common),
    /// Surrogate solvers against classical 3DVAR on one observation.
    Measure {
        #[command(flatten)]
        common: Common,
        /// Observation CSV (one value column in model layout).
        #[arg(long)]
        observation: Option<PathBuf>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Sample(c)
            | Command::Assimilate(c)
            | Command::Twin(c)
            | Command::Covgrid(c)
            | Command::Bootstrap(c) => c,
            Command::Simulate { common, .. }
            | Command::FitPod { common, .. }
            | Command::FitPce { common, .. }
            | Command::BuildSurrogate { common, .. }
            | Command::Measure { common, .. } => common,
        }
    }
}

struct Run {
    cfg: RunConfig,
    base: Option<PathBuf>,
    out: PathBuf,
    model: ToyModel,
    provenance: Provenance,
    exec: Execution,
}

impl Run {
    fn new(common: &Common) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = common.seed {
            cfg.seed = s;
        }
        if let Some(o) = &common.out {
            cfg.out = Some(o.clone());
        }
        if let Some(w) = common.workers {
            cfg.workers = Some(w);
        }
        cfg.validate()?;
        let base = common.config.as_ref().and_then(|p| p.parent().map(Path::to_path_buf));
        let model = cfg.model(base.as_deref())?;
        let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("results"));
        std::fs::create_dir_all(&out)?;
        std::fs::write(out.join("config.json"), cfg.to_json()?)?;
        let provenance = Provenance::new(cfg.hash()?, cfg.seed);
        Ok(Run {
            cfg,
            base,
            out,
            model,
            provenance,
            exec: Execution::Parallel,
        })
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        match &self.base {
            Some(b) if p.is_relative() && !p.exists() => b.join(p),
            _ => p.to_path_buf(),
        }
    }

    fn create(&self, name: &str) -> Result<(PathBuf, std::io::BufWriter<std::fs::File>)> {
        let path = self.out.join(name);
        let f = std::fs::File::create(&path)?;
        Ok((path, std::io::BufWriter::new(f)))
    }

    fn parameters(&self, path: Option<&Path>) -> Result<DMatrix<f64>> {
        match path {
            Some(p) => {
                let (names, x) = io::read_parameters(std::fs::File::open(self.resolve(p))?)?;
                let expected: Vec<&str> = self.model.parameters.iter().map(|p| p.name.as_str()).collect();
                if names.iter().map(String::as_str).ne(expected.iter().copied()) {
                    return Err(Error::Parse(format!(
                        "parameter columns {names:?} do not match {expected:?}"
                    )));
                }
                Ok(x)
            }
            None => sample_parameters(&self.model.bounds(), self.cfg.sampling.members, self.cfg.seed),
        }
    }

    /// Parameters (`m × n`) and snapshots of the training ensemble.
    fn ensemble(&self, input: &EnsembleInput) -> Result<(DMatrix<f64>, SnapshotMatrix)> {
        let x = self.parameters(input.params.as_deref())?;
        let snaps = match &input.snapshots {
            Some(p) => io::read_snapshots(std::fs::File::open(self.resolve(p))?)?,
            None => self.simulate(&x)?,
        };
        if snaps.ncols() != x.nrows() {
            return Err(Error::Dimension(format!(
                "{} parameter sets for {} snapshots",
                x.nrows(),
                snaps.ncols()
            )));
        }
        Ok((x.transpose(), snaps))
    }

    fn simulate(&self, x: &DMatrix<f64>) -> Result<SnapshotMatrix> {
        let y = self.model.simulate_ensemble(x, self.exec)?;
        SnapshotMatrix::with_labels(y, self.model.row_labels(), io::member_ids(x.nrows()))
    }

    fn transforms(&self) -> Result<Vec<InputTransform>> {
        self.model
            .bounds()
            .into_iter()
            .map(|(lo, hi)| InputTransform::uniform(lo, hi))
            .collect()
    }

    fn report(&self, mut report: ExperimentReport) -> Result<String> {
        report.config_hash = self.provenance.config_hash.clone();
        let written = report.write_all(&self.out)?;
        Ok(format!(
            "{}: {} cells ({} failed) -> {}",
            report.experiment,
            report.rows.len(),
            report.failed(),
            written[0].display()
        ))
    }
}

fn execute(command: &Command) -> Result<String> {
    let run = Run::new(command.common())?;
    with_workers(run.cfg.workers, || dispatch(&run, command))
}

fn dispatch(run: &Run, command: &Command) -> Result<String> {
    let exp = run.cfg.experiment();
    match command {
        Command::Sample(_) => {
            let x = run.parameters(None)?;
            let (path, f) = run.create("parameters.csv")?;
            let names: Vec<String> = run.model.parameters.iter().map(|p| p.name.clone()).collect();
            io::write_parameters(f, &names, &x, &run.provenance)?;
            Ok(format!("sample: {} members -> {}", x.nrows(), path.display()))
        }
        Command::Simulate { params, .. } => {
            let x = run.parameters(params.as_deref())?;
            let snaps = run.simulate(&x)?;
            let (path, f) = run.create("snapshots.csv")?;
            io::write_snapshots(f, &snaps, &run.provenance)?;
            Ok(format!(
                "simulate: {} members × {} outputs -> {}",
                snaps.ncols(),
                snaps.nrows(),
                path.display()
            ))
        }
        Command::FitPod { input, .. } => {
            let (_, snaps) = run.ensemble(input)?;
            let basis = fit_pod(&snaps)?.truncate(run.cfg.surrogate.truncation)?;
            let path = run.out.join("pod_basis.json");
            io::save_json(&path, &basis, &run.provenance)?;
            Ok(format!(
                "fit-pod: {} of {} modes retained (EVR {:.4}) -> {}",
                basis.retained(),
                basis.full_rank(),
                basis.evr(basis.retained())?,
                path.display()
            ))
        }
        Command::FitPce { input, .. } | Command::BuildSurrogate { input, .. } => {
            let (x, snaps) = run.ensemble(input)?;
            let fit_pce = matches!(command, Command::FitPce { .. });
            if !fit_pce && run.cfg.surrogate.kind == SolverKind::PodEn {
                let s = build_poden(&x, snaps.data(), run.cfg.surrogate.truncation)?;
                let path = run.out.join("poden_surrogate.json");
                io::save_json(&path, &s, &run.provenance)?;
                return Ok(format!("build-surrogate: poden rank {} -> {}", s.rank(), path.display()));
            }
            if run.cfg.surrogate.kind == SolverKind::Classical {
                return Err(Error::InvalidInput("surrogate.kind must be podpce or poden".into()));
            }
            let s = build_podpce(
                &x,
                snaps.data(),
                run.cfg.surrogate.truncation,
                &run.transforms()?,
                &run.cfg.pce,
                run.cfg.seed,
                run.exec,
            )?;
            let degrees = s.pce().degrees().to_vec();
            let (name, path) = if fit_pce {
                let path = run.out.join("pce_model.json");
                io::save_json(&path, s.pce(), &run.provenance)?;
                ("fit-pce", path)
            } else {
                let path = run.out.join("podpce_surrogate.json");
                io::save_json(&path, &s, &run.provenance)?;
                ("build-surrogate", path)
            };
            Ok(format!("{name}: podpce rank {} degrees {degrees:?} -> {}", s.rank(), path.display()))
        }
        Command::Assimilate(_) => {
            let (report, analysis) = run_assimilation(&exp, &run.model, run.exec)?;
            let path = run.out.join("analysis.json");
            io::save_json(&path, &analysis, &run.provenance)?;
            let row = &report.rows[0];
            let line = format!(
                "assimilate: {} x_a={:?} rmse_truth={:.4e} cost={:.4e} iterations={} ({})",
                row.surrogate.name(),
                row.x_a,
                row.rmse_truth,
                row.cost,
                row.iterations,
                row.reason
            );
            run.report(report)?;
            Ok(line)
        }
        Command::Twin(_) => run.report(run_twin(&exp, &run.model, run.exec)?),
        Command::Covgrid(_) => run.report(run_covariance_grid(&exp, &run.model, run.exec)?),
        Command::Bootstrap(_) => run.report(run_bootstrap(&exp, &run.model, run.exec)?),
        Command::Measure { observation, .. } => {
            let file = observation.clone().or_else(|| run.cfg.measure.observation_file.clone());
            let y = match file {
                Some(p) => {
                    let (labels, y) = io::read_state(std::fs::File::open(run.resolve(&p))?)?;
                    if labels.len() == run.model.state_dim() && labels != run.model.row_labels() {
                        return Err(Error::Parse("observation row labels do not match the model layout".into()));
                    }
                    Some(y)
                }
                None => None,
            };
            run.report(run_measurement(&exp, &run.model, y.as_ref(), run.exec)?)
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
    match execute(&cli.command) {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
