use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::error;
use momaplan::collision::fit_spheres;
use momaplan::geometry::Mesh;
use momaplan::kinematics::write_robot_description;
use momaplan::pipeline::{
    load_task_spec, prepare_task, read_dataset, run_batch, stats_from_dir, write_stats_csv, write_stats_json,
    BatchOptions, DatasetWriter, ExportFormat, Outcome, PipelineError, TaskSpec, STATS_CSV_FILE,
};
use momaplan::planner::TraceRow;

const EXIT_USAGE: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "momaplan", version, about = "Whole-body mobile manipulation trajectory generation")]
struct Cli {
    /// Task spec (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for batch generation.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Overrides the spec's generation seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, or output file for dump commands.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Jsonl)]
    format: Format,
    /// Debug logging and per-problem optimizer traces.
    #[arg(long, global = true)]
    debug_trace: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Jsonl,
    Binary,
}

impl From<Format> for ExportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Jsonl => ExportFormat::Jsonl,
            Format::Binary => ExportFormat::Binary,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Dump the AKR of one grasp.
    Assemble {
        #[arg(long, default_value_t = 0)]
        grasp: usize,
    },
    /// Fit collision spheres to an OBJ mesh and dump them.
    Spheres {
        mesh: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        pitch: f64,
        #[arg(long, default_value_t = 0.95)]
        downscale: f64,
    },
    /// Plan a single problem of the spec.
    Plan {
        #[arg(long, default_value_t = 0)]
        grasp: usize,
        #[arg(long, default_value_t = 0)]
        start: usize,
        #[arg(long, default_value_t = 0)]
        goal: usize,
    },
    /// Re-check an exported dataset against the spec.
    Validate { input: PathBuf },
    /// Run the full batch.
    Batch,
    /// Aggregate the outputs of a finished batch directory.
    Stats { dir: PathBuf },
}

enum Failure {
    Usage(String),
    Infeasible(String),
    Io(String),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        if e.is_io() {
            Failure::Io(e.to_string())
        } else {
            Failure::Usage(e.to_string())
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn spec(cli: &Cli) -> Result<TaskSpec, Failure> {
    let path = cli.config.as_ref().ok_or_else(|| Failure::Usage("--config is required".into()))?;
    let mut spec = load_task_spec(path)?;
    if let Some(s) = cli.seed {
        spec.generation.seed = s;
    }
    Ok(spec)
}

fn out_dir(cli: &Cli) -> Result<&Path, Failure> {
    cli.out.as_deref().ok_or_else(|| Failure::Usage("--out is required".into()))
}

/// Writes to `--out` when given, stdout otherwise.
fn emit(cli: &Cli, text: &str) -> Result<(), Failure> {
    match &cli.out {
        Some(p) => fs::write(p, text).map_err(|e| io_failure(p, e)),
        None => {
            let mut o = std::io::stdout().lock();
            o.write_all(text.as_bytes()).and_then(|_| o.write_all(b"\n")).map_err(|e| io_failure(Path::new("stdout"), e))
        }
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Assemble { grasp } => {
            let prepared = prepare_task(&spec(cli)?)?;
            let akr = prepared.akrs.get(*grasp).ok_or_else(|| Failure::Usage(format!("grasp {grasp} out of range")))?;
            let dump = serde_json::json!({
                "joint_names": akr.tree.joint_names(),
                "layout": akr.layout,
                "tcp_link": akr.tcp_link,
                "grasp_link": akr.grasp_link,
                "object_anchor_link": akr.object_anchor_link,
                "collision_pairs": akr.collision_pairs,
                "description": write_robot_description(&akr.tree, "akr"),
            });
            emit(cli, &serde_json::to_string_pretty(&dump).expect("dump serializes"))
        }
        Command::Spheres { mesh, pitch, downscale } => {
            let m = Mesh::load_obj(mesh).map_err(|e| Failure::Io(format!("{}: {e}", mesh.display())))?;
            let s = fit_spheres(&m, *pitch, *downscale).map_err(|e| Failure::Usage(e.to_string()))?;
            emit(cli, &serde_json::to_string_pretty(&s).expect("spheres serialize"))
        }
        Command::Plan { grasp, start, goal } => {
            let spec = spec(cli)?;
            let out = out_dir(cli)?;
            let prepared = prepare_task(&spec)?;
            if *grasp >= prepared.akrs.len() || *goal >= spec.goals.len() {
                return Err(Failure::Usage("grasp or goal index out of range".into()));
            }
            let starts = prepared.start_representatives(*grasp)?;
            if *start >= starts.len() {
                return Err(Failure::Infeasible(format!("grasp {grasp} has {} start representatives", starts.len())));
            }
            let mut all = vec![Vec::new(); prepared.akrs.len()];
            all[*grasp] = starts;
            let problem = prepared
                .problems(&all)
                .into_iter()
                .find(|p| p.start_index == *start && p.goal == spec.goals[*goal])
                .expect("problem exists");
            fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
            let solved = prepared.solve(&problem);
            if cli.debug_trace {
                let path = out.join("trace.csv");
                let f = fs::File::create(&path).map_err(|e| io_failure(&path, e))?;
                TraceRow::write_csv(&solved.trace, f).map_err(|e| io_failure(&path, e))?;
            }
            match solved.outcome {
                Outcome::Valid(r) => {
                    let mut w = DatasetWriter::create(out, cli.format.into())?;
                    w.write(&r)?;
                    let path = w.finish()?;
                    println!("valid trajectory written to {}", path.display());
                    Ok(())
                }
                Outcome::Failed(f) => Err(Failure::Infeasible(format!("{}: {}", f.reason.as_str(), f.detail))),
            }
        }
        Command::Validate { input } => {
            let prepared = prepare_task(&spec(cli)?)?;
            let records = read_dataset(input)?;
            let bad = prepared.revalidate(&records)?;
            println!("{} records, {} discrepancies", records.len(), bad.len());
            if bad.is_empty() {
                Ok(())
            } else {
                Err(Failure::Infeasible(format!("records failing revalidation: {bad:?}")))
            }
        }
        Command::Batch => {
            let spec = spec(cli)?;
            let options = BatchOptions {
                workers: cli.workers,
                out_dir: out_dir(cli)?.to_path_buf(),
                format: cli.format.into(),
                debug_trace: cli.debug_trace,
            };
            let stats = run_batch(&spec, &options)?;
            write_stats_json(&stats, std::io::stdout().lock()).map_err(|e| io_failure(Path::new("stdout"), e))?;
            if stats.attempted > 0 && stats.valid == 0 {
                return Err(Failure::Infeasible("no problem produced a valid trajectory".into()));
            }
            Ok(())
        }
        Command::Stats { dir } => {
            let (stats, records) = stats_from_dir(dir)?;
            let path = cli.out.clone().unwrap_or_else(|| dir.join(STATS_CSV_FILE));
            let f = fs::File::create(&path).map_err(|e| io_failure(&path, e))?;
            write_stats_csv(&stats, &records, f)?;
            write_stats_json(&stats, std::io::stdout().lock()).map_err(|e| io_failure(Path::new("stdout"), e))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.debug_trace { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            error!("{m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Infeasible(m)) => {
            error!("{m}");
            ExitCode::from(EXIT_INFEASIBLE)
        }
        Err(Failure::Io(m)) => {
            error!("{m}");
            ExitCode::from(EXIT_IO)
        }
    }
}
