use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use her_core::checkpoint::Checkpoint;
use her_core::cortex::CortexConfig;
use her_core::experiment::{stored_spec, stored_summary, trace_lines, Experiment, ExperimentSpec, InputSpec};
use her_core::periphery::{write_stream, StreamSpec, SyntheticStream};
use her_core::HerError;

#[derive(Parser)]
#[command(name = "her", version, about = "Run and inspect hierarchical sequence-learning cortex simulations")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build a cortex (or load one) and stream input through it.
    Run(RunArgs),
    /// Continue a checkpointed run.
    Resume(RunArgs),
    /// Print statistics about a checkpoint.
    Inspect {
        checkpoint: PathBuf,
    },
    /// Write a synthetic stream spec out as a stream file.
    GenStream {
        /// Stream spec (TOML).
        #[arg(long)]
        spec: PathBuf,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Cortex configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Experiment spec (TOML); flags override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Master seed of the cortex.
    #[arg(long)]
    seed: Option<u64>,
    /// Stream file, feature file, or synthetic stream spec (TOML).
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    checkpoint_in: Option<PathBuf>,
    #[arg(long)]
    checkpoint_out: Option<PathBuf>,
    /// Directory for traces, metrics and the run manifest.
    #[arg(long)]
    trace_dir: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    threads: Option<usize>,
    /// Stop clauses, e.g. `perfect_eos=0.95,cycles=50000` or `stable=2000`.
    #[arg(long)]
    stop: Option<String>,
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(h) = cause.downcast_ref::<HerError>() {
            return match h {
                HerError::Config(_) | HerError::Parse(_) | HerError::InvalidParameter(_) | HerError::UnknownSymbol(_) => 2,
                HerError::Checkpoint(_) | HerError::VersionMismatch { .. } => 4,
                HerError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 3,
                _ => 1,
            };
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            if io.kind() == std::io::ErrorKind::NotFound {
                return 3;
            }
        }
    }
    1
}

fn main() -> ExitCode {
    let level = std::env::var("HER_TRACE_LEVEL").unwrap_or_else(|_| "warn".into());
    env_logger::Builder::new().parse_filters(&level).format_timestamp(None).init();
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run(a) => run(a, false),
        Cmd::Resume(a) => run(a, true),
        Cmd::Inspect { checkpoint } => inspect(&checkpoint),
        Cmd::GenStream { spec, out, seed } => gen_stream(&spec, out.as_deref(), seed),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn require(path: &Path) -> anyhow::Result<()> {
    if !path.exists() {
        return Err(HerError::Io(std::io::Error::new(std::io::ErrorKind::NotFound, format!("{} not found", path.display()))).into());
    }
    Ok(())
}

/// Picks the input kind from the first line of the file.
fn input_from_file(path: &Path) -> anyhow::Result<InputSpec> {
    require(path)?;
    let mut first = String::new();
    BufReader::new(File::open(path)?).read_line(&mut first)?;
    let mut inp = InputSpec::default();
    if first.starts_with("her-stream") {
        inp.stream_file = Some(path.to_path_buf());
    } else if first.starts_with("bands=") {
        inp.feature_file = Some(path.to_path_buf());
    } else {
        inp.synthetic = Some(StreamSpec::from_toml(&fs::read_to_string(path)?).with_context(|| format!("reading {}", path.display()))?);
    }
    Ok(inp)
}

fn run(a: RunArgs, resume: bool) -> anyhow::Result<()> {
    // Everything is validated before anything is written.
    let mut spec = match &a.spec {
        Some(p) => {
            require(p)?;
            ExperimentSpec::load(p).with_context(|| format!("reading {}", p.display()))?
        }
        None => ExperimentSpec::default(),
    };
    if a.config.is_some() {
        spec.config = a.config.clone();
    }
    if a.checkpoint_in.is_some() {
        spec.checkpoint_in = a.checkpoint_in.clone();
    }
    if a.checkpoint_out.is_some() {
        spec.checkpoint_out = a.checkpoint_out.clone();
    }
    let ck = match &spec.checkpoint_in {
        Some(p) => {
            require(p)?;
            Some(Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?)
        }
        None if resume => return Err(HerError::Config("resume needs --checkpoint-in".into()).into()),
        None => None,
    };
    if resume && a.spec.is_none() {
        if let Some(stored) = ck.as_ref().map(stored_spec).transpose()?.flatten() {
            spec.input = stored.input;
            spec.sample_every = stored.sample_every;
            spec.stop = stored.stop;
        }
    }
    if let Some(p) = &a.input {
        spec.input = input_from_file(p)?;
    }
    spec.input.validate()?;
    if let Some(s) = &a.stop {
        spec.stop.apply(s)?;
    }
    let mut cfg = match &spec.config {
        Some(p) => {
            require(p)?;
            CortexConfig::from_toml(&fs::read_to_string(p)?).with_context(|| format!("reading {}", p.display()))?
        }
        None => ck.as_ref().map(|c| c.cortex.config().clone()).unwrap_or_default(),
    };
    if let Some(s) = a.seed {
        cfg.master_seed = s;
    }
    let mut exp = match ck {
        Some(ck) => {
            if spec.config.is_some() || a.seed.is_some() {
                ck.check_config(&cfg)?;
            }
            if resume {
                Experiment::from_checkpoint(spec.clone(), ck)?
            } else {
                let mut e = Experiment::from_checkpoint(spec.clone(), Checkpoint::new(ck.cortex))?;
                e.restart_input(spec.clone())?;
                e
            }
        }
        None => Experiment::new(spec.clone(), cfg)?,
    };
    exp.set_stop(spec.stop.clone());

    let threads = a.threads.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build()?;
    log::info!("running on {threads} threads from cycle {}", exp.cortex().cycle());

    let mut trace = match &a.trace_dir {
        Some(d) => {
            fs::create_dir_all(d)?;
            Some(BufWriter::new(File::create(d.join("trace.txt"))?))
        }
        None => None,
    };
    let summary = pool.install(|| {
        exp.run_with(|report, _| {
            for e in &report.events {
                log::debug!("cycle {}: {e:?}", report.cycle);
            }
            if let Some(t) = trace.as_mut() {
                for l in trace_lines(report) {
                    writeln!(t, "{l}")?;
                }
            }
            Ok(())
        })
    })?;
    if let Some(mut t) = trace.take() {
        t.flush()?;
    }
    if let Some(d) = &a.trace_dir {
        exp.write_outputs(d)?;
        write_manifest(d, &a, &exp)?;
    }
    if let Some(p) = &spec.checkpoint_out {
        exp.checkpoint()?.save(p).with_context(|| format!("writing {}", p.display()))?;
    }
    print_out(&summary.to_json())
}

/// Stdout closed early (e.g. piped into `head`) is not an error.
fn print_out(text: &str) -> anyhow::Result<()> {
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn write_manifest(dir: &Path, a: &RunArgs, exp: &Experiment) -> anyhow::Result<()> {
    let mut f = BufWriter::new(File::create(dir.join("manifest.txt"))?);
    writeln!(f, "her-run 1")?;
    writeln!(f, "version {}", env!("CARGO_PKG_VERSION"))?;
    writeln!(f, "master_seed {}", exp.cortex().config().master_seed)?;
    writeln!(f, "cycles {}", exp.state().consumed)?;
    if let Some(p) = &a.checkpoint_in {
        writeln!(f, "checkpoint_in {}", p.display())?;
    }
    if let Some(p) = &a.checkpoint_out {
        writeln!(f, "checkpoint_out {}", p.display())?;
    }
    for name in ["trace.txt", "eos_ledger.csv", "synaptic_load.csv", "stability.csv", "similarity.csv", "summary.json", "cortex.toml"] {
        writeln!(f, "file {name}")?;
    }
    fs::write(dir.join("cortex.toml"), exp.cortex().config().to_toml()?)?;
    f.flush()?;
    Ok(())
}

fn inspect(path: &Path) -> anyhow::Result<()> {
    require(path)?;
    let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    let cx = &ck.cortex;
    println!("format {}", her_core::checkpoint::FORMAT_VERSION);
    println!("cycle {}", cx.cycle());
    println!("master_seed {}", cx.config().master_seed);
    println!("rungs {:?}", cx.config().rung_widths);
    for (r, rung) in cx.rungs().iter().enumerate() {
        let known = rung.iter().filter(|c| c.l6a_state().is_known()).count();
        let muted = rung.iter().filter(|c| c.is_muted()).count();
        println!("rung {} load {} l6a_known {}/{} muted {}", r + 1, cx.rung_load(r), known, rung.len(), muted);
    }
    let alloc = cx.slices().iter().flatten().filter(|s| s.is_allocated()).count();
    let total = cx.slices().iter().flatten().count();
    println!("slices allocated {alloc}/{total} load {}", cx.slice_load());
    println!("total_synapses {}", cx.total_synapses());
    for (name, b) in &ck.extras {
        println!("record {name} {} bytes", b.len());
    }
    if let Some(s) = stored_summary(&ck) {
        println!("{}", s.to_json());
    }
    Ok(())
}

fn gen_stream(spec: &Path, out: Option<&Path>, seed: Option<u64>) -> anyhow::Result<()> {
    require(spec)?;
    let mut s = StreamSpec::from_toml(&fs::read_to_string(spec)?).with_context(|| format!("reading {}", spec.display()))?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    let width = s.width;
    let stream = SyntheticStream::new(s)?;
    let n = match out {
        Some(p) => {
            let mut f = BufWriter::new(File::create(p)?);
            let n = write_stream(&mut f, width, stream)?;
            f.flush()?;
            n
        }
        None => write_stream(std::io::stdout().lock(), width, stream)?,
    };
    log::info!("wrote {n} cycles");
    Ok(())
}
