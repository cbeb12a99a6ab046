//! `qfw`: run the task service or talk to one.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 server or
//! protocol error, 3 the task itself failed.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qfw_core::bench::{ghz, run_campaign, Campaign, CampaignError};
use qfw_core::qasm::parse;
use qfw_core::qpm::{Cid, TaskInfo, TaskState};
use qfw_core::qtm::SchedulerMode;
use qfw_core::service::{self, BackendSpec, Client, ClientError, ServeConfig};

const EXIT_USAGE: u8 = 1;
const EXIT_SERVER: u8 = 2;
const EXIT_TASK: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "qfw", version, about = "Quantum task service over a modeled HPC node pool")]
struct Cli {
    /// Server address for client commands [env: QFW_ADDR]
    #[arg(long, global = true)]
    addr: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the service until interrupted.
    Serve(ServeArgs),
    /// Register a QASM file and run it.
    Submit(SubmitArgs),
    /// Show a circuit's state and result.
    Status { cid: String },
    /// List registered backends.
    Backends,
    /// Show node utilization.
    Util,
    /// Run a benchmark campaign against a live server.
    Bench {
        #[command(subcommand)]
        workload: BenchWorkload,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    ManyJob,
    PerJob,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// 0 picks a free port.
    #[arg(long, default_value_t = 7450)]
    port: u16,
    #[arg(long, default_value_t = 2)]
    nodes: usize,
    #[arg(long, default_value_t = 8)]
    slots_per_node: usize,
    #[arg(long, value_enum, default_value_t = Mode::ManyJob)]
    mode: Mode,
    /// Pool fraction per session in per-job mode.
    #[arg(long, default_value_t = 0.5)]
    partition: f64,
    /// statevector, mock, mock=SECONDS or NAME:KIND; repeatable, first is
    /// the default.
    #[arg(long = "backend", value_name = "NAME")]
    backends: Vec<BackendSpec>,
    /// Seconds to wait for running tasks at shutdown.
    #[arg(long, default_value_t = 30.0)]
    grace: f64,
}

#[derive(Debug, Args)]
struct SubmitArgs {
    file: PathBuf,
    #[arg(long, default_value_t = 1024)]
    shots: u64,
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Return the circuit id without waiting.
    #[arg(long = "async")]
    no_wait: bool,
}

#[derive(Debug, Subcommand)]
enum BenchWorkload {
    /// GHZ circuits of a fixed width.
    Ghz {
        #[arg(long)]
        qubits: usize,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        concurrent: bool,
        #[arg(long, default_value_t = 1024)]
        shots: u64,
        #[arg(long)]
        backend: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Print the report as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        Failure {
            code: EXIT_SERVER,
            message: e.to_string(),
        }
    }
}

impl From<CampaignError> for Failure {
    fn from(e: CampaignError) -> Self {
        let code = match &e {
            CampaignError::Usage(_) => EXIT_USAGE,
            CampaignError::Task { .. } => EXIT_SERVER,
            CampaignError::TaskFailed { .. } => EXIT_TASK,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn connect(addr: &Option<String>) -> Result<Client, Failure> {
    let addr = addr.clone().unwrap_or_else(Client::env_addr);
    Client::connect(&addr).map_err(|e| Failure {
        code: EXIT_SERVER,
        message: format!("cannot reach {addr}: {e}"),
    })
}

fn serve(args: ServeArgs) -> Result<(), Failure> {
    let mode = match args.mode {
        Mode::ManyJob => SchedulerMode::ManyJob,
        Mode::PerJob => SchedulerMode::PerJob {
            partition: args.partition,
        },
    };
    let grace =
        Duration::try_from_secs_f64(args.grace).map_err(|_| Failure::usage("--grace must be a non-negative number"))?;
    let config = ServeConfig {
        host: args.host,
        port: args.port,
        nodes: args.nodes,
        slots_per_node: args.slots_per_node,
        mode,
        backends: args.backends,
        grace,
    };
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure {
        code: EXIT_SERVER,
        message: e.to_string(),
    })?;
    rt.block_on(async {
        let handle = service::serve(config).await.map_err(|e| match e {
            service::ServeError::Config(_) => Failure::usage(e.to_string()),
            service::ServeError::Bind { .. } => Failure {
                code: EXIT_SERVER,
                message: e.to_string(),
            },
        })?;
        println!("listening on {}", handle.local_addr());
        let _ = tokio::signal::ctrl_c().await;
        eprintln!("shutting down");
        handle.shutdown().await;
        Ok(())
    })
}

fn submit(addr: &Option<String>, args: SubmitArgs) -> Result<(), Failure> {
    let qasm = std::fs::read_to_string(&args.file)
        .map_err(|e| Failure::usage(format!("cannot read {}: {e}", args.file.display())))?;
    let circuit = parse(&qasm).map_err(|e| Failure::usage(format!("{}: {e}", args.file.display())))?;
    let mut info = TaskInfo::new(qasm, circuit.num_qubits, args.shots);
    info.backend = args.backend;
    info.seed = args.seed;
    let mut client = connect(addr)?;
    let cid = client.create_circuit(&info)?;
    if args.no_wait {
        let state = client.async_run(&cid)?;
        print_json(&serde_json::json!({ "cid": cid, "state": state }));
        return Ok(());
    }
    let out = client.sync_run(&cid)?;
    print_json(&serde_json::json!({ "cid": cid, "output": out }));
    if out.rc != 0 {
        return Err(Failure {
            code: EXIT_TASK,
            message: out.error.unwrap_or_else(|| format!("task failed with rc {}", out.rc)),
        });
    }
    Ok(())
}

fn status(addr: &Option<String>, cid: String) -> Result<(), Failure> {
    let handle = connect(addr)?.get_result(&Cid(cid))?;
    print_json(&handle);
    if handle.state == TaskState::Failed {
        return Err(Failure {
            code: EXIT_TASK,
            message: handle.error.unwrap_or_else(|| "task failed".into()),
        });
    }
    Ok(())
}

fn backends(addr: &Option<String>) -> Result<(), Failure> {
    let list = connect(addr)?.list_backends()?;
    println!("{:<16} {:<12} {:>10}  default", "name", "kind", "max_qubits");
    for b in list {
        let kind = serde_json::to_value(b.kind).expect("serializable");
        println!(
            "{:<16} {:<12} {:>10}  {}",
            b.name,
            kind.as_str().unwrap_or("?"),
            b.max_qubits,
            if b.default { "*" } else { "" }
        );
    }
    Ok(())
}

fn bench(addr: &Option<String>, workload: BenchWorkload) -> Result<(), Failure> {
    let BenchWorkload::Ghz {
        qubits,
        count,
        concurrent,
        shots,
        backend,
        seed,
        json,
    } = workload;
    let circuit = ghz(qubits).map_err(|e| Failure::usage(e.to_string()))?;
    if count == 0 {
        return Err(Failure::usage("--count must be at least 1"));
    }
    let campaign = Campaign {
        concurrent,
        shots,
        backend,
        seed,
        ..Campaign::new(format!("ghz{qubits}"), circuit, count)
    };
    let mut client = connect(addr)?;
    match run_campaign(&mut client, &campaign) {
        Ok(report) => {
            if json {
                println!("{}", report.to_json());
            } else {
                print!("{}", report.to_table());
            }
            Ok(())
        }
        Err(e) => {
            let partial = match &e {
                CampaignError::Task { partial, .. } | CampaignError::TaskFailed { partial, .. } => {
                    Some(partial.to_table())
                }
                CampaignError::Usage(_) => None,
            };
            if let Some(table) = partial {
                print!("{table}");
            }
            Err(e.into())
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let addr = cli.addr;
    match cli.command {
        Command::Serve(args) => serve(args),
        Command::Submit(args) => submit(&addr, args),
        Command::Status { cid } => status(&addr, cid),
        Command::Backends => backends(&addr),
        Command::Util => {
            print_json(&connect(&addr)?.utilization()?);
            Ok(())
        }
        Command::Bench { workload } => bench(&addr, workload),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
