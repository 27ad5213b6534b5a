//! `pht` — drive the analysis-train protocol from the command line.
//!
//! A workspace directory (created by `pht init`) holds the shared services
//! (key directory + image registry), entity key files, proposals, and the
//! trusted-base-image list. Every command prints prose by default and
//! machine-readable JSON behind `--json`; failures exit with a stable
//! family code (1 internal, 2 usage/config, 3 access denied, 4 not found,
//! 5 protocol abort, 6 data/execution, 7 lifecycle).

mod commands;
mod demo;
mod error;
mod workspace;

use clap::{Parser, Subcommand};
use error::CliError;
use serde_json::json;
use std::path::PathBuf;
use workspace::Workspace;

#[derive(Parser)]
#[command(
    name = "pht",
    version,
    about = "Multi-station analysis trains: signed, envelope-encrypted bundles over simulated hospitals",
    propagate_version = true
)]
struct Cli {
    /// Workspace directory (see `pht init`).
    #[arg(long, global = true, env = "PHT_WORKSPACE", default_value = ".")]
    workspace: PathBuf,

    /// Emit machine-readable JSON on stdout (and JSON errors on stderr).
    #[arg(long, global = true)]
    json: bool,

    /// Seed for fixture generation and demo scenarios.
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create a workspace in the target directory.
    Init,
    /// Generate a keypair and register an entity with the key directory.
    Keygen {
        /// Entity role: user, station, or builder.
        #[arg(long)]
        role: String,
        /// Entity id (users and the builder; stations get a minted pseudonym).
        #[arg(long)]
        id: Option<String>,
        /// Real station name (stations only); the key directory maps it to a pseudonym.
        #[arg(long)]
        name: Option<String>,
        /// Directory holding the station's record store (stations only).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Manage the trusted base images stations will accept.
    #[command(subcommand)]
    BaseImage(BaseImageCmd),
    /// Write line-delimited record fixtures for stations.
    GenFixtures {
        /// Output directory; station i gets <out>/station-<i>/records.ndjson.
        #[arg(long)]
        out: PathBuf,
        /// Number of stations to generate for.
        #[arg(long)]
        stations: usize,
        /// Records per station: one count for all, or a comma list (random sizes if omitted).
        #[arg(long)]
        records: Option<String>,
        /// How many records per station carry the target allele (requires --records).
        #[arg(long)]
        matching: Option<String>,
    },
    /// Open an analysis proposal the listed stations must approve.
    Propose {
        /// User the analysis runs on behalf of.
        #[arg(long)]
        user: String,
        /// Comma-separated real station names.
        #[arg(long)]
        stations: String,
    },
    /// Record one station's vote on a proposal.
    Approve {
        /// Proposal id (from `pht propose`).
        #[arg(long)]
        proposal: String,
        /// Voting station's pseudonym.
        #[arg(long)]
        station: String,
        /// accepted or rejected.
        #[arg(long)]
        decision: String,
    },
    /// Build a train from an approved proposal, sign it, and dispatch it.
    Submit {
        /// Proposal id (must be fully approved).
        #[arg(long)]
        proposal: String,
        /// File holding the analysis descriptor (JSON).
        #[arg(long)]
        algorithm: PathBuf,
        /// File holding the record filter query.
        #[arg(long)]
        query: PathBuf,
        /// Comma-separated real station names, in route order.
        #[arg(long)]
        stations: String,
        /// Trusted base image id the train builds on.
        #[arg(long)]
        base: String,
    },
    /// Move a dispatched train to the next repository on its route.
    Route {
        /// Train id.
        #[arg(long)]
        train: String,
    },
    /// One station turn: pull, verify, execute, reseal, push back.
    StationRun {
        /// Station pseudonym.
        #[arg(long)]
        station: String,
        /// Train id.
        #[arg(long)]
        train: String,
        /// Refuse record stores larger than this.
        #[arg(long, default_value_t = 100_000)]
        max_records: usize,
        /// Give up on the analysis after this many seconds.
        #[arg(long, default_value_t = 60)]
        timeout_seconds: u64,
    },
    /// Extract the finished result package from the outgoing repository.
    Extract {
        /// Train id.
        #[arg(long)]
        train: String,
        /// Where to write the result package (canonical JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify a result package and decrypt it with the user's key.
    Decrypt {
        /// Result package file (from `pht extract`).
        #[arg(long)]
        package: PathBuf,
        /// User the results are addressed to.
        #[arg(long)]
        user: String,
        /// Where to write the decrypted results (canonical JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Attack a parked train the way a malicious registry would.
    Tamper {
        /// modify_static | modify_result | modify_config | reroute_image |
        /// swap_base_layer | replay_result.
        #[arg(long)]
        attack: String,
        /// Train id.
        #[arg(long)]
        train: String,
        /// Diversion target (reroute_image only).
        #[arg(long)]
        to_pid: Option<String>,
    },
    /// Push raw bytes to a repository as a principal (plumbing).
    Push {
        /// Acting entity id.
        #[arg(long = "as")]
        as_id: String,
        /// incoming | outgoing | trusted-base | station:<pid>.
        #[arg(long)]
        repo: String,
        /// File to push.
        #[arg(long)]
        file: PathBuf,
    },
    /// Pull an image from a repository as a principal (plumbing).
    Pull {
        /// Acting entity id.
        #[arg(long = "as")]
        as_id: String,
        /// incoming | outgoing | trusted-base | station:<pid>.
        #[arg(long)]
        repo: String,
        /// Image id to pull.
        #[arg(long)]
        image: String,
        /// Where to write the pulled bytes.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a self-contained in-memory walkthrough.
    Demo {
        /// hla-count | hist | attack-matrix.
        scenario: String,
    },
}

#[derive(Subcommand)]
enum BaseImageCmd {
    /// Push a base image to the registry and mark its content hash trusted.
    Add {
        /// Image file to push.
        #[arg(long)]
        file: PathBuf,
    },
}

fn run(cli: Cli) -> Result<commands::Output, CliError> {
    match cli.command {
        Command::Init => commands::init(&cli.workspace),
        Command::Demo { scenario } => demo::demo(&scenario, cli.seed),
        Command::GenFixtures {
            out,
            stations,
            records,
            matching,
        } => commands::gen_fixtures(&out, stations, records, matching, cli.seed),
        other => {
            let mut ws = Workspace::open(&cli.workspace)?;
            match other {
                Command::Init | Command::Demo { .. } | Command::GenFixtures { .. } => {
                    unreachable!("handled above")
                }
                Command::Keygen {
                    role,
                    id,
                    name,
                    data,
                } => commands::keygen(&mut ws, &role, id, name, data),
                Command::BaseImage(BaseImageCmd::Add { file }) => {
                    commands::base_image_add(&ws, &file)
                }
                Command::Propose { user, stations } => commands::propose(&ws, &user, &stations),
                Command::Approve {
                    proposal,
                    station,
                    decision,
                } => commands::approve(&ws, &proposal, &station, &decision),
                Command::Submit {
                    proposal,
                    algorithm,
                    query,
                    stations,
                    base,
                } => commands::submit(&ws, &proposal, &algorithm, &query, &stations, &base),
                Command::Route { train } => commands::route(&ws, &train),
                Command::StationRun {
                    station,
                    train,
                    max_records,
                    timeout_seconds,
                } => commands::station_run(&ws, &station, &train, max_records, timeout_seconds),
                Command::Extract { train, out } => commands::extract(&ws, &train, &out),
                Command::Decrypt { package, user, out } => {
                    commands::decrypt(&ws, &package, &user, &out)
                }
                Command::Tamper {
                    attack,
                    train,
                    to_pid,
                } => commands::tamper(&ws, &attack, &train, to_pid),
                Command::Push { as_id, repo, file } => commands::push(&ws, &as_id, &repo, &file),
                Command::Pull {
                    as_id,
                    repo,
                    image,
                    out,
                } => commands::pull(&ws, &as_id, &repo, &image, &out),
            }
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let json = cli.json;
    match run(cli) {
        Ok(out) => {
            if json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&out.json).expect("output is valid JSON")
                );
            } else {
                println!("{}", out.human);
            }
        }
        Err(e) => {
            if json {
                let doc = json!({
                    "error": e.family.slug(),
                    "code": e.family.exit_code(),
                    "message": e.message,
                });
                eprintln!("{}", serde_json::to_string_pretty(&doc).expect("error doc"));
            } else {
                eprintln!("error ({}): {}", e.family.slug(), e.message);
            }
            std::process::exit(e.family.exit_code());
        }
    }
}
