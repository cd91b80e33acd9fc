use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderMap, Method as HttpMethod, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::Router;
use clap::{Args, Parser, Subcommand};

use tilesim_core::api::{ApiRequest, Method, USER_UUID_HEADER};
use tilesim_core::crypto::{self, AuthKey, TileId, SCHEDULE_LEN};
use tilesim_core::scenario::{self, RunOutput, Scenario, ScenarioError, BUNDLED};
use tilesim_core::server::{Server, ServerConfig, Snapshot};

#[derive(Parser)]
#[command(name = "tilesim", version, about = "Tile offline-finding emulator and attack lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and score its attacks.
    Run(RunArgs),
    /// Run the bundled (or given) scenario for one attack and print its verdict.
    Attack {
        /// Attack id, a1..a8.
        id: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Expose the server over HTTP.
    Serve(ServeArgs),
    /// Print privateIds for a key and tile.
    Derive(DeriveArgs),
    /// List bundled scenarios.
    Scenarios,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file, or the name of a bundled scenario.
    #[arg(long)]
    scenario: Option<String>,
    /// Override the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    report_out: Option<PathBuf>,
    #[arg(long)]
    snapshot_out: Option<PathBuf>,
    /// Event log (JSON lines).
    #[arg(long)]
    log_out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Start from a saved snapshot.
    #[arg(long)]
    snapshot_in: Option<PathBuf>,
    /// Written on shutdown.
    #[arg(long)]
    snapshot_out: Option<PathBuf>,
    /// Rotate keys on transfer and share revocation.
    #[arg(long)]
    fresh_key_on_transfer: bool,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("which").required(true).args(["ctr", "time", "all"]))]
struct DeriveArgs {
    #[arg(long, value_parser = parse_auth_key)]
    auth_key: AuthKey,
    #[arg(long, value_parser = parse_tile_id)]
    tile_id: TileId,
    /// Schedule slot, 0..8640.
    #[arg(long, value_parser = clap::value_parser!(u32).range(0..SCHEDULE_LEN as i64))]
    ctr: Option<u32>,
    /// Unix time to resolve; needs --activation.
    #[arg(long, requires = "activation")]
    time: Option<u64>,
    #[arg(long)]
    activation: Option<u64>,
    /// Every slot in order.
    #[arg(long)]
    all: bool,
}

fn parse_auth_key(s: &str) -> Result<AuthKey, String> {
    AuthKey::from_hex(s).map_err(|e| e.to_string())
}

fn parse_tile_id(s: &str) -> Result<TileId, String> {
    TileId::from_hex(s).map_err(|e| e.to_string())
}

fn load_scenario(arg: Option<&str>, attack: Option<&str>) -> Result<Scenario, (u8, String)> {
    let text = match (arg, attack) {
        (Some(a), _) if Path::new(a).exists() => std::fs::read_to_string(a).map_err(|e| (2, format!("{a}: {e}")))?,
        (Some(a), _) => scenario::bundled(a)
            .ok_or_else(|| (2, format!("{a}: no such file or bundled scenario")))?
            .to_owned(),
        (None, Some(id)) => scenario::bundled_for_attack(id)
            .ok_or_else(|| (2, format!("unknown attack {id:?}")))?
            .to_owned(),
        (None, None) => return Err((2, "--scenario is required".into())),
    };
    Scenario::parse(&text).map_err(|e| (2, e.to_string()))
}

fn write_outputs(args: &RunArgs, out: &RunOutput) -> anyhow::Result<()> {
    if let Some(p) = &args.report_out {
        std::fs::write(p, out.report.to_json() + "\n").with_context(|| p.display().to_string())?;
    }
    if let Some(p) = &args.snapshot_out {
        std::fs::write(p, out.snapshot.to_json() + "\n").with_context(|| p.display().to_string())?;
    }
    if let Some(p) = &args.log_out {
        std::fs::write(p, out.log.to_jsonl()).with_context(|| p.display().to_string())?;
    }
    Ok(())
}

fn run(args: &RunArgs, attack: Option<&str>) -> ExitCode {
    let s = match load_scenario(args.scenario.as_deref(), attack) {
        Ok(s) => s,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(code);
        }
    };
    if let Some(id) = attack {
        if !s.attacks.iter().any(|a| a.id() == id) {
            eprintln!("error: scenario {:?} does not run attack {id}", s.name);
            return ExitCode::from(2);
        }
    }
    let out = match scenario::run(&s, args.seed) {
        Ok(o) => o,
        Err(e @ (ScenarioError::Schema { .. } | ScenarioError::Reference(_))) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    if let Err(e) = write_outputs(args, &out) {
        eprintln!("error: {e:#}");
        return ExitCode::FAILURE;
    }
    match attack {
        Some(id) => {
            let v = out.report.verdict(id).expect("attack was run");
            emit(&(serde_json::to_string_pretty(v).expect("verdict serializes") + "\n"));
        }
        None => emit(&(out.report.to_json() + "\n")),
    }
    for a in out.report.assertions.iter().filter(|a| !a.pass) {
        eprintln!("assertion failed: {} expected {:?}, got {:?}", a.attack, a.expect, a.actual);
    }
    if out.report.all_pass() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn derive(args: &DeriveArgs) -> anyhow::Result<()> {
    let seed = crypto::derive_private_id_seed(&args.auth_key, &args.tile_id);
    if args.all {
        let mut out = String::with_capacity(SCHEDULE_LEN as usize * 17);
        for id in crypto::full_schedule(&seed) {
            out.push_str(&id.to_hex());
            out.push('\n');
        }
        emit(&out);
    } else if let Some(ctr) = args.ctr {
        emit(&format!("{}\n", crypto::private_id(&seed, ctr)?.to_hex()));
    } else if let (Some(now), Some(act)) = (args.time, args.activation) {
        emit(&format!("{}\n", crypto::private_id_at(&args.auth_key, &args.tile_id, act, now)?.to_hex()));
    } else {
        bail!("nothing to derive");
    }
    Ok(())
}

/// Writes to stdout, treating a closed pipe (`| head`) as success.
fn emit(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

type Shared = Arc<Mutex<Server>>;

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

async fn dispatch(State(server): State<Shared>, method: HttpMethod, uri: Uri, headers: HeaderMap, body: Bytes) -> Response {
    let method = match method {
        HttpMethod::GET => Method::Get,
        HttpMethod::POST => Method::Post,
        HttpMethod::DELETE => Method::Delete,
        _ => return StatusCode::METHOD_NOT_ALLOWED.into_response(),
    };
    let path = uri.path_and_query().map_or_else(|| uri.path().to_owned(), |p| p.as_str().to_owned());
    let mut req = ApiRequest::new(method, path);
    if let Some(v) = headers.get(USER_UUID_HEADER).and_then(|v| v.to_str().ok()) {
        req = req.user(v);
    }
    if !body.is_empty() {
        req = req.body(String::from_utf8_lossy(&body).into_owned());
    }
    let resp = server.lock().expect("server lock").handle_at(unix_now(), &req);
    let status = StatusCode::from_u16(resp.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, [(axum::http::header::CONTENT_TYPE, "application/json")], resp.body).into_response()
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

async fn serve(args: ServeArgs) -> anyhow::Result<()> {
    let config = ServerConfig {
        seed: args.seed,
        fresh_key_on_transfer: args.fresh_key_on_transfer,
        ..ServerConfig::default()
    };
    let server = match &args.snapshot_in {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| p.display().to_string())?;
            Server::from_snapshot(config, Snapshot::from_json(&text)?)
        }
        None => Server::new(config),
    };
    let shared: Shared = Arc::new(Mutex::new(server));
    let addr = SocketAddr::from(([127, 0, 0, 1], args.port));
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("cannot listen on {addr}"))?;
    println!("listening on http://{}", listener.local_addr()?);
    let app = Router::new().fallback(dispatch).with_state(shared.clone());
    axum::serve(listener, app).with_graceful_shutdown(shutdown_signal()).await?;
    if let Some(p) = &args.snapshot_out {
        let snap = shared.lock().expect("server lock").snapshot();
        std::fs::write(p, snap.to_json() + "\n").with_context(|| p.display().to_string())?;
        eprintln!("snapshot written to {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => return run(&args, None),
        Command::Attack { id, run: args } => return run(&args, Some(&id)),
        Command::Derive(args) => derive(&args),
        Command::Scenarios => {
            for (name, text) in BUNDLED {
                let s = Scenario::parse(text).expect("bundled scenarios are valid");
                let attacks: Vec<_> = s.attacks.iter().map(|a| a.id()).collect();
                emit(&format!("{name}\t{}\t{}\n", attacks.join(","), s.description));
            }
            Ok(())
        }
        Command::Serve(args) => tokio::runtime::Runtime::new()
            .context("starting runtime")
            .and_then(|rt| rt.block_on(serve(args))),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
