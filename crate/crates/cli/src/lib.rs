//! The `dvd` command line: database builds, single questions, benchmark
//! evaluation, behavior analysis and the JSON tool service.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod service;

use std::io::{self, BufReader};
use std::net::TcpListener;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use cli::{Cli, Command};
use commands::AgentSetup;
use config::{RoleName, Settings};
use error::{CliError, CliResult};
use service::Service;

/// Ctrl-C flag; the handler can only be installed once per process.
fn interrupt_flag() -> Arc<AtomicBool> {
    let flag = Arc::new(AtomicBool::new(false));
    let f = Arc::clone(&flag);
    if let Err(e) = ctrlc::set_handler(move || f.store(true, Ordering::SeqCst)) {
        tracing::warn!("cannot install Ctrl-C handler: {e}");
    }
    flag
}

pub fn run(cli: Cli) -> CliResult<()> {
    let settings = Settings::load(&cli.globals)?;
    match cli.command {
        Command::Build(a) => {
            let db = commands::build(&settings, &a, Some(interrupt_flag()))?;
            println!("{} clips, {:.1}s, written to {}", db.clips.len(), db.duration_s(), a.out.display());
        }
        Command::Ask(a) => {
            let (episode, path) = commands::ask(&settings, &a)?;
            eprintln!("episode: {}", path.display());
            println!("{}", episode.final_answer);
        }
        Command::Eval(a) => {
            let table = commands::eval(&settings, &a)?;
            print!("{}", table.to_text());
        }
        Command::Analyze(a) => {
            let report = commands::analyze(&settings, &a)?;
            print!("{}", report.to_text());
        }
        Command::Serve(a) => {
            let toolsets = a
                .dbs
                .iter()
                .map(|root| commands::open_toolset(&settings, root, &a.agent))
                .collect::<CliResult<Vec<_>>>()?;
            let agent = match settings.backend_config(RoleName::Llm) {
                Ok(_) => Some(AgentSetup::new(&settings, &a.agent)?),
                Err(_) => None,
            };
            let svc = Arc::new(Service::new(toolsets, agent).map_err(CliError::usage)?);
            let listen = a.listen.clone().or(settings.file.serve.listen.clone());
            let io_err = |e: io::Error| CliError::data(format!("service: {e}"));
            match listen {
                Some(addr) => {
                    let listener = TcpListener::bind(&addr).map_err(|e| CliError::usage(format!("bind {addr}: {e}")))?;
                    eprintln!("listening on {}", listener.local_addr().map_err(io_err)?);
                    svc.serve_tcp(listener, interrupt_flag()).map_err(io_err)?;
                }
                None => {
                    let stop = AtomicBool::new(false);
                    svc.serve_stream(BufReader::new(io::stdin().lock()), io::stdout(), &stop).map_err(io_err)?;
                }
            }
        }
    }
    Ok(())
}
