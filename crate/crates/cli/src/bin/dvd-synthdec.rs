//! Decoder for synthetic scene-script videos with an ffmpeg-like process
//! interface: `probe <input>` prints the duration, `decode` writes PNG frames.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dvd_core::ingest::synthetic::SyntheticVideo;

#[derive(Parser)]
#[command(name = "dvd-synthdec", version, about = "Render synthetic videos to frames")]
struct Args {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the duration in seconds
    Probe { input: PathBuf },
    /// Write frames of a time window as %06d.png
    Decode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        start: f64,
        #[arg(long)]
        duration: f64,
        #[arg(long)]
        fps: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let result = match Args::parse().cmd {
        Cmd::Probe { input } => SyntheticVideo::load(&input).map(|v| println!("{}", v.duration_s)),
        Cmd::Decode { input, start, duration, fps, out } => SyntheticVideo::load(&input)
            .and_then(|v| v.decode_to_dir(start, duration, fps, &out))
            .map(|frames| eprintln!("{} frames", frames.len())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dvd-synthdec: {e}");
            ExitCode::FAILURE
        }
    }
}
