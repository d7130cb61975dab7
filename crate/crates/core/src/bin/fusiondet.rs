//! Command-line front end.
//!
//! Exit codes: 0 success, 2 invalid input or failed check, 1 runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fusiondet::oracle::run_oracle_suite;
use fusiondet::pipeline::{dump_correspondence, dump_heatmaps, dump_scene, run_forward, HeatmapWhich, PipelineConfig};

#[derive(Parser)]
#[command(name = "fusiondet", version, about = "LiDAR-camera BEV detection, forward pass")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Scene JSON to use instead of generating one.
    #[arg(long)]
    scene: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene and write scene.json plus image PGMs.
    Synth(Common),
    /// Run the full forward pass and write detections and a report.
    Forward {
        #[command(flatten)]
        common: Common,
        /// Also cross-check every stage against brute-force references.
        #[arg(long)]
        oracle: bool,
    },
    /// Dump both correspondence maps, pillars and set statistics.
    Corr(Common),
    /// Run the brute-force reference checks only.
    Oracle(Common),
    /// Write BEV heatmaps before and/or after the encoder.
    Heatmap {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Which::Both)]
        which: Which,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Before,
    After,
    Both,
}

fn load(common: &Common) -> fusiondet::Result<PipelineConfig> {
    let mut config = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = common.seed {
        config.seed = s;
    }
    if let Some(o) = &common.out {
        config.out_dir = o.clone();
    }
    if let Some(s) = &common.scene {
        config.scene_path = Some(s.clone());
    }
    Ok(config)
}

enum Outcome {
    Ok,
    CheckFailed,
}

fn run(cli: Cli) -> fusiondet::Result<Outcome> {
    match cli.command {
        Command::Synth(c) => {
            for p in dump_scene(&load(&c)?)? {
                println!("{}", p.display());
            }
            Ok(Outcome::Ok)
        }
        Command::Forward { common, oracle } => {
            let mut config = load(&common)?;
            config.oracle |= oracle;
            let report = run_forward(&config)?;
            for (stage, ms) in &report.timings_ms {
                eprintln!("{stage:>24}: {ms:9.1} ms");
            }
            for f in &report.files {
                println!("{}  {}", f.sha256, report.out_dir.join(&f.file).display());
            }
            for c in &report.invariants {
                println!("{} {}", if c.passed { "ok  " } else { "FAIL" }, c.name);
            }
            if let Some(o) = &report.oracle {
                for c in &o.checks {
                    println!("{} oracle: {}", if c.passed { "ok  " } else { "FAIL" }, c.name);
                }
            }
            Ok(if report.all_passed() { Outcome::Ok } else { Outcome::CheckFailed })
        }
        Command::Corr(c) => {
            let stats = dump_correspondence(&load(&c)?)?;
            for (name, s) in [("img_to_bev", stats.img_to_bev), ("bev_to_img", stats.bev_to_img)] {
                println!(
                    "{name}: {} sets, {} entries, mean {:.3}, max {}, empty {:.1}%",
                    s.locations,
                    s.entries,
                    s.mean_size,
                    s.max_size,
                    100.0 * s.empty_fraction
                );
            }
            Ok(Outcome::Ok)
        }
        Command::Oracle(c) => {
            let report = run_oracle_suite(&load(&c)?)?;
            for n in &report.notes {
                println!("note: {n}");
            }
            for c in &report.checks {
                println!("{} {} ({} compared)", if c.passed { "ok  " } else { "FAIL" }, c.name, c.compared);
                if let Some(d) = &c.detail {
                    println!("     {d}");
                }
            }
            Ok(if report.passed() { Outcome::Ok } else { Outcome::CheckFailed })
        }
        Command::Heatmap { common, which } => {
            let which = match which {
                Which::Before => HeatmapWhich::Before,
                Which::After => HeatmapWhich::After,
                Which::Both => HeatmapWhich::Both,
            };
            for p in dump_heatmaps(&load(&common)?, which)? {
                println!("{}", p.display());
            }
            Ok(Outcome::Ok)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
