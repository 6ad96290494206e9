use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use arsls_core::compositor::decode_png;
use arsls_core::replay::{diff_traces, encode_log_entry, read_event_log_file, replay, LogEntry, PngDir, TraceDiff};
use arsls_core::synth::{generate, TrafficSpec};

use crate::config::{Inputs, ServerConfig};
use crate::room::Room;

#[derive(Debug, Parser)]
#[command(name = "arsls", version, about = "AR scenic live-streaming room engine")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Speed {
    /// Virtual clock: no sleeping between ticks.
    Max,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Run a live room until the session plan ends.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Event log to record (must not exist yet).
        #[arg(long)]
        record: Option<PathBuf>,
        #[arg(long)]
        http: Option<String>,
        #[arg(long)]
        ingest: Option<String>,
    },
    /// Replay a recorded event log offline.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Defaults to the plan's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Dump PNG frames into this directory.
        #[arg(long)]
        frames: Option<PathBuf>,
        /// Frame interval in ticks.
        #[arg(long, default_value_t = 1)]
        every: u64,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write the effect log (NDJSON) here.
        #[arg(long)]
        effects: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Speed::Max)]
        speed: Speed,
    },
    /// Compare two effect logs and show the first difference.
    Diff { a: PathBuf, b: PathBuf },
    /// Generate a synthetic event log with Poisson arrivals.
    GenLog {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        events: usize,
        #[arg(long, default_value_t = 1_200_000)]
        duration_ms: u64,
        #[arg(long, default_value_t = 40)]
        users: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
}

/// Runs a parsed command. Returns the process exit code.
pub async fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Cmd::Serve { config, seed, scene, corpus, plan, record, http, ingest } => {
            let mut cfg = match config {
                Some(p) => ServerConfig::from_file(&p)?,
                None => ServerConfig::default(),
            };
            cfg.seed = seed.or(cfg.seed);
            cfg.scene = scene.or(cfg.scene);
            cfg.corpus = corpus.or(cfg.corpus);
            cfg.plan = plan.or(cfg.plan);
            cfg.record = record.or(cfg.record);
            cfg.http_addr = http.unwrap_or(cfg.http_addr);
            cfg.ingest_addr = ingest.unwrap_or(cfg.ingest_addr);
            let inputs = Inputs::load(cfg.scene.as_deref(), cfg.corpus.as_deref(), cfg.plan.as_deref(), cfg.seed)?;
            let mut room = Room::start(&cfg, inputs).await?;
            println!("http on {}, ingest on {}", room.http_addr, room.ingest_addr);
            let report = tokio::select! {
                r = room.wait() => r?,
                _ = tokio::signal::ctrl_c() => {
                    eprintln!("interrupted");
                    room.shutdown();
                    return Ok(130);
                }
            };
            println!("{}", report.digest);
            room.shutdown();
            Ok(0)
        }
        Cmd::Replay { log, scene, corpus, plan, seed, frames, every, report, effects, speed: Speed::Max } => {
            let inputs = Inputs::load(scene.as_deref(), corpus.as_deref(), plan.as_deref(), seed)?;
            let entries = read_event_log_file(&log).map_err(|e| anyhow::anyhow!("{}: {e}", log.display()))?;
            let seed = inputs.plan.seed;
            let mut sink = match &frames {
                Some(dir) => {
                    let mut s = PngDir::new(dir, every, &inputs.scene)?;
                    if let Some(bg) = scene.as_deref().and_then(|p| load_background(p, &inputs.scene.background_ref)) {
                        if (bg.width, bg.height) == (inputs.scene.screen.width_px, inputs.scene.screen.height_px) {
                            s = s.with_background(bg);
                        } else {
                            tracing::warn!("background image size differs from the screen; using a synthetic one");
                        }
                    }
                    Some(s)
                }
                None => None,
            };
            let (rep, session) = replay(
                &entries,
                inputs.scene,
                inputs.corpus,
                inputs.plan,
                seed,
                sink.as_mut().map(|s| s as &mut dyn arsls_core::replay::FrameSink),
            )?;
            if let Some(path) = effects {
                std::fs::write(&path, session.log().to_text()).with_context(|| format!("writing {}", path.display()))?;
            }
            let json = serde_json::to_string_pretty(&rep)?;
            match report {
                Some(path) => {
                    std::fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?;
                    println!("{}", rep.digest);
                }
                None => println!("{json}"),
            }
            Ok(0)
        }
        Cmd::Diff { a, b } => {
            let read = |p: &Path| std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()));
            match diff_traces(&read(&a)?, &read(&b)?) {
                TraceDiff::Equal => {
                    println!("equal");
                    Ok(0)
                }
                TraceDiff::Diverged { line, left, right, context } => {
                    println!("first difference at line {line}");
                    for c in &context {
                        println!("  {c}");
                    }
                    println!("- {}", left.as_deref().unwrap_or("<end of file>"));
                    println!("+ {}", right.as_deref().unwrap_or("<end of file>"));
                    Ok(1)
                }
            }
        }
        Cmd::GenLog { out, events, duration_ms, users, seed, corpus } => {
            if duration_ms == 0 {
                bail!("--duration-ms must be positive");
            }
            let corpus = Inputs::load(None, corpus.as_deref(), None, None)?.corpus;
            let spec = TrafficSpec { duration_ms, events, users, seed };
            let mut f = std::io::BufWriter::new(std::fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?);
            for ev in generate(&spec, &corpus) {
                writeln!(f, "{}", encode_log_entry(&LogEntry::new(ev)))?;
            }
            f.flush()?;
            Ok(0)
        }
    }
}

fn load_background(scene_path: &Path, background_ref: &str) -> Option<arsls_core::compositor::Frame> {
    if background_ref.is_empty() {
        return None;
    }
    let path = scene_path.parent().unwrap_or(Path::new(".")).join(background_ref);
    let bytes = std::fs::read(&path).ok()?;
    match decode_png(&bytes) {
        Ok(f) => Some(f),
        Err(e) => {
            tracing::warn!("{}: {e}", path.display());
            None
        }
    }
}
