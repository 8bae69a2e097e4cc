use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bootleg_core::config::HyperParams;
use bootleg_core::evaluate::{evaluate, load_manifest};
use bootleg_core::fixtures::{random_page, render_fixture, write_fixture_set, FixtureSpec, PageOptions};
use bootleg_core::metrics::Averaging;
use bootleg_core::midi::midi_to_bootleg;
use bootleg_core::pipeline::{decode_image, extract_query, run_query, write_debug_images, Reference, StageTimings};
use bootleg_server::{bind, match_query, serve, Registry};
use clap::{Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "bootleg", version, about = "Find the MIDI passage shown in a photo of piano sheet music")]
struct Cli {
    /// Hyperparameter file (TOML).
    #[arg(long, global = true, env = "BOOTLEG_CONFIG")]
    config: Option<PathBuf>,
    /// Override one hyperparameter, e.g. `--set project.cluster_threshold=35`
    /// or `--set chord_blocks=false`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a MIDI file into a serialized bootleg score.
    ExtractMidi {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the image side of the pipeline and report what was found.
    ExtractImage {
        #[arg(long = "in")]
        input: PathBuf,
        /// Write the query bootleg score (BSCR) here.
        #[arg(long)]
        save_features: Option<PathBuf>,
        /// Write intermediate images into this directory.
        #[arg(long)]
        debug_images: Option<PathBuf>,
    },
    /// Locate a photo (or saved query features) in a MIDI file.
    Match {
        #[arg(long, required_unless_present = "features", conflicts_with = "features")]
        image: Option<PathBuf>,
        /// Serialized query bootleg score instead of a photo.
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        midi: PathBuf,
    },
    /// Run every query of a JSONL manifest and report precision, recall and F.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Average precision and recall per query instead of over totals.
        #[arg(long = "macro")]
        macro_average: bool,
    },
    /// Render synthetic pages with matching MIDI and a manifest.
    Fixtures {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 25)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON page options for random pages.
        #[arg(long, conflicts_with = "spec")]
        options: Option<PathBuf>,
        /// JSON fixture spec to render as a single page.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Serve POST /match/<piece-id> for the MIDI files in a directory.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Directory of .mid files; each file stem becomes a piece id.
        #[arg(long)]
        pieces: Option<PathBuf>,
        /// Extra piece as ID=PATH. Repeatable.
        #[arg(long = "piece", value_name = "ID=PATH")]
        piece: Vec<String>,
    },
    /// Print the effective hyperparameters as TOML.
    Config,
}

fn load_params(cli: &Cli) -> Result<HyperParams> {
    let mut params = match &cli.config {
        Some(path) => HyperParams::load(path).with_context(|| format!("reading config {}", path.display()))?,
        None => HyperParams::default(),
    };
    for o in &cli.overrides {
        params.apply_override(o).with_context(|| format!("applying --set {o}"))?;
    }
    Ok(params)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{}", serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn timings_json(t: &StageTimings) -> serde_json::Value {
    t.stages.iter().map(|(s, v)| json!({ "stage": s, "seconds": v })).collect()
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let params = load_params(&cli)?;

    match &cli.command {
        Command::ExtractMidi { input, out } => {
            let midi = midi_to_bootleg(&read(input)?, &params.midi)?;
            write(out, &midi.score.serialize())?;
            print_json(&json!({
                "events": midi.num_events(),
                "columns": midi.score.len(),
                "bytes": midi.score.serialized_len(),
            }))?;
        }
        Command::ExtractImage {
            input,
            save_features,
            debug_images,
        } => {
            let gray = decode_image(&read(input)?)?;
            let mut timings = StageTimings::default();
            let extraction = extract_query(&gray, &params, &mut timings)?;
            if let Some(dir) = debug_images {
                for path in write_debug_images(&extraction, dir)? {
                    log::info!("wrote {}", path.display());
                }
            }
            let summary = match &extraction.features {
                Some(f) => {
                    let score = &f.projection.query.score;
                    if let Some(path) = save_features {
                        write(path, &score.serialize())?;
                    }
                    json!({
                        "scale_factor": f.preprocessed.scale_factor,
                        "estimated_spacing": f.preprocessed.estimated_raw_spacing,
                        "spacing_confidence": f.preprocessed.confidence,
                        "noteheads": f.noteheads.boxes.len(),
                        "adaptive_template": f.noteheads.adaptive,
                        "staves": f.projection.staves.len(),
                        "grand_staves": f.projection.grand_staves.len(),
                        "columns": score.len(),
                        "timings": timings_json(&timings),
                    })
                }
                None => {
                    if save_features.is_some() {
                        bail!("no features to save: {}", extraction.failure.unwrap_or_default());
                    }
                    json!({ "no_match": extraction.failure, "timings": timings_json(&timings) })
                }
            };
            print_json(&summary)?;
        }
        Command::Match { image, features, midi } => {
            let midi_bytes = read(midi)?;
            if let Some(path) = features {
                let midi = midi_to_bootleg(&midi_bytes, &params.midi)?;
                let r = match_query(&midi, &read(path)?, &params)?;
                print_json(&serde_json::to_value(r)?)?;
            } else {
                let image = image.as_ref().expect("clap requires --image or --features");
                let r = run_query(&read(image)?, Reference::Midi(&midi_bytes), &params)?;
                let alignment = r.alignment.as_ref();
                print_json(&json!({
                    "start_sec": r.interval.start,
                    "end_sec": r.interval.end,
                    "cost": alignment.map(|a| a.total_cost),
                    "ref_start_col": alignment.map(|a| a.ref_start_col),
                    "ref_end_col": alignment.map(|a| a.ref_end_col),
                    "no_match": r.no_match,
                    "timings": timings_json(&r.timings),
                }))?;
            }
        }
        Command::Evaluate {
            manifest,
            out,
            macro_average,
        } => {
            let entries = load_manifest(manifest)?;
            let averaging = if *macro_average { Averaging::Macro } else { Averaging::Micro };
            let report = evaluate(&entries, &params, averaging)?;
            let text = serde_json::to_string_pretty(&report)?;
            match out {
                Some(path) => write(path, text.as_bytes())?,
                None => println!("{text}"),
            }
            eprintln!(
                "{} queries: P {:.3} R {:.3} F {:.3}",
                report.metrics.queries.len(),
                report.metrics.precision,
                report.metrics.recall,
                report.metrics.f_measure
            );
        }
        Command::Fixtures {
            out,
            count,
            seed,
            options,
            spec,
        } => {
            if let Some(path) = spec {
                let spec: FixtureSpec = serde_json::from_slice(&read(path)?).context("parsing fixture spec")?;
                let fixture = render_fixture(&spec)?;
                std::fs::create_dir_all(out)?;
                write(&out.join("page.png"), &fixture.png_bytes()?)?;
                write(&out.join("page.mid"), &fixture.midi)?;
                let truth = json!({ "notes": fixture.notes, "interval": fixture.interval });
                write(&out.join("page.json"), serde_json::to_string_pretty(&truth)?.as_bytes())?;
            } else {
                let opts: PageOptions = match options {
                    Some(path) => serde_json::from_slice(&read(path)?).context("parsing page options")?,
                    None => PageOptions::default(),
                };
                // Fail early on an options file that cannot produce a valid page.
                render_fixture(&random_page(*seed, &opts))?;
                let manifest = write_fixture_set(out, *count, *seed, &opts)?;
                println!("{}", manifest.display());
            }
        }
        Command::Serve { addr, pieces, piece } => {
            let mut registry = match pieces {
                Some(dir) => Registry::load_dir(dir, &params)?,
                None => Registry::default(),
            };
            for spec in piece {
                let (id, path) = spec.split_once('=').context("--piece expects ID=PATH")?;
                registry.load_file(id.to_string(), Path::new(path), &params)?;
            }
            if registry.is_empty() {
                bail!("no pieces to serve; pass --pieces DIR or --piece ID=PATH");
            }
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async {
                let listener = bind(*addr).await?;
                eprintln!("listening on {}", listener.local_addr()?);
                serve(listener, registry, params).await
            })?;
        }
        Command::Config => print!("{}", params.to_toml()),
    }
    Ok(())
}
