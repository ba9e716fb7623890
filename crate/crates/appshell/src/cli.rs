//! `cofkit` command line.
//!
//! Exit codes: 0 on success, 2 for usage or validation errors, 1 when
//! processing fails.

use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use cofkit_core::filter::{ScribbleSet, Stroke};
use cofkit_core::fixtures::{make_fixture, Fixture};
use cofkit_core::io::{load_image, save_image};
use cofkit_core::ColorImage;

use crate::bench::{bench_image, run_bench};
use crate::config::{ConfigFlags, PipelineConfig};
use crate::pipeline::{self, Guidance, PipelineError};
use crate::scribble::decode_scribble_png;

pub const THREADS_ENV: &str = "COFKIT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "cofkit", version, about = "Co-occurrence filtering for images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the guided pipeline and write the filtered image
    Filter {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        config: ConfigFlags,
    },
    /// Iterate the filter and write the per-round MSD series as CSV
    Iterate {
        input: PathBuf,
        /// CSV destination with an `iteration,msd` header
        #[arg(short, long)]
        output: PathBuf,
        /// Also write the final image
        #[arg(long)]
        image: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigFlags,
    },
    /// Keep the foreground sharp while smoothing the background
    Fb {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        source: SelectionSource,
        #[command(flatten)]
        config: ConfigFlags,
    },
    /// Keep foreground color and fade the background to gray
    Recolor {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        source: SelectionSource,
        #[command(flatten)]
        config: ConfigFlags,
    },
    /// Grow scribbles into a foreground mask
    Mask {
        input: PathBuf,
        /// PNG with red foreground and blue background strokes
        #[arg(long)]
        scribbles: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Write the foreground matrix dump here
        #[arg(long, value_name = "JSON")]
        fg_matrix_out: Option<PathBuf>,
        /// Write the background matrix dump here
        #[arg(long, value_name = "JSON")]
        bg_matrix_out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigFlags,
    },
    /// Learn the co-occurrence matrix and dump it as JSON
    Cooc {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        config: ConfigFlags,
    },
    /// Time each pipeline stage on a synthetic image
    Bench {
        /// Side of the square test image
        #[arg(long, default_value_t = 1024)]
        size: usize,
        /// Print the report as JSON
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        config: ConfigFlags,
    },
    /// Write the synthetic test images
    Fixtures {
        /// Output directory
        dir: PathBuf,
        /// Fixture to write; repeatable, all when omitted
        #[arg(long = "name", value_parser = parse_fixture)]
        names: Vec<Fixture>,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Serve the HTTP API
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[command(flatten)]
        config: ConfigFlags,
    },
}

/// Where the foreground and background matrices come from.
#[derive(Debug, Clone, clap::Args)]
#[group(required = true, multiple = true)]
pub struct SelectionSource {
    /// PNG with red foreground and blue background strokes
    #[arg(long, conflicts_with_all = ["fg_matrix", "bg_matrix"])]
    pub scribbles: Option<PathBuf>,
    /// Foreground matrix dump (needs --bg-matrix)
    #[arg(long, value_name = "JSON", requires = "bg_matrix")]
    pub fg_matrix: Option<PathBuf>,
    /// Background matrix dump (needs --fg-matrix)
    #[arg(long, value_name = "JSON", requires = "fg_matrix")]
    pub bg_matrix: Option<PathBuf>,
}

fn parse_fixture(s: &str) -> Result<Fixture, String> {
    s.parse().map_err(|e: cofkit_core::CofError| e.to_string())
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Processing(String),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::Processing(e.to_string())
    }
}

impl From<crate::config::ConfigError> for Failure {
    fn from(e: crate::config::ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn processing(e: impl std::fmt::Display) -> Failure {
    Failure::Processing(e.to_string())
}

/// Parses `args` (including the program name) and runs the command.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    configure_threads();
    match run(cli.command) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Processing(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

fn configure_threads() {
    let Ok(value) = std::env::var(THREADS_ENV) else { return };
    match value.parse::<usize>() {
        Ok(n) if n > 0 => {
            if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
                log::debug!("rayon pool already initialized");
            }
        }
        _ => log::warn!("ignoring {THREADS_ENV}={value}"),
    }
}

fn load(path: &Path) -> Result<ColorImage, Failure> {
    load_image(path).map_err(processing)
}

fn save(img: &ColorImage, path: &Path) -> Result<(), Failure> {
    save_image(img, path).map_err(processing)
}

fn load_scribbles(path: &Path, dims: (usize, usize)) -> Result<ScribbleSet, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::Processing(format!("cannot read {}: {e}", path.display())))?;
    let scribbles = decode_scribble_png(&bytes).map_err(processing)?;
    if scribbles.dimensions() != dims {
        return Err(Failure::Processing(format!(
            "scribbles are {:?} but the image is {:?}",
            scribbles.dimensions(),
            dims
        )));
    }
    if scribbles.count(Stroke::Foreground) == 0 {
        return Err(Failure::Processing("scribble image has no foreground (red) strokes".into()));
    }
    Ok(scribbles)
}

/// Guidance plus foreground/background matrices for `fb` and `recolor`.
fn selection(
    cfg: &PipelineConfig,
    img: &ColorImage,
    source: &SelectionSource,
) -> Result<(Guidance, cofkit_core::cooc::PmiMatrix, cofkit_core::cooc::PmiMatrix), Failure> {
    if let Some(path) = &source.scribbles {
        let scribbles = load_scribbles(path, img.dimensions())?;
        let (guidance, total) = pipeline::prepare(cfg, img)?;
        let sel = pipeline::select(cfg, &guidance, &total, &scribbles)?;
        return Ok((guidance, sel.foreground.matrix, sel.background.matrix));
    }
    let (Some(fg_path), Some(bg_path)) = (&source.fg_matrix, &source.bg_matrix) else {
        return Err(Failure::Usage("give --scribbles or both --fg-matrix and --bg-matrix".into()));
    };
    let fg = pipeline::load_dump(fg_path)?;
    let bg = pipeline::load_dump(bg_path)?;
    if fg.palette != bg.palette {
        return Err(Failure::Processing("foreground and background dumps use different palettes".into()));
    }
    let (guidance, fg_stats) = pipeline::from_dump(&fg, img)?;
    Ok((guidance, fg_stats.matrix, bg.matrix))
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Filter { input, output, config } => {
            let cfg = config.resolve()?;
            let img = load(&input)?;
            save(&pipeline::run_pipeline(&cfg, &img)?, &output)
        }
        Command::Iterate {
            input,
            output,
            image,
            config,
        } => {
            let cfg = config.resolve()?;
            let img = load(&input)?;
            let (result, msd) = if cfg.iterations == 0 {
                (img.clone(), Vec::new())
            } else {
                let out = pipeline::run_pipeline_detailed(&cfg, &img)?;
                (out.image, out.msd)
            };
            let mut csv = String::from("iteration,msd\n");
            for (i, v) in msd.iter().enumerate() {
                csv.push_str(&format!("{},{v:e}\n", i + 1));
            }
            std::fs::write(&output, csv).map_err(processing)?;
            if let Some(path) = image {
                save(&result, &path)?;
            }
            Ok(())
        }
        Command::Fb {
            input,
            output,
            source,
            config,
        } => {
            let cfg = config.resolve()?;
            let img = load(&input)?;
            let (guidance, fg, bg) = selection(&cfg, &img, &source)?;
            save(&pipeline::render_fb(&cfg, &img, &guidance, &fg, &bg)?, &output)
        }
        Command::Recolor {
            input,
            output,
            source,
            config,
        } => {
            let cfg = config.resolve()?;
            let img = load(&input)?;
            let (guidance, fg, bg) = selection(&cfg, &img, &source)?;
            save(&pipeline::render_recolor(&cfg, &img, &guidance, &fg, &bg)?, &output)
        }
        Command::Mask {
            input,
            scribbles,
            output,
            fg_matrix_out,
            bg_matrix_out,
            config,
        } => {
            let cfg = config.resolve()?;
            let img = load(&input)?;
            let scribbles = load_scribbles(&scribbles, img.dimensions())?;
            let (guidance, total) = pipeline::prepare(&cfg, &img)?;
            let sel = pipeline::select(&cfg, &guidance, &total, &scribbles)?;
            save_image(&sel.mask.to_gray(), &output).map_err(processing)?;
            for (stats, path) in [(&sel.foreground, fg_matrix_out), (&sel.background, bg_matrix_out)] {
                if let Some(path) = path {
                    pipeline::save_dump(&stats.dump(&guidance.palette), &path)?;
                }
            }
            Ok(())
        }
        Command::Cooc { input, output, config } => {
            let cfg = config.resolve()?;
            let img = load(&input)?;
            let (guidance, stats) = pipeline::prepare(&cfg, &img)?;
            pipeline::save_dump(&stats.dump(&guidance.palette), &output)?;
            Ok(())
        }
        Command::Bench { size, json, config } => {
            let cfg = config.resolve()?;
            if size < 8 {
                return Err(Failure::Usage(format!("--size {size} is below 8")));
            }
            let img = bench_image(size, cfg.seed);
            let report = run_bench(&cfg, &img)?;
            let text = if json {
                serde_json::to_string_pretty(&report).expect("report serializes") + "\n"
            } else {
                report.to_text()
            };
            std::io::stdout().write_all(text.as_bytes()).map_err(processing)
        }
        Command::Fixtures {
            dir,
            names,
            size,
            noise,
            seed,
        } => {
            if size < 8 || !(noise.is_finite() && noise >= 0.0) {
                return Err(Failure::Usage("fixtures need --size >= 8 and --noise >= 0".into()));
            }
            std::fs::create_dir_all(&dir).map_err(processing)?;
            let names = if names.is_empty() { Fixture::ALL.to_vec() } else { names };
            for f in names {
                let img = make_fixture(f, size, noise, seed).map_err(processing)?;
                save_image(&img, dir.join(format!("{}.png", f.name()))).map_err(processing)?;
            }
            Ok(())
        }
        Command::Serve { addr, config } => {
            let cfg = config.resolve()?;
            let runtime = tokio::runtime::Runtime::new().map_err(processing)?;
            runtime.block_on(crate::server::serve(addr, cfg)).map_err(processing)
        }
    }
}
