//! `hintcolor`: train, colorize, recommend, build-library, eval and serve.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use hintcolor::colorspace::{format_hex_color, lab_to_srgb, parse_hex_color, rgb_to_lab, srgb_to_normalized_ab, RgbImage};
use hintcolor::eval::{eval_psnr, EvalConfig, Protocol};
use hintcolor::hints::{LocalInput, Theme};
use hintcolor::recommender::{build_library, recommend_themes, GrayImage, LibraryConfig, TextureLibrary};
use hintcolor::trainer::{load_image_dir, train, TrainConfig, TrainOutputs};
use hintcolor::Model32;
use hintcolor_service::{serve, ServiceState};

#[derive(Parser)]
#[command(name = "hintcolor", version, about = "Colorization with global color themes and local color hints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Automatic,
    Global,
    Local,
    Both,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::Automatic => Protocol::Automatic,
            ProtocolArg::Global => Protocol::Global,
            ProtocolArg::Local => Protocol::Local,
            ProtocolArg::Both => Protocol::Both,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a directory of color PNGs.
    Train {
        dataset: PathBuf,
        /// TOML training configuration; defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Final checkpoint; periodic ones are written beside it.
        #[arg(short, long)]
        output: PathBuf,
        /// Append `iteration l_g l_s l_p total` lines here.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Continue from a training checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "f32")]
        precision: PrecisionArg,
    },
    /// Colorize the luminance of an image.
    Colorize {
        image: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Theme file (`a b` or `#rrggbb` per line) or inline `#rrggbb,#rrggbb,...`.
        #[arg(long)]
        theme: Option<String>,
        /// Local hint as `x,y,#rrggbb`; repeatable.
        #[arg(long = "hint")]
        hints: Vec<String>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Suggest a color theme for a grayscale image.
    Recommend {
        image: PathBuf,
        library: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Extra suggestions from the next-largest segments.
        #[arg(long, default_value_t = 0)]
        alternates: usize,
    },
    /// Build a texture library from a directory of color PNGs.
    BuildLibrary {
        corpus: PathBuf,
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = hintcolor::recommender::library::LIBRARY_CLUSTERS)]
        clusters: usize,
    },
    /// Report PSNR per image and protocol.
    Eval {
        images: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Protocols to run; all four by default.
        #[arg(long = "protocol", value_enum)]
        protocols: Vec<ProtocolArg>,
        /// Fixed hint count for local protocols (default: uniform 3 to 20).
        #[arg(long)]
        hints: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the report here.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        library: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

fn parse_theme(arg: &str) -> Result<Theme> {
    let path = Path::new(arg);
    let text = if path.is_file() {
        std::fs::read_to_string(path).with_context(|| format!("reading theme {}", path.display()))?
    } else {
        arg.split(',').map(str::trim).collect::<Vec<_>>().join("\n")
    };
    Theme::parse(&text).with_context(|| format!("theme `{arg}`"))
}

fn parse_hint(arg: &str) -> Result<(usize, usize, [f64; 2])> {
    let parts: Vec<&str> = arg.split(',').map(str::trim).collect();
    let [x, y, color] = parts[..] else {
        bail!("hint `{arg}`: expected x,y,#rrggbb");
    };
    let x = x.parse().map_err(|_| anyhow!("hint `{arg}`: x is not a pixel index"))?;
    let y = y.parse().map_err(|_| anyhow!("hint `{arg}`: y is not a pixel index"))?;
    let rgb = parse_hex_color(color).with_context(|| format!("hint `{arg}`"))?;
    Ok((x, y, srgb_to_normalized_ab(rgb)))
}

fn theme_line(theme: &Theme) -> String {
    theme
        .colors()
        .iter()
        .map(|&[a, b]| format!("{a:.2} {b:.2} {}", format_hex_color(lab_to_srgb([50.0, a * 255.0 - 128.0, b * 255.0 - 128.0]))))
        .collect::<Vec<_>>()
        .join("\n")
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { dataset, config, output, metrics, resume, iterations, seed, precision } => {
            let mut cfg = match config {
                Some(path) => TrainConfig::load(&path)?,
                None => TrainConfig::default(),
            };
            if let Some(n) = iterations {
                cfg.iterations = n;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let outputs = TrainOutputs { checkpoint: Some(output.clone()), metrics_log: metrics };
            let (iteration, last) = match precision {
                PrecisionArg::F32 => {
                    let s = train::<f32>(&dataset, &cfg, &outputs, resume.as_deref())?;
                    (s.iteration, s.loss_history.last().copied())
                }
                PrecisionArg::F64 => {
                    let s = train::<f64>(&dataset, &cfg, &outputs, resume.as_deref())?;
                    (s.iteration, s.loss_history.last().copied())
                }
            };
            match last {
                Some(l) => println!("iteration {iteration}: loss {:.6}; wrote {}", l.total, output.display()),
                None => println!("already at iteration {iteration}; wrote {}", output.display()),
            }
        }
        Command::Colorize { image, checkpoint, theme, hints, output } => {
            let model = Model32::load(&checkpoint)?;
            let img = RgbImage::read_png(&image)?;
            let theme = theme.as_deref().map(parse_theme).transpose()?;
            let mut local = LocalInput::empty(img.width(), img.height());
            for h in &hints {
                let (x, y, ab) = parse_hint(h)?;
                local.set(x, y, ab).with_context(|| format!("hint `{h}`"))?;
            }
            let out = model.colorize(&rgb_to_lab(&img), theme.as_ref(), (!hints.is_empty()).then_some(&local))?;
            out.write_png(&output)?;
        }
        Command::Recommend { image, library, k, alternates } => {
            let lib = TextureLibrary::load(&library)?;
            let img = RgbImage::read_png(&image)?;
            let recs = recommend_themes(&GrayImage::from_rgb(&img), &lib, k, alternates)?;
            for (i, rec) in recs.iter().enumerate() {
                if i > 0 {
                    println!();
                }
                if rec.padded() {
                    println!("# padded: fewer than {k} segments");
                }
                println!("{}", theme_line(&rec.theme));
            }
        }
        Command::BuildLibrary { corpus, out, seed, clusters } => {
            let cfg = LibraryConfig { clusters, ..LibraryConfig::default() };
            let lib = build_library(&corpus, &cfg, seed)?;
            lib.save(&out)?;
            println!(
                "{} clusters from {} segments of {} images; wrote {}",
                lib.centers.len(),
                lib.manifest.segments,
                lib.manifest.images,
                out.display()
            );
        }
        Command::Eval { images, checkpoint, protocols, hints, seed, output } => {
            let model = Model32::load(&checkpoint)?;
            let named: Vec<(String, RgbImage)> = load_image_dir(&images)?
                .into_iter()
                .map(|(p, img)| (p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(), img))
                .collect();
            let protocols = if protocols.is_empty() { Protocol::ALL.to_vec() } else { protocols.into_iter().map(Protocol::from).collect() };
            let cfg = EvalConfig { protocols, hint_count: hints, theme_size: None, seed };
            let report = eval_psnr(&model, &named, &cfg).with_context(|| format!("evaluating {}", images.display()))?;
            let csv = report.to_csv();
            print!("{csv}");
            if let Some(path) = output {
                std::fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::Serve { checkpoint, library, addr } => {
            let state = ServiceState::load(&checkpoint, library.as_deref())?;
            let runtime = tokio::runtime::Runtime::new().context("starting runtime")?;
            runtime.block_on(serve(addr, Arc::new(state))).with_context(|| format!("serving on {addr}"))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
