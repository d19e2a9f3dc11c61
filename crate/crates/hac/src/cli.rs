//! The `hac` command line.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use hac_core::scene::synth_scene;
use hac_core::trainer::{baseline_bits, fit, HistoryRow, TrainConfig, TrainMode};
use hac_core::{Family, GridConfig};

use crate::bitmap::{bit_allocation_map, VoxelRecord};
use crate::checkpoint::{self, Checkpoint};
use crate::container;
use crate::error::{exit, HacError, Result};
use crate::report::Report;
use crate::{bytes, sceneio};

#[derive(Debug, Parser)]
#[command(name = "hac", version, about = "Context-model compression of anchor scenes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic anchor scene
    Synth(SynthArgs),
    /// Train the grid, context model and masks on a scene
    Fit(FitArgs),
    /// Compress a scene with a trained model
    Encode(EncodeArgs),
    /// Decompress a container into a scene of quantized attributes
    Decode(DecodeArgs),
    /// Encode, decode and check the round trip is bit-exact
    Verify(VerifyArgs),
    /// Print the section layout of a container as JSON
    Inspect(InspectArgs),
    /// Estimated bits per voxel
    Bitmap(BitmapArgs),
    /// Per-component sizes and bits per parameter of a container
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8192)]
    pub anchors: usize,
    #[arg(long, default_value_t = 50)]
    pub dim_feat: usize,
    #[arg(long, default_value_t = 10)]
    pub offsets: usize,
    #[arg(long, default_value_t = 0.9)]
    pub smoothness: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GridPreset {
    Paper,
    Small,
}

impl GridPreset {
    pub fn config(self) -> GridConfig {
        match self {
            GridPreset::Paper => GridConfig::paper(),
            GridPreset::Small => GridConfig::small(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    RateOnly,
    Joint,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    pub scene: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
    /// Training history CSV; defaults to `<out>.history.csv`
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Where to write the refined scene in joint mode
    #[arg(long)]
    pub refined: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2e-3)]
    pub lambda_e: f64,
    #[arg(long, default_value_t = 5e-4)]
    pub lambda_m: f64,
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::RateOnly)]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value_t = GridPreset::Paper)]
    pub grid_preset: GridPreset,
    /// Serial, fixed-order gradient accumulation
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    pub scene: PathBuf,
    pub model: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
    /// Print the size report after encoding
    #[arg(long)]
    pub report: bool,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    pub input: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    pub scene: PathBuf,
    pub model: PathBuf,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct BitmapArgs {
    pub scene: PathBuf,
    pub model: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub voxels: u32,
    #[arg(long)]
    pub json: bool,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub json: bool,
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => bytes::write_file(p, text.as_bytes()),
        None => {
            let mut s = std::io::stdout().lock();
            s.write_all(text.as_bytes()).and_then(|_| s.flush()).map_err(|e| HacError::io(Path::new("<stdout>"), e))
        }
    }
}

fn json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

pub fn train_config(a: &FitArgs) -> TrainConfig {
    TrainConfig {
        lambda_e: a.lambda_e,
        lambda_m: a.lambda_m,
        iterations: a.iters,
        seed: a.seed,
        mode: match a.mode {
            ModeArg::RateOnly => TrainMode::RateOnly,
            ModeArg::Joint => TrainMode::Joint,
        },
        grid: a.grid_preset.config(),
        deterministic: a.deterministic,
        ..TrainConfig::default()
    }
}

fn run_fit(a: &FitArgs) -> Result<()> {
    let scene = sceneio::load(&a.scene)?;
    let cfg = train_config(a);
    let trained = fit(&scene, &cfg)?;
    checkpoint::save(&a.out, &Checkpoint::from_trained(&trained, cfg.lambda_e, cfg.lambda_m))?;
    let history = a.history.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".history.csv");
        p.into()
    });
    let mut csv = String::from(HistoryRow::CSV_HEADER);
    csv.push('\n');
    for row in &trained.history {
        csv.push_str(&row.csv());
        csv.push('\n');
    }
    bytes::write_file(&history, csv.as_bytes())?;
    if let Some(p) = &a.refined {
        sceneio::save(p, &trained.scene)?;
    }
    let base = baseline_bits(&scene, cfg.q0)?;
    let (i, l) = (&trained.initial, &trained.last);
    println!("total loss       {:.6e} -> {:.6e}", i.total, l.total);
    println!("distortion       {:.6e} -> {:.6e}", i.distortion, l.distortion);
    for f in Family::ALL {
        println!("bits/param {:<9} {:.4} (baseline {:.4})", f.name(), l.bits_per_param(f), base.per_param(f));
    }
    println!("bits/param pooled    {:.4} (baseline {:.4})", l.pooled_bits_per_param(), base.pooled());
    println!("masked offsets   {:.4}", l.masked_fraction);
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => {
            if a.dim_feat == 0 || a.offsets == 0 {
                return Err(HacError::Usage("--dim-feat and --offsets must be at least 1".into()));
            }
            if !(0.0..=1.0).contains(&a.smoothness) {
                return Err(HacError::Usage("--smoothness must lie in [0, 1]".into()));
            }
            sceneio::save(&a.out, &synth_scene(a.seed, a.anchors, a.dim_feat, a.offsets, a.smoothness))
        }
        Command::Fit(a) => run_fit(&a),
        Command::Encode(a) => {
            let scene = sceneio::load(&a.scene)?;
            let ck = checkpoint::load(&a.model)?;
            let enc = container::encode(&scene, &ck)?;
            bytes::write_file(&a.out, &enc.bytes)?;
            if a.report {
                println!("{}", Report::from_encoded(&enc));
            }
            Ok(())
        }
        Command::Decode(a) => {
            let blob = bytes::read_file(&a.input)?;
            let dec = container::decode(&blob)?;
            sceneio::save(&a.out, &dec.scene)
        }
        Command::Verify(a) => {
            let scene = sceneio::load(&a.scene)?;
            let ck = checkpoint::load(&a.model)?;
            let (enc, dec) = container::verify(&scene, &ck)?;
            println!("ok: {} bytes, {} of {} anchors decoded bit-exactly", enc.bytes.len(), dec.scene.n, scene.n);
            Ok(())
        }
        Command::Inspect(a) => {
            let blob = bytes::read_file(&a.input)?;
            emit(None, &json(&container::inspect(&blob)?))
        }
        Command::Bitmap(a) => {
            let scene = sceneio::load(&a.scene)?;
            let ck = checkpoint::load(&a.model)?;
            let map = bit_allocation_map(&scene, &ck, a.voxels)?;
            let text = if a.json {
                json(&map.records)
            } else {
                let mut s = String::from(VoxelRecord::CSV_HEADER);
                s.push('\n');
                for r in &map.records {
                    s.push_str(&r.csv());
                    s.push('\n');
                }
                s
            };
            emit(a.out.as_deref(), &text)
        }
        Command::Report(a) => {
            let blob = bytes::read_file(&a.input)?;
            let r = Report::from_bytes(&blob)?;
            if a.json {
                emit(None, &json(&r))
            } else {
                emit(None, &format!("{r}\n"))
            }
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("hac: {e}");
            e.exit_code()
        }
    }
}
