//! Command-line front end: `mm2d3d <generate|train|adapt|pseudolabel|evaluate|erf>`.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::erf::{compute_erf, export_erf};
use crate::error::{Error, Result};
use crate::nets::Model;
use crate::scene::{self, Dataset, SceneSpec};
use crate::train::{evaluate, generate_pseudo_labels, train, PseudoLabelSet, PseudoSource, TrainConfig, UdaSection};

/// File name used when a dataset path names a directory.
pub const DATASET_FILE: &str = "dataset.mm23";
pub const CHECKPOINT_FILE: &str = "model.mmck";
pub const METRICS_FILE: &str = "metrics.jsonl";

#[derive(Debug, Parser)]
#[command(name = "mm2d3d", version, about = "2D/3D point segmentation with cross-modal adaptation")]
struct Cli {
    /// Worker threads; 1 is fully deterministic.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic dataset from a scene spec (TOML).
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
    },
    /// Source-only training (the `[uda]` section is ignored).
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-modal adaptation with target data, optionally with pseudo-labels.
    Adapt {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        pseudo: Option<PathBuf>,
    },
    /// Confidence-filtered pseudo-labels for a target dataset.
    Pseudolabel {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value_t = 0.66)]
        keep: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = SourceArg::Branch)]
        source: SourceArg,
    },
    /// Per-class IoU and mIoU of every prediction stream.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Effective receptive fields of both branches at one point.
    Erf {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        sample: usize,
        #[arg(long)]
        point: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum SourceArg {
    Branch,
    Fused,
}

/// Resolves a dataset path: a file, or a directory holding [`DATASET_FILE`].
pub fn dataset_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(DATASET_FILE)
    } else {
        path.to_path_buf()
    }
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    scene::load(dataset_path(path))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    crate::codec::Writer { buf: bytes.to_vec() }.write_to(path)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn run_training(cfg: TrainConfig, out: &Path, stdout: &mut dyn Write) -> Result<()> {
    let source = load_dataset(&cfg.data.source)?;
    let target = cfg.data.target.as_deref().map(load_dataset).transpose()?;
    let pseudo = match cfg.uda.as_ref().and_then(|u| u.pseudo.as_ref()) {
        Some(p) => Some(PseudoLabelSet::load(p)?),
        None => None,
    };
    let metrics = out.join(METRICS_FILE);
    let mut log = create(&metrics)?;
    let train_target = if cfg.uda.is_some() { target.as_ref() } else { None };
    let outcome = train(&cfg, &source, train_target, pseudo.as_ref(), &mut log)?;
    log.flush().map_err(|e| Error::io(&metrics, e))?;
    outcome.model.save(out.join(CHECKPOINT_FILE))?;
    write_file(&out.join("config.toml"), cfg.to_toml().as_bytes())?;
    let report = match (outcome.target_report, &target) {
        (Some(r), _) => Some(r),
        (None, Some(t)) if t.samples.iter().any(|s| s.labels().is_some()) => Some(evaluate(&outcome.model, t)?),
        _ => None,
    };
    if let Some(r) = report {
        let table = r.to_table();
        write_file(&out.join("target_report.txt"), table.as_bytes())?;
        let _ = write!(stdout, "{table}");
    }
    Ok(())
}

fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    if cli.threads == 0 {
        return Err(Error::usage("--threads must be at least 1"));
    }
    match cli.command {
        Command::Generate { spec, out, count } => {
            let text = std::fs::read_to_string(&spec).map_err(|e| Error::io(&spec, e))?;
            let spec: SceneSpec = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", spec.display())))?;
            if count == 0 {
                return Err(Error::usage("--count must be positive"));
            }
            let ds = scene::generate(&spec, count)?;
            let path = out.join(DATASET_FILE);
            scene::save(&ds, &path)?;
            let points: usize = ds.samples.iter().map(|s| s.num_points()).sum();
            let _ = writeln!(stdout, "wrote {count} samples ({points} points) to {}", path.display());
        }
        Command::Train { config, out } => {
            let mut cfg = TrainConfig::load(&config)?;
            cfg.uda = None;
            run_training(cfg, &out, stdout)?;
        }
        Command::Adapt { config, out, pseudo } => {
            let mut cfg = TrainConfig::load(&config)?;
            let uda = cfg.uda.get_or_insert_with(UdaSection::default);
            if pseudo.is_some() {
                uda.pseudo = pseudo;
            }
            if cfg.data.target.is_none() {
                return Err(Error::Config("adapt needs data.target".into()));
            }
            run_training(cfg, &out, stdout)?;
        }
        Command::Pseudolabel {
            checkpoint,
            target,
            keep,
            out,
            source,
        } => {
            let model = Model::load(&checkpoint)?;
            let ds = load_dataset(&target)?;
            let source = match source {
                SourceArg::Branch => PseudoSource::Branch,
                SourceArg::Fused => PseudoSource::Fused,
            };
            let set = generate_pseudo_labels(&model, &ds, keep, source)?;
            set.save(&out)?;
            let kept = set.samples.iter().flat_map(|s| &s.labels_3d).filter(|&&l| l >= 0).count();
            let total: usize = set.samples.iter().map(|s| s.labels_3d.len()).sum();
            let _ = writeln!(stdout, "kept {kept} of {total} 3D labels; wrote {}", out.display());
        }
        Command::Evaluate { checkpoint, data, report } => {
            let model = Model::load(&checkpoint)?;
            let ds = load_dataset(&data)?;
            let r = evaluate(&model, &ds)?;
            let table = r.to_table();
            write_file(&report, table.as_bytes())?;
            let _ = write!(stdout, "{table}");
        }
        Command::Erf {
            checkpoint,
            data,
            sample,
            point,
            out,
        } => {
            let model = Model::load(&checkpoint)?;
            let ds = load_dataset(&data)?;
            let s = ds
                .samples
                .get(sample)
                .ok_or_else(|| Error::usage(format!("sample {sample} out of range for {} samples", ds.len())))?;
            let r = compute_erf(&model, s, point)?;
            let files = export_erf(&r, &out)?;
            let (l2, l3) = r.locality_at(2.0);
            let _ = writeln!(stdout, "locality at 2 m: 2D {l2:.4}, 3D {l3:.4}");
            let _ = writeln!(stdout, "wrote {}, {}, {}", files.ply.display(), files.heatmap.display(), files.locality.display());
        }
    }
    Ok(())
}

/// Runs the CLI on `args` (including the program name) and returns the
/// process exit code. Errors go to standard error prefixed with `mm2d3d:`.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprint!("mm2d3d: {e}");
            return 1;
        }
    };
    match execute(cli, &mut std::io::stdout()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("mm2d3d: {e}");
            e.exit_code()
        }
    }
}
