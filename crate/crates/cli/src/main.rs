//! `voxgen` command-line entry point.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use voxgen::metrics::{ssim3d, SsimParams};
use voxgen::nn::{generator_forward, GeneratorConfig, Mode};
use voxgen::register::{
    crop, fit_affine, mutual_crop_box, normalize_intensity, read_landmarks, resample_trilinear,
    AffineTransform, Grid, NETWORK_PERCENTILES,
};
use voxgen::synthdata::generate_dataset;
use voxgen::training::{
    format_sig6, load_checkpoint, load_dataset, prepare_volume, to_unit_range, train_loop,
    TrainConfig,
};
use voxgen::volumes::{read_nifti, tensor_to_volume, volume_to_tensor, write_nifti};
use voxgen::Error;

/// Voxels at or below this magnitude count as unsupported when cropping.
const SUPPORT_THRESHOLD: f64 = 1e-6;

#[derive(Parser)]
#[command(name = "voxgen", version, about = "Volumetric US to MRI translation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Align a moving volume onto a fixed one from landmarks, crop both to
    /// their mutual support and normalize intensities.
    Preprocess {
        #[arg(long)]
        moving: PathBuf,
        #[arg(long)]
        fixed: PathBuf,
        #[arg(long)]
        landmarks: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Write a seeded synthetic paired dataset with its manifest.
    MakeSynthetic {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        size: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train a generator/discriminator pair from a JSON run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Translate one volume with a trained checkpoint.
    Synthesize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Print the SSIM between a prediction and a reference volume.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        r#ref: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = matches!(e.downcast_ref::<Error>(), Some(Error::Config(_)));
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Preprocess {
            moving,
            fixed,
            landmarks,
            out_dir,
        } => preprocess(&moving, &fixed, &landmarks, &out_dir),
        Command::MakeSynthetic {
            seed,
            count,
            size,
            out_dir,
        } => {
            create_dir(&out_dir)?;
            let manifest = generate_dataset(seed, count, size, &out_dir)?;
            println!(
                "wrote {} train and {} held-out pairs to {}",
                manifest.train.len(),
                manifest.held_out.len(),
                out_dir.display()
            );
            Ok(())
        }
        Command::Train {
            config,
            data_dir,
            out_dir,
        } => train(&config, &data_dir, &out_dir),
        Command::Synthesize {
            checkpoint,
            input,
            output,
        } => synthesize(&checkpoint, &input, &output),
        Command::Evaluate { pred, r#ref } => {
            let pred = volume_to_tensor(&read_nifti(&pred)?);
            let reference = volume_to_tensor(&read_nifti(&r#ref)?);
            let score = ssim3d(&pred, &reference, &SsimParams::default())?;
            println!("ssim={}", format_sig6(score));
            Ok(())
        }
    }
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn preprocess(moving: &Path, fixed: &Path, landmarks: &Path, out_dir: &Path) -> anyhow::Result<()> {
    let moving = read_nifti(moving)?;
    let fixed = read_nifti(fixed)?;
    let transform = fit_affine(&read_landmarks(landmarks)?)?;
    let aligned = resample_trilinear(&moving, &transform, &Grid::of(&fixed))?;
    let bx = mutual_crop_box(&aligned, &fixed, SUPPORT_THRESHOLD)?;
    let (lo, hi) = NETWORK_PERCENTILES;
    let moving_prep = normalize_intensity(&crop(&aligned, &bx)?, lo, hi)?;
    let fixed_prep = normalize_intensity(&crop(&fixed, &bx)?, lo, hi)?;

    create_dir(out_dir)?;
    write_nifti(&moving_prep, &out_dir.join("moving_prep.nii"))?;
    write_nifti(&fixed_prep, &out_dir.join("fixed_prep.nii"))?;
    let path = out_dir.join("transform.json");
    fs::write(&path, transform_json(&transform))
        .with_context(|| format!("writing {}", path.display()))?;
    println!("cropped to {:?}..{:?}", bx.lower, bx.upper);
    Ok(())
}

fn transform_json(t: &AffineTransform) -> String {
    let row = |r: &[f64; 3]| {
        let cells: Vec<String> = r.iter().map(|v| format!("{v:.9}")).collect();
        format!("[{}]", cells.join(", "))
    };
    let rows: Vec<String> = t.a.iter().map(row).collect();
    format!(
        "{{\n  \"A\": [{}],\n  \"t\": {}\n}}\n",
        rows.join(", "),
        row(&t.t)
    )
}

fn train(config: &Path, data_dir: &Path, out_dir: &Path) -> anyhow::Result<()> {
    let text =
        fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let config: TrainConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", config.display())))?;
    config.validate()?;
    let (train, held_out) = load_dataset(data_dir)?;
    create_dir(out_dir)?;
    let summary = train_loop(&train, &held_out, &config, out_dir)?;
    if let Some(last) = summary.records.last() {
        println!(
            "step {}: d_loss={} g_total={}",
            last.step,
            format_sig6(last.d_loss),
            format_sig6(last.g_total)
        );
    }
    println!("final checkpoint: {}", summary.final_checkpoint.display());
    Ok(())
}

fn synthesize(checkpoint: &Path, input: &Path, output: &Path) -> anyhow::Result<()> {
    let state = load_checkpoint(checkpoint)?;
    let volume = read_nifti(input)?;
    let [nx, ny, nz] = volume.extents();
    if nx != ny || ny != nz {
        return Err(Error::Shape(format!(
            "{}: generator input must be cubic, got {nx}x{ny}x{nz}",
            input.display()
        ))
        .into());
    }
    let config = GeneratorConfig::infer(&state.generator, nx, GeneratorConfig::default().dropout)?;
    let fake = generator_forward(&state.generator, &prepare_volume(&volume)?, &config, Mode::Eval)?;
    write_nifti(&tensor_to_volume(&to_unit_range(&fake), &volume)?, output)?;
    Ok(())
}
