use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::{ssim3d, SsimParams};
use crate::nn::{generator_forward, Mode};
use crate::register::{normalize_intensity, NETWORK_PERCENTILES};
use crate::synthdata::Manifest;
use crate::tensor::Tensor;
use crate::volumes::{read_nifti, volume_to_tensor, Volume3};

use super::{save_checkpoint, train_step, LossRecord, TrainConfig, TrainState};

pub const LOSSES_HEADER: &str = "step,d_loss,g_gan,g_l1,g_total,ssim";

/// One training example, both volumes `[1, 1, S, S, S]` in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub us: Tensor,
    pub mri: Tensor,
}

#[derive(Debug)]
pub struct RunSummary {
    pub records: Vec<LossRecord>,
    pub state: TrainState,
    pub final_checkpoint: PathBuf,
}

/// Network-range tensor of a volume: percentile normalization to
/// `[-1, 1]` with [`NETWORK_PERCENTILES`].
pub fn prepare_volume(vol: &Volume3) -> Result<Tensor> {
    let (lo, hi) = NETWORK_PERCENTILES;
    Ok(volume_to_tensor(&normalize_intensity(vol, lo, hi)?))
}

/// Reads every pair listed in `dir/manifest.json` as `(train, held_out)`.
pub fn load_dataset(dir: &Path) -> Result<(Vec<Pair>, Vec<Pair>)> {
    let manifest = Manifest::read(dir)?;
    let load = |entries: &[crate::synthdata::ManifestEntry]| -> Result<Vec<Pair>> {
        entries
            .iter()
            .map(|e| {
                Ok(Pair {
                    us: prepare_volume(&read_nifti(&dir.join(&e.us))?)?,
                    mri: prepare_volume(&read_nifti(&dir.join(&e.mri))?)?,
                })
            })
            .collect()
    };
    Ok((load(&manifest.train)?, load(&manifest.held_out)?))
}

/// Concatenates `[1, ...]` tensors along the batch axis.
pub fn stack_batch(items: &[&Tensor]) -> Result<Tensor> {
    let first = items
        .first()
        .ok_or_else(|| Error::shape("cannot stack an empty batch"))?;
    if first.rank() == 0 || first.shape()[0] != 1 {
        return Err(Error::shape(format!(
            "batch items need a leading axis of 1, got {:?}",
            first.shape()
        )));
    }
    let mut data = Vec::with_capacity(first.numel() * items.len());
    for t in items {
        if t.shape() != first.shape() {
            return Err(Error::shape(format!(
                "batch items differ in shape: {:?} vs {:?}",
                t.shape(),
                first.shape()
            )));
        }
        data.extend_from_slice(t.data());
    }
    let mut shape = first.shape().to_vec();
    shape[0] = items.len();
    Tensor::new(shape, data)
}

/// Maps `[-1, 1]` to `[0, 1]`.
pub fn to_unit_range(t: &Tensor) -> Tensor {
    t.map(|v| ((v as f64 + 1.0) * 0.5) as f32)
}

/// Windowed SSIM between the generated and the reference MRI of `pair`,
/// both mapped to `[0, 1]`.
pub fn held_out_ssim(state: &TrainState, pair: &Pair, config: &TrainConfig) -> Result<f64> {
    let fake = generator_forward(&state.generator, &pair.us, &config.generator, Mode::Eval)?;
    ssim3d(
        &to_unit_range(&fake),
        &to_unit_range(&pair.mri),
        &SsimParams::default(),
    )
}

/// `%#.6g`: six significant digits with trailing zeros kept.
pub fn format_sig6(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    if v == 0.0 {
        return "0.00000".into();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        format!("{v:.*}", (5 - exp) as usize)
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    }
}

fn csv_row(r: &LossRecord) -> String {
    let ssim = r.ssim.map(format_sig6).unwrap_or_default();
    format!(
        "{},{},{},{},{},{}\n",
        r.step,
        format_sig6(r.d_loss),
        format_sig6(r.g_gan),
        format_sig6(r.g_l1),
        format_sig6(r.g_total),
        ssim
    )
}

fn check_pairs(pairs: &[Pair], side: usize, what: &str) -> Result<()> {
    let want = [1, 1, side, side, side];
    for (i, p) in pairs.iter().enumerate() {
        if p.us.shape() != want || p.mri.shape() != want {
            return Err(Error::shape(format!(
                "{what} pair {i}: expected {want:?}, got {:?} and {:?}",
                p.us.shape(),
                p.mri.shape()
            )));
        }
    }
    Ok(())
}

/// Runs `config.steps` alternating updates over seeded shuffles of
/// `train`, writing `losses.csv`, `checkpoint_<step>.bvgc` every
/// checkpoint interval and `checkpoint_final.bvgc` into `out_dir`.
///
/// Every eval interval the SSIM of the first `held_out` pair (see
/// [`held_out_ssim`]) fills the row's `ssim` column.
pub fn train_loop(
    train: &[Pair],
    held_out: &[Pair],
    config: &TrainConfig,
    out_dir: &Path,
) -> Result<RunSummary> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    check_pairs(train, config.side(), "training")?;
    check_pairs(held_out, config.side(), "held-out")?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let csv_path = out_dir.join("losses.csv");
    let file = File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut csv = BufWriter::new(file);
    let io = |e| Error::io(&csv_path, e);
    writeln!(csv, "{LOSSES_HEADER}").map_err(io)?;

    let mut state = TrainState::init(config)?;
    let mut shuffle = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle.set_stream(1);
    let mut order: Vec<usize> = Vec::new();
    let mut records = Vec::with_capacity(config.steps as usize);

    for _ in 0..config.steps {
        let mut us = Vec::with_capacity(config.batch_size);
        let mut mri = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            if order.is_empty() {
                order = (0..train.len()).collect();
                order.shuffle(&mut shuffle);
                order.reverse();
            }
            let i = order.pop().expect("refilled above");
            us.push(&train[i].us);
            mri.push(&train[i].mri);
        }
        let mut record = train_step(&mut state, &stack_batch(&us)?, &stack_batch(&mri)?, config)?;
        let step = record.step;
        if config.eval_interval > 0 && step % config.eval_interval == 0 {
            if let Some(pair) = held_out.first() {
                record.ssim = Some(held_out_ssim(&state, pair, config)?);
            }
        }
        csv.write_all(csv_row(&record).as_bytes()).map_err(io)?;
        if config.checkpoint_interval > 0 && step % config.checkpoint_interval == 0 {
            csv.flush().map_err(io)?;
            save_checkpoint(&state, &out_dir.join(format!("checkpoint_{step}.bvgc")))?;
        }
        records.push(record);
    }
    csv.flush().map_err(io)?;
    let final_checkpoint = out_dir.join("checkpoint_final.bvgc");
    save_checkpoint(&state, &final_checkpoint)?;
    Ok(RunSummary {
        records,
        state,
        final_checkpoint,
    })
}
