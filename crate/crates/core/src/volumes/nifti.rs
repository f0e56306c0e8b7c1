use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::{diagonal_affine, Volume3};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;
const MAGIC: &[u8; 4] = b"n+1\0";
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;

fn i16_at(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}

fn i32_at(b: &[u8], off: usize) -> i32 {
    i32::from_le_bytes(b[off..off + 4].try_into().expect("4 bytes"))
}

fn f32_at(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes(b[off..off + 4].try_into().expect("4 bytes"))
}

/// Parses a little-endian NIfTI-1 single file (`n+1`) holding a 3-D
/// float32 or int16 volume.
pub fn read_nifti_bytes(bytes: &[u8]) -> Result<Volume3> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        return Err(Error::format(
            0,
            "gzip-compressed input; decompress first (e.g. `gunzip file.nii.gz`)",
        ));
    }
    if bytes.len() < HEADER_SIZE {
        return Err(Error::format(
            bytes.len(),
            format!("truncated header: {} of {HEADER_SIZE} bytes", bytes.len()),
        ));
    }
    let sizeof_hdr = i32_at(bytes, 0);
    if sizeof_hdr != HEADER_SIZE as i32 {
        return Err(Error::format(
            0,
            format!("sizeof_hdr is {sizeof_hdr}, expected 348 (little-endian NIfTI-1)"),
        ));
    }
    if &bytes[344..348] != MAGIC {
        return Err(Error::format(
            344,
            format!("magic {:?} is not \"n+1\\0\"", &bytes[344..348]),
        ));
    }
    let dim: Vec<i16> = (0..8).map(|i| i16_at(bytes, 40 + 2 * i)).collect();
    if dim[0] != 3 {
        return Err(Error::format(40, format!("dim[0] is {}, only 3-D volumes are supported", dim[0])));
    }
    if dim[1..4].iter().any(|&d| d < 1) {
        return Err(Error::format(42, format!("non-positive extents {:?}", &dim[1..4])));
    }
    let extents = [dim[1] as usize, dim[2] as usize, dim[3] as usize];

    let datatype = i16_at(bytes, 70);
    let bitpix = i16_at(bytes, 72);
    let width = match (datatype, bitpix) {
        (DT_FLOAT32, 32) => 4,
        (DT_INT16, 16) => 2,
        (DT_FLOAT32 | DT_INT16, _) => {
            return Err(Error::format(72, format!("bitpix {bitpix} inconsistent with datatype {datatype}")))
        }
        _ => {
            return Err(Error::format(
                70,
                format!("unsupported datatype {datatype} (need 16 float32 or 4 int16)"),
            ))
        }
    };

    let spacing = [f32_at(bytes, 80), f32_at(bytes, 84), f32_at(bytes, 88)].map(f64::from);
    if !spacing.iter().all(|&s| s > 0.0 && s.is_finite()) {
        return Err(Error::format(80, format!("pixdim spacing {spacing:?} is not positive")));
    }

    let vox_offset = f32_at(bytes, 108);
    if !(vox_offset >= HEADER_SIZE as f32 && vox_offset.fract() == 0.0) || vox_offset > 1e12 {
        return Err(Error::format(108, format!("invalid vox_offset {vox_offset}")));
    }
    let start = vox_offset as usize;

    let sform_code = i16_at(bytes, 254);
    let affine = if sform_code > 0 {
        let mut a = [[0.0; 4]; 4];
        for (r, row) in a.iter_mut().take(3).enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = f32_at(bytes, 280 + 16 * r + 4 * c) as f64;
            }
        }
        a[3][3] = 1.0;
        a
    } else {
        diagonal_affine(spacing)
    };

    let n: usize = extents.iter().product();
    let end = start + n * width;
    if bytes.len() < end {
        return Err(Error::format(
            bytes.len(),
            format!("truncated payload: need {end} bytes, file has {}", bytes.len()),
        ));
    }
    let payload = &bytes[start..end];
    let data: Vec<f32> = if datatype == DT_FLOAT32 {
        payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect()
    } else {
        let slope = f32_at(bytes, 112) as f64;
        let inter = f32_at(bytes, 116) as f64;
        let slope = if slope == 0.0 || !slope.is_finite() { 1.0 } else { slope };
        let inter = if inter.is_finite() { inter } else { 0.0 };
        payload
            .chunks_exact(2)
            .map(|c| (i16::from_le_bytes([c[0], c[1]]) as f64 * slope + inter) as f32)
            .collect()
    };
    Volume3::new(extents, spacing, affine, data).map_err(|e| Error::format(0, e.to_string()))
}

pub fn read_nifti(path: &Path) -> Result<Volume3> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_nifti_bytes(&bytes).map_err(|e| match e {
        Error::Format { offset, message } => Error::Format {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

/// Float32 NIfTI-1 single file with `sform_code = 1` and voxels from byte
/// 352. Spacing and affine are stored as `f32`.
pub fn write_nifti_bytes(vol: &Volume3) -> Result<Vec<u8>> {
    let mut h = vec![0u8; VOX_OFFSET];
    let put_i16 = |h: &mut [u8], off: usize, v: i16| h[off..off + 2].copy_from_slice(&v.to_le_bytes());
    let put_f32 = |h: &mut [u8], off: usize, v: f32| h[off..off + 4].copy_from_slice(&v.to_le_bytes());

    h[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    let mut dim = [3i16, 1, 1, 1, 1, 1, 1, 1];
    for (i, &e) in vol.extents().iter().enumerate() {
        dim[i + 1] = i16::try_from(e)
            .map_err(|_| Error::config(format!("extent {e} exceeds the NIfTI-1 limit")))?;
    }
    for (i, d) in dim.iter().enumerate() {
        put_i16(&mut h, 40 + 2 * i, *d);
    }
    put_i16(&mut h, 70, DT_FLOAT32);
    put_i16(&mut h, 72, 32);
    put_f32(&mut h, 76, 1.0);
    for (i, s) in vol.spacing().iter().enumerate() {
        put_f32(&mut h, 80 + 4 * i, *s as f32);
    }
    put_f32(&mut h, 108, VOX_OFFSET as f32);
    put_f32(&mut h, 112, 1.0);
    h[123] = 2;
    put_i16(&mut h, 254, 1);
    for (r, row) in vol.affine().iter().take(3).enumerate() {
        for (c, v) in row.iter().enumerate() {
            put_f32(&mut h, 280 + 16 * r + 4 * c, *v as f32);
        }
    }
    h[344..348].copy_from_slice(MAGIC);

    h.reserve(vol.len() * 4);
    for v in vol.data() {
        h.extend_from_slice(&v.to_le_bytes());
    }
    Ok(h)
}

pub fn write_nifti(vol: &Volume3, path: &Path) -> Result<()> {
    let bytes = write_nifti_bytes(vol)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
