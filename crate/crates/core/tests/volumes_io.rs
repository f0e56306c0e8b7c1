mod common;

use proptest::prelude::*;
use voxgen::volumes::{
    read_nifti, read_nifti_bytes, tensor_to_volume, volume_to_tensor, write_nifti,
    write_nifti_bytes, Volume3,
};
use voxgen::Error;

fn seeded_volume(extents: [usize; 3], seed: u64) -> Volume3 {
    let n = extents.iter().product();
    let data = common::uniform(&[n], -5.0, 5.0, seed).into_data();
    let affine = [
        [0.5, 0.25, 0.0, -10.0],
        [0.0, 1.5, 0.125, 4.0],
        [0.0, 0.0, 2.0, 7.5],
        [0.0, 0.0, 0.0, 1.0],
    ];
    Volume3::new(extents, [0.5, 1.5, 2.0], affine, data).unwrap()
}

/// NIfTI-1 header assembled field by field from the published layout.
fn fixture() -> Vec<u8> {
    let mut b = vec![0u8; 352];
    b[0..4].copy_from_slice(&348i32.to_le_bytes());
    for (i, d) in [3i16, 2, 2, 2, 1, 1, 1, 1].iter().enumerate() {
        b[40 + 2 * i..42 + 2 * i].copy_from_slice(&d.to_le_bytes());
    }
    b[70..72].copy_from_slice(&16i16.to_le_bytes());
    b[72..74].copy_from_slice(&32i16.to_le_bytes());
    for i in 0..4 {
        b[76 + 4 * i..80 + 4 * i].copy_from_slice(&1.0f32.to_le_bytes());
    }
    b[108..112].copy_from_slice(&352.0f32.to_le_bytes());
    b[344..348].copy_from_slice(b"n+1\0");
    for v in 0..8 {
        b.extend_from_slice(&(v as f32).to_le_bytes());
    }
    b
}

#[test]
fn hand_assembled_fixture_parses() {
    let v = read_nifti_bytes(&fixture()).unwrap();
    assert_eq!(v.extents(), [2, 2, 2]);
    assert_eq!(v.spacing(), [1.0; 3]);
    assert_eq!(v.get(1, 0, 0), 1.0);
    assert_eq!(v.get(0, 1, 0), 2.0);
    assert_eq!(v.get(0, 0, 1), 4.0);
    assert_eq!(v.affine()[0], [1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn written_header_layout() {
    let v = seeded_volume([3, 4, 5], 1);
    let b = write_nifti_bytes(&v).unwrap();
    assert_eq!(&b[0..4], &348u32.to_le_bytes());
    assert_eq!(&b[344..348], b"n+1\0");
    assert_eq!(i16::from_le_bytes([b[70], b[71]]), 16);
    assert_eq!(i16::from_le_bytes([b[254], b[255]]), 1);
    assert_eq!(f32::from_le_bytes(b[108..112].try_into().unwrap()), 352.0);
    assert_eq!(b.len(), 352 + 60 * 4);
    assert_eq!(f32::from_le_bytes(b[280..284].try_into().unwrap()), 0.5);
    assert_eq!(b, write_nifti_bytes(&v).unwrap());
}

#[test]
fn file_roundtrip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.nii");
    let v = seeded_volume([3, 4, 5], 2);
    write_nifti(&v, &path).unwrap();
    let back = read_nifti(&path).unwrap();
    assert_eq!(back, v);
    assert!(back
        .data()
        .iter()
        .zip(v.data())
        .all(|(a, b)| a.to_bits() == b.to_bits()));
    let missing = read_nifti(&dir.path().join("absent.nii"));
    assert!(matches!(missing, Err(Error::Io { .. })));
}

#[test]
fn malformed_headers_are_rejected() {
    let good = fixture();
    let edit = |off: usize, bytes: &[u8]| {
        let mut b = good.clone();
        b[off..off + bytes.len()].copy_from_slice(bytes);
        read_nifti_bytes(&b)
    };
    assert!(matches!(edit(344, b"ni1\0"), Err(Error::Format { offset: 344, .. })));
    assert!(matches!(edit(40, &4i16.to_le_bytes()), Err(Error::Format { offset: 40, .. })));
    assert!(matches!(edit(70, &2i16.to_le_bytes()), Err(Error::Format { offset: 70, .. })));
    assert!(matches!(edit(0, &[0, 0, 1, 0x5c]), Err(Error::Format { offset: 0, .. })));
    assert!(matches!(edit(80, &(-1.0f32).to_le_bytes()), Err(Error::Format { .. })));
}

#[test]
fn every_truncation_is_a_format_error() {
    let bytes = write_nifti_bytes(&seeded_volume([2, 3, 2], 3)).unwrap();
    for len in 0..bytes.len() {
        match read_nifti_bytes(&bytes[..len]) {
            Err(Error::Format { offset, .. }) => assert!(offset <= len),
            other => panic!("prefix {len}: {other:?}"),
        }
    }
    assert!(read_nifti_bytes(&bytes).is_ok());
}

#[test]
fn tensor_layout_follows_index_formula() {
    let v = seeded_volume([3, 4, 5], 4);
    let t = volume_to_tensor(&v);
    assert_eq!(t.shape(), &[1, 1, 5, 4, 3]);
    for z in 0..5 {
        for y in 0..4 {
            for x in 0..3 {
                let flat = ((z * 4) + y) * 3 + x;
                assert_eq!(t.data()[flat].to_bits(), v.get(x, y, z).to_bits());
            }
        }
    }
    let unit = Volume3::with_spacing([2, 2, 2], [1.0; 3], (0..8).map(|i| i as f32).collect()).unwrap();
    assert_eq!(volume_to_tensor(&unit).data()[1], unit.get(1, 0, 0));
    assert_eq!(tensor_to_volume(&t, &v).unwrap(), v);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn nifti_roundtrip(nx in 1usize..6, ny in 1usize..6, nz in 1usize..6, seed in any::<u64>()) {
        let v = seeded_volume([nx, ny, nz], seed);
        let back = read_nifti_bytes(&write_nifti_bytes(&v).unwrap()).unwrap();
        prop_assert_eq!(back, v);
    }
}
