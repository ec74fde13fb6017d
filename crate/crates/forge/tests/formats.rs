use std::fs;

use forge::io::{read_labels, read_mask, read_scalar, read_vector, read_volume, write_volume, Kind, Volume, VolumeRef};
use forge::nifti::DATA_OFFSET;
use forge::snapshot::{export_snapshot, parse_pgm, pgm_bytes, to_gray};
use forge::Error;
use forge_core::{LabelVolume, Mask3, ScalarField3, Shape3, Spacing3, VectorField3};

const SHAPE: Shape3 = Shape3::new(4, 3, 5);
const SPACING: Spacing3 = Spacing3([1.5, 1.0, 2.25]);

fn ramp() -> ScalarField3 {
    ScalarField3::from_fn(SHAPE, SPACING, |i, j, k| (i * 100 + j * 10 + k) as f64 / 1000.0)
}

fn labels(max: u32) -> LabelVolume {
    let grid = forge_core::volume::Grid::from_fn(SHAPE, SPACING, |i, j, k| if (i + j + k) % 3 == 0 { 0 } else { max - (k as u32) });
    LabelVolume::with_freesurfer_roles(grid)
}

fn f32_round(f: &ScalarField3) -> ScalarField3 {
    f.map(|v| v as f32 as f64)
}

#[test]
fn scalar_round_trips_in_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let field = ramp();
    for name in ["a.nii", "a.raw"] {
        let path = dir.path().join(name);
        write_volume(VolumeRef::Scalar(&field), &path).unwrap();
        let back = read_scalar(&path).unwrap();
        assert_eq!(back, f32_round(&field), "{name}");
        assert_eq!(back.spacing(), SPACING);
    }
}

#[test]
fn labels_round_trip_as_u8_and_i16() {
    let dir = tempfile::tempdir().unwrap();
    for max in [60u32, 2035] {
        let v = labels(max);
        for ext in ["nii", "raw"] {
            let path = dir.path().join(format!("l{max}.{ext}"));
            write_volume(VolumeRef::Label(&v), &path).unwrap();
            let back = read_labels(&path).unwrap();
            assert_eq!(back.data(), v.data(), "{max} {ext}");
            assert_eq!(back.spacing(), SPACING);
        }
    }
    let nii = fs::read(dir.path().join("l60.nii")).unwrap();
    assert_eq!(nii.len(), DATA_OFFSET + SHAPE.len());
    let wide = fs::read(dir.path().join("l2035.nii")).unwrap();
    assert_eq!(wide.len(), DATA_OFFSET + 2 * SHAPE.len());
}

#[test]
fn labels_beyond_int16_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let err = write_volume(VolumeRef::Label(&labels(70_000)), dir.path().join("big.nii")).unwrap_err();
    assert!(matches!(err, Error::Unsupported { .. }), "{err}");
}

#[test]
fn masks_and_vectors_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mask = Mask3::from_fn(SHAPE, SPACING, |i, j, k| (i + 2 * j + k) % 4 == 1);
    let vector = VectorField3::new(ramp(), ramp().scale(-2.0), ramp().map(|v| v * v)).unwrap();
    for ext in ["nii", "raw"] {
        let mpath = dir.path().join(format!("m.{ext}"));
        write_volume(VolumeRef::Mask(&mask), &mpath).unwrap();
        assert_eq!(read_mask(&mpath).unwrap(), mask);

        let vpath = dir.path().join(format!("v.{ext}"));
        write_volume(VolumeRef::Vector(&vector), &vpath).unwrap();
        let back = read_vector(&vpath).unwrap();
        for a in 0..3 {
            assert_eq!(back.component(a), &f32_round(vector.component(a)));
        }
        assert_eq!(read_volume(&vpath).unwrap().kind(), Kind::Vector);
    }
}

#[test]
fn nifti_stores_axis_zero_fastest() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("order.nii");
    let field = ramp();
    write_volume(VolumeRef::Scalar(&field), &path).unwrap();
    let bytes = fs::read(&path).unwrap();
    let value_at = |n: usize| {
        let o = DATA_OFFSET + 4 * n;
        f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as f64
    };
    let [nx, ny, _] = SHAPE.0;
    for (i, j, k) in [(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1), (3, 2, 4)] {
        let file_index = i + nx * (j + ny * k);
        assert_eq!(value_at(file_index), field.get(i, j, k) as f32 as f64);
    }
    // Header dims and pixdim.
    let dim = |n: usize| i16::from_le_bytes(bytes[40 + 2 * n..42 + 2 * n].try_into().unwrap());
    assert_eq!([dim(0), dim(1), dim(2), dim(3)], [3, 4, 3, 5]);
    let pixdim = |n: usize| f32::from_le_bytes(bytes[76 + 4 * n..80 + 4 * n].try_into().unwrap());
    assert_eq!([pixdim(1), pixdim(2), pixdim(3)], [1.5, 1.0, 2.25]);
    assert_eq!(&bytes[344..348], b"n+1\0");
}

#[test]
fn malformed_nifti_headers_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.nii");
    write_volume(VolumeRef::Scalar(&ramp()), &good).unwrap();
    let bytes = fs::read(&good).unwrap();

    let write = |name: &str, data: &[u8]| {
        let p = dir.path().join(name);
        fs::write(&p, data).unwrap();
        p
    };

    let short = write("short.nii", &bytes[..100]);
    assert!(matches!(read_volume(&short), Err(Error::Format { .. })));

    let mut big_endian = bytes.clone();
    big_endian[0..4].copy_from_slice(&348i32.to_be_bytes());
    assert!(matches!(read_volume(write("be.nii", &big_endian)), Err(Error::Unsupported { .. })));

    let mut magic = bytes.clone();
    magic[344..348].copy_from_slice(b"xyz\0");
    assert!(matches!(read_volume(write("magic.nii", &magic)), Err(Error::Format { .. })));

    let mut pair = bytes.clone();
    pair[344..348].copy_from_slice(b"ni1\0");
    assert!(matches!(read_volume(write("pair.nii", &pair)), Err(Error::Unsupported { .. })));

    let mut dtype = bytes.clone();
    dtype[70..72].copy_from_slice(&64i16.to_le_bytes());
    assert!(matches!(read_volume(write("f64.nii", &dtype)), Err(Error::Unsupported { .. })));

    let truncated = write("trunc.nii", &bytes[..bytes.len() - 4]);
    assert!(matches!(read_volume(&truncated), Err(Error::Format { .. })));

    let gz = write("x.nii.gz", &bytes);
    assert!(matches!(read_volume(&gz), Err(Error::Unsupported { .. })));
}

#[test]
fn raw_sidecar_is_strict() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.raw");
    write_volume(VolumeRef::Scalar(&ramp()), &path).unwrap();
    let sidecar = dir.path().join("s.json");
    let text = fs::read_to_string(&sidecar).unwrap();
    assert!(text.contains("LR-PA-IS"));

    fs::write(&sidecar, text.replacen('{', "{\"extra\": 1,", 1)).unwrap();
    assert!(read_volume(&path).is_err());

    fs::write(&sidecar, text.replace("LR-PA-IS", "RL-AP-SI")).unwrap();
    assert!(read_volume(&path).is_err());

    fs::write(&sidecar, &text).unwrap();
    let raw = fs::read(&path).unwrap();
    fs::write(&path, &raw[..raw.len() - 1]).unwrap();
    assert!(matches!(read_volume(&path), Err(Error::Format { .. })));
}

#[test]
fn integer_nifti_reads_as_labels() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("l.nii");
    write_volume(VolumeRef::Label(&labels(50)), &path).unwrap();
    assert!(matches!(read_volume(&path).unwrap(), Volume::Label(_)));
    // Scalars can still be read from label files.
    let s = read_scalar(&path).unwrap();
    assert_eq!(s.max(), 50.0);
}

#[test]
fn pgm_encoding() {
    assert_eq!(to_gray(-1.0), 0);
    assert_eq!(to_gray(0.5), 128);
    assert_eq!(to_gray(2.0), 255);
    assert_eq!(to_gray(f64::NAN), 0);
    let bytes = pgm_bytes(2, 3, &[0.0, 0.25, 0.5, 0.75, 1.0, 1.0]);
    assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
    let (rows, cols, px) = parse_pgm(&bytes).unwrap();
    assert_eq!((rows, cols), (2, 3));
    assert_eq!(px, vec![0, 64, 128, 191, 255, 255]);
    assert!(parse_pgm(b"P2\n1 1\n255\n\0").is_none());
}

#[test]
fn snapshot_writes_three_planes_and_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let field = ScalarField3::from_fn(SHAPE, SPACING, |i, j, k| if (i, j, k) == (2, 1, 2) { 1.0 } else { 0.0 });
    let pgms = export_snapshot(&field, 0, 2.5, dir.path()).unwrap();
    assert_eq!(pgms.len(), 3);
    for p in &pgms {
        let (rows, cols, px) = parse_pgm(&fs::read(p).unwrap()).unwrap();
        assert_eq!(rows * cols, px.len());
        // Every central slice passes through the hot voxel.
        assert_eq!(px.iter().filter(|v| **v == 255).count(), 1, "{}", p.display());
    }
    let names: Vec<String> = pgms.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert!(names.iter().any(|n| n.ends_with("_sagittal.pgm")));
    let stem = names[0].rsplit_once('_').unwrap().0.to_string();
    let raw = read_scalar(dir.path().join(format!("{stem}.raw"))).unwrap();
    assert_eq!(raw, field);
}
