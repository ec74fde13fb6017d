//! Mid-transport diagnostics: central slices of `P` as 8-bit PGM images plus
//! the full field per requested time.

use std::path::{Path, PathBuf};

use forge_core::volume::ScalarField3;

use crate::error::Result;
use crate::io::{write_bytes, write_volume, VolumeRef};

/// The three orthogonal planes, named by the axis each one fixes.
pub const PLANES: [(&str, usize); 3] = [("sagittal", 0), ("coronal", 1), ("axial", 2)];

/// Binary (`P5`) PGM bytes for a row-major `rows x cols` buffer. Values are
/// mapped linearly from `[0, 1]` to `0..=255`, clamping anything outside.
pub fn pgm_bytes(rows: usize, cols: usize, values: &[f64]) -> Vec<u8> {
    assert_eq!(values.len(), rows * cols, "slice buffer does not match its dimensions");
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(values.iter().map(|v| to_gray(*v)));
    out
}

/// The 8-bit level used for a probability value.
pub fn to_gray(v: f64) -> u8 {
    if v.is_nan() {
        0
    } else {
        (v.clamp(0.0, 1.0) * 255.0).round() as u8
    }
}

/// Parses a `P5` image written by [`pgm_bytes`] into `(rows, cols, pixels)`.
pub fn parse_pgm(bytes: &[u8]) -> Option<(usize, usize, Vec<u8>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return None;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).ok()?.to_owned());
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return None;
    }
    let cols: usize = fields[1].parse().ok()?;
    let rows: usize = fields[2].parse().ok()?;
    let pixels = bytes.get(pos + 1..)?.to_vec();
    (pixels.len() == rows * cols).then_some((rows, cols, pixels))
}

/// File stem for snapshot `index` taken at time `t`.
pub fn snapshot_stem(index: usize, t: f64) -> String {
    format!("p_{index:03}_t{t:08.3}")
}

/// Writes one time point: three PGM slices and the full field as `<stem>.raw` + `<stem>.json`. Returns the
/// PGM paths in [`PLANES`] order.
pub fn export_snapshot(field: &ScalarField3, index: usize, t: f64, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let stem = snapshot_stem(index, t);
    let mut written = Vec::with_capacity(PLANES.len());
    for (name, axis) in PLANES {
        let (rows, cols, values) = field.central_slice(axis);
        let path = out_dir.join(format!("{stem}_{name}.pgm"));
        write_bytes(&path, &pgm_bytes(rows, cols, &values))?;
        written.push(path);
    }
    write_volume(VolumeRef::Scalar(field), out_dir.join(format!("{stem}.raw")))?;
    Ok(written)
}

/// Exports a whole trajectory given as `(t, P(t))` pairs.
pub fn snapshot_export(trajectory: &[(f64, ScalarField3)], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut all = Vec::new();
    for (i, (t, p)) in trajectory.iter().enumerate() {
        all.extend(export_snapshot(p, i, *t, out_dir)?);
    }
    Ok(all)
}
