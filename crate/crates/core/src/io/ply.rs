//! Binary little-endian PLY in the community splat layout for SH degree 0:
//! per vertex x, y, z, f_dc_0..2, opacity (logit), scale_0..2 (log),
//! rot_0..3 (quaternion, w first), all float32.
//!
//! Colors are stored as SH DC coefficients (color = 0.5 + C0·f_dc), so the
//! files open correctly in standard splat viewers.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Vector3, Vector4};

use crate::cloud::GaussianCloud;
use crate::error::{GsError, Result};

const SH_C0: f64 = 0.282_094_791_773_878_14;
const FORMAT_LINE: &str = "format binary_little_endian 1.0";
const PROPERTIES: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
];

pub fn save_cloud(path: &Path, cloud: &GaussianCloud) -> Result<()> {
    cloud.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "ply")?;
    writeln!(w, "{FORMAT_LINE}")?;
    writeln!(w, "element vertex {}", cloud.len())?;
    for p in PROPERTIES {
        writeln!(w, "property float {p}")?;
    }
    writeln!(w, "end_header")?;
    for i in 0..cloud.len() {
        let mut row = [0f32; 14];
        for k in 0..3 {
            row[k] = cloud.positions[i][k] as f32;
            row[3 + k] = ((cloud.colors_dc[i][k] - 0.5) / SH_C0) as f32;
            row[7 + k] = cloud.log_scales[i][k] as f32;
        }
        row[6] = cloud.opacity_logits[i] as f32;
        for k in 0..4 {
            row[10 + k] = cloud.rotations[i][k] as f32;
        }
        for v in row {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_cloud(path: &Path) -> Result<GaussianCloud> {
    let mut r = BufReader::new(File::open(path)?);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;

    let header_end = find_header_end(&bytes)?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| GsError::parse("PLY header is not valid UTF-8"))?;
    let mut lines = header.lines();
    if lines.next() != Some("ply") {
        return Err(GsError::parse("missing `ply` magic"));
    }
    let format = lines
        .next()
        .ok_or_else(|| GsError::parse("missing format line"))?;
    if format != FORMAT_LINE {
        return Err(GsError::UnknownVersion(format.to_string()));
    }
    let mut count: Option<usize> = None;
    let mut props: Vec<String> = Vec::new();
    for line in lines {
        if line.starts_with("comment") {
            continue;
        }
        if line == "end_header" {
            break;
        }
        if let Some(rest) = line.strip_prefix("element vertex ") {
            count = Some(
                rest.trim()
                    .parse()
                    .map_err(|_| GsError::parse(format!("bad vertex count `{rest}`")))?,
            );
        } else if let Some(rest) = line.strip_prefix("property float ") {
            props.push(rest.trim().to_string());
        } else if line.starts_with("element") || line.starts_with("property") {
            return Err(GsError::parse(format!("unsupported PLY declaration `{line}`")));
        } else {
            return Err(GsError::parse(format!("unexpected header line `{line}`")));
        }
    }
    let count = count.ok_or_else(|| GsError::parse("missing `element vertex` declaration"))?;
    if props != PROPERTIES {
        return Err(GsError::parse(format!(
            "unsupported property layout [{}]",
            props.join(", ")
        )));
    }

    let payload = &bytes[header_end..];
    let expected = count * 14 * 4;
    if payload.len() != expected {
        return Err(GsError::TruncatedPayload {
            declared: count,
            actual: payload.len() / (14 * 4),
        });
    }

    let mut cloud = GaussianCloud::with_capacity(count);
    for i in 0..count {
        let mut row = [0f32; 14];
        for (k, v) in row.iter_mut().enumerate() {
            let o = (i * 14 + k) * 4;
            *v = f32::from_le_bytes([payload[o], payload[o + 1], payload[o + 2], payload[o + 3]]);
        }
        cloud.push(
            Vector3::new(row[0] as f64, row[1] as f64, row[2] as f64),
            Vector3::new(row[7] as f64, row[8] as f64, row[9] as f64),
            Vector4::new(row[10] as f64, row[11] as f64, row[12] as f64, row[13] as f64),
            Vector3::new(
                0.5 + SH_C0 * row[3] as f64,
                0.5 + SH_C0 * row[4] as f64,
                0.5 + SH_C0 * row[5] as f64,
            ),
            row[6] as f64,
        );
    }
    Ok(cloud)
}

fn find_header_end(bytes: &[u8]) -> Result<usize> {
    let needle = b"end_header\n";
    bytes
        .windows(needle.len())
        .position(|w| w == needle)
        .map(|p| p + needle.len())
        .ok_or_else(|| GsError::parse("missing `end_header`"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize) -> GaussianCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut cloud = GaussianCloud::with_capacity(n);
        for _ in 0..n {
            cloud.push(
                Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                Vector3::new(rng.gen_range(-4.0..0.0), rng.gen_range(-4.0..0.0), rng.gen_range(-4.0..0.0)),
                Vector4::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.1..1.0)),
                Vector3::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)),
                rng.gen_range(-5.0..5.0),
            );
        }
        cloud
    }

    #[test]
    fn round_trip_within_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cloud.ply");
        let cloud = random_cloud(100);
        save_cloud(&path, &cloud).unwrap();
        let back = load_cloud(&path).unwrap();
        assert_eq!(back.len(), 100);
        for i in 0..100 {
            for k in 0..3 {
                assert!((back.positions[i][k] - cloud.positions[i][k]).abs() <= 1e-6 * cloud.positions[i][k].abs().max(1.0));
                assert!((back.colors_dc[i][k] - cloud.colors_dc[i][k]).abs() <= 1e-6);
                assert!((back.log_scales[i][k] - cloud.log_scales[i][k]).abs() <= 1e-6 * cloud.log_scales[i][k].abs().max(1.0));
            }
            for k in 0..4 {
                assert!((back.rotations[i][k] - cloud.rotations[i][k]).abs() <= 1e-6);
            }
            assert!((back.opacity_logits[i] - cloud.opacity_logits[i]).abs() <= 1e-6 * cloud.opacity_logits[i].abs().max(1.0));
        }
    }

    #[test]
    fn empty_cloud_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.ply");
        save_cloud(&path, &GaussianCloud::empty()).unwrap();
        let back = load_cloud(&path).unwrap();
        assert!(back.is_empty());
    }

    #[test]
    fn count_mismatch_is_truncation_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ply");
        let cloud = random_cloud(10);
        save_cloud(&path, &cloud).unwrap();
        // Chop off the last vertex's bytes.
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 20]).unwrap();
        match load_cloud(&path) {
            Err(GsError::TruncatedPayload { declared: 10, .. }) => {}
            other => panic!("expected TruncatedPayload, got {other:?}"),
        }
    }

    #[test]
    fn unknown_version_and_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v2.ply");
        std::fs::write(&path, b"ply\nformat binary_big_endian 1.0\nend_header\n").unwrap();
        match load_cloud(&path) {
            Err(GsError::UnknownVersion(_)) => {}
            other => panic!("expected UnknownVersion, got {other:?}"),
        }
        std::fs::write(&path, b"poly\nnope\nend_header\n").unwrap();
        assert!(matches!(load_cloud(&path), Err(GsError::Parse { .. })));
    }

    #[test]
    fn files_are_byte_identical_across_saves() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.ply");
        let b = dir.path().join("b.ply");
        let cloud = random_cloud(25);
        save_cloud(&a, &cloud).unwrap();
        save_cloud(&b, &cloud).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }
}
