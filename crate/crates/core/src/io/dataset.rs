//! Dataset directory layout: `manifest.json` plus per-frame RGBA PNGs,
//! held-out reference renders, and the ground-truth scene as PLY.
//!
//! Loading regenerates the cameras from the stored orbit specs and verifies
//! them against the per-frame values recorded in the manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::data::{
    orbit_cameras, HeldoutFrame, InconsistencySpec, OrbitSpec, PseudoDataset, PseudoFrame,
    SceneSpec,
};
use crate::error::{GsError, Result};

use super::{load_cloud, load_image, save_cloud, save_image};

const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct FrameEntry {
    file: String,
    orbit_id: usize,
    camera: Camera,
}

#[derive(Debug, Serialize, Deserialize)]
struct HeldoutEntry {
    file: String,
    camera: Camera,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    orbits: Vec<OrbitSpec>,
    inconsistency: InconsistencySpec,
    scene_spec: SceneSpec,
    scene_seed: u64,
    heldout_seed: u64,
    /// True when both jitter magnitudes are zero.
    consistent: bool,
    scene_file: String,
    frames: Vec<FrameEntry>,
    heldout: Vec<HeldoutEntry>,
}

pub fn save_dataset(dir: &Path, ds: &PseudoDataset) -> Result<()> {
    fs::create_dir_all(dir.join("frames"))?;
    fs::create_dir_all(dir.join("heldout"))?;

    let mut frames = Vec::with_capacity(ds.frames.len());
    for (i, f) in ds.frames.iter().enumerate() {
        let file = format!("frames/frame_{i:04}.png");
        save_image(&dir.join(&file), &f.image, Some(&f.alpha))?;
        frames.push(FrameEntry {
            file,
            orbit_id: f.orbit_id,
            camera: f.camera,
        });
    }
    let mut heldout = Vec::with_capacity(ds.heldout.len());
    for (i, f) in ds.heldout.iter().enumerate() {
        let file = format!("heldout/heldout_{i:04}.png");
        save_image(&dir.join(&file), &f.reference, None)?;
        heldout.push(HeldoutEntry {
            file,
            camera: f.camera,
        });
    }
    save_cloud(&dir.join("scene.ply"), &ds.scene)?;

    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        orbits: ds.orbits.clone(),
        inconsistency: ds.inconsistency,
        scene_spec: ds.scene_spec.clone(),
        scene_seed: ds.scene_seed,
        heldout_seed: ds.heldout_seed,
        consistent: ds.inconsistency.is_consistent(),
        scene_file: "scene.ply".to_string(),
        frames,
        heldout,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<PseudoDataset> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| GsError::Integrity(format!("cannot read {}: {e}", manifest_path.display())))?;
    // Check the version before strict deserialization so newer schemas get a
    // versioned error instead of a field mismatch.
    let probe: serde_json::Value = serde_json::from_str(&text)?;
    match probe.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == SCHEMA_VERSION as u64 => {}
        Some(v) => return Err(GsError::UnknownVersion(format!("dataset schema {v}"))),
        None => return Err(GsError::parse("manifest missing schema_version")),
    }
    let manifest: Manifest = serde_json::from_str(&text)?;

    // Cameras must regenerate exactly from the orbit formulas.
    let mut regenerated = Vec::new();
    for (orbit_id, orbit) in manifest.orbits.iter().enumerate() {
        for cam in orbit_cameras(orbit) {
            regenerated.push((orbit_id, cam));
        }
    }
    if regenerated.len() != manifest.frames.len() {
        return Err(GsError::Integrity(format!(
            "manifest lists {} frames but the orbit specs generate {}",
            manifest.frames.len(),
            regenerated.len()
        )));
    }
    for (entry, (orbit_id, cam)) in manifest.frames.iter().zip(&regenerated) {
        if entry.orbit_id != *orbit_id || entry.camera != *cam {
            return Err(GsError::Integrity(format!(
                "stored camera for {} does not match its orbit formula",
                entry.file
            )));
        }
    }

    let mut frames = Vec::with_capacity(manifest.frames.len());
    for entry in &manifest.frames {
        let path = dir.join(&entry.file);
        if !path.is_file() {
            return Err(GsError::Integrity(format!("missing frame file {}", entry.file)));
        }
        let (image, alpha) = load_image(&path)?;
        let alpha = alpha
            .ok_or_else(|| GsError::Integrity(format!("frame {} has no alpha channel", entry.file)))?;
        if (image.width as u32, image.height as u32) != (entry.camera.width, entry.camera.height) {
            return Err(GsError::Integrity(format!(
                "frame {} is {}x{} but its camera says {}x{}",
                entry.file, image.width, image.height, entry.camera.width, entry.camera.height
            )));
        }
        frames.push(PseudoFrame {
            camera: entry.camera,
            image,
            alpha,
            orbit_id: entry.orbit_id,
        });
    }

    let mut heldout = Vec::with_capacity(manifest.heldout.len());
    for entry in &manifest.heldout {
        let path = dir.join(&entry.file);
        if !path.is_file() {
            return Err(GsError::Integrity(format!("missing held-out file {}", entry.file)));
        }
        let (reference, _) = load_image(&path)?;
        heldout.push(HeldoutFrame {
            camera: entry.camera,
            reference,
        });
    }

    let scene = load_cloud(&dir.join(&manifest.scene_file))?;

    Ok(PseudoDataset {
        frames,
        heldout,
        scene,
        orbits: manifest.orbits,
        inconsistency: manifest.inconsistency,
        scene_spec: manifest.scene_spec,
        scene_seed: manifest.scene_seed,
        heldout_seed: manifest.heldout_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, DatasetSpec};

    fn tiny_dataset() -> PseudoDataset {
        let mut scene = SceneSpec::sphere_and_box();
        scene.gaussians_per_primitive = 150;
        let mut spec = DatasetSpec::new(
            scene,
            24,
            InconsistencySpec {
                geometry_jitter: 0.01,
                color_jitter: 0.0,
                seed: 9,
            },
        );
        for o in spec.orbits.iter_mut() {
            o.frames_per_orbit = 2;
        }
        spec.heldout_count = 2;
        generate_dataset(&spec).unwrap()
    }

    #[test]
    fn round_trip_preserves_structure_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset();
        save_dataset(dir.path(), &ds).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.frames.len(), ds.frames.len());
        assert_eq!(back.heldout.len(), 2);
        for (a, b) in ds.frames.iter().zip(&back.frames) {
            assert_eq!(a.camera, b.camera);
            assert_eq!(a.orbit_id, b.orbit_id);
            // Images only survive 8-bit quantization.
            for (x, y) in a.image.data.iter().zip(&b.image.data) {
                assert!((x - y).abs() <= 1.0 / 255.0);
            }
        }
        assert_eq!(back.inconsistency, ds.inconsistency);
        assert_eq!(back.scene_seed, ds.scene_seed);
    }

    #[test]
    fn missing_frame_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset();
        save_dataset(dir.path(), &ds).unwrap();
        std::fs::remove_file(dir.path().join("frames/frame_0003.png")).unwrap();
        match load_dataset(dir.path()) {
            Err(GsError::Integrity(msg)) => assert!(msg.contains("frame_0003"), "{msg}"),
            other => panic!("expected integrity error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_schema_version_is_versioned_error() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset();
        save_dataset(dir.path(), &ds).unwrap();
        let manifest = dir.path().join("manifest.json");
        let text = std::fs::read_to_string(&manifest).unwrap();
        std::fs::write(&manifest, text.replace("\"schema_version\": 1", "\"schema_version\": 99")).unwrap();
        match load_dataset(dir.path()) {
            Err(GsError::UnknownVersion(v)) => assert!(v.contains("99")),
            other => panic!("expected UnknownVersion, got {other:?}"),
        }
    }

    #[test]
    fn tampered_camera_fails_verification() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset();
        save_dataset(dir.path(), &ds).unwrap();
        let manifest = dir.path().join("manifest.json");
        let text = std::fs::read_to_string(&manifest).unwrap();
        // Bump one stored azimuth away from its formula value (180.0 is the
        // second frame of each 2-frame orbit).
        let tampered = text.replacen("\"azimuth\": 180.0", "\"azimuth\": 181.0", 1);
        assert_ne!(tampered, text);
        std::fs::write(&manifest, tampered).unwrap();
        match load_dataset(dir.path()) {
            Err(GsError::Integrity(msg)) => assert!(msg.contains("orbit formula"), "{msg}"),
            other => panic!("expected integrity error, got {other:?}"),
        }
    }
}
