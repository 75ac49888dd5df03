use std::fs;

use egoscene::depth::{depth_metrics_in, inpaint_depth, mask_depth};
use egoscene::metrics::{contact_rate, penetration_free_rate, CONTACT_THRESHOLD, PENETRATION_MARGIN};
use egoscene::synth::{generate_dataset, DatasetSpec, Manifest, MANIFEST_FILE};
use egoscene::depth::depth_to_pointcloud;

fn spec(seed: u64) -> DatasetSpec {
    DatasetSpec { seed, frames: 6, image_size: 128, ..Default::default() }
}

#[test]
fn manifest_lists_existing_files() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_dataset(&DatasetSpec { frames: 3, ..spec(1) }, dir.path()).unwrap();
    assert_eq!(manifest.frames.len(), 3);
    assert_eq!(Manifest::read(dir.path().join(MANIFEST_FILE)).unwrap(), manifest);
    assert!(dir.path().join(&manifest.calibration).exists());
    for f in &manifest.frames {
        for rel in [&f.depth_body, &f.depth_scene, &f.depth_body_pgm, &f.depth_scene_pgm, &f.mask, &f.pose, &f.scene] {
            assert!(dir.path().join(rel).is_file(), "{rel}");
        }
    }
}

#[test]
fn regeneration_is_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = generate_dataset(&spec(9), a.path()).unwrap();
    generate_dataset(&spec(9), b.path()).unwrap();
    let read = |root: &std::path::Path, rel: &str| fs::read(root.join(rel)).unwrap();
    assert_eq!(read(a.path(), MANIFEST_FILE), read(b.path(), MANIFEST_FILE));
    for f in &ma.frames {
        for rel in [&f.depth_body, &f.depth_scene, &f.mask, &f.pose, &f.scene] {
            assert_eq!(read(a.path(), rel), read(b.path(), rel), "{rel}");
        }
    }
}

#[test]
fn frames_satisfy_depth_mask_and_contact_invariants() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_dataset(&spec(4), dir.path()).unwrap();
    let model = manifest.load_calibration(dir.path()).unwrap();
    for entry in &manifest.frames {
        let frame = manifest.load_frame(dir.path(), entry).unwrap();
        assert!(frame.mask.count() > 0, "{}: body not visible", entry.id);
        for i in 0..frame.mask.raw().len() {
            let (b, s) = (frame.depth_body.get_flat(i), frame.depth_scene.get_flat(i));
            if let (Some(b), Some(s)) = (b, s) {
                assert!(b <= s);
            }
            let body_nearer = match (b, s) {
                (Some(b), Some(s)) => b < s,
                (Some(_), None) => true,
                _ => false,
            };
            assert_eq!(frame.mask.get_flat(i), body_nearer);
        }

        let cloud = depth_to_pointcloud(&model, &frame.depth_scene);
        let rate = contact_rate(std::slice::from_ref(&frame.pose), &cloud, CONTACT_THRESHOLD).unwrap();
        assert_eq!(rate, 1.0, "{} ({:?}) not in contact", entry.id, entry.kind);
        let pen = penetration_free_rate(std::slice::from_ref(&frame.pose), &frame.depth_scene, &model, PENETRATION_MARGIN).unwrap();
        assert_eq!(pen.rate, 1.0, "{}: {pen:?}", entry.id);
    }
}

#[test]
fn inpainting_fills_the_body_region_from_the_background() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_dataset(&spec(5), dir.path()).unwrap();
    for entry in &manifest.frames {
        let frame = manifest.load_frame(dir.path(), entry).unwrap();
        let masked = mask_depth(&frame.depth_body, &frame.mask).unwrap();
        let filled = inpaint_depth(&masked, &frame.mask).unwrap();
        let inside = depth_metrics_in(&filled, &frame.depth_scene, Some(&frame.mask)).unwrap();
        let untouched = depth_metrics_in(&frame.depth_body, &frame.depth_scene, Some(&frame.mask)).unwrap();
        assert_eq!(inside.pixels, untouched.pixels);
        assert!(inside.abs_rel < untouched.abs_rel, "{}: {inside:?} vs {untouched:?}", entry.id);

        let (lo, hi) = masked
            .raw()
            .iter()
            .filter(|&&v| v > 0.0)
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let region = frame.mask.dilate(2);
        for i in 0..filled.raw().len() {
            if region.get_flat(i) {
                if let Some(v) = filled.get_flat(i) {
                    assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
                }
            } else {
                assert_eq!(filled.get_flat(i), masked.get_flat(i));
            }
        }
    }
}
