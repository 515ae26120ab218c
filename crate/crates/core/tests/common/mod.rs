//! Shared fixtures: deterministic on-disk image datasets small enough for
//! CPU training in seconds.

#![allow(dead_code)]

use std::fs;
use std::path::PathBuf;

use derma_core::{LesionClass, SampleRecord, NUM_CLASSES};

pub struct Fixture {
    /// Owns the temp directory for the fixture's lifetime.
    pub dir: tempfile::TempDir,
    pub image_root: PathBuf,
    pub ground_truth: PathBuf,
    pub records: Vec<SampleRecord>,
}

/// Deterministic pixel pattern: each class gets a distinct dominant color
/// (channel values at least 36 apart across classes) with mild texture, so
/// the tiny backbone can separate classes quickly.
pub fn class_pixel(class: LesionClass, k: usize, c: usize, x: u32, y: u32) -> u8 {
    let base = ((class.ordinal() * 3 + c) % 7) * 36 + 20;
    let texture =
        ((x as usize * 7 + y as usize * 11 + k * 29 + c * 3) % 33) as i32 - 16;
    (base as i32 + texture).clamp(0, 255) as u8
}

/// Write `per_class[i]` images per class plus the matching ground-truth
/// table. Image ids are `<CODE>_<k>`.
pub fn image_fixture(per_class: [usize; NUM_CLASSES], side: u32) -> Fixture {
    let dir = tempfile::tempdir().expect("create fixture dir");
    let image_root = dir.path().join("images");
    fs::create_dir_all(&image_root).expect("create image root");

    let mut rows = String::from("image,MEL,NV,BCC,AKIEC,BKL,DF,VASC\n");
    let mut records = Vec::new();
    for class in LesionClass::ALL {
        for k in 0..per_class[class.ordinal()] {
            let image_id = format!("{}_{k}", class.code());
            let path = image_root.join(format!("{image_id}.png"));
            let img = image::RgbImage::from_fn(side, side, |x, y| {
                image::Rgb([
                    class_pixel(class, k, 0, x, y),
                    class_pixel(class, k, 1, x, y),
                    class_pixel(class, k, 2, x, y),
                ])
            });
            img.save(&path).expect("write fixture image");

            rows.push_str(&image_id);
            for ordinal in 0..NUM_CLASSES {
                rows.push_str(if ordinal == class.ordinal() { ",1.0" } else { ",0.0" });
            }
            rows.push('\n');
            records.push(SampleRecord {
                image_id,
                image_path: path,
                label: class,
            });
        }
    }

    let ground_truth = dir.path().join("ground_truth.csv");
    fs::write(&ground_truth, rows).expect("write ground truth");
    Fixture {
        dir,
        image_root,
        ground_truth,
        records,
    }
}

/// Synthetic ground-truth table with the given per-class row counts, no
/// image files. Ids are `ISIC_SYN_<n>`.
pub fn synthetic_ground_truth(counts: [usize; NUM_CLASSES]) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().expect("create dir");
    let mut rows = String::from("image,MEL,NV,BCC,AKIEC,BKL,DF,VASC\n");
    let mut n = 0usize;
    for class in LesionClass::ALL {
        for _ in 0..counts[class.ordinal()] {
            rows.push_str(&format!("ISIC_SYN_{n:07}"));
            for ordinal in 0..NUM_CLASSES {
                rows.push_str(if ordinal == class.ordinal() { ",1.0" } else { ",0.0" });
            }
            rows.push('\n');
            n += 1;
        }
    }
    let path = dir.path().join("synthetic_ground_truth.csv");
    fs::write(&path, rows).expect("write synthetic table");
    (dir, path)
}

/// The published training-set class counts.
pub const OFFICIAL_COUNTS: [usize; NUM_CLASSES] = [1113, 6705, 514, 327, 1099, 115, 142];
