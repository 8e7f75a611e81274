//! Dataset directory layout: `NNNNN_img1.png`, `NNNNN_img2.png`,
//! `NNNNN_flow.flo`, an optional `NNNNN_valid.png` mask, and `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{read_flo, write_flo, GenConfig, RgbImage, SamplePair};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub generator: GenConfig,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct SampleFiles {
    pub img1: PathBuf,
    pub img2: PathBuf,
    pub flow: PathBuf,
    pub valid: PathBuf,
}

impl SampleFiles {
    pub fn new(dir: &Path, index: usize) -> Self {
        let stem = format!("{index:05}");
        Self {
            img1: dir.join(format!("{stem}_img1.png")),
            img2: dir.join(format!("{stem}_img2.png")),
            flow: dir.join(format!("{stem}_flow.flo")),
            valid: dir.join(format!("{stem}_valid.png")),
        }
    }
}

fn write_mask(path: &Path, h: usize, w: usize, mask: &[bool]) -> Result<()> {
    let img = image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([if mask[y as usize * w + x as usize] { 255 } else { 0 }])
    });
    img.save(path)?;
    Ok(())
}

pub fn write_dataset(dir: &Path, manifest: &DatasetManifest, samples: &[SamplePair]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, s) in samples.iter().enumerate() {
        let files = SampleFiles::new(dir, i);
        s.frame1.save_png(&files.img1)?;
        s.frame2.save_png(&files.img2)?;
        fs::write(&files.flow, write_flo(&s.gt))?;
        if let Some(mask) = &s.gt.mask {
            write_mask(&files.valid, s.gt.h, s.gt.w, mask)?;
        }
    }
    fs::write(dir.join(MANIFEST_NAME), serde_json::to_vec_pretty(manifest)?)?;
    Ok(())
}

pub fn read_sample(files: &SampleFiles) -> Result<SamplePair> {
    let frame1 = RgbImage::load_png(&files.img1)?;
    let frame2 = RgbImage::load_png(&files.img2)?;
    let mut gt = read_flo(&fs::read(&files.flow)?)?;
    if (frame1.h, frame1.w) != (frame2.h, frame2.w) || (frame1.h, frame1.w) != (gt.h, gt.w) {
        return Err(Error::Input(format!(
            "sample {} has mismatched frame/flow sizes",
            files.flow.display()
        )));
    }
    if files.valid.exists() {
        let m = image::open(&files.valid)?.to_luma8();
        if (m.height() as usize, m.width() as usize) != (gt.h, gt.w) {
            return Err(Error::Input(format!("mask {} has the wrong size", files.valid.display())));
        }
        let from_file = m.pixels().map(|p| p[0] >= 128);
        let combined = match gt.mask.take() {
            Some(old) => old.into_iter().zip(from_file).map(|(a, b)| a && b).collect(),
            None => from_file.collect(),
        };
        gt.mask = Some(combined);
    }
    Ok(SamplePair { frame1, frame2, gt, meta: Vec::new() })
}

/// Loads every `NNNNN_flow.flo` sample in `dir`, ordered by index.
pub fn read_dataset(dir: &Path) -> Result<Vec<SamplePair>> {
    if !dir.is_dir() {
        return Err(Error::Input(format!("dataset directory {} not found", dir.display())));
    }
    let mut indices = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        if let Some(stem) = name.strip_suffix("_flow.flo") {
            if let Ok(i) = stem.parse::<usize>() {
                indices.push(i);
            }
        }
    }
    if indices.is_empty() {
        return Err(Error::Input(format!("no samples in {}", dir.display())));
    }
    indices.sort_unstable();
    indices.iter().map(|&i| read_sample(&SampleFiles::new(dir, i))).collect()
}
