use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use super::{MovingSpriteSpec, VideoSequence};
use crate::{Error, Result};

/// `frame_00001.png` style name for 1-based `index`.
pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:05}.png")
}

fn parse_frame_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix("frame_")?.strip_suffix(".png")?;
    (digits.len() == 5 && digits.bytes().all(|b| b.is_ascii_digit()))
        .then(|| digits.parse().ok())
        .flatten()
}

/// Loads `frame_%05d.png` files (1-based, contiguous) as one sequence.
///
/// Grayscale images keep one channel; anything else is decoded as RGB.
pub fn load_frame_dir(path: &Path) -> Result<VideoSequence> {
    let mut indexed: Vec<(usize, PathBuf)> = std::fs::read_dir(path)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            parse_frame_index(&name).map(|i| (i, e.path()))
        })
        .collect();
    if indexed.is_empty() {
        return Err(Error::MissingFrame(format!(
            "no frame_%05d.png files in {}",
            path.display()
        )));
    }
    indexed.sort();
    for (expected, (index, _)) in (1..).zip(&indexed) {
        if *index != expected {
            return Err(Error::MissingFrame(format!(
                "{} missing in {}",
                frame_file_name(expected),
                path.display()
            )));
        }
    }
    let mut frames = Vec::with_capacity(indexed.len());
    let mut dims: Option<[usize; 3]> = None;
    for (_, file) in &indexed {
        let img = image::open(file)?;
        let (pixels, c) = if img.color().has_color() {
            (to_unit(img.to_rgb8().into_raw()), 3)
        } else {
            (to_unit(img.to_luma8().into_raw()), 1)
        };
        let d = [img.height() as usize, img.width() as usize, c];
        match dims {
            None => dims = Some(d),
            Some(prev) if prev != d => {
                return Err(Error::ShapeMismatch(format!(
                    "{} is {:?}, earlier frames are {:?} (H, W, C)",
                    file.display(),
                    d,
                    prev
                )))
            }
            Some(_) => {}
        }
        frames.push(pixels);
    }
    let id = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    VideoSequence::from_frames(id, &frames, dims.expect("at least one frame"))
}

fn to_unit(bytes: Vec<u8>) -> Vec<f64> {
    bytes.into_iter().map(|b| b as f64 / 255.0).collect()
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn frame_image(seq: &VideoSequence, t: usize) -> DynamicImage {
    let (h, w) = (seq.height() as u32, seq.width() as u32);
    let bytes: Vec<u8> = seq.frame(t).iter().map(|&v| to_byte(v)).collect();
    if seq.channels() == 1 {
        DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, bytes).expect("frame size"))
    } else {
        DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, bytes).expect("frame size"))
    }
}

/// Writes every frame as an 8-bit PNG named `frame_%05d.png`, 1-based.
pub fn save_frame_dir(seq: &VideoSequence, path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)?;
    for t in 0..seq.len() {
        frame_image(seq, t).save(path.join(frame_file_name(t + 1)))?;
    }
    Ok(())
}

/// Writes an animated GIF of the sequence, `delay_ms` per frame.
pub fn save_gif(seq: &VideoSequence, path: &Path, delay_ms: u32) -> Result<()> {
    use image::codecs::gif::{GifEncoder, Repeat};
    use image::{Delay, Frame};
    let file = std::fs::File::create(path)?;
    let mut enc = GifEncoder::new(file);
    enc.set_repeat(Repeat::Infinite)?;
    for t in 0..seq.len() {
        let rgba = frame_image(seq, t).to_rgba8();
        enc.encode_frame(Frame::from_parts(
            rgba,
            0,
            0,
            Delay::from_numer_denom_ms(delay_ms, 1),
        ))?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub length: usize,
}

/// `manifest.json` of an exported dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<MovingSpriteSpec>,
    pub sequences: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes each sequence to `<root>/<id>/frame_%05d.png` plus a manifest.
pub fn export_dataset(
    root: &Path,
    seqs: &[VideoSequence],
    spec: Option<&MovingSpriteSpec>,
) -> Result<Manifest> {
    std::fs::create_dir_all(root)?;
    let mut entries = Vec::with_capacity(seqs.len());
    for s in seqs {
        save_frame_dir(s, &root.join(s.id()))?;
        entries.push(ManifestEntry {
            id: s.id().to_string(),
            length: s.len(),
        });
    }
    let manifest = Manifest {
        spec: spec.cloned(),
        sequences: entries,
    };
    std::fs::write(
        root.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

/// Loads a dataset directory.
///
/// With a manifest, its entries are loaded in order; otherwise every
/// subdirectory holding frames is a sequence, or the directory itself is one.
pub fn load_dataset(root: &Path) -> Result<Vec<VideoSequence>> {
    let manifest_path = root.join(MANIFEST_FILE);
    if manifest_path.exists() {
        let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(manifest_path)?)?;
        return manifest
            .sequences
            .iter()
            .map(|e| {
                let seq = load_frame_dir(&root.join(&e.id))?;
                if seq.len() != e.length {
                    return Err(Error::MissingFrame(format!(
                        "{} has {} frames, manifest says {}",
                        e.id,
                        seq.len(),
                        e.length
                    )));
                }
                Ok(seq.with_id(e.id.clone()))
            })
            .collect();
    }
    if !root.is_dir() {
        return Err(Error::Empty(format!("{} is not a directory", root.display())));
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Ok(vec![load_frame_dir(root)?]);
    }
    dirs.iter().map(|d| load_frame_dir(d)).collect()
}
