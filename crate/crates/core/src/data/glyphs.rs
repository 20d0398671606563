use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Grayscale stamp with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Glyph {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

/// Where sprite stamps come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GlyphSource {
    /// Procedurally rendered digits 0-9 at `size x size` pixels.
    Digits { size: usize },
    /// Every PNG in a directory, loaded in file-name order.
    Directory { path: PathBuf },
}

impl Default for GlyphSource {
    fn default() -> Self {
        Self::Digits { size: 28 }
    }
}

impl GlyphSource {
    pub fn load(&self) -> Result<Vec<Glyph>> {
        match self {
            Self::Digits { size } => {
                if *size < 4 {
                    return Err(Error::InvalidSpec(format!("digit size {size} below 4 px")));
                }
                Ok((0..10).map(|d| render_digit(d, *size)).collect())
            }
            Self::Directory { path } => load_glyph_dir(path),
        }
    }
}

fn load_glyph_dir(path: &Path) -> Result<Vec<Glyph>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidSpec(format!(
            "no PNG glyphs in {}",
            path.display()
        )));
    }
    files
        .iter()
        .map(|f| {
            let img = image::open(f)?.to_luma8();
            Ok(Glyph {
                height: img.height() as usize,
                width: img.width() as usize,
                pixels: img.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
            })
        })
        .collect()
}

type Stroke = Vec<(f64, f64)>;

/// Points along an elliptical arc in unit coordinates (y grows downward).
fn arc(center: (f64, f64), radii: (f64, f64), from_deg: f64, to_deg: f64) -> Stroke {
    let steps = 24;
    (0..=steps)
        .map(|i| {
            let t = (from_deg + (to_deg - from_deg) * i as f64 / steps as f64) * PI / 180.0;
            (center.0 + radii.0 * t.cos(), center.1 - radii.1 * t.sin())
        })
        .collect()
}

fn digit_strokes(digit: usize) -> Vec<Stroke> {
    match digit {
        0 => vec![arc((0.5, 0.5), (0.26, 0.37), 0.0, 360.0)],
        1 => vec![
            vec![(0.36, 0.25), (0.52, 0.12), (0.52, 0.88)],
            vec![(0.36, 0.88), (0.68, 0.88)],
        ],
        2 => {
            let mut s = arc((0.5, 0.33), (0.22, 0.2), 160.0, -25.0);
            s.extend([(0.26, 0.88), (0.76, 0.88)]);
            vec![s]
        }
        3 => vec![
            arc((0.48, 0.31), (0.2, 0.18), 150.0, -90.0),
            arc((0.48, 0.68), (0.22, 0.19), 90.0, -150.0),
        ],
        4 => vec![vec![(0.62, 0.88), (0.62, 0.12), (0.24, 0.64), (0.78, 0.64)]],
        5 => {
            let mut s = vec![(0.72, 0.12), (0.33, 0.12), (0.3, 0.46)];
            s.extend(arc((0.49, 0.65), (0.22, 0.21), 140.0, -150.0));
            vec![s]
        }
        6 => vec![
            arc((0.6, 0.62), (0.32, 0.48), 105.0, 180.0),
            arc((0.5, 0.66), (0.22, 0.21), 0.0, 360.0),
        ],
        7 => vec![vec![(0.25, 0.12), (0.75, 0.12), (0.42, 0.88)]],
        8 => vec![
            arc((0.5, 0.3), (0.18, 0.17), 0.0, 360.0),
            arc((0.5, 0.68), (0.22, 0.2), 0.0, 360.0),
        ],
        9 => vec![
            arc((0.5, 0.34), (0.21, 0.2), 0.0, 360.0),
            vec![(0.71, 0.36), (0.6, 0.88)],
        ],
        _ => unreachable!("digits are 0-9"),
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

/// Anti-aliased stroke rendering of one digit.
pub fn render_digit(digit: usize, size: usize) -> Glyph {
    let strokes: Vec<Stroke> = digit_strokes(digit)
        .into_iter()
        .map(|s| s.into_iter().map(|(x, y)| (x * size as f64, y * size as f64)).collect())
        .collect();
    let half_width = (0.08 * size as f64).max(0.75);
    let mut pixels = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let p = (x as f64 + 0.5, y as f64 + 0.5);
            let d = strokes
                .iter()
                .flat_map(|s| s.windows(2).map(move |w| segment_distance(p, w[0], w[1])))
                .fold(f64::INFINITY, f64::min);
            pixels.push((half_width + 0.5 - d).clamp(0.0, 1.0));
        }
    }
    Glyph {
        height: size,
        width: size,
        pixels,
    }
}
