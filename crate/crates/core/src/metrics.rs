//! Frame-quality metrics (MSE, PSNR, SSIM) and report aggregation.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::VideoSequence;
use crate::{Error, Result};

/// PSNR reported when the error is numerically zero.
pub const PSNR_CAP_DB: f64 = 100.0;
const MSE_FLOOR: f64 = 1e-10;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_RANGE: f64 = 1.0;

/// How clip-level numbers are formed from frames.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Score every frame, then average.
    #[default]
    PerFrame,
    /// Score the whole clip as one signal.
    WholeClip,
}

fn squared_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean squared error over every element.
pub fn mse(pred: &VideoSequence, target: &VideoSequence) -> Result<f64> {
    pred.expect_same_shape(target)?;
    Ok(squared_error(pred.data(), target.data()) / pred.data().len() as f64)
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse < MSE_FLOOR {
        PSNR_CAP_DB
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// `10 log10(peak² / mse)` over the whole clip, capped at [`PSNR_CAP_DB`].
pub fn psnr(pred: &VideoSequence, target: &VideoSequence, peak: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(pred, target)?, peak))
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - c;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = taps.iter().sum();
    taps.map(|t| t / total)
}

/// Separable "valid" Gaussian filtering of an `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * plane[y * w + x + k])
                .sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * rows[(y + k) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean SSIM of one single-channel `h x w` plane pair.
fn plane_ssim(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let taps = gaussian_taps();
    let c1 = (SSIM_K1 * SSIM_RANGE).powi(2);
    let c2 = (SSIM_K2 * SSIM_RANGE).powi(2);
    let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let mu_a = filter_valid(a, h, w, &taps);
    let mu_b = filter_valid(b, h, w, &taps);
    let e_aa = filter_valid(&prod(|x, _| x * x), h, w, &taps);
    let e_bb = filter_valid(&prod(|_, y| y * y), h, w, &taps);
    let e_ab = filter_valid(&prod(|x, y| x * y), h, w, &taps);
    let n = mu_a.len();
    (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum::<f64>()
        / n as f64
}

fn channel_plane(frame: &[f64], c: usize, ch: usize) -> Vec<f64> {
    frame.iter().skip(ch).step_by(c).copied().collect()
}

/// SSIM of frame `t`, averaged over windows and channels.
pub fn frame_ssim(pred: &VideoSequence, target: &VideoSequence, t: usize) -> f64 {
    let (h, w, c) = (pred.height(), pred.width(), pred.channels());
    (0..c)
        .map(|ch| {
            plane_ssim(
                &channel_plane(pred.frame(t), c, ch),
                &channel_plane(target.frame(t), c, ch),
                h,
                w,
            )
        })
        .sum::<f64>()
        / c as f64
}

/// Single-scale SSIM (11x11 Gaussian window, sigma 1.5, L = 1) averaged over
/// windows, channels and time.
pub fn ssim(pred: &VideoSequence, target: &VideoSequence) -> Result<f64> {
    pred.expect_same_shape(target)?;
    if pred.height() < SSIM_WINDOW || pred.width() < SSIM_WINDOW {
        return Err(Error::ShapeMismatch(format!(
            "SSIM needs frames of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            pred.height(),
            pred.width()
        )));
    }
    Ok((0..pred.len()).map(|t| frame_ssim(pred, target, t)).sum::<f64>() / pred.len() as f64)
}

/// `(mse, psnr, ssim)` for each predicted timestep.
pub fn per_timestep(pred: &VideoSequence, target: &VideoSequence) -> Result<Vec<[f64; 3]>> {
    ssim(pred, target)?;
    Ok((0..pred.len())
        .map(|t| {
            let m = squared_error(pred.frame(t), target.frame(t)) / pred.frame_len() as f64;
            [m, psnr_from_mse(m, 1.0), frame_ssim(pred, target, t)]
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetrics {
    pub id: String,
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

impl SequenceMetrics {
    /// Scores one clip under `reduction`.
    pub fn compute(
        id: impl Into<String>,
        pred: &VideoSequence,
        target: &VideoSequence,
        reduction: Reduction,
    ) -> Result<Self> {
        let steps = per_timestep(pred, target)?;
        let n = steps.len() as f64;
        let mean = |k: usize| steps.iter().map(|s| s[k]).sum::<f64>() / n;
        let (mse_v, psnr_v) = match reduction {
            Reduction::PerFrame => (mean(0), mean(1)),
            Reduction::WholeClip => {
                let m = mse(pred, target)?;
                (m, psnr_from_mse(m, 1.0))
            }
        };
        Ok(Self {
            id: id.into(),
            mse: mse_v,
            psnr: psnr_v,
            ssim: mean(2),
        })
    }
}

/// Arithmetic means over sequences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mse: f64,
    /// `mse * 1e3`, for tables in the conventional larger unit.
    pub mse_e3: f64,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    /// Task label such as `10 → 10`.
    pub task: String,
    pub per_sequence: Vec<SequenceMetrics>,
    pub aggregate: Aggregate,
}

/// `"10 → 20"` for `(10, 20)`.
pub fn task_label(context_len: usize, horizon: usize) -> String {
    format!("{context_len} → {horizon}")
}

impl MetricsReport {
    pub fn from_rows(
        model: impl Into<String>,
        task: impl Into<String>,
        rows: Vec<SequenceMetrics>,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("no sequences to report".into()));
        }
        let n = rows.len() as f64;
        let mse = rows.iter().map(|r| r.mse).sum::<f64>() / n;
        Ok(Self {
            model: model.into(),
            task: task.into(),
            aggregate: Aggregate {
                mse,
                mse_e3: mse * 1e3,
                psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
                ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
            },
            per_sequence: rows,
        })
    }

    /// Per-sequence CSV: `id,mse,psnr,ssim`, then a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,mse,psnr,ssim\n");
        for r in &self.per_sequence {
            let _ = writeln!(out, "{},{:.9},{:.6},{:.9}", r.id, r.mse, r.psnr, r.ssim);
        }
        let a = &self.aggregate;
        let _ = writeln!(out, "mean,{:.9},{:.6},{:.9}", a.mse, a.psnr, a.ssim);
        out
    }

    pub fn to_table(&self) -> String {
        render_table(&self.task, &[self])
    }
}

/// Aligned text table with one row per report: `Model | MSE | PSNR | SSIM`.
///
/// MSE is shown as `mse x 1e3`.
pub fn render_table(task: &str, reports: &[&MetricsReport]) -> String {
    let name_w = reports
        .iter()
        .map(|r| r.model.chars().count())
        .chain(["Model".len()])
        .max()
        .unwrap_or(5);
    let mut out = String::new();
    let _ = writeln!(out, "{:name_w$}  {task}", "");
    let _ = writeln!(
        out,
        "{:<name_w$}  {:>10}  {:>8}  {:>7}",
        "Model", "MSE", "PSNR", "SSIM"
    );
    let _ = writeln!(out, "{}", "-".repeat(name_w + 33));
    for r in reports {
        let a = &r.aggregate;
        let _ = writeln!(
            out,
            "{:<name_w$}  {:>10.3}  {:>8.2}  {:>7.4}",
            r.model, a.mse_e3, a.psnr, a.ssim
        );
    }
    out
}

/// Scores aligned prediction/target lists.
pub fn evaluate(
    preds: &[VideoSequence],
    targets: &[VideoSequence],
    task_label: &str,
    model: &str,
    reduction: Reduction,
) -> Result<MetricsReport> {
    if preds.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let rows = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| SequenceMetrics::compute(t.id(), p, t, reduction))
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::from_rows(model, task_label, rows)
}

/// Draws one line plot per series into a PNG: axes plus polylines, y scaled to
/// the data range.
pub fn plot_series(path: &Path, series: &[Vec<f64>]) -> Result<()> {
    use image::{Rgb, RgbImage};
    const W: u32 = 480;
    const H: u32 = 320;
    const PAD: u32 = 24;
    const COLORS: [[u8; 3]; 4] = [[31, 119, 180], [255, 127, 14], [44, 160, 44], [214, 39, 40]];
    let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
    for x in PAD..W - PAD {
        img.put_pixel(x, H - PAD, Rgb([0, 0, 0]));
    }
    for y in PAD..H - PAD {
        img.put_pixel(PAD, y, Rgb([0, 0, 0]));
    }
    let finite = series.iter().flatten().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    let span = if hi > lo { hi - lo } else { 1.0 };
    let to_px = |i: usize, n: usize, v: f64| -> (f64, f64) {
        let fx = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
        let fy = (v - lo) / span;
        (
            PAD as f64 + fx * (W - 2 * PAD) as f64,
            (H - PAD) as f64 - fy * (H - 2 * PAD) as f64,
        )
    };
    for (si, s) in series.iter().enumerate() {
        let color = Rgb(COLORS[si % COLORS.len()]);
        for i in 0..s.len() {
            let (x0, y0) = to_px(i, s.len(), s[i]);
            let (x1, y1) = if i + 1 < s.len() {
                to_px(i + 1, s.len(), s[i + 1])
            } else {
                (x0, y0)
            };
            let steps = ((x1 - x0).abs().max((y1 - y0).abs()) as usize).max(1);
            for k in 0..=steps {
                let f = k as f64 / steps as f64;
                let (x, y) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
                if (0.0..W as f64).contains(&x) && (0.0..H as f64).contains(&y) {
                    img.put_pixel(x as u32, y as u32, color);
                }
            }
        }
    }
    img.save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(t: usize, h: usize, w: usize, f: impl Fn(usize) -> f64) -> VideoSequence {
        VideoSequence::new("s", [t, h, w, 1], (0..t * h * w).map(f).collect()).unwrap()
    }

    #[test]
    fn mse_examples() {
        let a = seq(2, 8, 8, |i| (i % 7) as f64 / 10.0);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        let zero = seq(1, 8, 8, |_| 0.0);
        let half = seq(1, 8, 8, |_| 0.5);
        assert!((mse(&zero, &half).unwrap() - 0.25).abs() < 1e-15);
        let alternating = seq(1, 8, 8, |i| (i % 2) as f64);
        assert!((mse(&zero, &alternating).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn psnr_examples() {
        assert!((psnr_from_mse(0.01, 1.0) - 20.0).abs() < 1e-12);
        assert_eq!(psnr_from_mse(1.0, 1.0), 0.0);
        let a = seq(1, 8, 8, |i| (i % 3) as f64 / 3.0);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn ssim_of_constant_black_against_white() {
        let black = seq(1, 16, 16, |_| 0.0);
        let white = seq(1, 16, 16, |_| 1.0);
        let c1 = 1e-4;
        let expected = c1 / (1.0 + c1);
        assert!((ssim(&black, &white).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 9.999e-5).abs() < 1e-8);
    }

    #[test]
    fn ssim_identity_and_inversion() {
        let checker = seq(2, 16, 16, |i| if (i + i / 16) % 2 == 0 { 0.25 } else { 0.75 });
        assert!((ssim(&checker, &checker).unwrap() - 1.0).abs() < 1e-9);
        let inverted = seq(2, 16, 16, |i| 1.0 - checker.data()[i]);
        assert!(ssim(&checker, &inverted).unwrap() < 0.0);
    }

    #[test]
    fn ssim_rejects_small_frames() {
        let a = seq(1, 10, 10, |_| 0.0);
        assert!(matches!(ssim(&a, &a), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = seq(1, 8, 8, |_| 0.0);
        let b = seq(2, 8, 8, |_| 0.0);
        assert!(mse(&a, &b).is_err());
        assert!(psnr(&a, &b, 1.0).is_err());
    }

    #[test]
    fn report_aggregates() {
        let rows = vec![
            SequenceMetrics {
                id: "a".into(),
                mse: 0.01,
                psnr: 20.0,
                ssim: 0.5,
            },
            SequenceMetrics {
                id: "b".into(),
                mse: 0.001,
                psnr: 30.0,
                ssim: 0.7,
            },
        ];
        let r = MetricsReport::from_rows("m", "10 → 10", rows).unwrap();
        assert_eq!(r.aggregate.psnr, 25.0);
        assert!((r.aggregate.ssim - 0.6).abs() < 1e-12);
        assert!(MetricsReport::from_rows("m", "t", vec![]).is_err());
        let table = r.to_table();
        let header = table.lines().nth(1).unwrap();
        let cols: Vec<&str> = header.split_whitespace().collect();
        assert_eq!(cols, ["Model", "MSE", "PSNR", "SSIM"]);
    }

    #[test]
    fn evaluate_on_perfect_predictions() {
        let a = seq(3, 16, 16, |i| (i % 5) as f64 / 5.0);
        let r = evaluate(&[a.clone()], &[a], "10 → 10", "m", Reduction::PerFrame).unwrap();
        assert_eq!(r.per_sequence.len(), 1);
        assert_eq!(r.aggregate.mse, 0.0);
        assert_eq!(r.aggregate.psnr, PSNR_CAP_DB);
        assert!((r.aggregate.ssim - 1.0).abs() < 1e-9);
        assert_eq!(r.per_sequence[0].psnr, r.aggregate.psnr);
    }

    #[test]
    fn evaluate_rejects_misaligned_lists() {
        let a = seq(1, 16, 16, |_| 0.0);
        assert!(evaluate(&[a.clone(), a.clone()], &[a], "t", "m", Reduction::PerFrame).is_err());
    }
}
