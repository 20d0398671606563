//! Scores degraded copies of sprite clips with MSE, PSNR and SSIM and
//! prints the aligned report table.
//!
//! ```text
//! cargo run --release -p vidpred --example metrics_report
//! ```

use vidpred::data::{generate_moving_sprites, GlyphSource, MovingSpriteSpec, VideoSequence};
use vidpred::metrics::{evaluate, render_table, Reduction};

fn degrade(seq: &VideoSequence, f: impl Fn(f64) -> f64) -> vidpred::Result<VideoSequence> {
    VideoSequence::new(seq.id(), seq.shape(), seq.data().iter().map(|&v| f(v)).collect())
}

fn main() -> vidpred::Result<()> {
    let spec = MovingSpriteSpec {
        canvas: (32, 32),
        n_sprites: 1,
        glyphs: GlyphSource::Digits { size: 12 },
        ..Default::default()
    };
    let targets: Vec<_> = (0..8)
        .map(|i| generate_moving_sprites(&spec.with_seed(i), 10))
        .collect::<vidpred::Result<_>>()?;
    let cases: [(&str, fn(f64) -> f64); 3] = [
        ("identity", |v| v),
        ("dimmed", |v| 0.8 * v),
        ("fogged", |v| 0.7 * v + 0.15),
    ];
    let mut reports = Vec::new();
    for (name, f) in cases {
        let preds = targets.iter().map(|t| degrade(t, f)).collect::<vidpred::Result<Vec<_>>>()?;
        reports.push(evaluate(&preds, &targets, "10 frames", name, Reduction::PerFrame)?);
    }
    let refs: Vec<_> = reports.iter().collect();
    print!("{}", render_table("10 frames", &refs));
    println!();
    print!("{}", reports[1].to_csv());
    Ok(())
}
