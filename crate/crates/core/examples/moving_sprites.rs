//! Renders bouncing-digit sequences, writes them as a frame-directory
//! dataset and an animated GIF, then reads the dataset back.
//!
//! ```text
//! cargo run --release -p vidpred --example moving_sprites -- [out_dir]
//! ```

use std::path::PathBuf;

use vidpred::data::{
    export_dataset, generate_moving_sprites, load_dataset, make_windows_all, save_gif, GlyphSource,
    MovingSpriteSpec, WindowSpec,
};

fn main() -> vidpred::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("vidpred_sprites"), PathBuf::from);
    let spec = MovingSpriteSpec {
        canvas: (64, 64),
        n_sprites: 2,
        speed: 3.0,
        glyphs: GlyphSource::Digits { size: 28 },
        seed: 42,
    };
    let seqs: Vec<_> = (0..4)
        .map(|i| generate_moving_sprites(&spec.with_seed(spec.seed + i), 20))
        .collect::<vidpred::Result<_>>()?;
    export_dataset(&out, &seqs, Some(&spec))?;
    save_gif(&seqs[0], &out.join("preview.gif"), 100)?;

    let back = load_dataset(&out)?;
    assert_eq!(back.len(), seqs.len());
    let windows = make_windows_all(&back, &WindowSpec::new(10, 10, 20)?);
    println!(
        "{} sequences of {:?} (T, H, W, C) in {}; {} windows for 10 -> 10",
        back.len(),
        back[0].shape(),
        out.display(),
        windows.windows.len()
    );
    Ok(())
}
