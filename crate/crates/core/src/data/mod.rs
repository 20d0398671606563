//! Sequences, procedural bouncing sprites, frame-directory IO and windowing.

mod frames;
mod glyphs;
mod sprites;
mod video;
mod windows;

pub use frames::{
    export_dataset, frame_file_name, load_dataset, load_frame_dir, save_frame_dir, save_gif,
    Manifest, ManifestEntry, MANIFEST_FILE,
};
pub use glyphs::{render_digit, Glyph, GlyphSource};
pub use sprites::{
    bimodal_sprites, center_of_mass_x, displacement_direction, generate_moving_sprites, render_trajectories, Direction,
    MovingSpriteSpec, Sprite,
};
pub use video::VideoSequence;
pub use windows::{make_windows, make_windows_all, Window, WindowSet, WindowSpec};
