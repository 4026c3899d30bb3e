//! Regenerates the checked-in experiment configs from the built-in presets.
//!
//! Usage: `cargo run -p homobs --example dump_configs -- [dir]`
//! (the directory defaults to `configs`).

use std::fs;
use std::path::PathBuf;

use homobs::experiments::{preset, PRESET_NAMES};

fn main() {
    let dir: PathBuf = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "configs".into())
        .into();
    fs::create_dir_all(&dir).expect("create output directory");
    for name in PRESET_NAMES {
        let plan = preset(name).expect("preset name from the built-in list");
        let mut text = homobs::config::to_string(&plan.config).expect("serialize config");
        text.push('\n');
        let path = dir.join(format!("{name}.json"));
        fs::write(&path, text).expect("write config file");
        println!("wrote {}", path.display());
    }
}
