//! Writes the bundled synthetic label sources for the 8-joint test model.
//!
//! Usage: `cargo run -p meshforge --example gen_label_fixtures -- fixtures`

use std::path::PathBuf;

use meshforge::pipeline::{synthetic_motion, synthetic_pose_bank};

fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    std::fs::create_dir_all(&dir).expect("create output dir");
    let bank = synthetic_pose_bank(8, 1200, 1);
    let motion = synthetic_motion(8, 32, 120, 2);
    std::fs::write(dir.join("pose_bank.json"), serde_json::to_string(&bank).expect("serialize")).expect("write pose bank");
    std::fs::write(dir.join("motion.json"), serde_json::to_string(&motion).expect("serialize")).expect("write motion");
}
