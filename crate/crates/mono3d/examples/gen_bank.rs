//! Regenerates the bundled shape-bank fixture at `data/synthetic_bank.json`
//! from the parametric models. Run from the crate directory:
//!
//! ```text
//! cargo run -p mono3d --example gen_bank
//! ```

use mono3d::bank::save_bank;
use mono3d::sim::synthetic::synthetic_bank;

fn main() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    std::fs::create_dir_all(&dir).expect("create data directory");
    let path = dir.join("synthetic_bank.json");
    save_bank(&synthetic_bank(), &path).expect("write bank fixture");
    println!("wrote {}", path.display());
}
