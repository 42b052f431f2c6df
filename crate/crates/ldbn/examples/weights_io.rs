//! Weights container round trip. Saving, loading, and saving again must
//! produce byte-identical files; a corrupted header must be rejected with
//! an offset-bearing error, not garbage weights.

use ldbn::nn::{load_weights, reference_model, save_weights};
use std::fs;

fn main() -> ldbn::Result<()> {
    let dir = std::env::temp_dir();
    let a = dir.join("ldbn_example_a.ldbn");
    let b = dir.join("ldbn_example_b.ldbn");

    let model = reference_model(9);
    save_weights(&model, &a)?;
    let reloaded = load_weights(&a)?;
    save_weights(&reloaded, &b)?;

    let bytes_a = fs::read(&a)?;
    let bytes_b = fs::read(&b)?;
    assert_eq!(bytes_a, bytes_b, "save -> load -> save must be stable");
    println!("round trip stable: {} bytes", bytes_a.len());

    let mut corrupt = bytes_a.clone();
    corrupt[0] ^= 0xFF;
    let c = dir.join("ldbn_example_corrupt.ldbn");
    fs::write(&c, &corrupt)?;
    match load_weights(&c) {
        Err(e) => println!("corrupted magic rejected: {e}"),
        Ok(_) => panic!("corrupted file must not load"),
    }
    Ok(())
}
