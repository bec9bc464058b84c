#![allow(dead_code)]

use std::path::PathBuf;

use hstkit_imaging::{load_png, Image};

pub const NATURAL: [&str; 4] = ["astronaut", "coffee", "chelsea", "rocket"];

pub fn natural(name: &str) -> Image {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "testdata", &format!("{name}.png")].iter().collect();
    load_png(&path).unwrap()
}

pub fn psnr(a: &Image, b: &Image) -> f64 {
    assert!(a.same_geometry(b));
    let mse = a
        .samples()
        .iter()
        .zip(b.samples())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / a.samples().len() as f64;
    10.0 * (255.0f64 * 255.0 / mse).log10()
}
