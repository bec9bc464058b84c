//! Orthonormal 8×8 DCT-II and its inverse, evaluated as `C·X·Cᵀ`.

use std::sync::OnceLock;

fn basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut c = [[0.0; 8]; 8];
        for (u, row) in c.iter_mut().enumerate() {
            let a = if u == 0 { (1.0f64 / 8.0).sqrt() } else { 0.5 };
            for (x, v) in row.iter_mut().enumerate() {
                *v = a * (((2 * x + 1) * u) as f64 * std::f64::consts::PI / 16.0).cos();
            }
        }
        c
    })
}

/// Forward transform of a block in natural order.
pub fn forward(block: &[f64; 64]) -> [f64; 64] {
    let c = basis();
    let mut tmp = [0.0; 64];
    // tmp = C · X
    for u in 0..8 {
        for x in 0..8 {
            tmp[u * 8 + x] = (0..8).map(|y| c[u][y] * block[y * 8 + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for u in 0..8 {
        for v in 0..8 {
            out[u * 8 + v] = (0..8).map(|x| tmp[u * 8 + x] * c[v][x]).sum();
        }
    }
    out
}

/// Inverse transform: `Cᵀ·F·C`.
pub fn inverse(coef: &[f64; 64]) -> [f64; 64] {
    let c = basis();
    let mut tmp = [0.0; 64];
    for y in 0..8 {
        for v in 0..8 {
            tmp[y * 8 + v] = (0..8).map(|u| c[u][y] * coef[u * 8 + v]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            out[y * 8 + x] = (0..8).map(|v| tmp[y * 8 + v] * c[v][x]).sum();
        }
    }
    out
}
