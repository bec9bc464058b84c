#![allow(dead_code)]

use hstkit_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_unit(shape: &[usize], seed: u64) -> Tensor<f64> {
    random(shape, seed).map(|v| 0.5 + 0.5 * v)
}

/// Direct cross-correlation with zero padding.
pub fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let (bn, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, k) = (w.shape()[0], w.shape()[2]);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; bn * cout * oh * ow];
    for n in 0..bn {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[co];
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[((n * cin + ci) * h + iy as usize) * wd + ix as usize];
                                acc += xv * w.data()[((co * cin + ci) * k + ky) * k + kx];
                            }
                        }
                    }
                    out[((n * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::new(vec![bn, cout, oh, ow], out).unwrap()
}

pub fn assert_close(a: &Tensor<f64>, b: &Tensor<f64>, tol: f64) {
    assert_eq!(a.shape(), b.shape());
    let d = a.max_abs_diff(b).unwrap();
    assert!(d <= tol, "max abs diff {d} > {tol}");
}
