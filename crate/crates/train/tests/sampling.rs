use hstkit_imaging::{DegradationSpec, Dihedral, Image};
use hstkit_train::{batch_rng, sample_batch, tensor_to_image, image_to_tensor, Pair, PairDataset};
use hstkit_tensor::Tensor;

fn textured(w: usize, h: usize, seed: usize) -> Image {
    Image::from_fn(w, h, 3, |x, y, c| ((x * 37 + y * 91 + c * 53 + seed * 17 + x * y % 29) % 256) as u8).unwrap()
}

fn dataset() -> PairDataset {
    let hr = vec![
        ("a".to_string(), textured(48, 40, 1)),
        ("b".to_string(), textured(64, 64, 2)),
        ("tiny".to_string(), textured(8, 8, 3)),
    ];
    PairDataset::degrade(hr, &DegradationSpec::compressed(4, 30), 0).unwrap()
}

fn element(t: &Tensor<f64>, i: usize) -> Tensor<f64> {
    let s = t.shape();
    let per = s[1] * s[2] * s[3];
    Tensor::new(vec![1, s[1], s[2], s[3]], t.data()[i * per..(i + 1) * per].to_vec()).unwrap()
}

#[test]
fn degraded_pairs_are_aligned_and_ragged_sizes_cropped() {
    let hr = vec![("odd".to_string(), textured(50, 43, 0))];
    let d = PairDataset::degrade(hr, &DegradationSpec::bicubic(4), 0).unwrap();
    let p = &d.pairs()[0];
    assert_eq!((p.hr.width(), p.hr.height(), p.lr.width(), p.lr.height()), (48, 40, 12, 10));
    let bad = Pair { name: "x".into(), lr: textured(4, 4, 0), hr: textured(15, 16, 0) };
    assert!(PairDataset::from_pairs(vec![bad], 4, "x").is_err());
}

#[test]
fn batches_are_reproducible() {
    let d = dataset();
    for augment in [false, true] {
        let a = sample_batch::<f64>(&d, 6, 6, augment, &mut batch_rng(5, 17)).unwrap();
        let b = sample_batch::<f64>(&d, 6, 6, augment, &mut batch_rng(5, 17)).unwrap();
        assert_eq!(a.lr, b.lr);
        assert_eq!(a.hr, b.hr);
        assert_eq!(a.samples, b.samples);
        let c = sample_batch::<f64>(&d, 6, 6, augment, &mut batch_rng(5, 18)).unwrap();
        assert_ne!(a.samples, c.samples);
    }
}

#[test]
fn hr_patches_sit_at_four_times_lr_coordinates() {
    let d = dataset();
    let batch = sample_batch::<f64>(&d, 32, 6, true, &mut batch_rng(1, 0)).unwrap();
    assert_eq!(batch.lr.shape(), [32, 3, 6, 6]);
    assert_eq!(batch.hr.shape(), [32, 3, 24, 24]);
    for (i, s) in batch.samples.iter().enumerate() {
        let p = &d.pairs()[s.pair];
        assert_ne!(p.name, "tiny");
        let hr = tensor_to_image(&element(&batch.hr, i)).unwrap();
        let lr = tensor_to_image(&element(&batch.lr, i)).unwrap();
        assert_eq!(s.transform.inverse().apply(&hr), p.hr.crop(4 * s.x, 4 * s.y, 24, 24).unwrap());
        assert_eq!(s.transform.inverse().apply(&lr), p.lr.crop(s.x, s.y, 6, 6).unwrap());
    }
}

#[test]
fn no_augmentation_means_identity_transform() {
    let batch = sample_batch::<f32>(&dataset(), 16, 4, false, &mut batch_rng(2, 3)).unwrap();
    assert!(batch.samples.iter().all(|s| s.transform == Dihedral::IDENTITY));
}

#[test]
fn transforms_are_uniform() {
    let d = dataset();
    let mut counts = [0usize; 8];
    let n = 10_000;
    for it in 0..(n / 100) as u64 {
        let batch = sample_batch::<f32>(&d, 100, 1, true, &mut batch_rng(9, it)).unwrap();
        for s in &batch.samples {
            counts[s.transform.index() as usize] += 1;
        }
    }
    for c in counts {
        let f = c as f64 / n as f64;
        assert!((f - 0.125).abs() <= 0.02, "{counts:?}");
    }
}

#[test]
fn too_small_everywhere_is_an_error() {
    assert!(sample_batch::<f32>(&dataset(), 1, 64, false, &mut batch_rng(0, 0)).is_err());
}

#[test]
fn tensor_image_round_trip() {
    let img = textured(5, 3, 4);
    let t = image_to_tensor::<f32>(&img);
    assert_eq!(t.shape(), [1, 3, 3, 5]);
    assert_eq!(tensor_to_image(&t).unwrap(), img);
    let over = Tensor::new(vec![1, 1, 1, 2], vec![1.7f64, -0.2]).unwrap();
    assert_eq!(tensor_to_image(&over).unwrap().samples(), [255, 0]);
}
