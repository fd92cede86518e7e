mod common;

use fedyolo::bbox::BBox;
use fedyolo::dataio::{
    generate_synthetic, load_directory, read_pgm, write_directory, write_pgm, Augmentation, GrayImage, SynthSpec,
};
use fedyolo::federation::{deserialize_checkpoint, quantize, serialize_checkpoint, CheckpointError};
use fedyolo::model::{Detector, ModelConfig, ParamVector};
use proptest::prelude::*;
use rand::Rng;

fn cfg() -> ModelConfig {
    ModelConfig {
        input_height: 6,
        input_width: 5,
        grid_size: 2,
        boxes_per_cell: 2,
        num_classes: 3,
        hidden_width: 4,
        seed: 123,
    }
}

#[test]
fn checkpoint_round_trip_is_identity_after_quantization() {
    let model = Detector::new(cfg()).unwrap();
    let mut r = common::rng(3);
    for _ in 0..50 {
        let p = ParamVector((0..model.param_count()).map(|_| r.random_range(-5.0..5.0)).collect());
        let bytes = serialize_checkpoint(&p, &cfg()).unwrap();
        assert_eq!(bytes.len(), 32 + 4 * p.len());
        assert_eq!(&bytes[..4], b"FDCK");
        let (back, c) = deserialize_checkpoint(&bytes).unwrap();
        assert_eq!(back, quantize(&p));
        assert_eq!(c, cfg());
        assert_eq!(serialize_checkpoint(&back, &c).unwrap(), bytes);
    }
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let model = Detector::new(cfg()).unwrap();
    let bytes = serialize_checkpoint(&model.init_params(), &cfg()).unwrap();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(deserialize_checkpoint(&bad), Err(CheckpointError::BadMagic(_))));
    assert!(deserialize_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    assert!(deserialize_checkpoint(&bytes[..20]).is_err());
    let mut long = bytes.clone();
    long.extend_from_slice(&[0; 4]);
    assert!(deserialize_checkpoint(&long).is_err());
    let mut nan = bytes;
    nan[32..36].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(matches!(deserialize_checkpoint(&nan), Err(CheckpointError::NonFinite(0))));
}

#[test]
fn pgm_directory_round_trip() {
    let samples = generate_synthetic(&SynthSpec { max_objects: 3, ..SynthSpec::new(12, 24, 8) }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_directory(&samples, dir.path()).unwrap();
    let back = load_directory(dir.path(), 3).unwrap();
    assert_eq!(back.len(), samples.len());
    for (a, b) in samples.iter().zip(&back) {
        assert_eq!(a.image, b.image);
        assert_eq!(a.objects.len(), b.objects.len());
        for (x, y) in a.objects.iter().zip(&b.objects) {
            assert_eq!(x.class_id, y.class_id);
            for (u, v) in common::boxes4(&x.bbox).iter().zip(common::boxes4(&y.bbox)) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn pgm_bytes_round_trip() {
    let px: Vec<f64> = (0..35).map(|i| (i * 7 % 256) as f64 / 255.0).collect();
    let img = GrayImage::new(5, 7, px).unwrap();
    let bytes = write_pgm(&img);
    assert!(bytes.starts_with(b"P5"));
    assert_eq!(read_pgm(&bytes).unwrap(), img);
    assert!(read_pgm(b"P2\n1 1\n255\n0").is_err());
}

fn unit_box() -> impl Strategy<Value = BBox> {
    (0.05f64..0.5, 0.05f64..0.5, 0.0f64..1.0, 0.0f64..1.0).prop_map(|(w, h, u, v)| {
        let snap = |x: f64| (x * (1u64 << 40) as f64).round() / (1u64 << 40) as f64;
        BBox::new(snap(w / 2.0 + u * (1.0 - w)), snap(h / 2.0 + v * (1.0 - h)), snap(w), snap(h))
    })
}

fn repeat(a: Augmentation, times: usize, b: BBox) -> BBox {
    (0..times).fold(b, |b, _| a.apply_box(b))
}

proptest! {
    #[test]
    fn flips_and_rotations_compose_to_identity(b in unit_box()) {
        prop_assert_eq!(repeat(Augmentation::FlipH, 2, b), b);
        prop_assert_eq!(repeat(Augmentation::FlipV, 2, b), b);
        prop_assert_eq!(repeat(Augmentation::Rot180, 2, b), b);
        prop_assert_eq!(repeat(Augmentation::Rot90, 4, b), b);
        prop_assert_eq!(Augmentation::Rot270.apply_box(Augmentation::Rot90.apply_box(b)), b);
    }

    #[test]
    fn image_transforms_compose_to_identity(h in 1usize..9, w in 1usize..9, seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let px = (0..h * w).map(|_| r.random_range(0..=255u32) as f64 / 255.0).collect();
        let img = GrayImage::new(h, w, px).unwrap();
        let twice = |a: Augmentation, n: usize| (0..n).fold(img.clone(), |m, _| a.apply_image(&m));
        prop_assert_eq!(twice(Augmentation::FlipH, 2), img.clone());
        prop_assert_eq!(twice(Augmentation::Rot180, 2), img.clone());
        prop_assert_eq!(twice(Augmentation::Rot90, 4), img.clone());
    }

    #[test]
    fn quantize_is_idempotent(v in prop::collection::vec(-1e6f64..1e6, 0..40)) {
        let q = quantize(&ParamVector(v));
        prop_assert_eq!(quantize(&q), q);
    }
}
