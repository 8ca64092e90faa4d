use proptest::prelude::*;

use labelfuse::fusion::{tlam_merge, LabelBinding, MergerConfig, MergerParams, Variant};
use labelfuse::labels::{random_label_set, LabelMap, LabelSet};
use labelfuse::metrics::{mean_iou, pixel_accuracy, SegMap};
use labelfuse::pca::pca_project_3;
use labelfuse::tensor::Tensor;
use labelfuse::tlt;
use labelfuse::ConceptTensor;

fn tlam(width: usize, depth: usize, heads: usize) -> MergerConfig {
    MergerConfig {
        variant: Variant::Tlam,
        width,
        depth,
        heads,
    }
}

fn dims_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..5, 1..5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tlt_round_trip_f32(dims in dims_strategy(), seed in any::<u64>()) {
        let n: usize = dims.iter().product();
        let mut rng = labelfuse::rng::Rng::new(seed);
        let t = Tensor::from_f32(dims, (0..n).map(|_| f32::from_bits(rng.next_u64() as u32)).collect()).unwrap();
        let mut buf = Vec::new();
        let written = tlt::write_tensor(&t, &mut buf).unwrap();
        prop_assert_eq!(written as usize, buf.len());
        prop_assert!(tlt::read_tensor(buf.as_slice()).unwrap().bit_eq(&t));
    }

    #[test]
    fn tlt_round_trip_u8(dims in dims_strategy(), bytes in prop::collection::vec(any::<u8>(), 256)) {
        let n: usize = dims.iter().product();
        let t = Tensor::from_u8(dims, bytes[..n].to_vec()).unwrap();
        let mut buf = Vec::new();
        tlt::write_tensor(&t, &mut buf).unwrap();
        prop_assert!(tlt::read_tensor(buf.as_slice()).unwrap().bit_eq(&t));
    }

    #[test]
    fn truncated_files_are_rejected(dims in dims_strategy(), cut in 0usize..1000) {
        let n: usize = dims.iter().product();
        let t = Tensor::from_f64(dims, vec![1.5; n]).unwrap();
        let mut buf = Vec::new();
        tlt::write_tensor(&t, &mut buf).unwrap();
        let cut = cut % buf.len();
        prop_assert!(tlt::read_tensor(&buf[..cut]).is_err());
    }

    #[test]
    fn mean_iou_is_symmetric(k in 1usize..5, a in prop::collection::vec(0u32..4, 64), b in prop::collection::vec(0u32..4, 64)) {
        let clip = |v: Vec<u32>| v.into_iter().map(|c| c % k as u32).collect::<Vec<_>>();
        let pa = SegMap::new(8, 8, k, clip(a)).unwrap();
        let pb = SegMap::new(8, 8, k, clip(b)).unwrap();
        prop_assert_eq!(mean_iou(&pa, &pb).unwrap(), mean_iou(&pb, &pa).unwrap());
        prop_assert_eq!(pixel_accuracy(&pa, &pb).unwrap(), pixel_accuracy(&pb, &pa).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn merge_is_pixelwise(seed in any::<u64>(), pixel in 0usize..16) {
        let set = random_label_set(3, 4, 4, 0.3, seed).unwrap();
        let p = MergerParams::init(tlam(6, 1, 2), LabelBinding::from_set(&set), seed ^ 1).unwrap();
        let base = tlam_merge(&set, &p).unwrap().concept;

        let mut labels: Vec<LabelMap> = set.labels().to_vec();
        let c = labels[1].channels();
        labels[1].value_slice_mut()[pixel * c] += 0.75;
        let changed = tlam_merge(&LabelSet::new(labels).unwrap(), &p).unwrap().concept;
        for q in 0..16 {
            if q != pixel {
                prop_assert_eq!(base.pixel(q), changed.pixel(q));
            }
        }
    }

    #[test]
    fn masked_values_do_not_matter(seed in any::<u64>(), junk in -100f32..100.0) {
        let set = random_label_set(4, 4, 4, 0.5, seed).unwrap();
        let p = MergerParams::init(tlam(8, 2, 4), LabelBinding::from_set(&set), seed ^ 2).unwrap();
        let base = tlam_merge(&set, &p).unwrap().concept;
        let mut labels: Vec<LabelMap> = set.labels().to_vec();
        for l in labels.iter_mut() {
            let c = l.channels();
            let absent: Vec<usize> = (0..16).filter(|&q| !l.is_present(q)).collect();
            let values = l.value_slice_mut();
            for q in absent {
                values[q * c..(q + 1) * c].iter_mut().for_each(|v| *v = junk);
            }
        }
        let other = tlam_merge(&LabelSet::new(labels).unwrap(), &p).unwrap().concept;
        prop_assert!(base.tensor().bit_eq(other.tensor()));
    }

    #[test]
    fn label_order_does_not_matter(seed in any::<u64>(), rot in 1usize..4) {
        let set = random_label_set(4, 3, 3, 0.3, seed).unwrap();
        let p = MergerParams::init(tlam(8, 2, 2), LabelBinding::from_set(&set), seed ^ 3).unwrap();
        let base = tlam_merge(&set, &p).unwrap().concept;
        let mut labels: Vec<LabelMap> = set.labels().to_vec();
        labels.rotate_left(rot);
        let other = tlam_merge(&LabelSet::new(labels).unwrap(), &p).unwrap().concept;
        let scale = base.data().iter().fold(1e-12f64, |m, x| m.max(x.abs()));
        for (a, b) in base.data().iter().zip(other.data()) {
            prop_assert!((a - b).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn pca_ignores_pixel_order(seed in any::<u64>(), shift in 1usize..19) {
        let mut rng = labelfuse::rng::Rng::new(seed);
        let (n, d) = (20, 5);
        let data: Vec<f64> = (0..n * d).map(|_| rng.normal()).collect();
        let z = ConceptTensor::from_pixels(4, 5, d, data.clone()).unwrap();
        let mut rotated = data;
        rotated.rotate_left(shift * d);
        let zr = ConceptTensor::from_pixels(4, 5, d, rotated).unwrap();
        let (a, img_a) = pca_project_3(&z).unwrap();
        let (b, img_b) = pca_project_3(&zr).unwrap();
        for (x, y) in a.components.data.iter().zip(&b.components.data) {
            prop_assert!((x - y).abs() <= 1e-8);
        }
        let (pa, pb) = (img_a.as_f64().unwrap(), img_b.as_f64().unwrap());
        for p in 0..n {
            let q = (p + n - shift) % n;
            for c in 0..3 {
                prop_assert!((pa[p * 3 + c] - pb[q * 3 + c]).abs() <= 1e-8);
            }
        }
    }
}
