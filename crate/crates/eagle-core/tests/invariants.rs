//! Property tests for the contracts that hold over whole input families.

use eagle_core::cvssb::ChannelRule;
use eagle_core::data::{augment::augment, split_assignments, synth::synth_generate, LesionKind, WindowSpec};
use eagle_core::haar::{haar_forward, haar_inverse};
use eagle_core::loss::{combined_loss, LossWeights};
use eagle_core::metrics::metrics;
use eagle_core::ss2d::{flatten_direction, unflatten_direction, ALL_DIRECTIONS};
use eagle_core::tensor::Tensor;
use proptest::prelude::*;

fn small_grid() -> impl Strategy<Value = (usize, usize, usize, Vec<f64>)> {
    (1usize..4, 1usize..12, 1usize..12).prop_flat_map(|(c, hh, hw)| {
        let (h, w) = (2 * hh, 2 * hw);
        proptest::collection::vec(-10.0f64..10.0, c * h * w)
            .prop_map(move |data| (c, h, w, data))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn haar_roundtrip_and_parseval((c, h, w, data) in small_grid()) {
        let x = Tensor::from_vec(&[c, h, w], data).unwrap();
        let bands = haar_forward(&x).unwrap();
        let back = haar_inverse(&bands).unwrap();
        let max_err = x
            .to_vec()
            .iter()
            .zip(back.to_vec())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        prop_assert!(max_err < 1e-10, "roundtrip {max_err}");

        let energy = |t: &Tensor<f64>| t.with_data(|d| d.iter().map(|v| v * v).sum::<f64>());
        let e_in = energy(&x);
        let e_bands = energy(&bands.low) + energy(&bands.vert) + energy(&bands.horiz) + energy(&bands.diag);
        prop_assert!((e_in - e_bands).abs() <= 1e-5 * e_in.max(1e-9), "parseval {e_in} vs {e_bands}");
    }

    #[test]
    fn flatten_roundtrip_identity((h, w, data) in (1usize..9, 1usize..9).prop_flat_map(|(h, w)| {
        proptest::collection::vec(-5.0f64..5.0, 2 * h * w).prop_map(move |d| (h, w, d))
    })) {
        let x = Tensor::from_vec(&[1, 2, h, w], data).unwrap();
        for dir in ALL_DIRECTIONS {
            let seq = flatten_direction(&x, dir).unwrap();
            let back = unflatten_direction(&seq, dir, h, w).unwrap();
            prop_assert_eq!(back.to_vec(), x.to_vec());
        }
    }

    #[test]
    fn windowing_is_monotone(values in proptest::collection::vec(-2000.0f64..2000.0, 2..40),
                             level in -100.0f64..200.0,
                             width in 1.0f64..500.0) {
        let spec = WindowSpec { level, width };
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mapped: Vec<f64> = sorted.iter().map(|v| spec.apply_scalar(*v)).collect();
        for pair in mapped.windows(2) {
            prop_assert!(pair[1] >= pair[0]);
        }
        for m in mapped {
            prop_assert!((0.0..=1.0).contains(&m));
        }
    }

    #[test]
    fn losses_and_metrics_stay_in_range(
        mask_bits in proptest::collection::vec(proptest::bool::ANY, 16),
        probs in proptest::collection::vec(0.0f64..1.0, 16),
    ) {
        let y = Tensor::from_vec(&[16], mask_bits.iter().map(|b| if *b { 1.0 } else { 0.0 }).collect()).unwrap();
        let p = Tensor::from_vec(&[16], probs).unwrap();
        let loss = combined_loss(&y, &p, &LossWeights::default()).unwrap().item();
        prop_assert!(loss >= 0.0 && loss.is_finite());
        let m = metrics(&y, &p, 0.5).unwrap();
        for v in [m.dsc, m.precision, m.recall] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn channel_rule_holds_for_any_width(width_half in 1usize..64) {
        let even = 2 * width_half;
        prop_assert_eq!(ChannelRule::Double.apply(even).unwrap(), 2 * even);
        prop_assert_eq!(ChannelRule::Halve.apply(even).unwrap(), even / 2);
        prop_assert_eq!(ChannelRule::Keep.apply(even).unwrap(), even);
    }

    #[test]
    fn splits_partition_and_respect_groups(n_groups in 1usize..40, reps in 1usize..4, seed in 0u64..1000) {
        let keys: Vec<String> = (0..n_groups * reps).map(|i| format!("g{}", i % n_groups)).collect();
        let splits = split_assignments(&keys, (0.8, 0.1, 0.1), seed).unwrap();
        prop_assert_eq!(splits.len(), keys.len());
        let mut by_key = std::collections::HashMap::new();
        for (k, s) in keys.iter().zip(&splits) {
            let entry = by_key.entry(k.clone()).or_insert(*s);
            prop_assert_eq!(*entry, *s, "group {} straddles splits", k);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn augmentation_preserves_shape_and_binarity(seed in 0u64..10_000) {
        let sample = &synth_generate::<f32>(1, 4242, LesionKind::Ae, 64).unwrap()[0];
        let out = augment(sample, seed).unwrap();
        prop_assert_eq!(out.image.shape(), sample.image.shape());
        prop_assert_eq!(out.mask.shape(), sample.mask.shape());
        out.mask.with_data(|m| {
            for v in m {
                assert!(*v == 0.0 || *v == 1.0);
            }
        });
        out.image.with_data(|d| {
            for v in d {
                assert!((-1e-6..=1.0 + 1e-6).contains(&(*v as f64)));
            }
        });
    }
}
