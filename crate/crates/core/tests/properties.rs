use std::path::Path;

use proptest::prelude::*;

use dsunet::config::{Profile, SceneMode};
use dsunet::data::{fg_fraction, flip_with, generate_sample, MAX_FG, MIN_FG};
use dsunet::image::{decode_pgm, encode_pgm, Gray8, MaskImage};
use dsunet::metrics::{e_measure, f_measure, mae, s_measure, ThresholdPolicy};

fn pred_and_gt() -> impl Strategy<Value = (MaskImage, MaskImage)> {
    (2usize..12, 2usize..12).prop_flat_map(|(w, h)| {
        (
            prop::collection::vec(0.0f64..=1.0, w * h),
            prop::collection::vec(any::<bool>(), w * h),
        )
            .prop_map(move |(p, g)| {
                let g = g.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect();
                (MaskImage::new(w, h, p).unwrap(), MaskImage::new(w, h, g).unwrap())
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pgm_bytes_round_trip(w in 1usize..20, h in 1usize..20, seed in any::<u8>()) {
        let pixels: Vec<u8> = (0..w * h).map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed)).collect();
        let img = Gray8 { width: w, height: h, pixels };
        let back = decode_pgm(&encode_pgm(&img), Path::new("mem")).unwrap();
        prop_assert_eq!(back, img);
    }

    #[test]
    fn metrics_stay_in_unit_interval((p, g) in pred_and_gt()) {
        let s = s_measure(&p, &g, 0.5).unwrap();
        let m = mae(&p, &g).unwrap();
        prop_assert!((0.0..=1.0).contains(&s), "S = {}", s);
        prop_assert!((0.0..=1.0).contains(&m));
        for policy in [ThresholdPolicy::Adaptive, ThresholdPolicy::MeanThresholds] {
            let e = e_measure(&p, &g, policy).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&e), "E = {}", e);
            if let Some(f) = f_measure(&p, &g, 0.3, policy).unwrap() {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&f));
            }
        }
    }

    #[test]
    fn mae_symmetric_under_complement((p, g) in pred_and_gt()) {
        let flip = |m: &MaskImage| MaskImage::new(m.width, m.height, m.data.iter().map(|v| 1.0 - v).collect()).unwrap();
        let a = mae(&p, &g).unwrap();
        let b = mae(&flip(&p), &flip(&g)).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn generated_scenes_respect_fraction(seed in any::<u64>(), cod in any::<bool>()) {
        let mode = if cod { SceneMode::Cod } else { SceneMode::Sod };
        let s = generate_sample(seed, mode, Profile::Toy);
        let frac = fg_fraction(&s.gt);
        prop_assert!((MIN_FG..=MAX_FG).contains(&frac), "fraction {}", frac);
        prop_assert!(s.image_main.data().iter().chain(s.image_aux.data()).all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn flips_preserve_foreground(seed in any::<u64>(), v in any::<bool>(), h in any::<bool>()) {
        let s = generate_sample(seed, SceneMode::Sod, Profile::Toy);
        let f = flip_with(&s, v, h);
        prop_assert_eq!(fg_fraction(&f.gt), fg_fraction(&s.gt));
        prop_assert_eq!(flip_with(&f, v, h).gt, s.gt);
    }
}
