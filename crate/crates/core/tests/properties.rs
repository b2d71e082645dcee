use proptest::prelude::*;
use slrnet::checkpoint;
use slrnet::config::ExperimentConfig;
use slrnet::label::LabelMap;
use slrnet::losses::pairwise_l1;
use slrnet::maskio::{decode_mask, encode_mask};
use slrnet::metrics::ConfusionAccumulator;
use slrnet::mf::{factorize, MfConfig};
use slrnet::mvmc::{self, CalibrationConfig, RefineConfig};
use slrnet::nn::ParamStore;
use slrnet::tensor::softmax_tensor;
use slrnet::transforms::GeomTransform;
use slrnet::{Tape, Tensor};

fn tensor(shape: &'static [usize], lo: f64, hi: f64) -> impl Strategy<Value = Tensor> {
    let n = shape.iter().product::<usize>();
    prop::collection::vec(lo..hi, n).prop_map(move |v| Tensor::new(shape, v).unwrap())
}

fn geom() -> impl Strategy<Value = GeomTransform> {
    (prop::sample::select(vec![0.5, 0.75, 1.0, 1.25]), any::<bool>())
        .prop_map(|(scale, hflip)| GeomTransform { scale, hflip })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn softmax_rows_are_distributions(x in tensor(&[3, 5, 4], -40.0, 40.0), t in 0.05f64..5.0) {
        let tape = Tape::new();
        let shape = [3, 5, 4];
        for axis in 0..3 {
            let p = tape.constant(x.clone()).softmax(axis, t).unwrap().value();
            prop_assert!(p.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            let mut sums = std::collections::HashMap::new();
            for (i, v) in p.data().iter().enumerate() {
                let mut idx = [i / (shape[1] * shape[2]), (i / shape[2]) % shape[1], i % shape[2]];
                idx[axis] = 0;
                *sums.entry(idx).or_insert(0.0) += v;
            }
            prop_assert!(sums.values().all(|s: &f64| (s - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn calibration_ignores_view_order(
        geoms in prop::collection::vec(geom(), 2..5),
        seed in any::<u64>(),
        rotate in 1usize..4,
    ) {
        use rand::{Rng, SeedableRng};
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (h, w, k) = (8, 8, 3);
        let logits: Vec<Tensor> = geoms
            .iter()
            .map(|g| Tensor::from_fn(&[g.scaled_len(h), g.scaled_len(w), k], |_| r.random_range(-4.0..4.0)))
            .collect();
        let image = Tensor::from_fn(&[h, w, 3], |_| r.random_range(0.0..1.0));
        let cfg = CalibrationConfig::default();
        let a = mvmc::calibrate(&logits, &geoms, &image, &cfg).unwrap();
        let mut l2 = logits.clone();
        let mut g2 = geoms.clone();
        let by = rotate % l2.len();
        l2.rotate_left(by);
        g2.rotate_left(by);
        let b = mvmc::calibrate(&l2, &g2, &image, &cfg).unwrap();
        prop_assert_eq!(&a.labels, &b.labels);
        prop_assert_eq!(&a.ignore, &b.ignore);
        for (x, y) in a.confidence.iter().zip(&b.confidence) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn refine_keeps_distributions(
        logits in tensor(&[6, 7, 3], -5.0, 5.0),
        image in tensor(&[6, 7, 3], 0.0, 1.0),
        iterations in 0usize..6,
        half in 0usize..4,
        sigma in 0.01f64..1.0,
    ) {
        let probs = softmax_tensor(&logits, 2).unwrap();
        let cfg = RefineConfig { iterations, kernel_size: 2 * half + 1, sigma_color: sigma };
        let out = mvmc::refine(&probs, &image, &cfg).unwrap();
        for row in out.data().chunks(3) {
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn metrics_follow_class_relabeling(
        gt in prop::collection::vec(prop::option::weighted(0.9, 0usize..3), 64),
        pred in prop::collection::vec(0usize..3, 64),
        perm in Just(vec![0usize, 1, 2]).prop_shuffle(),
    ) {
        let mut a = ConfusionAccumulator::new(3);
        if a.add(&gt, &pred).is_err() || a.total() == 0 {
            return Ok(());
        }
        let mut b = ConfusionAccumulator::new(3);
        let gt2: Vec<_> = gt.iter().map(|g| g.map(|c| perm[c])).collect();
        let pred2: Vec<_> = pred.iter().map(|&p| perm[p]).collect();
        b.add(&gt2, &pred2).unwrap();
        let (ma, mb) = (a.metrics().unwrap(), b.metrics().unwrap());
        prop_assert!((ma.miou - mb.miou).abs() < 1e-12);
        prop_assert!((ma.mfdr - mb.mfdr).abs() < 1e-12);
        prop_assert!((ma.mfnr - mb.mfnr).abs() < 1e-12);
        let ious = a.class_iou();
        let ious2 = b.class_iou();
        for c in 0..3 {
            prop_assert_eq!(ious[c], ious2[perm[c]]);
        }
    }

    #[test]
    fn pairwise_distance_ignores_order(maps in prop::collection::vec(tensor(&[3, 4, 2], -1.0, 1.0), 2..5)) {
        let tape = Tape::new();
        let vars: Vec<_> = maps.iter().map(|m| tape.constant(m.clone())).collect();
        let mut rev = vars.clone();
        rev.reverse();
        let a = pairwise_l1(&vars).unwrap().item();
        let b = pairwise_l1(&rev).unwrap().item();
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn codes_stay_column_stochastic(x in tensor(&[6, 10], -2.0, 2.0), c in tensor(&[3, 10], 0.01, 1.0), t in 0.1f64..4.0) {
        let tape = Tape::new();
        let codes = tape.constant(c).softmax(0, 1.0).unwrap();
        let cfg = MfConfig { temperature: t, iterations: 2, ..MfConfig::default() };
        let f = factorize(&[tape.constant(x)], &[codes], &cfg).unwrap();
        let out = f.state.codes[0].value();
        for col in 0..10 {
            let s: f64 = (0..3).map(|a| out.data()[a * 10 + col]).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn flip_is_an_involution(x in tensor(&[4, 5, 2], -1.0, 1.0)) {
        let g = GeomTransform { scale: 1.0, hflip: true };
        prop_assert_eq!(g.apply_tensor(&g.apply_tensor(&x).unwrap()).unwrap(), x);
    }

    #[test]
    fn checkpoints_round_trip(values in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 1..20), 1..5)) {
        let mut store = ParamStore::new();
        for (i, v) in values.iter().enumerate() {
            store.add(format!("p{i}"), Tensor::new(&[v.len()], v.clone()).unwrap());
        }
        let bytes = checkpoint::encode(&store);
        let back = checkpoint::decode(&bytes).unwrap();
        prop_assert_eq!(back.len(), values.len());
        for ((_, t), v) in back.iter().zip(&values) {
            prop_assert_eq!(t.data(), &v[..]);
        }
    }

    #[test]
    fn masks_round_trip(h in 1usize..12, w in 1usize..12, seed in any::<u64>()) {
        let m = LabelMap::from_fn(h, w, |y, x| {
            let v = (seed.wrapping_mul(31).wrapping_add((y * w + x) as u64 * 7919)) % 6;
            (v != 5).then_some(v as usize)
        });
        prop_assert_eq!(decode_mask(&encode_mask(&m).unwrap()).unwrap(), m);
    }

    #[test]
    fn config_text_round_trips(seed in any::<u64>(), lr in 1e-4f64..0.5, gamma in 0.0f64..1.0, reg in 0.0f64..100.0) {
        let cfg = ExperimentConfig::default()
            .with_overrides(&[
                ("seed".into(), seed.to_string()),
                ("train.lr".into(), lr.to_string()),
                ("mvmc.gamma".into(), gamma.to_string()),
                ("loss.reg".into(), reg.to_string()),
            ])
            .unwrap();
        let back = ExperimentConfig::parse(&cfg.to_text()).unwrap();
        prop_assert_eq!(back.to_text(), cfg.to_text());
    }
}
