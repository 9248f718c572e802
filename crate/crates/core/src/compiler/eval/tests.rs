use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::compiler::{compile, depth_requirement, pack_input, LayoutDescriptor, PackingLayout};
use crate::engine::{EngineParams, ReferenceEngine};
use crate::forest::{train_forest, CartParams, Dataset, Forest, ForestParams};
use crate::nrf::{Activation, NrfModel};
use crate::poly::fit_tanh;

fn engine(n: usize, depth: usize) -> ReferenceEngine<f64> {
    ReferenceEngine::new(EngineParams::reference(n, depth).unwrap()).unwrap()
}

/// Forest with `trees` trees padded to exactly `leaves` leaves.
fn model(trees: usize, leaves: usize, classes: usize, d: usize, m: usize, seed: u64) -> NrfModel<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = 300;
    let x = Array2::from_shape_fn((rows, d), |_| rng.random::<f64>());
    let y: Vec<usize> = (0..rows)
        .map(|i| ((x[[i, 0]] * 2.7 + x[[i, d - 1]] * 1.3) as usize + rng.random_range(0..2)) % classes)
        .collect();
    let data = Dataset::classification(x, y, classes).unwrap();
    let depth = (usize::BITS - 1 - leaves.leading_zeros()) as usize;
    let p = ForestParams { n_trees: trees, cart: CartParams { max_depth: depth, ..Default::default() }, bootstrap: true };
    let forest: Forest<f64> = train_forest(&data, &p, seed).unwrap().padded(Some(leaves)).unwrap();
    NrfModel::from_forest(&forest)
        .unwrap()
        .normalize()
        .unwrap()
        .with_activation(Activation::Polynomial { poly: fit_tanh(4.0, m).unwrap() })
        .unwrap()
}

fn random_x(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..d).map(|_| rng.random::<f64>()).collect()
}

#[test]
fn pack_input_templates() {
    let desc = LayoutDescriptor { trees: 1, leaves: 2, n_features: 2, tau: vec![vec![0]], block_width: 3, n: 8 };
    assert_eq!(pack_input(&desc, &[0.3, 0.9]).unwrap().to_vec(), vec![0.3, 0.0, 0.3, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let desc = LayoutDescriptor { trees: 2, leaves: 3, n_features: 3, tau: vec![vec![2, 0], vec![1, 1]], block_width: 5, n: 16 };
    let p = pack_input(&desc, &[0.1, 0.2, 0.3]).unwrap();
    assert_eq!(&p[..10], &[0.3, 0.1, 0.0, 0.3, 0.1, 0.2, 0.2, 0.0, 0.2, 0.2]);
    assert!(p[10..].iter().all(|&v| v == 0.0));
    assert!(matches!(pack_input(&desc, &[0.1]), Err(CompileError::Model(_))));
}

#[test]
fn rotations_expose_cyclic_windows() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let k = 6;
    let desc = LayoutDescriptor {
        trees: 3,
        leaves: k,
        n_features: 4,
        tau: (0..3).map(|_| (0..k - 1).map(|_| rng.random_range(0..4)).collect()).collect(),
        block_width: 2 * k - 1,
        n: 64,
    };
    let x = random_x(4, &mut rng);
    let p = pack_input(&desc, &x).unwrap();
    for (l, tau) in desc.tau.iter().enumerate() {
        let mut z: Vec<f64> = tau.iter().map(|&f| x[f]).collect();
        z.push(0.0);
        for i in 0..k {
            let r = p.rotated(i);
            for j in 0..k {
                assert_eq!(r[l * (2 * k - 1) + j], z[(j + i) % k]);
            }
        }
    }
}

fn diagonals_of(mats: &[Array2<f64>], layout: &PackingLayout) -> Vec<SlotVector<f64>> {
    let k = layout.leaves;
    (0..k)
        .map(|i| {
            let mut d = vec![0.0; layout.slots];
            for (l, a) in mats.iter().enumerate() {
                for j in 0..k {
                    d[layout.offset(l) + j] = a[[j, (j + i) % k]];
                }
            }
            d.into()
        })
        .collect()
}

fn replicated(zs: &[Vec<f64>], layout: &PackingLayout) -> Vec<f64> {
    let k = layout.leaves;
    let mut v = vec![0.0; layout.slots];
    for (l, z) in zs.iter().enumerate() {
        for p in 0..layout.block_width() {
            v[layout.offset(l) + p] = z[p % k];
        }
    }
    v
}

#[test]
fn three_by_three_example() {
    let layout = PackingLayout::new(1, 3, 8).unwrap();
    let a = Array2::from_shape_vec((3, 3), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]).unwrap();
    let (x, y, z) = (0.5, -1.5, 2.0);
    let e = engine(8, 3);
    let mut s = Session::new(&e);
    let c = s.encrypt(&replicated(&[vec![x, y, z]], &layout)).unwrap();
    let out = packed_matmul(&mut s, &diagonals_of(&[a], &layout), &[0.0; 8], &c).unwrap();
    let got = s.decrypt(&out).unwrap();
    assert_eq!(&got[..3], &[x + 2.0 * y + 3.0 * z, 4.0 * x + 5.0 * y + 6.0 * z, 7.0 * x + 8.0 * y + 9.0 * z]);
    assert!(got[3..].iter().all(|&v| v == 0.0));
    assert_eq!(s.counters(), OpCounter { additions: 3, plain_multiplications: 3, cipher_multiplications: 0, rotations: 3, depth_consumed: 1 });
    assert_eq!(out.level(), 2);
}

#[test]
fn identity_and_random_blocks() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (l, k) = (8, 5);
    let layout = PackingLayout::new(l, k, 128).unwrap();
    let e = engine(128, 2);
    let zs: Vec<Vec<f64>> = (0..l).map(|_| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let input = replicated(&zs, &layout);
    let mut s = Session::new(&e);
    let c = s.encrypt(&input).unwrap();

    let eye: Vec<_> = (0..l).map(|_| Array2::eye(k)).collect();
    let out = e.decrypt_decode(&packed_matmul(&mut s, &diagonals_of(&eye, &layout), &[0.0; 128], &c).unwrap()).unwrap();
    for (t, z) in zs.iter().enumerate() {
        assert_eq!(&out[layout.offset(t)..layout.offset(t) + k], z.as_slice());
    }

    let mats: Vec<Array2<f64>> = (0..l).map(|_| Array2::from_shape_fn((k, k), |_| rng.random_range(-1.0..1.0))).collect();
    let out = e.decrypt_decode(&packed_matmul(&mut s, &diagonals_of(&mats, &layout), &[0.0; 128], &c).unwrap()).unwrap();
    for (t, (a, z)) in mats.iter().zip(&zs).enumerate() {
        let direct = a.dot(&ndarray::Array1::from(z.clone()));
        for j in 0..k {
            assert!((out[layout.offset(t) + j] - direct[j]).abs() <= 1e-9);
        }
        for j in k..layout.block_width() {
            assert_eq!(out[layout.offset(t) + j], 0.0);
        }
    }
}

#[test]
fn dot_product_examples() {
    let e = engine(4096, 2);
    let mut s = Session::new(&e);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let c: Vec<f64> = (0..4096).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ct = s.encrypt(&c).unwrap();
    let mut e0 = vec![0.0; 4096];
    e0[0] = 1.0;
    assert_eq!(e.decrypt_decode(&dot_product(&mut s, &e0, &ct, 1).unwrap()).unwrap()[0], c[0]);

    let mut small = vec![0.0; 4096];
    small[..4].copy_from_slice(&[1.0, 2.0, 3.0, 4.0]);
    let ones: Vec<f64> = (0..4096).map(|i| if i < 4 { 1.0 } else { 0.0 }).collect();
    let ct4 = s.encrypt(&small).unwrap();
    s.reset_counters();
    assert_eq!(e.decrypt_decode(&dot_product(&mut s, &ones, &ct4, 4).unwrap()).unwrap()[0], 10.0);
    assert_eq!((s.counters().additions, s.counters().rotations, s.counters().plain_multiplications), (2, 2, 1));

    let width = 3150;
    let w: Vec<f64> = (0..4096).map(|i| if i < width { rng.random_range(-1.0..1.0) } else { 0.0 }).collect();
    let expect: f64 = w.iter().zip(&c).map(|(a, b)| a * b).sum();
    let got = e.decrypt_decode(&dot_product(&mut s, &w, &ct, width).unwrap()).unwrap()[0];
    assert!((got - expect).abs() <= 1e-8);
}

#[test]
fn compile_checks_layout_and_depth() {
    assert!(PackingLayout::new(50, 32, 8192).is_ok());
    match PackingLayout::new(70, 64, 8192) {
        Err(CompileError::LayoutOverflow { needed, .. }) => assert_eq!(needed, 8890),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(depth_requirement(7), 10);
    let m = model(3, 4, 2, 3, 7, 4);
    assert!(compile(&m, &EngineParams::reference(64, 10).unwrap()).is_ok());
    match compile(&m, &EngineParams::reference(64, 9).unwrap()) {
        Err(CompileError::DepthOverflow { required: 10, budget: 9, suggestion }) => assert!(suggestion.contains("m <= 4")),
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(compile(&m, &EngineParams::reference(16, 10).unwrap()), Err(CompileError::LayoutOverflow { .. })));
    let tanh = m.with_activation(Activation::Tanh { dilatation: 4.0 }).unwrap();
    assert!(matches!(compile(&tanh, &EngineParams::reference(64, 10).unwrap()), Err(CompileError::Model(_))));
}

#[test]
fn evaluate_matches_clear_polynomial_forward() {
    let m = model(6, 8, 3, 4, 7, 5);
    let hrf = compile(&m, &EngineParams::reference(128, 10).unwrap()).unwrap();
    let e = engine(128, 10);
    let mut s = Session::new(&e);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let desc = hrf.descriptor();
    for _ in 0..1000 {
        let x = random_x(4, &mut rng);
        let c = s.encrypt(&pack_input(&desc, &x).unwrap()).unwrap();
        let (scores, trace) = evaluate_trusted(&mut s, &hrf, &c).unwrap();
        let clear = m.forward(&x).unwrap();
        for (a, b) in scores.iter().zip(&clear) {
            assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
        }
        assert_eq!(trace.depth_consumed(), hrf.depth_requirement());
        assert_eq!(trace.output_level, 0);
    }
}

#[test]
fn layer_operation_counts() {
    let m = model(10, 8, 2, 3, 7, 7);
    let hrf = compile(&m, &EngineParams::reference(256, 10).unwrap()).unwrap();
    let e = engine(256, 10);
    let mut s = Session::new(&e);
    let c = s.encrypt(&pack_input(&hrf.descriptor(), &[0.2, 0.5, 0.9]).unwrap()).unwrap();
    let (_, trace) = evaluate(&mut s, &hrf, &c).unwrap();
    let t = &trace.counts;
    assert_eq!(t.comparison, OpCounter::new(1, 0, 0, 0));
    assert_eq!((t.matching.additions, t.matching.plain_multiplications, t.matching.rotations), (8, 8, 8));
    assert_eq!(t.output.rotations, 16);
    assert_eq!(t.output.additions, 16);
    assert_eq!(t.output.plain_multiplications, 2);
    assert_eq!(t.output_bias.additions, 2);
    let report = complexity_report(&hrf);
    assert!(report.counts.matches(t), "{}\n{}", report.counts, t);
    assert_eq!(s.counters(), t.total());

    let big = complexity_report(&compile(&model(50, 32, 2, 3, 7, 8), &EngineParams::reference(4096, 10).unwrap()).unwrap());
    assert_eq!(big.counts.matching, { let mut o = OpCounter::new(32, 32, 0, 32); o.depth_consumed = 1; o });
    let single = complexity_report(&compile(&model(2, 4, 1, 3, 7, 9), &EngineParams::reference(64, 10).unwrap()).unwrap());
    assert_eq!(single.counts.output.plain_multiplications, 1);
}

#[test]
fn predicted_counts_match_measured() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for case in 0..20 {
        let l = rng.random_range(1..12);
        let k = 1 << rng.random_range(1..5);
        let c = rng.random_range(1..4);
        let deg = [3, 5, 7][rng.random_range(0..3)];
        let m = model(l, k, c, 3, deg, 100 + case);
        let n = (l * (2 * k - 1)).next_power_of_two().max(2);
        let depth = depth_requirement(deg);
        let hrf = compile(&m, &EngineParams::reference(n, depth).unwrap()).unwrap();
        let e = engine(n, depth);
        let mut s = Session::new(&e);
        let x = random_x(3, &mut rng);
        let ct = s.encrypt(&pack_input(&hrf.descriptor(), &x).unwrap()).unwrap();
        let (scores, trace) = evaluate_trusted(&mut s, &hrf, &ct).unwrap();
        assert!(complexity_report(&hrf).counts.matches(&trace.counts), "L={l} K={k} C={c}");
        for (a, b) in scores.iter().zip(m.forward(&x).unwrap()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }
}

#[test]
fn blocks_are_isolated() {
    let m = model(5, 8, 2, 3, 7, 11);
    let full = compile(&m, &EngineParams::reference(128, 10).unwrap()).unwrap();
    let e = engine(128, 10);
    let mut s = Session::new(&e);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for dropped in 0..5 {
        let mut hrf = full.clone();
        let off = hrf.layout().offset(dropped);
        for w in hrf.class_weights_mut() {
            let mut v = w.to_vec();
            v[off..off + 15].iter_mut().for_each(|x| *x = 0.0);
            *w = v.into();
        }
        let x = random_x(3, &mut rng);
        let ct = s.encrypt(&pack_input(&hrf.descriptor(), &x).unwrap()).unwrap();
        let (a, _) = evaluate_trusted(&mut s, &full, &ct).unwrap();
        let (b, _) = evaluate_trusted(&mut s, &hrf, &ct).unwrap();
        let act = m.activation();
        let net = &m.networks()[dropped];
        let contribution = net.output_weights().dot(&net.leaf_features(&x, act).unwrap()) * m.weights()[dropped];
        for cls in 0..2 {
            assert!((a[cls] - b[cls] - contribution[cls]).abs() <= 1e-12);
        }
    }
}

#[test]
fn activation_inputs_stay_in_range() {
    let m = model(8, 16, 2, 5, 7, 13);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let act = m.activation();
    for _ in 0..10_000 {
        let x = random_x(5, &mut rng);
        for net in m.networks() {
            let (z1, z2) = net.preactivations(&x, act).unwrap();
            assert!(z1.iter().chain(z2.iter()).all(|z| (-1.0..=1.0).contains(z)));
        }
    }
    let hrf = compile(&m, &EngineParams::reference(256, 10).unwrap()).unwrap();
    let e = engine(256, 10);
    let mut s = Session::new(&e);
    for _ in 0..50 {
        let ct = s.encrypt(&pack_input(&hrf.descriptor(), &random_x(5, &mut rng)).unwrap()).unwrap();
        let (_, trace) = evaluate_probed(&mut s, &hrf, &ct).unwrap();
        for (lo, hi) in trace.activation_ranges.unwrap() {
            assert!(lo >= -1.0 && hi <= 1.0);
        }
    }
}

#[test]
fn insufficient_input_level_is_reported() {
    let m = model(2, 4, 2, 3, 7, 15);
    let hrf = compile(&m, &EngineParams::reference(64, 10).unwrap()).unwrap();
    let e = engine(64, 12);
    let mut s = Session::new(&e);
    let ct = s.encrypt(&pack_input(&hrf.descriptor(), &[0.1, 0.2, 0.3]).unwrap()).unwrap();
    let low = s.level_down(&ct, 9).unwrap();
    assert!(matches!(evaluate(&mut s, &hrf, &low), Err(CompileError::Engine { stage: "input", .. })));
    // spare levels are fine
    assert!(evaluate(&mut s, &hrf, &ct).is_ok());
}

#[test]
fn compiled_model_roundtrip() {
    let m = model(3, 4, 2, 3, 5, 16);
    let hrf = compile(&m, &EngineParams::reference(64, 10).unwrap()).unwrap();
    let back: HrfModel<f64> = HrfModel::from_json(&hrf.to_json()).unwrap();
    assert_eq!(back, hrf);
    let desc = LayoutDescriptor::from_json(&hrf.descriptor().to_json()).unwrap();
    assert_eq!(desc, hrf.descriptor());
    assert!(desc.to_json().contains("\"L\": 3"));
}
