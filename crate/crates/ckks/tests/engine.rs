//! The CKKS engine checked against the exact reference backend.

use hrf_ckks::serial::{read_ciphertexts, write_ciphertexts};
use hrf_ckks::{CkksContext, CkksEngine, CkksParams, Engine, EngineF32};
use hrf_core::engine::BackendKind;
use hrf_core::{EngineError, EngineParams, ReferenceEngine, SlotEngine};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn params(slots: usize, depth: usize) -> EngineParams {
    EngineParams::new(slots, depth, 40, BackendKind::Ckks).unwrap()
}

fn engine(slots: usize, depth: usize, seed: u64) -> Engine {
    CkksEngine::generate(params(slots, depth), seed, None).unwrap()
}

fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn max_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn encoding_roundtrip_bound_at_full_size() {
    let ctx = CkksContext::new(CkksParams::new(14, 0, 40).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let zero = vec![0.0; 8192];
    assert_eq!(ctx.decode(&ctx.encode(&zero, 2f64.powi(40), 0).unwrap()), zero);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let v = random_vec(&mut rng, 8192);
        let back = ctx.decode(&ctx.encode(&v, 2f64.powi(40), 0).unwrap());
        worst = worst.max(max_err(&v, &back));
    }
    // observed around 2^-36
    assert!(worst <= 2f64.powi(-20), "{worst:e}");
}

#[test]
fn fresh_noise_over_many_keypairs() {
    let ctx = std::sync::Arc::new(CkksContext::new(CkksParams::new(14, 0, 40).unwrap()).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0i64;
    for seed in 0..100 {
        let keys = hrf_ckks::keys::generate(&ctx, seed, &[]);
        let v = random_vec(&mut rng, 8192);
        let pt = ctx.encode(&v, 2f64.powi(40), 0).unwrap();
        let ct = ctx.encrypt(&pt, keys.eval.public(), &mut rng);
        let noisy = ctx.plaintext_coefficients(&ctx.decrypt(&ct, &keys.secret));
        let clean = ctx.plaintext_coefficients(&pt);
        let noise = noisy.iter().zip(&clean).map(|(a, b)| (a - b).abs()).max().unwrap();
        worst = worst.max(noise);
    }
    // observed a few thousand
    assert!(worst <= 1 << 20, "{worst}");
}

#[test]
fn encrypt_decrypt_randomized_and_wrong_secret() {
    let e = engine(512, 2, 3);
    let other = engine(512, 2, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let z = random_vec(&mut rng, 512);
    let a = e.encode_encrypt(&z).unwrap();
    let b = e.encode_encrypt(&z).unwrap();
    assert_ne!(a.payload(), b.payload());
    assert!(max_err(&e.decrypt_decode(&a).unwrap(), &z) < 1e-6);
    assert!(max_err(&e.decrypt_decode(&b).unwrap(), &z) < 1e-6);
    // another key set refuses the handle, and a forced decryption is garbage
    assert!(matches!(other.decrypt_decode(&a), Err(EngineError::KeyMismatch { .. })));
    let forged = hrf_core::CipherHandle::new(a.payload().clone(), a.level(), a.scale(), other.engine_id());
    let garbage = other.decrypt_decode(&forged).unwrap();
    assert!(max_err(&garbage, &z) > 1.0);
}

#[test]
fn add_and_multiply_match_reference() {
    let e = engine(2048, 3, 5);
    let r = ReferenceEngine::new(EngineParams::reference(2048, 3).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (x, y) = (random_vec(&mut rng, 2048), random_vec(&mut rng, 2048));
    let (cx, cy) = (e.encode_encrypt(&x).unwrap(), e.encode_encrypt(&y).unwrap());
    let (rx, ry) = (r.encode_encrypt(&x).unwrap(), r.encode_encrypt(&y).unwrap());

    let sum = e.decrypt_decode(&e.add(&cx, &cy).unwrap()).unwrap();
    assert!(max_err(&sum, &r.decrypt_decode(&r.add(&rx, &ry).unwrap()).unwrap()) < 1e-6);

    let prod = e.mul_cipher(&cx, &cy).unwrap();
    assert_eq!(prod.level(), 2);
    let want = r.decrypt_decode(&r.mul_cipher(&rx, &ry).unwrap()).unwrap();
    assert!(max_err(&e.decrypt_decode(&prod).unwrap(), &want) < 1e-5);

    let pm = e.mul_plain(&cx, &y).unwrap();
    assert_eq!(pm.scale(), e.params().scale());
    assert!(max_err(&e.decrypt_decode(&pm).unwrap(), &want) < 1e-5);
}

#[test]
fn rotation_by_one_shifts_left() {
    let e = engine(1024, 1, 6);
    let z: Vec<f64> = (0..1024).map(|i| i as f64 / 1024.0).collect();
    let c = e.encode_encrypt(&z).unwrap();
    let got = e.decrypt_decode(&e.rotate(&c, 1).unwrap()).unwrap();
    // (z_1, ..., z_n) -> (z_2, ..., z_n, z_1)
    let mut want = z.clone();
    want.rotate_left(1);
    assert!(max_err(&got, &want) < 1e-6);
    assert_eq!(e.rotate(&c, 0).unwrap().payload(), c.payload());
    assert!(matches!(e.rotate(&c, 1024), Err(EngineError::InvalidStep { .. })));
}

#[test]
fn missing_rotation_key_is_reported() {
    let e: Engine = CkksEngine::generate(params(256, 1), 1, Some(&[1, 4])).unwrap();
    let c = e.encode_encrypt(&vec![0.5; 256]).unwrap();
    assert!(e.rotate(&c, 5).is_ok());
    assert!(matches!(e.rotate(&c, 2), Err(EngineError::MissingRotationKey { step: 2 })));
}

#[test]
fn scale_stays_nominal_through_the_chain() {
    let depth = 6;
    let e = engine(512, depth, 7);
    let nominal = e.params().scale();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x: Vec<f64> = (0..512).map(|_| rng.random_range(0.9..1.1)).collect();
    let mut c = e.encode_encrypt(&x).unwrap();
    let mut want = x.clone();
    for level in (0..depth).rev() {
        c = e.mul_cipher(&c, &c).unwrap();
        want.iter_mut().for_each(|w| *w *= *w);
        assert_eq!(c.level(), level);
        let drift = (c.scale() / nominal).log2().abs();
        assert!(drift < 2f64.powi(-10), "level {level}: drift {drift:e}");
    }
    let got = e.decrypt_decode(&c).unwrap();
    let rel = got.iter().zip(&want).map(|(g, w)| ((g - w) / w).abs()).fold(0.0, f64::max);
    assert!(rel < 1e-4, "{rel:e}");
    assert!(matches!(e.mul_cipher(&c, &c), Err(EngineError::DepthExhausted { .. })));
}

#[test]
fn contract_checks() {
    let e = engine(256, 2, 8);
    let c = e.encode_encrypt(&vec![0.25; 256]).unwrap();
    assert!(matches!(e.encode_encrypt(&[1.0; 3]), Err(EngineError::Dimension { .. })));
    let mut big = vec![0.0; 256];
    big[0] = 2f64.powi(30);
    assert!(matches!(e.encode_encrypt(&big), Err(EngineError::EncodingRange { .. })));
    let low = e.level_down(&c, 1).unwrap();
    assert_eq!(low.level(), 1);
    assert!(matches!(e.add(&c, &low), Err(EngineError::Alignment(_))));
    assert!(matches!(e.level_down(&low, 2), Err(EngineError::Alignment(_))));
    assert!(max_err(&e.decrypt_decode(&low).unwrap(), &[0.25; 256]) < 1e-6);
    let neg = e.decrypt_decode(&e.negate(&c).unwrap()).unwrap();
    assert!(max_err(&neg, &[-0.25; 256]) < 1e-6);
    let shifted = e.decrypt_decode(&e.add_plain(&c, &[1.0; 256]).unwrap()).unwrap();
    assert!(max_err(&shifted, &[1.25; 256]) < 1e-6);
}

#[test]
fn server_view_cannot_decrypt_and_files_roundtrip() {
    let client = engine(256, 2, 9);
    let server = client.public_view(1);
    let c = client.encode_encrypt(&vec![0.5; 256]).unwrap();
    let out = server.mul_plain(&c, &vec![2.0; 256]).unwrap();
    assert!(server.decrypt_decode(&out).is_err());
    let mut buf = Vec::new();
    write_ciphertexts(&mut buf, client.context(), &[c.clone(), out.clone()]).unwrap();
    let back = read_ciphertexts(&buf[..], client.context()).unwrap();
    assert_eq!(back.len(), 2);
    assert_eq!(back[1].payload(), out.payload());
    assert_eq!(back[1].level(), 1);
    assert!(max_err(&client.decrypt_decode(&back[1]).unwrap(), &[1.0; 256]) < 1e-6);
}

#[test]
fn single_precision_front_end() {
    let e: EngineF32 = CkksEngine::generate(params(128, 1), 10, None).unwrap();
    let z: Vec<f32> = (0..128).map(|i| (i as f32 - 64.0) / 64.0).collect();
    let c = e.encode_encrypt(&z).unwrap();
    let got = e.decrypt_decode(&e.mul_plain(&c, &z).unwrap()).unwrap();
    for (g, v) in got.iter().zip(&z) {
        assert!((g - v * v).abs() < 1e-5);
    }
}

#[derive(Debug, Clone)]
enum Op {
    Add(usize, usize),
    AddPlain(usize),
    MulPlain(usize),
    Mul(usize, usize),
    Rotate(usize, usize),
    Negate(usize),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0usize..8, 0usize..8).prop_map(|(a, b)| Op::Add(a, b)),
        (0usize..8).prop_map(Op::AddPlain),
        (0usize..8).prop_map(Op::MulPlain),
        (0usize..8, 0usize..8).prop_map(|(a, b)| Op::Mul(a, b)),
        (0usize..8, 0usize..64).prop_map(|(a, s)| Op::Rotate(a, s)),
        (0usize..8).prop_map(Op::Negate),
    ]
}

/// Runs the same random program on both backends; operands are aligned
/// with `level_down` first. Returns (depth used, max error).
fn run_program(e: &Engine, r: &ReferenceEngine, ops: &[Op], seed: u64) -> (usize, f64) {
    let n = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_vec(&mut rng, n);
    let mut enc = vec![e.encode_encrypt(&x).unwrap()];
    let mut clear = vec![r.encode_encrypt(&x).unwrap()];
    for op in ops {
        let pick = |i: usize| i % enc.len();
        let plain: Vec<f64> = random_vec(&mut rng, n);
        let (ce, cr) = match *op {
            Op::Add(a, b) | Op::Mul(a, b) => {
                let (a, b) = (pick(a), pick(b));
                let lvl = enc[a].level().min(enc[b].level());
                let (ea, eb) = (e.level_down(&enc[a], lvl).unwrap(), e.level_down(&enc[b], lvl).unwrap());
                let (ra, rb) = (r.level_down(&clear[a], lvl).unwrap(), r.level_down(&clear[b], lvl).unwrap());
                if matches!(op, Op::Add(..)) {
                    (e.add(&ea, &eb), r.add(&ra, &rb))
                } else {
                    (e.mul_cipher(&ea, &eb), r.mul_cipher(&ra, &rb))
                }
            }
            Op::AddPlain(a) => (e.add_plain(&enc[pick(a)], &plain), r.add_plain(&clear[pick(a)], &plain)),
            Op::MulPlain(a) => (e.mul_plain(&enc[pick(a)], &plain), r.mul_plain(&clear[pick(a)], &plain)),
            Op::Rotate(a, s) => (e.rotate(&enc[pick(a)], s), r.rotate(&clear[pick(a)], s)),
            Op::Negate(a) => (e.negate(&enc[pick(a)]), r.negate(&clear[pick(a)])),
        };
        match (ce, cr) {
            (Ok(ce), Ok(cr)) => {
                assert_eq!(ce.level(), cr.level());
                enc.push(ce);
                clear.push(cr);
            }
            (Err(a), Err(b)) => assert_eq!(std::mem::discriminant(&a), std::mem::discriminant(&b)),
            (a, b) => panic!("backends disagree: {:?} vs {:?}", a.err(), b.err()),
        }
    }
    let last = enc.len() - 1;
    let got = e.decrypt_decode(&enc[last]).unwrap();
    let want = r.decrypt_decode(&clear[last]).unwrap();
    let depth = e.params().depth_budget - enc[last].level();
    // messages can grow by additions; compare relative to their size
    let size = want.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    (depth, max_err(&got, &want) / size)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_programs_match_reference(ops in prop::collection::vec(op(), 1..12), seed in any::<u64>()) {
        let e = engine(64, 4, 42);
        let r = ReferenceEngine::new(EngineParams::reference(64, 4).unwrap()).unwrap();
        let (depth, err) = run_program(&e, &r, &ops, seed);
        // envelope: 1e-6 at depth 0, one decade per level
        let tol = 1e-6 * 10f64.powi(depth as i32);
        prop_assert!(err < tol, "depth {} error {:e}", depth, err);
    }

    #[test]
    fn rotations_compose(a in 0usize..64, b in 0usize..64, seed in any::<u64>()) {
        let e = engine(64, 1, 43);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = random_vec(&mut rng, 64);
        let c = e.encode_encrypt(&z).unwrap();
        let two = e.rotate(&e.rotate(&c, a).unwrap(), b).unwrap();
        let one = e.rotate(&c, (a + b) % 64).unwrap();
        let (x, y) = (e.decrypt_decode(&two).unwrap(), e.decrypt_decode(&one).unwrap());
        prop_assert!(max_err(&x, &y) < 1e-6);
        let mut want = z.clone();
        want.rotate_left((a + b) % 64);
        prop_assert!(max_err(&y, &want) < 1e-6);
    }
}
