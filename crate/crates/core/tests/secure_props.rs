use std::sync::OnceLock;

use fedfall_core::exec::Execution;
use fedfall_core::params::ParameterVector;
use fedfall_core::secure::{
    add_encrypted, decrypt_vector, encrypt_vector, encrypted_weighted_sum, keygen, read_payload, scale_encrypted,
    write_payload, FixedPointCodec, HeKeyPair,
};
use proptest::prelude::*;

fn keys() -> &'static HeKeyPair {
    static KEYS: OnceLock<HeKeyPair> = OnceLock::new();
    KEYS.get_or_init(|| keygen(256, 17).unwrap())
}

fn codec() -> FixedPointCodec {
    FixedPointCodec::new(20, 1e6).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn codec_round_trip_is_within_half_a_step(v in -1e5f64..1e5) {
        let c = codec();
        let (k, clipped) = c.encode(v);
        prop_assert!(!clipped);
        prop_assert!((c.decode(k) - v).abs() <= c.max_error());
    }

    #[test]
    fn ciphertext_sum_decrypts_to_plaintext_sum(
        a in prop::collection::vec(-50.0f64..50.0, 1..12),
        shift in -10.0f64..10.0,
        nonce in any::<u64>(),
    ) {
        let b: Vec<f64> = a.iter().map(|x| shift - x * 0.5).collect();
        let k = keys();
        let c = codec();
        let ea = encrypt_vector(&ParameterVector::new(a.clone()), &k.public, &c, nonce, Execution::Sequential).unwrap();
        let eb = encrypt_vector(&ParameterVector::new(b.clone()), &k.public, &c, nonce ^ 1, Execution::Sequential).unwrap();
        let sum = add_encrypted(&ea.vector, &eb.vector, &k.public, Execution::Sequential).unwrap();
        let got = decrypt_vector(&sum, k, &c, Execution::Sequential).unwrap();
        for j in 0..a.len() {
            prop_assert!((got.as_slice()[j] - (a[j] + b[j])).abs() <= 2.0 * c.max_error());
        }
    }

    #[test]
    fn weighted_sum_matches_integer_scaling(
        a in prop::collection::vec(-5.0f64..5.0, 1..6),
        w in 1u64..50,
    ) {
        let k = keys();
        let c = codec();
        let e = encrypt_vector(&ParameterVector::new(a.clone()), &k.public, &c, 9, Execution::Sequential).unwrap().vector;
        let scaled = scale_encrypted(&e, w, &k.public, Execution::Sequential).unwrap();
        prop_assert_eq!(scaled.weight, w);
        let got = decrypt_vector(&scaled, k, &c, Execution::Sequential).unwrap();
        for j in 0..a.len() {
            prop_assert!((got.as_slice()[j] - w as f64 * a[j]).abs() <= w as f64 * c.max_error());
        }
    }
}

#[test]
fn encryption_is_identical_in_parallel() {
    let k = keys();
    let v = ParameterVector::new((0..64).map(|i| i as f64 * 0.37 - 11.0).collect());
    let a = encrypt_vector(&v, &k.public, &codec(), 5, Execution::Sequential).unwrap();
    let b = encrypt_vector(&v, &k.public, &codec(), 5, Execution::Parallel).unwrap();
    assert_eq!(a, b);
}

#[test]
fn encryption_is_randomized_by_nonce() {
    let k = keys();
    let v = ParameterVector::new(vec![1.0, 2.0]);
    let a = encrypt_vector(&v, &k.public, &codec(), 1, Execution::Sequential).unwrap();
    let b = encrypt_vector(&v, &k.public, &codec(), 2, Execution::Sequential).unwrap();
    assert_ne!(a.vector.ciphertexts, b.vector.ciphertexts);
}

#[test]
fn payload_round_trips_and_rejects_foreign_keys() {
    let k = keys();
    let v = ParameterVector::new(vec![0.25, -3.5, 1e3]);
    let e = encrypt_vector(&v, &k.public, &codec(), 3, Execution::Sequential).unwrap().vector;
    let mut buf = Vec::new();
    write_payload(&mut buf, &e).unwrap();
    let back = read_payload(&mut buf.as_slice()).unwrap();
    assert_eq!(back, e);
    assert!(read_payload(&mut &buf[..buf.len() - 3]).is_err());

    let other = keygen(256, 18).unwrap();
    assert!(decrypt_vector(&e, &other, &codec(), Execution::Sequential).is_err());
    let e2 = encrypt_vector(&v, &other.public, &codec(), 3, Execution::Sequential).unwrap().vector;
    assert!(add_encrypted(&e, &e2, &k.public, Execution::Sequential).is_err());
    assert!(encrypted_weighted_sum(&[e, e2], None, &k.public, Execution::Sequential).is_err());
}

#[test]
fn clipped_values_are_counted() {
    let k = keys();
    let c = FixedPointCodec::new(20, 10.0).unwrap();
    let v = ParameterVector::new(vec![5.0, 50.0, -70.0]);
    let e = encrypt_vector(&v, &k.public, &c, 3, Execution::Sequential).unwrap();
    assert_eq!(e.clipped, 2);
    let got = decrypt_vector(&e.vector, k, &c, Execution::Sequential).unwrap();
    assert!((got.as_slice()[1] - 10.0).abs() < 1e-6);
    assert!((got.as_slice()[2] + 10.0).abs() < 1e-6);
}
