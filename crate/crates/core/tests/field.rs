use num_bigint::BigUint;
use packmpc::field::{F13, F31, F61};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn reduction_examples() {
    assert_eq!(F13::new(0).value(), 0);
    assert_eq!(F13::new(8191).value(), 0);
    assert_eq!(F13::new(8191 * 8191).value(), 0);
    for v in [0u64, 1, 8190, 8191, 8192, u64::MAX] {
        let once = F13::new(v);
        assert_eq!(F13::new(once.value()), once);
    }
}

#[test]
fn arithmetic_examples() {
    assert_eq!((F13::new(8190) + F13::new(5)).value(), 4);
    assert_eq!(F13::new(3).pow(8190).value(), 1);
    let a = F61::new(987654321987);
    assert_eq!(a * a.inv().unwrap(), F61::ONE);
}

#[test]
fn sqrt_examples() {
    assert_eq!(F13::new(4).sqrt().unwrap().value(), 2);
    assert_eq!(F13::new(1).sqrt().unwrap().value(), 1);
    let r = F13::new(2).sqrt().unwrap().value();
    assert_eq!(r * r % 8191, 2);
    assert!(r <= 4095);
    let brute: Vec<u64> = (0..8191u64).filter(|y| y * y % 8191 == 2).collect();
    assert!(brute.contains(&r));
}

fn check_pairs<const L: u32>(count: usize, seed: u64) {
    let p = BigUint::from((1u64 << L) - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..count {
        let (a, b) = (rng.gen_range(0..(1u64 << L) - 1), rng.gen_range(0..(1u64 << L) - 1));
        let (x, y) = (packmpc::field::Fp::<L>::new(a), packmpc::field::Fp::<L>::new(b));
        let (ba, bb) = (BigUint::from(a), BigUint::from(b));
        assert_eq!(BigUint::from((x * y).value()), (&ba * &bb) % &p);
        assert_eq!(BigUint::from((x + y).value()), (&ba + &bb) % &p);
        assert_eq!(BigUint::from((x - y).value()), (&ba + &p - &bb) % &p);
        assert_eq!(x * y, y * x);
        assert_eq!((x + y) - y, x);
    }
}

#[test]
fn million_random_pairs_match_big_integers() {
    check_pairs::<61>(1_000_000, 1);
    check_pairs::<31>(1_000_000, 2);
}

#[test]
fn square_roots_are_canonical_at_31() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10_000 {
        let x = F31::random(&mut rng);
        let r = (x * x).sqrt().unwrap();
        assert!(r == x || r == -x);
        assert!(r.value() <= F31::MODULUS / 2);
    }
}
