//! Arithmetic modulo a Mersenne prime `p = 2^L - 1`.
//!
//! Elements are kept canonical in `[0, p)`. Signed values use the usual
//! convention: `-x` is stored as `p - x`.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bit widths with a prime `2^L - 1` that the crate supports.
pub const SUPPORTED_WIDTHS: [u32; 3] = [13, 31, 61];

#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct Fp<const L: u32>(u64);

pub type F13 = Fp<13>;
pub type F31 = Fp<31>;
pub type F61 = Fp<61>;

impl<const L: u32> Fp<L> {
    const WIDTH_OK: () = assert!(L == 13 || L == 31 || L == 61, "unsupported Mersenne width");

    pub const MODULUS: u64 = (1u64 << L) - 1;
    pub const BITS: u32 = L;
    pub const ZERO: Self = Fp(0);
    pub const ONE: Self = Fp(1);

    /// Reduces an arbitrary `u64`.
    #[inline]
    pub fn new(v: u64) -> Self {
        #[allow(clippy::let_unit_value)]
        let _ = Self::WIDTH_OK;
        // two folds suffice for L >= 32; small widths need more
        let mut s = v;
        while s > Self::MODULUS {
            s = (s & Self::MODULUS) + (s >> L);
        }
        Fp(if s == Self::MODULUS { 0 } else { s })
    }

    /// Reduces any `u128` by folding the high bits onto the low ones.
    #[inline]
    pub fn from_u128(x: u128) -> Self {
        let p = Self::MODULUS as u128;
        let mut s = x;
        while s > p {
            s = (s & p) + (s >> L);
        }
        Fp(if s == p { 0 } else { s as u64 })
    }

    /// Accepts only canonical values.
    pub fn from_canonical(v: u64) -> Result<Self> {
        if v < Self::MODULUS {
            Ok(Fp(v))
        } else {
            Err(Error::OutOfRange(format!("{v} is not below p = {}", Self::MODULUS)))
        }
    }

    pub fn from_i64(v: i64) -> Self {
        if v >= 0 {
            Self::new(v as u64)
        } else {
            -Self::new(v.unsigned_abs())
        }
    }

    pub fn from_i128(v: i128) -> Self {
        let m = Self::from_u128(v.unsigned_abs());
        if v < 0 {
            -m
        } else {
            m
        }
    }

    #[inline]
    pub fn value(self) -> u64 {
        self.0
    }

    /// Interprets the element as a signed integer in `(-p/2, p/2)`.
    pub fn to_signed(self) -> i64 {
        if self.0 > Self::MODULUS / 2 {
            self.0 as i64 - Self::MODULUS as i64
        } else {
            self.0 as i64
        }
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn pow(self, mut e: u64) -> Self {
        let mut base = self;
        let mut acc = Self::ONE;
        while e > 0 {
            if e & 1 == 1 {
                acc *= base;
            }
            base *= base;
            e >>= 1;
        }
        acc
    }

    pub fn inv(self) -> Result<Self> {
        if self.0 == 0 {
            return Err(Error::DivisionByZero);
        }
        Ok(self.pow(Self::MODULUS - 2))
    }

    pub fn div(self, rhs: Self) -> Result<Self> {
        Ok(self * rhs.inv()?)
    }

    /// The square root in `[0, (p-1)/2]`. Since `p = 3 mod 4` the root is
    /// `a^((p+1)/4)` up to sign.
    pub fn sqrt(self) -> Result<Self> {
        let r = self.pow((Self::MODULUS + 1) / 4);
        if r * r != self {
            return Err(Error::NonResidue);
        }
        let other = -r;
        Ok(if other.0 < r.0 { other } else { r })
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Fp(rng.gen_range(0..Self::MODULUS))
    }

    pub fn random_nonzero<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Fp(rng.gen_range(1..Self::MODULUS))
    }

    /// `sum_i a_i * b_i` with a single reduction every few terms.
    pub fn dot(a: &[Self], b: &[Self]) -> Self {
        debug_assert_eq!(a.len(), b.len());
        // products are below 2^(2L); sixteen of them fit comfortably in a u128
        let mut acc = Self::ZERO;
        for (ca, cb) in a.chunks(16).zip(b.chunks(16)) {
            let mut s: u128 = 0;
            for (x, y) in ca.iter().zip(cb) {
                s += x.0 as u128 * y.0 as u128;
            }
            acc += Self::from_u128(s);
        }
        acc
    }

    pub fn to_le_bytes(self) -> [u8; 8] {
        self.0.to_le_bytes()
    }

    pub fn from_le_bytes(bytes: [u8; 8]) -> Result<Self> {
        Self::from_canonical(u64::from_le_bytes(bytes))
    }

    /// Bit `i` of the canonical representative.
    pub fn bit(self, i: u32) -> u64 {
        (self.0 >> i) & 1
    }
}

impl<const L: u32> fmt::Debug for Fp<L> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl<const L: u32> fmt::Display for Fp<L> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl<const L: u32> From<u64> for Fp<L> {
    fn from(v: u64) -> Self {
        Self::new(v)
    }
}

impl<const L: u32> Add for Fp<L> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        let s = self.0 + rhs.0;
        Fp(if s >= Self::MODULUS { s - Self::MODULUS } else { s })
    }
}

impl<const L: u32> Sub for Fp<L> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        if self.0 >= rhs.0 {
            Fp(self.0 - rhs.0)
        } else {
            Fp(self.0 + Self::MODULUS - rhs.0)
        }
    }
}

impl<const L: u32> Neg for Fp<L> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        if self.0 == 0 {
            self
        } else {
            Fp(Self::MODULUS - self.0)
        }
    }
}

impl<const L: u32> Mul for Fp<L> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        Self::from_u128(self.0 as u128 * rhs.0 as u128)
    }
}

impl<const L: u32> AddAssign for Fp<L> {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<const L: u32> SubAssign for Fp<L> {
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl<const L: u32> MulAssign for Fp<L> {
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

impl<const L: u32> Sum for Fp<L> {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::ZERO, |a, b| a + b)
    }
}

/// Runtime description of the field and the fixed-point precision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldParams {
    pub ell: u32,
    pub ell_x: u32,
}

impl FieldParams {
    pub fn new(ell: u32, ell_x: u32) -> Result<Self> {
        if !SUPPORTED_WIDTHS.contains(&ell) {
            return Err(Error::InvalidConfig(format!(
                "ell = {ell} is not one of {SUPPORTED_WIDTHS:?}"
            )));
        }
        if !is_prime_u64((1u64 << ell) - 1) {
            return Err(Error::InvalidConfig(format!("2^{ell} - 1 is not prime")));
        }
        if ell_x == 0 || ell_x + 2 >= ell {
            return Err(Error::InvalidConfig(format!(
                "ell_x = {ell_x} must satisfy 0 < ell_x < ell - 2"
            )));
        }
        Ok(FieldParams { ell, ell_x })
    }

    pub fn modulus(&self) -> u64 {
        (1u64 << self.ell) - 1
    }
}

/// Deterministic Miller-Rabin for 64-bit integers.
pub fn is_prime_u64(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    for p in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        if n % p == 0 {
            return n == p;
        }
    }
    let mulmod = |a: u64, b: u64| ((a as u128 * b as u128) % n as u128) as u64;
    let powmod = |mut b: u64, mut e: u64| {
        let mut r = 1u64;
        while e > 0 {
            if e & 1 == 1 {
                r = mulmod(r, b);
            }
            b = mulmod(b, b);
            e >>= 1;
        }
        r
    };
    let s = (n - 1).trailing_zeros();
    let d = (n - 1) >> s;
    'witness: for a in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        let mut x = powmod(a, d);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mulmod(x, x);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigUint;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    const P13: u64 = (1 << 13) - 1;

    #[test]
    fn exhaustive_mul_and_add_small_field() {
        // independent reference: plain % on u64
        for a in (0..P13).step_by(7) {
            for b in (0..P13).step_by(13) {
                let x = F13::new(a);
                let y = F13::new(b);
                assert_eq!((x * y).value(), a * b % P13);
                assert_eq!((x + y).value(), (a + b) % P13);
                assert_eq!((x - y).value(), (a + P13 - b) % P13);
            }
        }
    }

    #[test]
    fn inverse_small_field_exhaustive() {
        for a in 1..P13 {
            let x = F13::new(a);
            assert_eq!((x * x.inv().unwrap()).value(), 1);
        }
        assert!(matches!(F13::ZERO.inv(), Err(Error::DivisionByZero)));
    }

    #[test]
    fn sqrt_small_field_exhaustive() {
        let mut residues = 0;
        for a in 0..P13 {
            let x = F13::new(a);
            match x.sqrt() {
                Ok(r) => {
                    residues += 1;
                    assert_eq!(r * r, x);
                    assert!(r.value() <= P13 / 2);
                }
                Err(Error::NonResidue) => {
                    // brute-force confirmation
                    assert!((0..P13).all(|y| y * y % P13 != a));
                }
                Err(e) => panic!("{e}"),
            }
        }
        assert_eq!(residues, (P13 + 1) / 2);
    }

    #[test]
    fn reduction_of_full_u64() {
        assert_eq!(F61::new(u64::MAX).value(), (u64::MAX % F61::MODULUS));
        assert_eq!(F31::new(u64::MAX).value(), (u64::MAX % F31::MODULUS));
        assert_eq!(F61::new(F61::MODULUS).value(), 0);
        assert_eq!(F13::new(u64::MAX).value(), u64::MAX % P13);
    }

    #[test]
    fn signed_round_trip() {
        for v in [-5i64, -1, 0, 1, 4095, -4095] {
            assert_eq!(F13::from_i64(v).to_signed(), v);
            assert_eq!(F61::from_i64(v).to_signed(), v);
        }
        assert_eq!(F61::from_i64(-3).value(), F61::MODULUS - 3);
    }

    #[test]
    fn byte_round_trip_and_canonical_check() {
        let x = F61::new(123456789);
        assert_eq!(F61::from_le_bytes(x.to_le_bytes()).unwrap(), x);
        assert!(F61::from_le_bytes(F61::MODULUS.to_le_bytes()).is_err());
    }

    #[test]
    fn field_params_validation() {
        assert!(FieldParams::new(61, 13).is_ok());
        assert!(FieldParams::new(31, 13).is_ok());
        assert!(FieldParams::new(13, 13).is_err());
        assert!(FieldParams::new(32, 13).is_err());
        assert!(FieldParams::new(61, 0).is_err());
        assert!(is_prime_u64(F61::MODULUS));
        assert!(is_prime_u64(F31::MODULUS));
        assert!(!is_prime_u64((1 << 29) - 1));
    }

    #[test]
    fn dot_matches_naive() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let a: Vec<F61> = (0..100).map(|_| F61::random(&mut rng)).collect();
        let b: Vec<F61> = (0..100).map(|_| F61::random(&mut rng)).collect();
        let naive = a.iter().zip(&b).fold(F61::ZERO, |s, (x, y)| s + *x * *y);
        assert_eq!(F61::dot(&a, &b), naive);
    }

    fn big(v: u64) -> BigUint {
        BigUint::from(v)
    }

    proptest! {
        #[test]
        fn mul_matches_bigint_61(a in 0..F61::MODULUS, b in 0..F61::MODULUS) {
            let p = big(F61::MODULUS);
            let want = (big(a) * big(b)) % &p;
            prop_assert_eq!(big((F61::new(a) * F61::new(b)).value()), want);
        }

        #[test]
        fn field_axioms_31(a in 0..F31::MODULUS, b in 0..F31::MODULUS, c in 0..F31::MODULUS) {
            let (x, y, z) = (F31::new(a), F31::new(b), F31::new(c));
            prop_assert_eq!(x * (y + z), x * y + x * z);
            prop_assert_eq!((x + y) - y, x);
            prop_assert_eq!(x + (-x), F31::ZERO);
            if !x.is_zero() {
                prop_assert_eq!(x * x.inv().unwrap(), F31::ONE);
            }
        }

        #[test]
        fn pow_matches_bigint(a in 0..F61::MODULUS, e in any::<u64>()) {
            let p = big(F61::MODULUS);
            let want = big(a).modpow(&BigUint::from(e), &p);
            prop_assert_eq!(big(F61::new(a).pow(e).value()), want);
        }

        #[test]
        fn sqrt_of_square_61(a in 0..F61::MODULUS) {
            let x = F61::new(a);
            let r = (x * x).sqrt().unwrap();
            prop_assert!(r == x || r == -x);
            prop_assert!(r.value() <= F61::MODULUS / 2);
        }
    }
}
