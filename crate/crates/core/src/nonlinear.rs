//! Comparison-based protocols on bit-decomposed masks: XOR, prefix
//! products and ORs, bitwise less-than, DReLU, ReLU and max pooling.
//!
//! All of them work slot-wise on packed shares and batch independent
//! instances into the same rounds.

use crate::error::{Error, Result};
use crate::field::Fp;
use crate::linear::pmult_dn;
use crate::offline::{degree_trans, open, Manifest};
use crate::pss::PackedShare;
use crate::transport::Party;

/// Multiplications used by the prefix tree on `len` inputs.
pub fn prefix_tree_mults(len: usize) -> usize {
    let mut count = 0;
    let mut s = 0;
    while (1usize << s) < len {
        count += (0..len).filter(|i| (i >> s) & 1 == 1).count();
        s += 1;
    }
    count
}

/// Depth of the prefix tree on `len` inputs.
pub fn ceil_log2(len: usize) -> usize {
    let mut s = 0;
    while (1usize << s) < len {
        s += 1;
    }
    s
}

/// The public vector `c` as this party's share of a degree-(k-1) sharing.
pub fn public_share<const L: u32>(party: &Party<L>, c: &[Fp<L>]) -> PackedShare<L> {
    PackedShare::new(party.id, party.cfg.public_eval(c, party.id), party.k() - 1)
}

/// Slot-wise XOR of bit sharings: `a + b - 2ab`, then a degree reduction.
/// `a` may have degree `k - 1` (a public vector) or `d`; `b` has degree `d`.
pub fn xor_shares<const L: u32>(
    party: &mut Party<L>,
    a: &[PackedShare<L>],
    b: &[PackedShare<L>],
) -> Result<Vec<PackedShare<L>>> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("xor of {} and {} shares", a.len(), b.len())));
    }
    let n = party.n();
    let two = Fp::new(2);
    let mut c = Vec::with_capacity(a.len());
    for (x, y) in a.iter().zip(b) {
        let prod = x.mul(y, n)?;
        c.push(PackedShare::new(party.id, x.value + y.value - two * prod.value, prod.degree));
    }
    degree_trans(party, &c)
}

/// XOR with public bit vectors `a_pub` (`k` bits each).
pub fn xor_public<const L: u32>(
    party: &mut Party<L>,
    a_pub: &[Vec<Fp<L>>],
    b: &[PackedShare<L>],
) -> Result<Vec<PackedShare<L>>> {
    let a: Vec<PackedShare<L>> = a_pub.iter().map(|v| public_share(party, v)).collect();
    xor_shares(party, &a, b)
}

/// Prefix products of many sequences at once (all of the same length).
/// `ceil(log2 len)` rounds.
pub fn pre_mult<const L: u32>(party: &mut Party<L>, seqs: &[Vec<PackedShare<L>>]) -> Result<Vec<Vec<PackedShare<L>>>> {
    let len = seqs.first().map_or(0, |s| s.len());
    if seqs.iter().any(|s| s.len() != len) {
        return Err(Error::ShapeMismatch("prefix sequences of different lengths".into()));
    }
    let mut cur: Vec<Vec<PackedShare<L>>> = seqs.to_vec();
    let mut s = 0;
    while (1usize << s) < len {
        let targets: Vec<(usize, usize)> =
            (0..len).filter(|i| (i >> s) & 1 == 1).map(|i| (i, ((i >> s) << s) - 1)).collect();
        let mut xs = Vec::with_capacity(targets.len() * seqs.len());
        let mut ys = Vec::with_capacity(targets.len() * seqs.len());
        for seq in &cur {
            for &(i, j) in &targets {
                xs.push(seq[i]);
                ys.push(seq[j]);
            }
        }
        let prods = pmult_dn(party, &xs, &ys)?;
        let mut it = prods.into_iter();
        for seq in cur.iter_mut() {
            for &(i, _) in &targets {
                seq[i] = it.next().unwrap();
            }
        }
        s += 1;
    }
    Ok(cur)
}

/// Prefix ORs of bit sequences via `1 - prod (1 - a_i)`.
pub fn pre_or<const L: u32>(party: &mut Party<L>, seqs: &[Vec<PackedShare<L>>]) -> Result<Vec<Vec<PackedShare<L>>>> {
    let flip = |s: &PackedShare<L>| PackedShare::new(s.owner, Fp::ONE - s.value, s.degree);
    let comp: Vec<Vec<PackedShare<L>>> = seqs.iter().map(|s| s.iter().map(flip).collect()).collect();
    Ok(pre_mult(party, &comp)?.iter().map(|s| s.iter().map(flip).collect()).collect())
}

/// Slot-wise `[a < b]` for public `a` (`k` values per instance) and `b`
/// given by `ell'` bit sharings per instance, least significant first.
/// `ceil(log2 ell') + 2` rounds.
pub fn bitwise_lt<const L: u32>(
    party: &mut Party<L>,
    a_pub: &[Vec<u64>],
    b_bits: &[Vec<PackedShare<L>>],
) -> Result<Vec<PackedShare<L>>> {
    if a_pub.len() != b_bits.len() {
        return Err(Error::ShapeMismatch("bitwise_lt instance counts differ".into()));
    }
    if b_bits.is_empty() {
        return Ok(Vec::new());
    }
    let k = party.k();
    let width = b_bits[0].len();
    if b_bits.iter().any(|b| b.len() != width) || a_pub.iter().any(|a| a.len() != k) {
        return Err(Error::ShapeMismatch("bitwise_lt operand shapes".into()));
    }
    // complemented bits of a, public
    let abar: Vec<Vec<Vec<Fp<L>>>> = a_pub
        .iter()
        .map(|a| (0..width).map(|i| a.iter().map(|&v| Fp::new(1 - ((v >> i) & 1))).collect()).collect())
        .collect();
    let mut pubs = Vec::with_capacity(a_pub.len() * width);
    let mut bbar = Vec::with_capacity(a_pub.len() * width);
    for (e, bits) in b_bits.iter().enumerate() {
        for i in 0..width {
            pubs.push(abar[e][i].clone());
            bbar.push(PackedShare::new(party.id, Fp::ONE - bits[i].value, bits[i].degree));
        }
    }
    let c = xor_public(party, &pubs, &bbar)?;
    // most significant bit first
    let seqs: Vec<Vec<PackedShare<L>>> =
        c.chunks(width).map(|ch| ch.iter().rev().copied().collect()).collect();
    let f_rev = pre_or(party, &seqs)?;
    let mut out = Vec::with_capacity(a_pub.len());
    let k1 = k - 1;
    for (e, f) in f_rev.iter().enumerate() {
        // f^i = f_rev[width - 1 - i]; h^i = f^i - f^{i+1}
        let fi = |i: usize| f[width - 1 - i];
        let mut acc = Fp::ZERO;
        for i in 0..width {
            let h = if i + 1 < width { fi(i).value - fi(i + 1).value } else { fi(i).value };
            acc += party.cfg.public_eval(&abar[e][i], party.id) * h;
        }
        out.push(PackedShare::new(party.id, acc, party.d() + k1));
    }
    degree_trans(party, &out)
}

/// Slot-wise `[a >= 0]` for the signed view of each slot. Valid for slots in
/// `(-p/2, p/2)`; `ceil(log2 ell) + 5` rounds.
pub fn drelu<const L: u32>(party: &mut Party<L>, a: &[PackedShare<L>]) -> Result<Vec<PackedShare<L>>> {
    if a.is_empty() {
        return Ok(Vec::new());
    }
    let d = party.d();
    let masks = party.material.take_drelu_masks(a.len())?;
    let pow2: Vec<Fp<L>> = (0..L).map(|i| Fp::new(1u64 << i)).collect();
    let y: Vec<Fp<L>> = a
        .iter()
        .zip(&masks)
        .map(|(s, m)| {
            let r: Fp<L> = m.bits.iter().zip(&pow2).map(|(b, p)| *b * *p).sum();
            s.value + s.value + r
        })
        .collect();
    let opened = open(party, &y, d)?;
    let y_int: Vec<Vec<u64>> = opened.iter().map(|v| v.iter().map(|x| x.value()).collect()).collect();
    let y0: Vec<Vec<Fp<L>>> = y_int.iter().map(|v| v.iter().map(|x| Fp::new(x & 1)).collect()).collect();
    let r0: Vec<PackedShare<L>> = masks.iter().map(|m| PackedShare::new(party.id, m.bits[0], d)).collect();
    let b = xor_public(party, &y0, &r0)?;
    let r_bits: Vec<Vec<PackedShare<L>>> =
        masks.iter().map(|m| m.bits.iter().map(|v| PackedShare::new(party.id, *v, d)).collect()).collect();
    let c = bitwise_lt(party, &y_int, &r_bits)?;
    let lsb = xor_shares(party, &b, &c)?;
    Ok(lsb.into_iter().map(|s| PackedShare::new(s.owner, Fp::ONE - s.value, s.degree)).collect())
}

/// Slot-wise `max(a, 0)`. `ceil(log2 ell) + 6` rounds.
pub fn relu<const L: u32>(party: &mut Party<L>, a: &[PackedShare<L>]) -> Result<Vec<PackedShare<L>>> {
    let s = drelu(party, a)?;
    pmult_dn(party, &s, a)
}

/// The padding constant for max pooling: the most negative in-range value.
pub fn maxpool_pad<const L: u32>() -> Fp<L> {
    Fp::from_i64(-(1i64 << (L - 2)) + 1)
}

/// Slot-wise maximum over each window (all windows of equal size `m`),
/// padded to a power of two. `ceil(log2 m) * (ceil(log2 ell) + 6)` rounds.
pub fn maxpool<const L: u32>(party: &mut Party<L>, windows: &[Vec<PackedShare<L>>]) -> Result<Vec<PackedShare<L>>> {
    let m = windows.first().map_or(0, |w| w.len());
    if m == 0 || windows.iter().any(|w| w.len() != m) {
        return Err(Error::ShapeMismatch("maxpool windows must be non-empty and equal".into()));
    }
    let width = 1usize << ceil_log2(m);
    let pad = PackedShare::new(party.id, maxpool_pad::<L>(), party.d());
    let mut cur: Vec<Vec<PackedShare<L>>> = windows
        .iter()
        .map(|w| {
            let mut v = w.clone();
            v.resize(width, pad);
            v
        })
        .collect();
    let mut len = width;
    while len > 1 {
        let half = len / 2;
        let mut diffs = Vec::with_capacity(cur.len() * half);
        for w in &cur {
            for j in 0..half {
                diffs.push(w[j].sub(&w[j + half]));
            }
        }
        let r = relu(party, &diffs)?;
        let mut it = r.into_iter();
        for w in cur.iter_mut() {
            for j in 0..half {
                w[j] = it.next().unwrap().add(&w[j + half]);
            }
            w.truncate(half);
        }
        len = half;
    }
    Ok(cur.into_iter().map(|w| w[0]).collect())
}

/// Material consumed per packed share by each protocol at bit width `ell`.
pub fn xor_public_budget() -> Manifest {
    Manifest { public_pairs: 1, ..Default::default() }
}

pub fn pre_mult_budget(len: usize) -> Manifest {
    Manifest { dn_pairs: prefix_tree_mults(len) as u64, ..Default::default() }
}

pub fn bitwise_lt_budget(width: usize) -> Manifest {
    Manifest { dn_pairs: prefix_tree_mults(width) as u64, public_pairs: width as u64 + 1, ..Default::default() }
}

pub fn drelu_budget(ell: u32) -> Manifest {
    let mut m = bitwise_lt_budget(ell as usize);
    m.public_pairs += 1;
    m.dn_pairs += 1;
    m.drelu_masks += 1;
    m
}

pub fn relu_budget(ell: u32) -> Manifest {
    let mut m = drelu_budget(ell);
    m.dn_pairs += 1;
    m
}

/// Per output share for windows of size `m`.
pub fn maxpool_budget(ell: u32, m: usize) -> Manifest {
    relu_budget(ell).times((1u64 << ceil_log2(m)) - 1)
}
