//! Preprocessing: correlated randomness for the online protocols.
//!
//! Material can come from a trusted dealer (no communication) or from the
//! interactive pipeline, which builds everything from batched random
//! sharings, degree transformations and random bits.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Fp;
use crate::pss::{PackedShare, PackingConfig};
use crate::transport::{party_rng, Party, Phase};

/// Masks for one block of `k` output columns of a vector-matrix product:
/// `r` holds `k` packed shares of degree `2d` (row-major `k x k` secrets) and
/// `r_prime` a degree-`d` packed share of the `k` block sums (or of the
/// truncated block sums for a truncation triple).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskTuple<const L: u32> {
    pub r: Vec<Fp<L>>,
    pub r_prime: Fp<L>,
}

pub type VmRandTuple<const L: u32> = MaskTuple<L>;
pub type TruncTriple<const L: u32> = MaskTuple<L>;

/// Slot-wise mask for truncated element-wise products: `r2d` shares
/// `R = sum 2^i b^i` at degree `2d`, `r_prime` shares `R >> ell_x` at degree `d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PmatMask<const L: u32> {
    pub r2d: Fp<L>,
    pub r_prime: Fp<L>,
}

/// `ell` degree-`d` sharings of random bit vectors, least significant first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DreluMask<const L: u32> {
    pub bits: Vec<Fp<L>>,
}

/// Mask for repacking one share: `r` shares `(u_0, .., u_{k-1})` and
/// `parts[i]` shares the constant vector `(u_i, .., u_i)`, all at degree `d`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackTransMask<const L: u32> {
    pub r: Fp<L>,
    pub parts: Vec<Fp<L>>,
}

/// How much of each kind of preprocessed material a computation consumes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    /// degree `2d -> d` pairs
    pub dn_pairs: u64,
    /// degree `d + k - 1 -> d` pairs
    pub public_pairs: u64,
    pub vm_tuples: u64,
    pub trunc_triples: u64,
    pub pmat_masks: u64,
    pub drelu_masks: u64,
    pub pack_trans_masks: u64,
}

impl Manifest {
    pub fn add(&mut self, o: &Manifest) {
        self.dn_pairs += o.dn_pairs;
        self.public_pairs += o.public_pairs;
        self.vm_tuples += o.vm_tuples;
        self.trunc_triples += o.trunc_triples;
        self.pmat_masks += o.pmat_masks;
        self.drelu_masks += o.drelu_masks;
        self.pack_trans_masks += o.pack_trans_masks;
    }

    pub fn times(&self, m: u64) -> Manifest {
        Manifest {
            dn_pairs: self.dn_pairs * m,
            public_pairs: self.public_pairs * m,
            vm_tuples: self.vm_tuples * m,
            trunc_triples: self.trunc_triples * m,
            pmat_masks: self.pmat_masks * m,
            drelu_masks: self.drelu_masks * m,
            pack_trans_masks: self.pack_trans_masks * m,
        }
    }

    /// Random bit vectors needed to build this material.
    pub fn random_bits(&self, ell: u32) -> u64 {
        (self.trunc_triples + self.pmat_masks + self.drelu_masks) * ell as u64
    }
}

/// One party's store of preprocessed material. Online protocols pop from the
/// front and fail with [`Error::MissingRandomness`] when a queue runs dry.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Material<const L: u32> {
    pub dn_pairs: VecDeque<(Fp<L>, Fp<L>)>,
    pub public_pairs: VecDeque<(Fp<L>, Fp<L>)>,
    pub vm_tuples: VecDeque<VmRandTuple<L>>,
    pub trunc_triples: VecDeque<TruncTriple<L>>,
    pub pmat_masks: VecDeque<PmatMask<L>>,
    pub drelu_masks: VecDeque<DreluMask<L>>,
    pub pack_trans_masks: VecDeque<PackTransMask<L>>,
}

fn take<T>(q: &mut VecDeque<T>, count: usize, what: &str) -> Result<Vec<T>> {
    if q.len() < count {
        return Err(Error::MissingRandomness(format!("need {count} {what}, have {}", q.len())));
    }
    Ok(q.drain(..count).collect())
}

impl<const L: u32> Material<L> {
    pub fn remaining(&self) -> Manifest {
        Manifest {
            dn_pairs: self.dn_pairs.len() as u64,
            public_pairs: self.public_pairs.len() as u64,
            vm_tuples: self.vm_tuples.len() as u64,
            trunc_triples: self.trunc_triples.len() as u64,
            pmat_masks: self.pmat_masks.len() as u64,
            drelu_masks: self.drelu_masks.len() as u64,
            pack_trans_masks: self.pack_trans_masks.len() as u64,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.remaining() == Manifest::default()
    }

    pub fn append(&mut self, mut other: Material<L>) {
        self.dn_pairs.append(&mut other.dn_pairs);
        self.public_pairs.append(&mut other.public_pairs);
        self.vm_tuples.append(&mut other.vm_tuples);
        self.trunc_triples.append(&mut other.trunc_triples);
        self.pmat_masks.append(&mut other.pmat_masks);
        self.drelu_masks.append(&mut other.drelu_masks);
        self.pack_trans_masks.append(&mut other.pack_trans_masks);
    }

    /// Pairs for a degree transformation from `from` down to `d`.
    pub fn take_pairs(&mut self, cfg: &PackingConfig<L>, from: usize, count: usize) -> Result<Vec<(Fp<L>, Fp<L>)>> {
        if from == 2 * cfg.d() {
            take(&mut self.dn_pairs, count, "degree 2d pairs")
        } else if from == cfg.d() + cfg.k() - 1 {
            take(&mut self.public_pairs, count, "degree d+k-1 pairs")
        } else {
            Err(Error::MissingRandomness(format!("no pairs for degree {from}")))
        }
    }
    pub fn take_vm_tuples(&mut self, count: usize) -> Result<Vec<VmRandTuple<L>>> {
        take(&mut self.vm_tuples, count, "vector-matrix tuples")
    }
    pub fn take_trunc_triples(&mut self, count: usize) -> Result<Vec<TruncTriple<L>>> {
        take(&mut self.trunc_triples, count, "truncation triples")
    }
    pub fn take_pmat_masks(&mut self, count: usize) -> Result<Vec<PmatMask<L>>> {
        take(&mut self.pmat_masks, count, "truncation masks")
    }
    pub fn take_drelu_masks(&mut self, count: usize) -> Result<Vec<DreluMask<L>>> {
        take(&mut self.drelu_masks, count, "comparison masks")
    }
    pub fn take_pack_trans_masks(&mut self, count: usize) -> Result<Vec<PackTransMask<L>>> {
        take(&mut self.pack_trans_masks, count, "repacking masks")
    }

    /// Serializes to little-endian u64 words: seven counts, then each queue.
    pub fn to_words(&self) -> Vec<u64> {
        let m = self.remaining();
        let mut w = vec![
            m.dn_pairs,
            m.public_pairs,
            m.vm_tuples,
            m.trunc_triples,
            m.pmat_masks,
            m.drelu_masks,
            m.pack_trans_masks,
        ];
        for (a, b) in self.dn_pairs.iter().chain(&self.public_pairs) {
            w.push(a.value());
            w.push(b.value());
        }
        for t in self.vm_tuples.iter().chain(&self.trunc_triples) {
            w.push(t.r.len() as u64);
            w.extend(t.r.iter().map(|v| v.value()));
            w.push(t.r_prime.value());
        }
        for m in &self.pmat_masks {
            w.push(m.r2d.value());
            w.push(m.r_prime.value());
        }
        for m in &self.drelu_masks {
            w.push(m.bits.len() as u64);
            w.extend(m.bits.iter().map(|v| v.value()));
        }
        for m in &self.pack_trans_masks {
            w.push(m.parts.len() as u64);
            w.push(m.r.value());
            w.extend(m.parts.iter().map(|v| v.value()));
        }
        w
    }

    pub fn from_words(words: &[u64]) -> Result<Self> {
        let mut it = words.iter().copied();
        let mut next = || it.next().ok_or_else(|| Error::Format("truncated material".into()));
        let mut counts = [0u64; 7];
        for c in counts.iter_mut() {
            *c = next()?;
        }
        let mut m = Material::default();
        let fe = |next: &mut dyn FnMut() -> Result<u64>| -> Result<Fp<L>> { Fp::from_canonical(next()?) };
        for _ in 0..counts[0] {
            m.dn_pairs.push_back((fe(&mut next)?, fe(&mut next)?));
        }
        for _ in 0..counts[1] {
            m.public_pairs.push_back((fe(&mut next)?, fe(&mut next)?));
        }
        for q in 0..2 {
            for _ in 0..counts[2 + q] {
                let len = next()? as usize;
                let r = (0..len).map(|_| fe(&mut next)).collect::<Result<Vec<_>>>()?;
                let t = MaskTuple { r, r_prime: fe(&mut next)? };
                if q == 0 {
                    m.vm_tuples.push_back(t);
                } else {
                    m.trunc_triples.push_back(t);
                }
            }
        }
        for _ in 0..counts[4] {
            m.pmat_masks.push_back(PmatMask { r2d: fe(&mut next)?, r_prime: fe(&mut next)? });
        }
        for _ in 0..counts[5] {
            let len = next()? as usize;
            let bits = (0..len).map(|_| fe(&mut next)).collect::<Result<Vec<_>>>()?;
            m.drelu_masks.push_back(DreluMask { bits });
        }
        for _ in 0..counts[6] {
            let len = next()? as usize;
            let r = fe(&mut next)?;
            let parts = (0..len).map(|_| fe(&mut next)).collect::<Result<Vec<_>>>()?;
            m.pack_trans_masks.push_back(PackTransMask { r, parts });
        }
        if next().is_ok() {
            return Err(Error::Format("trailing material words".into()));
        }
        Ok(m)
    }
}

/// Random `ell`-bit integer split into bits, least significant first.
fn random_bits<const L: u32, R: Rng + ?Sized>(rng: &mut R) -> Vec<u64> {
    (0..L).map(|_| rng.gen_range(0..2u64)).collect()
}

/// `(sum_i 2^i b_i, sum_{i >= ell_x} 2^(i - ell_x) b_i)` as field elements.
pub fn compose_bits<const L: u32>(bits: &[u64], ell_x: u32) -> (Fp<L>, Fp<L>) {
    let mut q = Fp::ZERO;
    let mut hi = Fp::ZERO;
    for (i, &b) in bits.iter().enumerate() {
        if b == 1 {
            q += Fp::new(1u64 << i);
            if i as u32 >= ell_x {
                hi += Fp::new(1u64 << (i as u32 - ell_x));
            }
        }
    }
    (q, hi)
}

/// A trusted dealer that produces every party's material at once.
pub struct Dealer<const L: u32> {
    cfg: Arc<PackingConfig<L>>,
    ell_x: u32,
}

impl<const L: u32> Dealer<L> {
    pub fn new(cfg: Arc<PackingConfig<L>>, ell_x: u32) -> Self {
        Dealer { cfg, ell_x }
    }

    fn rand_vec<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Fp<L>> {
        (0..self.cfg.k()).map(|_| Fp::random(rng)).collect()
    }

    fn pair<R: Rng + ?Sized>(&self, from: usize, rng: &mut R) -> Result<(Vec<Fp<L>>, Vec<Fp<L>>)> {
        let s = self.rand_vec(rng);
        Ok((self.cfg.share_values(&s, from, rng)?, self.cfg.share_values(&s, self.cfg.d(), rng)?))
    }

    /// Block-structured tuple: `k` row sharings at `2d` plus the per-row
    /// sums (optionally truncated) at `d`.
    fn block_tuple<R: Rng + ?Sized>(&self, trunc: bool, rng: &mut R) -> Result<Vec<MaskTuple<L>>> {
        let (k, d) = (self.cfg.k(), self.cfg.d());
        let mut rows = Vec::with_capacity(k);
        let mut sums = Vec::with_capacity(k);
        for _ in 0..k {
            let (row, sum) = if trunc {
                let bits = random_bits::<L, _>(rng);
                let (q, hi) = compose_bits::<L>(&bits, self.ell_x);
                let mut row: Vec<Fp<L>> = (1..k).map(|_| Fp::random(rng)).collect();
                let rest: Fp<L> = row.iter().copied().sum();
                row.insert(0, q - rest);
                (row, hi)
            } else {
                let row = self.rand_vec(rng);
                let s = row.iter().copied().sum();
                (row, s)
            };
            rows.push(self.cfg.share_values(&row, 2 * d, rng)?);
            sums.push(sum);
        }
        let rp = self.cfg.share_values(&sums, d, rng)?;
        Ok((0..self.cfg.n()).map(|j| MaskTuple { r: rows.iter().map(|r| r[j]).collect(), r_prime: rp[j] }).collect())
    }

    pub fn deal<R: Rng + ?Sized>(&self, m: &Manifest, rng: &mut R) -> Result<Vec<Material<L>>> {
        let (n, d, k) = (self.cfg.n(), self.cfg.d(), self.cfg.k());
        let mut out: Vec<Material<L>> = (0..n).map(|_| Material::default()).collect();
        for _ in 0..m.dn_pairs {
            let (a, b) = self.pair(2 * d, rng)?;
            for j in 0..n {
                out[j].dn_pairs.push_back((a[j], b[j]));
            }
        }
        for _ in 0..m.public_pairs {
            let (a, b) = self.pair(d + k - 1, rng)?;
            for j in 0..n {
                out[j].public_pairs.push_back((a[j], b[j]));
            }
        }
        for _ in 0..m.vm_tuples {
            for (j, t) in self.block_tuple(false, rng)?.into_iter().enumerate() {
                out[j].vm_tuples.push_back(t);
            }
        }
        for _ in 0..m.trunc_triples {
            for (j, t) in self.block_tuple(true, rng)?.into_iter().enumerate() {
                out[j].trunc_triples.push_back(t);
            }
        }
        for _ in 0..m.pmat_masks {
            let mut full = Vec::with_capacity(k);
            let mut hi = Vec::with_capacity(k);
            for _ in 0..k {
                let (q, h) = compose_bits::<L>(&random_bits::<L, _>(rng), self.ell_x);
                full.push(q);
                hi.push(h);
            }
            let a = self.cfg.share_values(&full, 2 * d, rng)?;
            let b = self.cfg.share_values(&hi, d, rng)?;
            for j in 0..n {
                out[j].pmat_masks.push_back(PmatMask { r2d: a[j], r_prime: b[j] });
            }
        }
        for _ in 0..m.drelu_masks {
            let mut per_party = vec![Vec::with_capacity(L as usize); n];
            for _ in 0..L {
                let bits: Vec<Fp<L>> = (0..k).map(|_| Fp::new(rng.gen_range(0..2u64))).collect();
                for (j, s) in self.cfg.share_values(&bits, d, rng)?.into_iter().enumerate() {
                    per_party[j].push(s);
                }
            }
            for (j, bits) in per_party.into_iter().enumerate() {
                out[j].drelu_masks.push_back(DreluMask { bits });
            }
        }
        for _ in 0..m.pack_trans_masks {
            let u = self.rand_vec(rng);
            let r = self.cfg.share_values(&u, d, rng)?;
            let parts: Vec<Vec<Fp<L>>> =
                u.iter().map(|&ui| self.cfg.share_values(&vec![ui; k], d, rng)).collect::<Result<_>>()?;
            for j in 0..n {
                out[j].pack_trans_masks.push_back(PackTransMask { r: r[j], parts: parts.iter().map(|p| p[j]).collect() });
            }
        }
        Ok(out)
    }
}

/// Convenience wrapper: deterministic dealer output for `seed`.
pub fn deal<const L: u32>(cfg: &Arc<PackingConfig<L>>, ell_x: u32, m: &Manifest, seed: u64) -> Result<Vec<Material<L>>> {
    let mut rng = party_rng(seed, 0);
    Dealer::new(cfg.clone(), ell_x).deal(m, &mut rng)
}

/// Kinds of random sharings produced by one batched pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RandomKind {
    /// uniform packed vector at the given degree
    Packed(usize),
    /// packed sharing of a constant vector `(u, .., u)`
    Constant(usize),
    /// packed sharing of zero
    Zero(usize),
    /// the same uniform vector at two degrees
    Pair(usize, usize),
    /// one uniform secret Shamir-shared at secret position `slot` at two degrees
    ShamirPair { slot: usize, from: usize, to: usize },
    /// `k` row sharings at `2d` and Shamir sharings of the row sums at
    /// threshold `t`, row `u` stored at position `s_u`
    VmDeal,
}

impl RandomKind {
    pub fn components(&self, k: usize) -> usize {
        match self {
            RandomKind::Packed(_) | RandomKind::Constant(_) | RandomKind::Zero(_) => 1,
            RandomKind::Pair(..) | RandomKind::ShamirPair { .. } => 2,
            RandomKind::VmDeal => 2 * k,
        }
    }
}

/// `[component][party]` shares of one party's contribution.
fn contribution<const L: u32, R: Rng + ?Sized>(
    cfg: &PackingConfig<L>,
    kind: RandomKind,
    rng: &mut R,
) -> Result<Vec<Vec<Fp<L>>>> {
    let k = cfg.k();
    let rv = |rng: &mut R| -> Vec<Fp<L>> { (0..k).map(|_| Fp::random(rng)).collect() };
    Ok(match kind {
        RandomKind::Packed(deg) => {
            let s = rv(rng);
            vec![cfg.share_values(&s, deg, rng)?]
        }
        RandomKind::Constant(deg) => {
            let u = Fp::random(rng);
            vec![cfg.share_values(&vec![u; k], deg, rng)?]
        }
        RandomKind::Zero(deg) => vec![cfg.share_values(&[], deg, rng)?],
        RandomKind::Pair(a, b) => {
            let s = rv(rng);
            vec![cfg.share_values(&s, a, rng)?, cfg.share_values(&s, b, rng)?]
        }
        RandomKind::ShamirPair { slot, from, to } => {
            let s = Fp::random(rng);
            let pos = cfg.secret_position(slot);
            vec![cfg.shamir_share(s, pos, from, rng)?, cfg.shamir_share(s, pos, to, rng)?]
        }
        RandomKind::VmDeal => {
            let mut comps = Vec::with_capacity(2 * k);
            let mut sums = Vec::with_capacity(k);
            for _ in 0..k {
                let row = rv(rng);
                sums.push(row.iter().copied().sum::<Fp<L>>());
                comps.push(cfg.share_values(&row, 2 * cfg.d(), rng)?);
            }
            for (u, s) in sums.into_iter().enumerate() {
                comps.push(cfg.shamir_share(s, cfg.secret_position(u), cfg.t(), rng)?);
            }
            comps
        }
    })
}

/// Batched random sharing with Vandermonde extraction: every party deals
/// `ceil(count / (n - t))` contributions per request and each batch of `n`
/// contributions yields `n - t` outputs. One round in total. Returns
/// `[request][item][component]` shares.
pub fn random_pass<const L: u32>(party: &mut Party<L>, requests: &[(RandomKind, usize)]) -> Result<Vec<Vec<Vec<Fp<L>>>>> {
    let cfg = party.cfg.clone();
    let (n, k) = (cfg.n(), cfg.k());
    let m = n - cfg.t();
    let units: Vec<usize> = requests.iter().map(|&(_, c)| c.div_ceil(m)).collect();
    let mut outgoing: Vec<Vec<Fp<L>>> = vec![Vec::new(); n];
    for (&(kind, _), &u) in requests.iter().zip(&units) {
        for _ in 0..u {
            for comp in contribution(&cfg, kind, &mut party.rng)? {
                for (j, v) in comp.into_iter().enumerate() {
                    outgoing[j].push(v);
                }
            }
        }
    }
    let total: usize = outgoing[0].len();
    let incoming = if total == 0 { vec![Vec::new(); n] } else { party.net.exchange_all(outgoing)? };
    // van[i][h] = (i + 1)^h
    let van: Vec<Vec<Fp<L>>> = (1..=n as u64)
        .map(|a| {
            let mut row = Vec::with_capacity(m);
            let mut p = Fp::ONE;
            for _ in 0..m {
                row.push(p);
                p *= Fp::new(a);
            }
            row
        })
        .collect();
    let mut results = Vec::with_capacity(requests.len());
    let mut offset = 0;
    let mut column = vec![Fp::ZERO; n];
    for (&(kind, count), &u) in requests.iter().zip(&units) {
        let comps = kind.components(k);
        let mut items: Vec<Vec<Fp<L>>> = Vec::with_capacity(u * m);
        for _ in 0..u {
            let mut outs = vec![vec![Fp::ZERO; comps]; m];
            for c in 0..comps {
                for i in 0..n {
                    column[i] = incoming[i][offset + c];
                }
                for (h, out) in outs.iter_mut().enumerate() {
                    let mut acc = Fp::ZERO;
                    for i in 0..n {
                        acc += van[i][h] * column[i];
                    }
                    out[c] = acc;
                }
            }
            offset += comps;
            items.extend(outs);
        }
        items.truncate(count);
        results.push(items);
    }
    debug_assert_eq!(offset, total);
    Ok(results)
}

/// Degree-`d` random packed sharings.
pub fn gen_random<const L: u32>(party: &mut Party<L>, count: usize) -> Result<Vec<PackedShare<L>>> {
    let d = party.d();
    let r = random_pass(party, &[(RandomKind::Packed(d), count)])?;
    Ok(r[0].iter().map(|c| PackedShare::new(party.id, c[0], d)).collect())
}

/// Degree transformation with explicit pairs `(mask at from, mask at to)`:
/// parties open `x + mask` to party 1, which reshares at `to`.
pub fn degree_trans_with<const L: u32>(
    party: &mut Party<L>,
    values: &[Fp<L>],
    pairs: &[(Fp<L>, Fp<L>)],
    from: usize,
    to: usize,
) -> Result<Vec<Fp<L>>> {
    if values.len() != pairs.len() {
        return Err(Error::MissingRandomness(format!("{} pairs for {} shares", pairs.len(), values.len())));
    }
    if values.is_empty() {
        return Ok(Vec::new());
    }
    let masked: Vec<Fp<L>> = values.iter().zip(pairs).map(|(v, p)| *v + p.0).collect();
    let cfg = party.cfg.clone();
    let n = cfg.n();
    let gathered = party.net.gather_at_p1(masked)?;
    let outgoing = match gathered {
        Some(all) => {
            let mut out = vec![Vec::with_capacity(values.len()); n];
            let mut col = vec![Fp::ZERO; n];
            for idx in 0..values.len() {
                for j in 0..n {
                    col[j] = all[j][idx];
                }
                let secrets = cfg.reconstruct_values(&col, from)?;
                for (j, s) in cfg.share_values(&secrets, to, &mut party.rng)?.into_iter().enumerate() {
                    out[j].push(s);
                }
            }
            Some(out)
        }
        None => None,
    };
    let fresh = party.net.scatter_from_p1(outgoing, values.len())?;
    Ok(fresh.into_iter().zip(pairs).map(|(v, p)| v - p.1).collect())
}

/// Online degree transformation down to `d` using preprocessed pairs.
pub fn degree_trans<const L: u32>(party: &mut Party<L>, shares: &[PackedShare<L>]) -> Result<Vec<PackedShare<L>>> {
    if shares.is_empty() {
        return Ok(Vec::new());
    }
    let from = shares[0].degree;
    if shares.iter().any(|s| s.degree != from) {
        return Err(Error::DegreeMismatch(from, shares.iter().find(|s| s.degree != from).unwrap().degree));
    }
    let cfg = party.cfg.clone();
    let pairs = party.material.take_pairs(&cfg, from, shares.len())?;
    let vals: Vec<Fp<L>> = shares.iter().map(|s| s.value).collect();
    let out = degree_trans_with(party, &vals, &pairs, from, cfg.d())?;
    Ok(out.into_iter().map(|v| PackedShare::new(party.id, v, cfg.d())).collect())
}

/// Shamir variant: `items[i] = (share, secret slot)` of a secret stored at
/// `s_slot`; reduces each from degree `from` to `to`.
pub fn shamir_degree_trans_with<const L: u32>(
    party: &mut Party<L>,
    items: &[(Fp<L>, usize)],
    pairs: &[(Fp<L>, Fp<L>)],
    from: usize,
    to: usize,
) -> Result<Vec<Fp<L>>> {
    if items.len() != pairs.len() {
        return Err(Error::MissingRandomness(format!("{} pairs for {} shares", pairs.len(), items.len())));
    }
    if items.is_empty() {
        return Ok(Vec::new());
    }
    let cfg = party.cfg.clone();
    let n = cfg.n();
    let masked: Vec<Fp<L>> = items.iter().zip(pairs).map(|(v, p)| v.0 + p.0).collect();
    let gathered = party.net.gather_at_p1(masked)?;
    let outgoing = match gathered {
        Some(all) => {
            let mut out = vec![Vec::with_capacity(items.len()); n];
            let mut col = vec![Fp::ZERO; n];
            for (idx, &(_, slot)) in items.iter().enumerate() {
                for j in 0..n {
                    col[j] = all[j][idx];
                }
                let pos = cfg.secret_position(slot);
                let s = cfg.shamir_reconstruct(&col, pos, from)?;
                for (j, v) in cfg.shamir_share(s, pos, to, &mut party.rng)?.into_iter().enumerate() {
                    out[j].push(v);
                }
            }
            Some(out)
        }
        None => None,
    };
    let fresh = party.net.scatter_from_p1(outgoing, items.len())?;
    Ok(fresh.into_iter().zip(pairs).map(|(v, p)| v - p.1).collect())
}

/// Opens degree-`degree` shares to everybody: party 1 reconstructs and
/// broadcasts. Returns `k` values per share.
pub fn open<const L: u32>(party: &mut Party<L>, values: &[Fp<L>], degree: usize) -> Result<Vec<Vec<Fp<L>>>> {
    if values.is_empty() {
        return Ok(Vec::new());
    }
    let cfg = party.cfg.clone();
    let (n, k) = (cfg.n(), cfg.k());
    let gathered = party.net.gather_at_p1(values.to_vec())?;
    let flat = match gathered {
        Some(all) => {
            let mut flat = Vec::with_capacity(values.len() * k);
            let mut col = vec![Fp::ZERO; n];
            for idx in 0..values.len() {
                for j in 0..n {
                    col[j] = all[j][idx];
                }
                flat.extend(cfg.reconstruct_values(&col, degree)?);
            }
            Some(flat)
        }
        None => None,
    };
    let flat = party.net.broadcast_from_p1(flat, values.len() * k)?;
    Ok(flat.chunks(k).map(|c| c.to_vec()).collect())
}

/// Degree-`d` sharings of uniformly random bit vectors, from random squares.
/// Vectors whose square has a zero slot are discarded and regenerated.
pub fn random_bits_interactive<const L: u32>(party: &mut Party<L>, count: usize) -> Result<Vec<Fp<L>>> {
    let (d, k) = (party.d(), party.k());
    let inv2 = Fp::<L>::new(2).inv()?;
    let mut bits = Vec::with_capacity(count);
    for _ in 0..MAX_BIT_ATTEMPTS {
        let need = count - bits.len();
        if need == 0 {
            break;
        }
        let st = bit_stage(party, need, &[], 0)?;
        let reduced = degree_trans_with(party, &st.c, &st.c_pairs, d + k - 1, d)?;
        bits.extend(reduced.into_iter().map(|v| (v + Fp::ONE) * inv2));
    }
    if bits.len() < count {
        return Err(Error::ZeroSquare);
    }
    Ok(bits)
}

const MAX_BIT_ATTEMPTS: usize = 8;

/// Output of the first bit-generation stages: `c = a / sqrt(a^2)` at degree
/// `d + k - 1` for the usable vectors together with their reduction pairs.
struct BitStage<const L: u32> {
    c: Vec<Fp<L>>,
    c_pairs: Vec<(Fp<L>, Fp<L>)>,
    extra_pairs: Vec<(Fp<L>, Fp<L>)>,
    rest: Vec<Vec<Vec<Fp<L>>>>,
}

/// Random pass (with the caller's extra requests), squaring and opening.
fn bit_stage<const L: u32>(
    party: &mut Party<L>,
    need: usize,
    more: &[(RandomKind, usize)],
    extra_pairs: usize,
) -> Result<BitStage<L>> {
    let cfg = party.cfg.clone();
    let (d, k) = (cfg.d(), cfg.k());
    let mut reqs = vec![
        (RandomKind::Packed(d), need),
        (RandomKind::Pair(2 * d, d), need),
        (RandomKind::Pair(d + k - 1, d), need + extra_pairs),
    ];
    reqs.extend_from_slice(more);
    let mut r = random_pass(party, &reqs)?;
    let rest = r.split_off(3);
    let a: Vec<Fp<L>> = r[0].iter().map(|c| c[0]).collect();
    let dn: Vec<(Fp<L>, Fp<L>)> = r[1].iter().map(|c| (c[0], c[1])).collect();
    let mut pubp: Vec<(Fp<L>, Fp<L>)> = r[2].iter().map(|c| (c[0], c[1])).collect();
    let extra = pubp.split_off(need);
    let sq: Vec<Fp<L>> = a.iter().map(|v| *v * *v).collect();
    let sq = degree_trans_with(party, &sq, &dn, 2 * d, d)?;
    let opened = open(party, &sq, d)?;
    let mut c = Vec::with_capacity(need);
    let mut c_pairs = Vec::with_capacity(need);
    for (idx, vals) in opened.iter().enumerate() {
        if vals.iter().any(|v| v.is_zero()) {
            continue;
        }
        let mut binv = Vec::with_capacity(k);
        for v in vals {
            binv.push(v.sqrt()?.inv()?);
        }
        c.push(a[idx] * cfg.public_eval(&binv, party.id));
        c_pairs.push(pubp[idx]);
    }
    Ok(BitStage { c, c_pairs, extra_pairs: extra, rest })
}

/// Runs the interactive preprocessing pipeline and returns this party's
/// material. All parties must call it with the same manifest.
pub fn generate_interactive<const L: u32>(party: &mut Party<L>, m: &Manifest, ell_x: u32) -> Result<Material<L>> {
    let prev = party.net.phase();
    party.net.set_phase(Phase::Offline);
    let res = interactive(party, m, ell_x);
    party.net.set_phase(prev);
    res
}

fn interactive<const L: u32>(party: &mut Party<L>, m: &Manifest, ell_x: u32) -> Result<Material<L>> {
    let cfg = party.cfg.clone();
    let (d, k) = (cfg.d(), cfg.k());
    let me = party.id;
    let ell = L as usize;
    let nbits = m.random_bits(L) as usize;
    let n_trunc = m.trunc_triples as usize;
    let n_pack = m.pack_trans_masks as usize;

    // stage 1: every random sharing in one pass
    let mut more = vec![
        (RandomKind::Pair(2 * d, d), m.dn_pairs as usize),
        (RandomKind::Pair(d + k - 1, d), m.public_pairs as usize),
        (RandomKind::VmDeal, m.vm_tuples as usize),
        (RandomKind::Packed(d), n_trunc * (k - 1)),
        (RandomKind::Zero(2 * d), m.pmat_masks as usize),
        (RandomKind::Constant(d), n_pack * k),
    ];
    for slot in 0..k {
        more.push((RandomKind::ShamirPair { slot, from: 2 * d, to: 2 * d - k + 1 }, n_trunc * k));
    }
    let st = bit_stage(party, nbits, &more, n_pack)?;
    let rest = st.rest;

    // the bit conversions and the repacking masks share one degree transformation
    let kept = st.c.len();
    let constants = &rest[5];
    let mut to_reduce = st.c;
    for t in 0..n_pack {
        to_reduce.push((0..k).fold(Fp::ZERO, |a, i| a + cfg.unit_eval(i, me) * constants[t * k + i][0]));
    }
    let mut all_pairs = st.c_pairs;
    all_pairs.extend_from_slice(&st.extra_pairs);
    let reduced = degree_trans_with(party, &to_reduce, &all_pairs, d + k - 1, d)?;
    let inv2 = Fp::<L>::new(2).inv()?;
    let mut bits: Vec<Fp<L>> = reduced[..kept].iter().map(|v| (*v + Fp::ONE) * inv2).collect();
    let pack_r_d = &reduced[kept..];

    // top up bit vectors lost to zero squares
    if bits.len() < nbits {
        bits.extend(random_bits_interactive(party, nbits - bits.len())?);
    }

    let mut mat = Material::default();
    mat.dn_pairs = rest[0].iter().map(|c| (c[0], c[1])).collect();
    mat.public_pairs = rest[1].iter().map(|c| (c[0], c[1])).collect();
    for c in &rest[2] {
        let r = c[..k].to_vec();
        let rp = (0..k).fold(Fp::ZERO, |a, u| a + cfg.unit_eval(u, me) * c[k + u]);
        mat.vm_tuples.push_back(MaskTuple { r, r_prime: rp });
    }
    for t in 0..n_pack {
        mat.pack_trans_masks.push_back(PackTransMask {
            r: pack_r_d[t],
            parts: (0..k).map(|i| constants[t * k + i][0]).collect(),
        });
    }

    let mut bit_iter = bits.chunks(ell);
    let pow2: Vec<Fp<L>> = (0..L).map(|i| Fp::new(1u64 << i)).collect();
    let compose = |b: &[Fp<L>]| -> (Fp<L>, Fp<L>) {
        let mut q = Fp::ZERO;
        let mut hi = Fp::ZERO;
        for (i, v) in b.iter().enumerate() {
            q += pow2[i] * *v;
            if i as u32 >= ell_x {
                hi += pow2[i - ell_x as usize] * *v;
            }
        }
        (q, hi)
    };

    // truncation triples: stage 5 moves slots between positions and reduces
    if n_trunc > 0 {
        let w_rand = &rest[3];
        let mut items = Vec::with_capacity(n_trunc * k * k);
        let mut pairs = Vec::with_capacity(n_trunc * k * k);
        let mut r_primes = Vec::with_capacity(n_trunc);
        for t in 0..n_trunc {
            let (q, hi) = compose(bit_iter.next().unwrap());
            r_primes.push(hi);
            let mut w: Vec<Fp<L>> = (1..k).map(|i| w_rand[t * (k - 1) + i - 1][0]).collect();
            let s: Fp<L> = w.iter().copied().sum();
            w.insert(0, q - s);
            // item (i, j): slot j of w^i moved to position s_i
            for (i, wi) in w.iter().enumerate() {
                let share = PackedShare::new(me, *wi, d);
                for j in 0..k {
                    let conv = cfg.sh_convert(&share, j, cfg.secret_position(i))?;
                    items.push((conv.value, i));
                    let pr = &rest[6 + i][t * k + j];
                    pairs.push((pr[0], pr[1]));
                }
            }
        }
        let moved = shamir_degree_trans_with(party, &items, &pairs, 2 * d, 2 * d - k + 1)?;
        for t in 0..n_trunc {
            let base = t * k * k;
            let r: Vec<Fp<L>> = (0..k)
                .map(|j| (0..k).fold(Fp::ZERO, |a, i| a + cfg.unit_eval(i, me) * moved[base + i * k + j]))
                .collect();
            mat.trunc_triples.push_back(MaskTuple { r, r_prime: r_primes[t] });
        }
    }

    let zeros = &rest[4];
    for z in zeros {
        let (q, hi) = compose(bit_iter.next().unwrap());
        mat.pmat_masks.push_back(PmatMask { r2d: q + z[0], r_prime: hi });
    }
    for _ in 0..m.drelu_masks {
        mat.drelu_masks.push_back(DreluMask { bits: bit_iter.next().unwrap().to_vec() });
    }
    Ok(mat)
}
