//! Linear-layer protocols: packed multiplication, vector-matrix products
//! (with and without truncation), slot-wise matrix products with truncation
//! and repacking of a packed share into per-slot constant sharings.

use crate::error::{Error, Result};
use crate::field::Fp;
use crate::offline::{degree_trans, MaskTuple};
use crate::pss::PackedShare;
use crate::transport::Party;

/// A length-`len` vector, `k` consecutive entries per share.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedVector<const L: u32> {
    pub len: usize,
    pub shares: Vec<PackedShare<L>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PackingAxis {
    /// Share `(b, j)` packs rows `b*k .. b*k+k-1` of column `j`; shares are
    /// stored block-major.
    RowBlocks,
    /// Every entry is its own share with `k` independent slots.
    Slots,
}

/// A `rows x cols` matrix of shares.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedMatrix<const L: u32> {
    pub rows: usize,
    pub cols: usize,
    pub axis: PackingAxis,
    pub shares: Vec<PackedShare<L>>,
}

impl<const L: u32> PackedMatrix<L> {
    /// Number of share rows: row blocks for [`PackingAxis::RowBlocks`].
    pub fn share_rows(&self, k: usize) -> usize {
        match self.axis {
            PackingAxis::RowBlocks => self.rows.div_ceil(k),
            PackingAxis::Slots => self.rows,
        }
    }

    pub fn at(&self, r: usize, c: usize) -> &PackedShare<L> {
        &self.shares[r * self.cols + c]
    }
}

/// Element-wise product of packed vectors with a degree reduction. One round.
pub fn pmult_dn<const L: u32>(
    party: &mut Party<L>,
    x: &[PackedShare<L>],
    y: &[PackedShare<L>],
) -> Result<Vec<PackedShare<L>>> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!("pmult of {} and {} shares", x.len(), y.len())));
    }
    let n = party.n();
    let prod = x.iter().zip(y).map(|(a, b)| a.mul(b, n)).collect::<Result<Vec<_>>>()?;
    degree_trans(party, &prod)
}

/// Column sums of the masked partial products for each output column, opened
/// to party 1. `post` maps a column sum to the output value (identity or a
/// shift), then party 1 repacks and scatters.
fn masked_columns<const L: u32>(
    party: &mut Party<L>,
    a: &PackedVector<L>,
    b: &PackedMatrix<L>,
    tuples: &[MaskTuple<L>],
    post: impl Fn(Fp<L>) -> Fp<L>,
) -> Result<PackedVector<L>> {
    let cfg = party.cfg.clone();
    let (n, d, k) = (cfg.n(), cfg.d(), cfg.k());
    let blocks = b.share_rows(k);
    let v = b.cols;
    let mut z = Vec::with_capacity(v);
    let av: Vec<Fp<L>> = a.shares.iter().map(|s| s.value).collect();
    let mut col = vec![Fp::ZERO; blocks];
    for j in 0..v {
        for (bi, c) in col.iter_mut().enumerate() {
            *c = b.shares[bi * v + j].value;
        }
        z.push(Fp::dot(&av, &col) + tuples[j / k].r[j % k]);
    }
    let out_shares = v.div_ceil(k);
    let gathered = party.net.gather_at_p1(z)?;
    let outgoing = match gathered {
        Some(all) => {
            let mut sums = Vec::with_capacity(out_shares * k);
            let mut shares = vec![Fp::ZERO; n];
            for j in 0..v {
                for p in 0..n {
                    shares[p] = all[p][j];
                }
                let slots = cfg.reconstruct_values(&shares, 2 * d)?;
                sums.push(post(slots.into_iter().sum()));
            }
            sums.resize(out_shares * k, Fp::ZERO);
            let mut out = vec![Vec::with_capacity(out_shares); n];
            for chunk in sums.chunks(k) {
                for (p, s) in cfg.share_values(chunk, d, &mut party.rng)?.into_iter().enumerate() {
                    out[p].push(s);
                }
            }
            Some(out)
        }
        None => None,
    };
    let f = party.net.scatter_from_p1(outgoing, out_shares)?;
    let shares = f
        .into_iter()
        .zip(tuples)
        .map(|(fv, t)| PackedShare::new(party.id, fv - t.r_prime, d))
        .collect();
    Ok(PackedVector { len: v, shares })
}

fn check_vec_mat<const L: u32>(party: &Party<L>, a: &PackedVector<L>, b: &PackedMatrix<L>) -> Result<()> {
    let k = party.k();
    if b.axis != PackingAxis::RowBlocks {
        return Err(Error::ShapeMismatch("vector-matrix product needs a row-block packed matrix".into()));
    }
    if a.len != b.rows || a.shares.len() != b.share_rows(k) || b.shares.len() != b.share_rows(k) * b.cols {
        return Err(Error::ShapeMismatch(format!(
            "vector of length {} ({} shares) times {}x{} matrix ({} shares)",
            a.len,
            a.shares.len(),
            b.rows,
            b.cols,
            b.shares.len()
        )));
    }
    if a.shares.iter().chain(&b.shares).any(|s| s.degree != party.d()) {
        return Err(Error::DegreeMismatch(party.d(), 0));
    }
    Ok(())
}

/// `a * B` for a packed vector and a row-block packed matrix. Uses
/// `ceil(cols / k)` vector-matrix tuples. One round.
pub fn vec_mat_mult<const L: u32>(
    party: &mut Party<L>,
    a: &PackedVector<L>,
    b: &PackedMatrix<L>,
) -> Result<PackedVector<L>> {
    check_vec_mat(party, a, b)?;
    let tuples = party.material.take_vm_tuples(b.cols.div_ceil(party.k()))?;
    masked_columns(party, a, b, &tuples, |x| x)
}

/// `a * B` followed by a right shift by `ell_x` of each output, using
/// truncation triples. One round.
pub fn vec_mat_mult_trunc<const L: u32>(
    party: &mut Party<L>,
    a: &PackedVector<L>,
    b: &PackedMatrix<L>,
) -> Result<PackedVector<L>> {
    check_vec_mat(party, a, b)?;
    let tuples = party.material.take_trunc_triples(b.cols.div_ceil(party.k()))?;
    let ell_x = party.ell_x;
    masked_columns(party, a, b, &tuples, move |x| Fp::new(x.value() >> ell_x))
}

/// Slot-wise `A * B` (`u x v` times `v x m`) with every output slot shifted
/// right by `ell_x`. Uses `u * m` truncation masks. One round.
pub fn pmat_mult_trunc<const L: u32>(
    party: &mut Party<L>,
    a: &PackedMatrix<L>,
    b: &PackedMatrix<L>,
) -> Result<PackedMatrix<L>> {
    if a.axis != PackingAxis::Slots || b.axis != PackingAxis::Slots || a.cols != b.rows {
        return Err(Error::ShapeMismatch(format!("{}x{} times {}x{}", a.rows, a.cols, b.rows, b.cols)));
    }
    let cfg = party.cfg.clone();
    let (n, d) = (cfg.n(), cfg.d());
    let (u, v, m) = (a.rows, a.cols, b.cols);
    if a.shares.iter().chain(&b.shares).any(|s| s.degree > d) {
        return Err(Error::DegreeOverflow(2 * d + 1, n - 1));
    }
    let masks = party.material.take_pmat_masks(u * m)?;
    let bt: Vec<Vec<Fp<L>>> = (0..m).map(|c| (0..v).map(|r| b.shares[r * m + c].value).collect()).collect();
    let mut z = Vec::with_capacity(u * m);
    for r in 0..u {
        let row: Vec<Fp<L>> = a.shares[r * v..(r + 1) * v].iter().map(|s| s.value).collect();
        for c in 0..m {
            z.push(Fp::dot(&row, &bt[c]) + masks[r * m + c].r2d);
        }
    }
    let ell_x = party.ell_x;
    let gathered = party.net.gather_at_p1(z)?;
    let outgoing = match gathered {
        Some(all) => {
            let mut out = vec![Vec::with_capacity(u * m); n];
            let mut col = vec![Fp::ZERO; n];
            for idx in 0..u * m {
                for p in 0..n {
                    col[p] = all[p][idx];
                }
                let slots: Vec<Fp<L>> =
                    cfg.reconstruct_values(&col, 2 * d)?.into_iter().map(|x| Fp::new(x.value() >> ell_x)).collect();
                for (p, s) in cfg.share_values(&slots, d, &mut party.rng)?.into_iter().enumerate() {
                    out[p].push(s);
                }
            }
            Some(out)
        }
        None => None,
    };
    let f = party.net.scatter_from_p1(outgoing, u * m)?;
    let shares = f.into_iter().zip(&masks).map(|(x, mk)| PackedShare::new(party.id, x - mk.r_prime, d)).collect();
    Ok(PackedMatrix { rows: u, cols: m, axis: PackingAxis::Slots, shares })
}

/// Turns each share of `(x_0, .., x_{k-1})` into `k` sharings of the constant
/// vectors `(x_i, .., x_i)`. One round.
pub fn pack_trans<const L: u32>(party: &mut Party<L>, x: &[PackedShare<L>]) -> Result<Vec<Vec<PackedShare<L>>>> {
    let cfg = party.cfg.clone();
    let (n, d, k) = (cfg.n(), cfg.d(), cfg.k());
    if let Some(s) = x.iter().find(|s| s.degree != d) {
        return Err(Error::DegreeMismatch(d, s.degree));
    }
    if x.is_empty() {
        return Ok(Vec::new());
    }
    let masks = party.material.take_pack_trans_masks(x.len())?;
    let z: Vec<Fp<L>> = x.iter().zip(&masks).map(|(s, m)| s.value + m.r).collect();
    let gathered = party.net.gather_at_p1(z)?;
    let outgoing = match gathered {
        Some(all) => {
            let mut out = vec![Vec::with_capacity(x.len() * k); n];
            let mut col = vec![Fp::ZERO; n];
            for idx in 0..x.len() {
                for p in 0..n {
                    col[p] = all[p][idx];
                }
                for zi in cfg.reconstruct_values(&col, d)? {
                    for (p, s) in cfg.share_values(&vec![zi; k], d, &mut party.rng)?.into_iter().enumerate() {
                        out[p].push(s);
                    }
                }
            }
            Some(out)
        }
        None => None,
    };
    let f = party.net.scatter_from_p1(outgoing, x.len() * k)?;
    Ok(f.chunks(k)
        .zip(&masks)
        .map(|(vals, m)| vals.iter().zip(&m.parts).map(|(v, r)| PackedShare::new(party.id, *v - *r, d)).collect())
        .collect())
}
