#![allow(dead_code)]

use std::sync::Arc;

use packmpc::field::Fp;
use packmpc::linear::{PackedMatrix, PackedVector, PackingAxis};
use packmpc::offline::{deal, Manifest};
use packmpc::pss::{PackedShare, PackingConfig, PssParams};
use packmpc::transport::{run_simulated, Party, RunConfig, RunOutcome};
use rand::Rng;

pub const ELL_X: u32 = 13;
pub const GRID: [(usize, usize); 6] = [(5, 2), (7, 2), (7, 3), (11, 2), (11, 3), (11, 4)];

pub fn config<const L: u32>(n: usize, k: usize) -> Arc<PackingConfig<L>> {
    PackingConfig::new(PssParams::new(n, k).unwrap()).unwrap()
}

/// Runs `f` on every party with dealer material for `m`.
pub fn run<const L: u32, R, F>(cfg: &Arc<PackingConfig<L>>, m: &Manifest, seed: u64, f: F) -> RunOutcome<L, R>
where
    R: Send,
    F: Fn(&mut Party<L>) -> packmpc::Result<R> + Sync,
{
    let mats = deal(cfg, ELL_X, m, seed).unwrap();
    run_simulated(cfg, &RunConfig::new(seed, ELL_X), mats, f).unwrap()
}

pub fn random_signed<const L: u32, R: Rng>(rng: &mut R, bound: i64, count: usize) -> Vec<Fp<L>> {
    (0..count).map(|_| Fp::from_i64(rng.gen_range(-bound..bound))).collect()
}

pub fn random_field<const L: u32, R: Rng>(rng: &mut R, count: usize) -> Vec<Fp<L>> {
    (0..count).map(|_| Fp::random(rng)).collect()
}

/// Shares `values` at degree d, `[party - 1][share]`.
pub fn share<const L: u32, R: Rng>(cfg: &PackingConfig<L>, values: &[Fp<L>], rng: &mut R) -> Vec<Vec<PackedShare<L>>> {
    cfg.share_vector(values, cfg.d(), rng).unwrap()
}

pub fn open_all<const L: u32>(cfg: &PackingConfig<L>, per_party: &[Vec<PackedShare<L>>]) -> Vec<u64> {
    cfg.reconstruct_vector(per_party).unwrap().iter().map(|x| x.value()).collect()
}

/// Row-block packing of `b[r][c]`, `[party - 1]`.
pub fn share_matrix_rows<const L: u32, R: Rng>(
    cfg: &PackingConfig<L>,
    b: &[Vec<Fp<L>>],
    rng: &mut R,
) -> Vec<PackedMatrix<L>> {
    let (k, n) = (cfg.k(), cfg.n());
    let rows = b.len();
    let cols = b[0].len();
    let blocks = rows.div_ceil(k);
    let mut out: Vec<PackedMatrix<L>> =
        (0..n).map(|_| PackedMatrix { rows, cols, axis: PackingAxis::RowBlocks, shares: Vec::new() }).collect();
    for bi in 0..blocks {
        for c in 0..cols {
            let col: Vec<Fp<L>> = (bi * k..((bi + 1) * k).min(rows)).map(|r| b[r][c]).collect();
            for (j, s) in cfg.share(&col, cfg.d(), rng).unwrap().into_iter().enumerate() {
                out[j].shares.push(s);
            }
        }
    }
    out
}

pub fn share_vec<const L: u32, R: Rng>(cfg: &PackingConfig<L>, a: &[Fp<L>], rng: &mut R) -> Vec<PackedVector<L>> {
    share(cfg, a, rng).into_iter().map(|shares| PackedVector { len: a.len(), shares }).collect()
}
