mod common;

use common::*;
use packmpc::field::{Fp, F31, F61};
use packmpc::linear::{pack_trans, pmat_mult_trunc, pmult_dn, vec_mat_mult, vec_mat_mult_trunc, PackedMatrix, PackingAxis};
use packmpc::offline::Manifest;
use packmpc::oracle::{self, Tolerance};
use packmpc::transport::Phase;
use packmpc::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn pmult_matches_oracle_over_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (n, k) in GRID {
        let cfg = config::<61>(n, k);
        let len = 10 * k;
        let x = random_field::<61, _>(&mut rng, len);
        let y = random_field::<61, _>(&mut rng, len);
        let (xs, ys) = (share(&cfg, &x, &mut rng), share(&cfg, &y, &mut rng));
        let m = Manifest { dn_pairs: 10, ..Default::default() };
        let out = run(&cfg, &m, 7, |p| pmult_dn(p, &xs[p.id - 1], &ys[p.id - 1]));
        let want = oracle::functionality_oracle(
            "pmult",
            F61::MODULUS,
            ELL_X,
            &[x.iter().map(|v| v.value()).collect(), y.iter().map(|v| v.value()).collect()],
        )
        .unwrap();
        assert_eq!(open_all(&cfg, &out.outputs), want, "n={n} k={k}");
        assert_eq!(out.stats.rounds(Phase::Online), 1);
        assert!(out.leftover.iter().all(|m| m.is_empty()));
    }
}

#[test]
fn vec_mat_exact_over_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (n, k) in GRID {
        for (u, v) in [(1, 1), (5, 3), (8, 8), (9, 13)] {
            let cfg = config::<61>(n, k);
            let a = random_field::<61, _>(&mut rng, u);
            let b: Vec<Vec<F61>> = (0..u).map(|_| random_field(&mut rng, v)).collect();
            let (av, bm) = (share_vec(&cfg, &a, &mut rng), share_matrix_rows(&cfg, &b, &mut rng));
            let m = Manifest { vm_tuples: v.div_ceil(k) as u64, ..Default::default() };
            let out = run(&cfg, &m, 3, |p| vec_mat_mult(p, &av[p.id - 1], &bm[p.id - 1]));
            let per: Vec<_> = out.outputs.iter().map(|o| o.shares.clone()).collect();
            let got = open_all(&cfg, &per);
            let bu: Vec<Vec<u64>> = b.iter().map(|r| r.iter().map(|x| x.value()).collect()).collect();
            let want = oracle::vec_mat(F61::MODULUS, &a.iter().map(|x| x.value()).collect::<Vec<_>>(), &bu);
            assert_eq!(&got[..v], &want[..], "n={n} k={k} u={u} v={v}");
            assert_eq!(out.stats.rounds(Phase::Online), 1);
            assert!(out.leftover.iter().all(|m| m.is_empty()));
        }
    }
}

/// Fixed-point operands in [-4, 4) at 13 fractional bits.
fn fixed_operands<const L: u32>(rng: &mut ChaCha8Rng, u: usize, v: usize) -> (Vec<Fp<L>>, Vec<Vec<Fp<L>>>) {
    let a = random_signed::<L, _>(rng, 4 << ELL_X, u);
    let b = (0..u).map(|_| random_signed::<L, _>(rng, 4 << ELL_X, v)).collect();
    (a, b)
}

#[test]
fn vec_mat_trunc_within_one_ulp_at_61() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n, k, u, v) = (5, 2, 8, 8);
    let cfg = config::<61>(n, k);
    for trial in 0..100 {
        let (a, b) = fixed_operands::<61>(&mut rng, u, v);
        let (av, bm) = (share_vec(&cfg, &a, &mut rng), share_matrix_rows(&cfg, &b, &mut rng));
        let m = Manifest { trunc_triples: v.div_ceil(k) as u64, ..Default::default() };
        let out = run(&cfg, &m, trial, |p| vec_mat_mult_trunc(p, &av[p.id - 1], &bm[p.id - 1]));
        let per: Vec<_> = out.outputs.iter().map(|o| o.shares.clone()).collect();
        let got = open_all(&cfg, &per);
        let bu: Vec<Vec<u64>> = b.iter().map(|r| r.iter().map(|x| x.value()).collect()).collect();
        let want = oracle::vec_mat_trunc(F61::MODULUS, ELL_X, &a.iter().map(|x| x.value()).collect::<Vec<_>>(), &bu);
        for j in 0..v {
            assert!(Tolerance::TruncUlp.check_field(F61::MODULUS, got[j], want[j]), "trial {trial} slot {j}");
        }
    }
}

/// At 31 bits a slot fails when the mask wraps past the modulus, which
/// happens with probability about |x| / 2^31. Count failures and compare
/// with that expectation.
#[test]
fn vec_mat_trunc_wraps_at_31_as_predicted() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (n, k, u, v) = (5, 2, 8, 8);
    let cfg = config::<31>(n, k);
    let p = F31::MODULUS;
    let (mut failures, mut expected) = (0u64, 0f64);
    for trial in 0..300 {
        // [-1/2, 1/2) keeps the untruncated sums inside the field
        let a = random_signed::<31, _>(&mut rng, 1 << (ELL_X - 1), u);
        let b: Vec<Vec<F31>> = (0..u).map(|_| random_signed(&mut rng, 1 << (ELL_X - 1), v)).collect();
        let (av, bm) = (share_vec(&cfg, &a, &mut rng), share_matrix_rows(&cfg, &b, &mut rng));
        let m = Manifest { trunc_triples: v.div_ceil(k) as u64, ..Default::default() };
        let out = run(&cfg, &m, 1000 + trial, |p| vec_mat_mult_trunc(p, &av[p.id - 1], &bm[p.id - 1]));
        let per: Vec<_> = out.outputs.iter().map(|o| o.shares.clone()).collect();
        let got = open_all(&cfg, &per);
        let bu: Vec<Vec<u64>> = b.iter().map(|r| r.iter().map(|x| x.value()).collect()).collect();
        let au: Vec<u64> = a.iter().map(|x| x.value()).collect();
        let full = oracle::vec_mat(p, &au, &bu);
        for j in 0..v {
            let want = oracle::trunc(p, full[j], ELL_X);
            expected += oracle::signed(p, full[j]).unsigned_abs() as f64 / (1u64 << 31) as f64;
            if !Tolerance::TruncUlp.check_field(p, got[j], want) {
                failures += 1;
            }
        }
    }
    let sd = expected.sqrt();
    assert!((failures as f64 - expected).abs() <= 4.0 * sd + 2.0, "failures {failures}, expected {expected:.1}");
}

fn share_slots<const L: u32>(
    cfg: &packmpc::pss::PackingConfig<L>,
    m: &[Vec<Vec<Fp<L>>>],
    rng: &mut ChaCha8Rng,
) -> Vec<PackedMatrix<L>> {
    let (rows, cols) = (m.len(), m[0].len());
    let mut out: Vec<PackedMatrix<L>> =
        (0..cfg.n()).map(|_| PackedMatrix { rows, cols, axis: PackingAxis::Slots, shares: Vec::new() }).collect();
    for row in m {
        for slots in row {
            for (j, s) in cfg.share(slots, cfg.d(), rng).unwrap().into_iter().enumerate() {
                out[j].shares.push(s);
            }
        }
    }
    out
}

#[test]
fn pmat_trunc_within_one_ulp_and_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (n, k) in GRID {
        let cfg = config::<61>(n, k);
        let (u, v, w) = (3, 4, 5);
        let a: Vec<Vec<Vec<F61>>> = (0..u).map(|_| (0..v).map(|_| random_signed(&mut rng, 4 << ELL_X, k)).collect()).collect();
        let b: Vec<Vec<Vec<F61>>> = (0..v).map(|_| (0..w).map(|_| random_signed(&mut rng, 4 << ELL_X, k)).collect()).collect();
        let (am, bm) = (share_slots(&cfg, &a, &mut rng), share_slots(&cfg, &b, &mut rng));
        let m = Manifest { pmat_masks: (u * w) as u64, ..Default::default() };
        let out = run(&cfg, &m, 9, |p| pmat_mult_trunc(p, &am[p.id - 1], &bm[p.id - 1]));
        let per: Vec<_> = out.outputs.iter().map(|o| o.shares.clone()).collect();
        let got = open_all(&cfg, &per);
        let pmod = F61::MODULUS;
        for r in 0..u {
            for c in 0..w {
                for s in 0..k {
                    let row: Vec<u64> = (0..v).map(|i| a[r][i][s].value()).collect();
                    let col: Vec<u64> = (0..v).map(|i| b[i][c][s].value()).collect();
                    let want = oracle::trunc(pmod, oracle::dot(pmod, &row, &col), ELL_X);
                    assert!(Tolerance::TruncUlp.check_field(pmod, got[(r * w + c) * k + s], want));
                }
            }
        }
        assert_eq!(out.stats.rounds(Phase::Online), 1);
        // u*w packed outputs carry u*w*k slot products; each non-leader sends and
        // receives one element per packed output
        for id in 2..=n {
            let c = out.stats.party(id, Phase::Online);
            assert_eq!(c.sent_elements + c.recv_elements, 2 * (u * w * k) as u64 / k as u64);
        }
        assert!(out.leftover.iter().all(|m| m.is_empty()));
    }
}

#[test]
fn pack_trans_gives_constant_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for (n, k) in GRID {
        let cfg = config::<31>(n, k);
        let x = random_field::<31, _>(&mut rng, 3 * k);
        let xs = share(&cfg, &x, &mut rng);
        let m = Manifest { pack_trans_masks: 3, ..Default::default() };
        let out = run(&cfg, &m, 11, |p| pack_trans(p, &xs[p.id - 1]));
        for i in 0..3 {
            for s in 0..k {
                let per: Vec<Vec<_>> = out.outputs.iter().map(|o| vec![o[i][s]]).collect();
                assert_eq!(open_all(&cfg, &per), vec![x[i * k + s].value(); k]);
            }
        }
        assert_eq!(out.stats.rounds(Phase::Online), 1);
    }
}

#[test]
fn missing_material_is_reported() {
    let cfg = config::<61>(5, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random_field::<61, _>(&mut rng, 4);
    let xs = share(&cfg, &x, &mut rng);
    let mats = packmpc::offline::deal(&cfg, ELL_X, &Manifest { dn_pairs: 1, ..Default::default() }, 1).unwrap();
    let res = packmpc::transport::run_simulated(&cfg, &packmpc::transport::RunConfig::new(1, ELL_X), mats, |p| {
        pmult_dn(p, &xs[p.id - 1], &xs[p.id - 1])
    });
    assert!(matches!(res, Err(Error::MissingRandomness(_))));
}

#[test]
fn shape_errors() {
    let cfg = config::<61>(5, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = random_field::<61, _>(&mut rng, 3);
    let b: Vec<Vec<F61>> = (0..4).map(|_| random_field(&mut rng, 2)).collect();
    let (av, bm) = (share_vec(&cfg, &a, &mut rng), share_matrix_rows(&cfg, &b, &mut rng));
    let mats = packmpc::offline::deal(&cfg, ELL_X, &Manifest { vm_tuples: 1, ..Default::default() }, 1).unwrap();
    let res = packmpc::transport::run_simulated(&cfg, &packmpc::transport::RunConfig::new(1, ELL_X), mats, |p| {
        vec_mat_mult(p, &av[p.id - 1], &bm[p.id - 1])
    });
    assert!(matches!(res, Err(Error::ShapeMismatch(_))));
}
