use packmpc::field::{Fp, F61};
use packmpc::offline::Material;
use packmpc::pss::{PackingConfig, PssParams};
use packmpc::transport::{run_simulated, run_tcp_local, Phase, RunConfig};
use proptest::prelude::*;

fn material(n: usize) -> Vec<Material<61>> {
    (0..n).map(|_| Material::default()).collect()
}

#[test]
fn point_to_point_is_fifo_under_load() {
    let cfg = PackingConfig::new(PssParams::new(5, 2).unwrap()).unwrap();
    let msgs = 500u64;
    let out = run_simulated(&cfg, &RunConfig::new(1, 13), material(5), |p| {
        let me = p.id as u64;
        for i in 0..msgs {
            for to in (1..=5).filter(|&j| j != p.id) {
                p.net.send(to, &[F61::new(me * 1_000_000 + i), F61::new(i)])?;
            }
        }
        let mut seen = Vec::new();
        for from in (1..=5).filter(|&j| j != p.id) {
            for i in 0..msgs {
                let v: Vec<Fp<61>> = p.net.recv(from, 2)?;
                seen.push(v[0].value() == from as u64 * 1_000_000 + i && v[1].value() == i);
            }
        }
        Ok(seen.into_iter().all(|b| b))
    })
    .unwrap();
    assert!(out.outputs.iter().all(|&ok| ok));
    assert_eq!(out.stats.total_elements(Phase::Online), 5 * 4 * msgs * 2);
}

#[test]
fn tcp_is_fifo_too() {
    let cfg = PackingConfig::new(PssParams::new(5, 2).unwrap()).unwrap();
    let out = run_tcp_local(&cfg, &RunConfig::new(1, 13), material(5), |p| {
        let next = p.id % 5 + 1;
        let prev = (p.id + 3) % 5 + 1;
        for i in 0..200u64 {
            p.net.send(next, &[F61::new(i)])?;
        }
        (0..200u64).map(|i| Ok(p.net.recv::<61>(prev, 1)?[0].value() == i)).collect::<packmpc::Result<Vec<_>>>()
    })
    .unwrap();
    assert!(out.outputs.iter().flatten().all(|&b| b));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sent_equals_received(n_idx in 0usize..3, sizes in proptest::collection::vec(0usize..20, 1..6)) {
        let n = [5usize, 7, 9][n_idx];
        let cfg = PackingConfig::new(PssParams::new(n, 2).unwrap()).unwrap();
        let s = sizes.clone();
        let out = run_simulated(&cfg, &RunConfig::new(2, 13), material(n), move |p| {
            for &m in &s {
                let g = p.net.gather_at_p1(vec![F61::ONE; m])?;
                let back = g.map(|all| all.into_iter().map(|v| vec![F61::ZERO; v.len()]).collect());
                p.net.scatter_from_p1(back, m)?;
            }
            Ok(())
        })
        .unwrap();
        let sent: u64 = (1..=n).map(|j| out.stats.party(j, Phase::Online).sent_elements).sum();
        let recv: u64 = (1..=n).map(|j| out.stats.party(j, Phase::Online).recv_elements).sum();
        prop_assert_eq!(sent, recv);
        let want: u64 = sizes.iter().map(|&m| 2 * (n as u64 - 1) * m as u64).sum();
        prop_assert_eq!(sent, want);
        let nonempty = sizes.iter().filter(|&&m| m > 0).count() as u64;
        prop_assert!(out.stats.rounds(Phase::Online) <= sizes.len() as u64);
        prop_assert!(out.stats.rounds(Phase::Online) >= nonempty);
    }
}
