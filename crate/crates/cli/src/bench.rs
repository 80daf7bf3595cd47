//! Protocol microbenchmarks and the measured-vs-formula report.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use packmpc::cost::{self, Cost};
use packmpc::field::Fp;
use packmpc::linear::{pack_trans, pmat_mult_trunc, pmult_dn, vec_mat_mult, PackedMatrix, PackedVector, PackingAxis};
use packmpc::nn::{ModelManifest, PackingPlan};
use packmpc::nonlinear::{
    bitwise_lt, bitwise_lt_budget, drelu, drelu_budget, maxpool, maxpool_budget, pre_mult_budget, pre_or, relu,
    relu_budget,
};
use packmpc::offline::{deal, generate_interactive, Manifest, Material};
use packmpc::pss::{PackedShare, PackingConfig, PssParams};
use packmpc::session::{run_inference, OfflineMode, Session};
use packmpc::transport::{run_simulated, ChannelStats, Party, Phase, RunConfig};
use packmpc::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::presets;

pub const PROTOCOLS: [&str; 10] = [
    "pmult_dn",
    "vec_mat_mult",
    "pmat_mult_trunc",
    "pack_trans",
    "pre_or",
    "bitwise_lt",
    "drelu",
    "relu",
    "maxpool",
    "tiny_cnn",
];

/// Side of the square operands of the linear benchmarks.
const VEC_MAT_SIDE: usize = 24;
const PMAT_SIDE: usize = 3;
const POOL_WINDOW: usize = 4;
const ELL_X: u32 = 13;

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub n: usize,
    pub k: usize,
    pub ell: u32,
    pub protocol: String,
    /// protocol-specific size: operand side for the linear products,
    /// packed instances otherwise, 0 for whole models
    pub size: usize,
    pub phase: Phase,
    pub rounds: u64,
    pub elements: u64,
    /// largest (sent + received) over parties other than party 1
    pub member_elements: u64,
    pub wall_ms: f64,
}

pub const CSV_HEADER: &str = "n,k,ell,protocol,size,phase,rounds,elements,member_elements,wall_ms";

impl Row {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{:.3}",
            self.n,
            self.k,
            self.ell,
            self.protocol,
            self.size,
            self.phase.as_str(),
            self.rounds,
            self.elements,
            self.member_elements,
            self.wall_ms
        )
    }

    pub fn parse(line: &str) -> Result<Row> {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 10 {
            return Err(Error::Format(format!("bench row needs 10 fields: `{line}`")));
        }
        let int = |s: &str| s.parse::<u64>().map_err(|e| Error::Format(format!("`{s}`: {e}")));
        Ok(Row {
            n: int(f[0])? as usize,
            k: int(f[1])? as usize,
            ell: int(f[2])? as u32,
            protocol: f[3].to_string(),
            size: int(f[4])? as usize,
            phase: match f[5] {
                "offline" => Phase::Offline,
                "online" => Phase::Online,
                p => return Err(Error::Format(format!("unknown phase `{p}`"))),
            },
            rounds: int(f[6])?,
            elements: int(f[7])?,
            member_elements: int(f[8])?,
            wall_ms: f[9].parse().map_err(|e| Error::Format(format!("`{}`: {e}", f[9])))?,
        })
    }
}

pub fn read_rows(text: &str) -> Result<Vec<Row>> {
    text.lines().skip(1).filter(|l| !l.trim().is_empty()).map(Row::parse).collect()
}

/// Default size of each benchmark.
pub fn default_size(protocol: &str, batch: usize) -> usize {
    match protocol {
        "vec_mat_mult" => VEC_MAT_SIDE,
        "pmat_mult_trunc" => PMAT_SIDE,
        "tiny_cnn" => 0,
        _ => batch,
    }
}

/// Closed-form online cost of one benchmark case.
pub fn formula(protocol: &str, n: usize, k: usize, ell: u32, size: usize) -> Result<Cost> {
    let m = size as u64;
    Ok(match protocol {
        "pmult_dn" => cost::degree_trans(n, m),
        "vec_mat_mult" => cost::vec_mat_mult(n, k, size),
        "pmat_mult_trunc" => cost::pmat_mult_trunc(n, m * m),
        "pack_trans" => cost::pack_trans(n, k, m),
        "pre_or" => cost::pre_mult(n, ell as usize, m),
        "bitwise_lt" => cost::bitwise_lt(n, ell as usize, m),
        "drelu" => cost::drelu(n, k, ell, m),
        "relu" => cost::relu(n, k, ell, m),
        "maxpool" => cost::maxpool(n, k, ell, m, POOL_WINDOW),
        "tiny_cnn" => {
            let manifest = presets::manifest("tiny", ell)?;
            cost::sum(&cost::inference(n, &manifest, &PackingPlan::new(&manifest, k)?))
        }
        other => return Err(Error::UnknownFunctionality(other.to_string())),
    })
}

fn budget(protocol: &str, ell: u32, k: usize, size: usize) -> Manifest {
    let m = size as u64;
    match protocol {
        "pmult_dn" => Manifest { dn_pairs: m, ..Default::default() },
        "vec_mat_mult" => Manifest { vm_tuples: size.div_ceil(k) as u64, ..Default::default() },
        "pmat_mult_trunc" => Manifest { pmat_masks: m * m, ..Default::default() },
        "pack_trans" => Manifest { pack_trans_masks: m, ..Default::default() },
        "pre_or" => pre_mult_budget(ell as usize).times(m),
        "bitwise_lt" => bitwise_lt_budget(ell as usize).times(m),
        "drelu" => drelu_budget(ell).times(m),
        "relu" => relu_budget(ell).times(m),
        "maxpool" => maxpool_budget(ell, POOL_WINDOW).times(m),
        _ => Manifest::default(),
    }
}

fn member_max(stats: &ChannelStats, n: usize, phase: Phase) -> u64 {
    (2..=n)
        .map(|j| {
            let c = stats.party(j, phase);
            c.sent_elements + c.recv_elements
        })
        .max()
        .unwrap_or(0)
}

fn rows_from(n: usize, k: usize, ell: u32, protocol: &str, size: usize, stats: &ChannelStats, wall_ms: f64) -> Vec<Row> {
    [Phase::Offline, Phase::Online]
        .into_iter()
        .map(|phase| Row {
            n,
            k,
            ell,
            protocol: protocol.to_string(),
            size,
            phase,
            rounds: stats.rounds(phase),
            elements: stats.total_elements(phase),
            member_elements: member_max(stats, n, phase),
            wall_ms,
        })
        .collect()
}

type Shares<const L: u32> = Vec<Vec<PackedShare<L>>>;

/// `[party - 1][instance][element]`
fn share_groups<const L: u32>(cfg: &PackingConfig<L>, groups: &[Vec<Vec<Fp<L>>>], rng: &mut ChaCha8Rng) -> Result<Vec<Shares<L>>> {
    let mut out: Vec<Shares<L>> = vec![Vec::new(); cfg.n()];
    for g in groups {
        let mut per: Shares<L> = vec![Vec::new(); cfg.n()];
        for e in g {
            for (j, s) in cfg.share(e, cfg.d(), rng)?.into_iter().enumerate() {
                per[j].push(s);
            }
        }
        for (o, p) in out.iter_mut().zip(per) {
            o.push(p);
        }
    }
    Ok(out)
}

fn small<const L: u32>(rng: &mut ChaCha8Rng, count: usize) -> Vec<Fp<L>> {
    (0..count).map(|_| Fp::from_i64(rng.gen_range(-(1 << 12)..(1 << 12)))).collect()
}

fn slot_matrices<const L: u32>(cfg: &PackingConfig<L>, side: usize, rng: &mut ChaCha8Rng) -> Result<Vec<PackedMatrix<L>>> {
    let k = cfg.k();
    let rows: Vec<Vec<Vec<Fp<L>>>> = (0..side).map(|_| (0..side).map(|_| small(rng, k)).collect()).collect();
    Ok(share_groups(cfg, &rows, rng)?
        .into_iter()
        .map(|per| PackedMatrix { rows: side, cols: side, axis: PackingAxis::Slots, shares: per.concat() })
        .collect())
}

enum Input<const L: u32> {
    Flat(Shares<L>),
    Pair(Shares<L>, Shares<L>),
    Groups(Vec<Shares<L>>),
    Lt(Vec<Vec<u64>>, Vec<Shares<L>>),
    VecMat(Vec<PackedVector<L>>, Vec<PackedMatrix<L>>),
    Mats(Vec<PackedMatrix<L>>, Vec<PackedMatrix<L>>),
}

fn protocol_input<const L: u32>(cfg: &PackingConfig<L>, protocol: &str, size: usize, rng: &mut ChaCha8Rng) -> Result<Input<L>> {
    let (k, d) = (cfg.k(), cfg.d());
    let flat = |rng: &mut ChaCha8Rng, count: usize| cfg.share_vector(&small::<L>(rng, count), d, rng);
    Ok(match protocol {
        "pmult_dn" => Input::Pair(flat(rng, size * k)?, flat(rng, size * k)?),
        "pack_trans" | "drelu" | "relu" => Input::Flat(flat(rng, size * k)?),
        "pre_or" | "bitwise_lt" => {
            let seqs: Vec<Vec<Vec<Fp<L>>>> = (0..size)
                .map(|_| (0..L).map(|_| (0..k).map(|_| Fp::new(rng.gen_range(0..2))).collect()).collect())
                .collect();
            let g = share_groups(cfg, &seqs, rng)?;
            if protocol == "pre_or" {
                Input::Groups(g)
            } else {
                let a = (0..size).map(|_| (0..k).map(|_| rng.gen_range(0..1u64 << (L - 1))).collect()).collect();
                Input::Lt(a, g)
            }
        }
        "maxpool" => {
            let wins: Vec<Vec<Vec<Fp<L>>>> = (0..size).map(|_| (0..POOL_WINDOW).map(|_| small(rng, k)).collect()).collect();
            Input::Groups(share_groups(cfg, &wins, rng)?)
        }
        "vec_mat_mult" => {
            let a = flat(rng, size)?.into_iter().map(|shares| PackedVector { len: size, shares }).collect();
            let blocks = size.div_ceil(k);
            let mut per: Vec<PackedMatrix<L>> = (0..cfg.n())
                .map(|_| PackedMatrix { rows: size, cols: size, axis: PackingAxis::RowBlocks, shares: Vec::new() })
                .collect();
            for _ in 0..blocks * size {
                for (j, s) in cfg.share(&small::<L>(rng, k), d, rng)?.into_iter().enumerate() {
                    per[j].shares.push(s);
                }
            }
            Input::VecMat(a, per)
        }
        "pmat_mult_trunc" => Input::Mats(slot_matrices(cfg, size, rng)?, slot_matrices(cfg, size, rng)?),
        other => return Err(Error::UnknownFunctionality(other.to_string())),
    })
}

fn call<const L: u32>(p: &mut Party<L>, protocol: &str, input: &Input<L>) -> Result<usize> {
    let i = p.id - 1;
    Ok(match input {
        Input::Pair(a, b) => pmult_dn(p, &a[i], &b[i])?.len(),
        Input::Flat(a) => match protocol {
            "pack_trans" => pack_trans(p, &a[i])?.len(),
            "drelu" => drelu(p, &a[i])?.len(),
            _ => relu(p, &a[i])?.len(),
        },
        Input::Groups(g) => {
            if protocol == "pre_or" {
                pre_or(p, &g[i])?.len()
            } else {
                maxpool(p, &g[i])?.len()
            }
        }
        Input::Lt(a, g) => bitwise_lt(p, a, &g[i])?.len(),
        Input::VecMat(a, b) => vec_mat_mult(p, &a[i], &b[i])?.shares.len(),
        Input::Mats(a, b) => pmat_mult_trunc(p, &a[i], &b[i])?.shares.len(),
    })
}

/// Runs one benchmark case and returns its offline and online rows.
pub fn run_case<const L: u32>(n: usize, k: usize, protocol: &str, size: usize, offline: OfflineMode, seed: u64) -> Result<Vec<Row>> {
    if protocol == "tiny_cnn" {
        let model = presets::model("tiny", L, seed)?;
        let input = presets::input(&model, seed);
        let mut s = Session::new(n, k, seed);
        s.offline = offline;
        let r = run_inference::<L>(&model, &input, &s)?;
        return Ok(rows_from(n, k, L, protocol, size, &r.stats, r.wall.as_secs_f64() * 1e3));
    }
    let cfg: Arc<PackingConfig<L>> = PackingConfig::new(PssParams::new(n, k)?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = protocol_input(&cfg, protocol, size, &mut rng)?;
    let m = budget(protocol, L, k, size);
    let materials = match offline {
        OfflineMode::Dealer => deal(&cfg, ELL_X, &m, seed)?,
        OfflineMode::Interactive => (0..n).map(|_| Material::default()).collect(),
    };
    let start = Instant::now();
    let out = run_simulated(&cfg, &RunConfig::new(seed, ELL_X), materials, |p| {
        if offline == OfflineMode::Interactive {
            p.material = generate_interactive(p, &m, ELL_X)?;
        }
        call(p, protocol, &input)
    })?;
    let wall = start.elapsed().as_secs_f64() * 1e3;
    Ok(rows_from(n, k, L, protocol, size, &out.stats, wall))
}

pub fn markdown(rows: &[Row]) -> String {
    let mut s = String::from("| n | k | ell | protocol | size | phase | rounds | elements | per member | wall ms |\n");
    s.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
    for r in rows {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {:.1} |",
            r.n,
            r.k,
            r.ell,
            r.protocol,
            r.size,
            r.phase.as_str(),
            r.rounds,
            r.elements,
            r.member_elements,
            r.wall_ms
        );
    }
    s
}

/// One line of the report: rounds, elements sent by everybody, and the
/// largest per-member traffic (sent + received).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Comparison {
    pub label: String,
    pub measured: [u64; 3],
    pub formula: [u64; 3],
}

impl Comparison {
    pub fn new(label: String, n: usize, measured: [u64; 3], f: &Cost) -> Self {
        Comparison { label, measured, formula: [f.rounds, f.total(n), f.member_sent + f.member_recv] }
    }

    pub fn deviates(&self) -> bool {
        self.measured != self.formula
    }
}

/// Online rows of a bench file against their closed forms.
pub fn compare_rows(rows: &[Row]) -> Result<Vec<Comparison>> {
    rows.iter()
        .filter(|r| r.phase == Phase::Online)
        .map(|r| {
            let f = formula(&r.protocol, r.n, r.k, r.ell, r.size)?;
            let label = format!("{} n={} k={} ell={} size={}", r.protocol, r.n, r.k, r.ell, r.size);
            Ok(Comparison::new(label, r.n, [r.rounds, r.elements, r.member_elements], &f))
        })
        .collect()
}

/// A whole-model stats file against the per-layer closed forms.
pub fn compare_model(manifest: &ModelManifest, n: usize, k: usize, stats: &ChannelStats) -> Result<Comparison> {
    let plan = PackingPlan::new(manifest, k)?;
    let f = cost::sum(&cost::inference(n, manifest, &plan));
    let rounds = stats.links.iter().filter(|(key, _)| key.2 == Phase::Online).map(|(_, l)| l.rounds).max().unwrap_or(0);
    let member = (2..=n)
        .map(|j| {
            stats.links.iter().filter(|(key, _)| key.2 == Phase::Online && (key.0 == j || key.1 == j)).map(|(_, l)| l.elements).sum()
        })
        .max()
        .unwrap_or(0);
    let label = format!("model n={n} k={k} ell={}", manifest.ell);
    Ok(Comparison::new(label, n, [rounds, stats.total_elements(Phase::Online), member], &f))
}

pub fn report_text(rows: &[Comparison]) -> String {
    let mut s = String::from("| case | rounds (measured / formula) | elements | per member | status |\n|---|---|---|---|---|\n");
    for c in rows {
        let _ = writeln!(
            s,
            "| {} | {} / {} | {} / {} | {} / {} | {} |",
            c.label,
            c.measured[0],
            c.formula[0],
            c.measured[1],
            c.formula[1],
            c.measured[2],
            c.formula[2],
            if c.deviates() { "DEVIATION" } else { "ok" }
        );
    }
    let bad = rows.iter().filter(|c| c.deviates()).count();
    let _ = writeln!(s, "\n{} cases, {} deviations", rows.len(), bad);
    s
}
