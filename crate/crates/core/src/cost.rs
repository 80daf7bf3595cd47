//! Closed-form online communication of every protocol, as implemented.
//!
//! Counts are field elements. "Member" means any party other than party 1;
//! all members have identical traffic.

use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::nn::{Conversion, LayerSpec, ModelManifest, PackingPlan};
use crate::nonlinear::{ceil_log2, prefix_tree_mults};
use crate::transport::{ChannelStats, PartyCounters, Phase};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cost {
    pub rounds: u64,
    pub member_sent: u64,
    pub member_recv: u64,
    pub leader_sent: u64,
    pub leader_recv: u64,
}

/// Sequential composition.
impl Add for Cost {
    type Output = Cost;
    fn add(self, o: Cost) -> Cost {
        Cost {
            rounds: self.rounds + o.rounds,
            member_sent: self.member_sent + o.member_sent,
            member_recv: self.member_recv + o.member_recv,
            leader_sent: self.leader_sent + o.leader_sent,
            leader_recv: self.leader_recv + o.leader_recv,
        }
    }
}

impl Cost {
    /// Elements sent by all parties together.
    pub fn total(&self, n: usize) -> u64 {
        (n as u64 - 1) * self.member_sent + self.leader_sent
    }

    /// Compares with measured stats of one phase.
    pub fn deviation(&self, stats: &ChannelStats, n: usize, phase: Phase) -> Deviation {
        let measured = Cost::measured(stats, n, phase);
        Deviation {
            rounds: measured.rounds as i64 - self.rounds as i64,
            member_elements: (measured.member_sent + measured.member_recv) as i64
                - (self.member_sent + self.member_recv) as i64,
            total_elements: measured.total(n) as i64 - self.total(n) as i64,
        }
    }

    /// Measured counterpart; member figures are the maximum over members.
    pub fn measured(stats: &ChannelStats, n: usize, phase: Phase) -> Cost {
        let leader = stats.party(1, phase);
        let members: Vec<PartyCounters> = (2..=n).map(|j| stats.party(j, phase)).collect();
        Cost {
            rounds: stats.rounds(phase),
            member_sent: members.iter().map(|c| c.sent_elements).max().unwrap_or(0),
            member_recv: members.iter().map(|c| c.recv_elements).max().unwrap_or(0),
            leader_sent: leader.sent_elements,
            leader_recv: leader.recv_elements,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deviation {
    pub rounds: i64,
    pub member_elements: i64,
    pub total_elements: i64,
}

impl Deviation {
    pub fn is_zero(&self) -> bool {
        *self == Deviation::default()
    }
}

/// Members send `up` elements to party 1, which answers with `down` each.
pub fn star(n: usize, up: u64, down: u64) -> Cost {
    if up == 0 && down == 0 {
        return Cost::default();
    }
    let m = n as u64 - 1;
    Cost { rounds: 1, member_sent: up, member_recv: down, leader_sent: m * down, leader_recv: m * up }
}

/// Degree reduction of `m` shares (also a DN product or an XOR).
pub fn degree_trans(n: usize, m: u64) -> Cost {
    star(n, m, m)
}

/// Opening `m` shares to everybody.
pub fn open(n: usize, k: usize, m: u64) -> Cost {
    star(n, m, m * k as u64)
}

pub fn vec_mat_mult(n: usize, k: usize, v: usize) -> Cost {
    star(n, v as u64, v.div_ceil(k) as u64)
}

/// `outputs` packed output shares.
pub fn pmat_mult_trunc(n: usize, outputs: u64) -> Cost {
    star(n, outputs, outputs)
}

pub fn pack_trans(n: usize, k: usize, m: u64) -> Cost {
    star(n, m, m * k as u64)
}

/// `m` independent prefix products of length `len`.
pub fn pre_mult(n: usize, len: usize, m: u64) -> Cost {
    let mut c = Cost::default();
    for s in 0..ceil_log2(len) {
        let cnt = (0..len).filter(|i| (i >> s) & 1 == 1).count() as u64;
        c = c + degree_trans(n, cnt * m);
    }
    debug_assert_eq!(c.member_sent, prefix_tree_mults(len) as u64 * m);
    c
}

pub fn bitwise_lt(n: usize, width: usize, m: u64) -> Cost {
    degree_trans(n, width as u64 * m) + pre_mult(n, width, m) + degree_trans(n, m)
}

pub fn drelu(n: usize, k: usize, ell: u32, m: u64) -> Cost {
    open(n, k, m) + degree_trans(n, m) + bitwise_lt(n, ell as usize, m) + degree_trans(n, m)
}

pub fn relu(n: usize, k: usize, ell: u32, m: u64) -> Cost {
    drelu(n, k, ell, m) + degree_trans(n, m)
}

/// `windows` packed windows of `size` shares each.
pub fn maxpool(n: usize, k: usize, ell: u32, windows: u64, size: usize) -> Cost {
    let mut c = Cost::default();
    let mut len = 1usize << ceil_log2(size);
    while len > 1 {
        len /= 2;
        c = c + relu(n, k, ell, windows * len as u64);
    }
    c
}

/// Online cost of each layer of a model.
pub fn inference(n: usize, manifest: &ModelManifest, plan: &PackingPlan) -> Vec<Cost> {
    let k = plan.k;
    manifest
        .layers
        .iter()
        .zip(&plan.layers)
        .map(|(l, lp)| match *l {
            LayerSpec::Conv { .. } => {
                let pt = if lp.conversion == Conversion::PackTrans {
                    pack_trans(n, k, lp.input.shares(k) as u64)
                } else {
                    Cost::default()
                };
                pt + pmat_mult_trunc(n, lp.output.shares(k) as u64)
            }
            LayerSpec::Fc { outputs, .. } => vec_mat_mult(n, k, outputs),
            LayerSpec::Relu => relu(n, k, manifest.ell, lp.input.shares(k) as u64),
            LayerSpec::MaxPool { window } => {
                maxpool(n, k, manifest.ell, lp.output.shares(k) as u64, window * window)
            }
            LayerSpec::Flatten => Cost::default(),
        })
        .collect()
}

pub fn sum(costs: &[Cost]) -> Cost {
    costs.iter().fold(Cost::default(), |a, b| a + *b)
}
