//! End-to-end runs: sharing by owner and client, offline material, secure
//! inference on all parties and reveal to the client.

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Fp;
use crate::nn::{infer_secure, randomness_budget, reveal_values, share_input, share_model, Model, PackingPlan};
use crate::offline::{deal, generate_interactive, Manifest, Material};
use crate::pss::{PackedShare, PackingConfig, PssParams};
use crate::transport::{party_rng, run_simulated, run_tcp_local, ChannelStats, NetworkModel, PartyCounters, RunConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OfflineMode {
    Dealer,
    Interactive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetMode {
    Sim,
    Tcp,
}

/// Random streams of the non-party roles, kept apart from the parties'.
pub const OWNER_STREAM: usize = 1 << 20;
pub const CLIENT_STREAM: usize = (1 << 20) + 1;

#[derive(Clone, Copy, Debug)]
pub struct Session {
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub offline: OfflineMode,
    pub net: NetMode,
    pub network: NetworkModel,
}

impl Session {
    pub fn new(n: usize, k: usize, seed: u64) -> Self {
        Session { n, k, seed, offline: OfflineMode::Dealer, net: NetMode::Sim, network: NetworkModel::lan() }
    }
}

#[derive(Clone, Debug)]
pub struct InferenceRun<const L: u32> {
    pub output_shares: Vec<Vec<PackedShare<L>>>,
    /// logical outputs, as field elements and decoded
    pub revealed: Vec<Fp<L>>,
    pub logits: Vec<f64>,
    pub stats: ChannelStats,
    /// `[party - 1][layer]` online traffic
    pub per_layer: Vec<Vec<PartyCounters>>,
    pub budget: Manifest,
    /// material left after the run, summed over parties
    pub leftover: Manifest,
    pub transcripts: Vec<[u8; 32]>,
    pub wall: Duration,
}

pub fn run_inference<const L: u32>(model: &Model, input: &[f64], s: &Session) -> Result<InferenceRun<L>> {
    if model.manifest.ell != L {
        return Err(Error::ConfigMismatch(format!("model uses ell = {}, run uses {L}", model.manifest.ell)));
    }
    let cfg = PackingConfig::<L>::new(PssParams::new(s.n, s.k)?)?;
    let plan = PackingPlan::new(&model.manifest, s.k)?;
    let codec = model.manifest.codec()?;
    let model_shares = share_model(&cfg, model, &plan, &mut party_rng(s.seed, OWNER_STREAM))?;
    let input_shares = share_input(&cfg, &plan, &codec, input, &mut party_rng(s.seed, CLIENT_STREAM))?;
    let budget = randomness_budget(&model.manifest, &plan);
    run_shared(&cfg, model, &plan, &model_shares, &input_shares, &budget, s)
}

/// Runs the parties on already shared model and input.
pub fn run_shared<const L: u32>(
    cfg: &Arc<PackingConfig<L>>,
    model: &Model,
    plan: &PackingPlan,
    model_shares: &[crate::nn::ModelShares<L>],
    input_shares: &[Vec<PackedShare<L>>],
    budget: &Manifest,
    s: &Session,
) -> Result<InferenceRun<L>> {
    let ell_x = model.manifest.ell_x;
    let materials: Vec<Material<L>> = match s.offline {
        OfflineMode::Dealer => deal(cfg, ell_x, budget, s.seed)?,
        OfflineMode::Interactive => (0..s.n).map(|_| Material::default()).collect(),
    };
    let mut run = RunConfig::new(s.seed, ell_x);
    run.network = s.network;
    let interactive = s.offline == OfflineMode::Interactive;
    let f = |p: &mut crate::transport::Party<L>| {
        if interactive {
            p.material = generate_interactive(p, budget, ell_x)?;
        }
        infer_secure(p, &model.manifest, plan, &model_shares[p.id - 1], &input_shares[p.id - 1])
    };
    let out = match s.net {
        NetMode::Sim => run_simulated(cfg, &run, materials, f)?,
        NetMode::Tcp => run_tcp_local(cfg, &run, materials, f)?,
    };
    let output_shares: Vec<Vec<PackedShare<L>>> = out.outputs.iter().map(|o| o.shares.clone()).collect();
    let revealed = reveal_values(cfg, plan.output(), &output_shares)?;
    let codec = model.manifest.codec()?;
    let logits = revealed.iter().map(|v| codec.decode(*v)).collect();
    let mut leftover = Manifest::default();
    for m in &out.leftover {
        leftover.add(&m.remaining());
    }
    Ok(InferenceRun {
        per_layer: out.outputs.iter().map(|o| o.per_layer.clone()).collect(),
        output_shares,
        revealed,
        logits,
        stats: out.stats,
        budget: *budget,
        leftover,
        transcripts: out.transcripts,
        wall: out.wall,
    })
}
