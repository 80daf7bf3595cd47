//! Run settings from flags and an optional JSON file. Flags win.

use std::fs;
use std::net::{SocketAddr, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::Args;
use packmpc::session::{NetMode, OfflineMode, Session};
use packmpc::transport::NetworkModel;
use packmpc::{Error, Result};
use serde::Deserialize;

#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Flags {
    /// JSON file with any of the other options
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// number of parties (odd)
    #[arg(long)]
    pub n: Option<usize>,
    /// secrets per share
    #[arg(long)]
    pub k: Option<usize>,
    /// field width: 13, 31 or 61 (defaults to the model's)
    #[arg(long)]
    pub ell: Option<u32>,
    /// fractional bits (defaults to the model's)
    #[arg(long)]
    pub ellx: Option<u32>,
    /// sim or tcp
    #[arg(long, value_parser = parse_mode)]
    #[serde(deserialize_with = "de_mode")]
    pub mode: Option<NetMode>,
    /// dealer or interactive
    #[arg(long, value_parser = parse_offline)]
    #[serde(deserialize_with = "de_offline")]
    pub offline: Option<OfflineMode>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// one host:port per line, party 1 first
    #[arg(long)]
    pub hosts: Option<PathBuf>,
    /// simulated one-way latency
    #[arg(long)]
    pub latency_ms: Option<f64>,
    /// simulated per-link bandwidth
    #[arg(long)]
    pub bandwidth_mbps: Option<f64>,
    /// model manifest (JSON)
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// input values: a JSON array or numbers separated by commas or spaces
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// where to write the per-link stats CSV
    #[arg(long)]
    pub stats: Option<PathBuf>,
}

fn parse_mode(s: &str) -> std::result::Result<NetMode, String> {
    match s {
        "sim" => Ok(NetMode::Sim),
        "tcp" => Ok(NetMode::Tcp),
        _ => Err(format!("unknown mode `{s}` (sim or tcp)")),
    }
}

fn parse_offline(s: &str) -> std::result::Result<OfflineMode, String> {
    match s {
        "dealer" => Ok(OfflineMode::Dealer),
        "interactive" => Ok(OfflineMode::Interactive),
        _ => Err(format!("unknown offline mode `{s}` (dealer or interactive)")),
    }
}

fn de_mode<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Option<NetMode>, D::Error> {
    Option::<String>::deserialize(d)?.map(|s| parse_mode(&s).map_err(serde::de::Error::custom)).transpose()
}

fn de_offline<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Option<OfflineMode>, D::Error> {
    Option::<String>::deserialize(d)?.map(|s| parse_offline(&s).map_err(serde::de::Error::custom)).transpose()
}

/// Fully resolved settings.
#[derive(Clone, Debug)]
pub struct Settings {
    pub n: usize,
    pub k: usize,
    pub ell: Option<u32>,
    pub ell_x: Option<u32>,
    pub mode: NetMode,
    pub offline: OfflineMode,
    pub seed: u64,
    pub network: NetworkModel,
    pub hosts: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub stats: Option<PathBuf>,
}

impl Flags {
    pub fn resolve(&self) -> Result<Settings> {
        let file = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p)?;
                serde_json::from_str::<Flags>(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", p.display())))?
            }
            None => Flags::default(),
        };
        let f = self.clone().or(file);
        let mut network = NetworkModel::lan();
        if let Some(ms) = f.latency_ms {
            if !(ms >= 0.0 && ms.is_finite()) {
                return Err(Error::InvalidConfig(format!("latency {ms} ms")));
            }
            network.latency = Duration::from_secs_f64(ms / 1000.0);
        }
        if let Some(mbps) = f.bandwidth_mbps {
            if !(mbps > 0.0 && mbps.is_finite()) {
                return Err(Error::InvalidConfig(format!("bandwidth {mbps} Mbps")));
            }
            network.bandwidth_bps = Some(mbps * 1e6);
        }
        let s = Settings {
            n: f.n.unwrap_or(5),
            k: f.k.unwrap_or(2),
            ell: f.ell,
            ell_x: f.ellx,
            mode: f.mode.unwrap_or(NetMode::Sim),
            offline: f.offline.unwrap_or(OfflineMode::Dealer),
            seed: f.seed.unwrap_or(0),
            network,
            hosts: f.hosts,
            model: f.model,
            input: f.input,
            out: f.out,
            stats: f.stats,
        };
        packmpc::pss::PssParams::new(s.n, s.k)?;
        Ok(s)
    }

    /// Fields set here, else those of `other`.
    fn or(self, other: Flags) -> Flags {
        Flags {
            config: self.config,
            n: self.n.or(other.n),
            k: self.k.or(other.k),
            ell: self.ell.or(other.ell),
            ellx: self.ellx.or(other.ellx),
            mode: self.mode.or(other.mode),
            offline: self.offline.or(other.offline),
            seed: self.seed.or(other.seed),
            hosts: self.hosts.or(other.hosts),
            latency_ms: self.latency_ms.or(other.latency_ms),
            bandwidth_mbps: self.bandwidth_mbps.or(other.bandwidth_mbps),
            model: self.model.or(other.model),
            input: self.input.or(other.input),
            out: self.out.or(other.out),
            stats: self.stats.or(other.stats),
        }
    }
}

impl Settings {
    pub fn session(&self) -> Session {
        Session { n: self.n, k: self.k, seed: self.seed, offline: self.offline, net: self.mode, network: self.network }
    }

    pub fn need<'a>(&self, path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
        path.as_deref().ok_or_else(|| Error::InvalidConfig(format!("--{what} is required")))
    }
}

/// Reads `host:port` lines; blank lines and `#` comments are skipped.
pub fn read_hosts(path: &Path) -> Result<Vec<SocketAddr>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .map(|l| l.split('#').next().unwrap().trim())
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.to_socket_addrs()
                .map_err(|e| Error::InvalidConfig(format!("host `{l}`: {e}")))?
                .next()
                .ok_or_else(|| Error::InvalidConfig(format!("host `{l}` does not resolve")))
        })
        .collect()
}

/// A JSON array, or numbers separated by commas and whitespace.
pub fn read_input(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    if text.trim_start().starts_with('[') {
        return Ok(serde_json::from_str(&text)?);
    }
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|e| Error::Format(format!("input value `{t}`: {e}"))))
        .collect()
}
