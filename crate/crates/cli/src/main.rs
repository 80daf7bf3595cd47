//! `packmpc`: share data, deal preprocessing material, run parties over TCP,
//! simulate whole inferences in-process, benchmark protocols and compare
//! measured traffic with the closed forms.

mod bench;
mod presets;
mod settings;

use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use packmpc::field::Fp;
use packmpc::nn::{
    infer_secure, load_manifest, randomness_budget, read_share_file, reveal_values, share_input, share_model,
    write_share_file, Model, ModelManifest, ModelShares, PackingPlan, ShareHeader,
};
use packmpc::offline::{deal, generate_interactive, Material};
use packmpc::oracle;
use packmpc::pss::{PackedShare, PackingConfig, PssParams};
use packmpc::session::{run_inference, OfflineMode, CLIENT_STREAM, OWNER_STREAM};
use packmpc::transport::{party_rng, ChannelStats, Net, Party, TcpEndpoint, DEFAULT_TIMEOUT};
use packmpc::{Error, Result};

use settings::{Flags, Settings};

#[derive(Parser)]
#[command(name = "packmpc", version, about = "Packed secret sharing secure inference")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a model with random weights in one of the built-in shapes
    InitModel {
        /// tiny or lenet4
        #[arg(long)]
        preset: String,
        #[command(flatten)]
        flags: Flags,
    },
    /// Split the model (owner) or an input (client) into one share file per party
    Share {
        #[arg(long, value_parser = ["client", "owner"])]
        role: String,
        #[command(flatten)]
        flags: Flags,
    },
    /// Generate every party's preprocessing material as a trusted dealer
    Dealer {
        #[command(flatten)]
        flags: Flags,
    },
    /// Run one party over TCP against the peers listed in --hosts
    RunParty {
        #[arg(long)]
        id: usize,
        /// directory with the share (and dealer) files; defaults to --out
        #[arg(long)]
        shares: Option<PathBuf>,
        #[command(flatten)]
        flags: Flags,
    },
    /// Reconstruct the output from the parties' output share files
    Reveal {
        #[arg(long)]
        shares: PathBuf,
        #[command(flatten)]
        flags: Flags,
    },
    /// Run all parties in one process and reveal the result
    Simulate {
        /// also run the plaintext fixed-point model and print the difference
        #[arg(long)]
        check: bool,
        #[command(flatten)]
        flags: Flags,
    },
    /// Benchmark protocols over a grid of party counts and packing factors
    Bench {
        #[arg(long, value_delimiter = ',')]
        ns: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        ks: Vec<usize>,
        /// subset of protocols (default: all)
        #[arg(long, value_delimiter = ',')]
        protocols: Vec<String>,
        /// packed instances per nonlinear benchmark
        #[arg(long, default_value_t = 4)]
        batch: usize,
        #[arg(long)]
        markdown: Option<PathBuf>,
        #[command(flatten)]
        flags: Flags,
    },
    /// Compare measured traffic with the closed-form costs
    Report {
        /// bench CSV files
        #[arg(long, num_args = 1..)]
        bench: Vec<PathBuf>,
        /// per-party stats CSV files of one model run (merged)
        #[arg(long, num_args = 1..)]
        stats_files: Vec<PathBuf>,
        #[command(flatten)]
        flags: Flags,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Io(_) | Error::Format(_) => 4,
        Error::InvalidConfig(_)
        | Error::ConfigMismatch(_)
        | Error::UnknownFunctionality(_)
        | Error::OutOfRange(_)
        | Error::ShapeMismatch(_)
        | Error::DegreeOutOfRange { .. } => 2,
        _ => 3,
    }
}

/// Calls `$f::<L>(args)` for the run's field width.
macro_rules! by_width {
    ($ell:expr, $f:ident ( $($arg:expr),* )) => {
        match $ell {
            13 => $f::<13>($($arg),*),
            31 => $f::<31>($($arg),*),
            61 => $f::<61>($($arg),*),
            other => Err(Error::InvalidConfig(format!("unsupported field width {other}"))),
        }
    };
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::InitModel { preset, flags } => {
            let s = flags.resolve()?;
            let mut model = presets::model(&preset, s.ell.unwrap_or(61), s.seed)?;
            if let Some(x) = s.ell_x {
                model.manifest.ell_x = x;
            }
            model.validate()?;
            model.save(s.need(&s.out, "out")?)
        }
        Cmd::Share { role, flags } => {
            let s = flags.resolve()?;
            let model = load_model(&s)?;
            by_width!(model.manifest.ell, cmd_share(&s, &model, &role))
        }
        Cmd::Dealer { flags } => {
            let s = flags.resolve()?;
            let m = manifest(&s)?;
            by_width!(m.ell, cmd_dealer(&s, &m))
        }
        Cmd::RunParty { id, shares, flags } => {
            let s = flags.resolve()?;
            let m = manifest(&s)?;
            let out = out_dir(&s);
            let shares = shares.unwrap_or_else(|| out.clone());
            by_width!(m.ell, cmd_run_party(&s, &m, id, &shares, &out))
        }
        Cmd::Reveal { shares, flags } => {
            let s = flags.resolve()?;
            let m = manifest(&s)?;
            by_width!(m.ell, cmd_reveal(&s, &m, &shares))
        }
        Cmd::Simulate { check, flags } => {
            let s = flags.resolve()?;
            let model = load_model(&s)?;
            by_width!(model.manifest.ell, cmd_simulate(&s, &model, check))
        }
        Cmd::Bench { ns, ks, protocols, batch, markdown, flags } => {
            let s = flags.resolve()?;
            cmd_bench(&s, ns, ks, protocols, batch, markdown)
        }
        Cmd::Report { bench, stats_files, flags } => {
            let s = flags.resolve()?;
            cmd_report(&s, &bench, &stats_files)
        }
    }
}

fn manifest(s: &Settings) -> Result<ModelManifest> {
    let mut m = load_manifest(s.need(&s.model, "model")?)?;
    if let Some(ell) = s.ell {
        m.ell = ell;
    }
    if let Some(x) = s.ell_x {
        m.ell_x = x;
    }
    m.codec()?;
    Ok(m)
}

fn load_model(s: &Settings) -> Result<Model> {
    let mut model = Model::load(s.need(&s.model, "model")?)?;
    model.manifest = manifest(s)?;
    model.validate()?;
    Ok(model)
}

fn out_dir(s: &Settings) -> PathBuf {
    s.out.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn share_path(dir: &Path, kind: &str, party: usize) -> PathBuf {
    dir.join(format!("{kind}.p{party}.pks"))
}

fn header(s: &Settings, m: &ModelManifest, kind: &str, party: usize, count: usize) -> ShareHeader {
    ShareHeader { kind: kind.into(), party, n: s.n, k: s.k, ell: m.ell, ell_x: m.ell_x, count }
}

/// Reads a share file and checks it belongs to this run.
fn read_checked(path: &Path, s: &Settings, m: &ModelManifest, kind: &str, party: usize) -> Result<Vec<u64>> {
    let (h, values) = read_share_file(path)?;
    let want = header(s, m, kind, party, h.count);
    if h != want {
        return Err(Error::ConfigMismatch(format!(
            "{}: file is {} for party {} (n = {}, k = {}, ell = {}, ell_x = {}), run expects {} for party {} \
             (n = {}, k = {}, ell = {}, ell_x = {})",
            path.display(),
            h.kind,
            h.party,
            h.n,
            h.k,
            h.ell,
            h.ell_x,
            want.kind,
            want.party,
            want.n,
            want.k,
            want.ell,
            want.ell_x
        )));
    }
    Ok(values)
}

fn config<const L: u32>(s: &Settings) -> Result<Arc<PackingConfig<L>>> {
    PackingConfig::new(PssParams::new(s.n, s.k)?)
}

fn share_values<const L: u32>(shares: &[PackedShare<L>]) -> Vec<u64> {
    shares.iter().map(|x| x.value.value()).collect()
}

fn shares_from<const L: u32>(party: usize, d: usize, values: &[u64]) -> Result<Vec<PackedShare<L>>> {
    values.iter().map(|&v| Ok(PackedShare::new(party, Fp::from_canonical(v)?, d))).collect()
}

fn cmd_share<const L: u32>(s: &Settings, model: &Model, role: &str) -> Result<()> {
    let cfg = config::<L>(s)?;
    let plan = PackingPlan::new(&model.manifest, s.k)?;
    let dir = out_dir(s);
    fs::create_dir_all(&dir)?;
    let per_party: Vec<Vec<u64>> = if role == "owner" {
        let shares = share_model(&cfg, model, &plan, &mut party_rng(s.seed, OWNER_STREAM))?;
        shares.iter().map(|m| m.values()).collect()
    } else {
        let input = settings::read_input(s.need(&s.input, "input")?)?;
        let codec = model.manifest.codec()?;
        let shares = share_input(&cfg, &plan, &codec, &input, &mut party_rng(s.seed, CLIENT_STREAM))?;
        shares.iter().map(|v| share_values(v)).collect()
    };
    for (j, values) in per_party.iter().enumerate() {
        let h = header(s, &model.manifest, role, j + 1, values.len());
        write_share_file(&share_path(&dir, role, j + 1), &h, values)?;
    }
    println!("wrote {} {role} share files to {}", per_party.len(), dir.display());
    Ok(())
}

fn cmd_dealer<const L: u32>(s: &Settings, m: &ModelManifest) -> Result<()> {
    let cfg = config::<L>(s)?;
    let plan = PackingPlan::new(m, s.k)?;
    let budget = randomness_budget(m, &plan);
    let dir = out_dir(s);
    fs::create_dir_all(&dir)?;
    for (j, mat) in deal(&cfg, m.ell_x, &budget, s.seed)?.iter().enumerate() {
        let words = mat.to_words();
        write_share_file(&share_path(&dir, "dealer", j + 1), &header(s, m, "dealer", j + 1, words.len()), &words)?;
    }
    println!("wrote {} dealer files to {} for {budget:?}", s.n, dir.display());
    Ok(())
}

fn cmd_run_party<const L: u32>(s: &Settings, m: &ModelManifest, id: usize, shares: &Path, out: &Path) -> Result<()> {
    if id == 0 || id > s.n {
        return Err(Error::InvalidConfig(format!("party id {id} outside 1..={}", s.n)));
    }
    let cfg = config::<L>(s)?;
    let d = cfg.d();
    let plan = PackingPlan::new(m, s.k)?;
    let budget = randomness_budget(m, &plan);
    let model = ModelShares::<L>::from_values(m, &plan, id, d, &read_checked(&share_path(shares, "owner", id), s, m, "owner", id)?)?;
    let input = shares_from::<L>(id, d, &read_checked(&share_path(shares, "client", id), s, m, "client", id)?)?;
    let material = match s.offline {
        OfflineMode::Interactive => Material::default(),
        OfflineMode::Dealer => {
            let path = share_path(shares, "dealer", id);
            if path.exists() {
                Material::from_words(&read_checked(&path, s, m, "dealer", id)?)?
            } else {
                // every party can replay the dealer from the common seed
                deal(&cfg, m.ell_x, &budget, s.seed)?.swap_remove(id - 1)
            }
        }
    };
    let addrs = settings::read_hosts(s.need(&s.hosts, "hosts")?)?;
    if addrs.len() != s.n {
        return Err(Error::InvalidConfig(format!("hosts file lists {} parties, n = {}", addrs.len(), s.n)));
    }
    let listener = TcpListener::bind(addrs[id - 1])?;
    let endpoint = TcpEndpoint::establish(id, listener, &addrs, DEFAULT_TIMEOUT)?;
    let mut party = Party::new(cfg, Net::new(Box::new(endpoint)), s.seed, m.ell_x, material);
    if s.offline == OfflineMode::Interactive {
        party.material = generate_interactive(&mut party, &budget, m.ell_x)?;
    }
    let result = infer_secure(&mut party, m, &plan, &model, &input)?;
    fs::create_dir_all(out)?;
    let values = share_values(&result.shares);
    write_share_file(&share_path(out, "output", id), &header(s, m, "output", id, values.len()), &values)?;
    let stats_path = s.stats.clone().unwrap_or_else(|| out.join(format!("stats.p{id}.csv")));
    fs::write(&stats_path, party.net.stats().to_csv(s.n))?;
    println!("party {id}: done, output share and stats in {}", out.display());
    Ok(())
}

fn logits_csv<const L: u32>(m: &ModelManifest, revealed: &[Fp<L>]) -> Result<String> {
    let codec = m.codec()?;
    let mut text = String::from("index,fixed,value\n");
    for (i, v) in revealed.iter().enumerate() {
        text.push_str(&format!("{i},{},{:.9}\n", v.to_signed(), codec.decode(*v)));
    }
    Ok(text)
}

fn write_or_print(path: &Option<PathBuf>, text: &str) -> Result<()> {
    match path {
        Some(p) => Ok(fs::write(p, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_reveal<const L: u32>(s: &Settings, m: &ModelManifest, dir: &Path) -> Result<()> {
    let cfg = config::<L>(s)?;
    let plan = PackingPlan::new(m, s.k)?;
    let mut per_party = Vec::new();
    for j in 1..=s.n {
        let path = share_path(dir, "output", j);
        if path.exists() {
            per_party.push(shares_from::<L>(j, cfg.d(), &read_checked(&path, s, m, "output", j)?)?);
        }
    }
    if per_party.len() <= cfg.d() {
        return Err(Error::TooFewShares { needed: cfg.d() + 1, got: per_party.len() });
    }
    let revealed = reveal_values(&cfg, plan.output(), &per_party)?;
    write_or_print(&s.out, &logits_csv(m, &revealed)?)
}

fn cmd_simulate<const L: u32>(s: &Settings, model: &Model, check: bool) -> Result<()> {
    let input = settings::read_input(s.need(&s.input, "input")?)?;
    let run = run_inference::<L>(model, &input, &s.session())?;
    write_or_print(&s.out, &logits_csv(&model.manifest, &run.revealed)?)?;
    if let Some(p) = &s.stats {
        fs::write(p, run.stats.to_csv(s.n))?;
    }
    use packmpc::transport::Phase;
    eprintln!(
        "n = {}, k = {}, ell = {}: online {} rounds, {} elements; offline {} rounds, {} elements; {:.1} ms",
        s.n,
        s.k,
        L,
        run.stats.rounds(Phase::Online),
        run.stats.total_elements(Phase::Online),
        run.stats.rounds(Phase::Offline),
        run.stats.total_elements(Phase::Offline),
        run.wall.as_secs_f64() * 1e3
    );
    if check {
        let want = oracle::plaintext_infer(model, &input)?;
        let err = run.revealed.iter().zip(&want).map(|(a, b)| (a.to_signed() - b).abs()).max().unwrap_or(0);
        let bound = model.manifest.truncation_depth();
        eprintln!("largest logit difference from the plaintext fixed-point model: {err} ulps (bound {bound})");
    }
    Ok(())
}

fn cmd_bench(s: &Settings, ns: Vec<usize>, ks: Vec<usize>, protocols: Vec<String>, batch: usize, markdown: Option<PathBuf>) -> Result<()> {
    let ell = s.ell.unwrap_or(61);
    let ns = if ns.is_empty() { vec![s.n] } else { ns };
    let ks = if ks.is_empty() { vec![s.k] } else { ks };
    let protocols: Vec<String> =
        if protocols.is_empty() { bench::PROTOCOLS.iter().map(|p| p.to_string()).collect() } else { protocols };
    for p in &protocols {
        if !bench::PROTOCOLS.contains(&p.as_str()) {
            return Err(Error::UnknownFunctionality(p.clone()));
        }
    }
    let mut rows = Vec::new();
    for &n in &ns {
        for &k in &ks {
            if PssParams::new(n, k).is_err() {
                eprintln!("skipping n = {n}, k = {k}");
                continue;
            }
            for p in &protocols {
                let size = bench::default_size(p, batch);
                rows.extend(by_width!(ell, bench_case(n, k, p, size, s.offline, s.seed))?);
            }
        }
    }
    let mut csv = format!("{}\n", bench::CSV_HEADER);
    for r in &rows {
        csv.push_str(&r.csv());
        csv.push('\n');
    }
    write_or_print(&s.out, &csv)?;
    if let Some(md) = markdown {
        fs::write(md, bench::markdown(&rows))?;
    }
    Ok(())
}

fn bench_case<const L: u32>(n: usize, k: usize, p: &str, size: usize, offline: OfflineMode, seed: u64) -> Result<Vec<bench::Row>> {
    bench::run_case::<L>(n, k, p, size, offline, seed)
}

fn cmd_report(s: &Settings, bench_files: &[PathBuf], stats_files: &[PathBuf]) -> Result<()> {
    let mut rows = Vec::new();
    for f in bench_files {
        rows.extend(bench::compare_rows(&bench::read_rows(&fs::read_to_string(f)?)?)?);
    }
    if !stats_files.is_empty() {
        let m = manifest(s)?;
        let mut stats = ChannelStats::default();
        for f in stats_files {
            stats.merge(&ChannelStats::from_csv(&fs::read_to_string(f)?)?);
        }
        rows.push(bench::compare_model(&m, s.n, s.k, &stats)?);
    }
    if rows.is_empty() {
        return Err(Error::InvalidConfig("nothing to report: pass --bench or --stats-files".into()));
    }
    write_or_print(&s.out, &bench::report_text(&rows))
}
