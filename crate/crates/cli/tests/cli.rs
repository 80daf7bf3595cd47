use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output};

use packmpc::field::F61;
use packmpc::nn::{read_share_file, reveal_values, Model, PackingPlan};
use packmpc::oracle;
use packmpc::pss::{PackedShare, PackingConfig, PssParams};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_packmpc"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

/// A tiny model at 61 bits and a matching 64-value input.
fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["init-model", "--preset", "tiny", "--ell", "61", "--seed", "3", "--out", "tiny.json"]);
    let x: Vec<String> = (0..64).map(|i| format!("{:.3}", (i * 37 % 100) as f64 / 100.0)).collect();
    fs::write(dir.path().join("x.txt"), x.join(",")).unwrap();
    dir
}

fn free_ports(n: usize) -> Vec<u16> {
    let ls: Vec<TcpListener> = (0..n).map(|_| TcpListener::bind("127.0.0.1:0").unwrap()).collect();
    ls.iter().map(|l| l.local_addr().unwrap().port()).collect()
}

fn spawn_parties(dir: &Path, n: usize, extra: &[&str]) -> Vec<Child> {
    let hosts: Vec<String> = free_ports(n).iter().map(|p| format!("127.0.0.1:{p}")).collect();
    fs::write(dir.join("hosts"), hosts.join("\n")).unwrap();
    let ns = n.to_string();
    (1..=n)
        .map(|id| {
            let id = id.to_string();
            let mut args = vec!["run-party", "--id", &id, "--hosts", "hosts", "--model", "tiny.json", "--n", &ns];
            args.extend_from_slice(extra);
            bin().current_dir(dir).args(&args).output_later()
        })
        .collect()
}

trait Later {
    fn output_later(&mut self) -> Child;
}

impl Later for Command {
    fn output_later(&mut self) -> Child {
        self.stdout(std::process::Stdio::null()).stderr(std::process::Stdio::piped()).spawn().unwrap()
    }
}

#[test]
fn share_writes_one_file_per_party_and_reconstructs() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["share", "--role", "client", "--model", "tiny.json", "--input", "x.txt", "--n", "5", "--k", "2", "--out", "sh"]);
    ok(d, &["share", "--role", "owner", "--model", "tiny.json", "--n", "5", "--k", "2", "--out", "sh"]);
    let files: Vec<PathBuf> = fs::read_dir(d.join("sh")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(files.iter().filter(|f| f.to_string_lossy().contains("client.p")).count(), 5);
    assert_eq!(files.iter().filter(|f| f.to_string_lossy().contains("owner.p")).count(), 5);

    let model = Model::load(&d.join("tiny.json")).unwrap();
    let cfg = PackingConfig::<61>::new(PssParams::new(5, 2).unwrap()).unwrap();
    let plan = PackingPlan::new(&model.manifest, 2).unwrap();
    let per_party: Vec<Vec<PackedShare<61>>> = (1..=5)
        .map(|j| {
            let (h, v) = read_share_file(&d.join(format!("sh/client.p{j}.pks"))).unwrap();
            assert_eq!((h.party, h.n, h.k, h.ell), (j, 5, 2, 61));
            v.into_iter().map(|x| PackedShare::new(j, F61::from_canonical(x).unwrap(), cfg.d())).collect()
        })
        .collect();
    let got = reveal_values(&cfg, &plan.input, &per_party).unwrap();
    let codec = model.manifest.codec().unwrap();
    let text = fs::read_to_string(d.join("x.txt")).unwrap();
    let want: Vec<F61> = text.split(',').map(|t| codec.encode::<61>(t.parse().unwrap()).unwrap()).collect();
    assert_eq!(got, want);
}

#[test]
fn simulate_matches_the_oracle_and_is_deterministic() {
    let dir = setup();
    let d = dir.path();
    let args = ["simulate", "--model", "tiny.json", "--input", "x.txt", "--n", "7", "--k", "3", "--seed", "5"];
    let mut a = args.to_vec();
    a.extend(["--out", "a.csv", "--stats", "a_stats.csv"]);
    ok(d, &a);
    let mut b = args.to_vec();
    b.extend(["--out", "b.csv", "--stats", "b_stats.csv"]);
    ok(d, &b);
    assert_eq!(fs::read(d.join("a.csv")).unwrap(), fs::read(d.join("b.csv")).unwrap());
    assert_eq!(fs::read(d.join("a_stats.csv")).unwrap(), fs::read(d.join("b_stats.csv")).unwrap());
    // dense stats: one row per directed link and phase
    assert_eq!(fs::read_to_string(d.join("a_stats.csv")).unwrap().lines().count(), 1 + 7 * 6 * 2);

    let model = Model::load(&d.join("tiny.json")).unwrap();
    let x: Vec<f64> = fs::read_to_string(d.join("x.txt")).unwrap().split(',').map(|t| t.parse().unwrap()).collect();
    let want = oracle::plaintext_infer(&model, &x).unwrap();
    let got: Vec<i64> = fs::read_to_string(d.join("a.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(got.len(), 10);
    let bound = model.manifest.truncation_depth() as i64;
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() <= bound, "{g} vs {w}");
    }
}

#[test]
fn separate_tcp_processes_reveal_the_simulated_output() {
    let dir = setup();
    let d = dir.path();
    let common = ["--n", "5", "--k", "2", "--seed", "11"];
    let with = |head: &[&'static str]| -> Vec<&str> { head.iter().copied().chain(common).collect() };
    ok(d, &with(&["simulate", "--model", "tiny.json", "--input", "x.txt", "--out", "sim.csv"]));
    ok(d, &with(&["share", "--role", "owner", "--model", "tiny.json", "--out", "sh"]));
    ok(d, &with(&["share", "--role", "client", "--model", "tiny.json", "--input", "x.txt", "--out", "sh"]));
    ok(d, &with(&["dealer", "--model", "tiny.json", "--out", "sh"]));
    let kids = spawn_parties(d, 5, &["--k", "2", "--seed", "11", "--shares", "sh", "--out", "outp"]);
    for c in kids {
        let o = c.wait_with_output().unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    ok(d, &with(&["reveal", "--model", "tiny.json", "--shares", "outp", "--out", "tcp.csv"]));
    assert_eq!(fs::read(d.join("sim.csv")).unwrap(), fs::read(d.join("tcp.csv")).unwrap());

    // the per-party stats files add up to the closed forms
    let mut args = vec!["report", "--model", "tiny.json", "--n", "5", "--k", "2", "--stats-files"];
    let files: Vec<String> = (1..=5).map(|j| format!("outp/stats.p{j}.csv")).collect();
    args.extend(files.iter().map(String::as_str));
    let out = ok(d, &args);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("1 cases, 0 deviations"), "{text}");
}

#[test]
fn wrong_k_for_share_files_is_a_config_error() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["share", "--role", "owner", "--model", "tiny.json", "--n", "7", "--k", "2", "--out", "sh"]);
    ok(d, &["share", "--role", "client", "--model", "tiny.json", "--input", "x.txt", "--n", "7", "--k", "2", "--out", "sh"]);
    fs::write(d.join("hosts"), "127.0.0.1:1\n".repeat(7)).unwrap();
    let out = run(d, &["run-party", "--id", "1", "--hosts", "hosts", "--model", "tiny.json", "--n", "7", "--k", "3", "--shares", "sh"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("configuration mismatch"));
}

#[test]
fn exit_codes() {
    let dir = setup();
    let d = dir.path();
    // config: even party count
    let out = run(d, &["simulate", "--model", "tiny.json", "--input", "x.txt", "--n", "6"]);
    assert_eq!(out.status.code(), Some(2));
    // config: flags win over the JSON file, which alone would be valid
    fs::write(d.join("run.json"), r#"{"n": 7, "k": 3}"#).unwrap();
    let out = run(d, &["simulate", "--config", "run.json", "--k", "4", "--model", "tiny.json", "--input", "x.txt"]);
    assert_eq!(out.status.code(), Some(2));
    // io: missing input
    let out = run(d, &["simulate", "--model", "tiny.json", "--input", "nope.txt"]);
    assert_eq!(out.status.code(), Some(4));
    // config: wrong input length
    fs::write(d.join("short.txt"), "1,2,3").unwrap();
    let out = run(d, &["simulate", "--model", "tiny.json", "--input", "short.txt"]);
    assert_eq!(out.status.code(), Some(2));

    // protocol: dealer material made for a conv-only prefix of the model
    let mut m: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("tiny.json")).unwrap()).unwrap();
    m["layers"].as_array_mut().unwrap().truncate(1);
    fs::write(d.join("prefix.json"), m.to_string()).unwrap();
    let common = ["--n", "5", "--k", "2", "--out", "sh"];
    let with = |head: &[&'static str]| -> Vec<&str> { head.iter().copied().chain(common).collect() };
    ok(d, &with(&["share", "--role", "owner", "--model", "tiny.json"]));
    ok(d, &with(&["share", "--role", "client", "--model", "tiny.json", "--input", "x.txt"]));
    ok(d, &with(&["dealer", "--model", "prefix.json"]));
    for c in spawn_parties(d, 5, &["--k", "2", "--shares", "sh", "--out", "o"]) {
        let o = c.wait_with_output().unwrap();
        assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stderr).contains("missing preprocessed randomness"));
    }
}

fn bench_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn bench_columns_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["bench", "--ns", "5,7", "--ks", "2,3", "--ell", "61", "--out", "b.csv", "--markdown", "b.md"]);
    let rows = bench_rows(&fs::read_to_string(d.join("b.csv")).unwrap());
    // (5, 3) is skipped; 10 protocols x 2 phases for each of 3 pairs
    assert_eq!(rows.len(), 3 * 10 * 2);
    for r in &rows {
        if r[5] == "offline" {
            assert_eq!(r[7], "0", "dealer mode has no offline traffic: {r:?}");
        }
        if r[3] == "pre_or" && r[5] == "online" {
            assert_eq!(r[6], "6");
        }
        if r[3] == "pmat_mult_trunc" && r[5] == "online" {
            // 2um per member for u = m = 3 packed outputs
            assert_eq!(r[8], "18");
        }
        if r[3] == "pack_trans" && r[5] == "online" {
            assert_eq!(r[6], "1");
        }
    }
    assert!(fs::read_to_string(d.join("b.md")).unwrap().starts_with("| n | k |"));
    let out = ok(d, &["report", "--bench", "b.csv"]);
    assert!(String::from_utf8(out.stdout).unwrap().contains("30 cases, 0 deviations"));

    // same columns apart from timing on a second run
    ok(d, &["bench", "--ns", "5,7", "--ks", "2,3", "--ell", "61", "--out", "c.csv"]);
    let strip = |rows: Vec<Vec<String>>| rows.into_iter().map(|mut r| { r.pop(); r }).collect::<Vec<_>>();
    let again = bench_rows(&fs::read_to_string(d.join("c.csv")).unwrap());
    assert_eq!(strip(rows), strip(again));
}

#[test]
fn interactive_bench_has_offline_traffic() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["bench", "--n", "5", "--k", "2", "--protocols", "relu", "--offline", "interactive"]);
    let rows = bench_rows(&String::from_utf8(out.stdout).unwrap());
    assert_eq!(rows.len(), 2);
    assert!(rows[0][7].parse::<u64>().unwrap() > 0);
}

#[test]
fn tampered_stats_are_flagged() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["simulate", "--model", "tiny.json", "--input", "x.txt", "--n", "5", "--k", "2", "--out", "s.csv", "--stats", "st.csv"]);
    let text = fs::read_to_string(d.join("st.csv")).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    // first online row: one element more than was really sent
    let row = 1 + 5 * 4;
    let mut f: Vec<String> = lines[row].split(',').map(str::to_string).collect();
    assert_eq!(f[2], "online");
    f[3] = (f[3].parse::<u64>().unwrap() + 1).to_string();
    lines[row] = f.join(",");
    fs::write(d.join("bad.csv"), lines.join("\n") + "\n").unwrap();
    let report = |file: &str| {
        let out = ok(d, &["report", "--model", "tiny.json", "--n", "5", "--k", "2", "--stats-files", file]);
        String::from_utf8(out.stdout).unwrap()
    };
    assert!(report("st.csv").contains("1 cases, 0 deviations"));
    assert!(report("bad.csv").contains("1 cases, 1 deviations"));
}
