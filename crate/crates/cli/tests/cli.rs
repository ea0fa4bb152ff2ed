use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::thread;

use serde_json::{json, Value};

use retrosmc_chem::{fingerprint, parse_smiles, DEFAULT_BITS, DEFAULT_RADIUS};
use retrosmc_core::forward::{ForwardModel, ReactantSet};
use retrosmc_core::synth::generate;
use retrosmc_core::templates::{TemplateLibrary, ToyModel};

fn retrosmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_retrosmc")).args(args).env_remove("RETROSMC_MODEL_SERVER").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

/// Twenty catalog reactants holding the first recorded pair reaction, written
/// with the benchmark library and a run config targeting its product.
fn setup(dir: &Path) -> PathBuf {
    let b = generate(0, Default::default()).unwrap();
    let truth = b.truths.iter().find(|t| t.reactants.len() == 2).unwrap();
    let mut items: Vec<String> = truth.reactants.clone();
    for s in &b.catalog {
        if items.len() == 20 {
            break;
        }
        if !items.contains(s) {
            items.push(s.clone());
        }
    }
    fs::write(dir.join("catalog.smi"), format!("# test catalog\n{}\n", items.join("\n"))).unwrap();
    fs::write(dir.join("templates.json"), b.library.to_json()).unwrap();
    let cfg = json!({
        "catalog": "catalog.smi",
        "templates": "templates.json",
        "target": truth.product,
        "particles": 20,
        "schedule": [{"shape": [2], "steps": 6}],
        "k_nn": 8,
        "clusters": 5,
        "training_size": 60,
        "seed": 4,
        "output": "run",
    });
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

const ARTIFACTS: [&str; 5] = ["clusters.csv", "manifest.json", "posterior.csv", "routes.csv", "trace.csv"];

fn listing(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    v.sort();
    v
}

#[test]
fn run_twice_gives_identical_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = setup(tmp.path());
    let cfg = cfg.to_str().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        let o = retrosmc(&["run", cfg, "--set", &format!("output={}", out.display())]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
        assert!(summary["forward_calls"].as_u64().unwrap() > 0);
    }
    assert_eq!(listing(&a), ARTIFACTS);
    for name in ARTIFACTS {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let manifest: Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 4);
    assert_eq!(manifest["config"]["particles"], 20);
    assert!(manifest.get("started_at").is_none());

    let c = tmp.path().join("c");
    let o = retrosmc(&["run", cfg, "--set", &format!("output={}", c.display()), "--set", "seed=5"]);
    assert_eq!(code(&o), 0);
    assert_ne!(fs::read(a.join("posterior.csv")).unwrap(), fs::read(c.join("posterior.csv")).unwrap());
}

/// Sum of per-reactant count fingerprints, formatted as `index:count`.
fn recomputed(key: &str) -> String {
    let mut sum: BTreeMap<u32, u32> = BTreeMap::new();
    for s in key.split(">>").flat_map(|step| step.split('.')) {
        let fp = fingerprint(&parse_smiles(s).unwrap(), DEFAULT_RADIUS, DEFAULT_BITS).unwrap();
        for &(i, c) in fp.counts() {
            *sum.entry(i).or_default() += c;
        }
    }
    sum.iter().map(|(i, c)| format!("{i}:{c}")).collect::<Vec<_>>().join(" ")
}

#[test]
fn exported_vectors_match_recomputation() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = setup(tmp.path());
    assert_eq!(code(&retrosmc(&["run", cfg.to_str().unwrap()])), 0);
    let run = tmp.path().join("run");
    let out = tmp.path().join("vectors.csv");
    let o = retrosmc(&["export-vectors", run.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let routes = csv::Reader::from_path(run.join("routes.csv")).unwrap().records().count();
    let mut r = csv::Reader::from_path(&out).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["key", "vector", "cluster_id", "gamma"]);
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), routes);
    assert!(!rows.is_empty());
    for row in &rows {
        assert_eq!(&row[1], recomputed(&row[0]), "{}", &row[0]);
    }

    fs::remove_file(run.join("routes.csv")).unwrap();
    assert_eq!(code(&retrosmc(&["export-vectors", run.to_str().unwrap()])), 2);
}

#[test]
fn failures_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = setup(tmp.path());
    let cfg = cfg.to_str().unwrap();
    let missing = tmp.path().join("nowhere.smi");
    assert_eq!(code(&retrosmc(&["run", cfg, "--set", &format!("catalog={}", missing.display())])), 2);
    assert_eq!(code(&retrosmc(&["run", tmp.path().join("absent.json").to_str().unwrap()])), 2);
    assert_eq!(code(&retrosmc(&["run", cfg, "--set", "particle_count=3"])), 1);
    assert_eq!(code(&retrosmc(&["run", cfg, "--set", "particles=0"])), 1);
    assert_eq!(code(&retrosmc(&["run", cfg, "--set", "budget=30"])), 3);
    assert_eq!(code(&retrosmc(&["run"])), 1);

    let dead = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = dead.local_addr().unwrap().to_string();
    drop(dead);
    assert_eq!(code(&retrosmc(&["run", cfg, "--set", &format!("model_server={addr}"), "--set", "server_retries=0"])), 4);
    assert_eq!(code(&retrosmc(&["serve-check"])), 1);
}

#[test]
fn gen_benchmark_writes_the_suite() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("bench");
    let o = retrosmc(&["gen-benchmark", "--seed", "0", "-o", dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!((report["catalog"].as_u64(), report["templates"].as_u64(), report["truths"].as_u64()), (Some(500), Some(10), Some(40)));
    let catalog = fs::read_to_string(dir.join("catalog.smi")).unwrap();
    assert_eq!(catalog.lines().count(), 500);
    assert_eq!(TemplateLibrary::load(&dir.join("templates.json")).unwrap().len(), 10);
    assert_eq!(fs::read_to_string(dir.join("truths.txt")).unwrap().lines().filter(|l| !l.starts_with('#')).count(), 40);
}

#[test]
fn bench_rows_mean_and_pooled() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("bench.csv");
    let o = retrosmc(&[
        "bench",
        "--set",
        "targets=[3]",
        "--set",
        "seeds=2",
        "--set",
        "particles=30",
        "--set",
        r#"schedule=[{"shape":[2],"steps":5}]"#,
        "--set",
        "training_size=100",
        "--set",
        &format!("output={}", out.display()),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut r = csv::Reader::from_path(&out).unwrap();
    let header = r.headers().unwrap().clone();
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(&rows[2][1], "mean");
    assert_eq!(&rows[3][1], "pooled");
    for (i, name) in header.iter().enumerate().filter(|(_, n)| ["detection", "inclusion", "top_10", "forward_calls"].contains(n)) {
        let v: Vec<f64> = rows.iter().map(|r| r[i].parse().unwrap()).collect();
        assert!((v[2] - (v[0] + v[1]) / 2.0).abs() < 1e-12, "{name}");
        let pooled = if name == "forward_calls" { v[0] + v[1] } else { v[0].max(v[1]) };
        assert_eq!(v[3], pooled, "{name}");
    }
}

/// Loopback server answering with the toy model; `corrupt` alters every
/// seventh answer.
fn toy_server(corrupt: bool) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let library = generate(0, Default::default()).unwrap().library;
    thread::spawn(move || {
        for stream in listener.incoming() {
            let stream = stream.unwrap();
            let model = ToyModel::new(library.clone());
            thread::spawn(move || {
                let mut w = stream.try_clone().unwrap();
                for line in BufReader::new(stream).lines() {
                    let Ok(line) = line else { return };
                    let reply = match serde_json::from_str::<Value>(&line) {
                        Ok(req) if req.get("reactants").is_some() => {
                            let members: Vec<String> = serde_json::from_value(req["reactants"].clone()).unwrap();
                            let p = model.predict(&ReactantSet::new(&members).unwrap()).unwrap();
                            let id = req["id"].as_u64().unwrap();
                            let alpha = match (corrupt && id % 7 == 0, p.alpha < 1.0) {
                                (false, _) => p.alpha,
                                (true, true) => 1.0,
                                (true, false) => 0.5,
                            };
                            json!({"id": id, "product": p.product, "alpha": alpha})
                        }
                        _ => json!({"id": null, "error": "malformed request"}),
                    };
                    if writeln!(w, "{reply}").is_err() {
                        return;
                    }
                }
            });
        }
    });
    addr
}

#[test]
fn serve_check_against_loopback_servers() {
    let o = retrosmc(&["serve-check", "--server", &toy_server(false)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report, json!({"cases": 500, "mismatches": 0, "malformed_line_handled": true}));

    let o = retrosmc(&["serve-check", "--server", &toy_server(true), "--cases", "50"]);
    assert_eq!(code(&o), 4);
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["mismatches"], 7);
}
