use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use activemix::synthetic::{generate, SyntheticSpec};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_activemix"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn activemix")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(args: &[&str]) -> String {
    let o = run(args);
    assert!(o.status.success(), "{args:?} failed: {}", stderr(&o));
    stdout(&o)
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    dfm: String,
    labels: String,
    /// Labels for every fourth document only.
    partial: String,
    truth: BTreeMap<String, usize>,
}

impl Fixture {
    fn new(n_docs: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let spec = SyntheticSpec {
            n_docs,
            pi: vec![0.75, 0.25],
            mean_doc_len: 30.0,
            seed: 11,
            ..SyntheticSpec::default()
        };
        let s = generate(&spec).unwrap();
        let mut dfm = Vec::new();
        s.corpus.write_dfm(&mut dfm).unwrap();
        fs::write(root.join("corpus.dfm"), dfm).unwrap();
        let mut all = String::new();
        let mut some = String::new();
        let mut truth = BTreeMap::new();
        for (i, &c) in s.clusters.iter().enumerate() {
            let id = s.corpus.doc_id(i);
            all.push_str(&format!("{id}\t{c}\n"));
            if i % 4 == 0 {
                some.push_str(&format!("{id}\t{c}\n"));
            }
            truth.insert(id.to_owned(), c);
        }
        fs::write(root.join("labels.tsv"), all).unwrap();
        fs::write(root.join("partial.tsv"), some).unwrap();
        let p = |n: &str| root.join(n).to_string_lossy().into_owned();
        Fixture {
            dfm: p("corpus.dfm"),
            labels: p("labels.tsv"),
            partial: p("partial.tsv"),
            truth,
            root,
            _dir: dir,
        }
    }

    fn path(&self, name: &str) -> String {
        self.root.join(name).to_string_lossy().into_owned()
    }
}

fn read_json(p: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn f64s(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

/// `(n_labeled, f1)` per metric row.
fn metric_rows(csv: &str) -> Vec<(usize, f64)> {
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("iteration,n_labeled,precision,recall,f1,objective"));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[1].parse().unwrap(), f[4].parse().unwrap())
        })
        .collect()
}

#[test]
fn fit_without_unlabeled_weight_is_naive_bayes() {
    let fx = Fixture::new(400);
    let out = fx.path("fit");
    let printed = ok(&["fit", "--dfm", &fx.dfm, "--labels", &fx.partial, "--lambda", "0", "--out", &out]);
    assert!(printed.contains("EM iterations"), "{printed}");

    let ck = read_json(Path::new(&out).join("params.json"));
    let log_pi = f64s(&ck["params"]["log_pi"]);
    let log_eta = f64s(&ck["params"]["log_eta"]);
    let corpus = activemix::corpus::load_corpus(Path::new(&fx.dfm), None).unwrap();
    let v = corpus.n_terms();
    let (alpha, beta) = (2.0, 2.0);
    let mut n_c = [0.0; 2];
    let mut words = vec![[0.0; 2]; v];
    for line in fs::read_to_string(&fx.partial).unwrap().lines() {
        let (id, c) = line.split_once('\t').unwrap();
        let c: usize = c.parse().unwrap();
        n_c[c] += 1.0;
        let (terms, counts) = corpus.row(corpus.doc_index(id).unwrap());
        for (&t, &x) in terms.iter().zip(counts) {
            words[t as usize][c] += f64::from(x);
        }
    }
    let n_l = n_c[0] + n_c[1];
    for c in 0..2 {
        let pi = (n_c[c] + alpha - 1.0) / (n_l + 2.0 * (alpha - 1.0));
        assert!((log_pi[c].exp() - pi).abs() < 1e-12);
        let len: f64 = words.iter().map(|w| w[c]).sum();
        for t in 0..v {
            let eta = (words[t][c] + beta - 1.0) / (len + v as f64 * (beta - 1.0));
            assert!((log_eta[t * 2 + c].exp() - eta).abs() < 1e-12, "term {t} class {c}");
        }
    }

    let preds = fs::read_to_string(Path::new(&out).join("predictions.csv")).unwrap();
    assert_eq!(preds.lines().count(), 401);
    let run = read_json(Path::new(&out).join("run.json"));
    assert_eq!(run["command"], "fit");
    assert_eq!(run["settings"]["model"]["lambda"], 0.0);
}

#[test]
fn fit_multi_cluster_binary() {
    let fx = Fixture::new(300);
    let out = fx.path("mcb");
    ok(&[
        "fit", "--dfm", &fx.dfm, "--labels", &fx.partial, "--mode", "multi_cluster_binary", "--k", "5", "--k-star", "0", "--out", &out,
    ]);
    let ck = read_json(Path::new(&out).join("params.json"));
    assert_eq!(ck["params"]["k"], 5);
    assert_eq!(f64s(&ck["params"]["log_pi"]).len(), 5);
    assert_eq!(ck["hyperparams"]["mode"]["kind"], "multi_cluster_binary");
}

#[test]
fn usage_and_validation_errors_exit_2() {
    let fx = Fixture::new(50);
    let o = run(&["fit", "--dfm", &fx.dfm, "--labels", &fx.path("nope.tsv"), "--out", &fx.path("x")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.tsv"), "{}", stderr(&o));

    let o = run(&["fit", "--dfm", &fx.dfm]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--labels"));

    let o = run(&["fit", "--dfm", &fx.dfm, "--labels", &fx.labels, "--lambda", "1.5", "--out", &fx.path("x")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("lambda"));

    let o = run(&["fit", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["active-sim", "--stop", "often", "--labels", &fx.labels, "--dfm", &fx.dfm]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn active_sim_runs_to_budget_and_is_reproducible() {
    let fx = Fixture::new(2000);
    let args = |out: &str, strategy: &str| -> Vec<String> {
        [
            "active-sim", "--dfm", &fx.dfm, "--labels", &fx.labels, "--strategy", strategy, "--batch-size", "20", "--stop", "budget:620",
            "--seed", "3", "--out", out,
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    };
    let a = fx.path("a");
    let b = fx.path("b");
    let run_a: Vec<String> = args(&a, "uncertainty");
    let out_a = ok(&run_a.iter().map(String::as_str).collect::<Vec<_>>());
    let rows = metric_rows(&out_a);
    assert_eq!(rows.len(), 31);
    assert_eq!(rows[0].0, 20);
    assert_eq!(rows[30].0, 620);

    let run_b: Vec<String> = args(&b, "uncertainty");
    let out_b = ok(&run_b.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(out_a, out_b);
    for f in ["params.json", "predictions.csv", "labels.tsv", "events.jsonl", "metrics.csv"] {
        assert_eq!(fs::read(Path::new(&a).join(f)).unwrap(), fs::read(Path::new(&b).join(f)).unwrap(), "{f}");
    }
    let run_json = |d: &str| {
        let mut v = read_json(Path::new(d).join("run.json"));
        v["settings"]["flags"]["out"] = Value::Null;
        v
    };
    assert_eq!(run_json(&a), run_json(&b));

    let r = fx.path("r");
    let run_r: Vec<String> = args(&r, "random");
    let rows_r = metric_rows(&ok(&run_r.iter().map(String::as_str).collect::<Vec<_>>()));
    assert_eq!(rows_r.len(), 31);
    assert_ne!(fs::read(Path::new(&a).join("labels.tsv")).unwrap(), fs::read(Path::new(&r).join("labels.tsv")).unwrap());
}

#[test]
fn mislabeling_degrades_the_curve() {
    let fx = Fixture::new(1000);
    let tail_f1 = |p: &str, out: &str| {
        let o = ok(&[
            "active-sim", "--dfm", &fx.dfm, "--labels", &fx.labels, "--stop", "budget:300", "--doc-error-p", p, "--seed", "5", "--out", out,
        ]);
        let rows = metric_rows(&o);
        rows[rows.len() - 5..].iter().map(|r| r.1).sum::<f64>() / 5.0
    };
    let clean = tail_f1("0", &fx.path("clean"));
    let noisy = tail_f1("0.3", &fx.path("noisy"));
    assert!(noisy < clean, "noisy {noisy} vs clean {clean}");
}

#[test]
fn settings_file_with_flag_override() {
    let fx = Fixture::new(400);
    let cfg = fx.path("sim.toml");
    fs::write(&cfg, "dfm = \"corpus.dfm\"\nlabels = \"labels.tsv\"\nbatch-size = 10\nstop = \"budget:60\"\nlambda = 0.01\n").unwrap();
    let out = fx.path("cfg-out");
    let o = ok(&["active-sim", "--config", &cfg, "--batch-size", "20", "--out", &out]);
    let rows = metric_rows(&o);
    assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), vec![20, 40, 60]);
    let saved = read_json(Path::new(&out).join("run.json"));
    assert_eq!(saved["settings"]["session"]["batch_size"], 20);
    assert_eq!(saved["settings"]["session"]["lambda"], 0.01);

    fs::write(&cfg, "lamda = 0.01\n").unwrap();
    let o = run(&["active-sim", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("lamda"));
}

#[test]
fn resume_finishes_a_saved_session() {
    let fx = Fixture::new(400);
    let out = fx.path("resume");
    let base = ["active-sim", "--dfm", &fx.dfm, "--labels", &fx.labels, "--stop", "budget:100", "--out", &out];
    let first = ok(&base);
    let mut again = base.to_vec();
    again.push("--resume");
    assert_eq!(ok(&again), first);
    let mut changed = again.clone();
    changed.extend(["--lambda", "0.5"]);
    assert_eq!(run(&changed).status.code(), Some(2));
}

#[test]
fn eval_scores_predictions() {
    let fx = Fixture::new(400);
    let out = fx.path("fit");
    ok(&["fit", "--dfm", &fx.dfm, "--labels", &fx.partial, "--out", &out]);
    let preds = Path::new(&out).join("predictions.csv");
    let preds = preds.to_str().unwrap();
    let printed = ok(&["eval", "--predictions", preds, "--truth", &fx.labels, "--out", &out]);
    for key in ["precision", "recall", "f1"] {
        assert!(printed.lines().any(|l| l.starts_with(key)), "{printed}");
    }

    let json = ok(&["eval", "--predictions", preds, "--truth", &fx.labels, "--json", "--out", &out]);
    let record: Value = serde_json::from_str(&json).unwrap();
    assert_eq!(record["n_evaluated"], 400);
    let pred_rows: BTreeMap<String, String> = fs::read_to_string(preds)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_owned(), f[1].to_owned())
        })
        .collect();
    let correct = fx
        .truth
        .iter()
        .filter(|(id, &c)| pred_rows[*id] == ["negative", "positive"][c])
        .count();
    assert!((record["accuracy"].as_f64().unwrap() - correct as f64 / 400.0).abs() < 1e-12);

    let other = fx.path("other.tsv");
    fs::write(&other, "stranger\t1\n").unwrap();
    let o = run(&["eval", "--predictions", preds, "--truth", &other, "--out", &out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("document id sets differ"), "{}", stderr(&o));
}

#[test]
fn bench_writes_grid_results() {
    let fx = Fixture::new(300);
    let cfg = fx.path("grid.toml");
    fs::write(
        &cfg,
        "runs = 4\niterations = 3\n\n[source]\nkind = \"files\"\ndfm = \"corpus.dfm\"\nlabels = \"labels.tsv\"\n\n[session]\nbatch_size = 10\n",
    )
    .unwrap();
    let out = fx.path("bench");
    let printed = ok(&["bench", "--config", &cfg, "--runs", "2", "--execution", "sequential", "--out", &out]);
    assert_eq!(printed.lines().count(), 1 + 2 * 3);
    let rows = fs::read_to_string(Path::new(&out).join("results.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 2 * 2 * 3);
    let run = read_json(Path::new(&out).join("run.json"));
    assert_eq!(run["settings"]["runs"], 2);
    assert_eq!(run["settings"]["execution"], "sequential");
}

#[test]
fn serve_reports_the_assigned_port() {
    let dir = tempfile::tempdir().unwrap();
    let mut child = bin()
        .args(["serve", "--port", "0", "--data-dir"])
        .arg(dir.path())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on http://").unwrap_or_else(|| panic!("unexpected: {line}")).to_owned();
    assert!(!addr.ends_with(":0"));

    let mut s = TcpStream::connect(&addr).unwrap();
    write!(s, "GET /v1/sessions/none HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut resp = String::new();
    s.read_to_string(&mut resp).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(resp.starts_with("HTTP/1.1 404"), "{resp}");
    assert!(resp.contains("\"code\":\"not_found\""));
    assert!(dir.path().join("run.json").exists());
}
