use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_streamtts"));
    c.env_remove("STREAMTTS_SEED");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn stdout_json(o: &Output) -> Value {
    let s = String::from_utf8_lossy(&o.stdout);
    let start = s.find('{').expect("json in stdout");
    serde_json::from_str(&s[start..]).unwrap()
}

const FAST: [&str; 6] = ["--sim-ts", "0.5", "--sim-ta", "1", "--sim-tc", "0.5"];

fn synth(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["synth", "--oracle"];
    args.extend_from_slice(&FAST);
    args.extend_from_slice(extra);
    run(dir, &args)
}

#[test]
fn gen_corpus_empty_and_deterministic() {
    let d = TempDir::new().unwrap();
    let o = run(d.path(), &["gen-corpus", "--out", "empty", "--n-items", "0"]);
    assert_eq!(o.status.code(), Some(0));
    let m: Value = serde_json::from_slice(&fs::read(d.path().join("empty/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["items"].as_array().unwrap().len(), 0);

    for name in ["a", "b"] {
        let o = run(d.path(), &["gen-corpus", "--out", name, "--n-items", "3", "--seed", "7"]);
        assert_eq!(o.status.code(), Some(0));
    }
    assert_eq!(fs::read(d.path().join("a/manifest.json")).unwrap(), fs::read(d.path().join("b/manifest.json")).unwrap());
}

#[test]
fn gen_corpus_unwritable_path_fails() {
    let d = TempDir::new().unwrap();
    fs::write(d.path().join("file"), b"x").unwrap();
    let o = run(d.path(), &["gen-corpus", "--out", "file/sub", "--n-items", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("file/sub"));
}

#[test]
fn oracle_synth_is_byte_identical_across_runs() {
    let d = TempDir::new().unwrap();
    for backend in ["fm", "lm"] {
        let a = format!("{backend}1.wav");
        let b = format!("{backend}2.wav");
        assert!(synth(d.path(), &["--backend", backend, "--text", "good day", "--seed", "3", "--out", &a]).status.success());
        assert!(synth(d.path(), &["--backend", backend, "--text", "good day", "--seed", "3", "--out", &b]).status.success());
        let wa = fs::read(d.path().join(&a)).unwrap();
        assert!(wa.len() > 44);
        assert_eq!(wa, fs::read(d.path().join(&b)).unwrap(), "{backend}");
    }
}

#[test]
fn fm_report_bound_uses_closed_form() {
    let d = TempDir::new().unwrap();
    let o = synth(d.path(), &["--text", "ab", "--chunk-tokens", "25", "--out", "x.wav", "--metrics", "m.json", "--events", "e.csv"]);
    assert!(o.status.success());
    let r = stdout_json(&o);
    let m = &r["metrics"];
    let want = (25.0 + 3.0) * 0.5 + 1.0 + 0.5;
    assert_eq!(m["bound_ms"].as_f64(), Some(want));
    for key in ["backend", "l", "d", "m", "t_s", "t_a", "t_c", "measured_latency_ms", "rtf", "stall_ms_per_stage"] {
        assert!(m.get(key).is_some(), "missing {key}");
    }
    assert_eq!(r["config"]["chunk_tokens"], 25);
    let csv = fs::read_to_string(d.path().join("e.csv")).unwrap();
    assert!(csv.starts_with("timestamp_us,stage,event,payload\n"));
    let file: Value = serde_json::from_slice(&fs::read(d.path().join("m.json")).unwrap()).unwrap();
    assert_eq!(file, r);
}

#[test]
fn empty_text_writes_empty_audio_with_warning() {
    let d = TempDir::new().unwrap();
    let o = synth(d.path(), &["--text", "", "--out", "e.wav"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
    assert_eq!(stdout_json(&o)["metrics"]["audio_samples"], 0);
}

#[test]
fn missing_checkpoint_names_the_file() {
    let d = TempDir::new().unwrap();
    let o = run(d.path(), &["synth", "--text", "a", "--flow-checkpoint", "nowhere.ckpt"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere.ckpt"));
    let o = run(d.path(), &["synth", "--backend", "lm", "--text", "a"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("codec.ckpt"));
}

#[test]
fn prompt_audio_feeds_the_session() {
    let d = TempDir::new().unwrap();
    let wave: Vec<f64> = (0..8000).map(|i| (i as f64 * 0.07).sin() * 0.3).collect();
    streamtts::audio_io::write_wav(&d.path().join("p.wav"), &wave, 16_000).unwrap();
    let o = synth(d.path(), &["--text", "hi", "--prompt-audio", "p.wav", "--out", "x.wav"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout_json(&o)["metrics"]["audio_samples"], 4 * 960);
}

#[test]
fn seed_comes_from_env_unless_flag_given() {
    let d = TempDir::new().unwrap();
    let mut args = vec!["synth", "--oracle", "--text", "a", "--out", "s.wav"];
    args.extend_from_slice(&FAST);
    let o = bin().current_dir(d.path()).args(&args).env("STREAMTTS_SEED", "41").output().unwrap();
    assert_eq!(stdout_json(&o)["config"]["seed"], 41);
    args.extend_from_slice(&["--seed", "5"]);
    let o = bin().current_dir(d.path()).args(&args).env("STREAMTTS_SEED", "41").output().unwrap();
    assert_eq!(stdout_json(&o)["config"]["seed"], 5);
}

#[test]
fn config_file_fills_unset_flags() {
    let d = TempDir::new().unwrap();
    fs::write(d.path().join("c.toml"), "[synth]\nbackend = \"lm\"\nseed = 9\noracle = true\ndelay = 4\n").unwrap();
    let mut args = vec!["--config", "c.toml", "synth", "--text", "ab", "--seed", "2", "--out", "c.wav"];
    args.extend_from_slice(&FAST);
    let o = run(d.path(), &args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = stdout_json(&o);
    assert_eq!(r["config"]["backend"], "lm");
    assert_eq!(r["config"]["delay"], 4);
    assert_eq!(r["config"]["seed"], 2);
}

#[test]
fn bench_single_row_and_closed_form_bound() {
    let d = TempDir::new().unwrap();
    let o = run(d.path(), &["bench", "--sweep-l", "10", "--repeats", "1", "--sim-ts", "1", "--sim-ta", "2", "--sim-tc", "1", "--json", "b.json"]);
    assert!(o.status.success());
    let table = String::from_utf8_lossy(&o.stdout);
    assert_eq!(table.lines().count(), 2);
    let r: Value = serde_json::from_slice(&fs::read(d.path().join("b.json")).unwrap()).unwrap();
    let rows = r["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["bound_ms"].as_f64(), Some((10.0 + 3.0) * 1.0 + 2.0 + 1.0));
}

#[test]
fn bench_rejects_bad_sweep_list() {
    let d = TempDir::new().unwrap();
    assert_eq!(run(d.path(), &["bench", "--sweep-l", "5,ten"]).status.code(), Some(1));
    assert_eq!(run(d.path(), &["bench", "--sweep-l", "0"]).status.code(), Some(1));
}

#[test]
fn selftest_verdicts_and_filter() {
    let d = TempDir::new().unwrap();
    let o = run(d.path(), &["selftest"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().filter(|l| l.starts_with("PASS")).count(), 6);

    let o = run(d.path(), &["selftest", "--filter", "masks"]);
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "PASS masks");

    fs::write(d.path().join("bad.ckpt"), b"not a checkpoint").unwrap();
    let o = run(d.path(), &["selftest", "--codec-checkpoint", "bad.ckpt"]);
    assert_ne!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL opq"));
}

#[test]
fn usage_errors_exit_one() {
    let d = TempDir::new().unwrap();
    assert_eq!(run(d.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(d.path(), &["synth", "--backend", "xx"]).status.code(), Some(1));
    assert_eq!(run(d.path(), &["mask", "--variant", "weird"]).status.code(), Some(1));
    assert_eq!(run(d.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn mask_dump_is_a_zero_one_grid() {
    let d = TempDir::new().unwrap();
    let o = run(d.path(), &["mask", "--variant", "chunk:1000", "--frames", "4", "--rate-hz", "2"]);
    assert_eq!(String::from_utf8_lossy(&o.stdout), "1100\n1100\n1111\n1111\n");
}
