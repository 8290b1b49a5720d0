use std::path::Path;
use std::process::{Command, Output};

use clap::CommandFactory;
use mdat::cli::Cli;
use mdat::dataio::{self, FeatureSequence, SynthSpec, MANIFEST_NAME};

fn mdat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mdat")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const QUICK: &[&str] = &["--epochs", "2", "--lr", "1e-3", "--heads", "2", "--seq-len", "8", "--seed", "4"];

#[test]
fn inspect_reports_feature_shape() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.mdf");
    let seq = FeatureSequence::new(2, 3, vec![0.5; 6]).unwrap();
    dataio::write_feature_file(&seq, &path).unwrap();
    let out = mdat(&["inspect", p(&path)]);
    assert!(out.status.success());
    assert_eq!(stdout(&out).trim(), "MDF1 rows=2 cols=3");
}

#[test]
fn inspect_rejects_other_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("junk");
    std::fs::write(&path, b"hello world").unwrap();
    let out = mdat(&["inspect", p(&path)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn gradcheck_passes() {
    let out = mdat(&["gradcheck", "--seed", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let line = text.lines().find(|l| l.starts_with("max relative error:")).unwrap();
    let value: f64 = line.split_whitespace().nth(3).unwrap().parse().unwrap();
    assert!(value < 1e-3);
}

#[test]
fn synth_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = mdat(&["synth", "--out", p(&data), "--per-class", "6", "--train-fraction", "0.5"]);
    assert!(out.status.success());
    let manifest = data.join(MANIFEST_NAME);
    let runs = dir.path().join("runs");
    let mut args = vec!["train", "--manifest", p(&manifest), "--out", p(&runs), "--models", "mdat,baseline"];
    args.extend_from_slice(QUICK);
    let out = mdat(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(runs.join("report.json").exists() && runs.join("table.csv").exists());

    let ck = runs.join("mdat-seed4.mdm");
    let info = stdout(&mdat(&["inspect", p(&ck)]));
    assert!(info.starts_with("MDM1 version=1 kind=mdat seq_len=8"), "{info}");

    let out = mdat(&["eval", "--checkpoint", p(&ck), "--manifest", p(&manifest), "--split", "test"]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("samples=12"));

    let out = mdat(&["eval", "--checkpoint", p(&ck), "--manifest", p(&manifest), "--vocabulary", "emodb7"]);
    assert!(!out.status.success());
}

fn report_ua(dir: &Path) -> Vec<f64> {
    let text = std::fs::read_to_string(dir.join("report.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["runs"].as_array().unwrap().iter().map(|r| r["metrics"]["ua"].as_f64().unwrap()).collect()
}

#[test]
fn zero_shot_matches_cross_language() {
    let dir = tempfile::tempdir().unwrap();
    let (src, tgt) = (dir.path().join("src"), dir.path().join("tgt"));
    dataio::synth_dataset(&SynthSpec { per_class: 6, ..Default::default() }, &src).unwrap();
    let spec = SynthSpec { per_class: 8, seed: 9, shift: 1.0, train_fraction: Some(0.5), ..Default::default() };
    dataio::synth_dataset(&spec, &tgt).unwrap();
    let (sm, tm) = (src.join(MANIFEST_NAME), tgt.join(MANIFEST_NAME));
    let (a, b) = (dir.path().join("cross"), dir.path().join("kshot"));

    let mut args = vec!["cross", "--source", p(&sm), "--target", p(&tm), "--out", p(&a)];
    args.extend_from_slice(QUICK);
    assert!(mdat(&args).status.success());
    let mut args = vec!["kshot", "--source", p(&sm), "--target", p(&tm), "--k", "0", "--out", p(&b)];
    args.extend_from_slice(QUICK);
    assert!(mdat(&args).status.success());
    assert_eq!(report_ua(&a), report_ua(&b));
}

#[test]
fn reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    dataio::synth_dataset(&SynthSpec { per_class: 6, ..Default::default() }, &data).unwrap();
    let manifest = data.join(MANIFEST_NAME);
    let read = |out: &Path| {
        let mut v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("generated_at_unix");
        (v, std::fs::read(out.join("table.csv")).unwrap())
    };
    let mut reports = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let mut args = vec!["train", "--manifest", p(&manifest), "--out", p(&out)];
        args.extend_from_slice(QUICK);
        assert!(mdat(&args).status.success());
        reports.push(read(&out));
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    dataio::synth_dataset(&SynthSpec { per_class: 5, ..Default::default() }, &data).unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "[train]\nepochs = 1\nlr = 0.001\n\n[model]\nn_heads = 2\n\n[data]\nseq_len = 8\n\n\
         [experiment]\nsources = [\"data/manifest.jsonl\"]\nmodels = [\"baseline\"]\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let run = mdat(&["train", "--config", p(&cfg), "--out", p(&out)]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(out.join("baseline-seed0.mdm").exists());

    std::fs::write(&cfg, "[train]\nepochz = 1\n").unwrap();
    assert!(!mdat(&["train", "--config", p(&cfg)]).status.success());
}

#[test]
fn every_argument_is_documented() {
    fn walk(cmd: &clap::Command, path: &str) {
        for arg in cmd.get_arguments() {
            let id = arg.get_id().as_str();
            if id == "help" || id == "version" {
                continue;
            }
            assert!(arg.get_help().is_some(), "{path} --{id} has no help text");
        }
        for sub in cmd.get_subcommands() {
            assert!(sub.get_about().is_some(), "{path} {} has no description", sub.get_name());
            walk(sub, &format!("{path} {}", sub.get_name()));
        }
    }
    let cmd = Cli::command();
    cmd.clone().debug_assert();
    walk(&cmd, "mdat");
}

#[test]
fn bad_invocations_fail() {
    assert!(!mdat(&["frobnicate"]).status.success());
    assert!(!mdat(&["train"]).status.success());
    assert!(!mdat(&["kshot", "--k", "x"]).status.success());
}
