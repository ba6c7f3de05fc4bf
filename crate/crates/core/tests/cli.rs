use std::path::Path;
use std::process::{Command, Output};

const TINY: [&str; 8] = ["--set", "d_model=8", "--set", "n_heads=2", "--set", "ffn_width=16", "--set", "batch_size=4"];

fn dimvl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dimvl")).current_dir(dir).args(args).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout.clone()).unwrap();
    assert!(stdout.starts_with("ok\t"), "{stdout}");
    stdout
}

fn failure(out: &Output) -> Vec<String> {
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    stderr.trim_end().split('\t').map(str::to_string).collect()
}

#[test]
fn train_then_evaluate_writes_artifacts_to_the_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&dimvl(d, &["generate-corpus", "--out", "c.jsonl", "--count", "6", "--seed", "3"]));
    let mut pre = vec!["pretrain", "--corpus", "c.jsonl", "--run-dir", "run", "--set", "pretrain_epochs=2"];
    pre.extend(TINY);
    ok(&dimvl(d, &pre));
    let mut fine = vec!["finetune", "--task", "caption", "--corpus", "c.jsonl", "--init", "run/pretrain.ckpt", "--run-dir", "run"];
    fine.extend(["--set", "caption_epochs=1", "--set", "domain_epochs=1"]);
    fine.extend(TINY);
    ok(&dimvl(d, &fine));
    let mut eval = vec!["evaluate", "--checkpoint", "run/caption.ckpt", "--corpus", "c.jsonl", "--run-dir", "run", "--greedy"];
    eval.extend(TINY);
    ok(&dimvl(d, &eval));

    for name in ["config.txt", "log.tsv", "pretrain.ckpt", "domain.ckpt", "caption.ckpt", "report.tsv", "checkpoints/pretrain-002.ckpt"] {
        assert!(d.join("run").join(name).is_file(), "{name}");
    }
    let report = std::fs::read_to_string(d.join("run/report.tsv")).unwrap();
    dimvl::eval::MetricReport::parse(&report).unwrap().validate().unwrap();
}

#[test]
fn sweep_concepts_writes_one_row_per_count() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&dimvl(d, &["generate-corpus", "--out", "c.jsonl", "--count", "10", "--inject-rate", "0.3"]));
    ok(&dimvl(d, &["sweep-concepts", "--corpus", "c.jsonl", "--m", "0,2,5,8", "--run-dir", "out"]));
    let text = std::fs::read_to_string(d.join("out/sweep.tsv")).unwrap();
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn failures_exit_nonzero_with_one_parsable_line() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&dimvl(d, &["generate-corpus", "--out", "c.jsonl", "--count", "4"]));

    let missing = failure(&dimvl(d, &["pretrain", "--corpus", "absent.jsonl", "--run-dir", "r"]));
    assert_eq!((missing[0].as_str(), missing[1].as_str()), ("error", "config"));

    let bad_value = failure(&dimvl(d, &["pretrain", "--corpus", "c.jsonl", "--run-dir", "r", "--set", "n_heads=three"]));
    assert_eq!(bad_value[1], "config");

    std::fs::write(d.join("bad.cfg"), "d_model = 64\nwarp_factor = 9\n").unwrap();
    let unknown = failure(&dimvl(d, &["pretrain", "--corpus", "c.jsonl", "--run-dir", "r", "--config", "bad.cfg"]));
    assert_eq!(unknown[1], "config");

    std::fs::write(d.join("junk.ckpt"), b"not a checkpoint").unwrap();
    let junk = failure(&dimvl(d, &["evaluate", "--checkpoint", "junk.ckpt", "--corpus", "c.jsonl", "--run-dir", "r"]));
    assert_eq!(junk[1], "format");

    let usage = failure(&dimvl(d, &["train-everything"]));
    assert_eq!(usage[1], "usage");
}
