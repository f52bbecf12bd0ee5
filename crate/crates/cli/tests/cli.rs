use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dsn_cli::config::parse_pairs;
use dsn_cli::ExperimentConfig;
use proptest::prelude::*;

const TINY: &str = "scenario=glyph16
variant=dsn
similarity=dann
seed=4
steps=30
eval_interval=15
log_interval=5
warmup_steps=10
train_size=48
eval_size=24
";

fn dsn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsn")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

#[test]
fn missing_required_key_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.txt", &TINY.replace("scenario=glyph16\n", ""));
    let out = dsn(&["run", "--config", &cfg, "--quiet"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("scenario"), "{}", text(&out.stderr));
}

#[test]
fn unknown_key_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.txt", &format!("{TINY}learning_rate=0.1\n"));
    let out = dsn(&["run", "--config", &cfg, "--quiet"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("learning_rate"));
}

#[test]
fn divergent_run_exits_with_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    let body = "scenario=blobs2d\nvariant=source_only\nseed=0\nsteps=200\nlr=1e300\ntrain_size=64\neval_size=16\n";
    let cfg = write_config(dir.path(), "c.txt", body);
    let out_dir = dir.path().join("runs");
    let out = dsn(&["run", "--config", &cfg, "--out", out_dir.to_str().unwrap(), "--quiet"]);
    assert_eq!(out.status.code(), Some(3), "{}", text(&out.stderr));
    assert!(text(&out.stderr).contains("step"));
}

#[test]
fn repeat_run_is_skipped_and_reorder_keeps_the_run_id() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("runs");
    let out_arg = out_dir.to_str().unwrap();
    let cfg = write_config(dir.path(), "a.txt", TINY);
    let first = dsn(&["run", "--config", &cfg, "--out", out_arg, "--quiet"]);
    assert!(first.status.success(), "{}", text(&first.stderr));
    let reversed: String = TINY.lines().rev().map(|l| format!("{l}\n")).collect();
    let cfg2 = write_config(dir.path(), "b.txt", &reversed);
    let second = dsn(&["run", "--config", &cfg2, "--out", out_arg, "--quiet"]);
    assert!(second.status.success());
    let id = |o: &Output| text(&o.stdout).split_whitespace().next().unwrap().to_string();
    assert_eq!(id(&first), id(&second));
    assert!(text(&second.stdout).contains("already complete"));

    let run_dir = out_dir.join(id(&first));
    for f in ["config.txt", "metrics.csv", "checkpoint.bin", "checkpoint.bin.index", "result.csv"] {
        assert!(run_dir.join(f).is_file(), "{f}");
    }
    let metrics = fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next().unwrap(), "step,lr,l_task,l_recon,l_diff,l_sim,src_acc,tgt_acc,angle_err");

    let table = dsn(&["table", "--out", out_arg]);
    assert!(table.status.success());
    let result = fs::read_to_string(run_dir.join("result.csv")).unwrap();
    let acc = result.lines().nth(1).unwrap().split(',').nth(5).unwrap().to_string();
    let row = text(&table.stdout).lines().nth(1).unwrap().to_string();
    assert!(row.starts_with("glyph16") && row.contains("dsn+dann") && row.trim_end().ends_with(&acc), "{row}");
    assert!(out_dir.join("results.csv").is_file());

    let seeded = dsn(&["run", "--config", &cfg, "--out", out_arg, "--seed-override", "9", "--quiet"]);
    assert!(seeded.status.success());
    assert_ne!(id(&seeded), id(&first));
    let table = dsn(&["table", "--out", out_arg, "--quiet"]);
    assert!(table.status.success());
    let rows = fs::read_to_string(out_dir.join("results.txt")).unwrap();
    assert!(rows.contains('±'), "{rows}");

    let grids = dir.path().join("grids");
    let dump = dsn(&[
        "dump-recon", "--config", &cfg, "--out", out_arg, "--count", "5", "--dest", grids.to_str().unwrap(),
    ]);
    assert!(dump.status.success(), "{}", text(&dump.stderr));
    for name in ["recon_source.ppm", "recon_target.ppm"] {
        let bytes = fs::read(grids.join(name)).unwrap();
        let header = b"P6\n64 80\n255\n";
        assert!(bytes.starts_with(header));
        assert_eq!(bytes.len(), header.len() + 64 * 80 * 3);
    }

    let baseline = write_config(dir.path(), "so.txt", &TINY.replace("variant=dsn\nsimilarity=dann\n", "variant=source_only\n"));
    let ckpt = run_dir.join("checkpoint.bin");
    let wrong = dsn(&["dump-recon", "--config", &baseline, "--out", out_arg, "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(!wrong.status.success());
}

#[test]
fn gradcheck_reports_every_loss_once_and_catches_corruption() {
    let ok = dsn(&["gradcheck"]);
    assert!(ok.status.success(), "{}", text(&ok.stdout));
    let report = text(&ok.stdout);
    for name in [
        "task_nll", "si_mse", "mse", "reconstruction_loss", "difference_loss", "dann_domain_loss", "mmd_loss",
        "correg_loss", "pose_term", "total_loss",
    ] {
        let hits = report.lines().filter(|l| l.split_whitespace().next() == Some(name)).count();
        assert_eq!(hits, 1, "{name}");
    }
    let bad = dsn(&["gradcheck", "--corrupt-si-mse", "--quiet"]);
    assert_eq!(bad.status.code(), Some(3));
    assert!(text(&bad.stdout).lines().any(|l| l.starts_with("si_mse") && l.ends_with("FAIL")));
}

#[test]
fn gen_data_writes_both_domains() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.txt", TINY);
    let out = dir.path().join("data");
    let run = dsn(&["gen-data", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(run.status.success(), "{}", text(&run.stderr));
    for domain in ["source", "target"] {
        assert!(out.join(domain).is_dir());
        assert!(fs::read_dir(out.join(domain)).unwrap().count() > 48);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn run_id_is_stable_under_key_order(order in Just((0..10).collect::<Vec<usize>>()).prop_shuffle()) {
        let lines: Vec<&str> = TINY.lines().collect();
        let shuffled: String = order.iter().map(|&i| format!("{}\n", lines[i])).collect();
        let a = ExperimentConfig::parse(TINY).unwrap();
        let b = ExperimentConfig::parse(&shuffled).unwrap();
        prop_assert_eq!(a.run_id(), b.run_id());
        prop_assert_eq!(parse_pairs(TINY).unwrap(), parse_pairs(&shuffled).unwrap());
    }
}
