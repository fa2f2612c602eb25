use std::fs;
use std::path::{Path, PathBuf};

use person_search_cli::{run, run_command, CHECKPOINT_FILE, METRICS_LOG_FILE, TRACE_FILE};

fn args(list: &[&str]) -> Vec<String> {
    std::iter::once("person-search")
        .chain(list.iter().copied())
        .map(String::from)
        .collect()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A tiny configuration so the training paths run in well under a second.
fn small_config(dir: &Path) -> PathBuf {
    let cfg = dir.join("small.cfg");
    fs::write(
        &cfg,
        "# tiny run\nepisodes_per_image = 2\nepisodes_per_image_floor = 1\nbatch_size = 8\n\
         update_every = 1\nhidden = 16, 8\nregion_grid = 4\nmax_steps = 12\nepochs = 2\n",
    )
    .unwrap();
    cfg
}

fn gen(dir: &Path, name: &str, seed: &str, count: &str) -> PathBuf {
    let out = dir.join(name);
    run(args(&["gen-data", "--seed", seed, "--count", count, "--out", p(&out)])).unwrap();
    out
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen(dir.path(), "a", "7", "10");
    let b = gen(dir.path(), "b", "7", "10");
    let ma = fs::read(a.join("manifest.txt")).unwrap();
    assert_eq!(ma, fs::read(b.join("manifest.txt")).unwrap());
    assert_eq!(String::from_utf8(ma).unwrap().lines().count(), 10);
    let img = fs::read_dir(a.join("images")).unwrap().next().unwrap().unwrap();
    let other = b.join("images").join(img.file_name());
    assert_eq!(fs::read(img.path()).unwrap(), fs::read(other).unwrap());
}

#[test]
fn failures_exit_nonzero_with_named_cause() {
    assert_ne!(run_command(args(&["dance"])), 0);
    let err = run(args(&["dance"])).unwrap_err().to_string();
    assert!(err.contains("dance"), "{err}");

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    let err = run(args(&["eval", "--checkpoint", "c.txt", "--dataset", p(&missing)])).unwrap_err();
    assert!(format!("{err:#}").contains("nowhere"), "{err:#}");

    let bad_cfg = dir.path().join("bad.cfg");
    fs::write(&bad_cfg, "epochs = 3\nwhat = 1\n").unwrap();
    let err = run(args(&["train", "--config", p(&bad_cfg)])).unwrap_err();
    let msg = format!("{err:#}");
    assert!(msg.contains("bad.cfg") && msg.contains("what"), "{msg}");

    let err = run(args(&["gen-data", "--count", "3", "--out", p(dir.path())])).unwrap_err();
    assert!(err.to_string().contains("--seed"), "{err}");
    assert_ne!(
        run_command(args(&["gen-data", "--count", "3", "--out", p(dir.path())])),
        0
    );
}

#[test]
fn train_eval_render_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let data = gen(dir.path(), "data", "3", "4");
    let run_dir = dir.path().join("run");
    let train = |out: &Path| {
        run(args(&[
            "train",
            "--config",
            p(&cfg),
            "--seed",
            "5",
            "--dataset",
            p(&data),
            "--out",
            p(out),
        ]))
        .unwrap()
    };
    train(&run_dir);

    let checkpoint = run_dir.join(CHECKPOINT_FILE);
    let table = fs::read_to_string(run_dir.join("epochs.tsv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(table.starts_with("epoch\t"));
    let log = fs::read_to_string(run_dir.join(METRICS_LOG_FILE)).unwrap();
    assert_eq!(log.lines().count(), 2);

    // flags override the file: one epoch instead of two
    let short = dir.path().join("short");
    run(args(&[
        "train", "--config", p(&cfg), "--seed", "5", "--dataset", p(&data), "--out", p(&short),
        "--epochs", "1",
    ]))
    .unwrap();
    assert_eq!(fs::read_to_string(short.join("epochs.tsv")).unwrap().lines().count(), 2);

    // same config and seed, same bytes
    let again = dir.path().join("again");
    train(&again);
    assert_eq!(fs::read(&checkpoint).unwrap(), fs::read(again.join(CHECKPOINT_FILE)).unwrap());
    assert_eq!(log, fs::read_to_string(again.join(METRICS_LOG_FILE)).unwrap());

    let before = fs::read(&checkpoint).unwrap();
    let eval_dir = dir.path().join("eval");
    for mode in ["regular", "random", "none"] {
        run(args(&[
            "eval", "--config", p(&cfg), "--checkpoint", p(&checkpoint), "--dataset", p(&data),
            "--mode", mode, "--out", p(&eval_dir),
        ]))
        .unwrap();
    }
    assert_eq!(fs::read(&checkpoint).unwrap(), before);
    let evals = fs::read_to_string(eval_dir.join(METRICS_LOG_FILE)).unwrap();
    let lines: Vec<&str> = evals.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[2].starts_with("eval mode=none episodes=4 "), "{}", lines[2]);

    let frames = dir.path().join("frames");
    run(args(&[
        "render", "--config", p(&cfg), "--checkpoint", p(&checkpoint), "--dataset", p(&data),
        "--out", p(&frames),
    ]))
    .unwrap();
    let trace = fs::read_to_string(frames.join(TRACE_FILE)).unwrap();
    let actions = trace.lines().count();
    assert!((1..=12).contains(&actions));
    let mut names: Vec<String> = fs::read_dir(&frames)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".ppm"))
        .collect();
    names.sort();
    let expected: Vec<String> = (0..=actions).map(|i| format!("frame_{i:03}.ppm")).collect();
    assert_eq!(names, expected);
    assert!(fs::read(frames.join("frame_000.ppm")).unwrap().starts_with(b"P6"));
}

#[test]
fn eval_rejects_mismatched_encoder() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let data = gen(dir.path(), "data", "4", "2");
    let out = dir.path().join("run");
    run(args(&[
        "train", "--config", p(&cfg), "--seed", "1", "--dataset", p(&data), "--out", p(&out),
        "--epochs", "1",
    ]))
    .unwrap();
    // default region grid gives a different input size than the checkpoint
    let err = run(args(&[
        "eval",
        "--checkpoint",
        p(&out.join(CHECKPOINT_FILE)),
        "--dataset",
        p(&data),
    ]))
    .unwrap_err();
    assert!(format!("{err:#}").contains("dimension"), "{err:#}");
}
