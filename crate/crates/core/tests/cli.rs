use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use scalemix::data::load_csv;
use scalemix::nu_select::log_grid;

fn scalemix(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scalemix"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(p: PathBuf) -> String {
    fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

/// Three well-separated 2-D classes, two participants with four trials each.
fn separable_csv(dir: &Path) -> PathBuf {
    let mut text = String::from("f1,f2,label,trial,participant\n");
    for p in 1..=2 {
        for t in 1..=4 {
            for c in 1..=3u32 {
                for i in 0..12 {
                    let jitter = ((i * 7 + t * 3 + p) % 11) as f64 / 11.0 - 0.5;
                    let x = 20.0 * c as f64 + jitter;
                    let y = jitter * 0.7 - 0.1 * (i % 3) as f64;
                    text.push_str(&format!("{x},{y},{c},{t},{p}\n"));
                }
            }
        }
    }
    let path = dir.join("separable.csv");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn simulate_writes_three_full_grids() {
    let dir = tempfile::tempdir().unwrap();
    let o = scalemix(dir.path(), &["simulate", "--out-dir", "sim"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let sim = dir.path().join("sim");
    for name in ["ml_nu", "shared_nu", "gaussian"] {
        let text = read(sim.join(format!("boundary_{name}.csv")));
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("x1,x2,posterior_c1,posterior_c2,argmax"));
        assert_eq!(lines.count(), 161 * 161, "{name}");
    }
    let train = load_csv(&sim.join("train.csv"), Some(2)).unwrap();
    assert_eq!(train.class_counts()[&1], 110);
    assert_eq!(train.class_counts()[&2], 100);
}

#[test]
fn simulate_without_outliers_and_with_svg() {
    let dir = tempfile::tempdir().unwrap();
    let o = scalemix(
        dir.path(),
        &[
            "simulate",
            "--out-dir",
            "sim",
            "--no-outliers",
            "--svg",
            "--grid-step",
            "0.5",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let sim = dir.path().join("sim");
    let train = load_csv(&sim.join("train.csv"), Some(2)).unwrap();
    assert_eq!(train.class_counts()[&1], 100);
    assert_eq!(
        read(sim.join("boundary_gaussian.csv")).lines().count(),
        17 * 17 + 1
    );
    let svg = read(sim.join("boundary_shared_nu.svg"));
    assert!(svg.starts_with("<svg"));
    assert_eq!(svg.matches("<rect").count(), 17 * 17);
}

#[test]
fn simulate_is_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    for (out, threads) in [("a", "1"), ("b", "1"), ("c", "4")] {
        let o = scalemix(
            dir.path(),
            &["simulate", "--out-dir", out, "--seed", "3", "--threads", threads],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for file in [
        "train.csv",
        "test_grid.csv",
        "boundary_ml_nu.csv",
        "boundary_shared_nu.csv",
        "boundary_gaussian.csv",
        "summary.csv",
    ] {
        let a = read(dir.path().join("a").join(file));
        assert_eq!(a, read(dir.path().join("b").join(file)), "{file}");
        assert_eq!(a, read(dir.path().join("c").join(file)), "{file}");
    }
}

#[test]
fn train_is_bit_identical_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&scalemix(
            dir.path(),
            &["simulate", "--out-dir", "sim", "--grid-step", "1"]
        )),
        0
    );
    for (out, threads) in [("m1.json", "1"), ("m2.json", "1"), ("m3.json", "3")] {
        let o = scalemix(
            dir.path(),
            &[
                "train",
                "--data",
                "sim/train.csv",
                "--model-out",
                out,
                "--k-init",
                "4",
                "--threads",
                threads,
            ],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let m1 = read(dir.path().join("m1.json"));
    assert_eq!(m1, read(dir.path().join("m2.json")));
    assert_eq!(m1, read(dir.path().join("m3.json")));
}

#[test]
fn selected_nu_is_a_grid_member() {
    let dir = tempfile::tempdir().unwrap();
    let data = separable_csv(dir.path());
    let o = scalemix(
        dir.path(),
        &[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--select-nu",
            "--nu-grid",
            "0.01:100:9",
            "--folds",
            "3",
            "--nu-table",
            "nu.csv",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    let line = out
        .lines()
        .find(|l| l.starts_with("selected nu "))
        .expect("selection reported");
    let nu: f64 = line["selected nu ".len()..].parse().unwrap();
    assert!(log_grid(0.01, 100.0, 9).contains(&nu), "{nu}");
    let table = read(dir.path().join("nu.csv"));
    assert_eq!(table.lines().next(), Some("fold,nu,J"));
    assert_eq!(table.lines().count(), 1 + 3 * 9);
}

#[test]
fn non_convergence_has_its_own_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let data = separable_csv(dir.path());
    let o = scalemix(
        dir.path(),
        &["train", "--data", data.to_str().unwrap(), "--max-iters", "1"],
    );
    assert_eq!(code(&o), 5, "{}", stderr(&o));
    assert!(dir.path().join("model.json").exists());
}

#[test]
fn predict_writes_labels_and_log_posteriors() {
    let dir = tempfile::tempdir().unwrap();
    let data = separable_csv(dir.path());
    let data = data.to_str().unwrap();
    assert_eq!(code(&scalemix(dir.path(), &["train", "--data", data])), 0);
    let o = scalemix(
        dir.path(),
        &[
            "predict",
            "--model",
            "model.json",
            "--data",
            data,
            "--out",
            "pred.csv",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = read(dir.path().join("pred.csv"));
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("f1,f2,label,trial,participant,pred_label,log_posterior_1,log_posterior_2,log_posterior_3")
    );
    let mut rows = 0;
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[2], f[5], "{line}");
        let total: f64 = f[6..].iter().map(|v| v.parse::<f64>().unwrap().exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        rows += 1;
    }
    assert_eq!(rows, 2 * 4 * 3 * 12);
}

#[test]
fn predict_on_empty_input_writes_only_the_header() {
    let dir = tempfile::tempdir().unwrap();
    let data = separable_csv(dir.path());
    assert_eq!(
        code(&scalemix(
            dir.path(),
            &["train", "--data", data.to_str().unwrap()]
        )),
        0
    );
    fs::write(dir.path().join("empty.csv"), "f1,f2,label,trial,participant\n").unwrap();
    let o = scalemix(
        dir.path(),
        &["predict", "--model", "model.json", "--data", "empty.csv"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        String::from_utf8(o.stdout).unwrap(),
        "f1,f2,label,trial,participant,pred_label,log_posterior_1,log_posterior_2,log_posterior_3\n"
    );
}

#[test]
fn predict_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let data = separable_csv(dir.path());
    assert_eq!(
        code(&scalemix(
            dir.path(),
            &["train", "--data", data.to_str().unwrap()]
        )),
        0
    );

    fs::write(
        dir.path().join("bad.csv"),
        "f1,f2,label,trial,participant\n1,2,1,1,1\n3,oops,1,1,1\n",
    )
    .unwrap();
    let o = scalemix(
        dir.path(),
        &["predict", "--model", "model.json", "--data", "bad.csv"],
    );
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("row 2"), "{}", stderr(&o));

    fs::write(
        dir.path().join("narrow.csv"),
        "f1,label,trial,participant\n1,1,1,1\n",
    )
    .unwrap();
    let o = scalemix(
        dir.path(),
        &["predict", "--model", "model.json", "--data", "narrow.csv"],
    );
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("dimension"), "{}", stderr(&o));

    let o = scalemix(
        dir.path(),
        &["predict", "--model", "missing.json", "--data", "narrow.csv"],
    );
    assert_eq!(code(&o), 3);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&scalemix(dir.path(), &["train"])), 2);
    assert_eq!(
        code(&scalemix(dir.path(), &["train", "--data", "x.csv", "--bogus"])),
        2
    );
    assert_eq!(code(&scalemix(dir.path(), &["frobnicate"])), 2);
    assert_eq!(code(&scalemix(dir.path(), &["--help"])), 0);
}

#[test]
fn evaluate_enumerates_every_combination() {
    let dir = tempfile::tempdir().unwrap();
    let data = separable_csv(dir.path());
    let o = scalemix(
        dir.path(),
        &[
            "evaluate",
            "--data",
            data.to_str().unwrap(),
            "--out-dir",
            "ev",
            "--compare-nu",
            "1e6",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ev = dir.path().join("ev");

    let combos = read(ev.join("combinations.csv"));
    let rows: Vec<Vec<&str>> = combos.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 8);
    for p in ["1", "2"] {
        let mine: Vec<&Vec<&str>> = rows.iter().filter(|r| r[0] == p).collect();
        assert_eq!(mine.len(), 4);
        let trains: Vec<&str> = mine.iter().map(|r| r[2]).collect();
        assert_eq!(trains, ["1", "2", "3", "4"]);
        for r in mine {
            let train: Vec<&str> = r[2].split(' ').collect();
            let test: Vec<&str> = r[3].split(' ').collect();
            assert_eq!(test.len(), 3);
            assert!(train.iter().all(|t| !test.contains(t)));
            assert_eq!(r[5], "1");
        }
    }

    let timing = read(ev.join("timing.csv"));
    for line in timing.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[2], "0", "no tuning without --select-nu");
        assert!(f[3].parse::<f64>().unwrap() > 0.0);
        assert!(f[4].parse::<f64>().unwrap() > 0.0);
    }

    let summary = read(ev.join("summary.csv"));
    let values: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&values[..5], ["2", "8", "1", "1", "1"]);
    // Equal accuracy is not superiority.
    assert_eq!(values[7], "0");
    assert_eq!(read(ev.join("participants.csv")).lines().count(), 3);
    assert_eq!(
        read(ev.join("confusion.csv")).lines().next(),
        Some("truth,pred_1,pred_2,pred_3")
    );
    assert!(ev.join("per_class.csv").exists());
}

#[test]
fn evaluate_is_deterministic_except_timing() {
    let dir = tempfile::tempdir().unwrap();
    let data = separable_csv(dir.path());
    let data = data.to_str().unwrap();
    for (out, threads) in [("a", "1"), ("b", "2")] {
        let o = scalemix(
            dir.path(),
            &[
                "evaluate",
                "--data",
                data,
                "--out-dir",
                out,
                "--subsample",
                "0.5",
                "--threads",
                threads,
                "--seed",
                "4",
            ],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for file in [
        "combinations.csv",
        "participants.csv",
        "per_class.csv",
        "confusion.csv",
        "summary.csv",
    ] {
        assert_eq!(
            read(dir.path().join("a").join(file)),
            read(dir.path().join("b").join(file)),
            "{file}"
        );
    }
}

#[test]
fn evaluate_needs_enough_trials() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("two.csv"),
        "f1,label,trial,participant\n0,1,1,1\n5,2,1,1\n0.1,1,2,1\n5.1,2,2,1\n",
    )
    .unwrap();
    let o = scalemix(dir.path(), &["evaluate", "--data", "two.csv"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("trials"));
}

#[test]
fn features_turn_signals_into_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("t,ch1,ch2,label,trial\n");
    for trial in 1..=2 {
        for i in 0..200 {
            let t = i as f64 / 100.0;
            text.push_str(&format!(
                "{t},{},{},{trial},{trial}\n",
                (37.0 * t).sin(),
                -(0.5 * t).cos()
            ));
        }
    }
    fs::write(dir.path().join("sig.csv"), text).unwrap();

    let o = scalemix(
        dir.path(),
        &["features", "--data", "sig.csv", "--out", "smooth.csv"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let smooth = load_csv(&dir.path().join("smooth.csv"), Some(2)).unwrap();
    assert_eq!(smooth.len(), 400);
    assert_eq!(smooth.trial_ids(), vec![1, 2]);

    let o = scalemix(
        dir.path(),
        &[
            "features",
            "--data",
            "sig.csv",
            "--out",
            "mav.csv",
            "--method",
            "mav",
            "--window-ms",
            "400",
            "--step-ms",
            "200",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mav = load_csv(&dir.path().join("mav.csv"), Some(2)).unwrap();
    // Windows of 40 samples every 20 over 200 samples: 9 per block.
    assert_eq!(mav.len(), 18);
    assert!(mav.features().as_slice().iter().all(|v| *v >= 0.0));
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let data = separable_csv(dir.path());
    fs::write(
        dir.path().join("run.cfg"),
        format!(
            "# training setup\ndata = {}\nmodel-out = from_config.json\nnu = 3\n",
            data.display()
        ),
    )
    .unwrap();
    let o = scalemix(dir.path(), &["train", "--config", "run.cfg", "--nu", "7"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let model = read(dir.path().join("from_config.json"));
    let tc = scalemix::TrainedClassifier::from_json(&model).unwrap();
    assert!(tc
        .classes()
        .iter()
        .flat_map(|c| &c.components)
        .all(|c| c.nu == 7.0));

    fs::write(dir.path().join("bad.cfg"), "colour = blue\n").unwrap();
    let o = scalemix(dir.path(), &["train", "--config", "bad.cfg"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("colour"));
}
