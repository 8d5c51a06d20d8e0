use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn neurograph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neurograph"))
        .args(args)
        .env_remove("NEUROGRAPH_JOBS")
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn ok(out: Output) -> Output {
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

/// Short trials keep the end-to-end tests quick.
fn short_plan(dir: &Path, stimulus_s: f64) -> PathBuf {
    let path = dir.join("plan.toml");
    fs::write(&path, format!("stimulus_s = {stimulus_s}\nbaseline_s = 3.0\n")).unwrap();
    path
}

fn synth(out: &Path, plan: Option<&Path>, subjects: u32, videos: u32, extra: &[&str]) {
    let (s, v) = (subjects.to_string(), videos.to_string());
    let mut args = vec!["synth", "--out", p(out), "--subjects", &s, "--videos", &v];
    if let Some(plan) = plan {
        args.extend(["--plan", p(plan)]);
    }
    args.extend(extra);
    ok(neurograph(&args));
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn synth_is_deterministic_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let plan = short_plan(tmp.path(), 4.0);
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    synth(&a, Some(&plan), 2, 2, &["--seed", "7"]);
    synth(&b, Some(&plan), 2, 2, &["--seed", "7"]);
    synth(&c, Some(&plan), 2, 2, &["--seed", "8"]);
    let (fa, fb, fc) = (dir_bytes(&a), dir_bytes(&b), dir_bytes(&c));
    // 4 trials x (eeg + meta) + manifest
    assert_eq!(fa.len(), 9);
    assert_eq!(fa, fb);
    assert_ne!(fa, fc);
}

#[test]
fn synth_refuses_a_non_empty_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let plan = short_plan(tmp.path(), 4.0);
    let out = tmp.path().join("corpus");
    fs::create_dir(&out).unwrap();
    fs::write(out.join("keep.txt"), "x").unwrap();
    let r = neurograph(&["synth", "--out", p(&out), "--plan", p(&plan), "--subjects", "1", "--videos", "1"]);
    assert_eq!(code(&r), 1);
    assert!(String::from_utf8_lossy(&r.stderr).contains("not empty"));
    synth(&out, Some(&plan), 1, 1, &["--force"]);
    assert!(out.join("s0_v0_eeg.csv").exists());
}

#[test]
fn synth_rejects_bad_plans() {
    let tmp = tempfile::tempdir().unwrap();
    let plan = tmp.path().join("plan.toml");
    fs::write(&plan, "[like]\nplv_target = 0.995\npcc_mixing = 0.0\nte_gain = 0.0\n").unwrap();
    let r = neurograph(&["synth", "--out", p(&tmp.path().join("o")), "--plan", p(&plan)]);
    assert_eq!(code(&r), 1);
    let r = neurograph(&["synth", "--out", p(&tmp.path().join("o")), "--profile", "sorted"]);
    assert_eq!(code(&r), 1);
}

#[test]
fn single_trial_extracts_to_115_tensors() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    synth(&corpus, None, 1, 1, &[]);
    let feats = tmp.path().join("psd");
    ok(neurograph(&["extract", "--input", p(&corpus), "--out", p(&feats), "--feature", "psd"]));
    let index = fs::read_to_string(feats.join("index.csv")).unwrap();
    assert_eq!(index.lines().count(), 1 + 115);
    assert!(feats.join("tensors/s0_v0.etns").exists());
    let manifest = fs::read_to_string(feats.join("extract.toml")).unwrap();
    assert!(manifest.contains("ordering = \"none\""), "{manifest}");

    // resumable: a second run reuses the tensor file
    let before = fs::metadata(feats.join("tensors/s0_v0.etns")).unwrap().modified().unwrap();
    ok(neurograph(&["extract", "--input", p(&corpus), "--out", p(&feats), "--feature", "psd"]));
    let after = fs::metadata(feats.join("tensors/s0_v0.etns")).unwrap().modified().unwrap();
    assert_eq!(before, after);

    // different settings need --force
    let r = neurograph(&["extract", "--input", p(&corpus), "--out", p(&feats), "--feature", "pcc"]);
    assert_eq!(code(&r), 1);
    // psd has no electrode ordering
    let r = neurograph(&["extract", "--input", p(&corpus), "--out", p(&tmp.path().join("x")), "--feature", "psd", "--ordering", "random:3"]);
    assert_eq!(code(&r), 1);
}

#[test]
fn broken_trials_fail_the_run_but_not_the_rest() {
    let tmp = tempfile::tempdir().unwrap();
    let plan = short_plan(tmp.path(), 4.0);
    let corpus = tmp.path().join("corpus");
    synth(&corpus, Some(&plan), 1, 2, &[]);
    fs::write(corpus.join("s0_v1_eeg.csv"), "Fp1,AF3\n0,0\n").unwrap();
    let feats = tmp.path().join("f");
    let r = neurograph(&["extract", "--input", p(&corpus), "--out", p(&feats), "--feature", "pcc"]);
    assert_eq!(code(&r), 2);
    assert!(String::from_utf8_lossy(&r.stderr).contains("1 input(s) failed"));
    assert!(feats.join("tensors/s0_v0.etns").exists());
    assert!(!feats.join("tensors/s0_v1.etns").exists());
    let index = fs::read_to_string(feats.join("index.csv")).unwrap();
    assert!(index.lines().skip(1).all(|l| l.contains("s0_v0")));
}

fn read_f32_tensors(path: &Path) -> Vec<Vec<f32>> {
    neurograph::dataset::etns::read_tensors(path)
        .unwrap()
        .into_iter()
        .map(|t| match t.data {
            neurograph::dataset::etns::TensorData::F32(v) => v,
            other => panic!("unexpected tensor data {other:?}"),
        })
        .collect()
}

#[test]
fn orderings_are_conjugate_on_disk() {
    use neurograph::layout::{distance_ordering, random_ordering, ElectrodeMontage};

    let tmp = tempfile::tempdir().unwrap();
    let plan = short_plan(tmp.path(), 6.0);
    let corpus = tmp.path().join("corpus");
    synth(&corpus, Some(&plan), 1, 1, &[]);
    let (dist, rand) = (tmp.path().join("dist"), tmp.path().join("rand"));
    ok(neurograph(&["extract", "--input", p(&corpus), "--out", p(&dist), "--feature", "pcc"]));
    ok(neurograph(&["extract", "--input", p(&corpus), "--out", p(&rand), "--feature", "pcc", "--ordering", "random:5"]));
    let a = read_f32_tensors(&dist.join("tensors/s0_v0.etns"));
    let b = read_f32_tensors(&rand.join("tensors/s0_v0.etns"));
    assert_eq!(a.len(), b.len());

    let m = ElectrodeMontage::deap32();
    let d = distance_ordering(&m).unwrap();
    let r = random_ordering(32, 5);
    let n = 32;
    for (ta, tb) in a.iter().zip(&b) {
        for band in 0..ta.len() / (n * n) {
            let (pa, pb) = (&ta[band * n * n..][..n * n], &tb[band * n * n..][..n * n]);
            // position i of an ordered matrix holds electrode perm[i]
            for i in 0..n {
                for j in 0..n {
                    let (ei, ej) = (r.perm()[i], r.perm()[j]);
                    let (di, dj) = (
                        d.perm().iter().position(|&e| e == ei).unwrap(),
                        d.perm().iter().position(|&e| e == ej).unwrap(),
                    );
                    assert_eq!(pb[i * n + j], pa[di * n + dj]);
                }
            }
        }
    }
}

fn tiny_config(dir: &Path, corpus: &Path, out: &Path) -> PathBuf {
    let path = dir.join("cv.toml");
    fs::write(
        &path,
        format!(
            "seed = 3\n[paths]\ninput = {:?}\noutput = {:?}\n[extract]\nbands = [\"alpha\", \"beta\"]\n\
             [train]\nepochs = 1\nbatch_size = 16\n[cv]\nk = 2\nrandom_orderings = 2\n",
            p(corpus),
            p(out)
        ),
    )
    .unwrap();
    path
}

#[test]
fn cv_lists_the_full_grid() {
    let r = ok(neurograph(&["cv", "--grid", "--list"]));
    let text = String::from_utf8(r.stdout).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 21, "{text}");
    assert_eq!(rows.iter().filter(|l| l.contains(" psd ")).count(), 3);
    assert!(rows.iter().all(|l| l.ends_with("macro_f1")));
    let r = ok(neurograph(&["cv", "--grid", "--list", "--mode", "regress"]));
    assert!(String::from_utf8(r.stdout).unwrap().lines().all(|l| l.ends_with("rmse")));
    let r = neurograph(&["cv", "--list", "--feature", "psd", "--ordering", "random:1"]);
    assert_eq!(code(&r), 1);
}

#[test]
fn cv_runs_on_a_tiny_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let plan = short_plan(tmp.path(), 5.0);
    let corpus = tmp.path().join("corpus");
    synth(&corpus, Some(&plan), 2, 3, &[]);
    let out = tmp.path().join("cv");
    let cfg = tiny_config(tmp.path(), &corpus, &out);
    ok(neurograph(&["cv", "--config", p(&cfg), "--feature", "pcc", "--ordering", "random:1"]));
    let table = fs::read_to_string(out.join("cv_table.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 2, "{table}");
    assert!(lines[1].starts_with("cnn1,pcc,random:1,macro_f1,"), "{table}");
    // two random orderings averaged, each with its own report
    assert_eq!(lines[1].rsplit(',').next().unwrap().split(';').count(), 2);
    assert!(out.join("cnn1_pcc_random1/report.txt").exists());
    assert!(out.join("cnn1_pcc_random2/predictions.csv").exists());
    let f1: f64 = lines[1].split(',').nth(4).unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&f1));

    // the same output directory is refused without --force
    let r = neurograph(&["cv", "--config", p(&cfg), "--feature", "pcc"]);
    assert_eq!(code(&r), 1);

    let reg = tmp.path().join("reg");
    ok(neurograph(&["cv", "--config", p(&cfg), "--out", p(&reg), "--feature", "psd", "--mode", "regress"]));
    let table = fs::read_to_string(reg.join("cv_table.csv")).unwrap();
    let row = table.lines().nth(1).unwrap();
    assert!(row.starts_with("cnn1,psd,-,rmse,"), "{table}");
    let rmse: f64 = row.split(',').nth(4).unwrap().parse().unwrap();
    assert!(rmse.is_finite() && rmse > 0.0);
}

#[test]
fn train_then_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let plan = short_plan(tmp.path(), 5.0);
    let corpus = tmp.path().join("corpus");
    synth(&corpus, Some(&plan), 1, 3, &[]);
    let feats = tmp.path().join("feats");
    ok(neurograph(&["extract", "--input", p(&corpus), "--out", p(&feats), "--feature", "plv"]));
    let cfg = tiny_config(tmp.path(), &corpus, &feats);
    let model = tmp.path().join("model");
    ok(neurograph(&["train", "--config", p(&cfg), "--input", p(&feats), "--out", p(&model), "--holdout-fold", "0"]));
    assert!(model.join("model.etns").exists());
    assert!(model.join("model.toml").exists());
    let eval = tmp.path().join("eval");
    let r = ok(neurograph(&[
        "eval",
        "--input",
        p(&feats),
        "--out",
        p(&eval),
        "--checkpoint",
        p(&model.join("model.etns")),
    ]));
    assert!(String::from_utf8_lossy(&r.stdout).contains("macro-F1"));
    let preds = fs::read_to_string(eval.join("predictions.csv")).unwrap();
    let index = fs::read_to_string(feats.join("index.csv")).unwrap();
    let holdout = index.lines().skip(1).filter(|l| l.ends_with(",0")).count();
    assert_eq!(preds.lines().count() - 1, holdout);
}

#[test]
fn topo_writes_images_and_checks_lengths() {
    let tmp = tempfile::tempdir().unwrap();
    let values = tmp.path().join("v.txt");
    let text: Vec<String> = (0..32).map(|i| format!("{}", i as f64 - 16.0)).collect();
    fs::write(&values, text.join("\n")).unwrap();
    let pgm = tmp.path().join("out/map.pgm");
    ok(neurograph(&["topo", "--values", p(&values), "--out", p(&pgm), "--res", "20"]));
    let img = fs::read_to_string(&pgm).unwrap();
    let tokens: Vec<&str> = img.split_whitespace().collect();
    assert_eq!(&tokens[..4], &["P2", "20", "20", "255"]);
    assert_eq!(tokens.len(), 4 + 400);

    let ppm = tmp.path().join("map.ppm");
    ok(neurograph(&["topo", "--values", p(&values), "--out", p(&ppm), "--colormap"]));
    let img = fs::read_to_string(&ppm).unwrap();
    assert!(img.starts_with("P3\n32 32\n255\n"));
    assert_eq!(img.split_whitespace().count(), 4 + 3 * 32 * 32);

    fs::write(&values, text[..31].join(" ")).unwrap();
    let r = neurograph(&["topo", "--values", p(&values), "--out", p(&pgm)]);
    assert_eq!(code(&r), 2);
    assert!(String::from_utf8_lossy(&r.stderr).contains("31 values"));
}

#[test]
fn exit_codes() {
    assert_eq!(code(&neurograph(&[])), 1);
    assert_eq!(code(&neurograph(&["cv", "--bogus"])), 1);
    assert_eq!(code(&neurograph(&["--help"])), 0);
    assert_eq!(code(&neurograph(&["cv", "--list", "--feature", "eeg"])), 1);
    assert_eq!(code(&neurograph(&["cv", "--list", "--network", "cnn9"])), 1);
    // missing input directory is a data error
    let tmp = tempfile::tempdir().unwrap();
    let r = neurograph(&["extract", "--input", p(&tmp.path().join("nope")), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(code(&r), 2);
    // no input configured at all is a usage error
    let r = neurograph(&["extract", "--out", p(&tmp.path().join("o2"))]);
    assert_eq!(code(&r), 1);
    let r = Command::new(env!("CARGO_BIN_EXE_neurograph"))
        .args(["cv", "--list"])
        .env("NEUROGRAPH_JOBS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&r), 1);
}

#[test]
fn divergence_exits_with_the_numeric_code() {
    let tmp = tempfile::tempdir().unwrap();
    let plan = short_plan(tmp.path(), 4.0);
    let corpus = tmp.path().join("corpus");
    synth(&corpus, Some(&plan), 1, 3, &[]);
    let cfg = tmp.path().join("boom.toml");
    fs::write(
        &cfg,
        format!(
            "[paths]\ninput = {:?}\noutput = {:?}\n[extract]\nbands = [\"alpha\"]\n[train]\nepochs = 3\nlearning_rate = 1e12\n[cv]\nk = 2\n",
            p(&corpus),
            p(&tmp.path().join("out"))
        ),
    )
    .unwrap();
    let r = neurograph(&["cv", "--config", p(&cfg), "--feature", "pcc", "--mode", "regress"]);
    assert_eq!(code(&r), 3, "stderr: {}", String::from_utf8_lossy(&r.stderr));
}
