use std::fs;
use std::path::Path;
use std::process::Command;

use ldcrf::cli::{cmd_detect, cmd_synth, cmd_train, MANIFEST_FILE};
use ldcrf::config::{Method, RunConfig};
use ldcrf::features::sequence_features;
use ldcrf::model::predict_frames;
use ldcrf::persist::{self, SavedModel};
use ldcrf::seqio::{read_dataset, write_sequence};
use ldcrf::synth::{synthesize_dataset, SynthConfig};

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = 11;
    cfg.synth.subjects = 2;
    cfg.synth.pointing_per_subject = 6;
    cfg.synth.others_per_subject = 2;
    cfg.synth.controls_per_subject = 1;
    cfg.max_iter = 60;
    cfg.hmm.max_iter = 20;
    cfg
}

fn seq_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "seq"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn default_synth_has_eighteen_subjects() {
    let ds = synthesize_dataset(&SynthConfig::default(), 1).unwrap();
    assert_eq!(ds.subjects().len(), 18);
}

#[test]
fn synth_is_reproducible_and_manifest_round_trips() {
    let cfg = small_config();
    let root = tempfile::tempdir().unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    let manifest = cmd_synth(&cfg, &a).unwrap();
    cmd_synth(&cfg, &b).unwrap();
    assert_eq!(seq_files(&a), seq_files(&b));
    assert!(!seq_files(&a).is_empty());

    let loaded = RunConfig::load(&a.join(MANIFEST_FILE)).unwrap();
    assert_eq!(loaded, manifest);
    assert_eq!(loaded.seed, cfg.seed);
    assert_eq!(loaded.synth, cfg.synth);
    assert_eq!(read_dataset(Path::new(&loaded.dataset)).unwrap().subjects().len(), 2);
}

#[test]
fn train_save_load_detect() {
    let cfg = small_config();
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    cmd_synth(&cfg, &data).unwrap();
    let ds = read_dataset(&data).unwrap();

    // crf: one state per label, monotone log, identical predictions after reload
    let crf_path = root.path().join("crf.json");
    let log = cmd_train(&cfg, Method::Crf, &data, &crf_path).unwrap();
    let objectives: Vec<f64> = log
        .lines()
        .filter_map(|l| l.split_whitespace().nth(3).and_then(|v| v.parse().ok()))
        .collect();
    assert!(objectives.len() > 1);
    assert!(objectives.windows(2).all(|w| w[1] >= w[0]));
    let SavedModel::Chain { model, taps, method } = persist::load(&crf_path).unwrap() else {
        panic!("expected a chain model");
    };
    assert_eq!(method, Method::Crf);
    assert_eq!(model.partition.states_per_label(), 1);
    let reloaded = persist::from_json(&fs::read_to_string(&crf_path).unwrap()).unwrap();
    assert_eq!(reloaded, persist::load(&crf_path).unwrap());
    for seq in &ds.sequences {
        let x = sequence_features(&seq.frames, &taps).unwrap();
        let SavedModel::Chain { model: again, .. } = &reloaded else { unreachable!() };
        assert_eq!(predict_frames(&model, &x).unwrap(), predict_frames(again, &x).unwrap());
    }

    // ldcrf detect on a control sequence and on a very short clip
    let ld_path = root.path().join("ldcrf.json");
    cmd_train(&cfg, Method::Ldcrf, &data, &ld_path).unwrap();
    let control = ds.sequences.iter().find(|s| s.is_control()).unwrap();
    let control_path = root.path().join("control.seq");
    write_sequence(control, fs::File::create(&control_path).unwrap()).unwrap();
    let out = cmd_detect(&cfg, true, &ld_path, &control_path).unwrap();
    assert_eq!(out.lines().filter(|l| l.starts_with("frame;")).count(), control.len());
    assert_eq!(out.lines().filter(|l| l.starts_with("event;")).count(), 0, "{out}");

    let mut short = ds.sequences[0].clone();
    short.frames.truncate(5);
    short.labels.truncate(5);
    let short_path = root.path().join("short.seq");
    write_sequence(&short, fs::File::create(&short_path).unwrap()).unwrap();
    let out = cmd_detect(&cfg, true, &ld_path, &short_path).unwrap();
    assert_eq!(out.lines().filter(|l| l.starts_with("frame;")).count(), 5);

    // events of a gesture sequence are sorted and disjoint
    let gest = ds.sequences.iter().find(|s| !s.is_control()).unwrap();
    let gest_path = root.path().join("gest.seq");
    write_sequence(gest, fs::File::create(&gest_path).unwrap()).unwrap();
    let out = cmd_detect(&cfg, true, &ld_path, &gest_path).unwrap();
    let spans: Vec<(usize, usize)> = out
        .lines()
        .filter(|l| l.starts_with("event;"))
        .map(|l| {
            let f: Vec<&str> = l.split(';').collect();
            (f[3].parse().unwrap(), f[4].parse().unwrap())
        })
        .collect();
    assert!(!spans.is_empty());
    assert!(spans.windows(2).all(|w| w[0].1 < w[1].0));

    // taps differing from the model's are rejected
    let mut other = cfg.clone();
    other.taps = vec![1, 2];
    assert!(cmd_detect(&other, true, &ld_path, &gest_path).is_err());

    // hmm models round trip too
    let hmm_path = root.path().join("hmm.json");
    cmd_train(&cfg, Method::Hmm, &data, &hmm_path).unwrap();
    assert_eq!(persist::load(&hmm_path).unwrap().method(), Method::Hmm);
    cmd_detect(&cfg, true, &hmm_path, &gest_path).unwrap();
}

fn run_bin(args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_ldcrf"))
        .args(args)
        .output()
        .unwrap()
        .status
        .code()
        .unwrap()
}

#[test]
fn exit_codes() {
    let root = tempfile::tempdir().unwrap();
    let bad_cfg = root.path().join("bad.txt");
    fs::write(&bad_cfg, "no_such_key = 1\n").unwrap();
    let out = root.path().join("o");
    let out = out.to_str().unwrap();
    assert_eq!(run_bin(&["synth", "--config", bad_cfg.to_str().unwrap(), "--out", out]), 2);

    let data = root.path().join("data");
    fs::create_dir_all(&data).unwrap();
    fs::write(data.join("x__y.seq"), "#subject=x sequence=y\n0;background;head=1,2,3\n").unwrap();
    assert_eq!(run_bin(&["experiment", "--data", data.to_str().unwrap(), "--out", out]), 3);

    let cfg = root.path().join("ok.txt");
    fs::write(&cfg, "synth.subjects = 1\nsynth.pointing_per_subject = 1\nsynth.others_per_subject = 0\nsynth.controls_per_subject = 0\n").unwrap();
    let synth_out = root.path().join("synth");
    assert_eq!(run_bin(&["synth", "--config", cfg.to_str().unwrap(), "--seed", "3", "--out", synth_out.to_str().unwrap()]), 0);
    // one subject cannot be cross-validated
    assert_eq!(run_bin(&["experiment", "--data", synth_out.to_str().unwrap(), "--out", out]), 3);
}
