use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;
use std::time::Instant;

use avloc::cli::{TrainMetrics, CURVE_CSV, EPOCH_DIR, EVAL_JSON, HEATMAP_DIR, METRICS_JSON};
use avloc::corpus::{load_split, CorpusInstance};
use avloc::json::read_json;
use avloc::numcore::avic::write_tensor;
use avloc::numcore::Tensor;
use tempfile::TempDir;

fn avloc(args: &[&Path]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_avloc"))
        .args(args)
        .output()
        .expect("spawn avloc")
}

fn run(args: &[&str]) -> Output {
    let paths: Vec<&Path> = args.iter().map(Path::new).collect();
    avloc(&paths)
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "avloc {} failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Top-level files of a directory by name; subdirectories are skipped.
fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect()
}

/// Every file under `dir`, keyed by relative path.
fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

struct Fixture {
    dir: TempDir,
    train_secs: f64,
}

impl Fixture {
    fn corpus(&self) -> PathBuf {
        self.dir.path().join("corpus")
    }

    fn run(&self) -> PathBuf {
        self.dir.path().join("full")
    }
}

/// Default corpus and a full training run shared by the tests below.
fn fixture() -> &'static Fixture {
    static CELL: OnceLock<Fixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus");
        let full = dir.path().join("full");
        ok(&["gen-corpus", "--out", s(&corpus)]);
        let start = Instant::now();
        ok(&[
            "train",
            "--corpus",
            s(&corpus),
            "--out",
            s(&full),
            "--checkpoint-every",
            "10",
        ]);
        Fixture {
            dir,
            train_secs: start.elapsed().as_secs_f64(),
        }
    })
}

fn test_split(f: &Fixture) -> Vec<CorpusInstance> {
    load_split(&f.corpus().join("test")).unwrap().1
}

fn read_pgm(path: &Path) -> (usize, usize, Vec<u8>) {
    let bytes = fs::read(path).unwrap();
    let header: Vec<&[u8]> = bytes.splitn(4, |b| *b == b'\n').collect();
    assert_eq!(header[0], b"P5");
    let dims = std::str::from_utf8(header[1]).unwrap();
    let (w, h) = dims.split_once(' ').unwrap();
    let (w, h): (usize, usize) = (w.parse().unwrap(), h.parse().unwrap());
    assert_eq!(header[2], b"255");
    assert_eq!(header[3].len(), w * h);
    (h, w, header[3].to_vec())
}

#[test]
fn gen_corpus_default_sizes_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["gen-corpus", "--out", s(&a), "--seed", "7"]);
    ok(&["gen-corpus", "--out", s(&b), "--seed", "7"]);
    assert_eq!(load_split(&a.join("train")).unwrap().1.len(), 512);
    assert_eq!(load_split(&a.join("test")).unwrap().1.len(), 64);
    assert!(tree(&a) == tree(&b), "same seed gave different corpora");

    let c = dir.path().join("c");
    ok(&["gen-corpus", "--out", s(&c), "--seed", "8"]);
    assert!(tree(&a) != tree(&c));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["gen-corpus"]).status.code(), Some(2));
    assert_eq!(
        run(&["train", "--corpus", "x", "--out", "y", "--variant", "bogus"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(run(&["--threads", "0", "gradcheck"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "train",
        "--corpus",
        s(&dir.path().join("missing")),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));
}

#[test]
fn full_run_is_fast_enough() {
    let f = fixture();
    assert!(
        f.train_secs < 600.0,
        "full training took {:.0} s",
        f.train_secs
    );
    let m: TrainMetrics = read_json(&f.run().join(METRICS_JSON)).unwrap();
    assert_eq!(m.records.len(), 30);
    assert!(m.iterative_evals > 0 && m.contrastive_evals > 0);
}

#[test]
fn initial_variant_never_evaluates_iterative_loss() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("initial");
    ok(&[
        "train",
        "--corpus",
        s(&f.corpus()),
        "--out",
        s(&out),
        "--variant",
        "initial",
    ]);
    let m: TrainMetrics = read_json(&out.join(METRICS_JSON)).unwrap();
    assert_eq!(m.iterative_evals, 0);
    assert!(m.contrastive_evals > 0);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let resumed = dir.path().join("resumed");
    let from = f.run().join(EPOCH_DIR).join("epoch-020");
    ok(&[
        "train",
        "--corpus",
        s(&f.corpus()),
        "--out",
        s(&resumed),
        "--resume",
        s(&from),
    ]);
    let mut want = files(&f.run());
    let mut got = files(&resumed);
    // config.json records where the run resumed from.
    want.remove("config.json");
    got.remove("config.json");
    assert_eq!(
        want.keys().collect::<Vec<_>>(),
        got.keys().collect::<Vec<_>>()
    );
    for (name, bytes) in &want {
        assert!(bytes == &got[name], "{name} differs after resume");
    }
}

#[test]
fn resume_rejects_changed_config() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let from = f.run().join(EPOCH_DIR).join("epoch-020");
    let out = run(&[
        "train",
        "--corpus",
        s(&f.corpus()),
        "--out",
        s(&dir.path().join("r")),
        "--resume",
        s(&from),
        "--delta-v",
        "0.5",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn eval_writes_curve_and_heatmaps() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        ok(&[
            "eval",
            "--corpus",
            s(&f.corpus()),
            "--checkpoint",
            s(&f.run()),
            "--out",
            s(out),
            "--export-heatmaps",
        ]);
    }
    assert!(tree(&a) == tree(&b), "eval is not deterministic");

    let curve = fs::read_to_string(a.join(CURVE_CSV)).unwrap();
    assert_eq!(curve.lines().count(), 22, "header plus 21 thresholds");
    assert!(a.join(EVAL_JSON).is_file());

    let mut names: Vec<String> = fs::read_dir(a.join(HEATMAP_DIR))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let mut want: Vec<String> = test_split(f)
        .iter()
        .map(|i| format!("{:06}.pgm", i.instance_id))
        .collect();
    want.sort();
    assert_eq!(names, want);
    let (h, w, _) = read_pgm(&a.join(HEATMAP_DIR).join(&names[0]));
    assert_eq!((h, w), (64, 64));
}

#[test]
fn localize_finds_sounding_objects() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let test = test_split(f);
    let mut hits = 0;
    for inst in &test[..8] {
        let src = f
            .corpus()
            .join("test")
            .join(format!("{:06}", inst.instance_id));
        let out = dir.path().join(format!("{}.pgm", inst.instance_id));
        let stdout = ok(&[
            "localize",
            "--checkpoint",
            s(&f.run()),
            "--image",
            s(&src.join("image.avic")),
            "--audio",
            s(&src.join("audio.raw")),
            "--out",
            s(&out),
        ]);
        assert!(stdout.contains("sounding region (> 0.8)"), "{stdout}");
        assert!(out.with_extension("json").is_file());
        let (_, w, px) = read_pgm(&out);
        let peak = (0..px.len()).max_by_key(|&i| px[i]).unwrap();
        let (r, c) = (peak / w, peak % w);
        if inst.sounding_boxes().iter().any(|b| b.contains(r, c)) {
            hits += 1;
        }
    }
    assert!(
        hits >= 6,
        "heatmap peak inside a sounding box for only {hits} of 8"
    );
}

#[test]
fn localize_constant_image_warns() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let image = dir.path().join("flat.avic");
    write_tensor(&image, &Tensor::filled(&[64, 64, 3], 0.5)).unwrap();
    let audio = f
        .corpus()
        .join("test")
        .join(format!("{:06}", test_split(f)[0].instance_id))
        .join("audio.raw");
    let out = dir.path().join("flat.pgm");
    let o = run(&[
        "localize",
        "--checkpoint",
        s(&f.run()),
        "--image",
        s(&image),
        "--audio",
        s(&audio),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning: the response map is constant"));
    assert!(String::from_utf8_lossy(&o.stdout).contains("0 of 64 patches"));
    let (_, _, px) = read_pgm(&out);
    assert!(px.iter().all(|&v| v == 0));
}

#[test]
fn localize_rejects_wrong_image_size() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let image = dir.path().join("small.avic");
    write_tensor(&image, &Tensor::filled(&[32, 32, 3], 0.5)).unwrap();
    let audio = f
        .corpus()
        .join("test")
        .join(format!("{:06}", test_split(f)[0].instance_id))
        .join("audio.raw");
    let o = run(&[
        "localize",
        "--checkpoint",
        s(&f.run()),
        "--image",
        s(&image),
        "--audio",
        s(&audio),
        "--out",
        s(&dir.path().join("x.pgm")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("32x32x3") && err.contains("64x64x3"), "{err}");
}
