use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use avloc::cli::{RunConfig, TrainRecord, CONFIG_FILE};
use avloc::corpus::BoundingBox;
use avloc::encoders::{init_params, save_checkpoint, Checkpoint, Encoder, EncoderConfig};
use avloc::eval::{ciou, consensus_map};
use avloc::json::write_json;
use avloc::numcore::{seeded_rng, Tensor};
use avloc::train::Variant;
use avloc_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(avloc_last_error()) }
        .to_str()
        .unwrap()
        .to_owned()
}

/// An untrained checkpoint with default encoder and config.
fn write_model(dir: &Path) {
    let encoder = EncoderConfig::default();
    let params = init_params(&encoder, &mut seeded_rng(5)).unwrap();
    save_checkpoint(
        dir,
        &Checkpoint {
            params,
            encoder,
            epoch: 0,
        },
    )
    .unwrap();
    let record = TrainRecord {
        corpus: PathBuf::from("corpus"),
        variant: Variant::Full,
        resumed_from: None,
        config: RunConfig::default(),
    };
    write_json(&dir.join(CONFIG_FILE), &record).unwrap();
}

fn load(dir: &Path) -> *mut AvlocModel {
    let path = CString::new(dir.to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(
        unsafe { avloc_model_load(path.as_ptr(), &mut model) },
        AvlocStatus::Ok,
        "{}",
        last_error()
    );
    assert!(!model.is_null());
    model
}

#[test]
fn version_is_set() {
    let v = unsafe { CStr::from_ptr(avloc_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_pointers_are_reported() {
    let mut model = ptr::null_mut();
    assert_eq!(
        unsafe { avloc_model_load(ptr::null(), &mut model) },
        AvlocStatus::NullPointer
    );
    assert!(last_error().contains("checkpoint_dir"));
    assert!(model.is_null());
    let mut x = 0.0;
    assert_eq!(
        unsafe { avloc_model_delta_v(ptr::null(), &mut x) },
        AvlocStatus::NullPointer
    );
    unsafe { avloc_model_free(ptr::null_mut()) };
}

#[test]
fn missing_checkpoint_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("absent").to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(
        unsafe { avloc_model_load(path.as_ptr(), &mut model) },
        AvlocStatus::Io
    );
    assert!(last_error().contains("index.json"));
    assert!(model.is_null());
}

#[test]
fn ciou_matches_library() {
    let (rows, cols) = (6, 5);
    let mut rng = seeded_rng(9);
    let pred: Vec<f64> = (0..rows * cols).map(|_| rng.draw_uniform()).collect();
    let boxes = [0usize, 1, 3, 4, 2, 2, 5, 6];
    let mut out = -1.0;
    let s = unsafe {
        avloc_ciou(
            pred.as_ptr(),
            rows,
            cols,
            boxes.as_ptr(),
            2,
            1,
            0.5,
            &mut out,
        )
    };
    assert_eq!(s, AvlocStatus::Ok, "{}", last_error());
    let bb = [
        BoundingBox::new(0, 1, 3, 4).unwrap(),
        BoundingBox::new(2, 2, 5, 6).unwrap(),
    ];
    let g = consensus_map(&bb, rows, cols, 1).unwrap();
    let expected = ciou(&Tensor::new(vec![rows, cols], pred).unwrap(), &g, 0.5).unwrap();
    assert_eq!(out, expected);

    let bad = [3usize, 0, 1, 2];
    let s = unsafe { avloc_ciou(ptr::null(), 0, 0, bad.as_ptr(), 1, 1, 0.5, &mut out) };
    assert_eq!(s, AvlocStatus::NullPointer);
}

#[test]
fn localize_matches_library_and_flags_constant_maps() {
    let dir = tempfile::tempdir().unwrap();
    write_model(dir.path());
    let model = load(dir.path());
    let (mut h, mut w, mut c, mut gr, mut gc) = (0, 0, 0, 0, 0);
    assert_eq!(
        unsafe { avloc_model_shape(model, &mut h, &mut w, &mut c, &mut gr, &mut gc) },
        AvlocStatus::Ok
    );
    assert_eq!((h, w, c, gr, gc), (64, 64, 3, 8, 8));
    let mut dv = 0.0;
    assert_eq!(
        unsafe { avloc_model_delta_v(model, &mut dv) },
        AvlocStatus::Ok
    );
    assert_eq!(dv, RunConfig::default().train.delta_v);

    let mut rng = seeded_rng(1);
    let image: Vec<f64> = (0..h * w * c).map(|_| rng.draw_uniform()).collect();
    let audio: Vec<f64> = (0..8000).map(|i| (i as f64 * 0.3).sin() * 0.2).collect();
    let mut heat = vec![0.0; h * w];
    let mut degenerate = -1;
    let s = unsafe {
        avloc_localize(
            model,
            image.as_ptr(),
            image.len(),
            audio.as_ptr(),
            audio.len(),
            8000.0,
            heat.as_mut_ptr(),
            heat.len(),
            &mut degenerate,
        )
    };
    assert_eq!(s, AvlocStatus::Ok, "{}", last_error());
    assert_eq!(degenerate, 0);

    let cfg = EncoderConfig::default();
    let params = init_params(&cfg, &mut seeded_rng(5)).unwrap();
    let wave = avloc::dsp::Waveform::new(audio.clone(), 8000.0).unwrap();
    let lms = avloc::dsp::log_mel_spectrogram(&wave, &RunConfig::default().log_mel).unwrap();
    let img = Tensor::new(vec![h, w, c], image).unwrap();
    let expected = avloc::eval::localize(&Encoder::new(cfg).unwrap(), &params, &img, &lms).unwrap();
    assert_eq!(heat, expected.heatmap.data());

    let flat = vec![0.25; h * w * c];
    let s = unsafe {
        avloc_localize(
            model,
            flat.as_ptr(),
            flat.len(),
            audio.as_ptr(),
            audio.len(),
            8000.0,
            heat.as_mut_ptr(),
            heat.len(),
            &mut degenerate,
        )
    };
    assert_eq!(s, AvlocStatus::Ok);
    assert_eq!(degenerate, 1);
    assert!(heat.iter().all(|&x| x == 0.0));

    let s = unsafe {
        avloc_localize(
            model,
            flat.as_ptr(),
            12,
            audio.as_ptr(),
            audio.len(),
            8000.0,
            heat.as_mut_ptr(),
            heat.len(),
            ptr::null_mut(),
        )
    };
    assert_eq!(s, AvlocStatus::Shape);
    assert!(
        last_error().contains("12") && last_error().contains("64x64x3"),
        "{}",
        last_error()
    );
    unsafe { avloc_model_free(model) };
}

#[test]
fn gradcheck_passes() {
    let mut worst = -1.0;
    assert_eq!(
        unsafe { avloc_gradcheck(0, 2, &mut worst) },
        AvlocStatus::Ok,
        "{}",
        last_error()
    );
    assert!((0.0..1e-4).contains(&worst));
    assert_eq!(
        unsafe { avloc_gradcheck(0, 0, ptr::null_mut()) },
        AvlocStatus::InvalidArgument
    );
}

/// Builds the C example against the generated header and static library.
#[test]
fn c_program_links_against_header() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    // `cargo test` does not emit the staticlib; build it in a separate target
    // directory so the outer build lock is not contended.
    let exe = std::env::current_exe().unwrap();
    let target = exe.ancestors().nth(3).unwrap().join("c-abi");
    let cargo = std::env::var("CARGO").unwrap_or_else(|_| "cargo".into());
    let status = Command::new(cargo)
        .args([
            "build",
            "--quiet",
            "--offline",
            "-p",
            "avloc-ffi",
            "--target-dir",
        ])
        .arg(&target)
        .current_dir(manifest)
        .status()
        .unwrap();
    assert!(status.success());
    let lib = target.join("debug/libavloc_ffi.a");
    let work = tempfile::tempdir().unwrap();
    let bin = work.path().join("smoke");
    let status = Command::new("cc")
        .arg(manifest.join("tests/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("a C compiler on PATH");
    assert!(status.success());
    let ckpt = work.path().join("model");
    write_model(&ckpt);
    let out = Command::new(&bin).arg(&ckpt).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        out.status.success(),
        "{stdout} {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(
        stdout.contains("shape 64x64x3 degenerate 1 bad-size 3"),
        "{stdout}"
    );
}
