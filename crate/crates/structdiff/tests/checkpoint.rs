//! Checkpoint format: bitwise round-trips of every tensor plus the rejection
//! of malformed files.

use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU32, Ordering};

use structdiff::checkpoint::{load_checkpoint, save_checkpoint};
use structdiff::dataset::{DatasetFamily, DatasetKind};
use structdiff::diffusion::{sample, train, SamplerConfig, SigmaMode, TrainConfig, TrainOutput};
use structdiff::error::Error;
use structdiff::schedule::{build_schedule, ScheduleFamily, ScheduleKind};

static COUNTER: AtomicU32 = AtomicU32::new(0);

fn temp_path(tag: &str) -> PathBuf {
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    std::env::temp_dir().join(format!(
        "structdiff-ckpt-{}-{}-{}.sdf",
        std::process::id(),
        tag,
        n
    ))
}

fn small_schedule() -> ScheduleKind {
    ScheduleKind {
        family: ScheduleFamily::Linear,
        beta_start: 1e-3,
        beta_end: 0.2,
        timesteps: 20,
    }
}

fn trained() -> TrainOutput {
    let mut cfg = TrainConfig::new(
        DatasetKind {
            family: DatasetFamily::SwissRoll,
            n_samples: 128,
            noise_level: 0.05,
            seed: 5,
        },
        23,
    );
    cfg.schedule = small_schedule();
    cfg.steps = 12;
    cfg.batch_size = 16;
    cfg.hidden = vec![10, 7];
    cfg.embed_dim = 6;
    cfg.ema_decay = 0.9;
    train(&cfg).unwrap()
}

#[test]
fn round_trip_is_bitwise() {
    let out = trained();
    let path = temp_path("roundtrip");
    save_checkpoint(&path, &out.net, &out.ema, &out.optimizer).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    fs::remove_file(&path).unwrap();

    assert_eq!(loaded.net.weights(), out.net.weights());
    assert_eq!(loaded.net.biases(), out.net.biases());
    assert_eq!(loaded.net.point_dim(), 2);
    assert_eq!(loaded.net.embed_dim(), 6);
    assert_eq!(loaded.step, out.optimizer.step);

    let ema_net = loaded.ema_net().unwrap();
    let want = out.ema.snapshot_net(&out.net).unwrap();
    assert_eq!(ema_net.weights(), want.weights());
    assert_eq!(ema_net.biases(), want.biases());

    let opt = loaded.optimizer(1e-3, 1.0).unwrap();
    let (mw, vw, mb, vb) = opt.moment_tensors();
    let (omw, ovw, omb, ovb) = out.optimizer.moment_tensors();
    assert_eq!(mw, omw);
    assert_eq!(vw, ovw);
    assert_eq!(mb, omb);
    assert_eq!(vb, ovb);

    // Practical reuse: sampling from the reloaded EMA weights reproduces
    // sampling from the in-memory state draw for draw.
    let s = build_schedule(&small_schedule()).unwrap();
    let cfg = SamplerConfig {
        n_samples: 8,
        sigma_mode: SigmaMode::Posterior,
        seed: 77,
        use_ema: true,
    };
    let a = sample(&out.net, Some(&out.ema), &s, &cfg).unwrap();
    let restored = loaded.ema_state(0.9).unwrap();
    let b = sample(&loaded.net, Some(&restored), &s, &cfg).unwrap();
    assert_eq!(a.as_array(), b.as_array());
}

#[test]
fn wrong_magic_is_rejected() {
    let out = trained();
    let path = temp_path("magic");
    save_checkpoint(&path, &out.net, &out.ema, &out.optimizer).unwrap();
    let mut bytes = fs::read(&path).unwrap();
    bytes[0] = b'X';
    fs::write(&path, &bytes).unwrap();
    let err = load_checkpoint(&path).unwrap_err();
    fs::remove_file(&path).unwrap();
    assert!(matches!(err, Error::BadCheckpoint { .. }), "{err:?}");
}

#[test]
fn truncated_and_padded_files_are_rejected() {
    let out = trained();
    let path = temp_path("size");
    save_checkpoint(&path, &out.net, &out.ema, &out.optimizer).unwrap();
    let bytes = fs::read(&path).unwrap();

    fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
    assert!(matches!(
        load_checkpoint(&path).unwrap_err(),
        Error::BadCheckpoint { .. }
    ));

    let mut padded = bytes.clone();
    padded.push(0);
    fs::write(&path, &padded).unwrap();
    assert!(matches!(
        load_checkpoint(&path).unwrap_err(),
        Error::BadCheckpoint { .. }
    ));

    // Too short to even hold the header.
    fs::write(&path, b"SD").unwrap();
    assert!(matches!(
        load_checkpoint(&path).unwrap_err(),
        Error::BadCheckpoint { .. }
    ));
    fs::remove_file(&path).unwrap();
}

#[test]
fn missing_file_is_an_io_error() {
    let path = temp_path("missing");
    assert!(matches!(
        load_checkpoint(&path).unwrap_err(),
        Error::Io { .. }
    ));
}
