//! Forward-process closure, sampler unrolls against hand replication of the
//! noise streams, and small end-to-end training runs.

use ndarray::{array, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

use structdiff::dataset::{DatasetFamily, DatasetKind};
use structdiff::diffusion::{
    forward_marginal_stats, median_simple_loss, q_sample, sample, train, SamplerConfig, SigmaMode,
    TrainConfig,
};
use structdiff::error::Error;
use structdiff::net::DenoiserNet;
use structdiff::optim::EmaState;
use structdiff::regularizer::{RegularizerKind, RegularizerSpec};
use structdiff::rng::substream;
use structdiff::schedule::{build_schedule, Schedule, ScheduleFamily, ScheduleKind};

fn linear_kind(t: usize) -> ScheduleKind {
    ScheduleKind {
        family: ScheduleFamily::Linear,
        beta_start: 1e-4,
        beta_end: 0.02,
        timesteps: t,
    }
}

fn linear_schedule(t: usize) -> Schedule {
    build_schedule(&linear_kind(t)).unwrap()
}

#[test]
fn q_sample_at_time_zero_is_identity() {
    let s = linear_schedule(10);
    let x0 = array![[0.3, -1.2], [4.0, 0.0]];
    let eps = array![[100.0, 100.0], [100.0, 100.0]];
    let out = q_sample(&x0, &[0, 0], &eps, &s).unwrap();
    assert_eq!(out, x0);
}

#[test]
fn q_sample_tracks_the_per_row_timestep() {
    let s = linear_schedule(4);
    // Independent alpha-bar: cumulative product of (1 - beta_t) with the
    // linear interpolation written out longhand.
    let betas: Vec<f64> = (1..=4)
        .map(|t| 1e-4 + (t - 1) as f64 / 3.0 * (0.02 - 1e-4))
        .collect();
    let mut ab = vec![1.0f64];
    for b in &betas {
        ab.push(ab.last().unwrap() * (1.0 - b));
    }
    let x0 = array![[1.0, -2.0], [0.5, 0.25], [3.0, 3.0]];
    let eps = array![[0.1, 0.2], [-0.3, 0.4], [1.0, -1.0]];
    let t_batch = [1usize, 3, 4];
    let out = q_sample(&x0, &t_batch, &eps, &s).unwrap();
    for (i, &t) in t_batch.iter().enumerate() {
        for j in 0..2 {
            let want = ab[t].sqrt() * x0[[i, j]] + (1.0 - ab[t]).sqrt() * eps[[i, j]];
            assert!((out[[i, j]] - want).abs() < 1e-15, "row {i} col {j}");
        }
    }
}

#[test]
fn q_sample_rejects_mismatched_shapes_and_timesteps() {
    let s = linear_schedule(4);
    let x0 = Array2::zeros((2, 2));
    let eps = Array2::zeros((3, 2));
    assert!(matches!(
        q_sample(&x0, &[1, 1], &eps, &s),
        Err(Error::ShapeMismatch(_))
    ));
    let eps = Array2::zeros((2, 2));
    assert!(matches!(
        q_sample(&x0, &[1], &eps, &s),
        Err(Error::ShapeMismatch(_))
    ));
    assert!(matches!(
        q_sample(&x0, &[1, 5], &eps, &s),
        Err(Error::TimestepOutOfRange { t: 5, max: 4 })
    ));
}

#[test]
fn forward_marginal_matches_closed_form() {
    // Pool of two symmetric points: mean 0, population variance c^2 per
    // coordinate in x, zero in y. The t-marginal of the forward process has
    // mean sqrt(ab) * mu and variance ab * var + (1 - ab).
    let c = 2.0;
    let pool = array![[c, 0.0], [-c, 0.0]];
    let s = linear_schedule(200);
    let t = 120;
    let ab = s.alpha_bar(t).unwrap();
    let draws = 200_000;
    let (means, vars) = forward_marginal_stats(&pool, t, &s, draws, 99).unwrap();

    let want_var_x = ab * c * c + (1.0 - ab);
    let want_var_y = 1.0 - ab;
    let k = draws as f64;
    // Three standard errors; the row cycling makes the x0 term exact.
    let se_mean_x = (want_var_x / k).sqrt();
    let se_mean_y = (want_var_y / k).sqrt();
    assert!(means[0].abs() < 3.0 * se_mean_x, "{}", means[0]);
    assert!(means[1].abs() < 3.0 * se_mean_y, "{}", means[1]);
    let se_var_x = want_var_x * (2.0 / k).sqrt();
    let se_var_y = want_var_y * (2.0 / k).sqrt();
    assert!((vars[0] - want_var_x).abs() < 3.0 * se_var_x, "{}", vars[0]);
    assert!((vars[1] - want_var_y).abs() < 3.0 * se_var_y, "{}", vars[1]);
}

/// A freshly constructed net has a zero output layer, so eps_hat is
/// identically zero and the sampler becomes a linear Gaussian recursion we
/// can replicate draw by draw.
#[test]
fn zero_net_sampler_matches_hand_unroll() {
    let s = linear_schedule(3);
    let mut init = substream(1, "init");
    let net = DenoiserNet::new(2, 8, &[6], &mut init).unwrap();
    let cfg = SamplerConfig {
        n_samples: 5,
        sigma_mode: SigmaMode::Posterior,
        seed: 42,
        use_ema: false,
    };
    let got = sample(&net, None, &s, &cfg).unwrap();

    // Same substream, same order: the full initial batch first, then one
    // noise batch per step for t = 3 and t = 2; t = 1 draws nothing.
    let mut rng = substream(42, "sampler");
    let mut x: Array2<f64> = Array2::zeros((5, 2));
    x.mapv_inplace(|_| rng.sample(StandardNormal));
    let mut z: Array2<f64> = Array2::zeros((5, 2));
    for t in (1..=3usize).rev() {
        let inv = 1.0 / s.alpha(t).unwrap().sqrt();
        if t > 1 {
            let sigma = s.posterior_var(t).unwrap().sqrt();
            z.mapv_inplace(|_| rng.sample(StandardNormal));
            ndarray::Zip::from(&mut x)
                .and(&z)
                .for_each(|x, &zz| *x = *x * inv + sigma * zz);
        } else {
            x.mapv_inplace(|v| v * inv);
        }
    }
    assert_eq!(got.as_array(), &x);
}

#[test]
fn sigma_modes_disagree_beyond_one_step() {
    let s = linear_schedule(3);
    let mut init = substream(2, "init");
    let net = DenoiserNet::new(2, 8, &[6], &mut init).unwrap();
    let mut cfg = SamplerConfig {
        n_samples: 4,
        sigma_mode: SigmaMode::Posterior,
        seed: 7,
        use_ema: false,
    };
    let posterior = sample(&net, None, &s, &cfg).unwrap();
    cfg.sigma_mode = SigmaMode::Beta;
    let beta = sample(&net, None, &s, &cfg).unwrap();
    assert_ne!(posterior.as_array(), beta.as_array());

    // With a single step no noise is ever injected, so the modes coincide.
    let s1 = linear_schedule(1);
    cfg.sigma_mode = SigmaMode::Posterior;
    let a = sample(&net, None, &s1, &cfg).unwrap();
    cfg.sigma_mode = SigmaMode::Beta;
    let b = sample(&net, None, &s1, &cfg).unwrap();
    assert_eq!(a.as_array(), b.as_array());
}

#[test]
fn sampler_is_deterministic_in_the_seed() {
    let s = linear_schedule(5);
    let mut init = substream(3, "init");
    let net = DenoiserNet::new(2, 8, &[6], &mut init).unwrap();
    let cfg = SamplerConfig {
        n_samples: 6,
        sigma_mode: SigmaMode::Posterior,
        seed: 11,
        use_ema: false,
    };
    let a = sample(&net, None, &s, &cfg).unwrap();
    let b = sample(&net, None, &s, &cfg).unwrap();
    assert_eq!(a.as_array(), b.as_array());
    let other = SamplerConfig { seed: 12, ..cfg };
    let c = sample(&net, None, &s, &other).unwrap();
    assert_ne!(a.as_array(), c.as_array());
}

#[test]
fn ema_snapshot_and_raw_net_are_distinct_samplers() {
    let s = linear_schedule(3);
    let mut init = substream(4, "init");
    let mut net = DenoiserNet::new(2, 8, &[6], &mut init).unwrap();
    let ema = EmaState::new(&net, 0.5).unwrap(); // shadow = zero output layer
    let last = net.param_count() - 1;
    net.nudge_param(last, 0.8).unwrap(); // raw net now predicts nonzero eps

    let cfg = SamplerConfig {
        n_samples: 4,
        sigma_mode: SigmaMode::Posterior,
        seed: 5,
        use_ema: true,
    };
    let shadowed = sample(&net, Some(&ema), &s, &cfg).unwrap();
    let raw = sample(
        &net,
        Some(&ema),
        &s,
        &SamplerConfig {
            use_ema: false,
            ..cfg
        },
    )
    .unwrap();
    assert_ne!(shadowed.as_array(), raw.as_array());

    // The shadow still holds the zero output layer, so the EMA path must
    // reproduce the zero-net unroll exactly.
    let zero_net = {
        let mut init = substream(4, "init");
        DenoiserNet::new(2, 8, &[6], &mut init).unwrap()
    };
    let plain = sample(
        &zero_net,
        None,
        &s,
        &SamplerConfig {
            use_ema: false,
            ..cfg
        },
    )
    .unwrap();
    assert_eq!(shadowed.as_array(), plain.as_array());

    assert!(matches!(
        sample(&net, None, &s, &cfg),
        Err(Error::InvalidConfig(_))
    ));
}

#[test]
fn sampler_rejects_empty_request() {
    let s = linear_schedule(2);
    let mut init = substream(5, "init");
    let net = DenoiserNet::new(2, 8, &[], &mut init).unwrap();
    let cfg = SamplerConfig {
        n_samples: 0,
        sigma_mode: SigmaMode::Posterior,
        seed: 0,
        use_ema: false,
    };
    assert!(matches!(
        sample(&net, None, &s, &cfg),
        Err(Error::InvalidConfig(_))
    ));
}

fn tiny_train_config(kind: RegularizerKind, lambda: f64, steps: usize, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::new(
        DatasetKind {
            family: DatasetFamily::MoonCircles,
            n_samples: 512,
            noise_level: 0.05,
            seed: 17,
        },
        seed,
    );
    // Short schedules need proportionally larger betas, or alpha_bar never
    // decays and the denoising task has no learnable signal.
    cfg.schedule = ScheduleKind {
        family: ScheduleFamily::Linear,
        beta_start: 1e-3,
        beta_end: 0.2,
        timesteps: 50,
    };
    cfg.regularizer = RegularizerSpec {
        kind,
        lambda,
        ..RegularizerSpec::default()
    };
    cfg.steps = steps;
    cfg.batch_size = 64;
    cfg.lr = 1e-3;
    cfg.hidden = vec![32, 32];
    cfg.embed_dim = 16;
    cfg
}

#[test]
fn training_reduces_the_simple_loss() {
    let mut cfg = tiny_train_config(RegularizerKind::None, 0.0, 1500, 7);
    cfg.lr = 2e-3;
    let out = train(&cfg).unwrap();
    assert_eq!(out.log.len(), 1500);
    assert_eq!(out.log.first().unwrap().step, 1);
    assert_eq!(out.log.last().unwrap().step, 1500);
    // Disabled regularizer: the logged penalty column is exactly zero and
    // total == simple.
    for row in &out.log {
        assert_eq!(row.penalty, 0.0);
        assert_eq!(row.total, row.simple_loss);
    }
    // The zero-initialized net starts at E||eps||^2 = 2; most of the drop
    // happens within the first dozens of steps, so the early window is tight.
    let early = median_simple_loss(&out.log, 0..30);
    let late = median_simple_loss(&out.log, 1350..1500);
    assert!(
        late < 0.7 * early && late < 1.0,
        "no learning: early {early}, late {late}"
    );
}

#[test]
fn first_step_penalty_is_exact_for_trace_mean() {
    // The zero-initialized net predicts eps_hat = 0 at step 1, so the trace
    // mean is 0 and the raw penalty exactly (0 - 1)^2 = 1; the logged
    // column carries lambda times that.
    let cfg = tiny_train_config(RegularizerKind::IsoTraceMean, 0.5, 1, 3);
    let out = train(&cfg).unwrap();
    assert_eq!(out.log[0].penalty, 0.5);
    assert!((out.log[0].total - out.log[0].simple_loss - 0.5).abs() < 1e-15);
}

#[test]
fn covariance_penalty_survives_the_degenerate_first_step() {
    // Step 1's all-zero prediction has no covariance; the fallback trains
    // on the simple term alone and later steps pick the penalty back up.
    let cfg = tiny_train_config(RegularizerKind::Kl, 0.1, 25, 9);
    let out = train(&cfg).unwrap();
    assert_eq!(out.log[0].penalty, 0.0);
    assert!(
        out.log[1..].iter().any(|r| r.penalty > 0.0),
        "penalty never re-engaged"
    );
    for row in &out.log {
        assert!((row.total - row.simple_loss - row.penalty).abs() < 1e-12);
    }
}

#[test]
fn training_is_deterministic_in_the_seed() {
    let cfg = tiny_train_config(RegularizerKind::Mean, 0.2, 30, 21);
    let a = train(&cfg).unwrap();
    let b = train(&cfg).unwrap();
    assert_eq!(a.log, b.log);
    for (wa, wb) in a.net.weights().iter().zip(b.net.weights()) {
        assert_eq!(wa, wb);
    }
    for (ba, bb) in a.net.biases().iter().zip(b.net.biases()) {
        assert_eq!(ba, bb);
    }
    let (sa, _) = a.ema.shadows();
    let (sb, _) = b.ema.shadows();
    for (wa, wb) in sa.iter().zip(sb) {
        assert_eq!(wa, wb);
    }

    let other = tiny_train_config(RegularizerKind::Mean, 0.2, 30, 22);
    let c = train(&other).unwrap();
    assert_ne!(a.log, c.log);
}

#[test]
fn dropout_training_runs_and_is_reproducible() {
    let mut cfg = tiny_train_config(RegularizerKind::None, 0.0, 20, 13);
    cfg.dropout = 0.3;
    let a = train(&cfg).unwrap();
    let b = train(&cfg).unwrap();
    assert_eq!(a.log, b.log);
}

#[test]
fn mmd_training_draws_a_fresh_reference_each_step() {
    let mut cfg = tiny_train_config(RegularizerKind::Mmd, 0.5, 12, 31);
    cfg.batch_size = 32;
    let out = train(&cfg).unwrap();
    // Penalties differ across steps (new reference and new batch); the
    // unbiased estimator is allowed to dip below zero but must stay finite.
    assert!(out.log.iter().all(|r| r.penalty.is_finite()));
    let first = out.log[0].penalty;
    assert!(
        out.log[1..].iter().any(|r| (r.penalty - first).abs() > 1e-12),
        "penalty frozen across steps"
    );
}

#[test]
fn log_csv_shape() {
    let cfg = tiny_train_config(RegularizerKind::None, 0.0, 3, 1);
    let out = train(&cfg).unwrap();
    let csv = out.log_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("step,simple_loss,penalty,total"));
    assert_eq!(csv.lines().count(), 4);
    let first = lines.next().unwrap();
    assert!(first.starts_with("1,"));
    assert_eq!(first.split(',').count(), 4);
}

#[test]
fn train_config_serde_round_trip_and_defaults() {
    let cfg: TrainConfig = serde_json::from_str(
        r#"{
            "dataset": {"dataset": "scattered_moon", "seed": 4},
            "schedule": {"schedule": "cosine", "T": 100},
            "regularizer": {"regularizer": "kl", "lambda": 0.2},
            "steps": 10,
            "seed": 3
        }"#,
    )
    .unwrap();
    assert_eq!(cfg.dataset.family, DatasetFamily::ScatteredMoon);
    assert_eq!(cfg.dataset.n_samples, 10000);
    assert_eq!(cfg.schedule.family, ScheduleFamily::Cosine);
    assert_eq!(cfg.schedule.timesteps, 100);
    assert_eq!(cfg.regularizer.kind, RegularizerKind::Kl);
    assert_eq!(cfg.batch_size, 256);
    assert_eq!(cfg.steps, 10);
    assert_eq!(cfg.lr, 2e-4);
    assert_eq!(cfg.ema_decay, 0.9999);
    assert_eq!(cfg.clip_norm, 1.0);
    assert_eq!(cfg.dropout, 0.0);
    assert_eq!(cfg.hidden, vec![128, 128, 128]);
    assert_eq!(cfg.embed_dim, 64);

    let text = serde_json::to_string(&cfg).unwrap();
    let back: TrainConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn train_config_validation() {
    let mut cfg = tiny_train_config(RegularizerKind::None, 0.0, 5, 1);
    cfg.steps = 0;
    assert!(cfg.validate().is_err());
    cfg.steps = 5;
    cfg.batch_size = 0;
    assert!(cfg.validate().is_err());
    cfg.batch_size = 2;
    cfg.regularizer.kind = RegularizerKind::Kurtosis;
    assert!(cfg.validate().is_err(), "covariance kind needs batch >= 3");
    cfg.regularizer.kind = RegularizerKind::Mmd;
    cfg.batch_size = 1;
    assert!(cfg.validate().is_err());
    cfg.batch_size = 64;
    cfg.dropout = 1.0;
    assert!(cfg.validate().is_err());
    cfg.dropout = -0.1;
    assert!(cfg.validate().is_err());
    cfg.dropout = 0.0;
    assert!(cfg.validate().is_ok());
}
