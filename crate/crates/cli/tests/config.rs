//! Config parsing: defaults, the resolved-text round trip, comment and
//! error handling with line numbers, and cross-field validation.

use std::path::Path;

use freqdehaze::config::{load_config, parse_config, TrainConfig};
use freqdehaze::error::Error;
use freqdehaze_core::dehaze::StatsScope;

fn origin() -> &'static Path {
    Path::new("test.cfg")
}

#[test]
fn empty_text_yields_defaults() {
    let cfg = parse_config("", origin()).unwrap();
    assert_eq!(cfg, TrainConfig::default());
    assert_eq!(cfg.stage, 1);
    assert_eq!(cfg.t_steps, 8);
    assert_eq!(cfg.beta_start, 0.1);
    assert_eq!(cfg.beta_end, 0.8);
    assert_eq!(cfg.nce_tau, 0.07);
    assert_eq!(cfg.blocks_per_scale, [4, 4, 6, 10]);
    assert_eq!(cfg.nce_layers, [0, 1]);
    assert_eq!(cfg.disc_lr(), cfg.lr);
}

/// The resolved text is a fixed point: parse it, print it, get the same
/// bytes. This is what checkpoint snapshots rely on.
#[test]
fn resolved_text_is_a_parse_fixed_point() {
    let mut cfg = TrainConfig::default();
    cfg.seed = 99;
    cfg.stage = 2;
    cfg.lambda_diff = 0.25;
    cfg.amp_stats = StatsScope::PerChannel;
    cfg.oracle_residual = true;
    let text = cfg.resolved_text();
    let reparsed = parse_config(&text, origin()).unwrap();
    assert_eq!(reparsed.resolved_text(), text);
}

/// With every optional field pinned, the round trip is equality on the
/// struct itself.
#[test]
fn explicit_config_round_trips_exactly() {
    let mut cfg = TrainConfig::default();
    cfg.disc_lr = Some(3e-4);
    cfg.nce_layers = vec![0, 2];
    cfg.blocks_per_scale = vec![1, 2, 3];
    cfg.data_root = "some/dir".into();
    let reparsed = parse_config(&cfg.resolved_text(), origin()).unwrap();
    assert_eq!(reparsed, cfg);
}

#[test]
fn comments_and_blank_lines_are_ignored() {
    let text = "\n# full-line comment\nepochs = 3   # trailing comment\n\n  batch = 2\n";
    let cfg = parse_config(text, origin()).unwrap();
    assert_eq!(cfg.epochs, 3);
    assert_eq!(cfg.batch, 2);
}

fn expect_config_err(text: &str) -> (usize, String) {
    match parse_config(text, origin()) {
        Err(Error::Config { line, detail, .. }) => (line, detail),
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn unknown_key_reports_its_line() {
    let (line, detail) = expect_config_err("epochs = 1\nepochz = 2\n");
    assert_eq!(line, 2);
    assert!(detail.contains("unknown key epochz"), "got {detail}");
}

#[test]
fn duplicate_key_is_rejected() {
    let (line, detail) = expect_config_err("lr = 1e-3\nlr = 1e-4\n");
    assert_eq!(line, 2);
    assert!(detail.contains("duplicate key lr"), "got {detail}");
}

#[test]
fn bad_number_names_key_and_value() {
    let (line, detail) = expect_config_err("batch = three\n");
    assert_eq!(line, 1);
    assert!(detail.contains("key batch") && detail.contains("three"), "got {detail}");
}

#[test]
fn missing_value_and_missing_equals_are_errors() {
    let (_, detail) = expect_config_err("patch =\n");
    assert!(detail.contains("no value"), "got {detail}");
    let (_, detail) = expect_config_err("just words\n");
    assert!(detail.contains("key = value"), "got {detail}");
}

#[test]
fn bad_enum_values_are_errors() {
    let (_, detail) = expect_config_err("amp_stats = per_pixel\n");
    assert!(detail.contains("per_pixel"), "got {detail}");
    let (_, detail) = expect_config_err("oracle_residual = yes\n");
    assert!(detail.contains("not a bool"), "got {detail}");
}

/// The patch must survive every downsampling stage; 250 is not divisible
/// by 8 for the default four-scale network.
#[test]
fn patch_must_fit_the_scale_pyramid() {
    let err = parse_config("patch = 250\n", origin()).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("250"), "got {msg}");
}

#[test]
fn validation_rejects_inconsistent_fields() {
    for (text, needle) in [
        ("stage = 3\n", "stage must be 1 or 2"),
        ("batch = 0\n", "batch must be positive"),
        ("lr = 0\n", "lr must be positive"),
        ("lambda_nce = -1\n", "lambda_nce must be >= 0"),
        ("t_steps = 0\n", "t_steps must be positive"),
        ("beta_start = 0.9\n", "beta_start <= beta_end"),
        ("beta_end = 1.0\n", "beta_end < 1"),
        ("nce_layers = 1, 1\n", "strictly ascending"),
        ("nce_layers = 7\n", "past the deepest"),
        ("nce_tau = 0\n", "nce_tau must be positive"),
        ("denoiser_emb = 5\n", "must be even"),
    ] {
        let err = parse_config(text, origin()).unwrap_err();
        assert!(
            err.to_string().contains(needle),
            "{text:?}: expected {needle:?} in {err}"
        );
    }
}

/// Zero epochs is deliberately allowed: it checkpoints the bare
/// initialization, which diagnostics build on.
#[test]
fn zero_epochs_is_valid() {
    let cfg = parse_config("epochs = 0\n", origin()).unwrap();
    assert_eq!(cfg.epochs, 0);
}

#[test]
fn load_config_reads_files_and_reports_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.cfg");
    std::fs::write(&path, "epochs = 7\nseed = 4\n").unwrap();
    let cfg = load_config(&path).unwrap();
    assert_eq!((cfg.epochs, cfg.seed), (7, 4));

    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "epochs = 1\nwat = 1\n").unwrap();
    let err = load_config(&bad).unwrap_err();
    assert!(err.to_string().contains("bad.cfg:2"), "got {err}");

    let missing = load_config(&dir.path().join("absent.cfg")).unwrap_err();
    assert_eq!(missing.exit_code(), 4);
}
