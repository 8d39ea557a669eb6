use jumpbsde_py::{parse_config, solve_config};

const CONFIG: &str = r#"{
  "market": {
    "b": 0.4, "sigma": 1.0, "alpha": 2.0, "horizon": 1.0,
    "claim": {"type": "constant", "value": 0.0},
    "constraint": {"type": "interval", "lo": -5.0, "hi": 5.0}
  },
  "grid": {"steps": 10, "paths": 1000, "seed": 3}
}"#;

#[test]
fn overrides_apply_before_validation() {
    let cfg = parse_config(CONFIG, Some(500), Some(4), Some(9)).unwrap();
    assert_eq!((cfg.grid.paths, cfg.grid.steps, cfg.grid.seed), (500, 4, 9));
    assert!(parse_config(CONFIG, Some(1), None, None)
        .unwrap_err()
        .is_config());
}

#[test]
fn solve_matches_library_pipeline() {
    let cfg = parse_config(CONFIG, None, None, None).unwrap();
    let (a, pa) = solve_config(&cfg).unwrap();
    let (b, pb) = solve_config(&cfg).unwrap();
    assert_eq!(a.y, b.y);
    assert_eq!(pa.values, pb.values);
    assert_eq!(a.steps(), 10);
}
