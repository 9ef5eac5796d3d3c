use kisvm::data_io::{generate_synthetic, SynthConfig, COLUMNS};
use kisvm::knowledge::reliability_ratios;
use kisvm::pipeline::{band_label, BandLabel};
use kisvm::Error;

fn persistence(cfg: &SynthConfig) -> (f64, f64) {
    let t = generate_synthetic(cfg).unwrap();
    let p = reliability_ratios(t.silicon(), &cfg.bands).unwrap();
    (p.low.unwrap(), p.high.unwrap())
}

#[test]
fn calibrated_persistence_at_rho_08() {
    let mut inside = 0;
    for seed in 0..10 {
        let cfg = SynthConfig { length: 1000, rho: 0.8, seed, ..Default::default() };
        let (lo, hi) = persistence(&cfg);
        if (0.35..=0.60).contains(&lo) && (0.35..=0.60).contains(&hi) {
            inside += 1;
        }
    }
    assert!(inside >= 8, "{inside}/10 seeds inside [0.35, 0.60]");
}

#[test]
fn independent_series_persistence_matches_marginal() {
    for seed in 0..10 {
        let cfg = SynthConfig { length: 1000, rho: 0.0, seed, ..Default::default() };
        let t = generate_synthetic(&cfg).unwrap();
        let p = reliability_ratios(t.silicon(), &cfg.bands).unwrap();
        let n = t.len() as f64;
        let low_frac = t.silicon().iter().filter(|&&z| z < cfg.bands.z_inf).count() as f64 / n;
        let high_frac = t.silicon().iter().filter(|&&z| z > cfg.bands.z_sup).count() as f64 / n;
        assert!((p.low.unwrap() - low_frac).abs() <= 0.1, "seed {seed}");
        assert!((p.high.unwrap() - high_frac).abs() <= 0.1, "seed {seed}");
    }
}

#[test]
fn band_fractions_are_close_to_target() {
    let cfg = SynthConfig { length: 4000, seed: 9, ..Default::default() };
    let t = generate_synthetic(&cfg).unwrap();
    let mut counts = [0usize; 3];
    for &z in t.silicon() {
        counts[band_label(z, &cfg.bands).unwrap().index()] += 1;
    }
    for b in BandLabel::ALL {
        let frac = counts[b.index()] as f64 / t.len() as f64;
        assert!((frac - cfg.band_fractions[b.index()]).abs() < 0.05);
    }
}

#[test]
fn same_seed_same_table() {
    let cfg = SynthConfig { length: 200, seed: 42, ..Default::default() };
    assert_eq!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&cfg).unwrap());
    let other = SynthConfig { seed: 43, ..cfg.clone() };
    assert_ne!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&other).unwrap());
}

#[test]
fn table_has_every_column_and_silicon_in_range() {
    let t = generate_synthetic(&SynthConfig::default()).unwrap();
    assert_eq!(t.len(), 800);
    for c in COLUMNS {
        assert!(t.column(c).unwrap().iter().all(|v| v.is_finite()));
    }
    assert!(t.silicon().iter().all(|z| (0.05..=0.95).contains(z)));
    assert!(t.column("sulfur").unwrap().iter().all(|&s| s >= 0.005));
}

#[test]
fn zero_length_is_config_error() {
    let cfg = SynthConfig { length: 0, ..Default::default() };
    assert!(matches!(generate_synthetic(&cfg), Err(Error::Config(_))));
}
