//! Checks on the desk-scale forced-turbulence dataset. The dataset is cached
//! under `target/acceptance`, shared with the acceptance suite, and
//! generated on first use (about an hour on one core).

use std::path::PathBuf;

use tmn_core::datagen::{generate_dataset, CaseKind, Dataset, DatasetConfig};

fn desk_dataset() -> Dataset {
    let cfg = DatasetConfig::desk(CaseKind::ForcedTurbulence);
    let json = serde_json::to_string(&cfg).unwrap();
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../target/acceptance")
        .join(format!("dataset-{:08x}", crc32fast::hash(json.as_bytes())));
    generate_dataset(&cfg, &dir, false).unwrap()
}

/// Least-squares slope of `y` against `x`.
fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[test]
fn forced_energy_is_stationary_after_warmup() {
    let data = desk_dataset();
    assert_eq!(data.entries.len(), 12);
    let mut mean: Vec<f64> = Vec::new();
    let mut dt = 0.0;
    for e in &data.entries {
        let t = data.read(e).unwrap();
        dt = t.header.dt;
        let energy: Vec<f64> = t.snapshots.iter().map(|u| u.kinetic_energy()).collect();
        if mean.is_empty() {
            mean = vec![0.0; energy.len()];
        }
        for (m, x) in mean.iter_mut().zip(energy) {
            *m += x / data.entries.len() as f64;
        }
    }
    // Ensemble mean over trajectories, last half of the record.
    let half = mean.len() / 2;
    let y = &mean[half..];
    let x: Vec<f64> = (half..mean.len()).map(|k| k as f64 * dt).collect();
    let level = y.iter().sum::<f64>() / y.len() as f64;
    let s = slope(&x, y);
    println!("mean energy {level:.4}, slope {s:.4e} per time unit");
    assert!(s.abs() < 0.05 * level, "slope {s} vs mean {level}");
}
