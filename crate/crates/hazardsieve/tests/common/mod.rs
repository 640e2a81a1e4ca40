//! Shared helpers for the integration suites: small random datasets with
//! known shape, independent of the library's simulation module.

use hazardsieve::data::{Dataset, Measurement, Subject};
use hazardsieve::likelihood::SieveParams;
use hazardsieve::spline::SplineBasis;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn basis3() -> SplineBasis {
    SplineBasis::new(3, &[1.0 / 3.0, 2.0 / 3.0], (0.0, 1.0), false).unwrap()
}

/// A small random dataset plus random parameters and bandwidth, sized for
/// oracle comparisons (n <= 10, p <= 2, q = 5).
#[allow(dead_code)] // not every integration target drives the oracles
pub fn random_case(rng: &mut ChaCha8Rng, s: f64) -> (Dataset, SplineBasis, SieveParams, f64) {
    let n = rng.random_range(2..=10);
    let p = rng.random_range(0..=2);
    let subjects = (0..n)
        .map(|i| {
            let x: f64 = rng.random_range(0.05..1.0);
            let n_meas = rng.random_range(0..=4);
            let mut measurements: Vec<Measurement> = (0..n_meas)
                .map(|_| Measurement {
                    time: rng.random_range(0.0..1.0),
                    z: (0..p).map(|_| rng.random_range(-1.0..1.0)).collect(),
                })
                .collect();
            measurements.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
            Subject {
                id: format!("s{i}"),
                x,
                delta: rng.random_bool(0.7),
                measurements,
            }
        })
        .collect();
    let data = Dataset::new(subjects, p, 1.0).unwrap();
    let basis = basis3();
    let scale = if s == 0.0 { 0.8 } else { 0.4 };
    let params = SieveParams {
        beta: (0..p).map(|_| rng.random_range(-scale..scale)).collect(),
        gamma: (0..basis.dim())
            .map(|_| rng.random_range(-scale..scale))
            .collect(),
    };
    let h = rng.random_range(0.05..0.4);
    (data, basis, params, h)
}
