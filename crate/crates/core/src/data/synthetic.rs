//! Seeded two-class point clouds used by tests, benchmarks and the bundled
//! example CSV.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seed of the bundled `blobs.csv`.
pub const BUNDLED_SEED: u64 = 20_240_501;

/// Row count of the bundled `blobs.csv` (splits into 200 train / 50 test).
pub const BUNDLED_ROWS: usize = 250;

/// Contents of the bundled dataset shipped with the crate.
pub const BUNDLED_CSV: &str = include_str!("../../data/blobs.csv");

/// Minimum distance from the separating line `x1 + x2 = 0`, measured along
/// the line's normal.
pub const MARGIN: f64 = 0.5;

/// Two Gaussian clouds around `(-1.5, -1.5)` (class `a`) and `(1.5, 1.5)`
/// (class `b`), with points closer than [`MARGIN`] to `x1 + x2 = 0` or on the
/// wrong side resampled. Classes alternate row by row. Returns CSV text with
/// header `x1,x2,label`.
pub fn separable_blobs_csv(rows: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::from("x1,x2,label\n");
    for i in 0..rows {
        let (sign, label) = if i % 2 == 0 { (-1.0, "a") } else { (1.0, "b") };
        loop {
            let x1 = sign * 1.5 + gaussian(&mut rng);
            let x2 = sign * 1.5 + gaussian(&mut rng);
            if sign * (x1 + x2) / std::f64::consts::SQRT_2 >= MARGIN {
                out.push_str(&format!("{x1:.6},{x2:.6},{label}\n"));
                break;
            }
        }
    }
    out
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
