//! Writes the bundled two-class dataset to stdout.
use sweep_core::data::synthetic::{separable_blobs_csv, BUNDLED_ROWS, BUNDLED_SEED};

fn main() {
    print!("{}", separable_blobs_csv(BUNDLED_ROWS, BUNDLED_SEED));
}
