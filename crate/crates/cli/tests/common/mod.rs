#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

pub fn fspda(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fspda")).args(args).output().unwrap()
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Wide CSV with `treated = 1.5·unit_A + N(0, noise²)` over `pre + post`
/// rows, post rows shifted by `shift`, and `n_other` unrelated N(0,1)
/// controls. Periods are labelled `p1, p2, ...`.
pub fn shifted_panel_csv(
    dir: &Path,
    seed: u64,
    pre: usize,
    post: usize,
    n_other: usize,
    noise: f64,
    shift: f64,
) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = Normal::new(0.0, noise).unwrap();
    let mut header = vec!["period".to_string(), "treated".into(), "unit_A".into()];
    header.extend((1..=n_other).map(|j| format!("unit_{j}")));
    let mut text = header.join(",") + "\n";
    for t in 0..pre + post {
        let a: f64 = StandardNormal.sample(&mut rng);
        let others: Vec<f64> = (0..n_other).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y = 1.5 * a + eps.sample(&mut rng) + if t >= pre { shift } else { 0.0 };
        let mut row = vec![format!("p{}", t + 1), y.to_string(), a.to_string()];
        row.extend(others.iter().map(f64::to_string));
        text += &(row.join(",") + "\n");
    }
    let path = dir.join(format!("panel_{seed}.csv"));
    std::fs::write(&path, text).unwrap();
    path
}
