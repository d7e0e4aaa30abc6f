//! Covariance spectrum and numerical rank of a batch with a planted
//! low-rank structure plus a little noise.
//!
//! cargo run --release --example rank_spectrum

use deepgrok::linalg::{
    covariance, matmul, numerical_rank, symmetric_eigenvalues, Matrix, DEFAULT_RANK_TOL,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> deepgrok::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (n, d, k) = (500, 64, 12);
    let mut draw =
        |r, c| Matrix::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let x = matmul(&draw(n, k)?, &draw(k, d)?)?;

    let spectrum = symmetric_eigenvalues(&covariance(&x)?)?;
    println!("largest eigenvalues: {:.3?}", &spectrum.values()[..4]);
    let edge: Vec<String> = spectrum.values()[k - 1..k + 3]
        .iter()
        .map(|v| format!("{v:.2e}"))
        .collect();
    println!("eigenvalues {k}..{}: {}", k + 3, edge.join(" "));
    println!(
        "numerical rank: {} (planted {k})",
        numerical_rank(&x, DEFAULT_RANK_TOL)?
    );

    // Noise of amplitude 0.1 fills every direction at the default
    // threshold; a looser tolerance hides it again.
    let mut noisy = x.clone();
    let noise = draw(n, d)?;
    for (a, b) in noisy.as_mut_slice().iter_mut().zip(noise.as_slice()) {
        *a += 0.1 * b;
    }
    for tol in [DEFAULT_RANK_TOL, 1e-5, 1e-3] {
        println!(
            "noisy batch, rel_tol {tol:.1e}: rank {}",
            numerical_rank(&noisy, tol)?
        );
    }
    Ok(())
}
