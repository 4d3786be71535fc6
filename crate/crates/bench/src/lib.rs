//! Fixtures shared by the benchmarks.

use gammachaos::{ChaosVector, SymTensor};

/// Diagonal second-chaos variable with `n` equal weights.
pub fn diagonal_second_chaos(n: usize, zeta: f64) -> ChaosVector {
    ChaosVector::from_kernel(SymTensor::diagonal(&vec![zeta; n]))
}

/// Fourth-chaos variable with a deterministic dense kernel.
pub fn dense_fourth_chaos(dim: usize) -> ChaosVector {
    let mut f = SymTensor::zeros(4, dim);
    for (i, m) in gammachaos::hermite::multisets(dim, 4).into_iter().enumerate() {
        f.set(m, ((i as f64) * 0.37).sin() / (1.0 + i as f64).sqrt());
    }
    ChaosVector::from_kernel(f)
}
