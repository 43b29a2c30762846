//! Shared fixtures for the benchmarks.

use refrag_core::{FragmentationKernel, ModelParams};

/// Binary fission with `a₋ = 2`, `a₊ = 0.5`.
pub fn canonical() -> (ModelParams, FragmentationKernel) {
    (ModelParams::new(2.0, 0.5).expect("valid drifts"), FragmentationKernel::monomial(1.0).expect("valid kernel"))
}

/// Constant density `ρ = 1` on `n` nodes, the tabulated twin of [`canonical`].
pub fn tabulated(n: usize) -> (ModelParams, FragmentationKernel) {
    let s = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
    let kernel = FragmentationKernel::tabulated(s, vec![1.0; n], 0.9).expect("valid table");
    (ModelParams::new(2.0, 0.5).expect("valid drifts"), kernel)
}
