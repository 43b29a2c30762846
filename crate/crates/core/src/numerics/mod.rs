//! Numerical building blocks shared by the spectral, profile and PDE code.

pub mod fit;
pub mod quad;
pub mod roots;
pub mod special;
pub mod sum;

pub use fit::{linear_fit, LinearFit};
pub use quad::{gauss_legendre_unit, integrate, integrate_to_infinity};
pub use roots::{bisect, newton_bracketed};
pub use special::{exp_moment, power_integral, power_integral_from_zero};
pub use sum::NeumaierSum;
