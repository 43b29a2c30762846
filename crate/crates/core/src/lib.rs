pub mod error;
pub mod inversion;
pub mod kernel;
pub mod numerics;
pub mod pde;
pub mod pdmp;
pub mod profile;
pub mod spectral;
pub mod verify;

pub use error::{Error, Result};
pub use kernel::{FragmentationKernel, JumpKind, KernelForm};
pub use pde::{Grid, PdeOperator, PdeState};
pub use pdmp::{Estimate, Horizon, PathEvent, PathRecord, SimConfig};
pub use profile::{BodyRepr, ProfileBranch, ProfileConstants, ProfileDensity};
pub use spectral::{Branch, Family, LaplaceExponent, ModelParams, Recurrence, Regime, RegimeReport};
