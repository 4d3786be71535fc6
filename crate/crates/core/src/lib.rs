//! Gamma approximation of Gaussian functionals: Wiener chaos arithmetic,
//! Stein equations for the Gamma law, pointwise density bounds and Monte
//! Carlo estimators.

pub mod bounds;
pub mod chaos;
pub mod error;
pub mod gamma;
pub mod hermite;
pub mod identities;
pub mod jet;
pub mod quadrature;
pub mod simulate;
pub mod stein;

pub use bounds::{BoundKind, BoundReport, BoundRow, MixedSpec, NegativeMomentCheck};
pub use chaos::{carre_du_champ, ChaosField, ChaosVector};
pub use error::{Error, Result};
pub use gamma::{DiffusionSpec, GammaTarget};
pub use hermite::{MultiIndex, PolySpec, SymTensor};
pub use simulate::{Functional, McConfig, McEstimate, SecondChaosSpec};
pub use stein::{Branch, Envelope, SteinSolution};
