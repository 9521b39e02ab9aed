//! Ground states, linearized dynamics and response of a one-dimensional
//! Kohn-Sham model with real orbitals.

pub mod dynamics;
pub mod error;
pub mod groundstate;
pub mod la;
pub mod lineshape;
pub mod linops;
pub mod model;
pub mod resonance;
pub mod response;

pub use dynamics::{Drive, LinearizedFlow, Pulse, Trajectory};
pub use error::{Error, Result};
pub use groundstate::{minimize, GroundState, Occupation, ScfOptions};
pub use lineshape::LorentzianFit;
pub use linops::{CasidaVector, Operators, ParticleHoleSpace, PerpSystem, RealLinearOp, VariationSplit};
pub use model::{GridSpec, ModelSystem, SoftCoulombParams, XcPolynomial};
pub use resonance::{GoldenRule, Resonance, ResonanceEstimate, SpectralMeasure, TransitionChannel};
pub use response::{FrequencyGrid, ResolventMethod, ResponseSolver, SpectrumResult};
