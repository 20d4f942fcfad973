//! Spectral-Galerkin simulation of the stochastic real Ginzburg-Landau
//! equation `dX + AX dt = (X - X^3) dt + dL_t` on the unit torus, driven by
//! cylindrical symmetric alpha-stable noise, together with the statistical
//! probes used to study its long-time behaviour: maximal inequalities for the
//! stable Ornstein-Uhlenbeck process, the Riccati comparison bound, uniform
//! moment bounds, hitting-time recurrence and occupation-measure deviations.

pub mod ergodic;
pub mod error;
pub mod field;
pub mod harness;
pub mod integrator;
pub mod observable;
pub mod ou;
pub mod parallel;
pub mod report;
pub mod riccati;
pub mod rng;
pub mod stable;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
pub use field::{FractionalExponent, Grid, SpectralField};
pub use rng::{seed_streams, SeedStream, SimRng};
pub use stable::{mode_scales, NoiseSpectrum, StableParams};
pub use integrator::{simulate_trajectory, SimConfig, Simulator, Trajectory};
pub use observable::Observable;
