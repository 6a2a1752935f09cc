//! Heat-source layout design by adaptive surrogate-assisted generative optimization.
//!
//! The toolkit covers the full pipeline for placing discrete heat sources on a
//! conducting plate so that the peak steady-state temperature is minimized:
//!
//! * [`grid`] — design domain, binary layouts, sampling and perturbation moves;
//! * [`fem`] — bilinear finite-element conduction solver used as the labeling
//!   and validation oracle;
//! * [`nn`] — a small dense/convolutional network engine with reverse-mode
//!   gradients and Adam, used by both the surrogate and the GAN;
//! * [`surrogate`] — the temperature-field CNN, its training loop and the
//!   candidate screening it enables;
//! * [`gan`] — the layout generator/discriminator pair with a count-controlling
//!   output layer;
//! * [`ga`] — a real-coded genetic algorithm searching the generator's latent
//!   space;
//! * [`adaptive`] — the outer learn/screen/perturb/optimize loop tying the
//!   pieces together, plus the non-adaptive ablation;
//! * [`baselines`] — simulated annealing and a greedy one-source-at-a-time
//!   constructor for comparison under matched FEM budgets;
//! * [`io`] / [`config`] — file formats (layout text, field archives, network
//!   checkpoints, reports) and run configuration.

pub mod adaptive;
pub mod baselines;
pub mod config;
pub mod error;
pub mod fem;
pub mod ga;
pub mod gan;
pub mod grid;
pub mod io;
pub mod nn;
pub mod rng;
pub mod surrogate;

pub use error::{Error, Result};
pub use fem::{CallKind, TemperatureField, ThermalSolver};
pub use grid::{BoundaryKind, IntensityField, Layout, ProblemSpec, Side};
