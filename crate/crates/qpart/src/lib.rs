//! Global minimization of nonconvex QCQPs via piecewise McCormick
//! relaxations, with three partition-point policies: an adaptive refinement
//! heuristic, strong partitioning (max-min over the relaxation value
//! function), and an AdaBoost.R2 imitation of strong partitioning.

pub mod driver;
pub mod instances;
pub mod linsolve;
pub mod milp;
pub mod ml;
pub mod model;
pub mod nsmax;
pub mod policies;
pub mod relax;
pub mod sensitivity;
pub mod rng;
