//! Reflected BSDEs with a random horizon, solved exactly on a binary tree.

pub mod enlarged;
pub mod error;
pub mod estimates;
pub mod gen;
pub mod horizon;
pub mod random_time;
pub mod rbsde_f;
pub mod rbsde_g;
pub mod tree;

pub use enlarged::{build_enlarged_space, EnlargedSpace, State, StateProcess};
pub use error::{Error, Result};
pub use random_time::{build_random_time, kappa, DensityKernel, KernelMode, RandomTimeModel};
pub use rbsde_f::{solve_f_rbsde, solve_f_rbsde_infinite, transform_data, Barrier, DataTriplet, SolutionF, TransformedDataF};
pub use rbsde_g::{lift_solution, residual_check, solve_g, solve_g_infinite, solve_g_snell_oracle, ResidualReport, SolutionG};
pub use tree::{AdaptedProcess, PredictableProcess, TreeModel};
