//! Numerical toolkit for the uniformly elliptic nonlocal Bellman operator
//! `F_s u = inf { L_A u : θI <= A <= ΘI }` and the nonlocal Monge-Ampere
//! operator (the same infimum over `det A = 1`, `λ_min >= θ`).
//!
//! The crate evaluates these operators pointwise by a three-zone quadrature,
//! solves Dirichlet problems `-F_s u = f(u)` by Howard policy iteration with
//! a damped outer fixed point, computes the first eigenpair of `-F_s` on a
//! ball, and verifies qualitative properties (maximum principles, moving
//! planes symmetry, sliding monotonicity, eigenvalue scaling, the `s -> 1`
//! Monge-Ampere limit) as numerical diagnostics.

pub mod acceptance;
pub mod config;
pub mod controls;
pub mod diagnostics;
pub mod error;
pub mod expr;
pub mod grid;
pub mod nonlin;
pub mod oracle;
pub mod problem;
pub mod quadrature;
pub mod solver;

pub use config::{c_ns, OperatorConfig};
pub use controls::{build_control_set, refine, ControlMatrix, ControlSet, ControlSetKind, ControlSetSpec};
pub use error::{FracError, Result};
pub use expr::{Atom, Expr};
pub use grid::{check_ls_membership, make_grid_function, AxisBox, ExteriorRule, GridFunction, MembershipReport};
pub use nonlin::{hypothesis_report, HypothesisReport, HypothesisVerdict, Nonlinearity, NonlinKind};
pub use problem::{Geometry, PiecewiseLinear, ProblemSpec};
pub use quadrature::{reflection_mass, EvalBreakdown, Evaluator, NearModel, Plane, QuadratureScheme};
pub use solver::{assemble, eigenpair_ball, estimate_m0, solve_dirichlet, DiscreteOperator, EigenPair, SolveReport};
