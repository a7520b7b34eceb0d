//! Monotone port-Hamiltonian formulations of control-constrained optimal
//! control: the discretized constraint operator, primal-dual gradient flows,
//! their interconnection with a plant, and the tooling to integrate and
//! certify them.

pub mod banded;
pub mod discrete_ops;
pub mod error;
pub mod flows;
pub mod fmt;
pub mod integrator;
pub mod linear_op;
pub mod monotone;
pub mod ocp;
pub mod timegrid;

pub use discrete_ops::{build_c, build_c_star, build_skew_coupling, ConstraintOps, SystemMatrices};
pub use error::{Error, Result};
pub use flows::{FlowMap, FlowState, PlantSpec, StateLayout, Variant};
pub use integrator::{integrate, IntegratorConfig, Method, RunOptions, Trajectory};
pub use linear_op::{weighted_dot, weighted_norm, LinearOp};
pub use monotone::{project_box, moreau_complement, resolvent_step, AffineMap, BoxSet, MonotoneMap, ProxCoupling};
pub use ocp::{solve_kkt, CostSpec, KktPoint, OcpSpec, OracleOptions, StateCost};
pub use timegrid::{GridFunction, Layout, StackPart, TimeGrid};
