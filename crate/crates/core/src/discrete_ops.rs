//! The implicit-Euler constraint operator `C(x, u) = (ẋ − Ax − Bu, x(0))`,
//! its Hilbert adjoint, and the skew interconnection blocks.
//!
//! Coordinates: the input of `C` is `x` on nodes (`(N+1)·n` entries)
//! followed by `u` on intervals (`N·m`); the output is the residual `r` on
//! intervals (`N·n`) followed by `r0 ∈ ℝⁿ`. The adjoint is taken as the
//! weighted transpose, so the terminal condition `λ(t_f) = 0` shows up as
//! the missing `λ_{N+1}` term in the last row of the stencil.

use nalgebra::DMatrix;

use crate::error::{shape_err, Error, Result};
use crate::linear_op::LinearOp;
use crate::timegrid::TimeGrid;

#[derive(Clone, Debug, PartialEq)]
pub struct SystemMatrices {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl SystemMatrices {
    /// Rejects non-square `A`, mismatched `B`, and `B` without full column
    /// rank (SVD, tolerance `1e-10 · ‖B‖`).
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return shape_err(format!("A must be square, got {}x{}", a.nrows(), a.ncols()));
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return shape_err(format!("B is {}x{}, A is {}x{}", b.nrows(), b.ncols(), a.nrows(), a.ncols()));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("system matrices must be finite".into()));
        }
        let sv = b.clone().svd(false, false).singular_values;
        let top = sv.max();
        let rank = sv.iter().filter(|s| **s > 1e-10 * top).count();
        if top == 0.0 || rank < b.ncols() {
            return Err(Error::Invalid(format!("B must be injective (rank {rank} < {})", b.ncols())));
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }
}

/// `C` together with its adjoint and the split points of its coordinates.
#[derive(Clone, Debug)]
pub struct ConstraintOps {
    pub c: LinearOp,
    pub c_star: LinearOp,
    /// Length of the `x` block of the input (= `(N+1)·n`).
    pub nx: usize,
    /// Length of the `u` block of the input (= `N·m`).
    pub nu: usize,
    /// Length of the residual block `r` of the output (= `N·n`).
    pub nr: usize,
}

impl ConstraintOps {
    pub fn new(sys: &SystemMatrices, grid: &TimeGrid) -> Result<Self> {
        let c = build_c(sys, grid)?;
        let c_star = build_c_star(&c);
        let n = sys.state_dim();
        let m = sys.control_dim();
        let big_n = grid.intervals();
        Ok(Self { c, c_star, nx: (big_n + 1) * n, nu: big_n * m, nr: big_n * n })
    }

    /// `C` restricted to the state columns.
    pub fn c_x(&self) -> LinearOp {
        self.c.column_block(0, self.nx).expect("in range")
    }

    /// `C` restricted to the control columns (`−B` per interval).
    pub fn c_u(&self) -> LinearOp {
        self.c.column_block(self.nx, self.nu).expect("in range")
    }

    /// State rows of `C*`: `(−d/dτ − Aᵀ)λ` with the `λ0` coupling at node 0.
    pub fn c_star_x(&self) -> LinearOp {
        self.c_star.row_block(0, self.nx).expect("in range")
    }

    /// Control rows of `C*` (`−Bᵀλ`).
    pub fn c_star_u(&self) -> LinearOp {
        self.c_star.row_block(self.nx, self.nu).expect("in range")
    }
}

pub fn build_c(sys: &SystemMatrices, grid: &TimeGrid) -> Result<LinearOp> {
    let n = sys.state_dim();
    let m = sys.control_dim();
    let big_n = grid.intervals();
    let dt = grid.dt();
    let nx = (big_n + 1) * n;
    let nu = big_n * m;
    let nr = big_n * n;
    let mut t = Vec::with_capacity(big_n * n * (2 * n + m) + n);
    for k in 1..=big_n {
        let row = (k - 1) * n;
        for i in 0..n {
            // (x_k − x_{k−1})/dt − A x_k
            for j in 0..n {
                let mut v = -sys.a[(i, j)];
                if i == j {
                    v += 1.0 / dt;
                }
                if v != 0.0 {
                    t.push((row + i, k * n + j, v));
                }
            }
            t.push((row + i, (k - 1) * n + i, -1.0 / dt));
            for j in 0..m {
                let v = -sys.b[(i, j)];
                if v != 0.0 {
                    t.push((row + i, nx + (k - 1) * m + j, v));
                }
            }
        }
    }
    for i in 0..n {
        t.push((nr + i, i, 1.0));
    }
    let in_w = vec![dt; nx + nu];
    let mut out_w = vec![dt; nr];
    out_w.extend(std::iter::repeat(1.0).take(n));
    LinearOp::from_triplets(nr + n, nx + nu, &t, in_w, out_w)
}

/// Weighted transpose `W_in⁻¹ Cᵀ W_out`.
pub fn build_c_star(c: &LinearOp) -> LinearOp {
    c.adjoint()
}

/// `K = [[0, −B₁ E B₂*], [B₂ E* B₁*, 0]]` on `X₁ × X₂`, where `b1: U₁ → X₁`,
/// `b2: U₂ → X₂` and `e: U₂ → U₁`.
pub fn build_skew_coupling(b1: &LinearOp, b2: &LinearOp, e: &LinearOp) -> Result<LinearOp> {
    if e.rows() != b1.cols() || e.cols() != b2.cols() {
        return shape_err(format!(
            "E is {}x{}, expected {}x{} (inputs of system 1 by inputs of system 2)",
            e.rows(),
            e.cols(),
            b1.cols(),
            b2.cols()
        ));
    }
    if e.out_weights() != b1.in_weights() || e.in_weights() != b2.in_weights() {
        return shape_err("E must act between the input spaces of the two systems");
    }
    let upper = b1.compose(&e.compose(&b2.adjoint())?)?;
    let lower = b2.compose(&e.adjoint().compose(&b1.adjoint())?)?;
    LinearOp::assemble(
        &[b1.out_weights(), b2.out_weights()],
        &[b1.out_weights(), b2.out_weights()],
        &[(0, 1, &upper, -1.0), (1, 0, &lower, 1.0)],
    )
}
