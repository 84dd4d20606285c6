//! Independent brute-force oracle for the 3-state Λ steady state.
//!
//! The master-equation right-hand side is written out with explicit matrix
//! arithmetic (commutators and jump products, no Kronecker assembly), the
//! superoperator is formed column by column by applying it to basis
//! matrices, and the steady state is the SVD null vector. This route shares
//! no code with the production Liouvillian builder or its bordered solver.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use std::f64::consts::TAU;

#[derive(Debug, Clone, Copy)]
pub struct LambdaConfig {
    pub rabi_plus_hz: f64,
    pub rabi_minus_hz: f64,
    pub detuning_hz: f64,
    pub excited_decay_hz: f64,
    pub gamma0_hz: f64,
    pub delta_b_hz: f64,
}

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// dρ/dt for the 3-state Λ (states [g₊, e, g₋]) in rad/s.
pub fn oracle_rhs(cfg: &LambdaConfig, rho: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let i = Complex64::new(0.0, 1.0);

    let mut h = DMatrix::<Complex64>::zeros(3, 3);
    h[(0, 0)] = c(TAU * cfg.delta_b_hz / 2.0);
    h[(1, 1)] = c(-TAU * cfg.detuning_hz);
    h[(2, 2)] = c(-TAU * cfg.delta_b_hz / 2.0);
    h[(0, 1)] = c(TAU * cfg.rabi_plus_hz / 2.0);
    h[(1, 0)] = c(TAU * cfg.rabi_plus_hz / 2.0);
    h[(2, 1)] = c(TAU * cfg.rabi_minus_hz / 2.0);
    h[(1, 2)] = c(TAU * cfg.rabi_minus_hz / 2.0);

    let mut rhs = (&h * rho - rho * &h) * (-i);

    // excited decay, branching equally to both grounds
    let gamma_ang = TAU * cfg.excited_decay_hz;
    for ground in [0usize, 2] {
        let mut jump = DMatrix::<Complex64>::zeros(3, 3);
        jump[(ground, 1)] = c(1.0);
        let jdj = jump.adjoint() * &jump;
        rhs += (&jump * rho * jump.adjoint() - (&jdj * rho + rho * &jdj).scale(0.5))
            * c(gamma_ang / 2.0);
    }

    let gamma0_ang = TAU * cfg.gamma0_hz;
    if gamma0_ang > 0.0 {
        // pure dephasing between the grounds
        let mut deph = DMatrix::<Complex64>::zeros(3, 3);
        deph[(0, 0)] = c(1.0);
        deph[(2, 2)] = c(-1.0);
        let dd = deph.adjoint() * &deph;
        rhs += (&deph * rho * deph.adjoint() - (&dd * rho + rho * &dd).scale(0.5))
            * c(gamma0_ang / 2.0);

        // population equalization toward diag(1/2, 0, 1/2)
        let mut eq = DMatrix::<Complex64>::zeros(3, 3);
        eq[(0, 0)] = c(0.5);
        eq[(2, 2)] = c(0.5);
        rhs += (eq * rho.trace() - rho.clone()) * c(gamma0_ang);
    }
    rhs
}

/// 9×9 superoperator assembled by applying the RHS to each basis matrix
/// (column-stacked vec convention).
pub fn oracle_superoperator(cfg: &LambdaConfig) -> DMatrix<Complex64> {
    let mut superop = DMatrix::<Complex64>::zeros(9, 9);
    for col in 0..9 {
        let (r, ccol) = (col % 3, col / 3);
        let mut basis = DMatrix::<Complex64>::zeros(3, 3);
        basis[(r, ccol)] = c(1.0);
        let out = oracle_rhs(cfg, &basis);
        for (m, v) in out.as_slice().iter().enumerate() {
            superop[(m, col)] = *v;
        }
    }
    superop
}

/// Null-space steady state from the SVD of the hand-assembled superoperator.
pub fn oracle_steady_state(cfg: &LambdaConfig) -> DMatrix<Complex64> {
    let superop = oracle_superoperator(cfg);
    let svd = superop.svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let min_idx = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).expect("finite singular values"))
        .expect("nonempty")
        .0;
    let null: DVector<Complex64> = v_t.row(min_idx).adjoint();
    let rho = DMatrix::from_column_slice(3, 3, null.as_slice());
    let herm = (&rho + rho.adjoint()).scale(0.5);
    let tr = herm.trace();
    herm / tr
}
