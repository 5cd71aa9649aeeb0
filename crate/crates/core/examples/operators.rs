//! Builds the truncated space and the operator set, then checks a few
//! structural properties of the effective Hamiltonian.

use cavity_beats::{build_effective_hamiltonian, build_operators, build_space, PhysicalParams};

pub fn run_example() -> cavity_beats::Result<()> {
    let params = PhysicalParams::default();
    let space = build_space(2, 2)?;
    println!("dim = {} (atom 6 × V {} × H {})", space.dim(), space.dim_v(), space.dim_h());

    let ops = build_operators(&space, &params);
    for op in [&ops.a_v, &ops.a_h, &ops.a_pi, &ops.b_h, &ops.s_pi, &ops.p_excited] {
        println!("{:>14}: {} non-zeros", op.label, op.nnz());
    }

    let h = build_effective_hamiltonian(&space, &params, 1.0)?;
    let (herm, anti) = h.hermitian_parts();
    println!("H_eff: {} non-zeros, |Hermitian| {:.3e}, |anti-Hermitian| {:.3e}", h.nnz(), herm.max_abs(), anti.max_abs());

    // Number operator of the V mode is diagonal with entries 0..=n_max.
    let n_v = ops.a_v.adjoint().matmul(&ops.a_v);
    assert!(n_v.is_hermitian(1e-12));
    Ok(())
}

#[allow(dead_code)]
fn main() -> cavity_beats::Result<()> {
    run_example()
}
