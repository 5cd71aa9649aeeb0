//! Operators and effective Hamiltonians of the reduced six-level atom coupled
//! to the V (driven, π) and H (undriven, σ) cavity modes.
//!
//! Conventions:
//! * `A_pi = Σ_m |g_m⟩⟨e_m|`
//! * `A_sigma_plus` lowers `e_m -> g_(m-1)`, `A_sigma_minus` lowers `e_m -> g_(m+1)`
//! * the H mode couples to `B = (A_sigma_plus - A_sigma_minus)/√2`; the
//!   opposite relative sign only flips the sign of the `(g-, g+)` superposition
//!   prepared by an H detection.
//! * rotating frame of the drive; the cavity is resonant with the drive.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::operator::{annihilation, OperatorMatrix};
use crate::params::PhysicalParams;
use crate::space::{HilbertSpace, Level, ATOM_DIM};

const I: Complex64 = Complex64::new(0.0, 1.0);

fn re(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// All single-atom and mode operators lifted to the full space.
#[derive(Debug, Clone)]
pub struct OperatorSet {
    pub a_v: OperatorMatrix,
    pub a_h: OperatorMatrix,
    pub a_pi: OperatorMatrix,
    pub a_sigma_plus: OperatorMatrix,
    pub a_sigma_minus: OperatorMatrix,
    /// H-mode atomic operator `(A_sigma_plus - A_sigma_minus)/√2`.
    pub b_h: OperatorMatrix,
    pub s_pi: OperatorMatrix,
    pub s_sigma_plus: OperatorMatrix,
    pub s_sigma_minus: OperatorMatrix,
    /// Projector onto the excited manifold.
    pub p_excited: OperatorMatrix,
}

fn atom_op(triplets: impl IntoIterator<Item = (Level, Level, f64)>, label: &str) -> OperatorMatrix {
    OperatorMatrix::from_triplets(
        ATOM_DIM,
        triplets.into_iter().map(|(to, from, w)| (to.index(), from.index(), re(w))),
        label,
    )
}

fn lift_atom(space: &HilbertSpace, op: &OperatorMatrix) -> OperatorMatrix {
    let iv = OperatorMatrix::identity(space.dim_v());
    let ih = OperatorMatrix::identity(space.dim_h());
    op.kron(&iv).kron(&ih).with_label(op.label.clone())
}

/// Builds mode, atomic and side-emission operators.
pub fn build_operators(space: &HilbertSpace, params: &PhysicalParams) -> OperatorSet {
    let w = &params.weights;
    let a_pi_atom = atom_op(
        (-1..=1).map(|m| {
            (Level::ground(m).unwrap(), Level::excited(m).unwrap(), w.pi[(m + 1) as usize])
        }),
        "A_pi",
    );
    let a_sp_atom = atom_op(
        [
            (Level::GMinus, Level::E0, w.sigma_plus[0]),
            (Level::G0, Level::EPlus, w.sigma_plus[1]),
        ],
        "A_sigma+",
    );
    let a_sm_atom = atom_op(
        [
            (Level::G0, Level::EMinus, w.sigma_minus[0]),
            (Level::GPlus, Level::E0, w.sigma_minus[1]),
        ],
        "A_sigma-",
    );
    let excited = OperatorMatrix::diagonal(
        &Level::ALL.map(|l| if l.is_excited() { 1.0 } else { 0.0 }),
        "P_e",
    );

    let a_pi = lift_atom(space, &a_pi_atom);
    let a_sigma_plus = lift_atom(space, &a_sp_atom);
    let a_sigma_minus = lift_atom(space, &a_sm_atom);
    let b_h = (&a_sigma_plus - &a_sigma_minus)
        .scale_re(std::f64::consts::FRAC_1_SQRT_2)
        .with_label("B_H");

    let i6 = OperatorMatrix::identity(ATOM_DIM);
    let a_v = i6
        .kron(&annihilation(space.n_max_v()))
        .kron(&OperatorMatrix::identity(space.dim_h()))
        .with_label("a_V");
    let a_h = i6
        .kron(&OperatorMatrix::identity(space.dim_v()))
        .kron(&annihilation(space.n_max_h()))
        .with_label("a_H");

    let gamma = params.gamma;
    OperatorSet {
        s_pi: a_pi.scale_re((gamma * params.pi_branch).sqrt()).with_label("S_pi"),
        s_sigma_plus: a_sigma_plus
            .scale_re((gamma * params.sigma_branch / 2.0).sqrt())
            .with_label("S_sigma+"),
        s_sigma_minus: a_sigma_minus
            .scale_re((gamma * params.sigma_branch / 2.0).sqrt())
            .with_label("S_sigma-"),
        p_excited: lift_atom(space, &excited),
        a_v,
        a_h,
        a_pi,
        a_sigma_plus,
        a_sigma_minus,
        b_h,
    }
}

impl OperatorSet {
    pub fn side_channels(&self) -> [&OperatorMatrix; 3] {
        [&self.s_pi, &self.s_sigma_plus, &self.s_sigma_minus]
    }
}

fn zeeman(space: &HilbertSpace, params: &PhysicalParams) -> OperatorMatrix {
    let diag: Vec<f64> = space
        .states()
        .map(|s| {
            let m = s.level.m() as f64;
            if s.level.is_excited() {
                m * params.delta_e - params.drive_detuning
            } else {
                m * params.delta_g
            }
        })
        .collect();
    OperatorMatrix::diagonal(&diag, "H_Z")
}

/// Beam-splitter transmission `t = √(1 - |ε|²)` of the LO mixing.
pub fn lo_transmission(params: &PhysicalParams) -> f64 {
    (1.0 - params.lo_mix.norm_sqr()).max(0.0).sqrt()
}

/// Lab-frame effective Hamiltonian with an explicit V-mode drive term,
///
/// ```text
/// H_eff = H_Z + g(a_V A_pi† + h.c.) + g(a_H B† + h.c.)
///       + i s κ (α a_V† - α* a_V) - (i/2) Σ_c c†c
/// ```
///
/// where `s = drive_scale` and the collapse channels are the three side
/// emissions plus the two cavity outputs.
pub fn build_effective_hamiltonian(
    space: &HilbertSpace,
    params: &PhysicalParams,
    drive_scale: f64,
) -> Result<OperatorMatrix> {
    if !(0.0..=1.0).contains(&drive_scale) {
        return Err(crate::Error::Domain(format!(
            "drive_scale must lie in [0, 1], got {drive_scale}"
        )));
    }
    let model = FrameModel::build(space, params, Frame::Lab);
    Ok(model.hamiltonian(drive_scale, 1.0).with_label("H_eff"))
}

/// Steady-state V-mode amplitude used by the closed-form results: the
/// empty-cavity response to the drive, equal to `drive_amplitude`.
pub fn steady_alpha(params: &PhysicalParams) -> Complex64 {
    params.drive_amplitude
}

/// Representation of the V mode used for propagation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    /// Fock basis of `a_V` with an explicit drive term.
    Lab,
    /// Fock basis of the fluctuation `b = a_V - α(t)`, where `α(t)` is the
    /// empty-cavity coherent amplitude. Truncation then applies only to
    /// atom-scattered light.
    #[default]
    Displaced,
}

/// Which output a collapse channel represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelKind {
    SidePi,
    SideSigmaPlus,
    SideSigmaMinus,
    VOut,
    HOut,
}

/// Collapse operator `C = op + field · offset`, where `field` is the drive
/// level `u` (the empty-cavity amplitude in units of `drive_amplitude`).
#[derive(Debug, Clone)]
pub struct CollapseChannel {
    pub kind: ChannelKind,
    pub op: OperatorMatrix,
    pub offset: Complex64,
}

impl CollapseChannel {
    pub fn apply_into(&self, field: f64, x: &[Complex64], out: &mut [Complex64]) {
        self.op.apply_into(x, out);
        if self.offset != Complex64::new(0.0, 0.0) {
            let c = self.offset * field;
            for (o, xi) in out.iter_mut().zip(x) {
                *o += c * xi;
            }
        }
    }

    /// Full operator at drive level `field`.
    pub fn operator(&self, field: f64) -> OperatorMatrix {
        let id = OperatorMatrix::identity(self.op.dim()).scale(self.offset * field);
        (&self.op + &id).with_label(self.op.label.clone())
    }
}

/// Effective Hamiltonian split by how each term scales with the drive level
/// `u` and the atom coupling scale `c`:
///
/// ```text
/// H(u, c) = static + c·coupling + u·c·atom_drive + u·field_linear + u²·field_const·1
/// ```
#[derive(Debug, Clone)]
pub struct FrameModel {
    pub frame: Frame,
    pub space: HilbertSpace,
    pub ops: OperatorSet,
    pub static_part: OperatorMatrix,
    pub coupling: OperatorMatrix,
    pub atom_drive: OperatorMatrix,
    pub field_linear: OperatorMatrix,
    pub field_const: Complex64,
    pub channels: Vec<CollapseChannel>,
}

impl FrameModel {
    pub fn build(space: &HilbertSpace, params: &PhysicalParams, frame: Frame) -> Self {
        let ops = build_operators(space, params);
        let dim = space.dim();
        let g = params.g;
        let kappa = params.kappa;
        let alpha = params.drive_amplitude;
        let eps = params.lo_mix;
        let t = lo_transmission(params);
        let root = (2.0 * kappa).sqrt();

        let coupling_v = &(&ops.a_v * &ops.a_pi.adjoint()) + &(&ops.a_pi * &ops.a_v.adjoint());
        let coupling_h = &(&ops.a_h * &ops.b_h.adjoint()) + &(&ops.b_h * &ops.a_h.adjoint());
        let coupling = (&coupling_v + &coupling_h).scale_re(g).with_label("H_g");

        // Output channels before the c-number offset.
        let l_v = (&ops.a_v.scale_re(t) - &ops.a_h.scale(eps.conj())).scale_re(root);
        let l_h = (&ops.a_h.scale_re(t) + &ops.a_v.scale(eps)).scale_re(root);
        let (off_v, off_h) = match frame {
            Frame::Lab => (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)),
            Frame::Displaced => (alpha * root * t, alpha * eps * root),
        };

        let mut channels = vec![
            CollapseChannel {
                kind: ChannelKind::SidePi,
                op: ops.s_pi.clone(),
                offset: Complex64::new(0.0, 0.0),
            },
            CollapseChannel {
                kind: ChannelKind::SideSigmaPlus,
                op: ops.s_sigma_plus.clone(),
                offset: Complex64::new(0.0, 0.0),
            },
            CollapseChannel {
                kind: ChannelKind::SideSigmaMinus,
                op: ops.s_sigma_minus.clone(),
                offset: Complex64::new(0.0, 0.0),
            },
            CollapseChannel {
                kind: ChannelKind::VOut,
                op: l_v.with_label("C_V"),
                offset: off_v,
            },
            CollapseChannel {
                kind: ChannelKind::HOut,
                op: l_h.with_label("C_H"),
                offset: off_h,
            },
        ];
        channels.retain(|c| c.op.nnz() > 0 || c.offset != Complex64::new(0.0, 0.0));

        let mut damping = OperatorMatrix::zeros(dim);
        for c in &channels {
            damping = &damping + &(&c.op.adjoint() * &c.op);
        }
        let static_part = (&zeeman(space, params) + &damping.scale(-0.5 * I)).with_label("H_0");

        let (atom_drive, field_linear, field_const) = match frame {
            Frame::Lab => {
                let drive = (&ops.a_v.adjoint().scale(alpha) - &ops.a_v.scale(alpha.conj()))
                    .scale(I * kappa);
                (OperatorMatrix::zeros(dim), drive, Complex64::new(0.0, 0.0))
            }
            Frame::Displaced => {
                let atom_drive =
                    (&ops.a_pi.adjoint().scale(alpha) + &ops.a_pi.scale(alpha.conj())).scale_re(g);
                // -i Σ_k c_k* L_k with c_k = offset_k (per unit drive level).
                let mut lin = OperatorMatrix::zeros(dim);
                for c in &channels {
                    if c.offset != Complex64::new(0.0, 0.0) {
                        lin = &lin + &c.op.scale(c.offset.conj());
                    }
                }
                let konst: f64 = channels.iter().map(|c| c.offset.norm_sqr()).sum();
                (atom_drive, lin.scale(-I), -0.5 * I * konst)
            }
        };

        Self {
            frame,
            space: *space,
            ops,
            static_part,
            coupling,
            atom_drive: atom_drive.with_label("H_drive_atom"),
            field_linear: field_linear.with_label("H_field"),
            field_const,
            channels,
        }
    }

    /// `H(u, c)` for drive level `u` and coupling scale `c`.
    pub fn hamiltonian(&self, field: f64, coupling: f64) -> OperatorMatrix {
        let dim = self.space.dim();
        let mut h = &self.static_part + &self.coupling.scale_re(coupling);
        h = &h + &self.atom_drive.scale_re(field * coupling);
        h = &h + &self.field_linear.scale_re(field);
        if self.field_const != Complex64::new(0.0, 0.0) {
            h = &h + &OperatorMatrix::identity(dim).scale(self.field_const * field * field);
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space() -> HilbertSpace {
        HilbertSpace::new(2, 2).unwrap()
    }

    #[test]
    fn side_pi_matrix_element() {
        let p = PhysicalParams {
            pi_branch: 0.6,
            sigma_branch: 0.4,
            ..Default::default()
        };
        let s = space();
        let ops = build_operators(&s, &p);
        let g0 = s.index_of(Level::G0, 0, 0);
        let e0 = s.index_of(Level::E0, 0, 0);
        let v = ops.s_pi.get(g0, e0);
        assert!((v.re - (p.gamma * 0.6).sqrt()).abs() < 1e-9 * v.re);
        assert_eq!(v.im, 0.0);
    }

    #[test]
    fn side_channels_sum_to_gamma_on_e0() {
        let p = PhysicalParams {
            pi_branch: 0.3,
            sigma_branch: 0.7,
            ..Default::default()
        };
        let s = space();
        let ops = build_operators(&s, &p);
        let e0 = s.index_of(Level::E0, 0, 0);
        let total: f64 = ops
            .side_channels()
            .iter()
            .map(|c| (&c.adjoint() * *c).get(e0, e0).re)
            .sum();
        assert!((total - p.gamma).abs() < 1e-9 * p.gamma);
    }

    #[test]
    fn a_v_annihilates_vacuum() {
        let s = space();
        let ops = build_operators(&s, &PhysicalParams::default());
        let mut x = vec![Complex64::new(0.0, 0.0); s.dim()];
        for st in s.states().filter(|st| st.n_v == 0) {
            x[s.index(st)] = Complex64::new(1.0 + st.n_h as f64, -0.5);
        }
        assert!(ops.a_v.apply(&x).iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn undriven_ground_vacuum_block_is_zero() {
        let p = PhysicalParams {
            delta_g: 0.0,
            delta_e: 0.0,
            ..Default::default()
        };
        let s = space();
        let h = build_effective_hamiltonian(&s, &p, 0.0).unwrap();
        let ground: Vec<usize> = [Level::GMinus, Level::G0, Level::GPlus]
            .iter()
            .map(|&l| s.index_of(l, 0, 0))
            .collect();
        for &i in &ground {
            for &j in &ground {
                assert_eq!(h.get(i, j), Complex64::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn zeeman_ladder_on_diagonal() {
        let p = PhysicalParams::default();
        let s = space();
        let h = build_effective_hamiltonian(&s, &p, 1.0).unwrap();
        let (herm, _) = h.hermitian_parts();
        let gp = s.index_of(Level::GPlus, 0, 0);
        assert!((herm.get(gp, gp).re - p.delta_g).abs() < 1e-6);
        let em = s.index_of(Level::EMinus, 0, 0);
        assert!((herm.get(em, em).re + p.delta_e).abs() < 1e-6);
    }

    #[test]
    fn hermitian_part_is_hermitian() {
        let p = PhysicalParams {
            lo_mix: Complex64::new(0.1, 0.05),
            ..Default::default()
        };
        for frame in [Frame::Lab, Frame::Displaced] {
            let m = FrameModel::build(&space(), &p, frame);
            let (herm, _) = m.hamiltonian(0.7, 0.8).hermitian_parts();
            assert!(herm.is_hermitian(1e-12));
        }
    }

    fn check_dissipator_identity(frame: Frame, field: f64, coupling: f64) {
        let p = PhysicalParams {
            lo_mix: Complex64::new(0.2, -0.1),
            pi_branch: 0.5,
            sigma_branch: 0.5,
            drive_amplitude: Complex64::new(0.6, 0.3),
            ..Default::default()
        };
        let m = FrameModel::build(&space(), &p, frame);
        let h = m.hamiltonian(field, coupling);
        let lhs = &h - &h.adjoint();
        let mut sum = OperatorMatrix::zeros(h.dim());
        for c in &m.channels {
            let op = c.operator(field);
            sum = &sum + &(&op.adjoint() * &op);
        }
        let rhs = sum.scale(-I);
        let diff = (&lhs - &rhs).max_abs();
        assert!(diff <= 1e-10 * rhs.max_abs(), "{frame:?}: {diff}");
    }

    #[test]
    fn non_hermitian_part_matches_collapse_channels() {
        for frame in [Frame::Lab, Frame::Displaced] {
            for (u, c) in [(1.0, 1.0), (0.3, 0.5), (0.0, 1.0)] {
                check_dissipator_identity(frame, u, c);
            }
        }
    }

    #[test]
    fn construction_is_deterministic() {
        let p = PhysicalParams::default();
        let a = FrameModel::build(&space(), &p, Frame::Displaced).hamiltonian(1.0, 1.0);
        let b = FrameModel::build(&space(), &p, Frame::Displaced).hamiltonian(1.0, 1.0);
        assert_eq!(a, b);
    }

    /// Weak drive, atom held in g0 (π coupling only): the driven cavity and
    /// dipole amplitudes solve a 2x2 linear system whose cavity solution
    /// reduces to `α` when the atom coupling vanishes and to
    /// `α(1 - g²/(κ γ/2)) + O(g⁴)` to first order in the cooperativity.
    #[test]
    fn weak_drive_cavity_amplitude() {
        let p = PhysicalParams {
            drive_amplitude: Complex64::new(1e-3, 0.0),
            delta_g: 0.0,
            delta_e: 0.0,
            ..Default::default()
        };
        let s = HilbertSpace::new(1, 1).unwrap();
        let h = build_effective_hamiltonian(&s, &p, 1.0).unwrap().to_dense();
        // One-excitation amplitudes with the atom frozen in g0 and H vacuum:
        // restrict H_eff to {|g0,0,0⟩, |g0,1,0⟩, |e0,0,0⟩} and solve the
        // steady state with the ground amplitude pinned to 1.
        let g00 = s.index_of(Level::G0, 0, 0);
        let g10 = s.index_of(Level::G0, 1, 0);
        let e00 = s.index_of(Level::E0, 0, 0);
        let m = nalgebra::Matrix2::new(h[(g10, g10)], h[(g10, e00)], h[(e00, g10)], h[(e00, e00)]);
        let rhs = nalgebra::Vector2::new(-h[(g10, g00)], -h[(e00, g00)]);
        let sol = m.lu().solve(&rhs).unwrap();
        let a = sol[0];
        let alpha = p.drive_amplitude.re;
        let (g, k, gh) = (p.g, p.kappa, p.gamma / 2.0);
        // Exact hand solution of the 2x2 system (σ damped by γ/2 only).
        let expected = alpha * gh / (gh + g * g / k);
        assert!((a.re - expected).abs() < 1e-12 * alpha, "{a} vs {expected}");
        assert!(a.im.abs() < 1e-12 * alpha);
        // Without the atom the cavity amplitude equals the drive amplitude.
        let a_empty = -h[(g10, g00)] / h[(g10, g10)];
        assert!((a_empty.re - alpha).abs() < 1e-12 && a_empty.im.abs() < 1e-12);
    }
}
