//! Assembly of the free energy and its scaling identities.
//!
//! All functionals share a single evaluation path parameterized by the
//! confinement weights `alpha` and the drift centers: the drift-free
//! functional is the same evaluation with every center at the origin, and
//! the classical free energy is the case `alpha_i = 1/2`.
//!
//! The interaction term reuses the potential module:
//! `(1/4pi) sum a_ij I_ij` with `I_ij = -2 pi int rho_i u_j`, symmetrized by
//! averaging `I_ij` and `I_ji`.

use std::f64::consts::PI;

use thiserror::Error;

use crate::criticality::{lambda_subset, InteractionSpec};
use crate::field::{DensityField, FieldError};
use crate::potential::{interaction_energy, PotentialField, PotentialSolver};
use crate::vec2::Vec2;

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error(
        "field mass {got} for species {species} does not match spec mass {want} \
         (relative defect {defect:e} above 1e-8)"
    )]
    MassMismatch {
        species: usize,
        got: f64,
        want: f64,
        defect: f64,
    },
    #[error("confinement weight alpha[{index}] = {value} must be positive")]
    BadAlpha { index: usize, value: f64 },
    #[error("species counts differ: spec {spec}, field {field}")]
    SpeciesMismatch { spec: usize, field: usize },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Potential(#[from] crate::potential::PotentialError),
}

/// Entropy, interaction, and confinement contributions with their total.
#[derive(Debug, Clone)]
pub struct EnergyBreakdown {
    pub entropy_terms: Vec<f64>,
    pub interaction_term: f64,
    pub confinement_terms: Vec<f64>,
    pub total: f64,
    pub alpha: Vec<f64>,
}

/// Default confinement weights `alpha_i = 1/2`.
pub fn default_alpha(n: usize) -> Vec<f64> {
    vec![0.5; n]
}

fn validate(
    spec: &InteractionSpec,
    field: &DensityField,
    alpha: &[f64],
) -> Result<(), EnergyError> {
    if spec.n() != field.species() || alpha.len() != spec.n() {
        return Err(EnergyError::SpeciesMismatch {
            spec: spec.n(),
            field: field.species(),
        });
    }
    for (i, &a) in alpha.iter().enumerate() {
        if !(a > 0.0) || !a.is_finite() {
            return Err(EnergyError::BadAlpha { index: i, value: a });
        }
    }
    for i in 0..spec.n() {
        let got = field.mass(i);
        let want = spec.beta()[i];
        let defect = ((got - want) / want).abs();
        if defect > 1e-8 {
            return Err(EnergyError::MassMismatch {
                species: i,
                got,
                want,
                defect,
            });
        }
    }
    Ok(())
}

/// Free energy with drift centers taken from `spec` and confinement weights
/// `alpha` (use [`default_alpha`] for the classical functional).
pub fn free_energy(
    spec: &InteractionSpec,
    field: &DensityField,
    alpha: &[f64],
) -> Result<EnergyBreakdown, EnergyError> {
    let pot = PotentialSolver::new(field.grid()).potential(field);
    free_energy_with_potential(spec, field, &pot, alpha, spec.drifts())
}

/// Classical free energy: `alpha = 1/2` everywhere, centers from the spec.
pub fn free_energy_default(
    spec: &InteractionSpec,
    field: &DensityField,
) -> Result<EnergyBreakdown, EnergyError> {
    free_energy(spec, field, &default_alpha(spec.n()))
}

/// Drift-free functional: every center at the origin.
pub fn free_energy_centered(
    spec: &InteractionSpec,
    field: &DensityField,
    alpha: &[f64],
) -> Result<EnergyBreakdown, EnergyError> {
    let pot = PotentialSolver::new(field.grid()).potential(field);
    free_energy_with_potential(spec, field, &pot, alpha, &vec![Vec2::ZERO; spec.n()])
}

/// Shared evaluation path; callers that already computed the potentials of
/// `field` (descent loops, time steppers) pass them in to avoid a second
/// transform.
pub fn free_energy_with_potential(
    spec: &InteractionSpec,
    field: &DensityField,
    pot: &PotentialField,
    alpha: &[f64],
    centers: &[Vec2],
) -> Result<EnergyBreakdown, EnergyError> {
    validate(spec, field, alpha)?;
    let n = spec.n();

    let entropy_terms: Vec<f64> = (0..n).map(|i| field.entropy(i)).collect();

    let raw = interaction_energy(field, pot)?;
    let mut interaction_term = 0.0;
    for i in 0..n {
        for j in 0..n {
            let sym = 0.5 * (raw[(i, j)] + raw[(j, i)]);
            interaction_term += spec.coupling(i, j) * sym;
        }
    }
    interaction_term /= 4.0 * PI;

    let confinement_terms: Vec<f64> = (0..n)
        .map(|i| alpha[i] * field.second_moment(i, centers[i]))
        .collect();

    let total = entropy_terms.iter().sum::<f64>()
        + interaction_term
        + confinement_terms.iter().sum::<f64>();

    Ok(EnergyBreakdown {
        entropy_terms,
        interaction_term,
        confinement_terms,
        total,
        alpha: alpha.to_vec(),
    })
}

/// Both sides of the dilation identity for the drift-free functional:
///
/// ```text
/// F_0(rho_R) = F_0(rho) + (Lambda_I / 4pi) ln R
///            + (1/R^2 - 1) sum_i (1/2) int |x|^2 rho_i
/// ```
///
/// where `rho_R(x) = R^2 rho(R x)`. Returns `(lhs, rhs)` for comparison; the
/// identity is exact in the continuum, so their gap measures discretization
/// error only.
pub fn dilation_identity_check(
    spec: &InteractionSpec,
    field: &DensityField,
    r: f64,
) -> Result<(f64, f64), EnergyError> {
    let alpha = default_alpha(spec.n());
    let dilated = field.dilate(r)?;
    let lhs = free_energy_centered(spec, &dilated, &alpha)?.total;

    let f0 = free_energy_centered(spec, field, &alpha)?.total;
    let full_mask = (1u32 << spec.n()) - 1;
    let lambda_full = lambda_subset(spec, full_mask).expect("nonempty full subset");
    let moment_half_sum: f64 = (0..spec.n())
        .map(|i| 0.5 * field.second_moment(i, Vec2::ZERO))
        .sum();
    let rhs = f0 + lambda_full / (4.0 * PI) * r.ln() + (1.0 / (r * r) - 1.0) * moment_half_sum;
    Ok((lhs, rhs))
}

/// Slack in the drift-vs-centered infimum inequality
///
/// ```text
/// inf F_v <= inf F_0 + min_x0 sum_i (beta_i / 2) |x0 - v_i|^2
/// ```
///
/// computed from the best found values of each side. A certified negative
/// gap (beyond the combined discretization budget) indicates a bug, not
/// physics: the inequality is one-sided.
pub fn inequality_gap(spec: &InteractionSpec, candidate_v_min: f64, f0_min: f64) -> f64 {
    let (drift_min, _) = crate::criticality::weighted_drift_min(spec);
    (f0_min + drift_min) - candidate_v_min
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid2D;

    const TWO_PI: f64 = 2.0 * PI;

    #[test]
    fn decoupled_gaussians_hit_closed_form() {
        // With A = 0 and unit-variance Gaussians at the drift centers the
        // entropy and confinement cancel to sum beta ln(beta / 2pi).
        let grid = Grid2D::new(8.0, 256).unwrap();
        let centers = [Vec2::new(1.0, 0.0), Vec2::new(-2.0, 1.0)];
        let beta = vec![TWO_PI, 2.0];
        let spec = InteractionSpec::new(
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            beta.clone(),
            centers.to_vec(),
        )
        .unwrap();
        let field = DensityField::gaussian_tuple(grid, beta.clone(), &centers, 1.0).unwrap();
        let e = free_energy_default(&spec, &field).unwrap();
        let expect: f64 = beta.iter().map(|b| b * (b / TWO_PI).ln()).sum();
        assert!(
            (e.total - expect).abs() < 1e-3,
            "total {} vs {}",
            e.total,
            expect
        );
        assert!(e.interaction_term.abs() < 1e-12);
    }

    #[test]
    fn breakdown_total_is_the_sum_of_parts() {
        let grid = Grid2D::new(8.0, 128).unwrap();
        let spec = InteractionSpec::single(1.0, 4.0, Vec2::new(0.5, 0.0)).unwrap();
        let field =
            DensityField::gaussian_tuple(grid, vec![4.0], &[Vec2::new(0.5, 0.0)], 1.0).unwrap();
        let e = free_energy_default(&spec, &field).unwrap();
        let sum = e.entropy_terms.iter().sum::<f64>()
            + e.interaction_term
            + e.confinement_terms.iter().sum::<f64>();
        assert_eq!(e.total, sum);
    }

    #[test]
    fn unit_disk_energy_from_oracles() {
        // Unit disk carrying unit mass at v = 0, a = 1:
        //   entropy        = ln(1/pi)
        //   interaction    = (1/4pi) * (ln 1 - 1/4)
        //   confinement    = (1/2) * (1/2)
        let grid = Grid2D::new(2.0, 256).unwrap();
        let spec = InteractionSpec::single(1.0, 1.0, Vec2::ZERO).unwrap();
        let field = DensityField::from_fn(grid, vec![1.0], |_, x| {
            if x.norm_sq() <= 1.0 {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        let e = free_energy_default(&spec, &field).unwrap();
        let expect = (1.0f64 / PI).ln() + (1.0 / (4.0 * PI)) * (-0.25) + 0.25;
        assert!(
            (e.total - expect).abs() < 2e-3,
            "total {} vs {}",
            e.total,
            expect
        );
    }

    #[test]
    fn joint_translation_invariance() {
        let grid = Grid2D::new(8.0, 128).unwrap();
        let h = grid.spacing();
        let shift = Vec2::new(10.0 * h, -6.0 * h);
        let c = Vec2::new(0.4, 0.2);
        let spec = InteractionSpec::single(1.0, 2.0, c).unwrap();
        let spec_shifted = spec.with_drifts(vec![c + shift]).unwrap();
        let field = DensityField::gaussian_tuple(grid, vec![2.0], &[c], 0.8).unwrap();
        let shifted = field.translate(shift).unwrap();
        let e0 = free_energy_default(&spec, &field).unwrap().total;
        let e1 = free_energy_default(&spec_shifted, &shifted).unwrap().total;
        assert!((e0 - e1).abs() < 1e-6 * (1.0 + e0.abs()), "{e0} vs {e1}");
    }

    #[test]
    fn translation_expansion_identity() {
        // F_v(translate(rho, x0)) - F_0(rho)
        //   = sum_i int <x, x0 - v_i> rho_i + sum_i (beta_i/2) |x0 - v_i|^2
        let grid = Grid2D::new(8.0, 128).unwrap();
        let h = grid.spacing();
        let x0 = Vec2::new(8.0 * h, 4.0 * h);
        let centers = [Vec2::new(0.3, -0.1), Vec2::new(-0.5, 0.4)];
        let beta = vec![1.0, 2.5];
        let spec = InteractionSpec::new(
            vec![vec![0.8, 0.4], vec![0.4, 1.2]],
            beta.clone(),
            centers.to_vec(),
        )
        .unwrap();
        let field = DensityField::from_fn(grid, beta.clone(), |s, x| {
            let c = [Vec2::new(-0.2, 0.6), Vec2::new(0.7, 0.1)][s];
            (-(x - c).norm_sq() / 0.9).exp()
        })
        .unwrap();

        let alpha = default_alpha(2);
        let moved = field.translate(x0).unwrap();
        let lhs = free_energy(&spec, &moved, &alpha).unwrap().total
            - free_energy_centered(&spec, &field, &alpha).unwrap().total;

        let mut rhs = 0.0;
        for i in 0..2 {
            let d = x0 - centers[i];
            // int <x, d> rho_i  by direct quadrature
            let view = field.species_view(i);
            let mut cross = 0.0;
            for ((ix, iy), &v) in view.indexed_iter() {
                cross += grid.center(ix, iy).dot(d) * v;
            }
            cross *= grid.cell_area();
            rhs += cross + 0.5 * beta[i] * d.norm_sq();
        }
        assert!(
            (lhs - rhs).abs() < 1e-4 * (1.0 + rhs.abs()),
            "lhs {lhs} vs rhs {rhs}"
        );
    }

    #[test]
    fn dilation_identity_trivial_at_unit_scale() {
        let grid = Grid2D::new(8.0, 128).unwrap();
        let spec = InteractionSpec::single(1.0, 4.0, Vec2::ZERO).unwrap();
        let field = DensityField::gaussian_tuple(grid, vec![4.0], &[Vec2::ZERO], 1.0).unwrap();
        let (lhs, rhs) = dilation_identity_check(&spec, &field, 1.0).unwrap();
        assert!((lhs - rhs).abs() < 1e-9 * (1.0 + rhs.abs()));
    }

    #[test]
    fn dilation_identity_critical_and_subcritical() {
        // Shrinking with R = 1/2 doubles the support, so the profile must
        // start tight enough for the expanded tail to clear the walls.
        let grid = Grid2D::default_desk();
        for beta in [8.0 * PI, 4.0 * PI] {
            let spec = InteractionSpec::single(1.0, beta, Vec2::ZERO).unwrap();
            let field =
                DensityField::gaussian_tuple(grid, vec![beta], &[Vec2::ZERO], 0.9).unwrap();
            for r in [0.5, 2.0] {
                let (lhs, rhs) = dilation_identity_check(&spec, &field, r).unwrap();
                assert!(
                    (lhs - rhs).abs() <= 0.01 * (1.0 + rhs.abs()),
                    "beta={beta} R={r}: lhs {lhs} rhs {rhs}"
                );
            }
        }
    }

    #[test]
    fn rearrangement_does_not_increase_centered_energy() {
        let grid = Grid2D::new(8.0, 128).unwrap();
        let beta = vec![2.0, 1.0];
        let spec = InteractionSpec::new(
            vec![vec![1.0, 0.5], vec![0.5, 1.0]],
            beta.clone(),
            vec![Vec2::ZERO; 2],
        )
        .unwrap();
        let field = DensityField::from_fn(grid, beta, |s, x| {
            let c = [Vec2::new(1.2, 0.0), Vec2::new(-0.8, 0.9)][s];
            (-(x - c).norm_sq() / 0.7).exp()
        })
        .unwrap();
        let alpha = default_alpha(2);
        let before = free_energy_centered(&spec, &field, &alpha).unwrap().total;
        let after = free_energy_centered(&spec, &field.rearrange_all(), &alpha)
            .unwrap()
            .total;
        assert!(
            after <= before + 1e-6 * (1.0 + before.abs()),
            "rearranged {after} vs original {before}"
        );
    }

    #[test]
    fn mass_mismatch_is_rejected() {
        let grid = Grid2D::new(8.0, 64).unwrap();
        let spec = InteractionSpec::single(1.0, 4.0, Vec2::ZERO).unwrap();
        let field = DensityField::gaussian_tuple(grid, vec![3.9], &[Vec2::ZERO], 1.0).unwrap();
        assert!(matches!(
            free_energy_default(&spec, &field),
            Err(EnergyError::MassMismatch { .. })
        ));
    }

    #[test]
    fn inequality_gap_sign_convention() {
        let spec = InteractionSpec::new(
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            vec![1.0, 1.0],
            vec![Vec2::ZERO, Vec2::new(2.0, 0.0)],
        )
        .unwrap();
        // weighted drift min = 1 for this pair; gap = f0 + 1 - fv
        assert!((inequality_gap(&spec, 2.0, 1.5) - 0.5).abs() < 1e-14);
    }
}
