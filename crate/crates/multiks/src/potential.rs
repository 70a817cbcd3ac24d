//! Newtonian (logarithmic) potentials of density fields.
//!
//! The potential of species `i` is `u_i = -(1/2pi) ln|.| * rho_i`, evaluated
//! at cell centers by midpoint quadrature:
//!
//! ```text
//! u_i(x_k) = -(h^2 / 2pi) sum_m K(x_k, x_m) rho_i(x_m)
//! ```
//!
//! with `K(x, y) = ln|x - y|` off the diagonal. The singular self cell uses
//! `K(x, x) = ln(c0 h)` with `c0 = exp(-3/2)/sqrt(pi)`, validated against the
//! uniform-disk self-energy oracle. The convolution runs as a fast transform
//! on the zero-padded doubled grid; a direct `O(N^4)` summation is kept as
//! the test oracle for small grids. No boundary correction is applied beyond
//! domain truncation, so fields are expected to carry negligible mass near
//! the edge.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, Array3};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::field::{DensityField, Grid2D};

/// Self-cell kernel factor `exp(-3/2)/sqrt(pi)`: the diagonal kernel entry
/// is `ln(self_cell_factor() * h)`.
pub fn self_cell_factor() -> f64 {
    (-1.5f64).exp() / PI.sqrt()
}

#[derive(Debug, Error, PartialEq)]
pub enum PotentialError {
    #[error("potential grid does not match field grid")]
    GridMismatch,
    #[error("species counts differ: field {field}, potential {potential}")]
    SpeciesMismatch { field: usize, potential: usize },
    #[error("no cells with |x| in [{r_min}, {r_max}]: annulus is empty")]
    EmptyAnnulus { r_min: f64, r_max: f64 },
    #[error("far-field radius {r} must be positive and below the half-width {half_width}")]
    BadRadius { r: f64, half_width: f64 },
}

/// Per-species potentials `u_i` at cell centers.
#[derive(Debug, Clone)]
pub struct PotentialField {
    grid: Grid2D,
    values: Array3<f64>,
    source_mass: Vec<f64>,
}

impl PotentialField {
    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    pub fn species(&self) -> usize {
        self.values.dim().0
    }

    pub fn source_mass(&self) -> &[f64] {
        &self.source_mass
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn species_view(&self, i: usize) -> ndarray::ArrayView2<'_, f64> {
        self.values.index_axis(ndarray::Axis(0), i)
    }
}

/// Reusable convolution plan for one grid: cached FFT plans plus the
/// transformed kernel. Building one costs two FFT plans and one kernel
/// transform; solving costs two transforms per species.
pub struct PotentialSolver {
    grid: Grid2D,
    size: usize, // doubled grid edge, 2N
    kernel_hat: Vec<Complex<f64>>,
    fft_fwd: Arc<dyn Fft<f64>>,
    fft_inv: Arc<dyn Fft<f64>>,
}

impl PotentialSolver {
    pub fn new(grid: Grid2D) -> Self {
        let n = grid.cells_per_side();
        let size = 2 * n;
        let h = grid.spacing();

        let mut planner = FftPlanner::new();
        let fft_fwd = planner.plan_fft_forward(size);
        let fft_inv = planner.plan_fft_inverse(size);

        // Wrapped kernel of displacements on the doubled grid.
        let mut kernel: Vec<Complex<f64>> = vec![Complex::default(); size * size];
        for p in 0..size {
            let dx = if p <= n { p as f64 } else { p as f64 - size as f64 };
            for q in 0..size {
                let dy = if q <= n { q as f64 } else { q as f64 - size as f64 };
                let val = if p == 0 && q == 0 {
                    (self_cell_factor() * h).ln()
                } else {
                    (h * (dx * dx + dy * dy).sqrt()).ln()
                };
                kernel[p * size + q] = Complex::new(val, 0.0);
            }
        }
        fft2d(&mut kernel, size, &fft_fwd);

        PotentialSolver {
            grid,
            size,
            kernel_hat: kernel,
            fft_fwd,
            fft_inv,
        }
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    /// Potentials of every species of `field`.
    pub fn potential(&self, field: &DensityField) -> PotentialField {
        assert_eq!(field.grid(), self.grid, "solver built for a different grid");
        let n = self.grid.cells_per_side();
        let h2 = self.grid.cell_area();
        let mut values = Array3::zeros((field.species(), n, n));
        for s in 0..field.species() {
            let mut buf: Vec<Complex<f64>> = vec![Complex::default(); self.size * self.size];
            let view = field.species_view(s);
            for i in 0..n {
                for j in 0..n {
                    buf[i * self.size + j] = Complex::new(view[(i, j)], 0.0);
                }
            }
            fft2d(&mut buf, self.size, &self.fft_fwd);
            for (b, k) in buf.iter_mut().zip(self.kernel_hat.iter()) {
                *b *= k;
            }
            fft2d(&mut buf, self.size, &self.fft_inv);
            let scale = -h2 / (2.0 * PI) / (self.size * self.size) as f64;
            for i in 0..n {
                for j in 0..n {
                    values[(s, i, j)] = buf[i * self.size + j].re * scale;
                }
            }
        }
        PotentialField {
            grid: self.grid,
            values,
            source_mass: field.target_mass().to_vec(),
        }
    }
}

/// Row-column 2D FFT of a square buffer, in place.
fn fft2d(buf: &mut [Complex<f64>], size: usize, plan: &Arc<dyn Fft<f64>>) {
    let scratch_len = plan.get_inplace_scratch_len();
    buf.par_chunks_exact_mut(size)
        .for_each_init(
            || vec![Complex::default(); scratch_len],
            |scratch, row| plan.process_with_scratch(row, scratch),
        );
    transpose_square(buf, size);
    buf.par_chunks_exact_mut(size)
        .for_each_init(
            || vec![Complex::default(); scratch_len],
            |scratch, row| plan.process_with_scratch(row, scratch),
        );
    transpose_square(buf, size);
}

fn transpose_square(buf: &mut [Complex<f64>], size: usize) {
    for i in 0..size {
        for j in (i + 1)..size {
            buf.swap(i * size + j, j * size + i);
        }
    }
}

/// One-shot potential computation; builds a throwaway solver.
pub fn newtonian_potential(field: &DensityField) -> PotentialField {
    PotentialSolver::new(field.grid()).potential(field)
}

/// Direct `O(N^4)` summation with the same kernel; test oracle for small grids.
pub fn direct_potential(field: &DensityField) -> PotentialField {
    let grid = field.grid();
    let n = grid.cells_per_side();
    let h = grid.spacing();
    let h2 = grid.cell_area();
    let self_term = (self_cell_factor() * h).ln();
    let mut values = Array3::zeros((field.species(), n, n));

    for s in 0..field.species() {
        let view = field.species_view(s);
        let mut out = Array2::zeros((n, n));
        out.indexed_iter_mut()
            .collect::<Vec<_>>()
            .into_par_iter()
            .for_each(|((ki, kj), u): ((usize, usize), &mut f64)| {
                let xk = grid.center(ki, kj);
                let mut acc = 0.0;
                for ((mi, mj), &rho) in view.indexed_iter() {
                    if rho == 0.0 {
                        continue;
                    }
                    let k = if mi == ki && mj == kj {
                        self_term
                    } else {
                        (xk - grid.center(mi, mj)).norm().ln()
                    };
                    acc += k * rho;
                }
                *u = -h2 / (2.0 * PI) * acc;
            });
        values.index_axis_mut(ndarray::Axis(0), s).assign(&out);
    }
    PotentialField {
        grid,
        values,
        source_mass: field.target_mass().to_vec(),
    }
}

/// Largest deviation of `u_i` from the point-mass logarithm
/// `-(beta_i / 2pi) ln|x|` over cells with `|x_k|` in `[r, 0.95 L]`.
///
/// For compactly supported mass this is the constant of the far-field
/// expansion, decaying like `1/r` as the annulus moves outward.
pub fn far_field_error(pot: &PotentialField, i: usize, r: f64) -> Result<f64, PotentialError> {
    let grid = pot.grid();
    let l = grid.half_width();
    if !(r > 0.0) || r >= l {
        return Err(PotentialError::BadRadius { r, half_width: l });
    }
    let r_max = 0.95 * l;
    let beta = pot.source_mass()[i];
    let view = pot.species_view(i);
    let n = grid.cells_per_side();
    let mut worst: Option<f64> = None;
    for ki in 0..n {
        for kj in 0..n {
            let x = grid.center(ki, kj);
            let radius = x.norm();
            if radius < r || radius > r_max {
                continue;
            }
            let dev = (view[(ki, kj)] + beta / (2.0 * PI) * radius.ln()).abs();
            worst = Some(worst.map_or(dev, |w: f64| w.max(dev)));
        }
    }
    worst.ok_or(PotentialError::EmptyAnnulus { r_min: r, r_max })
}

/// Pairwise interaction integrals
/// `I_ij = int int rho_i(x) ln|x-y| rho_j(y) = -2 pi int rho_i u_j`,
/// evaluated on the grid. The result is symmetric up to transform roundoff.
pub fn interaction_energy(
    field: &DensityField,
    pot: &PotentialField,
) -> Result<Array2<f64>, PotentialError> {
    if field.grid() != pot.grid() {
        return Err(PotentialError::GridMismatch);
    }
    if field.species() != pot.species() {
        return Err(PotentialError::SpeciesMismatch {
            field: field.species(),
            potential: pot.species(),
        });
    }
    let n = field.species();
    let h2 = field.grid().cell_area();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        let rho = field.species_view(i);
        for j in 0..n {
            let u = pot.species_view(j);
            let dot: f64 = rho.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
            out[(i, j)] = -2.0 * PI * h2 * dot;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::DensityField;
    use crate::vec2::Vec2;

    /// Uniform disk of radius 1 with density `level`, on its own grid.
    fn disk_field(grid: Grid2D, level: f64) -> DensityField {
        let mass = level * PI;
        DensityField::from_fn(grid, vec![mass], |_, x| {
            if x.norm_sq() <= 1.0 {
                level
            } else {
                0.0
            }
        })
        .unwrap()
    }

    #[test]
    fn disk_center_potential_is_one_quarter() {
        // -(1/2pi) * 2pi int_0^1 r ln r dr = 1/4 for rho = 1 on the unit disk.
        let grid = Grid2D::new(2.0, 256).unwrap();
        let field = disk_field(grid, 1.0);
        let pot = newtonian_potential(&field);
        let n = grid.cells_per_side();
        // average the four cells around the origin
        let c = n / 2;
        let u0 = (pot.species_view(0)[(c - 1, c - 1)]
            + pot.species_view(0)[(c - 1, c)]
            + pot.species_view(0)[(c, c - 1)]
            + pot.species_view(0)[(c, c)])
            / 4.0;
        assert!((u0 - 0.25).abs() < 1e-3, "u(0) = {u0}");
    }

    #[test]
    fn disk_exterior_matches_point_mass() {
        let grid = Grid2D::new(4.0, 256).unwrap();
        let field = disk_field(grid, 1.0);
        let beta = field.target_mass()[0];
        let pot = newtonian_potential(&field);
        // nearest cell to (2, 0)
        let n = grid.cells_per_side();
        let ki = (0..n).min_by(|&a, &b| {
            (grid.coord(a) - 2.0).abs().total_cmp(&(grid.coord(b) - 2.0).abs())
        });
        let ki = ki.unwrap();
        let kj = n / 2; // y just above 0
        let x = grid.center(ki, kj);
        let expect = -beta / (2.0 * PI) * x.norm().ln();
        let got = pot.species_view(0)[(ki, kj)];
        assert!(
            (got - expect).abs() <= 1e-3 * expect.abs(),
            "u({},{}) = {got} vs {expect}",
            x.x,
            x.y
        );
    }

    #[test]
    fn potential_is_linear_in_the_source() {
        let grid = Grid2D::new(4.0, 32).unwrap();
        let fa = DensityField::gaussian_tuple(grid, vec![1.0], &[Vec2::new(0.5, 0.0)], 0.8).unwrap();
        let fb = DensityField::gaussian_tuple(grid, vec![2.0], &[Vec2::new(-0.7, 0.4)], 0.6).unwrap();
        let sum_values = fa.values() + fb.values();
        let fsum = DensityField::from_values(grid, sum_values, vec![3.0]).unwrap();
        let ua = newtonian_potential(&fa);
        let ub = newtonian_potential(&fb);
        let usum = newtonian_potential(&fsum);
        let mut worst = 0.0f64;
        for ((s, i, j), &v) in usum.values().indexed_iter() {
            let lin = ua.values()[(s, i, j)] + ub.values()[(s, i, j)];
            worst = worst.max((v - lin).abs());
        }
        assert!(worst < 1e-10, "superposition defect {worst}");
    }

    #[test]
    fn fast_transform_matches_direct_summation() {
        let grid = Grid2D::new(3.0, 64).unwrap();
        let field = DensityField::gaussian_tuple(
            grid,
            vec![1.5, 0.7],
            &[Vec2::new(0.4, -0.2), Vec2::new(-0.6, 0.5)],
            0.7,
        )
        .unwrap();
        let fast = newtonian_potential(&field);
        let slow = direct_potential(&field);
        let mut worst = 0.0f64;
        for (a, b) in fast.values().iter().zip(slow.values().iter()) {
            worst = worst.max((a - b).abs());
        }
        assert!(worst < 1e-10, "fft vs direct defect {worst}");
    }

    #[test]
    fn far_field_error_disk() {
        let grid = Grid2D::new(4.0, 256).unwrap();
        let field = disk_field(grid, 1.0);
        let pot = newtonian_potential(&field);
        let err = far_field_error(&pot, 0, 2.0).unwrap();
        assert!(err < 1e-3, "far-field error {err}");
    }

    #[test]
    fn far_field_error_gaussian() {
        let grid = Grid2D::new(8.0, 256).unwrap();
        let field =
            DensityField::gaussian_tuple(grid, vec![2.0 * PI], &[Vec2::ZERO], 1.0).unwrap();
        let pot = newtonian_potential(&field);
        let err = far_field_error(&pot, 0, 6.0).unwrap();
        assert!(err < 1e-2, "far-field error {err}");
    }

    #[test]
    fn far_field_error_decays_with_radius() {
        // Two separated bumps: the dipole-free expansion error falls off
        // like 1/R across nested annuli.
        let grid = Grid2D::new(12.0, 256).unwrap();
        let field = DensityField::from_fn(grid, vec![2.0], |_, x| {
            (-(x - Vec2::new(1.0, 0.0)).norm_sq() / 0.32).exp()
                + 0.6 * (-(x + Vec2::new(1.0, 0.3)).norm_sq() / 0.18).exp()
        })
        .unwrap();
        let pot = newtonian_potential(&field);
        let e4 = far_field_error(&pot, 0, 4.0).unwrap();
        let e6 = far_field_error(&pot, 0, 6.0).unwrap();
        let e8 = far_field_error(&pot, 0, 8.0).unwrap();
        assert!(e4 > e6 && e6 > e8, "errors not decreasing: {e4} {e6} {e8}");
    }

    #[test]
    fn far_field_rejects_empty_annulus() {
        let grid = Grid2D::new(2.0, 64).unwrap();
        let field = disk_field(grid, 1.0);
        let pot = newtonian_potential(&field);
        assert!(matches!(
            far_field_error(&pot, 0, 2.5),
            Err(PotentialError::BadRadius { .. })
        ));
    }

    #[test]
    fn interaction_energy_symmetric_and_degenerate() {
        let grid = Grid2D::new(6.0, 64).unwrap();
        // two identical species
        let f = DensityField::gaussian_tuple(
            grid,
            vec![1.0, 1.0],
            &[Vec2::new(0.5, 0.0), Vec2::new(0.5, 0.0)],
            0.9,
        )
        .unwrap();
        let pot = newtonian_potential(&f);
        let m = interaction_energy(&f, &pot).unwrap();
        assert!((m[(0, 0)] - m[(0, 1)]).abs() < 1e-10);
        assert!((m[(0, 0)] - m[(1, 1)]).abs() < 1e-10);
        assert!((m[(0, 1)] - m[(1, 0)]).abs() <= 1e-8 * (1.0 + m[(0, 1)].abs()));
    }

    #[test]
    fn interaction_energy_separated_disks_log_distance() {
        // Exterior potential of a uniform disk equals the point-mass
        // potential, so I_12 = ln(d) exactly in the continuum.
        let grid = Grid2D::new(8.0, 256).unwrap();
        let eps = 0.4;
        let d = 6.0;
        let c1 = Vec2::new(-d / 2.0, 0.0);
        let c2 = Vec2::new(d / 2.0, 0.0);
        let field = DensityField::from_fn(grid, vec![1.0, 1.0], move |s, x| {
            let c = if s == 0 { c1 } else { c2 };
            if (x - c).norm_sq() <= eps * eps {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        let pot = newtonian_potential(&field);
        let m = interaction_energy(&field, &pot).unwrap();
        assert!(
            (m[(0, 1)] - d.ln()).abs() < 0.01,
            "I_12 = {} vs ln d = {}",
            m[(0, 1)],
            d.ln()
        );
    }

    #[test]
    fn interaction_energy_disk_self_energy() {
        // Self energy of the uniform unit disk with unit mass: ln 1 - 1/4.
        let grid = Grid2D::new(2.0, 256).unwrap();
        let field = disk_field(grid, 1.0 / PI);
        let pot = newtonian_potential(&field);
        let m = interaction_energy(&field, &pot).unwrap();
        assert!((m[(0, 0)] + 0.25).abs() < 1e-3, "I_11 = {}", m[(0, 0)]);
    }

    #[test]
    fn interaction_energy_dilation_law() {
        // I_ij(dilate(rho, R)) = I_ij(rho) - beta_i beta_j ln R
        let grid = Grid2D::new(8.0, 256).unwrap();
        let field = DensityField::gaussian_tuple(
            grid,
            vec![1.3, 0.9],
            &[Vec2::new(0.5, -0.2), Vec2::new(-0.4, 0.3)],
            1.0,
        )
        .unwrap();
        let r = 2.0;
        let dilated = field.dilate(r).unwrap();
        let m0 = interaction_energy(&field, &newtonian_potential(&field)).unwrap();
        let m1 = interaction_energy(&dilated, &newtonian_potential(&dilated)).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let expect = m0[(i, j)]
                    - field.target_mass()[i] * field.target_mass()[j] * r.ln();
                let got = m1[(i, j)];
                assert!(
                    (got - expect).abs() <= 0.01 * (1.0 + expect.abs()),
                    "I[{i}{j}] {got} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn interaction_energy_grid_mismatch_rejected() {
        let g1 = Grid2D::new(2.0, 32).unwrap();
        let g2 = Grid2D::new(3.0, 32).unwrap();
        let f1 = DensityField::gaussian_tuple(g1, vec![1.0], &[Vec2::ZERO], 0.5).unwrap();
        let f2 = DensityField::gaussian_tuple(g2, vec![1.0], &[Vec2::ZERO], 0.5).unwrap();
        let pot2 = newtonian_potential(&f2);
        assert_eq!(
            interaction_energy(&f1, &pot2).unwrap_err(),
            PotentialError::GridMismatch
        );
    }
}
