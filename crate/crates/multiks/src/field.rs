//! Discrete density tuples on a truncated square domain.
//!
//! Densities are stored as cell-center samples on `[-L, L]^2` with an even
//! number of cells per side, integrated by the midpoint rule. Every
//! mass-preserving operation renormalizes each species exactly to its target
//! mass `beta_i`, so the discrete membership in the admissible class (fixed
//! masses, finite entropy and second moments) is testable exactly; the
//! interpolation error of geometric transforms is bounded separately.

use std::f64::consts::PI;

use ndarray::{Array3, ArrayView2, ArrayViewMut2};
use thiserror::Error;

use crate::vec2::Vec2;

/// Cells with density below this are treated as exactly vacuum; the
/// integrand `rho ln rho` extends continuously by 0.
const VACUUM_THRESHOLD: f64 = 1e-300;

#[derive(Debug, Error, PartialEq)]
pub enum FieldError {
    #[error("cells per side must be even and positive, got {0}")]
    OddCells(usize),
    #[error("half-width must be positive and finite, got {0}")]
    BadHalfWidth(f64),
    #[error("species count must be at least 1")]
    NoSpecies,
    #[error("negative density {value} at species {species}, cell ({i},{j})")]
    NegativeDensity {
        species: usize,
        i: usize,
        j: usize,
        value: f64,
    },
    #[error("species {species} has no mass to normalize")]
    ZeroMass { species: usize },
    #[error(
        "support overflow: species {species} mass changed by relative {relative_loss:e} \
         (limit {limit:e}); the transformed support does not fit the grid"
    )]
    SupportOverflow {
        species: usize,
        relative_loss: f64,
        limit: f64,
    },
    #[error("dilation factor must be positive and finite, got {0}")]
    BadDilation(f64),
    #[error("species index {index} out of range (n = {n})")]
    SpeciesOutOfRange { index: usize, n: usize },
}

/// Uniform cell-centered grid on `[-L, L]^2`.
///
/// Even `N` keeps the grid symmetric about the origin: centers sit at
/// `+- (k + 1/2) h` and no cell straddles the axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    half_width: f64,
    cells: usize,
    h: f64,
}

impl Grid2D {
    pub fn new(half_width: f64, cells_per_side: usize) -> Result<Self, FieldError> {
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(FieldError::BadHalfWidth(half_width));
        }
        if cells_per_side == 0 || !cells_per_side.is_multiple_of(2) {
            return Err(FieldError::OddCells(cells_per_side));
        }
        Ok(Grid2D {
            half_width,
            cells: cells_per_side,
            h: 2.0 * half_width / cells_per_side as f64,
        })
    }

    /// Default desk-scale grid: `L = 12`, `N = 256` (`h` just under 0.1),
    /// which keeps unit-variance tails below 1e-30 at the boundary for
    /// centers within `|c| <= 4`.
    pub fn default_desk() -> Self {
        Grid2D::new(12.0, 256).expect("valid default grid")
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn cells_per_side(&self) -> usize {
        self.cells
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn cell_area(&self) -> f64 {
        self.h * self.h
    }

    /// Coordinate of cell-center index `k` along either axis.
    pub fn coord(&self, k: usize) -> f64 {
        -self.half_width + (k as f64 + 0.5) * self.h
    }

    pub fn center(&self, i: usize, j: usize) -> Vec2 {
        Vec2::new(self.coord(i), self.coord(j))
    }
}

/// Nonnegative per-species densities with prescribed masses.
///
/// Index layout is `values[(species, ix, iy)]`; the first spatial index runs
/// along `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    grid: Grid2D,
    values: Array3<f64>,
    beta: Vec<f64>,
}

impl DensityField {
    /// Sample `rho_i(x)` at cell centers and normalize each species exactly
    /// to `beta_i`.
    pub fn from_fn<F>(grid: Grid2D, beta: Vec<f64>, mut sampler: F) -> Result<Self, FieldError>
    where
        F: FnMut(usize, Vec2) -> f64,
    {
        if beta.is_empty() {
            return Err(FieldError::NoSpecies);
        }
        let n = beta.len();
        let cells = grid.cells_per_side();
        let mut values = Array3::zeros((n, cells, cells));
        for s in 0..n {
            for i in 0..cells {
                for j in 0..cells {
                    let val = sampler(s, grid.center(i, j));
                    if val < 0.0 || !val.is_finite() {
                        return Err(FieldError::NegativeDensity {
                            species: s,
                            i,
                            j,
                            value: val,
                        });
                    }
                    values[(s, i, j)] = if val < VACUUM_THRESHOLD { 0.0 } else { val };
                }
            }
        }
        let mut field = DensityField { grid, values, beta };
        field.renormalize()?;
        Ok(field)
    }

    /// Wrap raw cell values, normalizing each species to `beta_i`.
    pub fn from_values(grid: Grid2D, values: Array3<f64>, beta: Vec<f64>) -> Result<Self, FieldError> {
        let (n, nx, ny) = values.dim();
        if n == 0 || n != beta.len() {
            return Err(FieldError::NoSpecies);
        }
        if nx != grid.cells_per_side() || ny != grid.cells_per_side() {
            return Err(FieldError::OddCells(nx));
        }
        for ((s, i, j), &v) in values.indexed_iter() {
            if v < 0.0 || !v.is_finite() {
                return Err(FieldError::NegativeDensity {
                    species: s,
                    i,
                    j,
                    value: v,
                });
            }
        }
        let mut field = DensityField { grid, values, beta };
        field.values.mapv_inplace(|v| if v < VACUUM_THRESHOLD { 0.0 } else { v });
        field.renormalize()?;
        Ok(field)
    }

    /// Wrap values without renormalizing. The time stepper uses this: its
    /// flux-form updates conserve mass structurally, and the conservation
    /// invariant is tested rather than enforced.
    pub(crate) fn from_raw_unchecked(grid: Grid2D, values: Array3<f64>, beta: Vec<f64>) -> Self {
        DensityField { grid, values, beta }
    }

    /// Tuple of isotropic Gaussians `(beta_i / 2 pi sigma^2) exp(-|x-c_i|^2 / 2 sigma^2)`.
    pub fn gaussian_tuple(
        grid: Grid2D,
        beta: Vec<f64>,
        centers: &[Vec2],
        sigma: f64,
    ) -> Result<Self, FieldError> {
        let s2 = sigma * sigma;
        let amp: Vec<f64> = beta.iter().map(|b| b / (2.0 * PI * s2)).collect();
        let centers = centers.to_vec();
        DensityField::from_fn(grid, beta, move |s, x| {
            amp[s] * (-(x - centers[s]).norm_sq() / (2.0 * s2)).exp()
        })
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    pub fn species(&self) -> usize {
        self.values.dim().0
    }

    pub fn target_mass(&self) -> &[f64] {
        &self.beta
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn species_view(&self, i: usize) -> ArrayView2<'_, f64> {
        self.values.index_axis(ndarray::Axis(0), i)
    }

    pub(crate) fn species_view_mut(&mut self, i: usize) -> ArrayViewMut2<'_, f64> {
        self.values.index_axis_mut(ndarray::Axis(0), i)
    }

    fn check_species(&self, i: usize) -> Result<(), FieldError> {
        if i >= self.species() {
            return Err(FieldError::SpeciesOutOfRange {
                index: i,
                n: self.species(),
            });
        }
        Ok(())
    }

    /// Discrete mass `h^2 sum_k rho_i(x_k)`.
    pub fn mass(&self, i: usize) -> f64 {
        self.grid.cell_area() * self.species_view(i).sum()
    }

    fn renormalize(&mut self) -> Result<(), FieldError> {
        for s in 0..self.species() {
            let m = self.mass(s);
            if !(m > 0.0) {
                return Err(FieldError::ZeroMass { species: s });
            }
            let scale = self.beta[s] / m;
            self.species_view_mut(s).mapv_inplace(|v| v * scale);
        }
        Ok(())
    }

    /// `h^2 sum rho_i ln rho_i` with the convention `0 ln 0 = 0`.
    pub fn entropy(&self, i: usize) -> f64 {
        let mut total = 0.0;
        for &v in self.species_view(i).iter() {
            if v >= VACUUM_THRESHOLD {
                total += v * v.ln();
            }
        }
        total * self.grid.cell_area()
    }

    /// `h^2 sum |x_k - center|^2 rho_i(x_k)`.
    pub fn second_moment(&self, i: usize, center: Vec2) -> f64 {
        let view = self.species_view(i);
        let mut total = 0.0;
        for ((ix, iy), &v) in view.indexed_iter() {
            if v != 0.0 {
                total += (self.grid.center(ix, iy) - center).norm_sq() * v;
            }
        }
        total * self.grid.cell_area()
    }

    /// Mass centroid of species `i`.
    pub fn centroid(&self, i: usize) -> Vec2 {
        let view = self.species_view(i);
        let mut acc = Vec2::ZERO;
        for ((ix, iy), &v) in view.indexed_iter() {
            if v != 0.0 {
                acc = acc + self.grid.center(ix, iy).scale(v);
            }
        }
        acc.scale(self.grid.cell_area() / self.beta[i])
    }

    pub fn max_density(&self, i: usize) -> f64 {
        self.species_view(i).iter().fold(0.0, |m, &v| m.max(v))
    }

    pub fn max_density_all(&self) -> f64 {
        (0..self.species()).fold(0.0, |m, i| m.max(self.max_density(i)))
    }

    /// `h^2 sum_i sum_k |rho_i - other_i|` over all species.
    pub fn l1_distance(&self, other: &DensityField) -> f64 {
        assert_eq!(self.values.dim(), other.values.dim());
        let mut total = 0.0;
        for (a, b) in self.values.iter().zip(other.values.iter()) {
            total += (a - b).abs();
        }
        total * self.grid.cell_area()
    }

    /// Bilinear sample of species `i` at an arbitrary point; zero outside
    /// the outermost cell centers.
    pub fn sample(&self, i: usize, p: Vec2) -> f64 {
        let n = self.grid.cells_per_side();
        let h = self.grid.spacing();
        let fx = (p.x + self.grid.half_width()) / h - 0.5;
        let fy = (p.y + self.grid.half_width()) / h - 0.5;
        if fx <= -1.0 || fy <= -1.0 || fx >= n as f64 || fy >= n as f64 {
            return 0.0;
        }
        let ix = fx.floor();
        let iy = fy.floor();
        let tx = fx - ix;
        let ty = fy - iy;
        let view = self.species_view(i);
        let at = |a: f64, b: f64| -> f64 {
            if a < 0.0 || b < 0.0 || a >= n as f64 || b >= n as f64 {
                0.0
            } else {
                view[(a as usize, b as usize)]
            }
        };
        let v00 = at(ix, iy);
        let v10 = at(ix + 1.0, iy);
        let v01 = at(ix, iy + 1.0);
        let v11 = at(ix + 1.0, iy + 1.0);
        (1.0 - tx) * (1.0 - ty) * v00 + tx * (1.0 - ty) * v10 + (1.0 - tx) * ty * v01 + tx * ty * v11
    }

    /// Check that every species integrates to its target within `tol`
    /// relative. All mass-preserving operations maintain this at 1e-10.
    pub fn mass_defect(&self) -> f64 {
        (0..self.species())
            .map(|i| ((self.mass(i) - self.beta[i]) / self.beta[i]).abs())
            .fold(0.0, f64::max)
    }

    /// The scaling `rho_i(x) -> R^2 rho_i(R x)`: mass is preserved, the
    /// second moment about the origin shrinks by `1/R^2`, and the entropy
    /// grows by `2 beta_i ln R` per species.
    ///
    /// Fails if mass escapes the truncated domain (relative change above
    /// 1e-8 before the exact renormalization).
    pub fn dilate(&self, r: f64) -> Result<DensityField, FieldError> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(FieldError::BadDilation(r));
        }
        self.resample(|p| p.scale(r), r * r)
    }

    /// The shift `rho_i(x) -> rho_i(x - x0)`; grid-aligned shifts are exact.
    pub fn translate(&self, x0: Vec2) -> Result<DensityField, FieldError> {
        self.resample(|p| p - x0, 1.0)
    }

    fn resample<F>(&self, map: F, amplitude: f64) -> Result<DensityField, FieldError>
    where
        F: Fn(Vec2) -> Vec2,
    {
        let n = self.species();
        let cells = self.grid.cells_per_side();
        let mut values = Array3::zeros((n, cells, cells));
        for s in 0..n {
            for i in 0..cells {
                for j in 0..cells {
                    let v = amplitude * self.sample(s, map(self.grid.center(i, j)));
                    values[(s, i, j)] = if v < VACUUM_THRESHOLD { 0.0 } else { v };
                }
            }
        }
        let mut out = DensityField {
            grid: self.grid,
            values,
            beta: self.beta.clone(),
        };
        const LIMIT: f64 = 1e-8;
        for s in 0..n {
            let m = out.mass(s);
            let loss = ((m - self.beta[s]) / self.beta[s]).abs();
            if loss > LIMIT {
                return Err(FieldError::SupportOverflow {
                    species: s,
                    relative_loss: loss,
                    limit: LIMIT,
                });
            }
        }
        out.renormalize()?;
        Ok(out)
    }

    /// Symmetric decreasing rearrangement of species `i` about the origin:
    /// cell values sorted descending are transplanted onto cells sorted by
    /// `|x_k|` ascending. Mass and entropy are exactly preserved (same
    /// multiset of values); the second moment about the origin cannot
    /// increase.
    pub fn rearrange_radial(&self, i: usize) -> Result<DensityField, FieldError> {
        self.check_species(i)?;
        let mut out = self.clone();
        let cells = self.grid.cells_per_side();

        let mut order: Vec<(usize, usize)> = (0..cells)
            .flat_map(|a| (0..cells).map(move |b| (a, b)))
            .collect();
        order.sort_by(|&(ai, aj), &(bi, bj)| {
            let ra = self.grid.center(ai, aj).norm_sq();
            let rb = self.grid.center(bi, bj).norm_sq();
            ra.total_cmp(&rb).then(ai.cmp(&bi)).then(aj.cmp(&bj))
        });

        let mut vals: Vec<f64> = self.species_view(i).iter().copied().collect();
        vals.sort_unstable_by(|a, b| b.total_cmp(a));

        let mut view = out.species_view_mut(i);
        for ((ci, cj), v) in order.into_iter().zip(vals) {
            view[(ci, cj)] = v;
        }
        Ok(out)
    }

    /// Rearrange every species; see [`DensityField::rearrange_radial`].
    pub fn rearrange_all(&self) -> DensityField {
        let mut out = self.clone();
        for i in 0..self.species() {
            out = out.rearrange_radial(i).expect("species index in range");
        }
        out
    }

    /// Both sides of the entropy-domination inequality
    ///
    /// ```text
    /// sum int rho_i |ln rho_i|  <=  sum int rho_i ln rho_i
    ///     + 2 ln(2 pi) sum beta_i + 2 sum int |x|^2 rho_i + 2 n / e
    /// ```
    ///
    /// which holds for any field with finite entropy and second moments.
    pub fn entropy_bound_check(&self) -> EntropyBound {
        let n = self.species();
        let mut lhs = 0.0;
        for s in 0..n {
            for &v in self.species_view(s).iter() {
                if v >= VACUUM_THRESHOLD {
                    lhs += v * v.ln().abs();
                }
            }
        }
        lhs *= self.grid.cell_area();

        let entropy_sum: f64 = (0..n).map(|s| self.entropy(s)).sum();
        let mass_sum: f64 = self.beta.iter().sum();
        let moment_sum: f64 = (0..n).map(|s| self.second_moment(s, Vec2::ZERO)).sum();
        let rhs = entropy_sum
            + 2.0 * (2.0 * PI).ln() * mass_sum
            + 2.0 * moment_sum
            + 2.0 * n as f64 * (-1.0f64).exp();
        EntropyBound {
            lhs,
            rhs,
            holds: lhs <= rhs + 1e-8 * (1.0 + rhs.abs()),
        }
    }
}

/// Result of [`DensityField::entropy_bound_check`].
#[derive(Debug, Clone, Copy)]
pub struct EntropyBound {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}
