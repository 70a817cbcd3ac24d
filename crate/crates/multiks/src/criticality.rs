//! Closed-form criticality algebra for the coupled-population problem.
//!
//! For a symmetric nonnegative coupling matrix `A` and masses `beta`, the
//! quantity attached to every nonempty index subset `J` is
//!
//! ```text
//! Lambda_J(beta) = sum_{i in J} beta_i (8 pi - sum_{j in J} a_ij beta_j)
//! ```
//!
//! The sign pattern of the full table classifies the mass vector:
//! sub-critical (all positive: minimizers exist for every drift
//! configuration), critical (only the full set saturates: existence depends
//! on the drift spread), or outside those regimes. The single-population
//! case reduces to the classical threshold `beta_c = 8 pi / a`.

use std::f64::consts::PI;

use thiserror::Error;

use crate::vec2::Vec2;

/// Largest species count accepted by [`classify`]; the table has `2^n - 1` rows.
pub const MAX_SPECIES_FOR_CLASSIFY: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum SpecError {
    #[error("species count must be at least 1")]
    Empty,
    #[error("coupling matrix is {rows}x{cols}, expected {n}x{n}")]
    BadMatrixShape { rows: usize, cols: usize, n: usize },
    #[error("drift vector has {got} entries, expected {n}")]
    BadDriftLength { got: usize, n: usize },
    #[error("coupling matrix not symmetric at ({i},{j}): {aij} vs {aji}")]
    NotSymmetric { i: usize, j: usize, aij: f64, aji: f64 },
    #[error("coupling a[{i}][{j}] = {value} is negative")]
    NegativeCoupling { i: usize, j: usize, value: f64 },
    #[error("mass beta[{i}] = {value} is not positive and finite")]
    BadMass { i: usize, value: f64 },
}

#[derive(Debug, Error, PartialEq)]
pub enum CriticalityError {
    #[error("subset of species indices must be nonempty")]
    EmptySubset,
    #[error("subset mask {mask:#b} has bits outside 0..{n}")]
    SubsetOutOfRange { mask: u32, n: usize },
    #[error("refusing to enumerate 2^{n} - 1 subsets (limit n <= {limit})")]
    TooManySpecies { n: usize, limit: usize },
}

/// Coupling matrix, masses, and drift centers for an `n`-population system.
///
/// Symmetry of `A` is required exactly as stored; callers must symmetrize
/// their input before construction.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionSpec {
    n: usize,
    a: Vec<Vec<f64>>,
    beta: Vec<f64>,
    v: Vec<Vec2>,
}

impl InteractionSpec {
    pub fn new(a: Vec<Vec<f64>>, beta: Vec<f64>, v: Vec<Vec2>) -> Result<Self, SpecError> {
        let n = beta.len();
        if n == 0 {
            return Err(SpecError::Empty);
        }
        if a.len() != n || a.iter().any(|row| row.len() != n) {
            return Err(SpecError::BadMatrixShape {
                rows: a.len(),
                cols: a.first().map_or(0, |r| r.len()),
                n,
            });
        }
        if v.len() != n {
            return Err(SpecError::BadDriftLength { got: v.len(), n });
        }
        for i in 0..n {
            for j in 0..n {
                if a[i][j] != a[j][i] {
                    return Err(SpecError::NotSymmetric {
                        i,
                        j,
                        aij: a[i][j],
                        aji: a[j][i],
                    });
                }
                if !(a[i][j] >= 0.0) || !a[i][j].is_finite() {
                    return Err(SpecError::NegativeCoupling {
                        i,
                        j,
                        value: a[i][j],
                    });
                }
            }
            if !(beta[i] > 0.0) || !beta[i].is_finite() {
                return Err(SpecError::BadMass {
                    i,
                    value: beta[i],
                });
            }
        }
        Ok(InteractionSpec { n, a, beta, v })
    }

    /// Single-population spec with coupling `a`, mass `beta`, drift at `v`.
    pub fn single(a: f64, beta: f64, v: Vec2) -> Result<Self, SpecError> {
        Self::new(vec![vec![a]], vec![beta], vec![v])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn coupling(&self, i: usize, j: usize) -> f64 {
        self.a[i][j]
    }

    pub fn coupling_matrix(&self) -> &[Vec<f64>] {
        &self.a
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn total_mass(&self) -> f64 {
        self.beta.iter().sum()
    }

    pub fn drifts(&self) -> &[Vec2] {
        &self.v
    }

    pub fn has_zero_drifts(&self) -> bool {
        self.v.iter().all(|p| p.x == 0.0 && p.y == 0.0)
    }

    /// Same couplings and masses, drift centers replaced.
    pub fn with_drifts(&self, v: Vec<Vec2>) -> Result<Self, SpecError> {
        Self::new(self.a.clone(), self.beta.clone(), v)
    }

    /// Same couplings and drifts, every mass multiplied by `t > 0`.
    pub fn with_mass_scale(&self, t: f64) -> Result<Self, SpecError> {
        let beta = self.beta.iter().map(|b| b * t).collect();
        Self::new(self.a.clone(), beta, self.v.clone())
    }

    /// Drift centers all moved to the origin (the functional `F_0`).
    pub fn zero_drift(&self) -> Self {
        InteractionSpec {
            n: self.n,
            a: self.a.clone(),
            beta: self.beta.clone(),
            v: vec![Vec2::ZERO; self.n],
        }
    }
}

/// Outcome of [`classify`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticalityClass {
    /// `Lambda_J > 0` for every nonempty subset.
    SubCritical,
    /// `Lambda_I = 0` and `Lambda_J > 0` for every nonempty proper subset.
    Critical,
    /// Admissible (table nonnegative, saturated subsets pass the diagonal
    /// test) but neither sub-critical nor critical.
    DegenerateAdmissible,
    /// The admissibility condition fails.
    Inadmissible,
}

impl CriticalityClass {
    pub fn as_str(self) -> &'static str {
        match self {
            CriticalityClass::SubCritical => "sub-critical",
            CriticalityClass::Critical => "critical",
            CriticalityClass::DegenerateAdmissible => "degenerate-admissible",
            CriticalityClass::Inadmissible => "inadmissible",
        }
    }
}

/// Full `Lambda` table plus the resulting class.
///
/// Subsets are bitmasks over species indices; `lambda_table[mask - 1]` holds
/// `Lambda` of the subset encoded by `mask`, so the table has exactly
/// `2^n - 1` entries.
#[derive(Debug, Clone)]
pub struct CriticalityVerdict {
    pub class: CriticalityClass,
    pub lambda_table: Vec<f64>,
    /// Subsets (as masks) that violate admissibility, or that saturate
    /// `Lambda_J = 0` in the admissible cases.
    pub witnesses: Vec<u32>,
}

impl CriticalityVerdict {
    pub fn lambda(&self, mask: u32) -> Option<f64> {
        if mask == 0 {
            return None;
        }
        self.lambda_table.get(mask as usize - 1).copied()
    }
}

/// `Lambda_J = sum_{i in J} beta_i (8 pi - sum_{j in J} a_ij beta_j)` for the
/// subset encoded by `mask` (bit `i` set means species `i` belongs to `J`).
pub fn lambda_subset(spec: &InteractionSpec, mask: u32) -> Result<f64, CriticalityError> {
    if mask == 0 {
        return Err(CriticalityError::EmptySubset);
    }
    if spec.n < 32 && mask >= (1u32 << spec.n) {
        return Err(CriticalityError::SubsetOutOfRange { mask, n: spec.n });
    }
    let mut total = 0.0;
    for i in 0..spec.n {
        if mask & (1 << i) == 0 {
            continue;
        }
        let mut coupled = 0.0;
        for j in 0..spec.n {
            if mask & (1 << j) != 0 {
                coupled += spec.a[i][j] * spec.beta[j];
            }
        }
        total += spec.beta[i] * (8.0 * PI - coupled);
    }
    Ok(total)
}

/// Tolerance below which a `Lambda` value counts as saturated (zero).
///
/// Inputs are floating point, so exact saturation is tested relative to the
/// natural scale `8 pi sum beta_i`.
pub fn saturation_tolerance(spec: &InteractionSpec) -> f64 {
    1e-12 * (8.0 * PI * spec.total_mass()).abs().max(1.0)
}

/// Enumerate every nonempty subset and classify the mass vector.
///
/// Fails for `n > 20` (the table would have over a million rows).
pub fn classify(spec: &InteractionSpec) -> Result<CriticalityVerdict, CriticalityError> {
    if spec.n > MAX_SPECIES_FOR_CLASSIFY {
        return Err(CriticalityError::TooManySpecies {
            n: spec.n,
            limit: MAX_SPECIES_FOR_CLASSIFY,
        });
    }
    let full: u32 = (1u32 << spec.n) - 1;
    let tol = saturation_tolerance(spec);

    let mut lambda_table = Vec::with_capacity(full as usize);
    for mask in 1..=full {
        lambda_table.push(lambda_subset(spec, mask)?);
    }
    let lambda_of = |mask: u32| -> f64 {
        if mask == 0 {
            0.0
        } else {
            lambda_table[mask as usize - 1]
        }
    };

    let mut negative: Vec<u32> = Vec::new();
    let mut saturated: Vec<u32> = Vec::new();
    for mask in 1..=full {
        let lam = lambda_of(mask);
        if lam < -tol {
            negative.push(mask);
        } else if lam <= tol {
            saturated.push(mask);
        }
    }

    // Admissibility: table nonnegative and, for each saturated J, the
    // diagonal condition a_ii + Lambda_{J \ {i}} > 0 for every i in J
    // (with Lambda of the empty set read as 0).
    let mut diagonal_failures: Vec<u32> = Vec::new();
    for &mask in &saturated {
        for i in 0..spec.n {
            if mask & (1 << i) == 0 {
                continue;
            }
            let without = mask & !(1 << i);
            if spec.a[i][i] + lambda_of(without) <= tol {
                diagonal_failures.push(mask);
                break;
            }
        }
    }

    let admissible = negative.is_empty() && diagonal_failures.is_empty();
    let all_proper_positive = (1..full).all(|mask| lambda_of(mask) > tol);
    let full_saturated = lambda_of(full).abs() <= tol;

    let (class, witnesses) = if !admissible {
        let mut w = negative;
        w.extend_from_slice(&diagonal_failures);
        w.sort_unstable();
        w.dedup();
        (CriticalityClass::Inadmissible, w)
    } else if saturated.is_empty() {
        (CriticalityClass::SubCritical, Vec::new())
    } else if full_saturated && all_proper_positive {
        (CriticalityClass::Critical, vec![full])
    } else {
        (CriticalityClass::DegenerateAdmissible, saturated)
    };

    Ok(CriticalityVerdict {
        class,
        lambda_table,
        witnesses,
    })
}

/// `min_x sum_i |v_i - x|^2` together with its minimizer (the centroid).
pub fn drift_variance(points: &[Vec2]) -> (f64, Vec2) {
    assert!(!points.is_empty(), "drift_variance needs at least one point");
    let n = points.len() as f64;
    let centroid = points
        .iter()
        .fold(Vec2::ZERO, |acc, &p| acc + p)
        .scale(1.0 / n);
    let value = points.iter().map(|&p| (p - centroid).norm_sq()).sum();
    (value, centroid)
}

/// `min_x sum_i (beta_i / 2) |x - v_i|^2` and the mass-weighted centroid
/// attaining it. For two populations the value reduces to
/// `beta_1 beta_2 |v_1 - v_2|^2 / (2 (beta_1 + beta_2))`.
pub fn weighted_drift_min(spec: &InteractionSpec) -> (f64, Vec2) {
    let total = spec.total_mass();
    let centroid = spec
        .beta
        .iter()
        .zip(&spec.v)
        .fold(Vec2::ZERO, |acc, (&b, &p)| acc + p.scale(b))
        .scale(1.0 / total);
    let value = spec
        .beta
        .iter()
        .zip(&spec.v)
        .map(|(&b, &p)| 0.5 * b * (p - centroid).norm_sq())
        .sum();
    (value, centroid)
}

/// Locate, by bisection on [`classify`], the mass scale `t` at which
/// `t * beta` stops being sub-critical. Requires the unscaled spec to be
/// sub-critical and some coupling to be positive (otherwise every scale is
/// sub-critical and `None` is returned).
pub fn critical_mass_scale(spec: &InteractionSpec) -> Result<Option<f64>, CriticalityError> {
    let is_sub = |t: f64| -> Result<bool, CriticalityError> {
        let scaled = spec
            .with_mass_scale(t)
            .expect("positive rescale of a valid spec");
        Ok(classify(&scaled)?.class == CriticalityClass::SubCritical)
    };

    let mut lo = 1e-6;
    if !is_sub(lo)? {
        lo = 1e-12;
        if !is_sub(lo)? {
            return Ok(Some(0.0));
        }
    }
    let mut hi = lo;
    let mut expansions = 0;
    while is_sub(hi)? {
        hi *= 2.0;
        expansions += 1;
        if expansions > 200 {
            return Ok(None); // all couplings vanish: sub-critical at every scale
        }
    }
    while (hi - lo) > 1e-12 * hi {
        let mid = 0.5 * (lo + hi);
        if is_sub(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(0.5 * (lo + hi)))
}
