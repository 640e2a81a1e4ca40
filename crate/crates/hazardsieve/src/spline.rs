//! The B-spline sieve for the baseline function: clamped knot construction,
//! basis evaluation by the de Boor recurrence, an optional natural-spline
//! constraint, and breakpoint enumeration for piecewise quadrature.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplineError {
    #[error("spline order must be at least 2, got {0}")]
    OrderTooSmall(usize),
    #[error("natural splines need order >= 4, got {0}")]
    NaturalNeedsCubic(usize),
    #[error("boundary must satisfy lower < upper, got ({0}, {1})")]
    InvalidBoundary(f64, f64),
    #[error("interior knots must be strictly increasing")]
    KnotsNotIncreasing,
    #[error("interior knot {0} lies outside the open boundary interval")]
    KnotOutsideBoundary(f64),
}

/// A clamped B-spline basis on `[boundary.0, boundary.1]`.
///
/// The raw basis has dimension `#interior + order` (boundary knots repeated
/// with multiplicity `order`). With `natural = true` the basis is mapped to
/// the `raw - 2` dimensional subspace whose members have zero second
/// derivative at both boundaries; the mapping keeps constants reproducible
/// by the all-ones coefficient vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis {
    order: usize,
    interior: Vec<f64>,
    boundary: (f64, f64),
    natural: bool,
    knots: Vec<f64>,
    dim: usize,
    /// Row `k` gives the contribution of raw basis `k` to each free basis
    /// function; `None` means the identity (natural = false).
    constraint_map: Option<Vec<Vec<f64>>>,
}

impl SplineBasis {
    pub fn new(
        order: usize,
        interior: &[f64],
        boundary: (f64, f64),
        natural: bool,
    ) -> Result<Self, SplineError> {
        if order < 2 {
            return Err(SplineError::OrderTooSmall(order));
        }
        if natural && order < 4 {
            return Err(SplineError::NaturalNeedsCubic(order));
        }
        let (a, b) = boundary;
        if a.is_nan() || b.is_nan() || a >= b || !a.is_finite() || !b.is_finite() {
            return Err(SplineError::InvalidBoundary(a, b));
        }
        for w in interior.windows(2) {
            if w[0].is_nan() || w[1].is_nan() || w[0] >= w[1] {
                return Err(SplineError::KnotsNotIncreasing);
            }
        }
        for &k in interior {
            if k.is_nan() || k <= a || k >= b {
                return Err(SplineError::KnotOutsideBoundary(k));
            }
        }

        let raw_dim = interior.len() + order;
        let mut knots = Vec::with_capacity(raw_dim + order);
        knots.extend(std::iter::repeat_n(a, order));
        knots.extend_from_slice(interior);
        knots.extend(std::iter::repeat_n(b, order));

        let mut basis = SplineBasis {
            order,
            interior: interior.to_vec(),
            boundary,
            natural,
            knots,
            dim: raw_dim,
            constraint_map: None,
        };
        if natural {
            basis.install_natural_constraint();
        }
        Ok(basis)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn natural(&self) -> bool {
        self.natural
    }

    pub fn boundary(&self) -> (f64, f64) {
        self.boundary
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.interior
    }

    /// Number of free coefficients.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Dimension of the unconstrained B-spline basis.
    pub fn raw_dim(&self) -> usize {
        self.interior.len() + self.order
    }

    /// Basis values at `t`, length [`SplineBasis::dim`]. `t` must lie in the
    /// closed boundary interval; the right endpoint uses the left limit.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let raw_dim = self.raw_dim();
        let (start, vals) = basis_values(&self.knots, self.order, t);
        match &self.constraint_map {
            None => {
                let mut out = vec![0.0; raw_dim];
                out[start..start + vals.len()].copy_from_slice(&vals);
                out
            }
            Some(map) => {
                let mut out = vec![0.0; self.dim];
                for (off, &v) in vals.iter().enumerate() {
                    if v != 0.0 {
                        for (o, &m) in out.iter_mut().zip(&map[start + off]) {
                            *o += v * m;
                        }
                    }
                }
                out
            }
        }
    }

    /// Interior knots strictly inside `(a, b)`, for splitting quadrature
    /// intervals where the integrand loses smoothness.
    pub fn breakpoints_in(&self, a: f64, b: f64) -> Vec<f64> {
        assert!(a <= b, "breakpoints_in needs a <= b, got ({a}, {b})");
        self.interior
            .iter()
            .copied()
            .filter(|&k| k > a && k < b)
            .collect()
    }

    /// Coefficient vector reproducing the constant function `value` exactly.
    /// Thanks to partition of unity (and the constraint construction, which
    /// preserves it) this is `value` in every slot.
    pub fn coefficients_for_constant(&self, value: f64) -> Vec<f64> {
        vec![value; self.dim]
    }

    /// Second derivatives of every raw basis function at `t`; used to build
    /// the natural constraint and exposed for boundary diagnostics.
    pub fn raw_second_derivs(&self, t: f64) -> Vec<f64> {
        let m = self.raw_dim();
        let l = self.order;
        let mut out = vec![0.0; m];
        if l < 3 {
            return out; // piecewise linear: second derivative is zero a.e.
        }
        let trimmed1 = &self.knots[1..self.knots.len() - 1];
        let trimmed2 = &self.knots[2..self.knots.len() - 2];
        let (start, vals) = basis_values(trimmed2, l - 2, t);
        for k in 0..m {
            let mut c = vec![0.0; m];
            c[k] = 1.0;
            let c1 = deriv_coeffs(&c, &self.knots, l);
            let c2 = deriv_coeffs(&c1, trimmed1, l - 1);
            out[k] = vals
                .iter()
                .enumerate()
                .map(|(j, &v)| v * c2[start + j])
                .sum();
        }
        out
    }

    fn install_natural_constraint(&mut self) {
        let m = self.raw_dim();
        let (a, b) = self.boundary;
        let d2a = self.raw_second_derivs(a);
        let d2b = self.raw_second_derivs(b);
        // Clamped bases have d2a[0] != 0 and d2b[m-1] != 0, so the first and
        // last raw coefficients can be solved from the two constraints.
        debug_assert!(d2a[0] != 0.0 && d2b[m - 1] != 0.0);
        let dim = m - 2;
        let mut map = vec![vec![0.0; dim]; m];
        for (j, free) in (1..m - 1).enumerate() {
            map[free][j] = 1.0;
            map[0][j] = -d2a[free] / d2a[0];
            map[m - 1][j] = -d2b[free] / d2b[m - 1];
        }
        self.dim = dim;
        self.constraint_map = Some(map);
    }
}

/// Interior knot count from the rate-optimal sieve growth `n^{3/(3+10k)}`
/// with smoothness `k = 2`, floored at 2.
pub fn default_interior_knot_count(n: usize) -> usize {
    let nu = 3.0 / (3.0 + 10.0 * 2.0);
    ((n as f64).powf(nu).ceil() as usize).max(2)
}

/// `count` knots at evenly spaced quantiles of `values` (duplicates and
/// boundary collisions dropped).
pub fn quantile_knots(values: &[f64], count: usize, boundary: (f64, f64)) -> Vec<f64> {
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut knots = Vec::with_capacity(count);
    if sorted.is_empty() {
        return knots;
    }
    for i in 1..=count {
        let q = i as f64 / (count + 1) as f64;
        let pos = q * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let frac = pos - lo as f64;
        let v = if lo + 1 < sorted.len() {
            sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
        } else {
            sorted[lo]
        };
        if v > boundary.0 && v < boundary.1 && knots.last().is_none_or(|&last| v > last) {
            knots.push(v);
        }
    }
    knots
}

/// Nonzero basis values of the given order at `t` on a general knot vector.
/// Returns `(first_index, values)`; `values.len() == order`.
fn basis_values(knots: &[f64], order: usize, t: f64) -> (usize, Vec<f64>) {
    let n_basis = knots.len() - order;
    let degree = order - 1;
    let span = if t >= knots[n_basis] {
        n_basis - 1 // left limit at (or beyond) the right boundary
    } else {
        let mut lo = degree;
        let mut hi = n_basis;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if knots[mid] <= t {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };

    let mut vals = vec![0.0; order];
    vals[0] = 1.0;
    let mut left = vec![0.0; order];
    let mut right = vec![0.0; order];
    for j in 1..=degree {
        left[j] = t - knots[span + 1 - j];
        right[j] = knots[span + j] - t;
        let mut saved = 0.0;
        for r in 0..j {
            let den = right[r + 1] + left[j - r];
            let temp = if den != 0.0 { vals[r] / den } else { 0.0 };
            vals[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        vals[j] = saved;
    }
    (span - degree, vals)
}

/// Coefficients of the derivative spline: order drops by one and the knot
/// vector loses its first and last entry.
fn deriv_coeffs(coeffs: &[f64], knots: &[f64], order: usize) -> Vec<f64> {
    let m = coeffs.len();
    let p = (order - 1) as f64;
    (0..m - 1)
        .map(|i| {
            let den = knots[i + order] - knots[i + 1];
            if den > 0.0 {
                p * (coeffs[i + 1] - coeffs[i]) / den
            } else {
                0.0
            }
        })
        .collect()
}
