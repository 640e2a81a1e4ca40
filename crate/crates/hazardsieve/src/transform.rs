//! The Box-Cox transform family: `H = G^{-1}` mapping the linear predictor
//! back to the hazard scale, together with the derivative combinations the
//! likelihood and variance estimators need.
//!
//! For index `s = 0`, `H(y) = exp(y)`. For `s > 0` the natural form is
//! `H(y) = (1 + s y)^{1/s}` on `1 + s y > 0`. Below the point where `H`
//! would reach `floor_eps`, that form is replaced by the exponential
//! extension `c1 exp(c2 y)` matched in value and first derivative, so `H`
//! is a total, strictly positive, C^1 function and line searches can never
//! step outside the domain.

use serde::{Deserialize, Serialize};

/// Smallest value `H` is allowed to return. The extension branch decays so
/// fast that `exp` underflows; flooring at the smallest positive normal
/// keeps `H > 0` for every finite argument.
const ABS_FLOOR: f64 = f64::MIN_POSITIVE;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxCox {
    s: f64,
    floor_eps: f64,
    /// `floor_eps^s`: value of `1 + s y` at the extension switch.
    switch_u: f64,
    /// `y` at the switch point, `(floor_eps^s - 1) / s`.
    switch_y: f64,
}

impl BoxCox {
    pub fn new(s: f64) -> Self {
        Self::with_floor(s, 1e-8)
    }

    pub fn with_floor(s: f64, floor_eps: f64) -> Self {
        assert!(s >= 0.0 && s.is_finite(), "Box-Cox index must be >= 0");
        assert!(
            floor_eps > 0.0 && floor_eps < 1.0,
            "floor_eps must be in (0, 1)"
        );
        let (switch_u, switch_y) = if s == 0.0 {
            (0.0, f64::NEG_INFINITY)
        } else {
            let u = floor_eps.powf(s);
            (u, (u - 1.0) / s)
        };
        BoxCox {
            s,
            floor_eps,
            switch_u,
            switch_y,
        }
    }

    pub fn index(&self) -> f64 {
        self.s
    }

    /// True when `y` falls on the exponential extension rather than the
    /// natural Box-Cox branch. Used post-fit to flag barrier contact.
    pub fn on_extension(&self, y: f64) -> bool {
        self.s > 0.0 && y < self.switch_y
    }

    /// `H(y)`, total and strictly positive.
    pub fn value(&self, y: f64) -> f64 {
        if self.s == 0.0 {
            return y.exp().max(ABS_FLOOR);
        }
        if y < self.switch_y {
            return self.extension_value(y);
        }
        self.natural_value(y)
    }

    /// `H'(y)`, the exact derivative of [`BoxCox::value`] including the
    /// extension branch; strictly positive.
    pub fn deriv(&self, y: f64) -> f64 {
        if self.s == 0.0 {
            return y.exp().max(ABS_FLOOR);
        }
        if y < self.switch_y {
            // multiply by the reciprocal so this agrees bit-for-bit with all()
            return self.extension_value(y) * (1.0 / self.switch_u);
        }
        self.natural_value(y) / (1.0 + self.s * y)
    }

    /// `(H'/H, H'^2/H)` in one pass; both finite and positive.
    pub fn ratios(&self, y: f64) -> (f64, f64) {
        if self.s == 0.0 {
            return (1.0, y.exp().max(ABS_FLOOR));
        }
        if y < self.switch_y {
            let h = self.extension_value(y);
            let inv = 1.0 / self.switch_u;
            return (inv, h * inv * inv);
        }
        let u = 1.0 + self.s * y;
        let h = self.natural_value(y);
        (1.0 / u, h / (u * u))
    }

    /// `(H, H', H'/H, H'^2/H)` together; the likelihood hot path wants all
    /// four without recomputing the power.
    pub fn all(&self, y: f64) -> (f64, f64, f64, f64) {
        if self.s == 0.0 {
            let h = y.exp().max(ABS_FLOOR);
            return (h, h, 1.0, h);
        }
        if y < self.switch_y {
            let h = self.extension_value(y);
            let inv = 1.0 / self.switch_u;
            return (h, h * inv, inv, h * inv * inv);
        }
        let u = 1.0 + self.s * y;
        let h = self.natural_value(y);
        (h, h / u, 1.0 / u, h / (u * u))
    }

    /// `G(x) = (x^s - 1)/s` (or `log x` at `s = 0`): the forward transform,
    /// needed to initialize the baseline at a crude hazard rate.
    pub fn forward(&self, x: f64) -> f64 {
        assert!(x > 0.0, "forward transform needs a positive hazard");
        if self.s == 0.0 {
            x.ln()
        } else {
            (x.powf(self.s) - 1.0) / self.s
        }
    }

    fn natural_value(&self, y: f64) -> f64 {
        let s = self.s;
        if s == 1.0 {
            1.0 + y
        } else if s == 0.5 {
            let u = 1.0 + 0.5 * y;
            u * u
        } else {
            // (1 + s y)^{1/s} via log1p for accuracy as s -> 0
            ((self.s * y).ln_1p() / s).exp()
        }
    }

    fn extension_value(&self, y: f64) -> f64 {
        let t = (y - self.switch_y) / self.switch_u;
        (self.floor_eps * t.exp()).max(ABS_FLOOR)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    const S_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

    #[test]
    fn value_examples() {
        assert_abs_diff_eq!(BoxCox::new(0.0).value(0.0), 1.0, epsilon = 0.0);
        assert_abs_diff_eq!(BoxCox::new(1.0).value(0.5), 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(BoxCox::new(0.5).value(1.0), 2.25, epsilon = 1e-15);
    }

    #[test]
    fn deriv_examples() {
        assert_abs_diff_eq!(BoxCox::new(0.0).deriv(0.0), 1.0, epsilon = 0.0);
        assert_abs_diff_eq!(BoxCox::new(1.0).deriv(0.3), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(BoxCox::new(1.0).deriv(-0.4), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(BoxCox::new(0.5).deriv(1.0), 1.5, epsilon = 1e-15);
    }

    #[test]
    fn ratio_examples() {
        let (h1, h2) = BoxCox::new(0.0).ratios(0.0);
        assert_eq!((h1, h2), (1.0, 1.0));
        let (h1, h2) = BoxCox::new(1.0).ratios(1.0);
        assert_abs_diff_eq!(h1, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(h2, 0.5, epsilon = 1e-15);
        let (h1, h2) = BoxCox::new(0.5).ratios(0.0);
        assert_abs_diff_eq!(h1, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(h2, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn deriv_matches_finite_differences_on_natural_branch() {
        // central differences, step tuned for ~1e-10 truncation error
        for &s in &S_GRID {
            let tr = BoxCox::new(s);
            for i in 0..40 {
                let y = -1.0 + 0.125 * i as f64; // stays well above the switch
                if s > 0.0 && 1.0 + s * y < 0.05 {
                    continue;
                }
                let step = 1e-6 * (1.0 + y.abs());
                let fd = (tr.value(y + step) - tr.value(y - step)) / (2.0 * step);
                assert_relative_eq!(tr.deriv(y), fd, max_relative = 1e-7);
            }
        }
    }

    #[test]
    fn value_and_deriv_continuous_across_switch() {
        // step small relative to the extension's 1/switch_u log-slope, so a
        // genuine jump would dwarf the smooth change
        for &s in &[0.25, 0.5, 0.75, 1.0] {
            let tr = BoxCox::new(s);
            let y = tr.switch_y;
            let eps = 1e-7 * tr.switch_u;
            assert_relative_eq!(tr.value(y - eps), tr.value(y + eps), max_relative = 1e-5);
            assert_relative_eq!(tr.deriv(y - eps), tr.deriv(y + eps), max_relative = 1e-5);
            assert_relative_eq!(tr.value(y), 1e-8, max_relative = 1e-9);
        }
    }

    #[test]
    fn positive_over_huge_range() {
        for &s in &S_GRID {
            let tr = BoxCox::new(s);
            for &y in &[-1e6, -1e3, -5.0, 0.0, 5.0, 1e3, 1e6] {
                let h = tr.value(y);
                assert!(h > 0.0, "H({y}) = {h} not positive at s={s}");
                assert!(tr.deriv(y) > 0.0);
            }
        }
    }

    #[test]
    fn strictly_monotone_on_representable_range() {
        // 1000 ordered pairs per s, drawn from the natural branch plus a
        // few floors' worth of the extension, where f64 can represent the
        // strict ordering.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for &s in &S_GRID {
            let tr = BoxCox::new(s);
            let lo = if s == 0.0 {
                -6.0
            } else {
                tr.switch_y - 5.0 * tr.switch_u
            };
            for _ in 0..1000 {
                let a = rng.random_range(lo..6.0);
                let b = rng.random_range(lo..6.0);
                let (y1, y2) = if a < b { (a, b) } else { (b, a) };
                if y1 == y2 {
                    continue;
                }
                assert!(
                    tr.value(y1) < tr.value(y2),
                    "H not strictly increasing at s={s}: H({y1})={}, H({y2})={}",
                    tr.value(y1),
                    tr.value(y2)
                );
            }
        }
    }

    #[test]
    fn small_s_approaches_exponential() {
        let tr = BoxCox::with_floor(1e-8, 1e-8);
        for i in 0..=40 {
            let y = -2.0 + 0.1 * i as f64;
            assert_relative_eq!(tr.value(y), y.exp(), max_relative = 1e-6);
        }
    }

    #[test]
    fn forward_inverts_value() {
        for &s in &S_GRID {
            let tr = BoxCox::new(s);
            for &lambda in &[0.1, 0.5, 1.0, 2.5] {
                assert_relative_eq!(tr.value(tr.forward(lambda)), lambda, max_relative = 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn ratios_consistent_with_value_and_deriv(
            s in prop::sample::select(vec![0.0, 0.25, 0.5, 0.75, 1.0]),
            y in -3.0f64..5.0,
        ) {
            let tr = BoxCox::new(s);
            let (h1, h2) = tr.ratios(y);
            let h = tr.value(y);
            let d = tr.deriv(y);
            prop_assert!((h1 - d / h).abs() <= 1e-14 * h1.abs().max(1.0));
            prop_assert!((h2 - d * d / h).abs() <= 1e-14 * h2.abs().max(1.0));
            let (v, dv, r1, r2) = tr.all(y);
            prop_assert_eq!(v, h);
            prop_assert_eq!(dv, d);
            prop_assert_eq!(r1, h1);
            prop_assert_eq!(r2, h2);
        }
    }
}
