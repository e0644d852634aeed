//! Forward curves spanned by three tent-shaped building blocks, with
//! closed-form zero-coupon and swap prices and their curve sensitivities.
//!
//! A curve observed at time `t` is `f(t, s) = Σ θ_i h^i(s - t)`, where `h¹`
//! is flat at 1 on the short end and ramps down, `h³` ramps up to 1 on the
//! long end, and `h² = 1 - h¹ - h³` is the tent in between. Every quantity
//! below is exact: the blocks are piecewise linear, so their integrals are
//! piecewise quadratic and need no quadrature.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::scalar::Real;

/// Curve coordinates `(θ1, θ2, θ3)`: short, medium and long segment levels.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Theta<S>(pub [S; 3]);

impl<S: Real> Theta<S> {
    pub fn new(t1: S, t2: S, t3: S) -> Self {
        Theta([t1, t2, t3])
    }

    pub fn flat(c: S) -> Self {
        Theta([c; 3])
    }

    pub fn zero() -> Self {
        Theta([S::zero(); 3])
    }

    /// Copy with component `i` (0-based) shifted by `h`.
    pub fn bumped(&self, i: usize, h: S) -> Self {
        let mut out = *self;
        out.0[i] = out.0[i] + h;
        out
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl<S> std::ops::Index<usize> for Theta<S> {
    type Output = S;
    fn index(&self, i: usize) -> &S {
        &self.0[i]
    }
}

/// The breakpoints `t1 < t2 < t3 < t4` of the three building blocks, and the
/// curve horizon `T`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TenorBasis<S> {
    pub t1: S,
    pub t2: S,
    pub t3: S,
    pub t4: S,
    pub horizon: S,
}

impl<S: Real> TenorBasis<S> {
    pub fn new(t1: S, t2: S, t3: S, t4: S, horizon: S) -> Result<Self> {
        let ok = t1 >= S::zero() && t1 < t2 && t2 < t3 && t3 < t4 && t4 <= horizon;
        if !ok {
            return Err(Error::invalid(format!(
                "tenor breakpoints must satisfy 0 <= t1 < t2 < t3 < t4 <= T, got ({t1}, {t2}, {t3}, {t4}), T={horizon}"
            )));
        }
        Ok(TenorBasis { t1, t2, t3, t4, horizon })
    }

    /// Breakpoints (1, 5, 15, 25) on a 30-year horizon.
    pub fn default_30y() -> Self {
        Self::new(S::lit(1.0), S::lit(5.0), S::lit(15.0), S::lit(25.0), S::lit(30.0))
            .expect("valid default tenor basis")
    }

    fn knots(&self) -> (S, S, S) {
        let half = S::lit(0.5);
        (
            (self.t1 + self.t2) * half,
            (self.t2 + self.t3) * half,
            (self.t3 + self.t4) * half,
        )
    }

    /// Value of building block `i ∈ {0,1,2}` at time offset `u`.
    pub fn value(&self, i: usize, u: S) -> S {
        let (p1, p2, p3) = self.knots();
        let h1 = if u <= p1 {
            S::one()
        } else if u <= p2 {
            (p2 - u) / (p2 - p1)
        } else {
            S::zero()
        };
        let h3 = if u <= p2 {
            S::zero()
        } else if u <= p3 {
            (u - p2) / (p3 - p2)
        } else {
            S::one()
        };
        match i {
            0 => h1,
            1 => S::one() - h1 - h3,
            2 => h3,
            _ => panic!("building block index {i} out of range"),
        }
    }

    /// Right derivative of building block `i` at offset `u`.
    pub fn slope(&self, i: usize, u: S) -> S {
        let (p1, p2, p3) = self.knots();
        let d1 = if u >= p1 && u < p2 { -S::one() / (p2 - p1) } else { S::zero() };
        let d3 = if u >= p2 && u < p3 { S::one() / (p3 - p2) } else { S::zero() };
        match i {
            0 => d1,
            1 => -d1 - d3,
            2 => d3,
            _ => panic!("building block index {i} out of range"),
        }
    }

    /// `∫_0^w h^i(v) dv` for `w ≥ 0`.
    fn primitive(&self, i: usize, w: S) -> S {
        let (p1, p2, p3) = self.knots();
        let two = S::lit(2.0);
        let w = w.max(S::zero());
        let big_h1 = if w <= p1 {
            w
        } else if w <= p2 {
            let len = p2 - p1;
            p1 + (len * len - (p2 - w) * (p2 - w)) / (two * len)
        } else {
            p1 + (p2 - p1) / two
        };
        let big_h3 = if w <= p2 {
            S::zero()
        } else if w <= p3 {
            (w - p2) * (w - p2) / (two * (p3 - p2))
        } else {
            (p3 - p2) / two + (w - p3)
        };
        match i {
            0 => big_h1,
            1 => w - big_h1 - big_h3,
            2 => big_h3,
            _ => panic!("building block index {i} out of range"),
        }
    }

    /// `∫_a^b h^{t,i}(s) ds` for `t ≤ a ≤ b`, the block shifted to start at `t`.
    pub fn integral_between(&self, i: usize, t: S, a: S, b: S) -> S {
        self.primitive(i, b - t) - self.primitive(i, a - t)
    }

    /// `∫_t^u h^{t,i}(s) ds`.
    pub fn integral(&self, i: usize, t: S, u: S) -> S {
        self.primitive(i, u - t)
    }

    /// All three block integrals over `[t, u]`.
    pub fn integrals(&self, t: S, u: S) -> Vec3<S> {
        [self.integral(0, t, u), self.integral(1, t, u), self.integral(2, t, u)]
    }

    /// `f^Θ(t, s)`; requires `t ≤ s ≤ T`.
    pub fn forward_rate(&self, t: S, s: S, theta: &Theta<S>) -> Result<S> {
        if !(t <= s && s <= self.horizon && t >= S::zero()) {
            return Err(Error::invalid(format!(
                "forward rate needs 0 <= t <= s <= T, got t={t}, s={s}, T={}",
                self.horizon
            )));
        }
        Ok(self.forward_unchecked(t, s, theta))
    }

    pub(crate) fn forward_unchecked(&self, t: S, s: S, theta: &Theta<S>) -> S {
        let u = s - t;
        theta[0] * self.value(0, u) + theta[1] * self.value(1, u) + theta[2] * self.value(2, u)
    }

    /// `∂f^Θ(t, s)/∂s` (right derivative at the knots).
    pub fn forward_slope(&self, t: S, s: S, theta: &Theta<S>) -> S {
        let u = s - t;
        theta[0] * self.slope(0, u) + theta[1] * self.slope(1, u) + theta[2] * self.slope(2, u)
    }

    /// `∫_t^u f^Θ(t, s) ds`.
    pub fn forward_integral(&self, t: S, u: S, theta: &Theta<S>) -> S {
        let w = self.integrals(t, u);
        theta[0] * w[0] + theta[1] * w[1] + theta[2] * w[2]
    }

    /// Zero-coupon price `P^{t,Θ,u} = exp(-∫_t^u f^Θ(t,s) ds)` for `t ≤ u`.
    pub fn zc_price(&self, t: S, theta: &Theta<S>, u: S) -> S {
        debug_assert!(t <= u, "zero-coupon maturity before observation");
        (-self.forward_integral(t, u, theta)).exp()
    }

    /// `∂P^{t,Θ,u}/∂θ_i = -P ∫_t^u h^{t,i}`.
    pub fn zc_dtheta(&self, t: S, theta: &Theta<S>, u: S) -> Vec3<S> {
        let p = self.zc_price(t, theta, u);
        let w = self.integrals(t, u);
        [-p * w[0], -p * w[1], -p * w[2]]
    }

    /// Price at `t` of the swap issued at 0 under `theta0`.
    pub fn swap_price(&self, t: S, theta: &Theta<S>, theta0: &Theta<S>, swap: &SwapSpec<S>) -> S {
        let one = S::one();
        let float_leg = self.zc_price(t, theta, one) / self.zc_price(S::zero(), theta0, one);
        let maturity = S::from_u32(swap.maturity).expect("maturity representable");
        let annuity: S = (1..=swap.maturity)
            .map(|i| self.zc_price(t, theta, S::from_u32(i).unwrap()))
            .sum();
        float_leg - self.zc_price(t, theta, maturity) - swap.rate * annuity
    }

    /// Curve sensitivities of [`swap_price`](Self::swap_price), term by term.
    /// Coupon terms use `∫_t^i h` for the bond maturing at absolute time `i`.
    pub fn swap_dtheta(
        &self,
        t: S,
        theta: &Theta<S>,
        theta0: &Theta<S>,
        swap: &SwapSpec<S>,
    ) -> Vec3<S> {
        let one = S::one();
        let scale = S::one() / self.zc_price(S::zero(), theta0, one);
        let d_float = self.zc_dtheta(t, theta, one);
        let maturity = S::from_u32(swap.maturity).unwrap();
        let d_final = self.zc_dtheta(t, theta, maturity);
        let mut out = [S::zero(); 3];
        for j in 0..3 {
            out[j] = d_float[j] * scale - d_final[j];
        }
        for i in 1..=swap.maturity {
            let d = self.zc_dtheta(t, theta, S::from_u32(i).unwrap());
            for j in 0..3 {
                out[j] = out[j] - swap.rate * d[j];
            }
        }
        out
    }
}

/// Payer-style swap issued at time 0 with annual coupons at `1..=maturity`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwapSpec<S> {
    pub maturity: u32,
    pub rate: S,
}

impl<S: Real> SwapSpec<S> {
    pub fn new(maturity: u32, rate: S) -> Result<Self> {
        if maturity < 1 {
            return Err(Error::invalid("swap maturity must be at least one year"));
        }
        Ok(SwapSpec { maturity, rate })
    }

    /// The swap struck at its par rate at issue, `(1 - P(0,M)) / Σ P(0,i)`.
    pub fn at_par(basis: &TenorBasis<S>, theta0: &Theta<S>, maturity: u32) -> Result<Self> {
        let m = S::from_u32(maturity).unwrap();
        let annuity: S = (1..=maturity)
            .map(|i| basis.zc_price(S::zero(), theta0, S::from_u32(i).unwrap()))
            .sum();
        Self::new(maturity, (S::one() - basis.zc_price(S::zero(), theta0, m)) / annuity)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn basis() -> TenorBasis<f64> {
        TenorBasis::default_30y()
    }

    /// Adaptive Simpson quadrature.
    fn quad(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
            (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
        }
        fn rec(f: &impl Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (l, r) = (simpson(f, a, m), simpson(f, m, b));
            if depth == 0 || (l + r - whole).abs() <= 15.0 * tol {
                return l + r + (l + r - whole) / 15.0;
            }
            rec(f, a, m, l, tol / 2.0, depth - 1) + rec(f, m, b, r, tol / 2.0, depth - 1)
        }
        rec(f, a, b, simpson(f, a, b), 1e-15, 60)
    }

    #[test]
    fn block_values_at_breakpoints() {
        let b = basis();
        assert_eq!(b.value(0, 0.0), 1.0);
        assert_eq!(b.value(2, 20.0), 1.0);
        assert_eq!(b.value(2, 29.0), 1.0);
        // (t2+t3)/2 = 10: h1 = h3 = 0
        assert_eq!(b.value(1, 10.0), 1.0);
        assert_eq!(b.value(0, 10.0), 0.0);
        assert_eq!(b.value(2, 10.0), 0.0);
    }

    #[test]
    fn partition_of_unity_and_shape() {
        let b = basis();
        let mut prev1 = 1.0;
        let mut prev3 = 0.0;
        for k in 0..=3000 {
            let u = k as f64 * 0.01;
            let (h1, h2, h3) = (b.value(0, u), b.value(1, u), b.value(2, u));
            assert!((h1 + h2 + h3 - 1.0).abs() < 1e-15);
            for h in [h1, h2, h3] {
                assert!((-1e-15..=1.0 + 1e-15).contains(&h));
            }
            assert!(h1 <= prev1 && h3 >= prev3);
            prev1 = h1;
            prev3 = h3;
        }
    }

    #[test]
    fn forward_rate_cases() {
        let b = basis();
        let c = Theta::flat(0.023);
        for s in [0.0, 2.0, 7.5, 13.0, 29.0] {
            assert_relative_eq!(b.forward_rate(0.0, s, &c).unwrap(), 0.023, epsilon = 1e-15);
        }
        assert_eq!(b.forward_rate(0.3, 12.0, &Theta::zero()).unwrap(), 0.0);
        let th = Theta::new(0.01, 0.03, 0.02);
        assert_eq!(b.forward_rate(0.0, 0.0, &th).unwrap(), 0.01);
        assert!(b.forward_rate(2.0, 1.0, &th).is_err());
        assert!(b.forward_rate(0.0, 31.0, &th).is_err());
    }

    #[test]
    fn block_integrals_match_quadrature() {
        let b = basis();
        assert_eq!(b.integral(0, 0.4, 2.9), 2.5);
        assert_eq!(b.integral(2, 0.2, 9.0), 0.0);
        for &(t, u) in &[(0.0, 30.0), (0.5, 7.3), (1.0, 12.0), (0.25, 21.7), (0.9, 4.0)] {
            for i in 0..3 {
                let exact = b.integral(i, t, u);
                let q = quad(&|s| b.value(i, s - t), t, u);
                assert!((exact - q).abs() < 1e-12,
                    "i={i} t={t} u={u}: {exact} vs {q}");
            }
        }
    }

    #[test]
    fn zero_coupon_cases() {
        let b = basis();
        assert_eq!(b.zc_price(0.0, &Theta::zero(), 12.0), 1.0);
        assert_relative_eq!(b.zc_price(0.5, &Theta::flat(0.03), 10.5), (-0.3f64).exp(), epsilon = 1e-15);
        let th = Theta::new(0.01, 0.03, 0.02);
        assert_eq!(b.zc_price(0.7, &th, 0.7), 1.0);
        assert_eq!(b.zc_dtheta(0.7, &th, 0.7), [0.0, 0.0, 0.0]);
        let d = b.zc_dtheta(0.0, &Theta::zero(), 17.0);
        for i in 0..3 {
            assert_eq!(d[i], -b.integral(i, 0.0, 17.0));
        }
    }

    #[test]
    fn zero_coupon_sensitivities_match_finite_differences() {
        let b = basis();
        let th = Theta::new(0.012, 0.031, 0.018);
        let h = 1e-6;
        for &(t, u) in &[(0.0, 1.0), (0.3, 5.0), (1.0, 15.0), (0.6, 30.0)] {
            let d = b.zc_dtheta(t, &th, u);
            for i in 0..3 {
                let fd = (b.zc_price(t, &th.bumped(i, h), u) - b.zc_price(t, &th.bumped(i, -h), u))
                    / (2.0 * h);
                if fd.abs() < 1e-12 {
                    assert!(d[i].abs() < 1e-10);
                } else {
                    assert!(((d[i] - fd) / fd).abs() < 1e-6, "t={t} u={u} i={i}");
                }
            }
        }
    }

    #[test]
    fn swap_price_cases() {
        let b = basis();
        let th0 = Theta::new(0.01, 0.03, 0.01);
        let s = SwapSpec::new(1, 0.0).unwrap();
        assert_relative_eq!(b.swap_price(0.0, &th0, &th0, &s), 1.0 - b.zc_price(0.0, &th0, 1.0), epsilon = 1e-15);
        let z = Theta::zero();
        let s = SwapSpec::new(7, 0.025).unwrap();
        assert_relative_eq!(b.swap_price(0.0, &z, &z, &s), -0.025 * 7.0, epsilon = 1e-15);

        // term-by-term re-evaluation
        let th = Theta::new(0.013, 0.028, 0.015);
        let s = SwapSpec::new(15, 0.021).unwrap();
        let t = 0.4;
        let mut manual = b.zc_price(t, &th, 1.0) / b.zc_price(0.0, &th0, 1.0) - b.zc_price(t, &th, 15.0);
        for i in 1..=15 {
            manual -= 0.021 * b.zc_price(t, &th, i as f64);
        }
        assert_relative_eq!(b.swap_price(t, &th, &th0, &s), manual, epsilon = 1e-14);
        assert!(SwapSpec::<f64>::new(0, 0.01).is_err());
    }

    #[test]
    fn par_swap_is_worth_zero_at_issue() {
        let b = basis();
        let th0 = Theta::new(0.01, 0.03, 0.01);
        for m in [5, 15, 30] {
            let s = SwapSpec::at_par(&b, &th0, m).unwrap();
            assert!(b.swap_price(0.0, &th0, &th0, &s).abs() < 1e-15);
        }
    }

    #[test]
    fn swap_sensitivities_match_finite_differences() {
        let b = basis();
        let th0 = Theta::new(0.01, 0.03, 0.01);
        let th = Theta::new(0.012, 0.027, 0.013);
        let h = 1e-6;
        for m in [1, 5, 15, 30] {
            let s = SwapSpec::new(m, 0.02).unwrap();
            for t in [0.0, 0.25, 0.5, 1.0] {
                let d = b.swap_dtheta(t, &th, &th0, &s);
                for i in 0..3 {
                    let fd = (b.swap_price(t, &th.bumped(i, h), &th0, &s)
                        - b.swap_price(t, &th.bumped(i, -h), &th0, &s))
                        / (2.0 * h);
                    if fd.abs() < 1e-9 {
                        assert!(d[i].abs() < 1e-8, "m={m} t={t} i={i}: {} vs {fd}", d[i]);
                    } else {
                        assert!(((d[i] - fd) / fd).abs() < 1e-6, "m={m} t={t} i={i}: {} vs {fd}", d[i]);
                    }
                }
            }
        }
    }

    #[test]
    fn swap_sensitivity_hand_evaluation_in_flat_region() {
        // All maturities below (t1+t2)/2 = 3: only θ1 matters and ∫h¹ = u - t.
        let b = basis();
        let z = Theta::zero();
        let s = SwapSpec::new(2, 0.03).unwrap();
        let t = 0.5;
        let d = b.swap_dtheta(t, &z, &z, &s);
        let expected = -(1.0 - t) + (2.0 - t) + 0.03 * ((1.0 - t) + (2.0 - t));
        assert_relative_eq!(d[0], expected, epsilon = 1e-14);
        assert_eq!(d[1], 0.0);
        assert_eq!(d[2], 0.0);
        // unit maturity observed at t = 1: both zero-coupon factors have u = t
        let s1 = SwapSpec::new(1, 0.0).unwrap();
        assert_eq!(b.swap_dtheta(1.0, &Theta::new(0.01, 0.02, 0.03), &z, &s1), [0.0; 3]);
    }

    #[test]
    fn swap_price_is_affine_in_rate() {
        let b = basis();
        let th0 = Theta::new(0.01, 0.03, 0.01);
        let th = Theta::new(0.011, 0.029, 0.012);
        let t = 0.7;
        let annuity: f64 = (1..=15).map(|i| b.zc_price(t, &th, i as f64)).sum();
        let p0 = b.swap_price(t, &th, &th0, &SwapSpec::new(15, 0.0).unwrap());
        let p1 = b.swap_price(t, &th, &th0, &SwapSpec::new(15, 0.04).unwrap());
        assert_relative_eq!((p1 - p0) / 0.04, -annuity, epsilon = 1e-12);
    }

    #[test]
    fn works_in_single_precision() {
        let b = TenorBasis::<f32>::default_30y();
        let p = b.zc_price(0.0, &Theta::flat(0.02f32), 10.0);
        assert!((p - (-0.2f32).exp()).abs() < 1e-6);
    }
}
