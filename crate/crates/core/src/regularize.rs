//! Cut-off functions and spectral projections.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{SpectralField, TWO_PI};

/// Discrete constant of the Poincare-type inequalities.
pub const POINCARE_CONSTANT: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffFamily {
    /// `C^2` quintic smoothstep.
    #[default]
    Quintic,
    /// `C^inf` ratio built from `exp(-1/t)`.
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutoffSpec {
    pub radius: f64,
    #[serde(default)]
    pub family: CutoffFamily,
}

impl CutoffSpec {
    pub fn new(radius: f64, family: CutoffFamily) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidArgument(format!("cut-off radius must be positive, got {radius}")));
        }
        Ok(CutoffSpec { radius, family })
    }

    /// Upper bound on the slope of the transition.
    pub fn lipschitz_bound(&self) -> Option<f64> {
        match self.family {
            CutoffFamily::Quintic => Some(15.0 / (4.0 * self.radius)),
            CutoffFamily::Exponential => None,
        }
    }
}

fn g(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        (-1.0 / t).exp()
    }
}

/// Non-increasing switch: 1 on `[0, r/2]`, 0 on `[r, inf)`. A NaN argument
/// switches off.
pub fn theta(x: f64, spec: &CutoffSpec) -> f64 {
    let half = 0.5 * spec.radius;
    if x.is_nan() || x >= spec.radius {
        return 0.0;
    }
    if x <= half {
        return 1.0;
    }
    let t = (x - half) / half;
    match spec.family {
        CutoffFamily::Quintic => 1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t),
        CutoffFamily::Exponential => {
            let a = g(1.0 - t);
            a / (a + g(t))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSpec {
    pub n: f64,
}

impl ProjectionSpec {
    pub fn new(n: f64) -> Result<Self> {
        if !(n > 0.0) {
            return Err(Error::InvalidArgument(format!("projection radius must be positive, got {n}")));
        }
        Ok(ProjectionSpec { n })
    }

    /// `|k| <= n`, with a relative slack of 1e-12 so that radii given as
    /// multiples of `2 pi` keep the modes on the circle.
    pub fn keeps(&self, k1: f64, k2: f64) -> bool {
        k1 * k1 + k2 * k2 <= self.n * self.n * (1.0 + 1e-12)
    }
}

/// `P_n f`: drop every coefficient with `|k| > n`.
pub fn spectral_projection(f: &SpectralField, n: f64) -> Result<SpectralField> {
    let p = ProjectionSpec::new(n)?;
    Ok(f.filter_modes(|m1, m2| p.keeps(TWO_PI * m1 as f64, TWO_PI * m2 as f64)))
}

/// `(sum (1 + |k|^(2m)) |f_k|^2)^(1/2)`.
pub fn fourier_hm_norm(f: &SpectralField, m: u32) -> f64 {
    let g = f.grid();
    f.coeffs()
        .iter()
        .enumerate()
        .map(|(idx, c)| {
            let (k1, k2) = g.wavevector(idx);
            (1.0 + (k1 * k1 + k2 * k2).powi(m as i32)) * c.norm_sqr()
        })
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub lhs: f64,
    pub rhs: f64,
    /// Norm ratio compared against `bound`.
    pub ratio: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoincareReport {
    pub n: f64,
    pub m: u32,
    /// `||(I-P_n)f||_{H^m} <= (C/n) ||(I-P_n)f||_{H^(m+1)}`; `None` when the tail is empty.
    pub tail: Option<InequalityCheck>,
    /// `||P_n f||_{H^(m+1)} <= n C ||P_n f||_{H^m}`; `None` when `P_n f = 0`.
    pub head: Option<InequalityCheck>,
}

impl PoincareReport {
    pub fn tail_vacuous(&self) -> bool {
        self.tail.is_none()
    }

    pub fn head_vacuous(&self) -> bool {
        self.head.is_none()
    }

    /// Both inequalities hold or are vacuous.
    pub fn pass(&self) -> bool {
        self.tail.as_ref().is_none_or(|c| c.pass) && self.head.as_ref().is_none_or(|c| c.pass)
    }
}

/// Measures both Poincare-type inequalities in the Fourier norms
/// `(1 + |k|^(2m))` with `C = sqrt(2)`.
pub fn poincare_check(f: &SpectralField, n: f64, m: u32) -> Result<PoincareReport> {
    let head_field = spectral_projection(f, n)?;
    let tail_field = f.sub(&head_field);
    let c = POINCARE_CONSTANT;

    let tail = (!tail_field.is_zero()).then(|| {
        let lo = fourier_hm_norm(&tail_field, m);
        let hi = fourier_hm_norm(&tail_field, m + 1);
        let ratio = lo / hi;
        InequalityCheck { lhs: lo, rhs: c / n * hi, ratio, bound: c / n, pass: lo <= c / n * hi }
    });
    let head = (!head_field.is_zero()).then(|| {
        let lo = fourier_hm_norm(&head_field, m);
        let hi = fourier_hm_norm(&head_field, m + 1);
        let ratio = hi / lo;
        InequalityCheck { lhs: hi, rhs: n * c * lo, ratio, bound: n * c, pass: hi <= n * c * lo }
    });
    Ok(PoincareReport { n, m, tail, head })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::random_h_field;
    use crate::spectral::{Grid, Parity};
    use approx::assert_relative_eq;
    use rustfft::num_complex::Complex64;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quintic(r: f64) -> CutoffSpec {
        CutoffSpec::new(r, CutoffFamily::Quintic).unwrap()
    }

    fn expo(r: f64) -> CutoffSpec {
        CutoffSpec::new(r, CutoffFamily::Exponential).unwrap()
    }

    #[test]
    fn theta_examples() {
        for spec in [quintic(2.0), expo(2.0)] {
            assert_eq!(theta(0.0, &spec), 1.0);
            assert_eq!(theta(1.0, &spec), 1.0);
            assert_eq!(theta(2.0, &spec), 0.0);
            assert_eq!(theta(3.0, &spec), 0.0);
            assert_eq!(theta(f64::NAN, &spec), 0.0);
        }
        assert_relative_eq!(theta(1.5, &expo(2.0)), 0.5, epsilon = 1e-15);
        assert_relative_eq!(theta(1.5, &quintic(2.0)), 0.5, epsilon = 1e-15);
        assert!(CutoffSpec::new(0.0, CutoffFamily::Quintic).is_err());
    }

    #[test]
    fn quintic_lipschitz_by_sampling() {
        for r in [0.1, 1.0, 7.0] {
            let spec = quintic(r);
            let bound = spec.lipschitz_bound().unwrap();
            assert!(bound <= 4.0 / r);
            let n = 20_000;
            let h = 1.2 * r / n as f64;
            let mut worst = 0.0f64;
            for i in 0..n {
                let (a, b) = (i as f64 * h, (i + 1) as f64 * h);
                worst = worst.max((theta(b, &spec) - theta(a, &spec)).abs() / h);
            }
            assert!(worst <= bound * (1.0 + 1e-9), "slope {worst} > {bound}");
            assert!(worst > 0.99 * bound);
        }
    }

    proptest! {
        #[test]
        fn theta_monotone_and_bounded(r in 0.01f64..100.0, a in 0.0f64..2.0, b in 0.0f64..2.0, exp in any::<bool>()) {
            let spec = if exp { expo(r) } else { quintic(r) };
            let (x1, x2) = if a <= b { (a * r, b * r) } else { (b * r, a * r) };
            let (t1, t2) = (theta(x1, &spec), theta(x2, &spec));
            prop_assert!((0.0..=1.0).contains(&t1) && (0.0..=1.0).contains(&t2));
            prop_assert!(t1 >= t2);
        }

        #[test]
        fn projection_contracts_and_nests(seed in any::<u64>(), a in 1.0f64..40.0, b in 1.0f64..40.0) {
            let g = Grid::square(32).unwrap();
            let f = random_h_field(g, &mut ChaCha8Rng::seed_from_u64(seed), 1.0, 3.0, 10);
            let pa = spectral_projection(&f, a).unwrap();
            prop_assert!(pa.l2_norm() <= f.l2_norm() * (1.0 + 1e-14));
            let nested = spectral_projection(&pa, b).unwrap();
            let direct = spectral_projection(&f, a.min(b)).unwrap();
            prop_assert!(nested.bitwise_eq(&direct));
            prop_assert!(spectral_projection(&pa, a).unwrap().bitwise_eq(&pa));
        }
    }

    #[test]
    fn projection_examples() {
        let g = Grid::square(32).unwrap();
        let f = SpectralField::from_fn(g, Parity::Even, |x, z| 1.0 + (TWO_PI * x).cos() * (TWO_PI * z).cos()).unwrap();
        assert!(spectral_projection(&f, 100.0).unwrap().bitwise_eq(&f));
        let only_mean = spectral_projection(&f, 6.0).unwrap();
        assert!(only_mean.sub(&SpectralField::constant(g, 1.0)).max_abs_coeff() < 1e-15);
        // |k| = 2 pi sqrt 2 sits on the boundary of n = 2 pi sqrt 2
        let keep = spectral_projection(&f, TWO_PI * 2f64.sqrt()).unwrap();
        assert!(keep.sub(&f).max_abs_coeff() < 1e-15);
        assert!(keep.coeff(1, 1).norm() > 0.2);
        assert_eq!(keep.parity(), Parity::Even);
        assert!(spectral_projection(&f, 0.0).is_err());
    }

    #[test]
    fn self_adjoint() {
        let g = Grid::square(32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_h_field(g, &mut rng, 1.0, 3.0, 10);
        let h = random_h_field(g, &mut rng, 1.0, 3.0, 10);
        let n = 5.0 * TWO_PI;
        let a = spectral_projection(&f, n).unwrap().inner(&h);
        let b = f.inner(&spectral_projection(&h, n).unwrap());
        assert_relative_eq!(a, b, max_relative = 1e-13);
    }

    #[test]
    fn single_mode_tail_ratio() {
        let g = Grid::square(32).unwrap();
        let mut f = SpectralField::zeros(g, Parity::Even);
        f.set_mode(3, 4, Complex64::new(1.0, 0.0)).unwrap();
        let kk = TWO_PI * 5.0;
        for m in 0..3u32 {
            let rep = poincare_check(&f, 4.0 * TWO_PI, m).unwrap();
            let tail = rep.tail.clone().unwrap();
            let expect = ((1.0 + kk.powi(2 * m as i32)) / (1.0 + kk.powi(2 * m as i32 + 2))).sqrt();
            assert_relative_eq!(tail.ratio, expect, max_relative = 1e-12);
            assert!(rep.head_vacuous());
            assert!(rep.pass());
        }
        let inside = poincare_check(&f, 6.0 * TWO_PI, 1).unwrap();
        assert!(inside.tail_vacuous());
        assert!(inside.head.unwrap().pass);
    }

    #[test]
    fn white_field_passes() {
        let g = Grid::square(32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let f = random_h_field(g, &mut rng, 1.0, 1e9, 10);
        let rep = poincare_check(&f, 4.0 * TWO_PI, 1).unwrap();
        assert!(rep.tail.is_some() && rep.head.is_some());
        assert!(rep.pass());
    }

    #[test]
    fn smoothing_error_halves_with_resolution() {
        // ||d_zz P_j u0 - d_zz u0||_inf shrinks at least by half when j doubles
        let g = Grid::square(64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..5 {
            let u0 = random_h_field(g, &mut rng, 1.0, 1.0, 20);
            let dzz = u0.derivative(crate::spectral::Axis::Z, 2);
            let err = |j: f64| {
                let pj = spectral_projection(&dzz, j).unwrap();
                crate::norms::linf_distance(&pj, &dzz).unwrap()
            };
            let (e1, e2) = (err(4.0 * TWO_PI), err(8.0 * TWO_PI));
            assert!(e2 <= 0.5 * e1, "{e1} -> {e2}");
        }
    }
}
