//! Compactly supported real couplings `lambda(t)` on `[0, s]` and their
//! Fourier transforms
//!
//! `lambda(omega) = (2 pi)^(-1/2) int lambda(t) exp(i omega t) dt`,
//!
//! the dual of `lambda(t) = (2 pi)^(-1/2) int lambda(omega) exp(-i omega t) domega`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{integrate, integrate_real, Tolerance};
use crate::C64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Pulse {
    /// `strength * delta(t)`; applied as the unitary `exp(-i strength O)`.
    DeltaKick { strength: f64 },
    /// `amplitude * sin^2(pi t / duration)`
    Hann { amplitude: f64, duration: f64 },
    /// Flat top of height `amplitude` with `sin^2` ramps of length `smoothing`
    /// at both ends (`smoothing = 0` is a hard rectangle).
    Square { amplitude: f64, duration: f64, smoothing: f64 },
    /// Gaussian of the given centre and width, minus the straight line through
    /// its endpoint values so it vanishes at `0` and `support`, rescaled to
    /// peak height `amplitude` at `center`.
    GaussianTruncated { amplitude: f64, center: f64, width: f64, support: f64 },
}

impl Pulse {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidPulse(msg));
        match *self {
            Pulse::DeltaKick { strength } if !strength.is_finite() => bad(format!("kick strength {strength} not finite")),
            Pulse::Hann { amplitude, duration } | Pulse::Square { amplitude, duration, .. }
                if !(amplitude.is_finite() && duration.is_finite() && duration > 0.0) =>
            {
                bad(format!("need finite amplitude and positive duration, got {amplitude}, {duration}"))
            }
            Pulse::Square { smoothing, duration, .. } if !(0.0..=duration / 2.0).contains(&smoothing) => {
                bad(format!("smoothing {smoothing} must lie in [0, duration/2]"))
            }
            Pulse::GaussianTruncated { amplitude, center, width, support } => {
                if !(amplitude.is_finite() && support.is_finite() && support > 0.0) {
                    bad("need finite amplitude and positive support".into())
                } else if !(center > 0.0 && center < support) {
                    bad(format!("center {center} must lie inside (0, {support})"))
                } else if !(width > 0.0 && width.is_finite()) {
                    bad(format!("width {width} must be positive"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// End of the support `[0, s]`; zero for a kick.
    pub fn support(&self) -> f64 {
        match *self {
            Pulse::DeltaKick { .. } => 0.0,
            Pulse::Hann { duration, .. } | Pulse::Square { duration, .. } => duration,
            Pulse::GaussianTruncated { support, .. } => support,
        }
    }

    pub fn is_kick(&self) -> bool {
        matches!(self, Pulse::DeltaKick { .. })
    }

    /// Same shape with the amplitude multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Pulse {
        match *self {
            Pulse::DeltaKick { strength } => Pulse::DeltaKick { strength: strength * factor },
            Pulse::Hann { amplitude, duration } => Pulse::Hann { amplitude: amplitude * factor, duration },
            Pulse::Square { amplitude, duration, smoothing } => {
                Pulse::Square { amplitude: amplitude * factor, duration, smoothing }
            }
            Pulse::GaussianTruncated { amplitude, center, width, support } => {
                Pulse::GaussianTruncated { amplitude: amplitude * factor, center, width, support }
            }
        }
    }

    /// `lambda(t)`; zero outside `[0, s]`.
    pub fn evaluate(&self, t: f64) -> Result<f64> {
        if self.is_kick() {
            return Err(Error::DeltaKickPointwise);
        }
        let s = self.support();
        if !(t > 0.0 && t < s) {
            return Ok(0.0);
        }
        Ok(match *self {
            Pulse::DeltaKick { .. } => unreachable!(),
            Pulse::Hann { amplitude, duration } => amplitude * (PI * t / duration).sin().powi(2),
            Pulse::Square { amplitude, duration, smoothing } => {
                let edge = t.min(duration - t);
                if edge >= smoothing {
                    amplitude
                } else {
                    amplitude * (0.5 * PI * edge / smoothing).sin().powi(2)
                }
            }
            Pulse::GaussianTruncated { amplitude, center, width, support } => {
                let g = |x: f64| (-0.5 * ((x - center) / width).powi(2)).exp();
                let line = |x: f64| (g(0.0) * (support - x) + g(support) * x) / support;
                amplitude * (g(t) - line(t)) / (1.0 - line(center))
            }
        })
    }

    /// Points where the shape is not smooth; quadrature panels start there.
    fn breakpoints(&self) -> Vec<f64> {
        match *self {
            Pulse::Square { duration, smoothing, .. } => vec![smoothing, duration - smoothing],
            Pulse::GaussianTruncated { center, width, .. } => vec![center - 3.0 * width, center, center + 3.0 * width],
            _ => Vec::new(),
        }
    }

    /// `lambda(omega)`: closed form for kicks and Hann pulses, adaptive
    /// quadrature (relative tolerance 1e-10) otherwise.
    pub fn fourier(&self, omega: f64) -> Result<C64> {
        match *self {
            Pulse::DeltaKick { strength } => Ok(C64::new(strength / (2.0 * PI).sqrt(), 0.0)),
            Pulse::Hann { amplitude, duration } => Ok(hann_fourier(amplitude, duration, omega)),
            _ => self.fourier_numeric(omega),
        }
    }

    /// Quadrature transform regardless of shape; used to cross-check closed forms.
    pub fn fourier_numeric(&self, omega: f64) -> Result<C64> {
        if self.is_kick() {
            return Err(Error::DeltaKickPointwise);
        }
        let s = self.support();
        let panels = 4 + (omega.abs() * s / PI).ceil() as usize;
        // absolute floor for frequencies where the transform nearly vanishes
        let tol = Tolerance { abs: 1e-13 * s * self.peak(), ..Tolerance::default() };
        let est = integrate(
            |t| C64::from_polar(self.evaluate(t).expect("not a kick"), omega * t),
            0.0,
            s,
            &self.breakpoints(),
            panels,
            tol,
        )?;
        Ok(est.value / (2.0 * PI).sqrt())
    }

    /// `max |lambda(t)|`
    pub fn peak(&self) -> f64 {
        match *self {
            Pulse::DeltaKick { .. } => f64::INFINITY,
            Pulse::Hann { amplitude, .. } | Pulse::Square { amplitude, .. } | Pulse::GaussianTruncated { amplitude, .. } => {
                amplitude.abs()
            }
        }
    }

    /// `int lambda(t) dt`
    pub fn area(&self) -> Result<f64> {
        match *self {
            Pulse::DeltaKick { strength } => Ok(strength),
            Pulse::Hann { amplitude, duration } => Ok(0.5 * amplitude * duration),
            Pulse::Square { amplitude, duration, smoothing } => Ok(amplitude * (duration - smoothing)),
            Pulse::GaussianTruncated { .. } => self.moment(1),
        }
    }

    /// `int lambda(t)^2 dt`
    pub fn energy(&self) -> Result<f64> {
        match *self {
            Pulse::DeltaKick { .. } => Ok(f64::INFINITY),
            Pulse::Hann { amplitude, duration } => Ok(0.375 * amplitude * amplitude * duration),
            _ => self.moment(2),
        }
    }

    fn moment(&self, power: i32) -> Result<f64> {
        let (v, _) = integrate_real(
            |t| self.evaluate(t).expect("not a kick").powi(power),
            0.0,
            self.support(),
            &self.breakpoints(),
            4,
            Tolerance { abs: 1e-300, ..Tolerance::default() },
        )?;
        Ok(v)
    }

    /// `(t, lambda(t))` at `points` evenly spaced times spanning the support.
    pub fn sample(&self, points: usize) -> Result<Vec<(f64, f64)>> {
        let s = self.support();
        let n = points.max(2);
        (0..n)
            .map(|k| {
                let t = s * k as f64 / (n - 1) as f64;
                Ok((t, self.evaluate(t)?))
            })
            .collect()
    }
}

/// Closed-form transform of `a sin^2(pi t / s)` on `[0, s]`:
/// `a s pi^2 exp(i y) g(y) / (2 sqrt(2 pi))` with `y = omega s / 2` and
/// `g(y) = sinc(y) / (pi^2 - y^2)`, rewritten near `|y| = pi` to avoid 0/0.
pub fn hann_fourier(amplitude: f64, duration: f64, omega: f64) -> C64 {
    let y = 0.5 * omega * duration;
    let ay = y.abs();
    let g = if ay <= 1.0 {
        sinc(y) / (PI * PI - y * y)
    } else {
        sinc(PI - ay) / (ay * (PI + ay))
    };
    C64::from_polar(amplitude * duration * PI * PI * g / (2.0 * (2.0 * PI).sqrt()), y)
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn shapes() -> Vec<Pulse> {
        vec![
            Pulse::Hann { amplitude: 0.7, duration: 2.0 },
            Pulse::Square { amplitude: -0.4, duration: 3.0, smoothing: 0.5 },
            Pulse::GaussianTruncated { amplitude: 1.3, center: 1.2, width: 0.4, support: 2.5 },
        ]
    }

    #[test]
    fn pointwise_values() {
        let hann = Pulse::Hann { amplitude: 0.7, duration: 2.0 };
        assert!((hann.evaluate(1.0).unwrap() - 0.7).abs() < 1e-15);
        for p in shapes() {
            assert_eq!(p.evaluate(-1.0).unwrap(), 0.0);
            assert_eq!(p.evaluate(p.support()).unwrap(), 0.0);
            assert_eq!(p.evaluate(p.support() + 0.1).unwrap(), 0.0);
            assert!(p.evaluate(1e-9).unwrap().abs() < 1e-6);
        }
        let g = Pulse::GaussianTruncated { amplitude: 1.3, center: 1.2, width: 0.4, support: 2.5 };
        assert!((g.evaluate(1.2).unwrap() - 1.3).abs() < 1e-14);
        assert!(matches!(Pulse::DeltaKick { strength: 0.3 }.evaluate(0.0), Err(Error::DeltaKickPointwise)));
    }

    #[test]
    fn hann_transform_at_zero_and_against_quadrature() {
        let (a, s) = (0.7, 2.0);
        let p = Pulse::Hann { amplitude: a, duration: s };
        let zero = p.fourier(0.0).unwrap();
        assert!((zero.re - a * s / (2.0 * (2.0 * PI).sqrt())).abs() < 1e-15);
        assert_eq!(zero.im, 0.0);
        for k in -200..=200 {
            let w = k as f64 * 0.25 / s;
            let closed = p.fourier(w).unwrap();
            let numeric = p.fourier_numeric(w).unwrap();
            assert!((closed - numeric).norm() <= 1e-9 * zero.norm(), "omega={w}");
        }
        // the removable points y = +-pi
        let at_pi = p.fourier(2.0 * PI / s).unwrap();
        assert!((at_pi - p.fourier_numeric(2.0 * PI / s).unwrap()).norm() < 1e-12);
    }

    #[test]
    fn kick_transform_is_flat() {
        let p = Pulse::DeltaKick { strength: 0.3 };
        for w in [-5.0, 0.0, 17.0] {
            assert!((p.fourier(w).unwrap().norm_sqr() - 0.09 / (2.0 * PI)).abs() < 1e-16);
        }
    }

    #[test]
    fn parseval() {
        for p in shapes() {
            let tol = Tolerance { abs: 0.0, ..Tolerance::default() };
            // |lambda(omega)|^2 decays at least like omega^-4 for these shapes;
            // the truncated Gaussian has the slowest tail and tiny end slopes
            let cutoff = 500.0 / p.support();
            let spectral = integrate_real(
                |w| p.fourier(w).unwrap().norm_sqr(),
                -cutoff,
                cutoff,
                &[0.0],
                1000,
                tol,
            )
            .unwrap()
            .0;
            let temporal = p.energy().unwrap();
            assert!((spectral - temporal).abs() <= 1e-8 * temporal, "{p:?}: {spectral} vs {temporal}");
        }
    }

    #[test]
    fn areas_and_energies() {
        let hann = Pulse::Hann { amplitude: 0.7, duration: 2.0 };
        assert!((hann.moment(1).unwrap() - hann.area().unwrap()).abs() < 1e-13);
        assert!((hann.moment(2).unwrap() - hann.energy().unwrap()).abs() < 1e-13);
        let sq = Pulse::Square { amplitude: 2.0, duration: 3.0, smoothing: 0.5 };
        assert!((sq.moment(1).unwrap() - sq.area().unwrap()).abs() < 1e-13);
    }

    #[test]
    fn invalid_shapes_are_rejected() {
        assert!(Pulse::Hann { amplitude: 1.0, duration: 0.0 }.validate().is_err());
        assert!(Pulse::Square { amplitude: 1.0, duration: 1.0, smoothing: 0.6 }.validate().is_err());
        assert!(Pulse::GaussianTruncated { amplitude: 1.0, center: 2.0, width: 0.1, support: 1.0 }.validate().is_err());
        assert!(Pulse::DeltaKick { strength: f64::NAN }.validate().is_err());
        for p in shapes() {
            p.validate().unwrap();
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn conjugate_symmetry(omega in -60.0f64..60.0, which in 0usize..3) {
            let p = shapes()[which];
            let plus = p.fourier(omega).unwrap();
            let minus = p.fourier(-omega).unwrap();
            prop_assert!((plus - minus.conj()).norm() <= 1e-12);
            prop_assert!((plus.norm_sqr() - minus.norm_sqr()).abs() <= 1e-12);
        }
    }
}
