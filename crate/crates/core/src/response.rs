//! Linear response of the energy to a weak drive `lambda(t) O`.
//!
//! For a stationary state with eigenstate weights `p_n`, the spectral function
//! in Lehmann form is
//!
//! `A(omega) = sum_{n,m} 2 pi (p_n - p_m) |O_nm|^2 delta(omega - (E_m - E_n))`,
//!
//! broadened here by a unit-mass Gaussian of width `eta`. The energy absorbed
//! to second order in the drive is `int_0^inf omega |lambda(omega)|^2 A(omega)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pulses::Pulse;
use crate::quadrature::{integrate_real, Tolerance};
use crate::spectra::{EigenbasisObservable, InitialState};
use crate::C64;

/// Broadened peaks are cut off this many widths from their centre.
const WINDOW: f64 = 10.0;

/// One positive-frequency Lehmann pole; its partner sits at `-omega` with weight `-weight`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub omega: f64,
    pub weight: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectralFunction {
    pub grid: Vec<f64>,
    /// Broadened `A` on `grid`.
    pub values: Vec<f64>,
    pub eta: f64,
    pub state: InitialState,
    /// Poles with `omega >= 0`, sorted by frequency.
    transitions: Vec<Transition>,
}

fn gaussian(x: f64, eta: f64) -> f64 {
    let u = x / eta;
    (-0.5 * u * u).exp() / ((2.0 * PI).sqrt() * eta)
}

/// Uniform grid on `[-half_width, half_width]` whose negative half is the exact
/// mirror of the positive half.
pub fn symmetric_grid(half_width: f64, points_per_side: usize) -> Vec<f64> {
    let n = points_per_side.max(1);
    let positive: Vec<f64> = (1..=n).map(|k| half_width * k as f64 / n as f64).collect();
    positive.iter().rev().map(|w| -w).chain(std::iter::once(0.0)).chain(positive.iter().copied()).collect()
}

pub fn spectral_function(
    obs: &EigenbasisObservable,
    state: &InitialState,
    grid: &[f64],
    eta: f64,
) -> Result<SpectralFunction> {
    if !state.is_stationary() {
        return Err(Error::InvalidState(
            "linear response needs a stationary (thermal or maximally mixed) state; \
             use the kick series for single eigenstates"
                .into(),
        ));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidArgument(format!("broadening eta must be positive, got {eta}")));
    }
    if state.weights.len() != obs.dim() {
        return Err(Error::DimensionMismatch { expected: obs.dim(), found: state.weights.len() });
    }
    let e = obs.energies();
    let p = &state.weights;
    let d = obs.dim();
    let mut transitions = Vec::new();
    for n in 0..d {
        for m in n + 1..d {
            let weight = 2.0 * PI * (p[n] - p[m]) * obs.element(n, m).norm_sqr();
            if weight != 0.0 {
                transitions.push(Transition { omega: e[m] - e[n], weight });
            }
        }
    }
    transitions.sort_by(|a, b| a.omega.total_cmp(&b.omega).then(a.weight.total_cmp(&b.weight)));
    let mut spec = SpectralFunction { grid: grid.to_vec(), values: Vec::new(), eta, state: state.clone(), transitions };
    spec.values = grid.iter().map(|&w| spec.evaluate(w)).collect();
    Ok(spec)
}

impl SpectralFunction {
    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    /// Every Lehmann pole `(omega, weight)`, both signs.
    pub fn lehmann_weights(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = self
            .transitions
            .iter()
            .flat_map(|t| [(t.omega, t.weight), (-t.omega, -t.weight)])
            .collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        out
    }

    /// Largest pole frequency.
    pub fn max_frequency(&self) -> f64 {
        self.transitions.last().map_or(0.0, |t| t.omega)
    }

    fn window(&self, center: f64) -> &[Transition] {
        let lo = self.transitions.partition_point(|t| t.omega < center - WINDOW * self.eta);
        let hi = self.transitions.partition_point(|t| t.omega <= center + WINDOW * self.eta);
        &self.transitions[lo..hi]
    }

    /// Broadened `A(omega)`; odd in `omega` by construction.
    pub fn evaluate(&self, omega: f64) -> f64 {
        let w = omega.abs();
        let sum: f64 = self
            .window(w)
            .iter()
            .map(|t| t.weight * (gaussian(w - t.omega, self.eta) - gaussian(w + t.omega, self.eta)))
            .sum();
        if omega < 0.0 {
            -sum
        } else {
            sum
        }
    }

    /// `G_R(omega)` with `Im G_R = -A/2` and the real part given by the
    /// Hilbert transform of each Gaussian peak (a Dawson function).
    pub fn retarded_green(&self, omega: f64) -> C64 {
        let w = omega.abs();
        let scale = 2f64.sqrt() * self.eta;
        let re: f64 = self
            .transitions
            .iter()
            .map(|t| t.weight * (dawson((w - t.omega) / scale) - dawson((w + t.omega) / scale)))
            .sum::<f64>()
            * (2f64.sqrt() / self.eta)
            / (2.0 * PI);
        C64::new(re, -0.5 * self.evaluate(omega))
    }

    /// `omega` grid sufficient to show every broadened pole.
    pub fn required_half_width(&self) -> f64 {
        self.max_frequency() + 5.0 * self.eta
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearResponse {
    /// Exact sum over poles, `sum_t weight_t omega_t |lambda(omega_t)|^2`.
    pub lehmann: f64,
    /// Adaptive quadrature over the Gaussian-broadened spectral function.
    pub broadened: f64,
    pub broadened_error: f64,
}

/// `sqrt(2 pi) int_0^inf omega |lambda(omega)|^2 A(omega) / sqrt(2 pi) domega`,
/// i.e. the integral with the spectral weight normalized as in [`spectral_function`].
pub fn delta_e_linear(spec: &SpectralFunction, pulse: &Pulse) -> Result<LinearResponse> {
    pulse.validate()?;
    let need = spec.required_half_width();
    let (gmin, gmax) = spec
        .grid
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &w| (a.min(w), b.max(w)));
    if !(gmin <= 0.0 && gmax >= need) {
        return Err(Error::GridTooNarrow { grid_min: gmin, grid_max: gmax, need_min: 0.0, need_max: need });
    }
    let power = |w: f64| -> Result<f64> { Ok(pulse.fourier(w)?.norm_sqr()) };

    let mut lehmann = 0.0;
    for t in &spec.transitions {
        if t.omega > 0.0 {
            lehmann += t.weight * t.omega * power(t.omega)?;
        }
    }

    // Each pole pair is integrated over its own +-10 eta window on omega >= 0,
    // which keeps the cost linear in the number of poles for any eta.
    let eta = spec.eta;
    let half = WINDOW * eta;
    let tol = Tolerance { rel: 1e-10, abs: 0.0, max_panels: 2000 };
    let (mut broadened, mut broadened_error) = (0.0, 0.0);
    let mut failure = None;
    for t in &spec.transitions {
        let lo = (t.omega - half).max(0.0);
        let hi = t.omega + half;
        let f = |w: f64| match power(w) {
            Ok(p) => w * p * t.weight * (gaussian(w - t.omega, eta) - gaussian(w + t.omega, eta)),
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        };
        let tol = Tolerance { abs: 1e-14 * t.weight.abs() * hi * power(t.omega)?.max(1e-300), ..tol };
        let (v, err) = integrate_real(f, lo, hi, &[t.omega], 4, tol)?;
        broadened += v;
        broadened_error += err;
    }
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(LinearResponse { lehmann, broadened, broadened_error })
}

/// Dawson's integral `F(x) = exp(-x^2) int_0^x exp(t^2) dt`.
///
/// Rybicki's sampling formula with step 0.2 (truncation error ~exp(-(pi/0.4)^2))
/// away from the origin, Maclaurin series near it.
pub fn dawson(x: f64) -> f64 {
    const H: f64 = 0.2;
    const TERMS: usize = 17;
    let ax = x.abs();
    if ax < 0.2 {
        let x2 = x * x;
        let mut term = x;
        let mut sum = x;
        for k in 1..12 {
            term *= -2.0 * x2 / (2 * k + 1) as f64;
            sum += term;
        }
        return sum;
    }
    let n0 = 2.0 * (0.5 * ax / H).round();
    let xp = ax - n0 * H;
    let mut e1 = (2.0 * xp * H).exp();
    let e2 = e1 * e1;
    let mut d1 = n0 + 1.0;
    let mut d2 = d1 - 2.0;
    let mut sum = 0.0;
    for i in 0..TERMS {
        let c = (-(((2 * i + 1) as f64) * H).powi(2)).exp();
        sum += c * (e1 / d1 + 1.0 / (d2 * e1));
        d1 += 2.0;
        d2 -= 2.0;
        e1 *= e2;
    }
    let value = sum * (-xp * xp).exp() / PI.sqrt();
    if x < 0.0 {
        -value
    } else {
        value
    }
}
