//! Power series of the kick energy change in the kick strength.
//!
//! With `C_1 = [H0, O]` and `C_a = [O, C_{a-1}]`, the series reads
//!
//! `dE = sum_a -(i^a) lambda^a / (a-1)! <n|C_a|n>`.
//!
//! Each even order splits into eigenbasis sums. Writing `h = a/2`,
//!
//! `-(i^a) C_a = sum_{k=0}^{h-1} (-1)^k c_k X_k`, with `c_0 = binom(a, h)/2` and
//! `c_k = binom(a, h-k)`,
//!
//! `X_k = O^{h+k} H0 O^{h-k} + O^{h-k} H0 O^{h+k} - O^a H0 - H0 O^a`,
//!
//! `<n|X_k|n> = 2 Re sum_m (O^{h+k})_nm conj((O^{h-k})_nm) (E_m - E_n)`.
//!
//! `X_0` is the dominant sum `2 sum_m |(O^h)_nm|^2 (E_m - E_n)`, which is
//! positive whenever the weight of `O^h|n>` leans to higher energies. The
//! `X_k` with `k >= 1` are the subleading cross sums.

use std::f64::consts::PI;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, check_dim, dot, mat_vec, HermitianMatrix};
use crate::pulses::Pulse;
use crate::spectra::EigenbasisObservable;
use crate::C64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// Expectation value of the dense nested commutator.
    CommutatorMatrix,
    /// Sums over matrix elements in the energy eigenbasis.
    EigenbasisSum,
}

impl Route {
    pub fn as_str(&self) -> &'static str {
        match self {
            Route::CommutatorMatrix => "commutator_matrix",
            Route::EigenbasisSum => "eigenbasis_sum",
        }
    }
}

/// Order-`a` contribution `lambda^a coefficient_a` to the kick energy change.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesTerm {
    pub order: usize,
    pub value: f64,
    /// `<X_0>` (even orders, eigenbasis route only).
    pub dominant_sum: Option<f64>,
    /// `("X1", <X_1>), ...` (even orders, eigenbasis route only).
    pub subleading_sums: Vec<(String, f64)>,
    pub route: Route,
}

impl SeriesTerm {
    /// `|sum_{k>=1} (-1)^k c_k <X_k>| / |c_0 <X_0>|`
    pub fn suppression_ratio(&self) -> Option<f64> {
        let dom = self.dominant_sum?;
        let h = self.order / 2;
        let sub: f64 = self
            .subleading_sums
            .iter()
            .enumerate()
            .map(|(i, (_, x))| sign(i + 1) * cross_coefficient(self.order, i + 1) * x)
            .sum();
        Some(sub.abs() / (binomial(self.order, h) as f64 / 2.0 * dom).abs())
    }
}

fn sign(k: usize) -> f64 {
    if k % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i + 1) as u64)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// `c_k` of the even-order decomposition.
pub fn cross_coefficient(a: usize, k: usize) -> f64 {
    let h = a / 2;
    if k == 0 {
        binomial(a, h) as f64 / 2.0
    } else {
        binomial(a, h - k) as f64
    }
}

/// `-(i^a)` as a complex number.
fn series_phase(a: usize) -> C64 {
    match a % 4 {
        0 => C64::new(-1.0, 0.0),
        1 => C64::new(0.0, -1.0),
        2 => C64::new(1.0, 0.0),
        _ => C64::new(0.0, 1.0),
    }
}

/// `ad_O^{a-1}([H0, O])` by repeated dense products.
pub fn nested_commutator_term(h0: &HermitianMatrix, o: &HermitianMatrix, a: usize) -> Result<Mat<C64>> {
    if a == 0 {
        return Err(Error::InvalidArgument("commutator order must be at least 1".into()));
    }
    check_dim(h0.dim(), o.dim())?;
    let mut c = commutator(h0.as_ref(), o.as_ref());
    for _ in 1..a {
        c = commutator(o.as_ref(), c.as_ref());
    }
    Ok(c)
}

fn commutator(a: faer::MatRef<'_, C64>, b: faer::MatRef<'_, C64>) -> Mat<C64> {
    let ab = linalg::matmul(a, b);
    let ba = linalg::matmul(b, a);
    ab - ba
}

/// The nested commutators `C_1 .. C_max` in the original basis.
#[derive(Clone, Debug)]
pub struct CommutatorTower {
    terms: Vec<Mat<C64>>,
}

impl CommutatorTower {
    pub fn new(h0: &HermitianMatrix, o: &HermitianMatrix, max_order: usize) -> Result<Self> {
        if max_order == 0 {
            return Err(Error::InvalidArgument("commutator order must be at least 1".into()));
        }
        check_dim(h0.dim(), o.dim())?;
        let mut terms = vec![commutator(h0.as_ref(), o.as_ref())];
        for _ in 1..max_order {
            let next = commutator(o.as_ref(), terms.last().expect("nonempty").as_ref());
            terms.push(next);
        }
        Ok(Self { terms })
    }

    pub fn max_order(&self) -> usize {
        self.terms.len()
    }

    pub fn term(&self, a: usize) -> Option<&Mat<C64>> {
        a.checked_sub(1).and_then(|i| self.terms.get(i))
    }

    /// `<v|C_a|v>`
    pub fn expectation(&self, a: usize, v: &[C64]) -> Result<C64> {
        let c = self
            .term(a)
            .ok_or(Error::InsufficientPowers { required: a, available: self.max_order() })?;
        check_dim(c.nrows(), v.len())?;
        Ok(dot(v, &mat_vec(c.as_ref(), v)))
    }
}

/// Rows `(O^p)_{n,.}` for `p = 0 ..= max_power`, computed once per state.
struct PowerRows {
    rows: Vec<Vec<C64>>,
}

impl PowerRows {
    fn new(obs: &EigenbasisObservable, n: usize, max_power: usize) -> Result<Self> {
        let rows = (0..=max_power).map(|p| obs.power_row(n, p)).collect::<Result<Vec<_>>>()?;
        Ok(Self { rows })
    }

    /// `sum_m (O^p)_nm conj((O^q)_nm) (E_m - E_n)`
    fn weighted(&self, p: usize, q: usize, energies: &[f64], n: usize) -> C64 {
        let (rp, rq) = (&self.rows[p], &self.rows[q]);
        let en = energies[n];
        let mut acc = C64::new(0.0, 0.0);
        for m in 0..energies.len() {
            acc += rp[m] * rq[m].conj() * (energies[m] - en);
        }
        acc
    }
}

/// `<X_k>` for order `a`.
fn cross_sum(rows: &PowerRows, a: usize, k: usize, energies: &[f64], n: usize) -> f64 {
    let h = a / 2;
    2.0 * rows.weighted(h + k, h - k, energies, n).re
}

/// `<C_a>` from eigenbasis sums: `sum_p (-1)^{a-p-1} binom(a,p) <O^p H0 O^{a-p}>`
/// with the diagonal energy subtracted (the binomial signs sum to zero).
fn commutator_expectation_from_rows(rows: &PowerRows, a: usize, energies: &[f64], n: usize) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    for p in 0..a {
        let s = sign(a - p - 1) * binomial(a, p) as f64;
        acc += rows.weighted(p, a - p, energies, n) * s;
    }
    acc
}

fn check_state(obs: &EigenbasisObservable, n: usize) -> Result<()> {
    if n < obs.dim() {
        Ok(())
    } else {
        Err(Error::InvalidState(format!("eigenstate index {n} out of range for dim {}", obs.dim())))
    }
}

/// Terms of orders `1 ..= max_order` for eigenstate `n`. The eigenbasis route
/// is always evaluated; the commutator route is added when `tower` is given.
/// Needs `max_order <= 2 * obs.max_power()`.
pub fn delta_kick_series(
    obs: &EigenbasisObservable,
    n: usize,
    lambda: f64,
    max_order: usize,
    tower: Option<&CommutatorTower>,
) -> Result<Vec<SeriesTerm>> {
    check_state(obs, n)?;
    if !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("kick strength must be finite, got {lambda}")));
    }
    if max_order > 2 * obs.max_power() {
        return Err(Error::InsufficientPowers { required: max_order.div_ceil(2), available: obs.max_power() });
    }
    if let Some(t) = tower {
        if t.max_order() < max_order {
            return Err(Error::InsufficientPowers { required: max_order, available: t.max_order() });
        }
    }
    let energies = obs.energies();
    let rows = PowerRows::new(obs, n, max_order)?;
    let vector = tower.map(|_| obs.eigensystem().vector(n));
    let mut out = Vec::with_capacity(2 * max_order);
    for a in 1..=max_order {
        let scale = lambda.powi(a as i32) / factorial(a - 1);
        if a % 2 == 0 {
            let h = a / 2;
            let dom = cross_sum(&rows, a, 0, energies, n);
            let subs: Vec<(String, f64)> =
                (1..h).map(|k| (format!("X{k}"), cross_sum(&rows, a, k, energies, n))).collect();
            let total = cross_coefficient(a, 0) * dom
                + subs.iter().enumerate().map(|(i, (_, x))| sign(i + 1) * cross_coefficient(a, i + 1) * x).sum::<f64>();
            out.push(SeriesTerm {
                order: a,
                value: scale * total,
                dominant_sum: Some(dom),
                subleading_sums: subs,
                route: Route::EigenbasisSum,
            });
        } else {
            let c = commutator_expectation_from_rows(&rows, a, energies, n);
            out.push(SeriesTerm {
                order: a,
                value: scale * (series_phase(a) * c).re,
                dominant_sum: None,
                subleading_sums: Vec::new(),
                route: Route::EigenbasisSum,
            });
        }
        if let (Some(t), Some(v)) = (tower, vector.as_ref()) {
            let c = t.expectation(a, v)?;
            out.push(SeriesTerm {
                order: a,
                value: scale * (series_phase(a) * c).re,
                dominant_sum: None,
                subleading_sums: Vec::new(),
                route: Route::CommutatorMatrix,
            });
        }
    }
    Ok(out)
}

/// `(<X_0>, <X_1>)` at fourth order: `2 sum_m |O^2_nm|^2 (E_m - E_n)` and
/// `sum_m (O^3_nm O_mn + O_nm O^3_mn)(E_m - E_n)`. The fourth-order term is
/// `lambda^4 (3 <X_0> - 4 <X_1>) / 3!`; the suppression ratio is
/// `|4 <X_1>| / |3 <X_0>|`.
pub fn order4_decomposition(obs: &EigenbasisObservable, n: usize) -> Result<(f64, f64)> {
    check_state(obs, n)?;
    let rows = PowerRows::new(obs, n, 3)?;
    let e = obs.energies();
    Ok((cross_sum(&rows, 4, 0, e, n), cross_sum(&rows, 4, 1, e, n)))
}

/// `|4 <X_1>| / |3 <X_0>|`
pub fn r4(obs: &EigenbasisObservable, n: usize) -> Result<f64> {
    let (dom, sub) = order4_decomposition(obs, n)?;
    Ok((4.0 * sub).abs() / (3.0 * dom).abs())
}

/// Coefficient of `lambda^a` for odd `a`: `-(i^a) <C_a> / (a-1)!`, real.
pub fn odd_order_term(obs: &EigenbasisObservable, n: usize, a: usize) -> Result<f64> {
    if a % 2 == 0 || a == 0 {
        return Err(Error::InvalidArgument(format!("odd order expected, got {a}")));
    }
    check_state(obs, n)?;
    let rows = PowerRows::new(obs, n, a)?;
    let c = commutator_expectation_from_rows(&rows, a, obs.energies(), n);
    Ok((series_phase(a) * c).re / factorial(a - 1))
}

/// Dominant part of the `lambda^a` coefficient for even `a`:
/// `binom(a, a/2)/2 * 2 sum_m |(O^{a/2})_nm|^2 (E_m - E_n) / (a-1)!`.
pub fn general_order_dominant(obs: &EigenbasisObservable, n: usize, a: usize) -> Result<f64> {
    if a == 0 || a % 2 == 1 {
        return Err(Error::InvalidArgument(format!("even order expected, got {a}")));
    }
    check_state(obs, n)?;
    let h = a / 2;
    if h > obs.max_power() {
        return Err(Error::InsufficientPowers { required: h, available: obs.max_power() });
    }
    let row = obs.power_row(n, h)?;
    let e = obs.energies();
    let sum: f64 = row.iter().zip(e).map(|(x, em)| x.norm_sqr() * (em - e[n])).sum();
    Ok(cross_coefficient(a, 0) * 2.0 * sum / factorial(a - 1))
}

/// Fourth-order dominant term for a general pulse,
/// `(2 pi)^2 sum_m (E_m - E_n) |M_nm|^2` with
/// `M_nm = sum_l lambda(E_n - E_l) O_nl lambda(E_l - E_m) O_lm`.
pub fn pulse_lambda4_dominant(obs: &EigenbasisObservable, n: usize, pulse: &Pulse) -> Result<f64> {
    check_state(obs, n)?;
    pulse.validate()?;
    let e = obs.energies();
    let d = obs.dim();
    let u: Vec<C64> = (0..d)
        .map(|l| Ok(pulse.fourier(e[n] - e[l])? * obs.element(n, l)))
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    for m in 0..d {
        let mut mnm = C64::new(0.0, 0.0);
        for l in 0..d {
            let olm = obs.element(l, m);
            if u[l] == C64::new(0.0, 0.0) || olm == C64::new(0.0, 0.0) {
                continue;
            }
            mnm += u[l] * pulse.fourier(e[l] - e[m])? * olm;
        }
        total += (e[m] - e[n]) * mnm.norm_sqr();
    }
    Ok((2.0 * PI).powi(2) * total)
}

/// Partial sums `sum_{a <= k} value_a` over the terms of one route.
pub fn partial_sums(terms: &[SeriesTerm], route: Route) -> Vec<(usize, f64)> {
    let mut acc = 0.0;
    terms
        .iter()
        .filter(|t| t.route == route)
        .map(|t| {
            acc += t.value;
            (t.order, acc)
        })
        .collect()
}

/// Relative difference used by the route-equivalence check.
pub fn relative_difference(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}
