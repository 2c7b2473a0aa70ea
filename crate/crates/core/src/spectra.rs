//! Observables in the energy eigenbasis and the statistics built on them:
//! diagonal and off-diagonal ETH structure, smoothed entropy, effective
//! temperature, level statistics, and initial-state weights.

use std::sync::Arc;

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, row_times, Eigensystem, HermitianMatrix};
use crate::C64;

/// `O_nm = (V^H O V)_nm` together with cached powers `(O^k)_nm`.
#[derive(Clone, Debug)]
pub struct EigenbasisObservable {
    eig: Arc<Eigensystem>,
    /// `powers[k - 1]` holds `O^k` in the eigenbasis.
    powers: Vec<Mat<C64>>,
}

impl EigenbasisObservable {
    /// Rotates `o` into the eigenbasis of `eig` and caches `O^1 .. O^max_power`.
    pub fn new(o: &HermitianMatrix, eig: Arc<Eigensystem>, max_power: usize) -> Result<Self> {
        if max_power == 0 {
            return Err(Error::InvalidArgument("max_power must be at least 1".into()));
        }
        let rotated = eig.rotate_into(o)?.into_inner();
        let mut powers = Vec::with_capacity(max_power);
        powers.push(rotated);
        for _ in 1..max_power {
            let next = linalg::matmul(powers.last().expect("nonempty").as_ref(), powers[0].as_ref());
            powers.push(linalg::hermitize(next));
        }
        Ok(Self { eig, powers })
    }

    pub fn dim(&self) -> usize {
        self.eig.dim()
    }

    pub fn eigensystem(&self) -> &Arc<Eigensystem> {
        &self.eig
    }

    pub fn energies(&self) -> &[f64] {
        self.eig.energies()
    }

    pub fn max_power(&self) -> usize {
        self.powers.len()
    }

    /// `O_nm`
    pub fn element(&self, n: usize, m: usize) -> C64 {
        self.powers[0][(n, m)]
    }

    pub fn elements(&self) -> MatRef<'_, C64> {
        self.powers[0].as_ref()
    }

    /// `(O^k)` in the eigenbasis, `1 <= k <= max_power`.
    pub fn power(&self, k: usize) -> Result<MatRef<'_, C64>> {
        if k == 0 || k > self.max_power() {
            return Err(Error::InsufficientPowers { required: k, available: self.max_power() });
        }
        Ok(self.powers[k - 1].as_ref())
    }

    /// Row `n` of `O^p` for `0 <= p <= 2 * max_power`. Powers beyond the cache
    /// are formed as `row_n(O^K) O^(p-K)` with one vector-matrix product.
    pub fn power_row(&self, n: usize, p: usize) -> Result<Vec<C64>> {
        let k = self.max_power();
        if p > 2 * k {
            return Err(Error::InsufficientPowers { required: p.div_ceil(2), available: k });
        }
        if n >= self.dim() {
            return Err(Error::InvalidState(format!("eigenstate index {n} out of range for dim {}", self.dim())));
        }
        if p == 0 {
            let mut row = vec![C64::new(0.0, 0.0); self.dim()];
            row[n] = C64::new(1.0, 0.0);
            return Ok(row);
        }
        let base = p.min(k);
        // rows of a Hermitian matrix are conjugated columns
        let col: Vec<C64> = self.powers[base - 1].col(n).iter().copied().collect();
        if p == base {
            return Ok(col.iter().map(|z| z.conj()).collect());
        }
        Ok(row_times(&col, self.powers[p - base - 1].as_ref()))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|n| self.powers[0][(n, n)].re).collect()
    }

    /// True when every cached power has vanishing imaginary parts.
    pub fn is_real(&self) -> bool {
        self.powers.iter().all(|p| linalg::is_real(p.as_ref()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StateKind {
    Eigenstate { index: usize },
    /// Canonical weights `p_n ~ exp(-beta E_n)`; `beta = +-inf` selects the
    /// lowest or highest eigenstate.
    Thermal { beta: f64 },
    MaximallyMixed,
}

/// Diagonal initial state: probabilities over eigenstates of `H0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    pub kind: StateKind,
    pub weights: Vec<f64>,
}

impl InitialState {
    /// Commutes with `H0`, so two-time correlators depend only on time differences.
    pub fn is_stationary(&self) -> bool {
        !matches!(self.kind, StateKind::Eigenstate { .. })
    }

    /// Indices with nonzero weight, paired with the weight.
    pub fn support(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.weights.iter().copied().enumerate().filter(|&(_, p)| p != 0.0)
    }
}

pub fn make_state(kind: StateKind, eig: &Eigensystem) -> Result<InitialState> {
    let d = eig.dim();
    let weights = match kind {
        StateKind::Eigenstate { index } => {
            if index >= d {
                return Err(Error::InvalidState(format!("eigenstate index {index} out of range for dim {d}")));
            }
            indicator(d, index)
        }
        StateKind::MaximallyMixed => vec![1.0 / d as f64; d],
        StateKind::Thermal { beta } if beta == f64::INFINITY => indicator(d, 0),
        StateKind::Thermal { beta } if beta == f64::NEG_INFINITY => indicator(d, d - 1),
        StateKind::Thermal { beta } => {
            if beta.is_nan() {
                return Err(Error::InvalidState("inverse temperature is NaN".into()));
            }
            let mut w = boltzmann_factors(beta, eig.energies());
            let z: f64 = w.iter().sum();
            w.iter_mut().for_each(|p| *p /= z);
            w
        }
    };
    Ok(InitialState { kind, weights })
}

fn indicator(d: usize, n: usize) -> Vec<f64> {
    let mut w = vec![0.0; d];
    w[n] = 1.0;
    w
}

/// `exp(-beta (E_n - E_ref))` with `E_ref` chosen so the largest factor is 1.
pub fn boltzmann_factors(beta: f64, energies: &[f64]) -> Vec<f64> {
    let shift = energies.iter().map(|&e| -beta * e).fold(f64::NEG_INFINITY, f64::max);
    energies.iter().map(|&e| (-beta * e - shift).exp()).collect()
}

/// Gaussian kernel density of states, `sum_n g_W(E - E_n)`.
pub fn smoothed_density(energies: &[f64], e: f64, kernel_width: f64) -> f64 {
    let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * kernel_width);
    energies
        .iter()
        .map(|&en| {
            let x = (e - en) / kernel_width;
            (-0.5 * x * x).exp()
        })
        .sum::<f64>()
        * norm
}

/// `S(E) = ln(rho(E) W)`
pub fn entropy(energies: &[f64], e: f64, kernel_width: f64) -> f64 {
    (smoothed_density(energies, e, kernel_width) * kernel_width).ln()
}

pub fn default_kernel_width(eig: &Eigensystem) -> f64 {
    0.025 * eig.spectral_width()
}

pub fn default_bin_width(eig: &Eigensystem) -> f64 {
    0.05 * eig.spectral_width()
}

/// `dS/dE` at `e` by a centered difference of the smoothed entropy.
pub fn effective_beta(eig: &Eigensystem, e: f64, kernel_width: f64) -> Result<f64> {
    let energies = eig.energies();
    let (lo, hi) = (energies[0], energies[energies.len() - 1]);
    if !(lo..=hi).contains(&e) {
        return Err(Error::EnergyOutOfRange { energy: e, min: lo, max: hi });
    }
    if !(kernel_width > 0.0) {
        return Err(Error::InvalidArgument(format!("kernel width must be positive, got {kernel_width}")));
    }
    let h = kernel_width * 1e-2;
    Ok((entropy(energies, e + h, kernel_width) - entropy(energies, e - h, kernel_width)) / (2.0 * h))
}

/// Effective inverse temperature of every eigenstate.
pub fn effective_betas(eig: &Eigensystem, kernel_width: f64) -> Result<Vec<f64>> {
    eig.energies().iter().map(|&e| effective_beta(eig, e, kernel_width)).collect()
}

/// Mean consecutive level-spacing ratio `<min(s_k, s_k+1) / max(s_k, s_k+1)>`
/// over the central `fraction` of the spectrum. Exactly degenerate pairs are skipped.
pub fn level_spacing_ratio(energies: &[f64], fraction: f64) -> Result<f64> {
    let d = energies.len();
    let keep = ((d as f64) * fraction.clamp(0.0, 1.0)).round() as usize;
    if keep < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 levels for spacing ratios, got {keep}")));
    }
    let start = (d - keep) / 2;
    let window = &energies[start..start + keep];
    let gaps: Vec<f64> = window.windows(2).map(|w| w[1] - w[0]).collect();
    let ratios: Vec<f64> = gaps
        .windows(2)
        .filter(|g| g[0].max(g[1]) > 0.0)
        .map(|g| g[0].min(g[1]) / g[0].max(g[1]))
        .collect();
    if ratios.is_empty() {
        return Err(Error::InvalidArgument("spectrum fully degenerate".into()));
    }
    Ok(ratios.iter().sum::<f64>() / ratios.len() as f64)
}

/// Fraction of states at each spectral edge left out of the ETH gates.
pub const EDGE_FRACTION: f64 = 0.05;
/// Bins with fewer off-diagonal samples are excluded from the gates.
pub const MIN_BIN_SAMPLES: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffDiagonalBin {
    pub ebar: f64,
    pub omega: f64,
    pub count: usize,
    /// `|f_1|` estimated as `sqrt(<exp(S) |O_nm|^2>)`, averaged with the
    /// neighbouring mean-energy bins at the same frequency.
    pub abs_f1: f64,
    /// Mean and variance of the rescaled residuals `R_nm` in this bin.
    pub mean: (f64, f64),
    pub variance: f64,
    /// Enough samples to enter the gates.
    pub valid: bool,
}

impl OffDiagonalBin {
    pub fn passes_gate(&self) -> bool {
        let m = (self.mean.0 * self.mean.0 + self.mean.1 * self.mean.1).sqrt();
        m <= 0.05 && (0.8..=1.2).contains(&self.variance)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualSample {
    pub ebar: f64,
    pub omega: f64,
    pub r: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EthStatistics {
    pub bin_width: f64,
    pub kernel_width: f64,
    /// `(E_n, running mean of O_nn within +-bin_width/2)`
    pub diagonal_curve: Vec<(f64, f64)>,
    /// `(E, S(E))` on a uniform grid across the spectrum.
    pub entropy_curve: Vec<(f64, f64)>,
    pub bins: Vec<OffDiagonalBin>,
    /// Rescaled residuals of every bulk pair `n > m`.
    pub residuals: Vec<ResidualSample>,
}

impl EthStatistics {
    pub fn valid_bins(&self) -> impl Iterator<Item = &OffDiagonalBin> {
        self.bins.iter().filter(|b| b.valid)
    }

    /// Fraction of valid bins failing the mean/variance gate; `None` without valid bins.
    pub fn gate_failure_fraction(&self) -> Option<f64> {
        let valid: Vec<_> = self.valid_bins().collect();
        if valid.is_empty() {
            return None;
        }
        Some(valid.iter().filter(|b| !b.passes_gate()).count() as f64 / valid.len() as f64)
    }

    /// RMS deviation of `O_nn` from the running mean over the bulk states.
    pub fn diagonal_scatter(&self, diagonal: &[f64]) -> f64 {
        let d = diagonal.len();
        let edge = edge_count(d);
        let bulk = edge..d - edge;
        let n = bulk.len().max(1) as f64;
        (bulk.map(|k| (diagonal[k] - self.diagonal_curve[k].1).powi(2)).sum::<f64>() / n).sqrt()
    }
}

fn edge_count(d: usize) -> usize {
    ((d as f64) * EDGE_FRACTION).floor() as usize
}

/// Off-diagonal ETH structure on a grid of `(Ebar, omega)` bins of width
/// `bin_width`, with the entropy smoothed by a Gaussian of width `kernel_width`.
pub fn extract_eth(obs: &EigenbasisObservable, bin_width: f64, kernel_width: f64) -> Result<EthStatistics> {
    if !(bin_width > 0.0 && kernel_width > 0.0) {
        return Err(Error::InvalidArgument("bin and kernel widths must be positive".into()));
    }
    let energies = obs.energies();
    let d = energies.len();
    let (e_lo, e_hi) = (energies[0], energies[d - 1]);

    let diagonal = obs.diagonal();
    let mut diagonal_curve = Vec::with_capacity(d);
    let (mut lo, mut hi, mut acc) = (0usize, 0usize, 0.0);
    for n in 0..d {
        while hi < d && energies[hi] <= energies[n] + bin_width / 2.0 {
            acc += diagonal[hi];
            hi += 1;
        }
        while energies[lo] < energies[n] - bin_width / 2.0 {
            acc -= diagonal[lo];
            lo += 1;
        }
        diagonal_curve.push((energies[n], acc / (hi - lo) as f64));
    }

    const ENTROPY_POINTS: usize = 201;
    let entropy_curve = (0..ENTROPY_POINTS)
        .map(|k| {
            let e = e_lo + (e_hi - e_lo) * k as f64 / (ENTROPY_POINTS - 1) as f64;
            (e, entropy(energies, e, kernel_width))
        })
        .collect();

    let edge = edge_count(d);
    let bulk = edge..d - edge;
    let state_entropy: Vec<f64> = energies.iter().map(|&e| entropy(energies, e, kernel_width)).collect();
    let n_e = (((e_hi - e_lo) / bin_width).floor() as usize + 1).max(1);
    let n_w = n_e;
    let bin_of = |ebar: f64, omega: f64| -> usize {
        let i = (((ebar - e_lo) / bin_width) as usize).min(n_e - 1);
        let j = ((omega / bin_width) as usize).min(n_w - 1);
        i * n_w + j
    };
    let ebar_entropy = |n: usize, m: usize| 0.5 * (state_entropy[n] + state_entropy[m]);

    let mut count = vec![0usize; n_e * n_w];
    let mut weighted = vec![0.0f64; n_e * n_w];
    for n in bulk.clone() {
        for m in edge..n {
            let b = bin_of(0.5 * (energies[n] + energies[m]), energies[n] - energies[m]);
            count[b] += 1;
            weighted[b] += ebar_entropy(n, m).exp() * obs.element(n, m).norm_sqr();
        }
    }
    let mut f1 = vec![0.0f64; n_e * n_w];
    for i in 0..n_e {
        for j in 0..n_w {
            let (mut c, mut s) = (0usize, 0.0);
            for ii in i.saturating_sub(1)..=(i + 1).min(n_e - 1) {
                c += count[ii * n_w + j];
                s += weighted[ii * n_w + j];
            }
            if c > 0 {
                f1[i * n_w + j] = (s / c as f64).sqrt();
            }
        }
    }

    let mut residuals = Vec::new();
    let mut sum = vec![C64::new(0.0, 0.0); n_e * n_w];
    let mut sum_sq = vec![0.0f64; n_e * n_w];
    for n in bulk.clone() {
        for m in edge..n {
            let ebar = 0.5 * (energies[n] + energies[m]);
            let omega = energies[n] - energies[m];
            let b = bin_of(ebar, omega);
            if f1[b] == 0.0 {
                continue;
            }
            let r = obs.element(n, m) * (0.5 * ebar_entropy(n, m)).exp() / f1[b];
            sum[b] += r;
            sum_sq[b] += r.norm_sqr();
            residuals.push(ResidualSample { ebar, omega, r: (r.re, r.im) });
        }
    }

    let mut bins = Vec::new();
    for i in 0..n_e {
        for j in 0..n_w {
            let b = i * n_w + j;
            if count[b] == 0 {
                continue;
            }
            let c = count[b] as f64;
            let mean = sum[b] / c;
            let variance = sum_sq[b] / c - mean.norm_sqr();
            bins.push(OffDiagonalBin {
                ebar: e_lo + (i as f64 + 0.5) * bin_width,
                omega: (j as f64 + 0.5) * bin_width,
                count: count[b],
                abs_f1: f1[b],
                mean: (mean.re, mean.im),
                variance,
                valid: count[b] >= MIN_BIN_SAMPLES,
            });
        }
    }

    Ok(EthStatistics { bin_width, kernel_width, diagonal_curve, entropy_curve, bins, residuals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::diagonalize;
    use crate::models::{build_hamiltonian, HamiltonianSpec, Model, ModelSpec, ObservableSpec};
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn model_obs(spec: &ModelSpec, max_power: usize) -> EigenbasisObservable {
        let model = Model::build(spec).unwrap();
        let eig = Arc::new(diagonalize(&model.h0).unwrap());
        EigenbasisObservable::new(&model.observable, eig, max_power).unwrap()
    }

    #[test]
    fn sigma_x_in_sigma_z_basis_is_off_diagonal() {
        let obs = model_obs(&ModelSpec::single_spin(1.0), 2);
        assert_eq!(obs.energies(), &[-1.0, 1.0]);
        assert_eq!(obs.element(0, 0), c(0.0, 0.0));
        assert_eq!(obs.element(1, 1), c(0.0, 0.0));
        assert_eq!(obs.element(0, 1).norm(), 1.0);
        let sq = obs.power(2).unwrap();
        assert_eq!(sq[(0, 0)], c(1.0, 0.0));
        assert_eq!(sq[(0, 1)], c(0.0, 0.0));
    }

    #[test]
    fn function_of_h0_is_diagonal() {
        let h = build_hamiltonian(&HamiltonianSpec::chaotic_ising(5)).unwrap();
        let f = HermitianMatrix::new(crate::linalg::matmul(h.as_ref(), h.as_ref())).unwrap();
        let eig = Arc::new(diagonalize(&h).unwrap());
        let obs = EigenbasisObservable::new(&f, eig, 1).unwrap();
        let scale = f.max_abs();
        for n in 0..obs.dim() {
            for m in 0..obs.dim() {
                if n != m {
                    assert!(obs.element(n, m).norm() <= 1e-10 * scale);
                }
            }
        }
    }

    #[test]
    fn cached_powers_match_products_and_rows() {
        let obs = model_obs(&ModelSpec::new(HamiltonianSpec::chaotic_ising(6), ObservableSpec::UniformX), 3);
        let o = obs.elements();
        let sq = crate::linalg::matmul(o, o);
        let p2 = obs.power(2).unwrap();
        let scale = crate::linalg::max_abs(sq.as_ref());
        for i in 0..obs.dim() {
            for j in 0..obs.dim() {
                assert!((sq[(i, j)] - p2[(i, j)]).norm() <= 1e-9 * scale);
                assert_eq!(p2[(i, j)], p2[(j, i)].conj());
            }
        }
        // rows of O^5 and O^6 via the cache vs explicit products
        let p3 = obs.power(3).unwrap();
        let p5 = crate::linalg::matmul(p3, p2);
        let p6 = crate::linalg::matmul(p3, p3);
        for n in [0, 17, 40] {
            let r5 = obs.power_row(n, 5).unwrap();
            let r6 = obs.power_row(n, 6).unwrap();
            for m in 0..obs.dim() {
                assert!((r5[m] - p5[(n, m)]).norm() <= 1e-10 * scale.powf(2.5));
                assert!((r6[m] - p6[(n, m)]).norm() <= 1e-10 * scale.powi(3));
            }
        }
        assert!(matches!(obs.power_row(0, 7), Err(Error::InsufficientPowers { .. })));
        assert!(matches!(obs.power(4), Err(Error::InsufficientPowers { .. })));
        assert_eq!(obs.power_row(3, 0).unwrap()[3], c(1.0, 0.0));
    }

    #[test]
    fn row_norms_equal_square_diagonal() {
        let obs = model_obs(&ModelSpec::new(HamiltonianSpec::chaotic_ising(6), ObservableSpec::UniformX), 2);
        let p2 = obs.power(2).unwrap();
        for n in 0..obs.dim() {
            let s: f64 = (0..obs.dim()).map(|m| obs.element(n, m).norm_sqr()).sum();
            assert!((s - p2[(n, n)].re).abs() <= 1e-10);
        }
    }

    #[test]
    fn state_weights() {
        let eig = diagonalize(&HermitianMatrix::from_real_diagonal(&[-1.0, 1.0]).unwrap()).unwrap();
        let hot = make_state(StateKind::Thermal { beta: 0.0 }, &eig).unwrap();
        assert_eq!(hot.weights, vec![0.5, 0.5]);
        let cold = make_state(StateKind::Thermal { beta: 20.0 }, &eig).unwrap();
        assert!(cold.weights[0] >= 1.0 - 1e-10);
        let expected_excited = (-40.0f64).exp() / (1.0 + (-40.0f64).exp());
        assert!((cold.weights[1] - expected_excited).abs() <= 1e-25);
        let inf = make_state(StateKind::Thermal { beta: f64::NEG_INFINITY }, &eig).unwrap();
        assert_eq!(inf.weights, vec![0.0, 1.0]);
        assert_eq!(make_state(StateKind::Eigenstate { index: 1 }, &eig).unwrap().weights, vec![0.0, 1.0]);
        assert!(make_state(StateKind::Eigenstate { index: 2 }, &eig).is_err());
        assert!(make_state(StateKind::Thermal { beta: f64::NAN }, &eig).is_err());
        assert!(!make_state(StateKind::Eigenstate { index: 0 }, &eig).unwrap().is_stationary());
        assert_eq!(make_state(StateKind::MaximallyMixed, &eig).unwrap().weights, vec![0.5, 0.5]);
    }

    #[test]
    fn huge_beta_does_not_overflow() {
        let eig = diagonalize(&HermitianMatrix::from_real_diagonal(&[-500.0, 0.0, 700.0]).unwrap()).unwrap();
        for beta in [-10.0, 10.0] {
            let s = make_state(StateKind::Thermal { beta }, &eig).unwrap();
            assert!(s.weights.iter().all(|p| p.is_finite()));
            assert!((s.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn effective_beta_signs_and_peak() {
        let h = build_hamiltonian(&HamiltonianSpec::chaotic_ising(8)).unwrap();
        let eig = diagonalize(&h).unwrap();
        let w = default_kernel_width(&eig);
        let e = eig.energies();
        let mean = e.iter().sum::<f64>() / e.len() as f64;
        let sd = (e.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / e.len() as f64).sqrt();
        // locate the density maximum on a fine grid
        let (lo, hi) = (e[0], e[e.len() - 1]);
        let peak = (0..=4000)
            .map(|k| lo + (hi - lo) * k as f64 / 4000.0)
            .max_by(|a, b| smoothed_density(e, *a, w).total_cmp(&smoothed_density(e, *b, w)))
            .unwrap();
        assert!(effective_beta(&eig, peak, w).unwrap().abs() <= 0.05 / sd);
        assert!(effective_beta(&eig, lo + 0.25 * (hi - lo), w).unwrap() > 0.0);
        assert!(effective_beta(&eig, lo + 0.75 * (hi - lo), w).unwrap() < 0.0);
        assert!(matches!(effective_beta(&eig, hi + 1.0, w), Err(Error::EnergyOutOfRange { .. })));
    }

    #[test]
    fn spacing_ratio_of_uniform_and_degenerate_spectra() {
        let ladder: Vec<f64> = (0..50).map(|k| k as f64).collect();
        assert!((level_spacing_ratio(&ladder, 1.0).unwrap() - 1.0).abs() < 1e-14);
        assert!(level_spacing_ratio(&[0.0, 1.0], 1.0).is_err());
    }

    #[test]
    fn eth_extraction_on_a_small_chain() {
        let obs = model_obs(&ModelSpec::new(HamiltonianSpec::chaotic_ising(8), ObservableSpec::CentralX), 1);
        let eig = obs.eigensystem().clone();
        let stats = extract_eth(&obs, default_bin_width(&eig), default_kernel_width(&eig)).unwrap();
        assert_eq!(stats.diagonal_curve.len(), 256);
        assert_eq!(stats.entropy_curve.len(), 201);
        let total: usize = stats.bins.iter().map(|b| b.count).sum();
        let bulk = 256 - 2 * edge_count(256);
        assert_eq!(total, bulk * (bulk - 1) / 2);
        assert_eq!(stats.residuals.len(), total);
        assert!(stats.valid_bins().count() > 0);
        // entropy is concave around the centre on the scale of a bin
        let mid = stats.entropy_curve.len() / 2;
        let s = |k: usize| stats.entropy_curve[k].1;
        for k in mid - 20..mid + 20 {
            assert!(s(k - 10) + s(k + 10) - 2.0 * s(k) < 0.0, "k={k}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn thermal_weights_normalized_and_monotone(
            beta in -5.0f64..5.0,
            mut energies in proptest::collection::vec(-10.0f64..10.0, 2..40),
        ) {
            energies.sort_by(f64::total_cmp);
            let eig = diagonalize(&HermitianMatrix::from_real_diagonal(&energies).unwrap()).unwrap();
            let s = make_state(StateKind::Thermal { beta }, &eig).unwrap();
            prop_assert!((s.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(s.weights.iter().all(|&p| p >= 0.0));
            if beta > 0.0 {
                prop_assert!(s.weights.windows(2).all(|w| w[1] <= w[0]));
            }
        }
    }
}
