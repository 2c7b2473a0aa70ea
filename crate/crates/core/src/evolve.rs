//! Exact dynamics under `H0 + lambda(t) O`: delta kicks and Strang-split
//! finite pulses, all carried out in the eigenbasis of `H0`.

use std::io::Write;
use std::sync::Arc;

use faer::{Mat, MatRef};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    self, check_dim, diagonalize, matmul, matmul_adj_lhs, mat_vec, real_times_complex, Eigensystem, HermitianExp,
    HermitianMatrix, UnitaryMatrix,
};
use crate::pulses::Pulse;
use crate::spectra::{EigenbasisObservable, InitialState, StateKind};
use crate::C64;

/// Largest allowed `dt * ||H0||`.
pub const STABILITY_LIMIT: f64 = 0.1;
/// Columns propagated together by one worker.
const COLUMN_CHUNK: usize = 32;
/// Default step as a fraction of `1 / ||H0||`.
pub const DEFAULT_STEP_FRACTION: f64 = 0.01;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Splitting {
    #[default]
    Strang,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    /// Time step; `None` picks `0.01 / ||H0||`.
    pub dt: Option<f64>,
    pub splitting: Splitting,
}

impl EvolutionConfig {
    pub fn with_dt(dt: f64) -> Self {
        Self { dt: Some(dt), splitting: Splitting::Strang }
    }

    /// Step count and the actual step (`support / steps`, never larger than the
    /// requested one) for a pulse of length `support`.
    pub fn plan(&self, h_norm: f64, support: f64) -> Result<StepPlan> {
        let dt = self.dt.unwrap_or(DEFAULT_STEP_FRACTION / h_norm.max(f64::MIN_POSITIVE));
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("time step must be positive and finite, got {dt}")));
        }
        if dt * h_norm > STABILITY_LIMIT * (1.0 + 1e-12) {
            return Err(Error::UnstableStep { dt, h_max: h_norm });
        }
        if !(support > 0.0 && support.is_finite()) {
            return Err(Error::InvalidPulse(format!("pulse support must be positive and finite, got {support}")));
        }
        let steps = ((support / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        Ok(StepPlan { steps, dt: support / steps as f64 })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepPlan {
    pub steps: usize,
    pub dt: f64,
}

/// `exp(-i lambda O)`.
pub fn kick_evolve(h0: &HermitianMatrix, o: &HermitianMatrix, lambda: f64) -> Result<UnitaryMatrix> {
    check_dim(h0.dim(), o.dim())?;
    linalg::unitary_from_hermitian(o, lambda)
}

/// `sum_n p_n (<n|U^H H0 U|n> - E_n)` with `|n>` the eigenvectors in `eig`.
pub fn delta_e_exact(u: &UnitaryMatrix, state: &InitialState, h0: &HermitianMatrix, eig: &Eigensystem) -> Result<f64> {
    check_dim(h0.dim(), u.dim())?;
    check_dim(eig.dim(), u.dim())?;
    check_dim(eig.dim(), state.weights.len())?;
    let mut total = 0.0;
    for (n, p) in state.support() {
        let psi = u.apply(&eig.vector(n))?;
        total += p * (linalg::expectation(&psi, h0)? - eig.energies()[n]);
    }
    Ok(total)
}

/// `-i lambda <e^{i lambda O} [H0, O] e^{-i lambda O}>`, the all-orders sum of
/// the kick series. State weights are used as given, without normalization.
pub fn paper_convention_kick_de(obs: &EigenbasisObservable, state: &InitialState, lambda: f64) -> Result<f64> {
    Dynamics::new(obs)?.series_convention_delta_e(state, lambda)
}

/// Weights `exp(-beta E_n)` with no shift or normalization.
pub fn unnormalized_thermal(beta: f64, eig: &Eigensystem) -> InitialState {
    InitialState {
        kind: StateKind::Thermal { beta },
        weights: eig.energies().iter().map(|e| (-beta * e).exp()).collect(),
    }
}

/// Strang-split propagator of `H0 + lambda(t) O` over the pulse support, in
/// the original basis.
pub fn pulse_evolve(
    h0: &HermitianMatrix,
    o: &HermitianMatrix,
    pulse: &Pulse,
    cfg: &EvolutionConfig,
) -> Result<UnitaryMatrix> {
    check_dim(h0.dim(), o.dim())?;
    let eig = Arc::new(diagonalize(h0)?);
    let obs = EigenbasisObservable::new(o, eig.clone(), 1)?;
    let all: Vec<usize> = (0..eig.dim()).collect();
    let u_eb = Dynamics::new(&obs)?.propagate(pulse, cfg, &all)?;
    let v = eig.basis();
    let back = matmul(v, u_eb.as_ref());
    Ok(UnitaryMatrix::from_mat(linalg::matmul_adj_rhs(back.as_ref(), v)))
}

enum Basis {
    Real(Mat<f64>),
    Complex(Mat<C64>),
}

impl Basis {
    /// `W^H x`
    fn to_eigen(&self, x: MatRef<'_, C64>) -> Mat<C64> {
        match self {
            Basis::Real(w) => real_times_complex(w.as_ref(), true, x),
            Basis::Complex(w) => matmul_adj_lhs(w.as_ref(), x),
        }
    }

    /// `W x`
    fn from_eigen(&self, x: MatRef<'_, C64>) -> Mat<C64> {
        match self {
            Basis::Real(w) => real_times_complex(w.as_ref(), false, x),
            Basis::Complex(w) => matmul(w.as_ref(), x),
        }
    }
}

/// One trajectory sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub energy: f64,
    pub expect_o: f64,
}

/// Result of a pulse evolution for a diagonal initial state.
#[derive(Clone, Debug)]
pub struct PulseOutcome {
    pub delta_e: f64,
    pub plan: StepPlan,
    pub trajectory: Vec<TrajectoryPoint>,
}

/// Kick and pulse dynamics in the eigenbasis of `H0`, sharing one
/// diagonalization of `O`.
pub struct Dynamics {
    eig: Arc<Eigensystem>,
    o_eb: HermitianMatrix,
    o_exp: HermitianExp,
    basis: Basis,
}

impl Dynamics {
    pub fn new(obs: &EigenbasisObservable) -> Result<Self> {
        let o_eb = HermitianMatrix::from_trusted(obs.elements().to_owned());
        let o_exp = HermitianExp::new(&o_eb)?;
        let w = o_exp.eigensystem().basis();
        let basis = if linalg::is_real(w) {
            Basis::Real(Mat::from_fn(w.nrows(), w.ncols(), |i, j| w[(i, j)].re))
        } else {
            Basis::Complex(w.to_owned())
        };
        Ok(Self { eig: obs.eigensystem().clone(), o_eb, o_exp, basis })
    }

    pub fn dim(&self) -> usize {
        self.eig.dim()
    }

    pub fn energies(&self) -> &[f64] {
        self.eig.energies()
    }

    /// Spectral radius of `H0`, the norm used by the stability gate.
    pub fn h_norm(&self) -> f64 {
        self.energies().iter().fold(0.0f64, |m, e| m.max(e.abs()))
    }

    fn check_state(&self, state: &InitialState) -> Result<()> {
        check_dim(self.dim(), state.weights.len())
    }

    /// `e^{-i lambda O}|n>` in eigenbasis coordinates.
    pub fn kicked_state(&self, n: usize, lambda: f64) -> Result<Vec<C64>> {
        if n >= self.dim() {
            return Err(Error::InvalidState(format!("eigenstate index {n} out of range for dim {}", self.dim())));
        }
        let mut e = vec![C64::new(0.0, 0.0); self.dim()];
        e[n] = C64::new(1.0, 0.0);
        self.o_exp.apply(lambda, &e)
    }

    fn energy_of(&self, psi: &[C64]) -> f64 {
        psi.iter().zip(self.energies()).map(|(c, e)| c.norm_sqr() * e).sum()
    }

    /// Exact energy change of eigenstate `n` after `e^{-i lambda O}`.
    pub fn kick_delta_e_eigenstate(&self, n: usize, lambda: f64) -> Result<f64> {
        let psi = self.kicked_state(n, lambda)?;
        Ok(self.energy_of(&psi) - self.energies()[n])
    }

    /// Exact energy change of a diagonal state after `e^{-i lambda O}`.
    pub fn kick_delta_e(&self, state: &InitialState, lambda: f64) -> Result<f64> {
        self.check_state(state)?;
        let support: Vec<(usize, f64)> = state.support().collect();
        let parts = support
            .par_iter()
            .map(|&(n, p)| self.kick_delta_e_eigenstate(n, lambda).map(|de| p * de))
            .collect::<Result<Vec<f64>>>()?;
        Ok(parts.iter().sum())
    }

    /// `sum_n w_n 2 lambda Im <H0 psi_n | O psi_n>` with `psi_n = e^{-i lambda O}|n>`.
    pub fn series_convention_delta_e(&self, state: &InitialState, lambda: f64) -> Result<f64> {
        self.check_state(state)?;
        let support: Vec<(usize, f64)> = state.support().collect();
        let parts = support
            .par_iter()
            .map(|&(n, w)| {
                let psi = self.kicked_state(n, lambda)?;
                let o_psi = mat_vec(self.o_eb.as_ref(), &psi);
                let im: f64 = psi
                    .iter()
                    .zip(&o_psi)
                    .zip(self.energies())
                    .map(|((a, b), e)| (a.conj() * b).im * e)
                    .sum();
                Ok(w * 2.0 * lambda * im)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(parts.iter().sum())
    }

    /// Strang propagator restricted to the given eigenbasis columns
    /// (`D x columns.len()`, eigenbasis coordinates).
    pub fn propagate(&self, pulse: &Pulse, cfg: &EvolutionConfig, columns: &[usize]) -> Result<Mat<C64>> {
        let plan = self.plan(pulse, cfg)?;
        let chunks = self.chunks(columns)?;
        let parts: Vec<Mat<C64>> = chunks
            .par_iter()
            .map(|cols| self.run(pulse, plan, cols, None, |_, _, _| {}))
            .collect::<Result<_>>()?;
        let d = self.dim();
        let mut out = Mat::<C64>::zeros(d, columns.len());
        let mut j0 = 0;
        for part in parts {
            for j in 0..part.ncols() {
                for i in 0..d {
                    out[(i, j0 + j)] = part[(i, j)];
                }
            }
            j0 += part.ncols();
        }
        Ok(out)
    }

    /// Energy change of a diagonal state under the pulse. With
    /// `sample_every = Some(k)` the trajectory is recorded every `k` steps
    /// (plus the first and last).
    pub fn pulse_delta_e(
        &self,
        state: &InitialState,
        pulse: &Pulse,
        cfg: &EvolutionConfig,
        sample_every: Option<usize>,
    ) -> Result<PulseOutcome> {
        self.check_state(state)?;
        let plan = self.plan(pulse, cfg)?;
        let support: Vec<(usize, f64)> = state.support().collect();
        let columns: Vec<usize> = support.iter().map(|&(n, _)| n).collect();
        let weights: Vec<f64> = support.iter().map(|&(_, p)| p).collect();
        let chunks = self.chunks(&columns)?;
        let energies = self.energies();
        let o_diag = self.o_exp.eigensystem().energies();

        // per-column energies and trajectories, reduced in column order below
        let results: Vec<(Vec<f64>, Vec<(f64, Vec<(f64, f64)>)>)> = chunks
            .par_iter()
            .map(|cols| {
                let mut traj = Vec::new();
                let record = |t: f64, u: MatRef<'_, C64>, x: MatRef<'_, C64>| {
                    let per_col = (0..u.ncols())
                        .map(|j| {
                            let e: f64 = (0..u.nrows()).map(|i| u[(i, j)].norm_sqr() * energies[i]).sum();
                            let o: f64 = (0..x.nrows()).map(|i| x[(i, j)].norm_sqr() * o_diag[i]).sum();
                            (e, o)
                        })
                        .collect();
                    traj.push((t, per_col));
                };
                let u = self.run(pulse, plan, cols, sample_every, record)?;
                let finals = (0..u.ncols())
                    .map(|j| (0..u.nrows()).map(|i| u[(i, j)].norm_sqr() * energies[i]).sum())
                    .collect();
                Ok((finals, traj))
            })
            .collect::<Result<_>>()?;

        let finals: Vec<f64> = results.iter().flat_map(|(f, _)| f.iter().copied()).collect();
        let delta_e = finals.iter().zip(&support).map(|(e, &(n, p))| p * (e - energies[n])).sum();
        let samples = results.first().map_or(0, |(_, t)| t.len());
        let trajectory = (0..samples)
            .map(|k| {
                let t = results[0].1[k].0;
                let cols = results.iter().flat_map(|(_, traj)| traj[k].1.iter());
                let (energy, expect_o) =
                    cols.zip(&weights).fold((0.0, 0.0), |(e, o), (&(ej, oj), &p)| (e + p * ej, o + p * oj));
                TrajectoryPoint { t, energy, expect_o }
            })
            .collect();
        Ok(PulseOutcome { delta_e, plan, trajectory })
    }

    fn plan(&self, pulse: &Pulse, cfg: &EvolutionConfig) -> Result<StepPlan> {
        pulse.validate()?;
        if pulse.is_kick() {
            return Err(Error::InvalidPulse("a delta kick has no finite support to step through; use the kick unitary".into()));
        }
        cfg.plan(self.h_norm(), pulse.support())
    }

    /// Splits `columns` into fixed-size pieces. The split does not depend on
    /// the pool size, so results are identical for any thread count.
    fn chunks(&self, columns: &[usize]) -> Result<Vec<Vec<usize>>> {
        if let Some(&bad) = columns.iter().find(|&&n| n >= self.dim()) {
            return Err(Error::InvalidState(format!("eigenstate index {bad} out of range for dim {}", self.dim())));
        }
        if columns.is_empty() {
            return Ok(Vec::new());
        }
        Ok(columns.chunks(COLUMN_CHUNK).map(<[usize]>::to_vec).collect())
    }

    /// Steps the identity columns `cols` through the pulse. `record` sees the
    /// state and its `O`-eigenbasis image at each sample time.
    fn run(
        &self,
        pulse: &Pulse,
        plan: StepPlan,
        cols: &[usize],
        sample_every: Option<usize>,
        mut record: impl FnMut(f64, MatRef<'_, C64>, MatRef<'_, C64>),
    ) -> Result<Mat<C64>> {
        let d = self.dim();
        let dt = plan.dt;
        let half: Vec<C64> = self.energies().iter().map(|&e| C64::from_polar(1.0, -0.5 * dt * e)).collect();
        let o_vals = self.o_exp.eigensystem().energies();
        let mut u = Mat::from_fn(d, cols.len(), |i, j| if i == cols[j] { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) });
        let sample = |k: usize| match sample_every {
            Some(every) => k % every.max(1) == 0 || k == plan.steps,
            None => false,
        };
        if sample(0) {
            let x = self.basis.to_eigen(u.as_ref());
            record(0.0, u.as_ref(), x.as_ref());
        }
        for k in 0..plan.steps {
            let t_mid = (k as f64 + 0.5) * dt;
            let lam = pulse.evaluate(t_mid)?;
            scale_rows(&mut u, &half);
            if lam != 0.0 {
                let mut x = self.basis.to_eigen(u.as_ref());
                let kick: Vec<C64> = o_vals.iter().map(|&a| C64::from_polar(1.0, -lam * a * dt)).collect();
                scale_rows(&mut x, &kick);
                u = self.basis.from_eigen(x.as_ref());
            }
            scale_rows(&mut u, &half);
            if sample(k + 1) {
                let x = self.basis.to_eigen(u.as_ref());
                record((k + 1) as f64 * dt, u.as_ref(), x.as_ref());
            }
        }
        Ok(u)
    }
}

fn scale_rows(m: &mut Mat<C64>, factors: &[C64]) {
    for j in 0..m.ncols() {
        for (i, f) in factors.iter().enumerate() {
            m[(i, j)] *= f;
        }
    }
}

/// Writes `t,energy,expect_O` rows.
pub fn write_trajectory<W: Write>(points: &[TrajectoryPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "energy", "expect_O"])?;
    for p in points {
        w.write_record([p.t.to_string(), p.energy.to_string(), p.expect_o.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{HamiltonianSpec, Model, ModelSpec, ObservableSpec};
    use crate::series::{delta_kick_series, Route};
    use crate::spectra::make_state;

    fn setup(spec: &ModelSpec, max_power: usize) -> (Model, EigenbasisObservable) {
        let model = Model::build(spec).unwrap();
        let eig = Arc::new(diagonalize(&model.h0).unwrap());
        let obs = EigenbasisObservable::new(&model.observable, eig, max_power).unwrap();
        (model, obs)
    }

    fn chaotic(l: usize, observable: ObservableSpec) -> ModelSpec {
        ModelSpec::new(HamiltonianSpec::chaotic_ising(l), observable)
    }

    fn hann(area: f64, duration: f64) -> Pulse {
        // the Hann window integrates to amplitude * duration / 2
        Pulse::Hann { amplitude: 2.0 * area / duration, duration }
    }

    #[test]
    fn kick_unitary_of_single_spin() {
        let (model, _) = setup(&ModelSpec::single_spin(1.3), 1);
        let zero = kick_evolve(&model.h0, &model.observable, 0.0).unwrap();
        assert!(linalg::max_abs_diff(zero.as_ref(), UnitaryMatrix::identity(2).as_ref()) < 1e-14);
        let lam = 0.7;
        let u = kick_evolve(&model.h0, &model.observable, lam).unwrap();
        let (c, s) = (lam.cos(), lam.sin());
        let expect = Mat::from_fn(2, 2, |i, j| if i == j { C64::new(c, 0.0) } else { C64::new(0.0, -s) });
        assert!(linalg::max_abs_diff(u.as_ref(), expect.as_ref()) < 1e-14);
        assert!(u.unitarity_defect() < 1e-10);
    }

    #[test]
    fn single_spin_ground_state_absorbs_two_b_sin_squared() {
        let b = 0.8;
        let (model, obs) = setup(&ModelSpec::single_spin(b), 1);
        let eig = obs.eigensystem();
        let ground = make_state(StateKind::Eigenstate { index: 0 }, eig).unwrap();
        let dynamics = Dynamics::new(&obs).unwrap();
        for lam in [0.1, 0.5, 1.2, 2.0] {
            let u = kick_evolve(&model.h0, &model.observable, lam).unwrap();
            let de = delta_e_exact(&u, &ground, &model.h0, eig).unwrap();
            let expect = 2.0 * b * lam.sin().powi(2);
            assert!((de - expect).abs() < 1e-12, "{de} vs {expect}");
            assert!((dynamics.kick_delta_e(&ground, lam).unwrap() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_thermal_single_spin_matches_tanh_form() {
        let (b, beta) = (1.0, 0.6);
        let (_, obs) = setup(&ModelSpec::single_spin(b), 1);
        let state = make_state(StateKind::Thermal { beta }, obs.eigensystem()).unwrap();
        let dynamics = Dynamics::new(&obs).unwrap();
        for lam in [0.3, 1.0, 2.0] {
            let de = dynamics.kick_delta_e(&state, lam).unwrap();
            // ground gains and excited loses 2B sin^2(lambda)
            let closed = b * (beta * b).tanh() * (1.0 - (2.0 * lam).cos());
            assert!((de - closed).abs() < 1e-12, "{de} vs {closed}");
            assert!(de >= 0.0);
        }
    }

    #[test]
    fn maximally_mixed_state_gains_nothing() {
        let (model, obs) = setup(&chaotic(6, ObservableSpec::CentralX), 1);
        let eig = obs.eigensystem();
        let state = make_state(StateKind::MaximallyMixed, eig).unwrap();
        let u = kick_evolve(&model.h0, &model.observable, 0.9).unwrap();
        let de = delta_e_exact(&u, &state, &model.h0, eig).unwrap();
        assert!(de.abs() < 1e-12, "{de}");
        let dynamics = Dynamics::new(&obs).unwrap();
        assert!(dynamics.kick_delta_e(&state, 0.9).unwrap().abs() < 1e-12);
        let pulse = dynamics.pulse_delta_e(&state, &hann(0.5, 1.0), &EvolutionConfig::default(), None).unwrap();
        assert!(pulse.delta_e.abs() < 1e-11, "{}", pulse.delta_e);
    }

    #[test]
    fn eigenbasis_kick_matches_original_basis() {
        let (model, obs) = setup(&chaotic(5, ObservableSpec::UniformX), 1);
        let eig = obs.eigensystem();
        let dynamics = Dynamics::new(&obs).unwrap();
        let state = make_state(StateKind::Thermal { beta: 0.4 }, eig).unwrap();
        let u = kick_evolve(&model.h0, &model.observable, 0.45).unwrap();
        let a = delta_e_exact(&u, &state, &model.h0, eig).unwrap();
        let b = dynamics.kick_delta_e(&state, 0.45).unwrap();
        assert!((a - b).abs() < 1e-11, "{a} vs {b}");
    }

    #[test]
    fn upper_half_eigenstates_lose_energy() {
        let (_, obs) = setup(&chaotic(8, ObservableSpec::CentralX), 1);
        let dynamics = Dynamics::new(&obs).unwrap();
        let d = obs.dim();
        let mut negative = 0;
        let picks: Vec<usize> = (0..10).map(|k| d / 2 + d / 8 + k * (d / 4) / 10).collect();
        for &n in &picks {
            if dynamics.kick_delta_e_eigenstate(n, 0.5).unwrap() < 0.0 {
                negative += 1;
            }
        }
        assert!(negative >= 9, "{negative} of {}", picks.len());
    }

    #[test]
    fn series_convention_single_spin_closed_form() {
        let b = 0.9;
        let (_, obs) = setup(&ModelSpec::single_spin(b), 1);
        for beta in [0.3, 1.0] {
            let state = unnormalized_thermal(beta, obs.eigensystem());
            for lam in [0.2, 0.8, std::f64::consts::FRAC_PI_2, 2.0] {
                let de = paper_convention_kick_de(&obs, &state, lam).unwrap();
                let expect = 4.0 * b * lam * (beta * b).sinh() * (2.0 * lam).sin();
                assert!((de - expect).abs() < 1e-12 * (1.0 + expect.abs()), "{de} vs {expect}");
            }
            let at_two = paper_convention_kick_de(&obs, &state, 2.0).unwrap();
            assert!(at_two < 0.0);
        }
    }

    #[test]
    fn series_convention_resums_the_series() {
        let (_, obs) = setup(&chaotic(4, ObservableSpec::UniformX), 14);
        let lam = 0.3;
        let dynamics = Dynamics::new(&obs).unwrap();
        for n in [0, 5, 11] {
            let state = make_state(StateKind::Eigenstate { index: n }, obs.eigensystem()).unwrap();
            let closed = dynamics.series_convention_delta_e(&state, lam).unwrap();
            let terms = delta_kick_series(&obs, n, lam, 28, None).unwrap();
            let sum: f64 = terms.iter().filter(|t| t.route == Route::EigenbasisSum).map(|t| t.value).sum();
            assert!((closed - sum).abs() < 1e-8 * (1.0 + closed.abs()), "n={n}: {closed} vs {sum}");
        }
    }

    #[test]
    fn zero_pulse_is_free_evolution() {
        let (model, obs) = setup(&chaotic(5, ObservableSpec::CentralX), 1);
        let dynamics = Dynamics::new(&obs).unwrap();
        let s = 1.3;
        let pulse = Pulse::Hann { amplitude: 0.0, duration: s };
        let cols: Vec<usize> = (0..obs.dim()).collect();
        let u = dynamics.propagate(&pulse, &EvolutionConfig::default(), &cols).unwrap();
        let e = obs.energies();
        let expect = Mat::from_fn(obs.dim(), obs.dim(), |i, j| {
            if i == j { C64::from_polar(1.0, -e[i] * s) } else { C64::new(0.0, 0.0) }
        });
        assert!(linalg::max_abs_diff(u.as_ref(), expect.as_ref()) < 1e-10);
        let state = make_state(StateKind::Thermal { beta: 0.5 }, obs.eigensystem()).unwrap();
        let de = dynamics.pulse_delta_e(&state, &pulse, &EvolutionConfig::default(), None).unwrap();
        assert!(de.delta_e.abs() < 1e-10);
        let full = pulse_evolve(&model.h0, &model.observable, &pulse, &EvolutionConfig::default()).unwrap();
        assert!(full.unitarity_defect() < 1e-10);
    }

    #[test]
    fn long_evolution_stays_unitary() {
        let (_, obs) = setup(&chaotic(4, ObservableSpec::UniformX), 1);
        let dynamics = Dynamics::new(&obs).unwrap();
        let h = dynamics.h_norm();
        let dt = 0.05 / h;
        let pulse = hann(1.5, 10_000.0 * dt);
        let cols: Vec<usize> = (0..obs.dim()).collect();
        let u = dynamics.propagate(&pulse, &EvolutionConfig::with_dt(dt), &cols).unwrap();
        assert!(linalg::unitarity_defect(u.as_ref()) < 1e-8);
    }

    #[test]
    fn unstable_step_is_rejected() {
        let (_, obs) = setup(&chaotic(4, ObservableSpec::CentralX), 1);
        let dynamics = Dynamics::new(&obs).unwrap();
        let dt = 0.2 / dynamics.h_norm();
        let state = make_state(StateKind::Eigenstate { index: 3 }, obs.eigensystem()).unwrap();
        let res = dynamics.pulse_delta_e(&state, &hann(0.2, 1.0), &EvolutionConfig::with_dt(dt), None);
        assert!(matches!(res, Err(Error::UnstableStep { .. })));
        let kick = dynamics.pulse_delta_e(&state, &Pulse::DeltaKick { strength: 0.2 }, &EvolutionConfig::default(), None);
        assert!(matches!(kick, Err(Error::InvalidPulse(_))));
    }

    #[test]
    fn short_pulse_approaches_the_kick() {
        let (_, obs) = setup(&chaotic(6, ObservableSpec::CentralX), 1);
        let dynamics = Dynamics::new(&obs).unwrap();
        let state = make_state(StateKind::Thermal { beta: 0.3 }, obs.eigensystem()).unwrap();
        let lam = 0.2;
        let kick = dynamics.kick_delta_e(&state, lam).unwrap();
        let mut last = f64::INFINITY;
        for s in [0.1, 0.03, 0.01] {
            let de = dynamics.pulse_delta_e(&state, &hann(lam, s), &EvolutionConfig::default(), None).unwrap().delta_e;
            let rel = ((de - kick) / kick).abs();
            assert!(rel < last, "s={s}: {rel}");
            last = rel;
        }
        assert!(last < 0.02, "{last}");
    }

    #[test]
    fn strang_error_is_second_order() {
        let (_, obs) = setup(&chaotic(6, ObservableSpec::CentralX), 1);
        let dynamics = Dynamics::new(&obs).unwrap();
        let state = make_state(StateKind::Eigenstate { index: 20 }, obs.eigensystem()).unwrap();
        let pulse = hann(0.8, 2.0);
        let h = dynamics.h_norm();
        let run = |dt: f64| dynamics.pulse_delta_e(&state, &pulse, &EvolutionConfig::with_dt(dt), None).unwrap().delta_e;
        let dt = 0.1 / h;
        let (a, b, c) = (run(dt), run(dt / 2.0), run(dt / 4.0));
        let ratio = (a - b).abs() / (b - c).abs();
        assert!(ratio >= 3.5, "{ratio}");
    }

    #[test]
    fn trajectory_ends_at_final_energy() {
        let (_, obs) = setup(&chaotic(5, ObservableSpec::CentralX), 1);
        let dynamics = Dynamics::new(&obs).unwrap();
        let state = make_state(StateKind::Thermal { beta: 0.2 }, obs.eigensystem()).unwrap();
        let out = dynamics.pulse_delta_e(&state, &hann(0.4, 1.0), &EvolutionConfig::default(), Some(50)).unwrap();
        let first = out.trajectory.first().unwrap();
        let last = out.trajectory.last().unwrap();
        assert_eq!(first.t, 0.0);
        assert!((last.t - 1.0).abs() < 1e-12);
        assert!((last.energy - first.energy - out.delta_e).abs() < 1e-10);
        let o0: f64 = state.weights.iter().zip(obs.diagonal()).map(|(p, o)| p * o).sum();
        assert!((first.expect_o - o0).abs() < 1e-10);
        let mut buf = Vec::new();
        write_trajectory(&out.trajectory, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,energy,expect_O\n"));
        assert_eq!(text.lines().count(), out.trajectory.len() + 1);
    }
}
