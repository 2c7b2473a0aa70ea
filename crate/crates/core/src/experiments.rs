//! End-to-end studies driven by a JSON spec: build the model, diagonalize
//! (through the on-disk cache when one is given), run the requested energy
//! routes and write CSV tables plus one JSON summary.
//!
//! Every study parallelizes only over independent units (eigenstates, column
//! blocks) and reduces their results sequentially in a fixed order, so outputs
//! are bit-identical for any thread count.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result, StageExt};
use crate::evolve::{unnormalized_thermal, Dynamics, EvolutionConfig, TrajectoryPoint};
use crate::linalg::{diagonalize, EigenCache, Eigensystem};
use crate::models::{HamiltonianSpec, Model, ModelSpec};
use crate::pulses::Pulse;
use crate::response::{delta_e_linear, spectral_function, symmetric_grid, SpectralFunction};
use crate::series::{self, delta_kick_series, CommutatorTower, Route, SeriesTerm};
use crate::spectra::{self, EigenbasisObservable, InitialState, StateKind, EDGE_FRACTION};

/// Largest dimension for which the dense commutator route is evaluated.
pub const MAX_COMMUTATOR_DIM: usize = 1024;

/// Which initial states a study uses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "select", rename_all = "snake_case", deny_unknown_fields)]
pub enum StateSelector {
    Eigenstate { index: usize },
    Thermal { beta: f64 },
    MaximallyMixed,
    /// `count` bulk eigenstates spread evenly over those with effective
    /// inverse temperature in `[min, max]`; the offset is drawn from the seed.
    BetaWindow { min: f64, max: f64, count: usize },
}

impl Default for StateSelector {
    fn default() -> Self {
        StateSelector::BetaWindow { min: 0.2, max: 1.0, count: 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResponseOptions {
    /// Rescale the pulse so the linear estimate equals this fraction of the
    /// largest matrix element of `H0`.
    pub target_fraction: Option<f64>,
    /// Gaussian broadening of the spectral function; defaults to 0.5% of the spectral width.
    pub eta: Option<f64>,
    pub points_per_side: usize,
    /// Record the energy trajectory of the first rung every this many steps.
    pub trajectory_every: Option<usize>,
}

impl Default for ResponseOptions {
    fn default() -> Self {
        Self { target_fraction: None, eta: None, points_per_side: 500, trajectory_every: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingOptions {
    pub sizes: Vec<usize>,
    pub window: (f64, f64),
    pub count: usize,
}

impl Default for ScalingOptions {
    fn default() -> Self {
        Self { sizes: vec![8, 10, 12], window: (0.2, 1.0), count: 20 }
    }
}

fn default_lambdas() -> Vec<f64> {
    vec![0.1, 0.2, 0.5, 1.0]
}

fn default_max_order() -> usize {
    8
}

fn default_pulse() -> Pulse {
    Pulse::Hann { amplitude: 0.1, duration: 1.0 }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub model: ModelSpec,
    #[serde(default)]
    pub state: StateSelector,
    #[serde(default = "default_pulse")]
    pub pulse: Pulse,
    /// Kick strengths for the kick study.
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default = "default_max_order")]
    pub max_order: usize,
    /// Also evaluate the series from dense nested commutators (dim <= 1024).
    #[serde(default)]
    pub commutator_route: bool,
    #[serde(default)]
    pub evolution: EvolutionConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub response: ResponseOptions,
    #[serde(default)]
    pub scaling: ScalingOptions,
}

impl ExperimentSpec {
    pub fn new(model: ModelSpec) -> Self {
        Self {
            model,
            state: StateSelector::default(),
            pulse: default_pulse(),
            lambdas: default_lambdas(),
            max_order: default_max_order(),
            commutator_route: false,
            evolution: EvolutionConfig::default(),
            seed: 0,
            response: ResponseOptions::default(),
            scaling: ScalingOptions::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.hamiltonian.validate()?;
        self.pulse.validate()?;
        if self.max_order == 0 {
            return Err(Error::InvalidArgument("max_order must be at least 1".into()));
        }
        if let Some(bad) = self.lambdas.iter().find(|l| !l.is_finite()) {
            return Err(Error::InvalidArgument(format!("kick strengths must be finite, got {bad}")));
        }
        if let StateSelector::BetaWindow { min, max, count } = self.state {
            if !(min <= max) || count == 0 {
                return Err(Error::InvalidArgument(format!(
                    "effective-temperature window needs min <= max and count >= 1, got [{min}, {max}] x {count}"
                )));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON serialization.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("spec serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Model, eigensystem and eigenbasis observable, with the dense matrices
/// dropped once no longer needed.
pub struct Prepared {
    pub spec: ModelSpec,
    pub eig: Arc<Eigensystem>,
    pub obs: EigenbasisObservable,
    pub tower: Option<CommutatorTower>,
    /// Largest `|(H0)_ij|`.
    pub h_max: f64,
    pub from_cache: bool,
}

/// Eigensystem of `h0`, read from or added to `cache`.
pub fn cached_eigensystem(
    spec: &ModelSpec,
    model: &Model,
    cache: Option<&EigenCache>,
) -> Result<(Eigensystem, bool)> {
    let key = spec.hamiltonian_key();
    if let Some(cache) = cache {
        if let Some(eig) = cache.load(&key).stage("cache")? {
            if eig.dim() == model.h0.dim() {
                log::info!("loaded eigensystem from {}", cache.path_for(&key).display());
                return Ok((eig, true));
            }
            log::warn!("cached eigensystem has the wrong dimension; recomputing");
        }
    }
    log::info!("diagonalizing {} (dim {})", spec.label(), model.h0.dim());
    let eig = diagonalize(&model.h0).stage("diagonalize")?;
    if let Some(cache) = cache {
        cache.store(&key, &eig).stage("cache")?;
    }
    Ok((eig, false))
}

pub fn prepare(spec: &ModelSpec, cache: Option<&EigenCache>, max_power: usize, with_tower: usize) -> Result<Prepared> {
    let model = Model::build(spec).stage("build model")?;
    let (eig, from_cache) = cached_eigensystem(spec, &model, cache)?;
    let eig = Arc::new(eig);
    let obs = EigenbasisObservable::new(&model.observable, eig.clone(), max_power.max(1)).stage("rotate observable")?;
    let tower = if with_tower > 0 {
        Some(CommutatorTower::new(&model.h0, &model.observable, with_tower).stage("commutator tower")?)
    } else {
        None
    };
    Ok(Prepared { spec: spec.clone(), eig, obs, tower, h_max: model.h0.max_abs(), from_cache })
}

/// Indices of `count` bulk eigenstates spread evenly over those whose
/// effective inverse temperature lies in `[min, max]`.
pub fn sample_window(betas: &[f64], min: f64, max: f64, count: usize, seed: u64) -> Result<Vec<usize>> {
    let d = betas.len();
    let edge = ((d as f64) * EDGE_FRACTION).floor() as usize;
    let candidates: Vec<usize> = (edge..d - edge).filter(|&n| betas[n] >= min && betas[n] <= max).collect();
    if candidates.is_empty() {
        return Err(Error::InvalidState(format!("no bulk eigenstates with effective inverse temperature in [{min}, {max}]")));
    }
    if candidates.len() <= count {
        return Ok(candidates);
    }
    let u: f64 = ChaCha8Rng::seed_from_u64(seed).random();
    let len = candidates.len() as f64;
    Ok((0..count).map(|k| candidates[((k as f64 + u) * len / count as f64).floor() as usize]).collect())
}

/// One initial state of a study.
#[derive(Clone, Debug)]
pub struct Unit {
    pub label: String,
    pub index: Option<usize>,
    /// Eigenstate energy, or the mean energy of a mixture.
    pub energy: f64,
    pub beta_eff: Option<f64>,
    pub state: InitialState,
    /// Weights of the all-orders series convention (unnormalized for thermal states).
    pub weighted_state: InitialState,
}

pub fn select_units(selector: &StateSelector, eig: &Eigensystem, seed: u64) -> Result<Vec<Unit>> {
    let eigenstate_unit = |n: usize, beta: Option<f64>| -> Result<Unit> {
        let state = spectra::make_state(StateKind::Eigenstate { index: n }, eig)?;
        Ok(Unit {
            label: "eigenstate".into(),
            index: Some(n),
            energy: eig.energies()[n],
            beta_eff: beta,
            weighted_state: state.clone(),
            state,
        })
    };
    let mixture = |kind: StateKind, label: String, beta: Option<f64>, conv: InitialState| -> Result<Unit> {
        let state = spectra::make_state(kind, eig)?;
        let energy = state.weights.iter().zip(eig.energies()).map(|(p, e)| p * e).sum();
        Ok(Unit { label, index: None, energy, beta_eff: beta, state, weighted_state: conv })
    };
    let kernel = spectra::default_kernel_width(eig);
    match *selector {
        StateSelector::Eigenstate { index } => {
            let beta = spectra::effective_beta(eig, eig.energies().get(index).copied().unwrap_or(f64::NAN), kernel).ok();
            Ok(vec![eigenstate_unit(index, beta)?])
        }
        StateSelector::Thermal { beta } => {
            if !beta.is_finite() {
                return Err(Error::InvalidState(format!("thermal state needs a finite inverse temperature, got {beta}")));
            }
            let conv = unnormalized_thermal(beta, eig);
            Ok(vec![mixture(StateKind::Thermal { beta }, format!("thermal(beta={beta:?})"), Some(beta), conv)?])
        }
        StateSelector::MaximallyMixed => {
            let conv = unnormalized_thermal(0.0, eig);
            Ok(vec![mixture(StateKind::MaximallyMixed, "maximally_mixed".into(), Some(0.0), conv)?])
        }
        StateSelector::BetaWindow { min, max, count } => {
            let betas = spectra::effective_betas(eig, kernel)?;
            sample_window(&betas, min, max, count, seed)?
                .into_iter()
                .map(|n| eigenstate_unit(n, Some(betas[n])))
                .collect()
        }
    }
}

/// `f64` as the shortest decimal that round-trips.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn opt_usize(x: Option<usize>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// A CSV table held in memory until written.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Self {
        Self { name: name.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

/// Tables plus a JSON summary; what every study returns.
#[derive(Clone, Debug)]
pub struct Report {
    pub study: &'static str,
    pub tables: Vec<Table>,
    pub summary: Value,
}

impl Report {
    fn new(study: &'static str, spec: &ExperimentSpec, prepared_label: &str, results: Value, tables: Vec<Table>) -> Self {
        let summary = json!({
            "study": study,
            "model": prepared_label,
            "spec": spec,
            "spec_hash": spec.content_hash(),
            "seed": spec.seed,
            "crate_version": env!("CARGO_PKG_VERSION"),
            "results": results,
        });
        Self { study, tables, summary }
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Writes `<name>.csv` for each table and `<study>_summary.json`; returns the paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        for t in &self.tables {
            let path = dir.join(format!("{}.csv", t.name));
            write_atomic(&path, &t.to_csv()?)?;
            out.push(path);
        }
        let path = dir.join(format!("{}_summary.json", self.study));
        let mut text = serde_json::to_vec_pretty(&self.summary)?;
        text.push(b'\n');
        write_atomic(&path, &text)?;
        out.push(path);
        Ok(out)
    }
}

fn sites(spec: &ModelSpec) -> Option<usize> {
    spec.hamiltonian.sites()
}

/// Mean, standard error and sign fractions of a sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SampleStats {
    pub count: usize,
    pub mean: f64,
    pub std_error: f64,
    pub positive_fraction: f64,
    pub negative_fraction: f64,
}

impl SampleStats {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { count: 0, mean: f64::NAN, std_error: f64::NAN, positive_fraction: f64::NAN, negative_fraction: f64::NAN };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        Self {
            count: n,
            mean,
            std_error: (var / n as f64).sqrt(),
            positive_fraction: xs.iter().filter(|&&x| x > 0.0).count() as f64 / n as f64,
            negative_fraction: xs.iter().filter(|&&x| x < 0.0).count() as f64 / n as f64,
        }
    }
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) }
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// `4 B lambda sinh(beta B) sin(2 lambda)`, the all-orders kick series of a
/// single spin `B sigma_z` kicked along `sigma_x` from unnormalized thermal weights.
pub fn single_spin_closed_form(b: f64, beta: f64, lambda: f64) -> f64 {
    4.0 * b * lambda * (beta * b).sinh() * (2.0 * lambda).sin()
}

/// Series coefficients (values at `lambda = 1`) accumulated over a state's
/// support with its weights, per (order, route).
struct SeriesSummary {
    /// (order, route, value, dominant part)
    entries: Vec<(usize, Route, f64, Option<f64>)>,
}

impl SeriesSummary {
    fn compute(prep: &Prepared, state: &InitialState, max_order: usize) -> Result<Self> {
        let support: Vec<(usize, f64)> = state.support().collect();
        let per_state: Vec<Vec<SeriesTerm>> = support
            .par_iter()
            .map(|&(n, _)| delta_kick_series(&prep.obs, n, 1.0, max_order, prep.tower.as_ref()))
            .collect::<Result<_>>()?;
        let mut entries: Vec<(usize, Route, f64, Option<f64>)> = Vec::new();
        for (terms, &(_, w)) in per_state.iter().zip(&support) {
            for (k, t) in terms.iter().enumerate() {
                let dom = t.dominant_sum.map(|d| series::cross_coefficient(t.order, 0) * d / factorial(t.order - 1));
                match entries.get_mut(k) {
                    Some(e) => {
                        e.2 += w * t.value;
                        if let (Some(acc), Some(d)) = (e.3.as_mut(), dom) {
                            *acc += w * d;
                        }
                    }
                    None => entries.push((t.order, t.route, w * t.value, dom.map(|d| w * d))),
                }
            }
        }
        Ok(Self { entries })
    }

    fn sum_at(&self, lambda: f64) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.1 == Route::EigenbasisSum)
            .map(|e| e.2 * lambda.powi(e.0 as i32))
            .sum()
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

const SERIES_HEADER: [&str; 11] =
    ["model", "L", "n", "E_n", "beta_eff", "order", "route", "value", "dominant", "subleading", "ratio"];
const KICK_HEADER: [&str; 11] = [
    "model",
    "L",
    "state",
    "n",
    "E_n",
    "beta_eff",
    "lambda",
    "exact",
    "series_convention",
    "series_sum",
    "closed_form",
];

/// Exact kick, all-orders series convention and truncated series for every
/// selected state and kick strength.
pub fn run_kick_study(spec: &ExperimentSpec, cache: Option<&EigenCache>) -> Result<Report> {
    spec.validate()?;
    let max_power = spec.max_order.div_ceil(2).max(1);
    let tower_order = if spec.commutator_route && spec.model.dim() <= MAX_COMMUTATOR_DIM { spec.max_order } else { 0 };
    let prep = prepare(&spec.model, cache, max_power, tower_order)?;
    let units = select_units(&spec.state, &prep.eig, spec.seed).stage("select states")?;
    let dynamics = Dynamics::new(&prep.obs).stage("kick propagator")?;
    let label = prep.spec.label();
    let l = opt_usize(sites(&prep.spec));
    let single_spin_b = match prep.spec.hamiltonian {
        HamiltonianSpec::SingleSpin { b } => Some(b),
        _ => None,
    };

    struct UnitResult {
        exact: Vec<f64>,
        conv: Vec<f64>,
        series: SeriesSummary,
    }
    let results: Vec<UnitResult> = units
        .par_iter()
        .map(|u| -> Result<UnitResult> {
            let exact = spec.lambdas.iter().map(|&lam| dynamics.kick_delta_e(&u.state, lam)).collect::<Result<_>>()?;
            let conv =
                spec.lambdas.iter().map(|&lam| dynamics.series_convention_delta_e(&u.weighted_state, lam)).collect::<Result<_>>()?;
            let series = SeriesSummary::compute(&prep, &u.weighted_state, spec.max_order)?;
            Ok(UnitResult { exact, conv, series })
        })
        .collect::<Result<_>>()
        .stage("kick study")?;

    let mut kick = Table::new("kick", &KICK_HEADER);
    let mut series_table = Table::new("series", &SERIES_HEADER);
    let mut closed_max_rel: Option<f64> = None;
    for (u, r) in units.iter().zip(&results) {
        for (k, &lam) in spec.lambdas.iter().enumerate() {
            let closed = match (single_spin_b, &u.state.kind) {
                (Some(b), StateKind::Thermal { beta }) => Some(single_spin_closed_form(b, *beta, lam)),
                (Some(b), StateKind::MaximallyMixed) => Some(single_spin_closed_form(b, 0.0, lam)),
                _ => None,
            };
            if let Some(c) = closed {
                let diff = (r.conv[k] - c).abs();
                let rel = if c == 0.0 { diff } else { diff / c.abs() };
                closed_max_rel = Some(closed_max_rel.map_or(rel, |m: f64| m.max(rel)));
            }
            kick.push(vec![
                label.clone(),
                l.clone(),
                u.label.clone(),
                opt_usize(u.index),
                num(u.energy),
                opt(u.beta_eff),
                num(lam),
                num(r.exact[k]),
                num(r.conv[k]),
                num(r.series.sum_at(lam)),
                opt(closed),
            ]);
        }
        for &(order, route, value, dominant) in &r.series.entries {
            let (dom, sub, ratio) = match dominant {
                Some(d) => {
                    let sub = value - d;
                    (Some(d), Some(sub), Some(sub.abs() / d.abs()))
                }
                None => (None, None, None),
            };
            series_table.push(vec![
                label.clone(),
                l.clone(),
                opt_usize(u.index),
                num(u.energy),
                opt(u.beta_eff),
                order.to_string(),
                route.as_str().to_string(),
                num(value),
                opt(dom),
                opt(sub),
                opt(ratio),
            ]);
        }
    }

    let per_lambda: Vec<Value> = spec
        .lambdas
        .iter()
        .enumerate()
        .map(|(k, &lam)| {
            let exact: Vec<f64> = results.iter().map(|r| r.exact[k]).collect();
            let conv: Vec<f64> = results.iter().map(|r| r.conv[k]).collect();
            json!({ "lambda": lam, "exact": SampleStats::of(&exact), "series_convention": SampleStats::of(&conv) })
        })
        .collect();
    let all_exact: Vec<f64> = results.iter().flat_map(|r| r.exact.iter().copied()).collect();
    let results_json = json!({
        "dim": prep.eig.dim(),
        "sites": sites(&prep.spec),
        "eigensystem_from_cache": prep.from_cache,
        "eigen_residual": prep.eig.residual(),
        "states": units.len(),
        "per_lambda": per_lambda,
        "all_exact": SampleStats::of(&all_exact),
        "closed_form_max_rel_diff": closed_max_rel,
        "max_order": spec.max_order,
        "commutator_route": tower_order > 0,
    });
    Ok(Report::new("kick", spec, &label, results_json, vec![kick, series_table]))
}

/// Spectral function and retarded Green's function of a stationary state on a
/// symmetric frequency grid.
pub struct SpectralData {
    pub spectral: SpectralFunction,
    pub state: InitialState,
    pub green: Vec<(f64, f64, f64)>,
}

fn stationary_state(selector: &StateSelector, eig: &Eigensystem) -> Result<InitialState> {
    match *selector {
        StateSelector::Thermal { beta } => spectra::make_state(StateKind::Thermal { beta }, eig),
        StateSelector::MaximallyMixed => spectra::make_state(StateKind::MaximallyMixed, eig),
        _ => Err(Error::InvalidState("the spectral function needs a thermal or maximally mixed state".into())),
    }
}

fn spectral_data(spec: &ExperimentSpec, prep: &Prepared) -> Result<SpectralData> {
    let state = stationary_state(&spec.state, &prep.eig)?;
    let width = prep.eig.spectral_width();
    let eta = spec.response.eta.unwrap_or(0.005 * width);
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument(format!("broadening must be positive, got {eta}")));
    }
    let grid = symmetric_grid(width + 5.0 * eta, spec.response.points_per_side);
    let spectral = spectral_function(&prep.obs, &state, &grid, eta).stage("spectral function")?;
    let green = grid
        .par_iter()
        .map(|&w| {
            let g = spectral.retarded_green(w);
            (w, g.re, g.im)
        })
        .collect();
    Ok(SpectralData { spectral, state, green })
}

fn spectral_tables(data: &SpectralData) -> Vec<Table> {
    let mut a = Table::new("spectral", &["omega", "A"]);
    for (w, v) in data.spectral.grid.iter().zip(&data.spectral.values) {
        a.push(vec![num(*w), num(*v)]);
    }
    let mut g = Table::new("green", &["omega", "reG", "imG"]);
    for &(w, re, im) in &data.green {
        g.push(vec![num(w), num(re), num(im)]);
    }
    vec![a, g]
}

pub fn run_spectral_study(spec: &ExperimentSpec, cache: Option<&EigenCache>) -> Result<Report> {
    spec.validate()?;
    let prep = prepare(&spec.model, cache, 1, 0)?;
    let data = spectral_data(spec, &prep)?;
    let linear = delta_e_linear(&data.spectral, &spec.pulse).stage("linear response")?;
    let odd_defect = data
        .spectral
        .grid
        .iter()
        .zip(&data.spectral.values)
        .zip(data.spectral.values.iter().rev())
        .map(|((_, a), b)| (a + b).abs())
        .fold(0.0, f64::max);
    let results = json!({
        "dim": prep.eig.dim(),
        "eta": data.spectral.eta,
        "grid_points": data.spectral.grid.len(),
        "transitions": data.spectral.transitions().len(),
        "odd_defect": odd_defect,
        "linear_delta_e": { "lehmann": linear.lehmann, "broadened": linear.broadened, "broadened_error": linear.broadened_error },
    });
    Ok(Report::new("spectral", spec, &prep.spec.label(), results, spectral_tables(&data)))
}

/// Linear response (both routes) against exact pulse evolution on the
/// amplitude ladder `lambda_0, lambda_0/2, lambda_0/4`.
pub fn run_response_study(spec: &ExperimentSpec, cache: Option<&EigenCache>) -> Result<Report> {
    spec.validate()?;
    if spec.pulse.is_kick() {
        return Err(Error::InvalidPulse("the response study needs a finite pulse".into()));
    }
    let prep = prepare(&spec.model, cache, 1, 0)?;
    let data = spectral_data(spec, &prep)?;
    let dynamics = Dynamics::new(&prep.obs).stage("pulse propagator")?;

    let mut pulse = spec.pulse;
    if let Some(target) = spec.response.target_fraction {
        let base = delta_e_linear(&data.spectral, &pulse).stage("linear response")?.lehmann;
        if !(base > 0.0) {
            return Err(Error::InvalidState(format!(
                "cannot rescale to a target energy: linear estimate is {base} (state not absorbing)"
            )));
        }
        pulse = pulse.scaled((target * prep.h_max / base).sqrt());
    }

    let mut table = Table::new(
        "response",
        &["amplitude", "exact", "lehmann", "broadened", "rel_error_lehmann", "rel_error_broadened"],
    );
    let mut rungs = Vec::new();
    let mut trajectory: Vec<TrajectoryPoint> = Vec::new();
    for (k, factor) in [1.0, 0.5, 0.25].into_iter().enumerate() {
        let p = pulse.scaled(factor);
        let linear = delta_e_linear(&data.spectral, &p).stage("linear response")?;
        let every = if k == 0 { spec.response.trajectory_every } else { None };
        let outcome = dynamics.pulse_delta_e(&data.state, &p, &spec.evolution, every).stage("pulse evolution")?;
        if k == 0 {
            trajectory = outcome.trajectory;
        }
        let exact = outcome.delta_e;
        let rel = |x: f64| (x - exact).abs() / exact.abs();
        table.push(vec![
            num(p.peak()),
            num(exact),
            num(linear.lehmann),
            num(linear.broadened),
            num(rel(linear.lehmann)),
            num(rel(linear.broadened)),
        ]);
        rungs.push(json!({
            "amplitude": p.peak(),
            "exact": exact,
            "lehmann": linear.lehmann,
            "broadened": linear.broadened,
            "broadened_error": linear.broadened_error,
            "rel_error_lehmann": rel(linear.lehmann),
            "rel_error_broadened": rel(linear.broadened),
            "steps": outcome.plan.steps,
            "dt": outcome.plan.dt,
        }));
    }
    let errs: Vec<f64> = rungs.iter().map(|r| r["rel_error_lehmann"].as_f64().unwrap_or(f64::NAN)).collect();
    let mut tables = spectral_tables(&data);
    tables.push(table);
    let mut pulse_table = Table::new("pulse", &["t", "lambda"]);
    for (t, v) in pulse.sample(1001)? {
        pulse_table.push(vec![num(t), num(v)]);
    }
    tables.push(pulse_table);
    if !trajectory.is_empty() {
        let mut traj = Table::new("trajectory", &["t", "energy", "expect_O"]);
        for p in &trajectory {
            traj.push(vec![num(p.t), num(p.energy), num(p.expect_o)]);
        }
        tables.push(traj);
    }
    let results = json!({
        "dim": prep.eig.dim(),
        "h_max": prep.h_max,
        "spectral_radius": dynamics.h_norm(),
        "eta": data.spectral.eta,
        "pulse": pulse,
        "rungs": rungs,
        "error_non_increasing": errs.windows(2).all(|w| w[1] <= w[0]),
    });
    Ok(Report::new("response", spec, &prep.spec.label(), results, tables))
}

/// Per-size medians of the order-4 suppression ratio and the normalized
/// order-3 term for one model family.
#[derive(Clone, Debug, Serialize)]
pub struct ScalingSeries {
    pub model: String,
    pub sizes: Vec<usize>,
    pub dims: Vec<usize>,
    pub median_r4: Vec<f64>,
    pub median_odd_ratio: Vec<f64>,
    pub slope: f64,
    pub monotone_decreasing: bool,
    pub slope_in_window: bool,
}

/// Accepted range of the log-log slope of the median suppression ratio.
pub const SLOPE_WINDOW: (f64, f64) = (-0.8, -0.2);

pub fn run_scaling_study(spec: &ExperimentSpec, cache: Option<&EigenCache>) -> Result<Report> {
    spec.validate()?;
    let opts = &spec.scaling;
    if opts.sizes.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "the scaling fit needs at least 3 sizes, got {}",
            opts.sizes.len()
        )));
    }
    let mut table = Table::new("scaling", &["model", "L", "dim", "n", "E_n", "beta_eff", "r4", "odd_ratio"]);
    let mut families = Vec::new();
    let presets: [(&str, fn(usize) -> HamiltonianSpec); 2] =
        [("ising", HamiltonianSpec::chaotic_ising), ("ising_integrable", HamiltonianSpec::integrable_ising)];
    for (name, preset) in presets {
        let mut s = ScalingSeries {
            model: name.into(),
            sizes: opts.sizes.clone(),
            dims: Vec::new(),
            median_r4: Vec::new(),
            median_odd_ratio: Vec::new(),
            slope: f64::NAN,
            monotone_decreasing: false,
            slope_in_window: false,
        };
        for &l in &opts.sizes {
            let model = ModelSpec::new(preset(l), spec.model.observable.clone());
            let prep = prepare(&model, cache, 2, 0)?;
            let kernel = spectra::default_kernel_width(&prep.eig);
            let betas = spectra::effective_betas(&prep.eig, kernel).stage("effective temperatures")?;
            let picks = sample_window(&betas, opts.window.0, opts.window.1, opts.count, spec.seed).stage("select states")?;
            let values: Vec<(f64, f64)> = picks
                .par_iter()
                .map(|&n| -> Result<(f64, f64)> {
                    let r4 = series::r4(&prep.obs, n)?;
                    let second = series::general_order_dominant(&prep.obs, n, 2)?;
                    let odd = series::odd_order_term(&prep.obs, n, 3)?;
                    Ok((r4, odd.abs() / second.abs()))
                })
                .collect::<Result<_>>()
                .stage("suppression ratios")?;
            for (&n, &(r4, odd)) in picks.iter().zip(&values) {
                table.push(vec![
                    name.into(),
                    l.to_string(),
                    prep.eig.dim().to_string(),
                    n.to_string(),
                    num(prep.eig.energies()[n]),
                    num(betas[n]),
                    num(r4),
                    num(odd),
                ]);
            }
            s.dims.push(prep.eig.dim());
            s.median_r4.push(median(&values.iter().map(|v| v.0).collect::<Vec<_>>()));
            s.median_odd_ratio.push(median(&values.iter().map(|v| v.1).collect::<Vec<_>>()));
        }
        let x: Vec<f64> = s.dims.iter().map(|&d| (d as f64).ln()).collect();
        let y: Vec<f64> = s.median_r4.iter().map(|r| r.ln()).collect();
        s.slope = fit_slope(&x, &y);
        s.monotone_decreasing = s.median_r4.windows(2).all(|w| w[1] < w[0]);
        s.slope_in_window = s.slope >= SLOPE_WINDOW.0 && s.slope <= SLOPE_WINDOW.1;
        families.push(s);
    }
    let results = json!({ "slope_window": SLOPE_WINDOW, "families": families });
    Ok(Report::new("scaling", spec, "ising", results, vec![table]))
}

/// Diagonal and off-diagonal ETH statistics of the observable.
pub fn run_eth_study(spec: &ExperimentSpec, cache: Option<&EigenCache>) -> Result<Report> {
    spec.validate()?;
    let prep = prepare(&spec.model, cache, 1, 0)?;
    let eig = &prep.eig;
    let stats = spectra::extract_eth(&prep.obs, spectra::default_bin_width(eig), spectra::default_kernel_width(eig))
        .stage("ETH statistics")?;
    let diagonal = prep.obs.diagonal();
    let mut diag = Table::new("eth_diagonal", &["ebar", "o_diag"]);
    for (e, o) in eig.energies().iter().zip(&diagonal) {
        diag.push(vec![num(*e), num(*o)]);
    }
    let mut smooth = Table::new("eth_diagonal_smooth", &["ebar", "o_diag"]);
    for &(e, o) in &stats.diagonal_curve {
        smooth.push(vec![num(e), num(o)]);
    }
    let mut entropy = Table::new("eth_entropy", &["e", "entropy"]);
    for &(e, s) in &stats.entropy_curve {
        entropy.push(vec![num(e), num(s)]);
    }
    let mut f1 = Table::new("eth_offdiag", &["ebar", "omega", "abs_f1"]);
    for b in stats.valid_bins() {
        f1.push(vec![num(b.ebar), num(b.omega), num(b.abs_f1)]);
    }
    let mut residuals = Table::new("eth_residuals", &["ebar", "omega", "re_r", "im_r"]);
    for r in &stats.residuals {
        residuals.push(vec![num(r.ebar), num(r.omega), num(r.r.0), num(r.r.1)]);
    }
    let results = json!({
        "dim": eig.dim(),
        "bin_width": stats.bin_width,
        "kernel_width": stats.kernel_width,
        "valid_bins": stats.valid_bins().count(),
        "gate_failure_fraction": stats.gate_failure_fraction(),
        "diagonal_scatter": stats.diagonal_scatter(&diagonal),
        "level_spacing_ratio": spectra::level_spacing_ratio(eig.energies(), 0.8).ok(),
    });
    Ok(Report::new("eth", spec, &prep.spec.label(), results, vec![diag, smooth, entropy, f1, residuals]))
}

/// Spectrum summary, level-spacing ratio and effective temperatures.
pub fn run_model_info(spec: &ExperimentSpec, cache: Option<&EigenCache>) -> Result<Report> {
    spec.validate()?;
    let prep = prepare(&spec.model, cache, 1, 0)?;
    let eig = &prep.eig;
    let e = eig.energies();
    let betas = spectra::effective_betas(eig, spectra::default_kernel_width(eig)).stage("effective temperatures")?;
    let mut table = Table::new("spectrum", &["n", "E_n", "beta_eff", "o_diag"]);
    for (n, ((en, b), o)) in e.iter().zip(&betas).zip(prep.obs.diagonal()).enumerate() {
        table.push(vec![n.to_string(), num(*en), num(*b), num(o)]);
    }
    let results = json!({
        "dim": eig.dim(),
        "sites": sites(&prep.spec),
        "e_min": e[0],
        "e_max": e[e.len() - 1],
        "spectral_width": eig.spectral_width(),
        "level_spacing_ratio": spectra::level_spacing_ratio(e, 0.8).ok(),
        "eigen_residual": eig.residual(),
        "eigensystem_from_cache": prep.from_cache,
        "observable_is_real": prep.obs.is_real(),
    });
    Ok(Report::new("model_info", spec, &prep.spec.label(), results, vec![table]))
}

/// Runs `f` on a dedicated pool of `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Err(Error::InvalidArgument("thread count must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start thread pool: {e}")))?;
    Ok(pool.install(f))
}
