//! Hamiltonians and observables: a single spin, Ising chains, and random
//! matrices from the Gaussian orthogonal ensemble.
//!
//! Spin chains use the computational basis with site `i` stored in bit
//! `L - 1 - i` of the basis index, and bit value 0 meaning spin up
//! (`sigma_z = +1`).

use std::fmt;

use faer::Mat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::HermitianMatrix;
use crate::C64;

pub const MAX_CHAIN_LENGTH: usize = 12;
pub const MAX_GOE_DIM: usize = 4096;

/// Relative threshold below which `[H0, O]` counts as zero.
pub const COMMUTANT_THRESHOLD: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Open,
    Periodic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HamiltonianSpec {
    /// `B sigma_z`
    SingleSpin {
        #[serde(rename = "B")]
        b: f64,
    },
    /// `sum J z_i z_{i+1} + sum (h_x x_i + h_z z_i) + edge_field z_0`
    IsingChain {
        #[serde(rename = "L")]
        l: usize,
        #[serde(rename = "J")]
        j: f64,
        h_x: f64,
        h_z: f64,
        boundary: Boundary,
        /// Extra longitudinal field on site 0; breaks the reflection symmetry of
        /// the open chain.
        #[serde(default)]
        edge_field: f64,
    },
    /// `(M + M^H)/2` with normal entries of variance `1/(2 dim)`; spectrum
    /// half-width is close to 1 for every `dim`.
    GoeRandom {
        dim: usize,
        seed: u64,
        #[serde(default)]
        complex: bool,
    },
}

impl HamiltonianSpec {
    /// Nonintegrable Ising point used by default for chaotic studies.
    pub fn chaotic_ising(l: usize) -> Self {
        HamiltonianSpec::IsingChain { l, j: 1.0, h_x: 1.05, h_z: 0.5, boundary: Boundary::Open, edge_field: 0.1 }
    }

    /// Transverse-field Ising chain (`h_z = 0`), which maps to free fermions.
    pub fn integrable_ising(l: usize) -> Self {
        HamiltonianSpec::IsingChain { l, j: 1.0, h_x: 1.05, h_z: 0.0, boundary: Boundary::Open, edge_field: 0.0 }
    }

    pub fn dim(&self) -> usize {
        match *self {
            HamiltonianSpec::SingleSpin { .. } => 2,
            HamiltonianSpec::IsingChain { l, .. } => 1 << l.min(usize::BITS as usize - 1),
            HamiltonianSpec::GoeRandom { dim, .. } => dim,
        }
    }

    /// Number of spin sites, `None` for random matrices.
    pub fn sites(&self) -> Option<usize> {
        match *self {
            HamiltonianSpec::SingleSpin { .. } => Some(1),
            HamiltonianSpec::IsingChain { l, .. } => Some(l),
            HamiltonianSpec::GoeRandom { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |name: &str, x: f64| {
            if x.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidModel(format!("{name} must be finite, got {x}")))
            }
        };
        match *self {
            HamiltonianSpec::SingleSpin { b } => finite("B", b),
            HamiltonianSpec::IsingChain { l, j, h_x, h_z, edge_field, .. } => {
                if !(2..=MAX_CHAIN_LENGTH).contains(&l) {
                    return Err(Error::InvalidModel(format!(
                        "chain length L must lie in [2, {MAX_CHAIN_LENGTH}], got {l}"
                    )));
                }
                finite("J", j)?;
                finite("h_x", h_x)?;
                finite("h_z", h_z)?;
                finite("edge_field", edge_field)
            }
            HamiltonianSpec::GoeRandom { dim, .. } => {
                if !(2..=MAX_GOE_DIM).contains(&dim) {
                    return Err(Error::InvalidModel(format!("GOE dim must lie in [2, {MAX_GOE_DIM}], got {dim}")));
                }
                Ok(())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

/// `coefficient * prod_k sigma^{axis_k}_{site_k}`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PauliString {
    pub coefficient: f64,
    pub ops: Vec<(usize, Axis)>,
}

impl PauliString {
    pub fn new(coefficient: f64, ops: Vec<(usize, Axis)>) -> Self {
        Self { coefficient, ops }
    }

    pub fn single(site: usize, axis: Axis) -> Self {
        Self::new(1.0, vec![(site, axis)])
    }

    fn validate(&self, sites: usize) -> Result<()> {
        if !self.coefficient.is_finite() {
            return Err(Error::InvalidModel(format!("Pauli coefficient must be finite, got {}", self.coefficient)));
        }
        for (k, &(site, _)) in self.ops.iter().enumerate() {
            if site >= sites {
                return Err(Error::InvalidModel(format!("Pauli site {site} out of range for {sites} sites")));
            }
            if self.ops[..k].iter().any(|&(s, _)| s == site) {
                return Err(Error::InvalidModel(format!("Pauli site {site} repeated")));
            }
        }
        Ok(())
    }

    /// Image of basis state `s`: `P|s> = amplitude |s'>`.
    fn apply_basis(&self, sites: usize, s: usize) -> (usize, C64) {
        let mut target = s;
        let mut amp = C64::new(self.coefficient, 0.0);
        for &(site, axis) in &self.ops {
            let bit = 1usize << (sites - 1 - site);
            let down = s & bit != 0;
            match axis {
                Axis::X => target ^= bit,
                Axis::Y => {
                    target ^= bit;
                    // sigma_y |up> = i |down>, sigma_y |down> = -i |up>
                    amp *= if down { C64::new(0.0, -1.0) } else { C64::new(0.0, 1.0) };
                }
                Axis::Z => {
                    if down {
                        amp = -amp;
                    }
                }
            }
        }
        (target, amp)
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.coefficient)?;
        for (site, axis) in &self.ops {
            write!(f, " {axis:?}{site}")?;
        }
        Ok(())
    }
}

/// Dense matrix of a sum of Pauli strings on `sites` spins.
pub fn pauli_sum(sites: usize, terms: &[PauliString]) -> Result<HermitianMatrix> {
    for t in terms {
        t.validate(sites)?;
    }
    let dim = 1usize << sites;
    let mut m = Mat::<C64>::zeros(dim, dim);
    for t in terms {
        for s in 0..dim {
            let (target, amp) = t.apply_basis(sites, s);
            m[(target, s)] += amp;
        }
    }
    HermitianMatrix::new(m)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservableSpec {
    /// `sigma_x` on site `L/2`.
    #[default]
    CentralX,
    /// `sum_i sigma_x^i / sqrt(L)`
    UniformX,
    Pauli { terms: Vec<PauliString> },
    /// Independent GOE matrix of the Hamiltonian's dimension.
    Goe {
        seed: u64,
        #[serde(default)]
        complex: bool,
    },
    /// The Hamiltonian itself; always rejected, kept so the commutant check is
    /// reachable from a config file.
    Hamiltonian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub hamiltonian: HamiltonianSpec,
    #[serde(default)]
    pub observable: ObservableSpec,
}

impl ModelSpec {
    pub fn new(hamiltonian: HamiltonianSpec, observable: ObservableSpec) -> Self {
        Self { hamiltonian, observable }
    }

    pub fn single_spin(b: f64) -> Self {
        Self::new(HamiltonianSpec::SingleSpin { b }, ObservableSpec::CentralX)
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    /// Canonical JSON of the Hamiltonian part; keys the eigensystem cache.
    pub fn hamiltonian_key(&self) -> serde_json::Value {
        serde_json::to_value(&self.hamiltonian).expect("spec serializes")
    }

    pub fn label(&self) -> String {
        match &self.hamiltonian {
            HamiltonianSpec::SingleSpin { .. } => "single_spin".into(),
            HamiltonianSpec::IsingChain { h_z, .. } if *h_z == 0.0 => "ising_integrable".into(),
            HamiltonianSpec::IsingChain { .. } => "ising".into(),
            HamiltonianSpec::GoeRandom { .. } => "goe".into(),
        }
    }
}

pub fn build_hamiltonian(spec: &HamiltonianSpec) -> Result<HermitianMatrix> {
    spec.validate()?;
    match *spec {
        HamiltonianSpec::SingleSpin { b } => pauli_sum(1, &[PauliString::new(b, vec![(0, Axis::Z)])]),
        HamiltonianSpec::IsingChain { l, j, h_x, h_z, boundary, edge_field } => {
            let mut terms = Vec::with_capacity(4 * l);
            let bonds = match boundary {
                Boundary::Open => l - 1,
                Boundary::Periodic if l == 2 => 1,
                Boundary::Periodic => l,
            };
            for i in 0..bonds {
                terms.push(PauliString::new(j, vec![(i, Axis::Z), ((i + 1) % l, Axis::Z)]));
            }
            for i in 0..l {
                terms.push(PauliString::new(h_x, vec![(i, Axis::X)]));
                terms.push(PauliString::new(h_z, vec![(i, Axis::Z)]));
            }
            if edge_field != 0.0 {
                terms.push(PauliString::new(edge_field, vec![(0, Axis::Z)]));
            }
            terms.retain(|t| t.coefficient != 0.0);
            pauli_sum(l, &terms)
        }
        HamiltonianSpec::GoeRandom { dim, seed, complex } => goe(dim, seed, complex),
    }
}

/// Builds the observable and rejects it if it commutes with `h0`.
pub fn build_observable(spec: &ModelSpec, h0: &HermitianMatrix) -> Result<HermitianMatrix> {
    let dim = spec.dim();
    let o = match &spec.observable {
        ObservableSpec::CentralX => {
            let sites = spec.hamiltonian.sites().ok_or_else(|| {
                Error::InvalidModel("central_x needs a spin model; use a goe observable".into())
            })?;
            pauli_sum(sites, &[PauliString::single(sites / 2, Axis::X)])?
        }
        ObservableSpec::UniformX => {
            let sites = spec.hamiltonian.sites().ok_or_else(|| {
                Error::InvalidModel("uniform_x needs a spin model; use a goe observable".into())
            })?;
            let c = 1.0 / (sites as f64).sqrt();
            let terms: Vec<_> = (0..sites).map(|i| PauliString::new(c, vec![(i, Axis::X)])).collect();
            pauli_sum(sites, &terms)?
        }
        ObservableSpec::Pauli { terms } => {
            let sites = spec.hamiltonian.sites().ok_or_else(|| {
                Error::InvalidModel("Pauli observables need a spin model".into())
            })?;
            if terms.is_empty() {
                return Err(Error::InvalidModel("Pauli observable has no terms".into()));
            }
            pauli_sum(sites, terms)?
        }
        ObservableSpec::Goe { seed, complex } => goe(dim, *seed, *complex)?,
        ObservableSpec::Hamiltonian => h0.clone(),
    };
    if o.dim() != h0.dim() {
        return Err(Error::DimensionMismatch { expected: h0.dim(), found: o.dim() });
    }
    check_noncommuting(h0, &o)?;
    Ok(o)
}

/// Rejects `o` when `max|[h0, o]| <= 1e-8 max|h0| max|o|`.
pub fn check_noncommuting(h0: &HermitianMatrix, o: &HermitianMatrix) -> Result<()> {
    let commutator = h0.commutator_norm(o)?;
    let threshold = COMMUTANT_THRESHOLD * h0.max_abs() * o.max_abs();
    if commutator > threshold {
        Ok(())
    } else {
        Err(Error::CommutingObservable { commutator, threshold })
    }
}

fn goe(dim: usize, seed: u64, complex: bool) -> Result<HermitianMatrix> {
    if !(2..=MAX_GOE_DIM).contains(&dim) {
        return Err(Error::InvalidModel(format!("GOE dim must lie in [2, {MAX_GOE_DIM}], got {dim}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = 1.0 / (2.0 * dim as f64).sqrt();
    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
    // Column-major fill keeps the stream order independent of faer internals.
    let mut m = Mat::<C64>::zeros(dim, dim);
    for j in 0..dim {
        for i in 0..dim {
            m[(i, j)] = if complex {
                C64::new(draw(), draw()) * (sigma * std::f64::consts::FRAC_1_SQRT_2)
            } else {
                C64::new(draw() * sigma, 0.0)
            };
        }
    }
    let sym = Mat::from_fn(dim, dim, |i, j| (m[(i, j)] + m[(j, i)].conj()) * 0.5);
    HermitianMatrix::new(sym)
}

/// Hamiltonian and observable of one model instance.
#[derive(Clone, Debug)]
pub struct Model {
    pub spec: ModelSpec,
    pub h0: HermitianMatrix,
    pub observable: HermitianMatrix,
}

impl Model {
    pub fn build(spec: &ModelSpec) -> Result<Self> {
        let h0 = build_hamiltonian(&spec.hamiltonian)?;
        let observable = build_observable(spec, &h0)?;
        Ok(Self { spec: spec.clone(), h0, observable })
    }
}
