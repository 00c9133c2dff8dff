//! Network cases, branch susceptances, PTDF and reference DC flows.

use std::collections::{HashMap, HashSet, VecDeque};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("cannot read case file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("case parse error in {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid case: {0}")]
    Validation(String),
    #[error("islanded network: reduced susceptance matrix is singular")]
    Islanded,
    #[error("unbalanced injections: net injection {0} MW")]
    Unbalanced(f64),
    #[error("unknown branch id {0}")]
    UnknownBranch(usize),
    #[error("injection vector has {got} entries, case has {expected} buses")]
    InjectionLength { got: usize, expected: usize },
}

pub type Result<T> = std::result::Result<T, NetworkError>;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Bus {
    pub id: usize,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub reference: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Branch {
    pub id: usize,
    pub from: usize,
    pub to: usize,
    /// Series reactance, p.u. on the system base.
    pub x: f64,
    /// Thermal limit, MW.
    pub s_max: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Generator {
    pub id: usize,
    pub bus: usize,
    /// Marginal cost, $/MWh.
    pub cost: f64,
    #[serde(default)]
    pub p_min: f64,
    pub p_max: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Load {
    pub id: usize,
    pub bus: usize,
    /// Peak demand, MW.
    pub peak: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct WindFarm {
    pub id: usize,
    pub bus: usize,
    /// Installed capacity, MW.
    pub capacity: f64,
    /// Multiplier applied to the shared wind-intensity series.
    #[serde(default = "unit_scale")]
    pub intensity_scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

/// On-disk layout of a case file (TOML).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseFile {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    #[serde(default)]
    pub generators: Vec<Generator>,
    #[serde(default)]
    pub loads: Vec<Load>,
    #[serde(default)]
    pub wind_farms: Vec<WindFarm>,
}

/// A validated planning instance. Immutable once built.
#[derive(Clone, Debug)]
pub struct NetworkCase {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub loads: Vec<Load>,
    pub wind_farms: Vec<WindFarm>,
    bus_index: HashMap<usize, usize>,
    branch_index: HashMap<usize, usize>,
    reference: usize,
}

impl NetworkCase {
    pub fn new(file: CaseFile) -> Result<Self> {
        let CaseFile { base_mva, buses, branches, generators, loads, wind_farms } = file;
        let invalid = |msg: String| Err(NetworkError::Validation(msg));
        if !(base_mva > 0.0 && base_mva.is_finite()) {
            return invalid(format!("nonpositive base MVA {base_mva}"));
        }
        if buses.is_empty() {
            return invalid("case has no buses".into());
        }
        let mut bus_index = HashMap::new();
        for (i, b) in buses.iter().enumerate() {
            if bus_index.insert(b.id, i).is_some() {
                return invalid(format!("duplicate bus id {}", b.id));
            }
        }
        let refs: Vec<_> = buses.iter().enumerate().filter(|(_, b)| b.reference).map(|(i, _)| i).collect();
        if refs.len() != 1 {
            return invalid(format!("exactly one reference bus required, found {}", refs.len()));
        }
        let resolve = |bus: usize, what: String| -> Result<usize> {
            bus_index
                .get(&bus)
                .copied()
                .ok_or_else(|| NetworkError::Validation(format!("unknown bus {bus} referenced by {what}")))
        };
        let mut branch_index = HashMap::new();
        for (k, br) in branches.iter().enumerate() {
            if branch_index.insert(br.id, k).is_some() {
                return invalid(format!("duplicate branch id {}", br.id));
            }
            resolve(br.from, format!("branch {}", br.id))?;
            resolve(br.to, format!("branch {}", br.id))?;
            if br.from == br.to {
                return invalid(format!("branch {} is a self-loop", br.id));
            }
            if !(br.x > 0.0 && br.x.is_finite()) {
                return invalid(format!("nonpositive reactance on branch {} (x = {})", br.id, br.x));
            }
            if !(br.s_max > 0.0 && br.s_max.is_finite()) {
                return invalid(format!("nonpositive thermal limit on branch {} (s_max = {})", br.id, br.s_max));
            }
        }
        let mut seen = HashSet::new();
        for g in &generators {
            if !seen.insert(g.id) {
                return invalid(format!("duplicate generator id {}", g.id));
            }
            resolve(g.bus, format!("generator {}", g.id))?;
            if !(g.p_min >= 0.0 && g.p_max >= g.p_min && g.p_max.is_finite() && g.cost.is_finite()) {
                return invalid(format!("generator {} has invalid limits or cost", g.id));
            }
        }
        seen.clear();
        for l in &loads {
            if !seen.insert(l.id) {
                return invalid(format!("duplicate load id {}", l.id));
            }
            resolve(l.bus, format!("load {}", l.id))?;
            if !(l.peak >= 0.0 && l.peak.is_finite()) {
                return invalid(format!("load {} has negative peak", l.id));
            }
        }
        seen.clear();
        for w in &wind_farms {
            if !seen.insert(w.id) {
                return invalid(format!("duplicate wind farm id {}", w.id));
            }
            resolve(w.bus, format!("wind farm {}", w.id))?;
            if !(w.capacity >= 0.0 && w.capacity.is_finite() && w.intensity_scale >= 0.0) {
                return invalid(format!("wind farm {} has invalid capacity or scale", w.id));
            }
        }
        let case = Self {
            base_mva,
            buses,
            branches,
            generators,
            loads,
            wind_farms,
            bus_index,
            branch_index,
            reference: refs[0],
        };
        if !case.is_connected() {
            return invalid("network not connected".into());
        }
        Ok(case)
    }

    pub fn to_file(&self) -> CaseFile {
        CaseFile {
            base_mva: self.base_mva,
            buses: self.buses.clone(),
            branches: self.branches.clone(),
            generators: self.generators.clone(),
            loads: self.loads.clone(),
            wind_farms: self.wind_farms.clone(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_file()).expect("case serializes")
    }

    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let file: CaseFile =
            toml::from_str(text).map_err(|e| NetworkError::Parse { path: origin.to_string(), message: e.to_string() })?;
        Self::new(file)
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn reference_index(&self) -> usize {
        self.reference
    }

    pub fn bus_idx(&self, bus_id: usize) -> usize {
        self.bus_index[&bus_id]
    }

    pub fn branch_idx(&self, branch_id: usize) -> Option<usize> {
        self.branch_index.get(&branch_id).copied()
    }

    /// (from, to) bus indices of a branch.
    pub fn ends(&self, k: usize) -> (usize, usize) {
        let br = &self.branches[k];
        (self.bus_idx(br.from), self.bus_idx(br.to))
    }

    pub fn total_peak_load(&self) -> f64 {
        self.loads.iter().map(|l| l.peak).sum()
    }

    fn is_connected(&self) -> bool {
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for k in 0..self.branches.len() {
            let (i, j) = self.ends(k);
            adj[i].push(j);
            adj[j].push(i);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Copy of the case with another reference bus (by bus id).
    pub fn with_reference(&self, bus_id: usize) -> Result<Self> {
        let mut file = self.to_file();
        if !self.bus_index.contains_key(&bus_id) {
            return Err(NetworkError::Validation(format!("unknown bus {bus_id}")));
        }
        for b in &mut file.buses {
            b.reference = b.id == bus_id;
        }
        Self::new(file)
    }
}

pub fn parse_case(path: impl AsRef<Path>) -> Result<NetworkCase> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| NetworkError::Io { path: path.display().to_string(), source })?;
    NetworkCase::from_toml_str(&text, &path.display().to_string())
}

/// b_k = 1/x_k, positive, so that P_k = b_k (θ_from - θ_to).
pub fn branch_susceptance(case: &NetworkCase) -> Vec<f64> {
    case.branches.iter().map(|b| 1.0 / b.x).collect()
}

/// LU factor of the nodal susceptance matrix with the reference row and
/// column removed. Entries are in 1/p.u.; right-hand sides are in MW, so
/// solutions are S_b-scaled angles and flows come out directly in MW.
pub struct ReducedSusceptance {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    /// bus index -> reduced position (None for the reference bus)
    position: Vec<Option<usize>>,
}

impl ReducedSusceptance {
    pub fn factor(case: &NetworkCase) -> Result<Self> {
        let n = case.n_buses();
        let r = case.reference_index();
        let position: Vec<Option<usize>> =
            (0..n).map(|i| if i == r { None } else { Some(if i < r { i } else { i - 1 }) }).collect();
        let mut b = DMatrix::<f64>::zeros(n - 1, n - 1);
        for (k, susc) in branch_susceptance(case).into_iter().enumerate() {
            let (i, j) = case.ends(k);
            if let Some(pi) = position[i] {
                b[(pi, pi)] += susc;
            }
            if let Some(pj) = position[j] {
                b[(pj, pj)] += susc;
            }
            if let (Some(pi), Some(pj)) = (position[i], position[j]) {
                b[(pi, pj)] -= susc;
                b[(pj, pi)] -= susc;
            }
        }
        let lu = b.lu();
        if n > 1 {
            let det = lu.determinant();
            if !det.is_finite() || det.abs() < 1e-300 {
                return Err(NetworkError::Islanded);
            }
        }
        Ok(Self { lu, position })
    }

    /// Angles (scaled by S_b, reference = 0) for a per-bus MW injection vector.
    pub fn solve_angles(&self, injections: &[f64]) -> Vec<f64> {
        let n = self.position.len();
        let mut rhs = DVector::<f64>::zeros(n.saturating_sub(1));
        for (i, p) in self.position.iter().enumerate() {
            if let Some(pi) = p {
                rhs[*pi] = injections[i];
            }
        }
        let sol = if n > 1 { self.lu.solve(&rhs).unwrap_or(rhs) } else { rhs };
        self.position.iter().map(|p| p.map_or(0.0, |pi| sol[pi])).collect()
    }
}

/// Shift-factor matrix restricted to a set of monitored branches.
#[derive(Clone, Debug)]
pub struct PtdfMatrix {
    /// Branch indices (positions in `case.branches`) of the rows.
    pub monitored: Vec<usize>,
    /// `values[r][i]` = flow change on branch `monitored[r]` per MW injected at
    /// bus `i` and withdrawn at the reference bus.
    pub values: Vec<Vec<f64>>,
    row_of: HashMap<usize, usize>,
}

impl PtdfMatrix {
    pub fn n_rows(&self) -> usize {
        self.monitored.len()
    }

    pub fn row(&self, branch_idx: usize) -> Option<&[f64]> {
        self.row_of.get(&branch_idx).map(|&r| self.values[r].as_slice())
    }

    pub fn contains(&self, branch_idx: usize) -> bool {
        self.row_of.contains_key(&branch_idx)
    }

    /// H·p for the monitored rows.
    pub fn flows(&self, injections: &[f64]) -> Vec<f64> {
        self.values.iter().map(|row| row.iter().zip(injections).map(|(h, p)| h * p).sum()).collect()
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        let cols = self.values.first().map_or(0, Vec::len);
        DMatrix::from_fn(self.values.len(), cols, |r, c| self.values[r][c])
    }
}

/// PTDF rows for the given branch indices (all branches when `None`).
pub fn compute_ptdf(case: &NetworkCase, monitored: Option<&[usize]>) -> Result<PtdfMatrix> {
    let monitored: Vec<usize> = match monitored {
        Some(m) => m.to_vec(),
        None => (0..case.n_branches()).collect(),
    };
    for &k in &monitored {
        if k >= case.n_branches() {
            return Err(NetworkError::UnknownBranch(k));
        }
    }
    let factor = ReducedSusceptance::factor(case)?;
    let n = case.n_buses();
    let b = branch_susceptance(case);
    // B_red is symmetric, so row k of H is B_red^{-1} (b_k (e_from - e_to)).
    let values: Vec<Vec<f64>> = monitored
        .iter()
        .map(|&k| {
            let (i, j) = case.ends(k);
            let mut rhs = vec![0.0; n];
            rhs[i] += b[k];
            rhs[j] -= b[k];
            factor.solve_angles(&rhs)
        })
        .collect();
    let row_of = monitored.iter().enumerate().map(|(r, &k)| (k, r)).collect();
    Ok(PtdfMatrix { monitored, values, row_of })
}

/// Same as [`compute_ptdf`] with branch ids instead of indices.
pub fn compute_ptdf_by_id(case: &NetworkCase, monitored_ids: &[usize]) -> Result<PtdfMatrix> {
    let idx = monitored_ids
        .iter()
        .map(|&id| case.branch_idx(id).ok_or(NetworkError::UnknownBranch(id)))
        .collect::<Result<Vec<_>>>()?;
    compute_ptdf(case, Some(&idx))
}

/// DC flows (MW) from a balanced per-bus injection vector (MW).
pub fn btheta_flows(case: &NetworkCase, injections: &[f64]) -> Result<Vec<f64>> {
    if injections.len() != case.n_buses() {
        return Err(NetworkError::InjectionLength { got: injections.len(), expected: case.n_buses() });
    }
    let net: f64 = injections.iter().sum();
    if net.abs() > 1e-6 {
        return Err(NetworkError::Unbalanced(net));
    }
    let theta = ReducedSusceptance::factor(case)?.solve_angles(injections);
    Ok((0..case.n_branches())
        .map(|k| {
            let (i, j) = case.ends(k);
            (theta[i] - theta[j]) / case.branches[k].x
        })
        .collect())
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn bus(id: usize, reference: bool) -> Bus {
        Bus { id, reference }
    }

    pub fn line(id: usize, from: usize, to: usize, x: f64, s_max: f64) -> Branch {
        Branch { id, from, to, x, s_max }
    }

    pub fn two_bus() -> CaseFile {
        CaseFile {
            base_mva: 100.0,
            buses: vec![bus(1, false), bus(2, true)],
            branches: vec![line(1, 1, 2, 0.1, 200.0)],
            generators: vec![Generator { id: 1, bus: 1, cost: 10.0, p_min: 0.0, p_max: 200.0 }],
            loads: vec![Load { id: 1, bus: 2, peak: 150.0 }],
            wind_farms: vec![],
        }
    }

    /// Ring 1-2, 2-3, 1-3 with equal reactance; bus 3 is the reference.
    pub fn three_bus_ring() -> CaseFile {
        CaseFile {
            base_mva: 100.0,
            buses: vec![bus(1, false), bus(2, false), bus(3, true)],
            branches: vec![line(1, 1, 2, 0.1, 100.0), line(2, 2, 3, 0.1, 100.0), line(3, 1, 3, 0.1, 50.0)],
            generators: vec![
                Generator { id: 1, bus: 1, cost: 10.0, p_min: 0.0, p_max: 300.0 },
                Generator { id: 2, bus: 3, cost: 50.0, p_min: 0.0, p_max: 300.0 },
            ],
            loads: vec![Load { id: 1, bus: 3, peak: 120.0 }],
            wind_farms: vec![],
        }
    }
}
