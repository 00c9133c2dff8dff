//! Weighted load-wind scenarios: profile ingestion, extreme-hour extraction,
//! K-means reduction and materialization onto a network case.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::NetworkCase;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: String, column: String },
    #[error("length mismatch: {load} load rows vs {wind} wind rows")]
    LengthMismatch { load: usize, wind: usize },
    #[error("intensity out of range at hour {hour}: {value}")]
    IntensityOutOfRange { hour: usize, value: f64 },
    #[error("load level out of range at hour {hour}: {value}")]
    LoadOutOfRange { hour: usize, value: f64 },
    #[error("profile needs at least {needed} hours, has {got}")]
    TooShort { needed: usize, got: usize },
    #[error("cannot form {k} clusters from {n} points")]
    TooManyClusters { k: usize, n: usize },
    #[error("unknown scenario id {0}")]
    UnknownScenario(usize),
    #[error("invalid scenario table: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, ScenarioError>;

/// Hourly load level (fraction of peak) and wind intensities (fraction of
/// capacity), one or more wind columns.
#[derive(Clone, Debug, PartialEq)]
pub struct HourlyProfile {
    pub load: Vec<f64>,
    pub wind_columns: Vec<String>,
    /// `wind[c][h]`
    pub wind: Vec<Vec<f64>>,
}

impl HourlyProfile {
    pub fn new(load: Vec<f64>, wind_columns: Vec<String>, wind: Vec<Vec<f64>>) -> Result<Self> {
        for w in &wind {
            if w.len() != load.len() {
                return Err(ScenarioError::LengthMismatch { load: load.len(), wind: w.len() });
            }
            if let Some((hour, &value)) = w.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
                return Err(ScenarioError::IntensityOutOfRange { hour, value });
            }
        }
        if let Some((hour, &value)) = load.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            return Err(ScenarioError::LoadOutOfRange { hour, value });
        }
        Ok(Self { load, wind_columns, wind })
    }

    pub fn hours(&self) -> usize {
        self.load.len()
    }

    fn point(&self, h: usize) -> Vec<f64> {
        std::iter::once(self.load[h]).chain(self.wind.iter().map(|w| w[h])).collect()
    }

    fn mean_wind(&self, h: usize) -> f64 {
        if self.wind.is_empty() {
            return 0.0;
        }
        self.wind.iter().map(|w| w[h]).sum::<f64>() / self.wind.len() as f64
    }

    fn without(&self, drop: &[usize]) -> Self {
        let keep = |h: &usize| !drop.contains(h);
        Self {
            load: (0..self.hours()).filter(keep).map(|h| self.load[h]).collect(),
            wind_columns: self.wind_columns.clone(),
            wind: self.wind.iter().map(|w| (0..w.len()).filter(keep).map(|h| w[h]).collect()).collect(),
        }
    }
}

fn read_columns(path: &Path, wanted: impl Fn(&str) -> bool) -> Result<Vec<(String, Vec<f64>)>> {
    let err = |message: String| ScenarioError::Read { path: path.display().to_string(), message };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| err(e.to_string()))?;
    let headers = reader.headers().map_err(|e| err(e.to_string()))?.clone();
    let picked: Vec<(usize, String)> =
        headers.iter().enumerate().filter(|(_, h)| wanted(h)).map(|(i, h)| (i, h.to_string())).collect();
    let mut columns: Vec<(String, Vec<f64>)> = picked.iter().map(|(_, h)| (h.clone(), Vec::new())).collect();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| err(e.to_string()))?;
        for ((i, name), (_, values)) in picked.iter().zip(columns.iter_mut()) {
            let raw = record.get(*i).unwrap_or("");
            let v: f64 =
                raw.parse().map_err(|_| err(format!("row {}: column `{name}` has non-numeric value `{raw}`", line + 2)))?;
            values.push(v);
        }
    }
    Ok(columns)
}

/// Load the hourly series. The two paths may point to the same file.
pub fn ingest_profiles(load_path: impl AsRef<Path>, wind_path: impl AsRef<Path>) -> Result<HourlyProfile> {
    let load_path = load_path.as_ref();
    let wind_path = wind_path.as_ref();
    let load = read_columns(load_path, |h| h == "load_level")?
        .pop()
        .ok_or_else(|| ScenarioError::MissingColumn { path: load_path.display().to_string(), column: "load_level".into() })?
        .1;
    let wind_cols = read_columns(wind_path, |h| h == "wind_intensity" || h.starts_with("wind_intensity_"))?;
    if wind_cols.is_empty() {
        return Err(ScenarioError::MissingColumn {
            path: wind_path.display().to_string(),
            column: "wind_intensity".into(),
        });
    }
    let (names, series): (Vec<_>, Vec<_>) = wind_cols.into_iter().unzip();
    HourlyProfile::new(load, names, series)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: usize,
    /// Operating hours N_t represented by this scenario.
    pub hours: f64,
    pub load_level: f64,
    /// One intensity per wind column of the set.
    pub wind: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSet {
    pub wind_columns: Vec<String>,
    pub scenarios: Vec<Scenario>,
    /// Clustering seed, when the set came from clustering.
    pub seed: Option<u64>,
}

/// Highest-load hour and highest-wind hour as one-hour scenarios, plus the
/// remaining pool. Ties go to the lowest hour index; the wind extreme is
/// picked among the hours left after removing the load extreme.
pub fn extract_extremes(profile: &HourlyProfile) -> Result<([Scenario; 2], HourlyProfile)> {
    if profile.hours() < 2 {
        return Err(ScenarioError::TooShort { needed: 2, got: profile.hours() });
    }
    let argmax = |score: &dyn Fn(usize) -> f64, skip: Option<usize>| {
        let mut best: Option<usize> = None;
        for h in 0..profile.hours() {
            if Some(h) == skip {
                continue;
            }
            if best.is_none_or(|b| score(h) > score(b)) {
                best = Some(h);
            }
        }
        best.expect("at least two hours")
    };
    let peak_load = argmax(&|h| profile.load[h], None);
    let peak_wind = argmax(&|h| profile.mean_wind(h), Some(peak_load));
    let as_scenario = |h: usize| Scenario {
        id: 0,
        hours: 1.0,
        load_level: profile.load[h],
        wind: profile.wind.iter().map(|w| w[h]).collect(),
    };
    Ok(([as_scenario(peak_load), as_scenario(peak_wind)], profile.without(&[peak_load, peak_wind])))
}

#[derive(Clone, Debug)]
pub struct Clustering {
    pub scenarios: Vec<Scenario>,
    pub assignment: Vec<usize>,
    /// Sum of squared distances after each assignment/update round.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub const MAX_KMEANS_ITERATIONS: usize = 300;

/// Lloyd iterations from `k` distinct seeded sample points. An emptied
/// cluster is re-seeded with the point farthest from its current centroid.
pub fn kmeans_cluster(pool: &HourlyProfile, k: usize, seed: u64) -> Result<Clustering> {
    let n = pool.hours();
    if k == 0 || k > n {
        return Err(ScenarioError::TooManyClusters { k, n });
    }
    let points: Vec<Vec<f64>> = (0..n).map(|h| pool.point(h)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init = rand::seq::index::sample(&mut rng, n, k).into_vec();
    init.sort_unstable();
    let mut centroids: Vec<Vec<f64>> = init.iter().map(|&i| points[i].clone()).collect();
    let mut assignment = vec![usize::MAX; n];
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d = sq_dist(p, centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        loop {
            let mut counts = vec![0usize; k];
            for &a in &assignment {
                counts[a] += 1;
            }
            let Some(empty) = counts.iter().position(|&c| c == 0) else { break };
            let far = (0..n)
                .filter(|&i| counts[assignment[i]] > 1)
                .max_by(|&a, &b| {
                    let da = sq_dist(&points[a], &centroids[assignment[a]]);
                    let db = sq_dist(&points[b], &centroids[assignment[b]]);
                    da.partial_cmp(&db).unwrap().then(b.cmp(&a))
                })
                .expect("k <= n leaves a cluster with spare members");
            assignment[far] = empty;
            centroids[empty] = points[far].clone();
            changed = true;
        }
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
        }
        history.push(points.iter().zip(&assignment).map(|(p, &a)| sq_dist(p, &centroids[a])).sum());
        if !changed || iterations >= MAX_KMEANS_ITERATIONS {
            break;
        }
    }
    let mut counts = vec![0usize; k];
    for &a in &assignment {
        counts[a] += 1;
    }
    let scenarios = centroids
        .iter()
        .zip(&counts)
        .enumerate()
        .map(|(c, (centroid, &count))| Scenario {
            id: c + 1,
            hours: count as f64,
            load_level: centroid[0],
            wind: centroid[1..].to_vec(),
        })
        .collect();
    Ok(Clustering { scenarios, assignment, objective_history: history, iterations })
}

/// Clusters first (ids 1..k), then the load and wind extremes.
pub fn build_scenario_set(extremes: &[Scenario], clusters: &[Scenario], wind_columns: Vec<String>, seed: Option<u64>) -> ScenarioSet {
    let scenarios = clusters
        .iter()
        .chain(extremes)
        .enumerate()
        .map(|(i, s)| Scenario { id: i + 1, ..s.clone() })
        .collect();
    ScenarioSet { wind_columns, scenarios, seed }
}

/// Full pipeline: extremes, K-means on the remainder, assembled set.
pub fn reduce_profile(profile: &HourlyProfile, k: usize, seed: u64) -> Result<ScenarioSet> {
    let (extremes, pool) = extract_extremes(profile)?;
    let clustering = kmeans_cluster(&pool, k, seed)?;
    Ok(build_scenario_set(&extremes, &clustering.scenarios, profile.wind_columns.clone(), Some(seed)))
}

/// Scenario data in MW for one case.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatingPoint {
    pub id: usize,
    pub hours: f64,
    /// Demand per load of the case, MW.
    pub load_mw: Vec<f64>,
    /// Available wind per farm of the case, MW.
    pub wind_mw: Vec<f64>,
}

impl OperatingPoint {
    pub fn total_load(&self) -> f64 {
        self.load_mw.iter().sum()
    }

    pub fn total_wind(&self) -> f64 {
        self.wind_mw.iter().sum()
    }
}

impl ScenarioSet {
    pub fn total_hours(&self) -> f64 {
        self.scenarios.iter().map(|s| s.hours).sum()
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn get(&self, id: usize) -> Result<&Scenario> {
        self.scenarios.iter().find(|s| s.id == id).ok_or(ScenarioError::UnknownScenario(id))
    }

    /// (highest-load scenario, highest-wind scenario); lowest position wins ties.
    pub fn extremes(&self) -> Option<(&Scenario, &Scenario)> {
        let mean = |s: &Scenario| if s.wind.is_empty() { 0.0 } else { s.wind.iter().sum::<f64>() / s.wind.len() as f64 };
        let first_max = |score: &dyn Fn(&Scenario) -> f64| {
            self.scenarios.iter().fold(None::<&Scenario>, |best, s| match best {
                Some(b) if score(s) <= score(b) => Some(b),
                _ => Some(s),
            })
        };
        Some((first_max(&|s| s.load_level)?, first_max(&mean)?))
    }

    /// Column of the set feeding a given wind farm: `wind_intensity_<id>` if
    /// present, otherwise the first column.
    fn column_for_farm(&self, farm_id: usize) -> Option<usize> {
        let own = format!("wind_intensity_{farm_id}");
        self.wind_columns.iter().position(|c| *c == own).or(if self.wind_columns.is_empty() { None } else { Some(0) })
    }

    /// Scale onto the case. `farm_scaling` overrides each farm's own
    /// `intensity_scale` when given; scaled intensities are clamped to [0, 1].
    pub fn materialize(&self, case: &NetworkCase, farm_scaling: Option<&[f64]>) -> Vec<OperatingPoint> {
        self.scenarios
            .iter()
            .map(|s| OperatingPoint {
                id: s.id,
                hours: s.hours,
                load_mw: case.loads.iter().map(|l| s.load_level * l.peak).collect(),
                wind_mw: case
                    .wind_farms
                    .iter()
                    .enumerate()
                    .map(|(w, farm)| {
                        let scale = farm_scaling.map_or(farm.intensity_scale, |f| f[w]);
                        let intensity = self.column_for_farm(farm.id).map_or(0.0, |c| s.wind[c]);
                        (intensity * scale).clamp(0.0, 1.0) * farm.capacity
                    })
                    .collect(),
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["id".to_string(), "hours".into(), "load_level".into()];
        header.extend(self.wind_columns.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for s in &self.scenarios {
            let mut row = vec![s.id.to_string(), s.hours.to_string(), format!("{:.6}", s.load_level)];
            row.extend(s.wind.iter().map(|v| format!("{v:.6}")));
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| ScenarioError::Invalid(e.to_string()))?.clone();
        let find = |name: &str| {
            headers.iter().position(|h| h == name).ok_or_else(|| ScenarioError::MissingColumn {
                path: "scenario table".into(),
                column: name.into(),
            })
        };
        let (id_col, hours_col, load_col) = (find("id")?, find("hours")?, find("load_level")?);
        let wind_idx: Vec<(usize, String)> = headers
            .iter()
            .enumerate()
            .filter(|(_, h)| *h == "wind_intensity" || h.starts_with("wind_intensity_"))
            .map(|(i, h)| (i, h.to_string()))
            .collect();
        if wind_idx.is_empty() {
            return Err(ScenarioError::MissingColumn { path: "scenario table".into(), column: "wind_intensity".into() });
        }
        let mut scenarios = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record.map_err(|e| ScenarioError::Invalid(e.to_string()))?;
            let num = |i: usize| -> Result<f64> {
                let raw = record.get(i).unwrap_or("");
                raw.parse().map_err(|_| ScenarioError::Invalid(format!("row {}: bad number `{raw}`", row + 2)))
            };
            let s = Scenario {
                id: num(id_col)? as usize,
                hours: num(hours_col)?,
                load_level: num(load_col)?,
                wind: wind_idx.iter().map(|(i, _)| num(*i)).collect::<Result<_>>()?,
            };
            if !(s.hours >= 0.0) || !(s.load_level >= 0.0) {
                return Err(ScenarioError::Invalid(format!("scenario {} has negative hours or load", s.id)));
            }
            if let Some(&value) = s.wind.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(ScenarioError::IntensityOutOfRange { hour: row, value });
            }
            scenarios.push(s);
        }
        let mut ids: Vec<_> = scenarios.iter().map(|s| s.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != scenarios.len() {
            return Err(ScenarioError::Invalid("duplicate scenario id".into()));
        }
        Ok(Self { wind_columns: wind_idx.into_iter().map(|(_, h)| h).collect(), scenarios, seed: None })
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::Read { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_csv_str(&text)
    }
}
