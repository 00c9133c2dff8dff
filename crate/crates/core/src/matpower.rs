//! Import of MATPOWER `.m` case files into the native case schema.
//!
//! Only the columns a DC planning model needs are read: bus type and real
//! demand, branch reactance / RATE_A / status, generator limits / status and
//! the linear term of polynomial generator costs.

use std::collections::HashMap;

use crate::network::{Branch, Bus, CaseFile, Generator, Load, NetworkCase, NetworkError, WindFarm};

#[derive(Clone, Debug)]
pub struct ImportOptions {
    /// Multiplier on every bus demand.
    pub peak_scale: f64,
    /// Multiplier on every branch rating.
    pub limit_scale: f64,
    /// Rating used when RATE_A is 0 (unlimited in MATPOWER).
    pub default_rating: f64,
    /// Cost used for generators without a gencost row.
    pub default_cost: f64,
    pub wind_farms: Vec<WindFarm>,
}

impl Default for ImportOptions {
    fn default() -> Self {
        Self { peak_scale: 1.0, limit_scale: 1.0, default_rating: 9900.0, default_cost: 0.0, wind_farms: Vec::new() }
    }
}

fn parse_err(msg: impl Into<String>) -> NetworkError {
    NetworkError::Parse { path: "matpower".into(), message: msg.into() }
}

/// Extract `mpc.<name> = [ ... ];` as rows of numbers.
fn matrix(text: &str, name: &str) -> Result<Option<Vec<Vec<f64>>>, NetworkError> {
    let key = format!("mpc.{name}");
    let Some(start) = text.find(&format!("{key} ")).or_else(|| text.find(&format!("{key}="))) else {
        return Ok(None);
    };
    let rest = &text[start..];
    let open = rest.find('[').ok_or_else(|| parse_err(format!("`{key}` has no opening bracket")))?;
    let close = rest.find(']').ok_or_else(|| parse_err(format!("`{key}` has no closing bracket")))?;
    let body = &rest[open + 1..close];
    let mut rows = Vec::new();
    for line in body.lines() {
        let line = line.split('%').next().unwrap_or("");
        for chunk in line.split(';') {
            let values: Vec<f64> = chunk
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f64>().map_err(|_| parse_err(format!("bad number `{s}` in `{key}`"))))
                .collect::<Result<_, _>>()?;
            if !values.is_empty() {
                rows.push(values);
            }
        }
    }
    Ok(Some(rows))
}

fn scalar(text: &str, name: &str) -> Result<f64, NetworkError> {
    let key = format!("mpc.{name}");
    let start = text.find(&key).ok_or_else(|| parse_err(format!("missing `{key}`")))?;
    let rest = &text[start + key.len()..];
    let eq = rest.find('=').ok_or_else(|| parse_err(format!("`{key}` has no value")))?;
    let end = rest.find(';').unwrap_or(rest.len());
    rest[eq + 1..end].trim().parse().map_err(|_| parse_err(format!("bad value for `{key}`")))
}

fn col(row: &[f64], i: usize, what: &str) -> Result<f64, NetworkError> {
    row.get(i).copied().ok_or_else(|| parse_err(format!("{what} row has too few columns")))
}

pub fn import_matpower(text: &str, opts: &ImportOptions) -> Result<NetworkCase, NetworkError> {
    let base_mva = scalar(text, "baseMVA")?;
    let bus_rows = matrix(text, "bus")?.ok_or_else(|| parse_err("missing `mpc.bus`"))?;
    let gen_rows = matrix(text, "gen")?.unwrap_or_default();
    let branch_rows = matrix(text, "branch")?.ok_or_else(|| parse_err("missing `mpc.branch`"))?;
    let cost_rows = matrix(text, "gencost")?.unwrap_or_default();

    let mut buses = Vec::new();
    let mut loads = Vec::new();
    for row in &bus_rows {
        let id = col(row, 0, "bus")? as usize;
        let kind = col(row, 1, "bus")? as i64;
        if kind == 4 {
            continue;
        }
        buses.push(Bus { id, reference: kind == 3 });
        let pd = col(row, 2, "bus")?;
        if pd > 0.0 {
            loads.push(Load { id, bus: id, peak: pd * opts.peak_scale });
        }
    }
    let mut generators = Vec::new();
    for (n, row) in gen_rows.iter().enumerate() {
        if col(row, 7, "gen")? <= 0.0 {
            continue;
        }
        let cost = match cost_rows.get(n) {
            Some(c) if col(c, 0, "gencost")? as i64 == 2 => {
                let ncost = col(c, 3, "gencost")? as usize;
                // coefficients run from highest power down to the constant
                if ncost >= 2 { col(c, 4 + ncost - 2, "gencost")? } else { 0.0 }
            }
            Some(_) => return Err(parse_err("piecewise-linear gencost is not supported")),
            None => opts.default_cost,
        };
        generators.push(Generator {
            id: n + 1,
            bus: col(row, 0, "gen")? as usize,
            cost,
            p_min: col(row, 9, "gen")?.max(0.0),
            p_max: col(row, 8, "gen")?,
        });
    }
    let mut branches = Vec::new();
    for (k, row) in branch_rows.iter().enumerate() {
        if row.get(10).is_some_and(|&s| s <= 0.0) {
            continue;
        }
        let rate = col(row, 5, "branch")?;
        let rating = if rate > 0.0 { rate } else { opts.default_rating };
        branches.push(Branch {
            id: k + 1,
            from: col(row, 0, "branch")? as usize,
            to: col(row, 1, "branch")? as usize,
            x: col(row, 3, "branch")?,
            s_max: rating * opts.limit_scale,
        });
    }
    // merge loads that ended up on the same bus id (cannot happen from mpc.bus, kept for clarity)
    let mut merged: HashMap<usize, Load> = HashMap::new();
    for l in loads {
        merged.entry(l.bus).and_modify(|e| e.peak += l.peak).or_insert(l);
    }
    let mut loads: Vec<_> = merged.into_values().collect();
    loads.sort_by_key(|l| l.id);

    NetworkCase::new(CaseFile { base_mva, buses, branches, generators, loads, wind_farms: opts.wind_farms.clone() })
}
