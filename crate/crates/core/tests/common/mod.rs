#![allow(dead_code)]

use std::path::PathBuf;

use facts_core::config::RunConfig;
use facts_core::network::{Branch, Bus, CaseFile, Generator, Load, NetworkCase, WindFarm};
use facts_core::scenarios::OperatingPoint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Frozen desk instances (5-8 buses, 2 VSR + 2 PST candidates, 4 scenarios).
pub const DESK: [&str; 6] = ["case11", "case12", "case16", "case19", "case23", "case39"];

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn desk_config(name: &str, overrides: &[&str]) -> RunConfig {
    let path = data_dir().join("desk").join(name).join("plan.toml");
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    RunConfig::load(&path, &o).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

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

/// Ring 1-2, 2-3, 1-3 (x = 0.1); 50 MW on 1-3, 100 MW elsewhere; cheap unit
/// at bus 1, expensive unit and 120 MW of load at bus 3.
pub fn ring() -> CaseFile {
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

pub fn peak_op(case: &NetworkCase, level: f64, wind_mw: Vec<f64>) -> OperatingPoint {
    OperatingPoint { id: 1, hours: 1.0, load_mw: case.loads.iter().map(|l| l.peak * level).collect(), wind_mw }
}

/// Connected random case: a random spanning tree plus extra chords, units
/// with distinct costs, loads on about half the buses and `n_wind` farms.
pub fn random_case(seed: u64, nb: usize, n_wind: usize) -> NetworkCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let buses: Vec<Bus> = (1..=nb).map(|i| bus(i, i == 1)).collect();
    let mut branches: Vec<Branch> = Vec::new();
    let mut next = 1;
    for i in 2..=nb {
        let j = rng.random_range(1..i);
        branches.push(line(next, j, i, rng.random_range(0.02..0.25), rng.random_range(80.0..250.0f64).round()));
        next += 1;
    }
    for _ in 0..nb / 2 + 1 {
        let (a, b) = (rng.random_range(1..=nb), rng.random_range(1..=nb));
        if a == b || branches.iter().any(|l| (l.from == a && l.to == b) || (l.from == b && l.to == a)) {
            continue;
        }
        branches.push(line(next, a, b, rng.random_range(0.02..0.25), rng.random_range(80.0..250.0f64).round()));
        next += 1;
    }
    let n_gen = (nb / 4).max(2);
    let generators = (0..n_gen)
        .map(|n| Generator {
            id: n + 1,
            bus: if n == 0 { 1 } else { rng.random_range(1..=nb) },
            cost: rng.random_range(10.0..80.0),
            p_min: 0.0,
            p_max: rng.random_range(150.0..400.0f64).round(),
        })
        .collect();
    let mut loads = Vec::new();
    for b in 2..=nb {
        if rng.random_bool(0.5) {
            loads.push(Load { id: loads.len() + 1, bus: b, peak: rng.random_range(20.0..120.0f64).round() });
        }
    }
    let wind_farms = (0..n_wind)
        .map(|w| WindFarm { id: w + 1, bus: rng.random_range(1..=nb), capacity: rng.random_range(50.0..200.0f64).round(), intensity_scale: 1.0 })
        .collect();
    NetworkCase::new(CaseFile { base_mva: 100.0, buses, branches, generators, loads, wind_farms }).expect("random case is valid")
}
