//! Repeated runs over a benchmark suite.

use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{bail, Result};

use desolve::cache::CacheStore;
use desolve::problems::Variants;

use crate::record::RunRecord;
use crate::run::{benchmark, run_single, RunSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Legendre,
    Painleve,
    Pde,
    All,
}

impl FromStr for Suite {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "legendre" => Ok(Suite::Legendre),
            "painleve" => Ok(Suite::Painleve),
            "pde" => Ok(Suite::Pde),
            "all" => Ok(Suite::All),
            _ => bail!("unknown suite `{s}` (expected legendre, painleve, pde or all)"),
        }
    }
}

impl Suite {
    /// Problem names with their default grid sizes per axis.
    pub fn members(self) -> Vec<(String, Vec<usize>)> {
        let ode = |prefix: &str, range: std::ops::RangeInclusive<usize>, grids: &[usize]| {
            range.map(|i| (format!("{prefix}:{i}"), grids.to_vec())).collect::<Vec<_>>()
        };
        match self {
            Suite::Legendre => ode("legendre", 3..=9, &[100]),
            Suite::Painleve => ode("painleve", 1..=6, &[10, 100]),
            Suite::Pde => ["wave", "heat", "kdv"].iter().map(|p| (p.to_string(), vec![10, 20, 30])).collect(),
            Suite::All => [Suite::Legendre, Suite::Painleve, Suite::Pde].into_iter().flat_map(Suite::members).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheMode {
    On,
    Off,
    Both,
}

impl FromStr for CacheMode {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "on" => Ok(CacheMode::On),
            "off" => Ok(CacheMode::Off),
            "both" => Ok(CacheMode::Both),
            _ => bail!("unknown cache mode `{s}` (expected on, off or both)"),
        }
    }
}

impl CacheMode {
    fn flags(self) -> &'static [bool] {
        match self {
            CacheMode::On => &[true],
            CacheMode::Off => &[false],
            CacheMode::Both => &[false, true],
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchSpec {
    pub suite: Suite,
    pub runs: usize,
    /// Overrides the per-problem default sizes; each value applies to every axis.
    pub grids: Option<Vec<usize>>,
    pub cache: CacheMode,
    pub cache_dir: PathBuf,
    /// Run `i` uses seed `seed + i`.
    pub seed: u64,
    pub run: RunSpec,
    pub variants: Variants,
}

/// Runs every (problem, grid) of the suite `runs` times per cache mode.
/// With both modes the cache-off runs come first; cache-on runs share one
/// store, so each run can start from its predecessors.
pub fn bench(spec: &BenchSpec, mut progress: impl FnMut(&RunRecord)) -> Result<Vec<RunRecord>> {
    if spec.runs == 0 {
        bail!("--runs must be at least 1");
    }
    let store = if spec.cache != CacheMode::Off { Some(CacheStore::open(&spec.cache_dir)?) } else { None };
    let mut records = Vec::new();
    for (name, default_grids) in spec.suite.members() {
        let bench = benchmark(&name, spec.variants)?;
        let dimension = bench.problem.domain.dimension();
        let grids = spec.grids.clone().unwrap_or(default_grids);
        for n in grids {
            let resolution = vec![n; dimension];
            for &cached in spec.cache.flags() {
                for run in 0..spec.runs {
                    let run_spec = RunSpec { seed: spec.seed + run as u64, ..spec.run.clone() };
                    let cache = if cached { store.as_ref() } else { None };
                    let out = run_single(&bench, &resolution, &run_spec, run, cache)?;
                    progress(&out.record);
                    records.push(out.record);
                }
            }
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites() {
        assert_eq!(Suite::Legendre.members().len(), 7);
        assert_eq!(Suite::Painleve.members().len(), 6);
        assert_eq!(Suite::Pde.members()[0], ("wave".to_string(), vec![10, 20, 30]));
        assert_eq!(Suite::All.members().len(), 16);
        assert_eq!("".parse::<Suite>().unwrap_err().to_string().split(' ').take(2).collect::<Vec<_>>(), ["unknown", "suite"]);
    }

    #[test]
    fn cache_modes() {
        assert_eq!("both".parse::<CacheMode>().unwrap().flags(), &[false, true]);
        assert!("maybe".parse::<CacheMode>().is_err());
    }
}
