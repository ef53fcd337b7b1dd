//! Refinement ladders and order fitting.

use crate::catalog::Oracle;
use crate::characteristics::Problem;
use crate::solver::{Solver, SolverConfig, SolverError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Refinement {
    /// Halve the node spacing (and the boundary injection spacing).
    Spatial,
    /// Halve the time step.
    Temporal,
}

impl std::str::FromStr for Refinement {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "spatial" => Ok(Refinement::Spatial),
            "temporal" => Ok(Refinement::Temporal),
            _ => Err(format!("unknown refinement mode '{s}' (expected spatial or temporal)")),
        }
    }
}

/// What errors are measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reference {
    Oracle,
    /// Differences between successive levels.
    Richardson,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Level {
    pub level: usize,
    /// Node spacing or time step of the level.
    pub h: f64,
    pub error: f64,
    /// Order from this level and the previous one.
    pub order: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Study {
    pub refinement: Refinement,
    pub reference: Reference,
    pub levels: Vec<Level>,
    pub fitted_order: f64,
}

/// Least-squares slope of `log e` against `log h`, over finite positive errors.
pub fn fit_order(hs: &[f64], errors: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> =
        hs.iter().zip(errors).filter(|(h, e)| **h > 0.0 && e.is_finite() && **e > 0.0).map(|(h, e)| (h.ln(), e.ln())).collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

fn local_orders(levels: &mut [Level]) {
    for k in 1..levels.len() {
        let (a, b) = (levels[k - 1], levels[k]);
        levels[k].order = if a.error > 0.0 && b.error > 0.0 && a.error.is_finite() && b.error.is_finite() {
            Some((a.error / b.error).ln() / (a.h / b.h).ln())
        } else {
            None
        };
    }
}

/// Representative node spacing of a configuration.
pub fn spacing(prob: &Problem, cfg: &SolverConfig) -> f64 {
    (prob.domain.1 - prob.domain.0) / (cfg.n_nodes - 1) as f64
}

/// Configuration of refinement level `k` starting from `base`.
pub fn level_config(base: &SolverConfig, refinement: Refinement, k: usize) -> SolverConfig {
    let factor = 1usize << k;
    let mut cfg = base.clone();
    match refinement {
        Refinement::Spatial => {
            cfg.n_nodes = base.n_nodes * factor;
            cfg.inflow_spacing = base.inflow_spacing.map(|h| h / factor as f64);
        }
        Refinement::Temporal => cfg.dt = base.dt / factor as f64,
    }
    cfg
}

/// Runs each configuration to `t_end` concurrently and measures it.
pub fn run_levels<M>(prob: &Problem, configs: &[SolverConfig], t_end: f64, measure: M) -> Result<Vec<Vec<f64>>, SolverError>
where
    M: Fn(&Solver) -> Result<Vec<f64>, SolverError> + Sync,
{
    let results: Vec<Result<Vec<f64>, SolverError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = configs
            .iter()
            .map(|cfg| {
                let measure = &measure;
                scope.spawn(move || {
                    let mut s = Solver::initialize(prob.clone(), cfg.clone())?;
                    s.advance(t_end)?;
                    measure(&s)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("level worker panicked")).collect()
    });
    results.into_iter().collect()
}

/// Shock positions, left to right.
pub fn shock_positions(s: &Solver) -> Result<Vec<f64>, SolverError> {
    Ok(s.shocks()?.iter().map(|r| r.x).collect())
}

fn max_deviation(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Refinement ladder on `levels` levels from `base`, measured against the
/// oracle when there is one and by successive differences otherwise.
pub fn converge(
    prob: &Problem,
    base: &SolverConfig,
    refinement: Refinement,
    levels: usize,
    t_end: f64,
    oracle: Option<Oracle>,
) -> Result<Study, SolverError> {
    if levels < 2 {
        return Err(SolverError::Config(format!("a convergence study needs at least 2 levels, got {levels}")));
    }
    let configs: Vec<SolverConfig> = (0..levels).map(|k| level_config(base, refinement, k)).collect();
    let hs: Vec<f64> = configs
        .iter()
        .map(|c| match refinement {
            Refinement::Spatial => spacing(prob, c),
            Refinement::Temporal => c.dt,
        })
        .collect();
    let (reference, errors) = match oracle {
        Some(Oracle::Shocks(exact)) => {
            let m = run_levels(prob, &configs, t_end, shock_positions)?;
            let want = exact(t_end);
            (Reference::Oracle, m.iter().map(|x| max_deviation(x, &want)).collect::<Vec<_>>())
        }
        Some(Oracle::Field(exact)) => {
            let m = run_levels(prob, &configs, t_end, |s| Ok(vec![s.curve_error(exact, 16)?]))?;
            (Reference::Oracle, m.iter().map(|v| v[0]).collect())
        }
        None => {
            let m = run_levels(prob, &configs, t_end, shock_positions)?;
            let mut e: Vec<f64> = m.windows(2).map(|w| max_deviation(&w[0], &w[1])).collect();
            e.push(f64::NAN);
            (Reference::Richardson, e)
        }
    };
    let mut rows: Vec<Level> =
        hs.iter().zip(&errors).enumerate().map(|(level, (&h, &error))| Level { level, h, error, order: None }).collect();
    if reference == Reference::Richardson {
        rows.pop();
    }
    local_orders(&mut rows);
    let fitted_order = fit_order(&rows.iter().map(|l| l.h).collect::<Vec<_>>(), &rows.iter().map(|l| l.error).collect::<Vec<_>>());
    Ok(Study { refinement, reference, levels: rows, fitted_order })
}
