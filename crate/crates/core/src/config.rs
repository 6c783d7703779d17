//! Run configuration: flat `key = value` text with `[solver]`, `[rep]`,
//! `[grid]` and `[meanfield]` sections. Command-line flags are applied on
//! top by the caller.

use std::path::Path;

use crate::error::{Error, Result};
use crate::meanfield::EvolutionConfig;
use crate::phase_space::PhaseSpaceGrid;
use crate::quantum_ot::{OracleMode, SolverConfig};

#[derive(Clone, Debug)]
pub struct RepSettings {
    pub n_basis: usize,
    pub lambda: f64,
}

#[derive(Clone, Debug)]
pub struct GridSettings {
    /// Half-width; `None` picks the default for λ and the displacement.
    pub extent: Option<f64>,
    pub n: usize,
}

#[derive(Clone, Debug)]
pub struct MeanfieldSettings {
    pub dt: f64,
    pub hbar: f64,
    pub t_final: f64,
    pub n_basis: usize,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub solver: SolverConfig,
    pub rep: RepSettings,
    pub grid: GridSettings,
    pub meanfield: MeanfieldSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            solver: SolverConfig::default(),
            rep: RepSettings {
                n_basis: 24,
                lambda: 1.0,
            },
            grid: GridSettings { extent: None, n: 128 },
            meanfield: MeanfieldSettings {
                dt: 0.0025,
                hbar: 1.0,
                t_final: 0.5,
                n_basis: 16,
            },
        }
    }
}

fn parse_value<T: std::str::FromStr>(line_no: usize, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Parse(format!("line {line_no}: cannot parse `{value}` for {key}")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Parse(format!("line {line_no}: unterminated section header")))?;
                section = name.trim().to_string();
                if !matches!(section.as_str(), "solver" | "rep" | "grid" | "meanfield") {
                    return Err(Error::Config(format!("line {line_no}: unknown section [{section}]")));
                }
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {line_no}: expected `key = value`")))?;
            let (key, value) = (key.trim(), value.trim());
            let full = format!("{section}.{key}");
            let v = value;
            let n = line_no;
            match full.as_str() {
                "solver.max_iters" => cfg.solver.max_iters = parse_value(n, &full, v)?,
                "solver.feas_tol" => cfg.solver.feas_tol = parse_value(n, &full, v)?,
                "solver.obj_tol" => cfg.solver.obj_tol = parse_value(n, &full, v)?,
                "solver.gap_tol" => cfg.solver.gap_tol = parse_value(n, &full, v)?,
                "solver.rho" => cfg.solver.rho = parse_value(n, &full, v)?,
                "solver.check_every" => cfg.solver.check_every = parse_value(n, &full, v)?,
                "solver.stall_window" => cfg.solver.stall_window = parse_value(n, &full, v)?,
                "solver.support_tol" => cfg.solver.support_tol = parse_value(n, &full, v)?,
                "solver.oracle" => {
                    cfg.solver.oracle_mode = match v {
                        "splitting" => OracleMode::Splitting,
                        "barrier" => OracleMode::Barrier,
                        other => {
                            return Err(Error::Config(format!(
                                "line {n}: oracle must be `splitting` or `barrier`, got `{other}`"
                            )))
                        }
                    }
                }
                "rep.n_basis" => cfg.rep.n_basis = parse_value(n, &full, v)?,
                "rep.lambda" => cfg.rep.lambda = parse_value(n, &full, v)?,
                "grid.extent" => cfg.grid.extent = Some(parse_value(n, &full, v)?),
                "grid.n" => cfg.grid.n = parse_value(n, &full, v)?,
                "meanfield.dt" => cfg.meanfield.dt = parse_value(n, &full, v)?,
                "meanfield.hbar" => cfg.meanfield.hbar = parse_value(n, &full, v)?,
                "meanfield.t_final" => cfg.meanfield.t_final = parse_value(n, &full, v)?,
                "meanfield.n_basis" => cfg.meanfield.n_basis = parse_value(n, &full, v)?,
                _ if section.is_empty() => {
                    return Err(Error::Config(format!("line {n}: key `{key}` outside a section")))
                }
                _ => return Err(Error::Config(format!("line {n}: unknown key `{key}` in [{section}]"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if self.rep.n_basis < 2 {
            return Err(Error::Config(format!("rep.n_basis must be at least 2, got {}", self.rep.n_basis)));
        }
        if !(self.rep.lambda > 0.0) {
            return Err(Error::Config(format!("rep.lambda must be positive, got {}", self.rep.lambda)));
        }
        if let Some(w) = self.grid.extent {
            if !(w > 0.0) {
                return Err(Error::Config(format!("grid.extent must be positive, got {w}")));
            }
        }
        if self.grid.n < 16 || !self.grid.n.is_power_of_two() {
            return Err(Error::Config(format!("grid.n must be a power of two ≥ 16, got {}", self.grid.n)));
        }
        self.evolution().validate()
    }

    pub fn grid_for(&self, lambda: f64, max_displacement: f64) -> Result<PhaseSpaceGrid> {
        let w = self
            .grid
            .extent
            .unwrap_or_else(|| 6.0 * lambda.sqrt() * max_displacement.abs().max(1.0));
        PhaseSpaceGrid::square(w, self.grid.n)
    }

    pub fn evolution(&self) -> EvolutionConfig {
        let m = &self.meanfield;
        EvolutionConfig::new(m.dt, m.t_final, m.hbar, m.n_basis)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg.rep.n_basis, 24);
        assert_eq!(cfg.solver.max_iters, SolverConfig::default().max_iters);
        assert!(cfg.grid.extent.is_none());
    }

    #[test]
    fn sections_and_comments() {
        let text = "# run\n[solver]\nmax_iters = 500\noracle = barrier # small problems\n\n[rep]\nn_basis=8\nlambda = 0.5\n[grid]\nextent = 4.0\nn = 64\n[meanfield]\ndt = 0.005\nhbar = 0.5\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.solver.max_iters, 500);
        assert_eq!(cfg.solver.oracle_mode, OracleMode::Barrier);
        assert_eq!(cfg.rep.n_basis, 8);
        assert_eq!(cfg.rep.lambda, 0.5);
        assert_eq!(cfg.grid.extent, Some(4.0));
        assert_eq!(cfg.grid_for(1.0, 0.0).unwrap().n_x, 64);
        assert_eq!(cfg.meanfield.hbar, 0.5);
    }

    #[test]
    fn unknown_keys_and_bad_values() {
        assert!(matches!(RunConfig::parse("[solver]\nfoo = 1\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("[other]\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("n_basis = 4\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("[rep]\nn_basis = four\n"), Err(Error::Parse(_))));
        assert!(matches!(RunConfig::parse("[rep]\nn_basis\n"), Err(Error::Parse(_))));
        assert!(matches!(RunConfig::parse("[solver]\nfeas_tol = 1e-12\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("[grid]\nn = 100\n"), Err(Error::Config(_))));
    }
}
