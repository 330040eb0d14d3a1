//! Flat key=value run configuration files.
//!
//! Lines are `key = value`, `#` starts a comment, `[section]` headers
//! are cosmetic and ignored. Lists are comma separated; network
//! architectures are dash separated ("1-32-32-1").

use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::{example_by_name, ExampleSpec, ExperimentConfig, Method};
use crate::inverse::GradientMode;

/// Parsed, validated run configuration. Carries both the single-run
/// fields (`noise`, `gamma`) and the per-noise-level schedules used by
/// the benchmark table.
#[derive(Clone)]
pub struct RunConfig {
    pub example: &'static ExampleSpec,
    pub method: Method,
    pub mesh_m: usize,
    pub n_steps: usize,
    pub arch: Vec<usize>,
    pub learning_rate: f64,
    pub max_iters: usize,
    pub baseline_learning_rate: f64,
    pub baseline_max_iters: usize,
    /// `None` selects exact coefficient assembly.
    pub quad_level: Option<u32>,
    pub gradient_mode: GradientMode,
    pub seed: u64,
    pub noise: f64,
    pub gamma: f64,
    pub noise_levels: Vec<f64>,
    pub gamma_hybrid: Vec<f64>,
    pub gamma_baseline: Vec<f64>,
    pub reference_hybrid: Vec<f64>,
    pub reference_baseline: Vec<f64>,
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::config(format!("bad value for {key}: '{v}'")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|s| parse_num(key, s)).collect()
}

impl RunConfig {
    pub fn parse(text: &str, path_hint: &str) -> Result<RunConfig> {
        let mut example: Option<&'static ExampleSpec> = None;
        let mut cfg = RunConfig {
            example: &crate::harness::EXAMPLES[0],
            method: Method::Hybrid,
            mesh_m: 40,
            n_steps: 0,
            arch: vec![1, 32, 32, 1],
            learning_rate: 1e-3,
            max_iters: 10_000,
            baseline_learning_rate: 1.0,
            baseline_max_iters: 2_000,
            quad_level: Some(0),
            gradient_mode: GradientMode::DiscreteAdjoint,
            seed: 0,
            noise: 0.01,
            gamma: 1e-6,
            noise_levels: Vec::new(),
            gamma_hybrid: Vec::new(),
            gamma_baseline: Vec::new(),
            reference_hybrid: Vec::new(),
            reference_baseline: Vec::new(),
        };
        let mut arch_set = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() || (line.starts_with('[') && line.ends_with(']')) {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("{path_hint}:{}: expected key=value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "example" => example = Some(example_by_name(value)?),
                "method" => {
                    cfg.method = match value {
                        "hybrid" => Method::Hybrid,
                        "fem-baseline" => Method::FemBaseline,
                        other => {
                            return Err(Error::config(format!("unknown method '{other}'")))
                        }
                    }
                }
                "mesh_m" => cfg.mesh_m = parse_num(key, value)?,
                "n_steps" => cfg.n_steps = parse_num(key, value)?,
                "arch" => {
                    cfg.arch = value
                        .split('-')
                        .map(|s| parse_num::<usize>(key, s))
                        .collect::<Result<_>>()?;
                    arch_set = true;
                }
                "learning_rate" => cfg.learning_rate = parse_num(key, value)?,
                "max_iters" => cfg.max_iters = parse_num(key, value)?,
                "baseline_learning_rate" => {
                    cfg.baseline_learning_rate = parse_num(key, value)?
                }
                "baseline_max_iters" => cfg.baseline_max_iters = parse_num(key, value)?,
                "quad_level" => {
                    cfg.quad_level = if value == "exact" {
                        None
                    } else {
                        Some(parse_num(key, value)?)
                    }
                }
                "gradient_mode" => {
                    cfg.gradient_mode = match value {
                        "discrete" => GradientMode::DiscreteAdjoint,
                        "riesz" => GradientMode::RieszSmoothed,
                        other => {
                            return Err(Error::config(format!(
                                "unknown gradient_mode '{other}'"
                            )))
                        }
                    }
                }
                "seed" => cfg.seed = parse_num(key, value)?,
                "noise" => cfg.noise = parse_num(key, value)?,
                "gamma" => cfg.gamma = parse_num(key, value)?,
                "noise_levels" => cfg.noise_levels = parse_list(key, value)?,
                "gamma_hybrid" => cfg.gamma_hybrid = parse_list(key, value)?,
                "gamma_baseline" => cfg.gamma_baseline = parse_list(key, value)?,
                "reference_hybrid" => cfg.reference_hybrid = parse_list(key, value)?,
                "reference_baseline" => cfg.reference_baseline = parse_list(key, value)?,
                other => {
                    return Err(Error::config(format!(
                        "{path_hint}:{}: unknown key '{other}'",
                        lineno + 1
                    )))
                }
            }
        }
        cfg.example =
            example.ok_or_else(|| Error::config(format!("{path_hint}: missing 'example'")))?;
        if !arch_set {
            cfg.arch = vec![cfg.example.dim, 32, 32, 1];
        }
        cfg.validate(path_hint)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::parse(&text, &path.display().to_string())
    }

    fn validate(&self, hint: &str) -> Result<()> {
        let bad = |msg: String| Err(Error::config(format!("{hint}: {msg}")));
        if self.mesh_m < 2 {
            return bad(format!("mesh_m must be >= 2, got {}", self.mesh_m));
        }
        if self.example.is_parabolic() {
            if self.n_steps == 0 {
                return bad("parabolic example requires n_steps >= 1".into());
            }
            let (t0, t_final) = self.example.time.unwrap();
            let tau = t_final / self.n_steps as f64;
            if ((t0 / tau) - (t0 / tau).round()).abs() > 1e-9 {
                return bad(format!(
                    "window start {t0} is not a multiple of the step {tau}"
                ));
            }
        }
        if self.gamma < 0.0 || self.gamma_hybrid.iter().any(|&g| g < 0.0)
            || self.gamma_baseline.iter().any(|&g| g < 0.0)
        {
            return bad("regularization weights must be >= 0".into());
        }
        if self.noise < 0.0 || self.noise_levels.iter().any(|&e| e < 0.0) {
            return bad("noise levels must be >= 0".into());
        }
        if self.learning_rate <= 0.0 || self.baseline_learning_rate <= 0.0 {
            return bad("learning rates must be > 0".into());
        }
        if self.arch.len() < 2
            || self.arch[0] != self.example.dim
            || *self.arch.last().unwrap() != 1
        {
            return bad(format!(
                "arch must run from {} inputs to 1 output",
                self.example.dim
            ));
        }
        if self.arch.iter().any(|&w| w == 0) {
            return bad("arch layers must be nonempty".into());
        }
        for (name, v) in [
            ("gamma_hybrid", &self.gamma_hybrid),
            ("gamma_baseline", &self.gamma_baseline),
            ("reference_hybrid", &self.reference_hybrid),
            ("reference_baseline", &self.reference_baseline),
        ] {
            if !v.is_empty() && v.len() != self.noise_levels.len() {
                return bad(format!(
                    "{name} has {} entries but noise_levels has {}",
                    v.len(),
                    self.noise_levels.len()
                ));
            }
        }
        Ok(())
    }

    /// Single-run experiment for the configured method, noise and gamma.
    pub fn experiment(&self) -> ExperimentConfig {
        let (lr, iters) = match self.method {
            Method::Hybrid => (self.learning_rate, self.max_iters),
            Method::FemBaseline => (self.baseline_learning_rate, self.baseline_max_iters),
        };
        ExperimentConfig {
            example: self.example,
            method: self.method,
            m: self.mesh_m,
            n_steps: self.n_steps,
            arch: self.arch.clone(),
            gamma: self.gamma,
            noise_rel: self.noise,
            learning_rate: lr,
            max_iters: iters,
            quad_level: self.quad_level,
            grad_mode: self.gradient_mode,
            seed: self.seed,
        }
    }

    /// The full schedule of benchmark cells for this example: one
    /// hybrid and one baseline run per configured noise level, each
    /// paired with its published reference error when present.
    pub fn table_cells(&self) -> Result<Vec<(ExperimentConfig, Option<f64>)>> {
        if self.noise_levels.is_empty()
            || self.gamma_hybrid.len() != self.noise_levels.len()
            || self.gamma_baseline.len() != self.noise_levels.len()
        {
            return Err(Error::config(format!(
                "example '{}' lacks a full noise/gamma schedule",
                self.example.name
            )));
        }
        let mut cells = Vec::new();
        for (i, &eps) in self.noise_levels.iter().enumerate() {
            // Observation seed varies per noise level so cells draw
            // independent realizations; hybrid and baseline share it.
            let seed = self.seed.wrapping_add(1000 * i as u64 + 1);
            let mut h = self.experiment();
            h.method = Method::Hybrid;
            h.learning_rate = self.learning_rate;
            h.max_iters = self.max_iters;
            h.noise_rel = eps;
            h.gamma = self.gamma_hybrid[i];
            h.seed = seed;
            let ref_h = self.reference_hybrid.get(i).copied();
            cells.push((h, ref_h));
            let mut b = self.experiment();
            b.method = Method::FemBaseline;
            b.learning_rate = self.baseline_learning_rate;
            b.max_iters = self.baseline_max_iters;
            b.noise_rel = eps;
            b.gamma = self.gamma_baseline[i];
            b.seed = seed;
            let ref_b = self.reference_baseline.get(i).copied();
            cells.push((b, ref_b));
        }
        Ok(cells)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\n# comment\n[run]\nexample = sine1d\nmesh_m = 20\n";

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = RunConfig::parse(MINIMAL, "test").unwrap();
        assert_eq!(c.example.name, "sine1d");
        assert_eq!(c.mesh_m, 20);
        assert_eq!(c.arch, vec![1, 32, 32, 1]);
        assert_eq!(c.quad_level, Some(0));
    }

    #[test]
    fn arch_defaults_to_example_dimension() {
        let c = RunConfig::parse("example = sine2d\n", "test").unwrap();
        assert_eq!(c.arch, vec![2, 32, 32, 1]);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::parse("example = sine1d\nbogus = 1\n", "t").is_err());
        assert!(RunConfig::parse("example = sine1d\nmesh_m = x\n", "t").is_err());
        assert!(RunConfig::parse("mesh_m = 10\n", "t").is_err());
        assert!(RunConfig::parse("example = nosuch\n", "t").is_err());
    }

    #[test]
    fn parabolic_requires_steps() {
        assert!(RunConfig::parse("example = sine1d-time\n", "t").is_err());
        let ok = RunConfig::parse("example = sine1d-time\nn_steps = 1000\n", "t");
        assert!(ok.is_ok());
        // Window start must land on the time grid.
        assert!(RunConfig::parse("example = sine1d-time\nn_steps = 7\n", "t").is_err());
    }

    #[test]
    fn schedule_lengths_must_match() {
        let text = "example = sine1d\nnoise_levels = 0.1,0.05\ngamma_hybrid = 1e-6\n";
        assert!(RunConfig::parse(text, "t").is_err());
    }

    #[test]
    fn table_cells_pair_methods_per_level() {
        let text = "example = sine1d\nnoise_levels = 0.1,0.01\n\
                    gamma_hybrid = 1e-6,1e-6\ngamma_baseline = 2e-6,1e-7\n\
                    reference_hybrid = 3.0e-2,1.0e-2\n";
        let c = RunConfig::parse(text, "t").unwrap();
        let cells = c.table_cells().unwrap();
        assert_eq!(cells.len(), 4);
        assert_eq!(cells[0].0.method, Method::Hybrid);
        assert_eq!(cells[1].0.method, Method::FemBaseline);
        assert_eq!(cells[0].0.seed, cells[1].0.seed);
        assert_ne!(cells[0].0.seed, cells[2].0.seed);
        assert_eq!(cells[0].1, Some(3.0e-2));
        assert_eq!(cells[1].1, None);
    }

    #[test]
    fn quad_level_exact_keyword() {
        let c = RunConfig::parse("example = sine1d\nquad_level = exact\n", "t").unwrap();
        assert_eq!(c.quad_level, None);
    }
}
