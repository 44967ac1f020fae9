use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::rng::seeded;

pub type Config = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ParamSpec {
    Continuous {
        lo: f64,
        hi: f64,
        #[serde(default)]
        log: bool,
    },
    Integer {
        lo: i64,
        hi: i64,
    },
}

impl ParamSpec {
    /// Maps a unit-interval coordinate onto the parameter's range.
    pub fn decode(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match *self {
            ParamSpec::Continuous { lo, hi, log: false } => lo + u * (hi - lo),
            ParamSpec::Continuous { lo, hi, log: true } => (lo.ln() + u * (hi.ln() - lo.ln())).exp(),
            ParamSpec::Integer { lo, hi } => {
                let span = (hi - lo + 1) as f64;
                (lo as f64 + (u * span).floor()).min(hi as f64)
            }
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let ok = match *self {
            ParamSpec::Continuous { lo, hi, log } => lo < hi && lo.is_finite() && hi.is_finite() && (!log || lo > 0.0),
            ParamSpec::Integer { lo, hi } => lo < hi,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("parameter `{name}` has an invalid range")))
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub params: BTreeMap<String, ParamSpec>,
}

impl SearchSpace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, spec: ParamSpec) -> Self {
        self.params.insert(name.to_string(), spec);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.params.is_empty() {
            return Err(Error::InvalidParameter("search space is empty".into()));
        }
        for (name, p) in &self.params {
            p.validate(name)?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn decode(&self, u: &[f64]) -> Config {
        self.params
            .iter()
            .zip(u)
            .map(|((name, p), &v)| (name.clone(), p.decode(v)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BayesOptConfig {
    pub patience: usize,
    pub max_evals: usize,
    pub n_initial: usize,
    pub n_candidates: usize,
    pub length_scale: f64,
    pub noise: f64,
}

impl Default for BayesOptConfig {
    fn default() -> Self {
        Self {
            patience: 50,
            max_evals: 200,
            n_initial: 8,
            n_candidates: 1024,
            length_scale: 0.2,
            noise: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub config: Config,
    pub value: f64,
    pub best_so_far: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best_config: Config,
    pub best_value: f64,
    pub trace: Vec<TraceEntry>,
}

struct Gp {
    points: Vec<Vec<f64>>,
    alpha: DVector<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    mean: f64,
    scale: f64,
    length_scale: f64,
}

fn kernel(a: &[f64], b: &[f64], length_scale: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-0.5 * d2 / (length_scale * length_scale)).exp()
}

impl Gp {
    fn fit(points: &[Vec<f64>], values: &[f64], length_scale: f64, noise: f64) -> Option<Self> {
        let n = points.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        let y = DVector::from_iterator(n, values.iter().map(|v| (v - mean) / scale));
        let k = DMatrix::from_fn(n, n, |i, j| {
            kernel(&points[i], &points[j], length_scale) + if i == j { noise } else { 0.0 }
        });
        let chol = k.cholesky()?;
        let alpha = chol.solve(&y);
        Some(Self {
            points: points.to_vec(),
            alpha,
            chol,
            mean,
            scale,
            length_scale,
        })
    }

    /// Posterior mean and standard deviation in standardized units.
    fn posterior(&self, u: &[f64]) -> (f64, f64) {
        let ks = DVector::from_iterator(
            self.points.len(),
            self.points.iter().map(|p| kernel(p, u, self.length_scale)),
        );
        let mu = ks.dot(&self.alpha);
        let v = self.chol.solve(&ks);
        let var = (1.0 - ks.dot(&v)).max(1e-12);
        (mu, var.sqrt())
    }

    fn standardize(&self, y: f64) -> f64 {
        (y - self.mean) / self.scale
    }
}

fn expected_improvement(mu: f64, sd: f64, best: f64, normal: &Normal) -> f64 {
    let z = (mu - best) / sd;
    (mu - best) * normal.cdf(z) + sd * normal.pdf(z)
}

/// Maximizes `objective` with a fixed-hyperparameter GP surrogate and
/// expected improvement. Returns the best observed configuration.
pub fn bayes_opt(
    mut objective: impl FnMut(&Config) -> f64,
    space: &SearchSpace,
    config: &BayesOptConfig,
    seed: u64,
) -> Result<SearchResult> {
    space.validate()?;
    if config.max_evals == 0 || config.n_candidates == 0 {
        return Err(Error::InvalidParameter("max_evals and n_candidates must be positive".into()));
    }
    let normal = Normal::standard();
    let dim = space.dim();
    let mut rng = seeded(seed);
    let draw = |rng: &mut crate::rng::Rng| -> Vec<f64> { (0..dim).map(|_| rng.random::<f64>()).collect() };

    let mut points: Vec<Vec<f64>> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut trace: Vec<TraceEntry> = Vec::new();
    let mut best_idx = 0usize;
    let mut stale = 0usize;

    while points.len() < config.max_evals {
        let u = if points.len() < config.n_initial {
            draw(&mut rng)
        } else {
            let gp = Gp::fit(&points, &values, config.length_scale, config.noise);
            let candidates: Vec<Vec<f64>> = (0..config.n_candidates).map(|_| draw(&mut rng)).collect();
            match gp {
                Some(gp) => {
                    let incumbent = gp.standardize(values[best_idx]);
                    let mut best_c = 0;
                    let mut best_ei = f64::NEG_INFINITY;
                    for (i, c) in candidates.iter().enumerate() {
                        let (mu, sd) = gp.posterior(c);
                        let ei = expected_improvement(mu, sd, incumbent, &normal);
                        if ei > best_ei {
                            best_ei = ei;
                            best_c = i;
                        }
                    }
                    candidates[best_c].clone()
                }
                None => candidates[0].clone(),
            }
        };
        let cfg = space.decode(&u);
        let value = objective(&cfg);
        let improved = points.is_empty() || value > values[best_idx];
        points.push(u);
        values.push(value);
        if improved {
            best_idx = values.len() - 1;
        }
        if points.len() > config.n_initial {
            stale = if improved { 0 } else { stale + 1 };
        }
        trace.push(TraceEntry {
            config: cfg,
            value,
            best_so_far: values[best_idx],
        });
        if stale >= config.patience && points.len() > config.n_initial {
            break;
        }
    }
    Ok(SearchResult {
        best_config: trace[best_idx].config.clone(),
        best_value: values[best_idx],
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> SearchSpace {
        SearchSpace::new().with(
            "x",
            ParamSpec::Continuous {
                lo: 0.0,
                hi: 1.0,
                log: false,
            },
        )
    }

    #[test]
    fn constant_objective_stops_after_probes_plus_patience() {
        let cfg = BayesOptConfig {
            patience: 10,
            max_evals: 500,
            n_candidates: 64,
            ..BayesOptConfig::default()
        };
        let r = bayes_opt(|_| 1.0, &unit(), &cfg, 3).unwrap();
        assert_eq!(r.trace.len(), 18);
        assert_eq!(r.best_config, r.trace[0].config);
    }

    #[test]
    fn decode_ranges() {
        let p = ParamSpec::Integer { lo: 2, hi: 4 };
        assert_eq!(p.decode(0.0), 2.0);
        assert_eq!(p.decode(0.5), 3.0);
        assert_eq!(p.decode(1.0), 4.0);
        let l = ParamSpec::Continuous {
            lo: 1e-4,
            hi: 1e-2,
            log: true,
        };
        assert!((l.decode(0.5) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn invalid_space_rejected() {
        assert!(bayes_opt(|_| 0.0, &SearchSpace::new(), &BayesOptConfig::default(), 0).is_err());
        let bad = SearchSpace::new().with("k", ParamSpec::Integer { lo: 3, hi: 3 });
        assert!(bad.validate().is_err());
    }

    #[test]
    fn respects_max_evals() {
        let cfg = BayesOptConfig {
            max_evals: 12,
            n_candidates: 32,
            ..BayesOptConfig::default()
        };
        let mut calls = 0;
        let r = bayes_opt(
            |c| {
                calls += 1;
                c["x"]
            },
            &unit(),
            &cfg,
            1,
        )
        .unwrap();
        assert_eq!(calls, 12);
        assert_eq!(r.trace.len(), 12);
    }
}
