//! Factor-model panels with a known treatment effect.
//!
//! `Y_jt = L_j · F_t + noise`, where every loading vector starts with a 1 on a
//! shared common factor. Any affine combination of donor loadings is then again
//! a valid loading, so a treated unit built as a sum-to-one mix of donors is
//! reproduced exactly by the weight program.

use chrono::{Days, NaiveDate};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::Panel;
use crate::rng::XorShift64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FactorModelSpec {
    /// Treated unit plus donors.
    pub n_units: usize,
    pub n_blocks: usize,
    pub t0: usize,
    /// Including the common factor.
    pub n_factors: usize,
    /// Standard deviation of the generated factors.
    pub factor_scale: f64,
    /// AR(1) coefficient of the generated factors.
    pub factor_persistence: f64,
    pub noise_sd: f64,
    /// Added to the treated unit in every post block.
    pub injected_effect: f64,
    /// Treated loadings are a sum-to-one mix of donor loadings; otherwise they
    /// are drawn like a donor's.
    pub treated_in_span: bool,
    /// Optional `n_units × n_factors` loadings (row 0 = treated).
    pub loadings: Option<Vec<Vec<f64>>>,
    /// Optional `n_factors × n_blocks` factor paths.
    pub factors: Option<Vec<Vec<f64>>>,
    pub seed: u64,
    pub block_len_days: u32,
    pub intervention_date: NaiveDate,
    pub population: f64,
}

impl Default for FactorModelSpec {
    fn default() -> Self {
        Self {
            n_units: 21,
            n_blocks: 114,
            t0: 104,
            n_factors: 3,
            factor_scale: 10.0,
            factor_persistence: 0.8,
            noise_sd: 1.0,
            injected_effect: 0.0,
            treated_in_span: false,
            loadings: None,
            factors: None,
            seed: 1,
            block_len_days: 7,
            intervention_date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            population: 1_000_000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedPanel {
    pub panel: Panel,
    /// Effect added to the treated unit, per block.
    pub true_effect: Vec<f64>,
    /// Donor mix used for the treated loadings (panel donor order) when in span.
    pub treated_mix: Option<Vec<f64>>,
}

impl FactorModelSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.n_units < 3 {
            return bad(format!("need a treated unit and at least 2 donors, got {} units", self.n_units));
        }
        if self.t0 < 1 || self.t0 >= self.n_blocks {
            return bad(format!("need 1 <= t0 < n_blocks, got t0 = {}, n_blocks = {}", self.t0, self.n_blocks));
        }
        if self.n_factors < 1 {
            return bad("need at least the common factor".into());
        }
        if !(self.noise_sd >= 0.0) || !(self.factor_scale >= 0.0) || !self.injected_effect.is_finite() {
            return bad("noise_sd and factor_scale must be >= 0, effect finite".into());
        }
        if !(self.factor_persistence.abs() < 1.0) {
            return bad("factor_persistence must lie in (-1, 1)".into());
        }
        if self.block_len_days == 0 || !(self.population > 0.0) {
            return bad("block_len_days and population must be positive".into());
        }
        if let Some(l) = &self.loadings {
            if l.len() != self.n_units || l.iter().any(|r| r.len() != self.n_factors) {
                return bad("loadings must be n_units x n_factors".into());
            }
        }
        if let Some(f) = &self.factors {
            if f.len() != self.n_factors || f.iter().any(|r| r.len() != self.n_blocks) {
                return bad("factors must be n_factors x n_blocks".into());
            }
        }
        Ok(())
    }
}

/// Unit ids used for generated panels: `treated`, then `d01`, `d02`, ...
pub fn unit_names(n_units: usize) -> Vec<String> {
    std::iter::once("treated".to_string())
        .chain((1..n_units).map(|j| format!("d{j:02}")))
        .collect()
}

pub fn generate_panel(spec: &FactorModelSpec) -> Result<GeneratedPanel> {
    spec.validate()?;
    let mut rng = XorShift64::new(spec.seed);
    let (n, t, k) = (spec.n_units, spec.n_blocks, spec.n_factors);

    let factors = match &spec.factors {
        Some(f) => DMatrix::from_fn(k, t, |i, s| f[i][s]),
        None => {
            let phi = spec.factor_persistence;
            let innov = spec.factor_scale * (1.0 - phi * phi).sqrt();
            let mut f = DMatrix::zeros(k, t);
            for i in 0..k {
                let mut x = spec.factor_scale * rng.normal();
                for s in 0..t {
                    f[(i, s)] = x;
                    x = phi * x + innov * rng.normal();
                }
            }
            f
        }
    };

    let mut treated_mix = None;
    let loadings = match &spec.loadings {
        Some(l) => DMatrix::from_fn(n, k, |j, i| l[j][i]),
        None => {
            let mut l = DMatrix::zeros(n, k);
            for j in 0..n {
                l[(j, 0)] = 1.0;
                for i in 1..k {
                    l[(j, i)] = rng.normal();
                }
            }
            if spec.treated_in_span {
                let raw: Vec<f64> = (1..n).map(|_| 0.5 + rng.uniform()).collect();
                let total: f64 = raw.iter().sum();
                let mix: Vec<f64> = raw.iter().map(|u| u / total).collect();
                for i in 0..k {
                    l[(0, i)] = (1..n).map(|j| mix[j - 1] * l[(j, i)]).sum();
                }
                treated_mix = Some(mix);
            }
            l
        }
    };

    let signal = &loadings * &factors;
    let true_effect: Vec<f64> = (0..t)
        .map(|s| if s >= spec.t0 { spec.injected_effect } else { 0.0 })
        .collect();
    let mut rates = DMatrix::zeros(t, n);
    for j in 0..n {
        for s in 0..t {
            let noise = if spec.noise_sd > 0.0 {
                spec.noise_sd * rng.normal()
            } else {
                0.0
            };
            let effect = if j == 0 { true_effect[s] } else { 0.0 };
            rates[(s, j)] = signal[(j, s)] + noise + effect;
        }
    }

    let len = u64::from(spec.block_len_days);
    let first = spec.intervention_date - Days::new(len * spec.t0 as u64);
    let block_starts = (0..t).map(|s| first + Days::new(len * s as u64)).collect();
    let panel = Panel::from_rates(
        unit_names(n),
        block_starts,
        spec.block_len_days,
        spec.t0,
        rates,
        vec![spec.population; n],
    )?;
    Ok(GeneratedPanel {
        panel,
        true_effect,
        treated_mix,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_panel() {
        let spec = FactorModelSpec::default();
        assert_eq!(generate_panel(&spec).unwrap(), generate_panel(&spec).unwrap());
        let other = FactorModelSpec { seed: 2, ..spec.clone() };
        assert_ne!(generate_panel(&spec).unwrap().panel, generate_panel(&other).unwrap().panel);
    }

    #[test]
    fn in_span_treated_is_exact_mix() {
        let spec = FactorModelSpec {
            noise_sd: 0.0,
            treated_in_span: true,
            ..Default::default()
        };
        let g = generate_panel(&spec).unwrap();
        let mix = g.treated_mix.unwrap();
        assert!((mix.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let y = g.panel.y();
        for s in 0..spec.n_blocks {
            let combo: f64 = (1..spec.n_units).map(|j| mix[j - 1] * y[(s, j)]).sum();
            assert!((combo - y[(s, 0)]).abs() < 1e-9);
        }
    }

    #[test]
    fn effect_starts_at_first_post_block() {
        let spec = FactorModelSpec {
            injected_effect: 2.0,
            ..Default::default()
        };
        let g = generate_panel(&spec).unwrap();
        assert_eq!(g.true_effect[spec.t0 - 1], 0.0);
        assert_eq!(g.true_effect[spec.t0], 2.0);
        assert_eq!(g.panel.intervention_date(), spec.intervention_date);
    }

    #[test]
    fn rejects_bad_shapes() {
        let spec = FactorModelSpec {
            loadings: Some(vec![vec![1.0]; 2]),
            ..Default::default()
        };
        assert!(generate_panel(&spec).is_err());
        let spec = FactorModelSpec { t0: 114, ..Default::default() };
        assert!(generate_panel(&spec).is_err());
    }
}
