use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::baseline::PlantSpec;
use crate::blr::GaussianBelief;
use crate::integrate::{PlantMode, TimeGrid};
use crate::online::{Library, LoopConfig};
use crate::operators::{ControlColumn, ControlOperator, GridSpec, InitialProfile, LibraryTerm};
use crate::riccati::CostWeights;

pub const PRESET_NAMES: [&str; 3] = ["test1", "test2", "test3"];

/// Cost weights `Q = q_scale I`, `R = r_scale I`; `q_scale` defaults to the
/// grid spacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_scale: Option<f64>,
    pub r_scale: f64,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        Self { q_scale: None, r_scale: 0.01 }
    }
}

/// Gaussian prior `N(mean, cov_scale I)` over the active coefficients;
/// the mean defaults to all ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    pub cov_scale: f64,
}

/// A complete, self-describing experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Preset the file was derived from, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub seed: u64,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    pub plant: PlantSpec,
    #[serde(default)]
    pub weights: WeightsConfig,
    pub prior: PriorConfig,
    #[serde(default, rename = "loop")]
    pub loop_cfg: LoopConfig,
}

fn default_repetitions() -> usize {
    50
}

impl ExperimentConfig {
    /// One of `test1` (Allen-Cahn), `test2` (Burgers), `test3` (KdV).
    pub fn preset(name: &str) -> Result<Self, ExperimentError> {
        let (grid, mu_star, columns, profile, dt, t_end, cov_scale) = match name {
            "test1" => (
                GridSpec::new(0.0, 1.0, 0.01),
                [1.0, 0.0, 11.0, 0.0, -11.0, 0.0, 0.0],
                vec![ControlColumn::Ones],
                "allen-cahn",
                0.01,
                0.5,
                200_000.0,
            ),
            "test2" => (
                GridSpec::new(-1.5, 1.5, 0.025),
                [0.01, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
                vec![ControlColumn::Indicator { lo: 0.25, hi: 0.5 }, ControlColumn::Indicator { lo: 0.75, hi: 1.0 }],
                "burgers",
                0.025,
                2.0,
                1000.0,
            ),
            "test3" => (
                GridSpec::new(-10.0, 7.0, 0.1),
                [0.5, 0.0, 0.0, 0.0, 0.0, 6.0, -1.0],
                vec![ControlColumn::Indicator { lo: 1.0, hi: 4.0 }],
                "kdv",
                0.025,
                2.0,
                1000.0,
            ),
            other => return Err(ExperimentError::UnknownPreset(other.to_string())),
        };
        let plant = PlantSpec {
            grid: grid?,
            mu_star,
            control: ControlOperator::new(columns),
            initial: InitialProfile::preset(profile),
            time: TimeGrid::new(dt, t_end)?,
        };
        Ok(Self {
            preset: Some(name.to_string()),
            seed: 1,
            repetitions: default_repetitions(),
            plant,
            weights: WeightsConfig::default(),
            prior: PriorConfig { mean: None, cov_scale },
            loop_cfg: LoopConfig::default(),
        })
    }

    /// Parses a TOML document. When it names a `preset`, its other keys
    /// override the preset's values table by table.
    pub fn from_toml_str(text: &str) -> Result<Self, ExperimentError> {
        let user: toml::Table = toml::from_str(text)?;
        let merged = match user.get("preset") {
            Some(toml::Value::String(name)) => {
                let base = toml::Table::try_from(Self::preset(name)?)?;
                merge_tables(base, user)
            }
            Some(_) => return Err(ExperimentError::Config("`preset` must be a string".into())),
            None => user,
        };
        let cfg: Self = merged.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// The fully resolved configuration, defaults included.
    pub fn to_toml_string(&self) -> Result<String, ExperimentError> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.loop_cfg.validate()?;
        self.weights()?;
        self.prior()?;
        self.library()?;
        self.plant.initial_state()?;
        if self.repetitions == 0 {
            return Err(ExperimentError::Config("repetitions must be at least 1".into()));
        }
        Ok(())
    }

    pub fn weights(&self) -> Result<CostWeights, ExperimentError> {
        let q = self.weights.q_scale.unwrap_or(self.plant.grid.dx());
        Ok(CostWeights::scaled_identity(self.plant.grid.len(), q, self.plant.control.inputs(), self.weights.r_scale)?)
    }

    /// Prior over the active terms of `self.loop_cfg`.
    pub fn prior(&self) -> Result<GaussianBelief, ExperimentError> {
        self.prior_for(&self.loop_cfg.active_terms)
    }

    /// Prior restricted to `active`. An explicit mean must either list all
    /// seven coefficients or exactly the active ones.
    pub fn prior_for(&self, active: &[LibraryTerm]) -> Result<GaussianBelief, ExperimentError> {
        let mean = match &self.prior.mean {
            None => DVector::from_element(active.len(), 1.0),
            Some(m) if m.len() == active.len() => DVector::from_column_slice(m),
            Some(m) if m.len() == crate::operators::LIBRARY_SIZE => {
                DVector::from_iterator(active.len(), active.iter().map(|t| m[t.index() - 1]))
            }
            Some(m) => {
                return Err(ExperimentError::Config(format!(
                    "prior mean has {} entries for {} active terms",
                    m.len(),
                    active.len()
                )))
            }
        };
        Ok(GaussianBelief::isotropic(mean, self.prior.cov_scale)?)
    }

    pub fn library(&self) -> Result<Library, ExperimentError> {
        self.library_for(&self.loop_cfg.active_terms)
    }

    pub fn library_for(&self, active: &[LibraryTerm]) -> Result<Library, ExperimentError> {
        Ok(Library { grid: self.plant.grid.clone(), b: self.plant.b_matrix()?, active: active.to_vec() })
    }

    /// Loop settings for a variant run.
    pub fn loop_variant(&self, mode: PlantMode, active: &[LibraryTerm]) -> LoopConfig {
        LoopConfig { mode, active_terms: active.to_vec(), ..self.loop_cfg.clone() }
    }
}

/// Recursively overlays `over` on `base`; tables merge, everything else
/// (arrays included) is replaced.
fn merge_tables(mut base: toml::Table, over: toml::Table) -> toml::Table {
    for (key, value) in over {
        let merged = match (base.remove(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => toml::Value::Table(merge_tables(b, o)),
            (_, v) => v,
        };
        base.insert(key, merged);
    }
    base
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_toml() {
        for name in PRESET_NAMES {
            let cfg = ExperimentConfig::preset(name).unwrap();
            let text = cfg.to_toml_string().unwrap();
            assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg, "{name}");
        }
    }

    #[test]
    fn overrides_merge_into_preset() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            preset = "test2"
            seed = 7
            [loop]
            noise_level = 0.0
            active_terms = ["laplacian", "nonlinear-advection"]
            [prior]
            cov_scale = 10.0
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.loop_cfg.noise_level, 0.0);
        assert_eq!(cfg.loop_cfg.tol_mu, 1e-5);
        assert_eq!(cfg.prior.cov_scale, 10.0);
        assert_eq!(cfg.plant.mu_star[5], 1.0);
        assert_eq!(cfg.prior().unwrap().dim(), 2);
    }

    #[test]
    fn rejects_unknown_keys_and_presets() {
        assert!(ExperimentConfig::from_toml_str("preset = \"test9\"").is_err());
        assert!(ExperimentConfig::from_toml_str("preset = \"test1\"\nbogus = 1").is_err());
        assert!(ExperimentConfig::from_toml_str("preset = \"test1\"\n[loop]\ntol_mu = -1.0").is_err());
    }

    #[test]
    fn prior_mean_selection() {
        let mut cfg = ExperimentConfig::preset("test1").unwrap();
        cfg.prior.mean = Some(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        let p = cfg.prior_for(&[LibraryTerm::Laplacian, LibraryTerm::NonlinearAdvection]).unwrap();
        assert_eq!(p.mean().as_slice(), &[1.0, 6.0]);
        cfg.prior.mean = Some(vec![1.0; 3]);
        assert!(cfg.prior().is_err());
    }
}
