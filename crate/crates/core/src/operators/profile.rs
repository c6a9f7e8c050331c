use std::f64::consts::PI;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{GridSpec, OperatorError};

/// Closed-form initial condition `y0(xi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialProfile {
    /// One of `allen-cahn`, `burgers`, `kdv`.
    Preset {
        name: String,
    },
    Constant {
        value: f64,
    },
    /// `amplitude * sin(frequency * xi + phase)`
    Sin {
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `amplitude * cos(frequency * xi + phase)`
    Cos {
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `chi_[lo, hi]`
    Indicator {
        lo: f64,
        hi: f64,
    },
    Sum {
        terms: Vec<InitialProfile>,
    },
    Product {
        factors: Vec<InitialProfile>,
    },
}

impl InitialProfile {
    pub fn preset(name: &str) -> Self {
        InitialProfile::Preset { name: name.to_string() }
    }

    /// Rewrites a named preset into its closed form.
    pub fn expand(&self) -> Result<InitialProfile, OperatorError> {
        use InitialProfile::*;
        let InitialProfile::Preset { name } = self else {
            return Ok(self.clone());
        };
        let expr = match name.as_str() {
            // 0.2 sin(pi xi)
            "allen-cahn" => Sin { amplitude: 0.2, frequency: PI, phase: 0.0 },
            // sin(pi xi) chi_[0,1]
            "burgers" => Product {
                factors: vec![Sin { amplitude: 1.0, frequency: PI, phase: 0.0 }, Indicator { lo: 0.0, hi: 1.0 }],
            },
            // chi_[0,6] (cos(pi/3 (xi - 3)) + 1)
            "kdv" => Product {
                factors: vec![
                    Indicator { lo: 0.0, hi: 6.0 },
                    Sum {
                        terms: vec![Cos { amplitude: 1.0, frequency: PI / 3.0, phase: -PI }, Constant { value: 1.0 }],
                    },
                ],
            },
            other => return Err(OperatorError::UnknownPreset(other.to_string())),
        };
        Ok(expr)
    }

    pub fn eval(&self, xi: f64) -> Result<f64, OperatorError> {
        use InitialProfile::*;
        Ok(match self {
            Preset { .. } => self.expand()?.eval(xi)?,
            Constant { value } => *value,
            Sin { amplitude, frequency, phase } => amplitude * (frequency * xi + phase).sin(),
            Cos { amplitude, frequency, phase } => amplitude * (frequency * xi + phase).cos(),
            Indicator { lo, hi } => {
                if xi >= *lo && xi <= *hi {
                    1.0
                } else {
                    0.0
                }
            }
            Sum { terms } => {
                let mut s = 0.0;
                for t in terms {
                    s += t.eval(xi)?;
                }
                s
            }
            Product { factors } => {
                let mut p = 1.0;
                for f in factors {
                    p *= f.eval(xi)?;
                }
                p
            }
        })
    }
}

/// Samples the profile on the grid; Dirichlet entries are forced to zero.
pub fn eval_initial(profile: &InitialProfile, grid: &GridSpec) -> Result<DVector<f64>, OperatorError> {
    let expanded = profile.expand()?;
    let mut x = DVector::zeros(grid.len());
    for i in grid.interior() {
        x[i] = expanded.eval(grid.point(i))?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn preset_point_values() {
        let ac = InitialProfile::preset("allen-cahn");
        assert_relative_eq!(ac.eval(0.5).unwrap(), 0.2, epsilon = 1e-15);
        let burgers = InitialProfile::preset("burgers");
        assert_eq!(burgers.eval(-0.5).unwrap(), 0.0);
        assert_relative_eq!(burgers.eval(0.5).unwrap(), 1.0, epsilon = 1e-15);
        let kdv = InitialProfile::preset("kdv");
        assert_relative_eq!(kdv.eval(3.0).unwrap(), 2.0, epsilon = 1e-15);
        assert_eq!(kdv.eval(-1.0).unwrap(), 0.0);
    }

    #[test]
    fn boundary_entries_are_zero() {
        for (name, a, b, dx) in
            [("allen-cahn", 0.0, 1.0, 0.01), ("burgers", -1.5, 1.5, 0.025), ("kdv", -10.0, 7.0, 0.1)]
        {
            let g = GridSpec::new(a, b, dx).unwrap();
            let x = eval_initial(&InitialProfile::preset(name), &g).unwrap();
            assert_eq!(x[0], 0.0);
            assert_eq!(x[g.len() - 1], 0.0);
        }
        // a profile that does not vanish at the ends still gets pinned
        let g = GridSpec::new(0.0, 1.0, 0.1).unwrap();
        let x = eval_initial(&InitialProfile::Constant { value: 3.0 }, &g).unwrap();
        assert_eq!(x[0], 0.0);
        assert_eq!(x[5], 3.0);
    }

    #[test]
    fn unknown_preset() {
        let g = GridSpec::new(0.0, 1.0, 0.1).unwrap();
        assert_eq!(eval_initial(&InitialProfile::preset("heat"), &g), Err(OperatorError::UnknownPreset("heat".into())));
    }

    #[test]
    fn toml_shape() {
        let p: InitialProfile = toml::from_str(
            r#"
            kind = "product"
            factors = [
                { kind = "sin", amplitude = 2.0, frequency = 1.0 },
                { kind = "indicator", lo = 0.0, hi = 1.0 },
            ]
            "#,
        )
        .unwrap();
        assert_relative_eq!(p.eval(0.5).unwrap(), 2.0 * 0.5f64.sin(), epsilon = 1e-15);
    }
}
