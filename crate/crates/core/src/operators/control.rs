use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{GridSpec, OperatorError};

/// Spatial profile of one actuator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ControlColumn {
    Ones,
    /// `chi_[lo, hi]`
    Indicator {
        lo: f64,
        hi: f64,
    },
}

/// The actuator layout `B(xi)`, one column per control input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlOperator {
    pub columns: Vec<ControlColumn>,
}

impl ControlOperator {
    pub fn new(columns: Vec<ControlColumn>) -> Self {
        Self { columns }
    }

    pub fn inputs(&self) -> usize {
        self.columns.len()
    }
}

/// Realizes `B` on `grid` as a `d x m` matrix with zero boundary rows.
pub fn build_control(spec: &ControlOperator, grid: &GridSpec) -> Result<DMatrix<f64>, OperatorError> {
    if spec.columns.is_empty() {
        return Err(OperatorError::EmptyControl);
    }
    // grid points are a + i*dx, so allow for the rounding in that product
    let slack = 1e-9 * grid.dx();
    let d = grid.len();
    let mut b = DMatrix::zeros(d, spec.columns.len());
    for (k, column) in spec.columns.iter().enumerate() {
        match *column {
            ControlColumn::Ones => {
                for i in grid.interior() {
                    b[(i, k)] = 1.0;
                }
            }
            ControlColumn::Indicator { lo, hi } => {
                if !(lo <= hi && lo >= grid.a() - slack && hi <= grid.b() + slack) {
                    return Err(OperatorError::IntervalOutsideDomain { lo, hi, a: grid.a(), b: grid.b() });
                }
                for i in grid.interior() {
                    let xi = grid.point(i);
                    if xi >= lo - slack && xi <= hi + slack {
                        b[(i, k)] = 1.0;
                    }
                }
            }
        }
    }
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_ones_column() {
        let g = GridSpec::new(0.0, 1.0, 0.01).unwrap();
        let b = build_control(&ControlOperator::new(vec![ControlColumn::Ones]), &g).unwrap();
        assert_eq!(b.shape(), (101, 1));
        assert_eq!(b.sum(), 99.0);
        assert_eq!(b[(0, 0)], 0.0);
        assert_eq!(b[(100, 0)], 0.0);
    }

    #[test]
    fn indicator_on_kdv_grid() {
        let g = GridSpec::new(-10.0, 7.0, 0.1).unwrap();
        let spec = ControlOperator::new(vec![ControlColumn::Indicator { lo: 1.0, hi: 4.0 }]);
        let b = build_control(&spec, &g).unwrap();
        let on: Vec<usize> = (0..g.len()).filter(|&i| b[(i, 0)] == 1.0).collect();
        assert_eq!(on.len(), 31);
        assert_eq!(on.first(), Some(&110));
        assert_eq!(on.last(), Some(&140));
        assert!(b.iter().all(|v| *v == 0.0 || *v == 1.0));
    }

    #[test]
    fn two_indicator_columns() {
        let g = GridSpec::new(-1.5, 1.5, 0.025).unwrap();
        let spec = ControlOperator::new(vec![
            ControlColumn::Indicator { lo: 0.25, hi: 0.5 },
            ControlColumn::Indicator { lo: 0.75, hi: 1.0 },
        ]);
        let b = build_control(&spec, &g).unwrap();
        assert_eq!(b.ncols(), 2);
        assert_eq!(b.column(0).sum(), 11.0);
        assert_eq!(b.column(1).sum(), 11.0);
    }

    #[test]
    fn rejects_bad_specs() {
        let g = GridSpec::new(0.0, 1.0, 0.1).unwrap();
        assert_eq!(build_control(&ControlOperator::new(vec![]), &g), Err(OperatorError::EmptyControl));
        let outside = ControlOperator::new(vec![ControlColumn::Indicator { lo: 0.5, hi: 1.5 }]);
        assert!(matches!(build_control(&outside, &g), Err(OperatorError::IntervalOutsideDomain { .. })));
        let reversed = ControlOperator::new(vec![ControlColumn::Indicator { lo: 0.6, hi: 0.4 }]);
        assert!(build_control(&reversed, &g).is_err());
    }
}
