//! Linear critic features `phi: S -> R^m` with `||phi(s)|| <= 1`.

use nalgebra::DVectorView;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Column `s` of an `m x n_states` matrix is `phi(s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    columns: Mat,
}

/// Serialized feature spec used by configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureSpec {
    /// `e_s` for every state except `anchor`, which maps to zero.
    AnchoredOneHot {
        #[serde(default)]
        anchor: Option<usize>,
    },
    /// `e_s` for every state (spans constants; the critic system is singular).
    OneHot {},
    /// No value features; only the average-value tracker is learned.
    Empty {},
    /// Explicit rows: `m` rows of length `n_states`.
    Dense { rows: Vec<Vec<f64>> },
}

impl FeatureSpec {
    pub fn build(&self, n_states: usize) -> Result<FeatureMap> {
        match self {
            FeatureSpec::AnchoredOneHot { anchor } => {
                FeatureMap::anchored_one_hot(n_states, anchor.unwrap_or(n_states.saturating_sub(1)))
            }
            FeatureSpec::OneHot {} => Ok(FeatureMap::one_hot(n_states)),
            FeatureSpec::Empty {} => Ok(FeatureMap::empty(n_states)),
            FeatureSpec::Dense { rows } => {
                if rows.iter().any(|r| r.len() != n_states) {
                    return Err(Error::config(format!(
                        "dense critic features need rows of length {n_states}"
                    )));
                }
                FeatureMap::new(Mat::from_fn(rows.len(), n_states, |i, j| rows[i][j]))
            }
        }
    }
}

impl FeatureMap {
    pub fn new(columns: Mat) -> Result<Self> {
        for (s, col) in columns.column_iter().enumerate() {
            if col.iter().any(|x| !x.is_finite()) {
                return Err(Error::config(format!("phi({s}) has non-finite entries")));
            }
            if col.norm() > 1.0 + 1e-12 {
                return Err(Error::config(format!(
                    "||phi({s})|| = {} exceeds 1",
                    col.norm()
                )));
            }
        }
        Ok(FeatureMap { columns })
    }

    pub fn one_hot(n_states: usize) -> Self {
        FeatureMap {
            columns: Mat::identity(n_states, n_states),
        }
    }

    /// One-hot basis with one state pinned to zero. It represents every value
    /// function up to an additive constant without spanning the constants.
    pub fn anchored_one_hot(n_states: usize, anchor: usize) -> Result<Self> {
        if anchor >= n_states {
            return Err(Error::config(format!("anchor {anchor} out of range")));
        }
        let mut columns = Mat::zeros(n_states - 1, n_states);
        for s in 0..n_states {
            if s != anchor {
                columns[(if s < anchor { s } else { s - 1 }, s)] = 1.0;
            }
        }
        Ok(FeatureMap { columns })
    }

    pub fn constant(n_states: usize) -> Self {
        FeatureMap {
            columns: Mat::from_element(1, n_states, 1.0),
        }
    }

    pub fn empty(n_states: usize) -> Self {
        FeatureMap {
            columns: Mat::zeros(0, n_states),
        }
    }

    /// Feature dimension `m`.
    pub fn dim(&self) -> usize {
        self.columns.nrows()
    }

    pub fn n_states(&self) -> usize {
        self.columns.ncols()
    }

    #[inline]
    pub fn phi(&self, s: usize) -> DVectorView<'_, f64> {
        self.columns.column(s)
    }

    pub fn matrix(&self) -> &Mat {
        &self.columns
    }
}
