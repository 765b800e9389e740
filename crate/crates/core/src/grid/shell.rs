use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_VARIABLES: [&str; 4] = ["temperature", "v_x", "v_y", "v_z"];

/// Min/max of one variable before normalization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarStats {
    pub min: f64,
    pub max: f64,
    /// Set when the variable was constant; it then normalizes to 0.5.
    #[serde(default)]
    pub degenerate: bool,
}

impl VarStats {
    pub fn new(min: f64, max: f64) -> Self {
        Self {
            min,
            max,
            degenerate: max <= min,
        }
    }

    pub fn range(&self) -> f64 {
        self.max - self.min
    }
}

/// A 4-D field (variable × radial × latitude × longitude) on an
/// equirectangular shell grid. Longitude is circular.
#[derive(Clone, Debug, PartialEq)]
pub struct ShellGrid<T> {
    variables: Vec<String>,
    timestep: u64,
    /// Present once the values have been mapped into `[0, 1]`.
    stats: Option<Vec<VarStats>>,
    values: Tensor<T>,
}

impl<T: Scalar> ShellGrid<T> {
    pub fn new(variables: Vec<String>, timestep: u64, values: Tensor<T>) -> Result<Self> {
        let [v, ..] = values.dims4()?;
        if v != variables.len() {
            return shape_err(format!(
                "{} variable names for {v} variable planes",
                variables.len()
            ));
        }
        Ok(Self {
            variables,
            timestep,
            stats: None,
            values,
        })
    }

    pub fn with_stats(mut self, stats: Option<Vec<VarStats>>) -> Result<Self> {
        if let Some(s) = &stats {
            if s.len() != self.variables.len() {
                return shape_err(format!(
                    "{} stats entries for {} variables",
                    s.len(),
                    self.variables.len()
                ));
            }
        }
        self.stats = stats;
        Ok(self)
    }

    /// Default variable names for `v` variables.
    pub fn default_names(v: usize) -> Vec<String> {
        (0..v)
            .map(|i| {
                DEFAULT_VARIABLES
                    .get(i)
                    .map(|s| s.to_string())
                    .unwrap_or_else(|| format!("var{i}"))
            })
            .collect()
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn timestep(&self) -> u64 {
        self.timestep
    }

    pub fn set_timestep(&mut self, t: u64) {
        self.timestep = t;
    }

    pub fn stats(&self) -> Option<&[VarStats]> {
        self.stats.as_deref()
    }

    pub fn values(&self) -> &Tensor<T> {
        &self.values
    }

    pub fn into_values(self) -> Tensor<T> {
        self.values
    }

    /// `[V, R, H, W]`.
    pub fn dims(&self) -> [usize; 4] {
        self.values.dims4().expect("shell grids are rank 4")
    }

    pub fn var_count(&self) -> usize {
        self.dims()[0]
    }

    pub fn radial_count(&self) -> usize {
        self.dims()[1]
    }

    pub fn lat(&self) -> usize {
        self.dims()[2]
    }

    pub fn lon(&self) -> usize {
        self.dims()[3]
    }

    /// Same metadata, new values (shape may differ except in V).
    pub fn with_values(&self, values: Tensor<T>) -> Result<Self> {
        let [v, ..] = values.dims4()?;
        if v != self.variables.len() {
            return shape_err(format!(
                "replacement values carry {v} variables, expected {}",
                self.variables.len()
            ));
        }
        Ok(Self {
            variables: self.variables.clone(),
            timestep: self.timestep,
            stats: self.stats.clone(),
            values,
        })
    }

    /// One `lat × lon` layer.
    pub fn layer(&self, var: usize, radial: usize) -> &[T] {
        let [_, r, h, w] = self.dims();
        let off = (var * r + radial) * h * w;
        &self.values.data()[off..off + h * w]
    }

    /// All values of one variable.
    pub fn variable(&self, var: usize) -> &[T] {
        let [_, r, h, w] = self.dims();
        let n = r * h * w;
        &self.values.data()[var * n..(var + 1) * n]
    }
}
