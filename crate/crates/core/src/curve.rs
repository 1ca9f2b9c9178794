//! Values sampled on an increasing grid of states.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::interp_linear;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CurveKind {
    /// principal value W
    PrincipalValue,
    /// agent value v
    AgentValue,
    /// mixing intensity a
    Policy,
    /// expected performance
    ExpectedPerformance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Axis {
    Belief,
    LogOdds,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValueCurve {
    pub kind: CurveKind,
    pub axis: Axis,
    pub states: Vec<f64>,
    pub values: Vec<f64>,
    /// Central differences inside, one-sided at the ends.
    pub derivatives: Vec<f64>,
}

impl ValueCurve {
    pub fn new(kind: CurveKind, axis: Axis, states: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if states.len() != values.len() || states.len() < 2 {
            return Err(Error::InvalidParams("curve needs matching state/value vectors of length >= 2".into()));
        }
        if states.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParams("curve states must be strictly increasing".into()));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParams(format!("curve value at index {bad} is not finite")));
        }
        let n = states.len();
        let mut derivatives = vec![0.0; n];
        derivatives[0] = (values[1] - values[0]) / (states[1] - states[0]);
        derivatives[n - 1] = (values[n - 1] - values[n - 2]) / (states[n - 1] - states[n - 2]);
        for i in 1..n - 1 {
            derivatives[i] = (values[i + 1] - values[i - 1]) / (states[i + 1] - states[i - 1]);
        }
        Ok(ValueCurve {
            kind,
            axis,
            states,
            values,
            derivatives,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Linear interpolation, clamped to the end values outside the grid.
    pub fn at(&self, x: f64) -> f64 {
        interp_linear(&self.states, &self.values, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_grids() {
        assert!(ValueCurve::new(CurveKind::Policy, Axis::Belief, vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(ValueCurve::new(CurveKind::Policy, Axis::Belief, vec![0.0, 1.0], vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn derivatives_exact_for_quadratic_interior() {
        let xs: Vec<f64> = (0..11).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let c = ValueCurve::new(CurveKind::PrincipalValue, Axis::Belief, xs.clone(), ys).unwrap();
        for i in 1..10 {
            assert!((c.derivatives[i] - 2.0 * xs[i]).abs() < 1e-12);
        }
        assert!((c.at(0.25) - 0.065).abs() < 1e-12);
    }
}
