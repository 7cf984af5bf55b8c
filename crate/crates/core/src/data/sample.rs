use serde::{Deserialize, Serialize};

use crate::dynamics::{InterfaceInput, State, N_STATES};
use crate::error::{Error, Result};

/// One supervised triplet: branch inputs `(x_n, sensors, offsets)`, trunk
/// input `h`, and the operator label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSample {
    pub x: State,
    pub y_sensors: Vec<InterfaceInput>,
    /// Sensor offsets relative to `t_n`; the first is always 0.
    pub sensor_locs: Vec<f64>,
    pub h: f64,
    pub label: [f64; N_STATES],
}

impl DatasetSample {
    pub fn n_sensors(&self) -> usize {
        self.y_sensors.len()
    }

    pub fn validate(&self, max_step: f64) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(format!("dataset sample: {m}")));
        if !(self.h > 0.0 && self.h <= max_step + 1e-12) {
            return bad("h outside (0, max_step]");
        }
        if self.y_sensors.is_empty() || self.y_sensors.len() != self.sensor_locs.len() {
            return bad("sensor values and offsets must be non-empty and aligned");
        }
        if self.sensor_locs[0] != 0.0 {
            return bad("first sensor offset must be 0");
        }
        if self.sensor_locs.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("sensor offsets must increase strictly");
        }
        if *self.sensor_locs.last().unwrap() > self.h {
            return bad("sensor offset beyond the step");
        }
        if !self.x.is_finite()
            || self.y_sensors.iter().any(|y| !y.is_finite())
            || self.label.iter().any(|v| !v.is_finite())
        {
            return bad("non-finite value");
        }
        Ok(())
    }
}
