//! Value plus input derivatives in normalized coordinates.

use serde::{Deserialize, Serialize};

/// `(u, ∂u/∂z̄, ∂²u/∂z̄², ∂u/∂t̄)` at one point.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Jet {
    pub v: f64,
    pub dz: f64,
    pub dzz: f64,
    pub dt: f64,
}

impl Jet {
    /// Seed for the depth input.
    pub fn depth(zbar: f64) -> Self {
        Self { v: zbar, dz: 1.0, dzz: 0.0, dt: 0.0 }
    }

    /// Seed for the time input.
    pub fn time(tbar: f64) -> Self {
        Self { v: tbar, dz: 0.0, dzz: 0.0, dt: 1.0 }
    }

    pub fn constant(v: f64) -> Self {
        Self { v, ..Self::default() }
    }

    pub fn is_finite(&self) -> bool {
        self.v.is_finite() && self.dz.is_finite() && self.dzz.is_finite() && self.dt.is_finite()
    }

    pub fn scale(self, a: f64) -> Self {
        Self { v: a * self.v, dz: a * self.dz, dzz: a * self.dzz, dt: a * self.dt }
    }

    pub fn add(self, o: Self) -> Self {
        Self { v: self.v + o.v, dz: self.dz + o.dz, dzz: self.dzz + o.dzz, dt: self.dt + o.dt }
    }

    pub fn tanh(self) -> Self {
        let a = self.v.tanh();
        let s = 1.0 - a * a;
        Self { v: a, dz: s * self.dz, dzz: s * self.dzz - 2.0 * a * s * self.dz * self.dz, dt: s * self.dt }
    }
}
