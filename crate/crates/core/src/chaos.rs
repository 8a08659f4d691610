//! Hénon-type discrete map and the logistic map.
//!
//! The map iterated here is
//!
//! ```text
//! x' = y
//! y' = x + a1·x² + a2·y² − a3·x·y − a4
//! ```
//!
//! Only the `y` coordinate is ever clamped: when enabled, any `y'` with
//! `|y'| > 10` is replaced by `1` before it is stored or fed forward.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of discarded transient steps used by methods that skip the transient.
pub const PRELIMINARY_ITERATIONS: usize = 10_000;

/// Magnitude above which a clamped iterate is reset.
pub const CLAMP_LIMIT: f64 = 10.0;

/// Value substituted for an iterate that exceeds [`CLAMP_LIMIT`].
pub const CLAMP_VALUE: f64 = 1.0;

/// One reservoir configuration of the map: four coefficients, two
/// initial-condition constants and the iteration flags.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapParams {
    /// Initial-condition constant (x₀ for constant init, sine amplitude otherwise).
    pub a: f64,
    /// Initial-condition constant (y₀ for constant init, sine period divisor otherwise).
    pub b: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    pub clamp_enabled: bool,
    pub preliminary_iterations: usize,
}

impl MapParams {
    pub fn new(a: f64, b: f64, a1: f64, a2: f64, a3: f64, a4: f64) -> Self {
        Self {
            a,
            b,
            a1,
            a2,
            a3,
            a4,
            clamp_enabled: false,
            preliminary_iterations: 0,
        }
    }

    /// Parameters used for the bifurcation and entropy studies:
    /// A = −0.81, B = 0.51, a2 = 1, a3 = 1.51, a4 = 0.74, with the given a1.
    pub fn reference(a1: f64) -> Self {
        Self::new(-0.81, 0.51, a1, 1.0, 1.51, 0.74)
    }

    /// Builds parameters from a search vector ordered (A, B, a1, a2, a3, a4).
    pub fn from_vector(v: &[f64]) -> Result<Self> {
        match v {
            [a, b, a1, a2, a3, a4] => Ok(Self::new(*a, *b, *a1, *a2, *a3, *a4)),
            _ => Err(Error::Shape {
                expected: "6 map parameters".into(),
                found: format!("{} values", v.len()),
            }),
        }
    }

    pub fn to_vector(&self) -> [f64; 6] {
        [self.a, self.b, self.a1, self.a2, self.a3, self.a4]
    }

    pub fn with_clamp(mut self, enabled: bool) -> Self {
        self.clamp_enabled = enabled;
        self
    }

    pub fn with_preliminary(mut self, iterations: usize) -> Self {
        self.preliminary_iterations = iterations;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.to_vector().iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "map parameters must be finite: {:?}",
                self.to_vector()
            )));
        }
        if self.preliminary_iterations != 0 && self.preliminary_iterations != PRELIMINARY_ITERATIONS
        {
            return Err(Error::InvalidArgument(format!(
                "preliminary iterations must be 0 or {PRELIMINARY_ITERATIONS}, got {}",
                self.preliminary_iterations
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapState {
    pub x: f64,
    pub y: f64,
}

impl MapState {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// One application of the map, with the clamp applied to `y'` when enabled.
/// The result may be non-finite; [`Orbit`] turns that into an error.
#[inline]
pub fn henon_step(state: MapState, params: &MapParams) -> MapState {
    let MapState { x, y } = state;
    let mut next_y = x + params.a1 * x * x + params.a2 * y * y - params.a3 * x * y - params.a4;
    if params.clamp_enabled && next_y.abs() > CLAMP_LIMIT {
        next_y = CLAMP_VALUE;
    }
    MapState { x: y, y: next_y }
}

/// Checked map step. `index` is the 1-based iterate number reported on overflow.
#[inline]
pub fn checked_step(state: MapState, params: &MapParams, index: u64) -> Result<MapState> {
    let next = henon_step(state, params);
    if next.is_finite() {
        Ok(next)
    } else {
        Err(Error::Overflow { index })
    }
}

/// A running orbit of the map that counts its iterates.
#[derive(Debug, Clone)]
pub struct Orbit {
    params: MapParams,
    state: MapState,
    index: u64,
}

impl Orbit {
    pub fn new(params: MapParams, x0: f64, y0: f64) -> Self {
        Self {
            params,
            state: MapState::new(x0, y0),
            index: 0,
        }
    }

    /// Starts at (x0, y0) and discards `params.preliminary_iterations` steps.
    pub fn settled(params: MapParams, x0: f64, y0: f64) -> Result<Self> {
        let mut orbit = Self::new(params, x0, y0);
        for _ in 0..params.preliminary_iterations {
            orbit.advance()?;
        }
        Ok(orbit)
    }

    pub fn advance(&mut self) -> Result<MapState> {
        self.index += 1;
        self.state = checked_step(self.state, &self.params, self.index)?;
        Ok(self.state)
    }

    #[inline]
    pub fn next_y(&mut self) -> Result<f64> {
        self.advance().map(|s| s.y)
    }

    pub fn state(&self) -> MapState {
        self.state
    }

    /// Number of steps taken so far, transient included.
    pub fn steps(&self) -> u64 {
        self.index
    }
}

/// Runs the transient, then records the next `count` y-iterates.
pub fn iterate_series(params: &MapParams, x0: f64, y0: f64, count: usize) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(Error::InvalidArgument(
            "series length must be at least 1".into(),
        ));
    }
    let mut orbit = Orbit::settled(*params, x0, y0)?;
    (0..count).map(|_| orbit.next_y()).collect()
}

#[inline]
pub fn logistic_step(x: f64, r: f64) -> f64 {
    r * x * (1.0 - x)
}
