//! Chaotic input-weight matrix W₁ (P × 785) and the reservoir transform
//! `S_h = f_h(W₁ · Y)`.
//!
//! W₁ can be materialized once, or regenerated entry by entry from the map
//! parameters while the product is accumulated ("streaming"). Streaming keeps
//! only the map parameters, the map state and P accumulators.

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::chaos::{checked_step, MapParams, MapState, Orbit, PRELIMINARY_ITERATIONS};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const IMAGE_SIDE: usize = 28;
pub const PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
/// 784 pixels plus the bias slot at index 0.
pub const INPUT_DIM: usize = PIXELS + 1;

/// y₀ used for every column of the sine-initialized methods.
pub const SINE_Y0: f64 = 0.51;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitKind {
    Sine,
    Constant,
}

/// The six matrix construction methods.
///
/// | id | init     | transient skipped | clamp |
/// |----|----------|-------------------|-------|
/// | 1  | sine     | –                 | no    |
/// | 2  | sine     | –                 | yes   |
/// | 3  | constant | yes               | yes   |
/// | 4  | constant | yes               | no    |
/// | 5  | constant | no                | yes   |
/// | 6  | constant | no                | no    |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum FillMethod {
    Method1,
    Method2,
    Method3,
    Method4,
    Method5,
    Method6,
}

impl FillMethod {
    pub const ALL: [FillMethod; 6] = [
        FillMethod::Method1,
        FillMethod::Method2,
        FillMethod::Method3,
        FillMethod::Method4,
        FillMethod::Method5,
        FillMethod::Method6,
    ];

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            1 => Ok(Self::Method1),
            2 => Ok(Self::Method2),
            3 => Ok(Self::Method3),
            4 => Ok(Self::Method4),
            5 => Ok(Self::Method5),
            6 => Ok(Self::Method6),
            _ => Err(Error::InvalidArgument(format!(
                "fill method must be 1-6, got {id}"
            ))),
        }
    }

    pub fn id(self) -> u8 {
        match self {
            Self::Method1 => 1,
            Self::Method2 => 2,
            Self::Method3 => 3,
            Self::Method4 => 4,
            Self::Method5 => 5,
            Self::Method6 => 6,
        }
    }

    pub fn init_kind(self) -> InitKind {
        match self {
            Self::Method1 | Self::Method2 => InitKind::Sine,
            _ => InitKind::Constant,
        }
    }

    pub fn uses_preliminary(self) -> bool {
        matches!(self, Self::Method3 | Self::Method4)
    }

    pub fn uses_clamp(self) -> bool {
        matches!(self, Self::Method2 | Self::Method3 | Self::Method5)
    }

    /// Copies the method's clamp and transient flags onto `params`.
    pub fn apply(self, params: MapParams) -> MapParams {
        let preliminary = if self.uses_preliminary() {
            PRELIMINARY_ITERATIONS
        } else {
            0
        };
        params
            .with_clamp(self.uses_clamp())
            .with_preliminary(preliminary)
    }
}

impl TryFrom<u8> for FillMethod {
    type Error = Error;

    fn try_from(id: u8) -> Result<Self> {
        Self::from_id(id)
    }
}

impl From<FillMethod> for u8 {
    fn from(m: FillMethod) -> u8 {
        m.id()
    }
}

impl std::fmt::Display for FillMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Method {}", self.id())
    }
}

/// Direction in which the first matrix row is written by snake filling.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnakeStart {
    #[default]
    LeftToRight,
    RightToLeft,
}

impl SnakeStart {
    /// Whether row `row` (0-based) is written left to right.
    #[inline]
    pub fn forward(self, row: usize) -> bool {
        row.is_multiple_of(2) == (self == SnakeStart::LeftToRight)
    }
}

/// Pixel traversal that turns a 28×28 image into slots 1–784 of the input vector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Traversal {
    #[default]
    RowMajor,
}

/// Post-projection activation `f_h`.
///
/// Both variants first min-max normalize each neuron to `[0, 1]` with
/// statistics fitted on the training set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// Normalized value shifted to `[-0.5, 0.5]`.
    #[default]
    MinMaxCentered,
    /// Logistic sigmoid of the normalized value.
    MinMaxSigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReservoirConfig {
    pub method: FillMethod,
    /// Map parameters; clamp and transient flags always follow `method`.
    pub params: MapParams,
    /// Number of reservoir neurons (rows of W₁).
    pub neurons: usize,
    #[serde(default)]
    pub snake: SnakeStart,
    #[serde(default)]
    pub traversal: Traversal,
    #[serde(default)]
    pub activation: Activation,
}

impl ReservoirConfig {
    pub fn new(method: FillMethod, params: MapParams, neurons: usize) -> Self {
        Self {
            method,
            params: method.apply(params),
            neurons,
            snake: SnakeStart::default(),
            traversal: Traversal::default(),
            activation: Activation::default(),
        }
    }

    pub fn input_dim(&self) -> usize {
        INPUT_DIM
    }

    pub fn validate(&self) -> Result<()> {
        if self.neurons == 0 {
            return Err(Error::InvalidArgument(
                "reservoir needs at least one neuron".into(),
            ));
        }
        if self.method.apply(self.params) != self.params {
            return Err(Error::InvalidArgument(format!(
                "map flags (clamp {}, preliminary {}) do not match {}",
                self.params.clamp_enabled, self.params.preliminary_iterations, self.method
            )));
        }
        if self.method.init_kind() == InitKind::Sine && self.params.b == 0.0 {
            return Err(Error::InvalidArgument(
                "sine initialization needs B != 0".into(),
            ));
        }
        self.params.validate()
    }
}

/// Converts a 28×28 grid (row-major bytes) into the 785-slot input vector:
/// slot 0 is the bias 1, slots 1–784 are intensities scaled to `[0, 1]`.
pub fn flatten_image(pixels: &[u8], traversal: Traversal) -> Result<Vec<f64>> {
    if pixels.len() != PIXELS {
        return Err(Error::Shape {
            expected: format!("{IMAGE_SIDE}x{IMAGE_SIDE} image"),
            found: format!("{} pixels", pixels.len()),
        });
    }
    let mut out = Vec::with_capacity(INPUT_DIM);
    out.push(1.0);
    match traversal {
        Traversal::RowMajor => out.extend(pixels.iter().map(|&p| f64::from(p) / 255.0)),
    }
    Ok(out)
}

/// First-row value of the sine-initialized methods for column `col`.
#[inline]
pub fn sine_initial(params: &MapParams, col: usize) -> f64 {
    params.a * ((col as f64 / PIXELS as f64) * (PI / params.b)).sin()
}

/// Builds the full P × 785 weight matrix.
pub fn build_matrix(config: &ReservoirConfig) -> Result<Matrix> {
    config.validate()?;
    let rows = config.neurons;
    let mut w = Matrix::zeros(rows, INPUT_DIM);
    match config.method.init_kind() {
        InitKind::Constant => {
            let mut orbit = Orbit::settled(config.params, config.params.a, config.params.b)?;
            for r in 0..rows {
                let row = w.row_mut(r);
                if config.snake.forward(r) {
                    for slot in row.iter_mut() {
                        *slot = orbit.next_y()?;
                    }
                } else {
                    for slot in row.iter_mut().rev() {
                        *slot = orbit.next_y()?;
                    }
                }
            }
        }
        InitKind::Sine => {
            for col in 0..INPUT_DIM {
                let x0 = sine_initial(&config.params, col);
                w.set(0, col, x0);
                let mut state = MapState::new(x0, SINE_Y0);
                for r in 1..rows {
                    state = checked_step(state, &config.params, sine_index(r, col))?;
                    w.set(r, col, state.y);
                }
            }
        }
    }
    Ok(w)
}

fn sine_index(row: usize, col: usize) -> u64 {
    (row * INPUT_DIM + col) as u64
}

/// Materialized projection `W₁ · Y`, summed in ascending column order.
pub fn project(matrix: &Matrix, input: &[f64]) -> Result<Vec<f64>> {
    check_input(input)?;
    Ok((0..matrix.rows())
        .map(|r| {
            let mut acc = 0.0;
            for (w, y) in matrix.row(r).iter().zip(input) {
                acc += w * y;
            }
            acc
        })
        .collect())
}

/// Projects a raw 784-byte image. Produces exactly the bits of
/// `project(matrix, flatten_image(pixels))`; zero pixels are skipped since
/// they contribute an exact `±0` to each sum.
pub fn project_pixels(matrix: &Matrix, pixels: &[u8], out: &mut [f64]) {
    debug_assert_eq!(pixels.len(), PIXELS);
    debug_assert_eq!(out.len(), matrix.rows());
    let mut active: [(u16, f64); PIXELS] = [(0, 0.0); PIXELS];
    let mut n = 0;
    for (i, &p) in pixels.iter().enumerate() {
        if p != 0 {
            active[n] = (i as u16 + 1, f64::from(p) / 255.0);
            n += 1;
        }
    }
    let active = &active[..n];
    for (r, z) in out.iter_mut().enumerate() {
        let row = matrix.row(r);
        let mut acc = 0.0;
        acc += row[0] * 1.0;
        for &(col, y) in active {
            acc += row[col as usize] * y;
        }
        *z = acc;
    }
}

/// Streaming projection: W₁ entries are regenerated from the map in fill
/// order and folded straight into P accumulators.
pub fn project_streaming(config: &ReservoirConfig, input: &[f64]) -> Result<Vec<f64>> {
    config.validate()?;
    check_input(input)?;
    let rows = config.neurons;
    let mut acc = vec![0.0; rows];
    match config.method.init_kind() {
        InitKind::Constant => {
            let mut orbit = Orbit::settled(config.params, config.params.a, config.params.b)?;
            for (r, z) in acc.iter_mut().enumerate() {
                if config.snake.forward(r) {
                    for y in input {
                        *z += orbit.next_y()? * y;
                    }
                } else {
                    for y in input.iter().rev() {
                        *z += orbit.next_y()? * y;
                    }
                }
            }
        }
        InitKind::Sine => {
            for (col, y) in input.iter().enumerate() {
                let x0 = sine_initial(&config.params, col);
                acc[0] += x0 * y;
                let mut state = MapState::new(x0, SINE_Y0);
                for (r, z) in acc.iter_mut().enumerate().skip(1) {
                    state = checked_step(state, &config.params, sine_index(r, col))?;
                    *z += state.y * y;
                }
            }
        }
    }
    Ok(acc)
}

fn check_input(input: &[f64]) -> Result<()> {
    if input.len() != INPUT_DIM {
        return Err(Error::Shape {
            expected: format!("{INPUT_DIM}-element input"),
            found: format!("{} elements", input.len()),
        });
    }
    Ok(())
}

/// Per-neuron min/max of the pre-activations over a fitting set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalization {
    /// Fits statistics from pre-activation rows of width `neurons`.
    pub fn fit<'a>(neurons: usize, rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut min = vec![f64::INFINITY; neurons];
        let mut max = vec![f64::NEG_INFINITY; neurons];
        let mut seen = 0usize;
        for row in rows {
            if row.len() != neurons {
                return Err(Error::Shape {
                    expected: format!("{neurons} pre-activations"),
                    found: format!("{}", row.len()),
                });
            }
            for ((lo, hi), &z) in min.iter_mut().zip(max.iter_mut()).zip(row) {
                *lo = lo.min(z);
                *hi = hi.max(z);
            }
            seen += 1;
        }
        if seen == 0 {
            return Err(Error::InvalidArgument(
                "cannot fit normalization on an empty set".into(),
            ));
        }
        Ok(Self { min, max })
    }

    pub fn neurons(&self) -> usize {
        self.min.len()
    }

    /// Applies `f_h` in place.
    pub fn apply(&self, activation: Activation, z: &mut [f64]) {
        for ((v, lo), hi) in z.iter_mut().zip(&self.min).zip(&self.max) {
            let span = hi - lo;
            let u = if span > 0.0 { (*v - lo) / span } else { 0.0 };
            *v = match activation {
                Activation::MinMaxCentered => u - 0.5,
                Activation::MinMaxSigmoid => 1.0 / (1.0 + (-u).exp()),
            };
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionMode {
    Materialized,
    Streaming,
}

/// A reservoir configuration together with its fitted normalization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Reservoir {
    pub config: ReservoirConfig,
    pub normalization: Option<Normalization>,
    #[serde(skip)]
    matrix: OnceLock<Matrix>,
}

impl PartialEq for Reservoir {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.normalization == other.normalization
    }
}

impl Reservoir {
    pub fn new(config: ReservoirConfig) -> Self {
        Self {
            config,
            normalization: None,
            matrix: OnceLock::new(),
        }
    }

    /// The materialized W₁, built on first use.
    pub fn matrix(&self) -> Result<&Matrix> {
        if let Some(m) = self.matrix.get() {
            return Ok(m);
        }
        let built = build_matrix(&self.config)?;
        Ok(self.matrix.get_or_init(|| built))
    }

    pub fn pre_activation(&self, input: &[f64], mode: ProjectionMode) -> Result<Vec<f64>> {
        match mode {
            ProjectionMode::Materialized => project(self.matrix()?, input),
            ProjectionMode::Streaming => project_streaming(&self.config, input),
        }
    }

    /// Fits normalization statistics on pre-activation rows.
    pub fn fit<'a>(&mut self, rows: impl IntoIterator<Item = &'a [f64]>) -> Result<()> {
        self.normalization = Some(Normalization::fit(self.config.neurons, rows)?);
        Ok(())
    }

    pub fn normalization(&self) -> Result<&Normalization> {
        self.normalization
            .as_ref()
            .ok_or_else(|| Error::State("reservoir normalization has not been fitted".into()))
    }

    /// `S_h = f_h(W₁ · Y)`.
    pub fn transform(&self, input: &[f64], mode: ProjectionMode) -> Result<Vec<f64>> {
        let norm = self.normalization()?;
        let mut z = self.pre_activation(input, mode)?;
        norm.apply(self.config.activation, &mut z);
        Ok(z)
    }

    /// Normalized features for a batch of raw images, row-major `n × P`.
    pub fn features(&self, images: &[u8]) -> Result<Vec<f64>> {
        let mut z = self.pre_activations(images)?;
        let norm = self.normalization()?;
        for row in z.chunks_mut(self.config.neurons) {
            norm.apply(self.config.activation, row);
        }
        Ok(z)
    }

    /// Raw projections for a batch of images stored back to back (784 bytes each).
    pub fn pre_activations(&self, images: &[u8]) -> Result<Vec<f64>> {
        if !images.len().is_multiple_of(PIXELS) {
            return Err(Error::Shape {
                expected: format!("a multiple of {PIXELS} bytes"),
                found: format!("{} bytes", images.len()),
            });
        }
        let matrix = self.matrix()?;
        let p = self.config.neurons;
        let mut out = vec![0.0; images.len() / PIXELS * p];
        for (img, z) in images.chunks_exact(PIXELS).zip(out.chunks_exact_mut(p)) {
            project_pixels(matrix, img, z);
        }
        Ok(out)
    }
}
