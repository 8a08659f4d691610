//! Trainable classifier on top of the reservoir: `784:P:N` (one layer, W₂)
//! or `784:P:H:N` (sigmoid hidden layer W₂, output layer W₃).
//!
//! Every weight matrix carries its bias in column 0, matching the bias slot of
//! the reservoir input. Outputs go through a normalized exponential and the
//! weights are trained with plain minibatch SGD on cross-entropy.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{LabeledDataset, CLASSES};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::reservoir::{flatten_image, ProjectionMode, Reservoir, ReservoirConfig, PIXELS};

pub const MODEL_FORMAT: &str = "lognet-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// Reservoir size P.
    pub reservoir: usize,
    /// Optional hidden layer size H.
    pub hidden: Option<usize>,
    /// Output classes N.
    pub classes: usize,
}

impl Architecture {
    pub fn single(reservoir: usize) -> Self {
        Self {
            reservoir,
            hidden: None,
            classes: CLASSES,
        }
    }

    pub fn with_hidden(reservoir: usize, hidden: usize) -> Self {
        Self {
            reservoir,
            hidden: Some(hidden),
            classes: CLASSES,
        }
    }

    /// Shape of W₂ as (rows, cols).
    pub fn w2_shape(&self) -> (usize, usize) {
        (self.hidden.unwrap_or(self.classes), self.reservoir + 1)
    }

    pub fn w3_shape(&self) -> Option<(usize, usize)> {
        self.hidden.map(|h| (self.classes, h + 1))
    }

    pub fn trainable_weights(&self) -> usize {
        let (r, c) = self.w2_shape();
        r * c + self.w3_shape().map_or(0, |(r, c)| r * c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.reservoir == 0 || self.classes < 2 || self.hidden == Some(0) {
            return Err(Error::InvalidArgument(format!(
                "invalid architecture {self}"
            )));
        }
        Ok(())
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.hidden {
            Some(h) => write!(f, "{PIXELS}:{}:{h}:{}", self.reservoir, self.classes),
            None => write!(f, "{PIXELS}:{}:{}", self.reservoir, self.classes),
        }
    }
}

impl FromStr for Architecture {
    type Err = Error;

    /// Parses `784:P:N` or `784:P:H:N`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split(':')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::InvalidArgument(format!("bad architecture {s:?}")))?;
        let arch = match parts[..] {
            [PIXELS, p, n] => Architecture {
                reservoir: p,
                hidden: None,
                classes: n,
            },
            [PIXELS, p, h, n] => Architecture {
                reservoir: p,
                hidden: Some(h),
                classes: n,
            },
            _ => return Err(Error::InvalidArgument(format!("bad architecture {s:?}"))),
        };
        arch.validate()?;
        Ok(arch)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 20,
            learning_rate: 0.1,
            batch_size: 64,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) || self.batch_size == 0 {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and non-negative, batch size positive: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs_run: usize,
    /// Mean cross-entropy of each epoch.
    pub epoch_losses: Vec<f64>,
}

#[inline]
fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Normalized exponential, computed in place with the max subtracted.
pub fn softmax(values: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in values.iter_mut() {
        *v /= sum;
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `out = W · [1, input]`.
#[inline]
fn affine(w: &Matrix, input: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        let row = w.row(r);
        let mut acc = row[0];
        for (wv, x) in row[1..].iter().zip(input) {
            acc += wv * x;
        }
        *o = acc;
    }
}

/// Trainable weights of the classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub w2: Matrix,
    pub w3: Option<Matrix>,
}

/// Which trainable matrix a weight index refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layer {
    W2,
    W3,
}

/// Gradients with the same layout as [`Classifier`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w2: Matrix,
    pub w3: Option<Matrix>,
}

impl Gradients {
    fn zeros_like(c: &Classifier) -> Self {
        Self {
            w2: Matrix::zeros(c.w2.rows(), c.w2.cols()),
            w3: c.w3.as_ref().map(|m| Matrix::zeros(m.rows(), m.cols())),
        }
    }

    fn clear(&mut self) {
        self.w2.as_mut_slice().fill(0.0);
        if let Some(m) = &mut self.w3 {
            m.as_mut_slice().fill(0.0);
        }
    }

    pub fn negated(&self) -> Self {
        let neg = |m: &Matrix| Matrix::from_fn(m.rows(), m.cols(), |r, c| -m.get(r, c));
        Self {
            w2: neg(&self.w2),
            w3: self.w3.as_ref().map(neg),
        }
    }
}

/// Scratch buffers for one forward/backward pass.
struct Scratch {
    hidden: Vec<f64>,
    probs: Vec<f64>,
    delta_hidden: Vec<f64>,
}

impl Scratch {
    fn new(arch: &Architecture) -> Self {
        Self {
            hidden: vec![0.0; arch.hidden.unwrap_or(0)],
            probs: vec![0.0; arch.classes],
            delta_hidden: vec![0.0; arch.hidden.unwrap_or(0)],
        }
    }
}

impl Classifier {
    pub fn zeros(arch: &Architecture) -> Self {
        let (r, c) = arch.w2_shape();
        Self {
            w2: Matrix::zeros(r, c),
            w3: arch.w3_shape().map(|(r, c)| Matrix::zeros(r, c)),
        }
    }

    /// Uniform in `[-0.5, 0.5] / sqrt(fan_in)`, fan-in counting the bias.
    pub fn random(arch: &Architecture, rng: &mut impl Rng) -> Self {
        let mut init = |rows: usize, cols: usize| {
            let scale = 1.0 / (cols as f64).sqrt();
            Matrix::from_fn(rows, cols, |_, _| (rng.random::<f64>() - 0.5) * scale)
        };
        let (r, c) = arch.w2_shape();
        let w2 = init(r, c);
        let w3 = arch.w3_shape().map(|(r, c)| init(r, c));
        Self { w2, w3 }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            reservoir: self.w2.cols() - 1,
            hidden: self.w3.as_ref().map(|_| self.w2.rows()),
            classes: self.w3.as_ref().map_or(self.w2.rows(), |m| m.rows()),
        }
    }

    fn weight_mut(&mut self, layer: Layer, idx: usize) -> &mut f64 {
        match layer {
            Layer::W2 => &mut self.w2.as_mut_slice()[idx],
            Layer::W3 => &mut self.w3.as_mut().expect("output layer").as_mut_slice()[idx],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w2.is_finite() && self.w3.as_ref().is_none_or(|m| m.is_finite())
    }

    fn forward_into(&self, features: &[f64], scratch: &mut Scratch) {
        match &self.w3 {
            None => affine(&self.w2, features, &mut scratch.probs),
            Some(w3) => {
                affine(&self.w2, features, &mut scratch.hidden);
                for h in scratch.hidden.iter_mut() {
                    *h = sigmoid(*h);
                }
                affine(w3, &scratch.hidden, &mut scratch.probs);
            }
        }
        softmax(&mut scratch.probs);
    }

    /// Class probabilities for one reservoir output vector.
    pub fn forward(&self, features: &[f64]) -> Vec<f64> {
        let mut scratch = Scratch::new(&self.architecture());
        self.forward_into(features, &mut scratch);
        scratch.probs
    }

    /// Cross-entropy of one sample.
    pub fn loss(&self, features: &[f64], label: usize) -> f64 {
        let mut logits = vec![0.0; self.architecture().classes];
        match &self.w3 {
            None => affine(&self.w2, features, &mut logits),
            Some(w3) => {
                let mut hidden = vec![0.0; self.w2.rows()];
                affine(&self.w2, features, &mut hidden);
                hidden.iter_mut().for_each(|h| *h = sigmoid(*h));
                affine(w3, &hidden, &mut logits);
            }
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
        log_sum - logits[label]
    }

    /// Adds the gradient of one sample's cross-entropy to `grads` and returns
    /// that sample's loss.
    fn accumulate(
        &self,
        features: &[f64],
        label: usize,
        grads: &mut Gradients,
        scratch: &mut Scratch,
    ) -> f64 {
        self.forward_into(features, scratch);
        let loss = -scratch.probs[label].max(f64::MIN_POSITIVE).ln();
        // d loss / d logits = p - onehot
        scratch.probs[label] -= 1.0;
        let delta_out = &scratch.probs;
        match (&self.w3, &mut grads.w3) {
            (None, _) => outer_add(&mut grads.w2, delta_out, features),
            (Some(w3), Some(g3)) => {
                outer_add(g3, delta_out, &scratch.hidden);
                for (j, dh) in scratch.delta_hidden.iter_mut().enumerate() {
                    let mut back = 0.0;
                    for (k, d) in delta_out.iter().enumerate() {
                        back += w3.get(k, j + 1) * d;
                    }
                    let h = scratch.hidden[j];
                    *dh = back * h * (1.0 - h);
                }
                outer_add(&mut grads.w2, &scratch.delta_hidden, features);
            }
            (Some(_), None) => unreachable!("gradient layout follows the classifier"),
        }
        loss
    }

    /// Exact gradient of one sample's cross-entropy.
    pub fn gradients(&self, features: &[f64], label: usize) -> Gradients {
        let mut grads = Gradients::zeros_like(self);
        let mut scratch = Scratch::new(&self.architecture());
        self.accumulate(features, label, &mut grads, &mut scratch);
        grads
    }

    fn step(&mut self, grads: &Gradients, scale: f64) {
        axpy(self.w2.as_mut_slice(), grads.w2.as_slice(), -scale);
        if let (Some(w3), Some(g3)) = (&mut self.w3, &grads.w3) {
            axpy(w3.as_mut_slice(), g3.as_slice(), -scale);
        }
    }
}

/// `g += delta ⊗ [1, input]`.
#[inline]
fn outer_add(g: &mut Matrix, delta: &[f64], input: &[f64]) {
    for (r, d) in delta.iter().enumerate() {
        if *d == 0.0 {
            continue;
        }
        let row = g.row_mut(r);
        row[0] += d;
        for (gv, x) in row[1..].iter_mut().zip(input) {
            *gv += d * x;
        }
    }
}

#[inline]
fn axpy(y: &mut [f64], x: &[f64], a: f64) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

/// Trains a classifier on precomputed reservoir outputs (`n × P`, row-major).
pub fn train_classifier(
    features: &[f64],
    labels: &[u8],
    arch: &Architecture,
    config: &TrainConfig,
) -> Result<(Classifier, TrainingMeta)> {
    arch.validate()?;
    config.validate()?;
    let p = arch.reservoir;
    if labels.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot train on an empty dataset".into(),
        ));
    }
    if features.len() != labels.len() * p {
        return Err(Error::Shape {
            expected: format!("{} features", labels.len() * p),
            found: format!("{}", features.len()),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut classifier = Classifier::random(arch, &mut rng);
    let mut grads = Gradients::zeros_like(&classifier);
    let mut scratch = Scratch::new(arch);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut meta = TrainingMeta::default();
    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.clear();
            for &i in batch {
                total += classifier.accumulate(
                    &features[i * p..(i + 1) * p],
                    labels[i] as usize,
                    &mut grads,
                    &mut scratch,
                );
            }
            classifier.step(&grads, config.learning_rate / batch.len() as f64);
        }
        let mean = total / labels.len() as f64;
        if !mean.is_finite() || !classifier.is_finite() {
            return Err(Error::Divergence { epoch: epoch + 1 });
        }
        meta.epoch_losses.push(mean);
        meta.epochs_run = epoch + 1;
    }
    Ok((classifier, meta))
}

/// Fraction of rows whose argmax matches the label.
pub fn accuracy_on_features(
    classifier: &Classifier,
    features: &[f64],
    labels: &[u8],
) -> Result<f64> {
    Ok(confusion_on_features(classifier, features, labels)?.accuracy())
}

pub fn confusion_on_features(
    classifier: &Classifier,
    features: &[f64],
    labels: &[u8],
) -> Result<Confusion> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot evaluate on an empty dataset".into(),
        ));
    }
    let arch = classifier.architecture();
    let p = arch.reservoir;
    let mut scratch = Scratch::new(&arch);
    let mut confusion = Confusion::new(arch.classes);
    for (row, &label) in features.chunks_exact(p).zip(labels) {
        classifier.forward_into(row, &mut scratch);
        confusion.record(label as usize, argmax(&scratch.probs));
    }
    Ok(confusion)
}

/// Counts indexed `[true class][predicted class]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub counts: Vec<Vec<usize>>,
}

impl Confusion {
    pub fn new(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> usize {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.correct() as f64 / self.total() as f64
    }
}

/// A trained reservoir classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    pub architecture: Architecture,
    pub reservoir: Reservoir,
    pub classifier: Classifier,
    pub training: TrainingMeta,
}

impl NetworkModel {
    /// Class probabilities for a 785-slot input.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.forward_with(input, ProjectionMode::Materialized)
    }

    pub fn forward_with(&self, input: &[f64], mode: ProjectionMode) -> Result<Vec<f64>> {
        let features = self.reservoir.transform(input, mode)?;
        Ok(self.classifier.forward(&features))
    }

    pub fn predict_image(&self, pixels: &[u8]) -> Result<usize> {
        let input = flatten_image(pixels, self.reservoir.config.traversal)?;
        Ok(argmax(&self.forward(&input)?))
    }

    pub fn validate(&self) -> Result<()> {
        self.architecture.validate()?;
        self.reservoir.config.validate()?;
        let norm = self.reservoir.normalization()?;
        let shapes_ok = self.classifier.architecture() == self.architecture
            && self.reservoir.config.neurons == self.architecture.reservoir
            && norm.neurons() == self.architecture.reservoir
            && norm.max.len() == norm.min.len();
        if !shapes_ok {
            return Err(Error::Format(format!(
                "weight shapes do not match architecture {}",
                self.architecture
            )));
        }
        if !self.classifier.is_finite() {
            return Err(Error::Format("non-finite weights".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            model: self.clone(),
        };
        serde_json::to_string_pretty(&file).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(Error::Format(format!(
                "unsupported model file {} v{}",
                file.format, file.version
            )));
        }
        file.model.validate()?;
        Ok(file.model)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    model: NetworkModel,
}

/// Builds the reservoir for `config` and fits its normalization on `images`.
pub fn fit_reservoir(config: &ReservoirConfig, images: &[u8]) -> Result<(Reservoir, Vec<f64>)> {
    let mut reservoir = Reservoir::new(config.clone());
    let mut z = reservoir.pre_activations(images)?;
    reservoir.fit(z.chunks(config.neurons))?;
    let norm = reservoir.normalization()?.clone();
    for row in z.chunks_mut(config.neurons) {
        norm.apply(config.activation, row);
    }
    Ok((reservoir, z))
}

/// Fits the reservoir normalization and trains the classifier on `dataset`.
pub fn train(
    dataset: &LabeledDataset,
    arch: &Architecture,
    reservoir: &ReservoirConfig,
    config: &TrainConfig,
) -> Result<NetworkModel> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot train on an empty dataset".into(),
        ));
    }
    if arch.reservoir != reservoir.neurons {
        return Err(Error::InvalidArgument(format!(
            "architecture {arch} does not match a reservoir of {} neurons",
            reservoir.neurons
        )));
    }
    let (fitted, features) = fit_reservoir(reservoir, dataset.images())?;
    let (classifier, training) = train_classifier(&features, dataset.labels(), arch, config)?;
    Ok(NetworkModel {
        architecture: *arch,
        reservoir: fitted,
        classifier,
        training,
    })
}

pub fn evaluate(model: &NetworkModel, dataset: &LabeledDataset) -> Result<f64> {
    Ok(confusion(model, dataset)?.accuracy())
}

pub fn confusion(model: &NetworkModel, dataset: &LabeledDataset) -> Result<Confusion> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot evaluate on an empty dataset".into(),
        ));
    }
    let features = model.reservoir.features(dataset.images())?;
    confusion_on_features(&model.classifier, &features, dataset.labels())
}

/// Largest relative disagreement between `analytic` and central finite
/// differences of the loss, over the checked weights.
pub fn compare_with_finite_differences(
    classifier: &Classifier,
    features: &[f64],
    label: usize,
    analytic: &Gradients,
    step: f64,
) -> f64 {
    let mut probe = classifier.clone();
    let mut worst: f64 = 0.0;
    let layers = std::iter::once((Layer::W2, &analytic.w2))
        .chain(analytic.w3.iter().map(|g| (Layer::W3, g)));
    for (layer, grads) in layers {
        for (idx, &g_bp) in grads.as_slice().iter().enumerate() {
            let original = *probe.weight_mut(layer, idx);
            *probe.weight_mut(layer, idx) = original + step;
            let plus = probe.loss(features, label);
            *probe.weight_mut(layer, idx) = original - step;
            let minus = probe.loss(features, label);
            *probe.weight_mut(layer, idx) = original;
            let g_fd = (plus - minus) / (2.0 * step);
            let rel = (g_bp - g_fd).abs() / g_bp.abs().max(g_fd.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Backprop versus central differences (step 1e-5) for one sample.
pub fn gradient_check(model: &NetworkModel, input: &[f64], label: usize) -> Result<f64> {
    let features = model
        .reservoir
        .transform(input, ProjectionMode::Materialized)?;
    let analytic = model.classifier.gradients(&features, label);
    Ok(compare_with_finite_differences(
        &model.classifier,
        &features,
        label,
        &analytic,
        1e-5,
    ))
}
