//! Fully connected tanh/softmax classifier trained with minibatch SGD.
//!
//! Parameters live in one flat `f64` vector laid out exactly as in the model
//! file: for each layer, the `out × in` weight matrix row-major, then the
//! `out` biases. SGD and Reptile updates are plain vector arithmetic on it.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::numerics::Prng;

/// Hidden widths used by the detector.
pub const DEFAULT_HIDDEN: [usize; 3] = [600, 1000, 600];
/// Probabilities are clipped here before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;
const MAGIC: &[u8; 6] = b"AMBNN1";
/// Rows per forward chunk when scoring large datasets.
const EVAL_CHUNK: usize = 1000;

/// Input, hidden and output widths for a `M`-antenna detector.
pub fn detector_layer_sizes(antennas: usize) -> Vec<usize> {
    let mut sizes = vec![crate::features::feature_len(antennas)];
    sizes.extend(DEFAULT_HIDDEN);
    sizes.push(2);
    sizes
}

/// Labelled feature vectors stored contiguously.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(dim: usize) -> Self {
        Self { dim, features: Vec::new(), labels: Vec::new() }
    }

    pub fn with_capacity(dim: usize, records: usize) -> Self {
        Self {
            dim,
            features: Vec::with_capacity(dim * records),
            labels: Vec::with_capacity(records),
        }
    }

    pub fn push(&mut self, x: &[f64], label: u8) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::invalid(format!(
                "feature length {} does not match dataset dimension {}",
                x.len(),
                self.dim
            )));
        }
        if label > 1 {
            return Err(Error::invalid(format!("label must be 0 or 1, got {label}")));
        }
        self.features.extend_from_slice(x);
        self.labels.push(label);
        Ok(())
    }

    pub fn push_vector(&mut self, x: &FeatureVector, label: u8) -> Result<()> {
        self.push(x.values(), label)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, i: usize) -> (&[f64], u8) {
        (&self.features[i * self.dim..(i + 1) * self.dim], self.labels[i])
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut out = Dataset::with_capacity(self.dim, indices.len());
        for &i in indices {
            let (x, y) = self.get(i);
            out.features.extend_from_slice(x);
            out.labels.push(y);
        }
        out
    }

    /// First `n` records (or all of them).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            dim: self.dim,
            features: self.features[..n * self.dim].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }

    pub fn count_label(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

impl MlpModel {
    /// All-zero parameters.
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid(format!("invalid layer sizes {sizes:?}")));
        }
        let count = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self { sizes: sizes.to_vec(), params: vec![0.0; count] })
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        let mut model = Self::zeros(sizes)?;
        if params.len() != model.params.len() {
            return Err(Error::invalid("parameter vector length does not match layer sizes"));
        }
        model.params = params;
        Ok(model)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Number of weight layers.
    pub fn depth(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn offset(&self, layer: usize) -> usize {
        self.sizes[..=layer].windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// `out × in` weights of a layer, row-major.
    pub fn weights(&self, layer: usize) -> &[f64] {
        let off = self.offset(layer);
        &self.params[off..off + self.sizes[layer] * self.sizes[layer + 1]]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        let off = self.offset(layer);
        let len = self.sizes[layer] * self.sizes[layer + 1];
        &mut self.params[off..off + len]
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        let off = self.offset(layer) + self.sizes[layer] * self.sizes[layer + 1];
        &self.params[off..off + self.sizes[layer + 1]]
    }

    pub fn biases_mut(&mut self, layer: usize) -> &mut [f64] {
        let off = self.offset(layer) + self.sizes[layer] * self.sizes[layer + 1];
        let len = self.sizes[layer + 1];
        &mut self.params[off..off + len]
    }

    fn check_batch(&self, x: &[f64]) -> Result<usize> {
        let dim = self.input_dim();
        if x.is_empty() || !x.len().is_multiple_of(dim) {
            return Err(Error::invalid(format!(
                "input of length {} is not a nonempty multiple of {dim}",
                x.len()
            )));
        }
        Ok(x.len() / dim)
    }

    /// Activations of every layer for a row-major batch; the last entry
    /// holds the softmax probabilities.
    fn activations(&self, x: &[f64], batch: usize) -> Vec<Vec<f64>> {
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.depth());
        for l in 0..self.depth() {
            let (fin, fout) = (self.sizes[l], self.sizes[l + 1]);
            let input: &[f64] = if l == 0 { x } else { &acts[l - 1] };
            let mut z = Vec::with_capacity(batch * fout);
            for _ in 0..batch {
                z.extend_from_slice(self.biases(l));
            }
            // Z += X · Wᵀ
            gemm(
                (batch, fin, fout),
                (input, fin as isize, 1),
                (self.weights(l), 1, fin as isize),
                1.0,
                &mut z,
            );
            if l + 1 < self.depth() {
                z.iter_mut().for_each(|v| *v = v.tanh());
            } else {
                z.chunks_exact_mut(fout).for_each(softmax_in_place);
            }
            acts.push(z);
        }
        acts
    }

    /// Class probabilities for one input.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "input length {} does not match model input {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(self.activations(x, 1).pop().unwrap())
    }

    /// Probabilities for a row-major batch, `batch × outputs`.
    pub fn forward_batch(&self, x: &[f64]) -> Result<Vec<f64>> {
        let batch = self.check_batch(x)?;
        let mut out = Vec::with_capacity(batch * self.output_dim());
        for chunk in x.chunks(EVAL_CHUNK * self.input_dim()) {
            let rows = chunk.len() / self.input_dim();
            out.extend(self.activations(chunk, rows).pop().unwrap());
        }
        Ok(out)
    }

    pub fn predict(&self, x: &[f64]) -> Result<u8> {
        Ok(argmax(&self.forward(x)?))
    }

    pub fn predict_batch(&self, x: &[f64]) -> Result<Vec<u8>> {
        let probs = self.forward_batch(x)?;
        Ok(probs.chunks_exact(self.output_dim()).map(argmax).collect())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.sizes.len() as u32).to_le_bytes())?;
        for &s in &self.sizes {
            let s = u32::try_from(s).map_err(|_| Error::invalid("layer size exceeds u32"))?;
            w.write_all(&s.to_le_bytes())?;
        }
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a model file (bad magic)".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word).map_err(truncated)?;
        let count = u32::from_le_bytes(word) as usize;
        if !(2..=64).contains(&count) {
            return Err(Error::Format(format!("implausible layer count {count}")));
        }
        let mut sizes = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut word).map_err(truncated)?;
            sizes.push(u32::from_le_bytes(word) as usize);
        }
        let mut model = Self::zeros(&sizes).map_err(|e| Error::Format(e.to_string()))?;
        let mut buf = [0u8; 8];
        for p in model.params.iter_mut() {
            r.read_exact(&mut buf).map_err(truncated)?;
            *p = f64::from_le_bytes(buf);
        }
        if r.read(&mut buf)? != 0 {
            return Err(Error::Format("trailing bytes after model parameters".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("model file truncated".into())
    } else {
        Error::Io(e)
    }
}

/// `C = A·B + beta·C` with arbitrary strides for `A` (m×k) and `B` (k×n);
/// `C` is dense row-major m×n.
fn gemm(
    (m, k, n): (usize, usize, usize),
    (a, rsa, csa): (&[f64], isize, isize),
    (b, rsb, csb): (&[f64], isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the slices cover every index reachable from the given shapes
    // and strides (checked above for the dense layouts used in this module),
    // and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
}

/// Softmax of a logit vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut z = logits.to_vec();
    softmax_in_place(&mut z);
    z
}

/// Index of the largest probability; ties go to the lower index.
fn argmax(p: &[f64]) -> u8 {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best as u8
}

/// Glorot-uniform weights, zero biases.
pub fn init_model(rng: &mut Prng, sizes: &[usize]) -> Result<MlpModel> {
    let mut model = MlpModel::zeros(sizes)?;
    for l in 0..model.depth() {
        let limit = (6.0 / (sizes[l] + sizes[l + 1]) as f64).sqrt();
        for w in model.weights_mut(l) {
            *w = limit * (2.0 * rng.uniform() - 1.0);
        }
    }
    Ok(model)
}

/// Cross-entropy `−ln p[label]` in nats, with `p` clipped below.
pub fn loss(probs: &[f64], label: u8) -> f64 {
    -probs[label as usize].max(PROB_FLOOR).ln()
}

/// Gradient of the mean minibatch loss, flattened like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    values: Vec<f64>,
    loss: f64,
    correct: usize,
}

impl Gradients {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mean loss of the batch at the parameters the gradient was taken at.
    pub fn loss(&self) -> f64 {
        self.loss
    }

    /// Batch records classified correctly at those parameters.
    pub fn correct(&self) -> usize {
        self.correct
    }
}

/// Exact gradient of the mean cross-entropy over a row-major batch.
pub fn backward(model: &MlpModel, x: &[f64], labels: &[u8]) -> Result<Gradients> {
    let batch = model.check_batch(x)?;
    if labels.len() != batch {
        return Err(Error::invalid("label count does not match batch size"));
    }
    let out = model.output_dim();
    if labels.iter().any(|&l| l as usize >= out) {
        return Err(Error::invalid("label outside the output range"));
    }
    let acts = model.activations(x, batch);
    let probs = acts.last().unwrap();

    let mut total = 0.0;
    let mut correct = 0;
    let mut dz = probs.clone();
    for (b, &label) in labels.iter().enumerate() {
        let row = &probs[b * out..(b + 1) * out];
        total += loss(row, label);
        correct += usize::from(argmax(row) == label);
        dz[b * out + label as usize] -= 1.0;
    }
    let inv = 1.0 / batch as f64;
    dz.iter_mut().for_each(|v| *v *= inv);

    let mut grads = MlpModel::zeros(&model.sizes)?;
    for l in (0..model.depth()).rev() {
        let (fin, fout) = (model.sizes[l], model.sizes[l + 1]);
        let input: &[f64] = if l == 0 { x } else { &acts[l - 1] };
        // dW = dZᵀ · A
        gemm(
            (fout, batch, fin),
            (&dz, 1, fout as isize),
            (input, fin as isize, 1),
            0.0,
            grads.weights_mut(l),
        );
        let db = grads.biases_mut(l);
        for row in dz.chunks_exact(fout) {
            db.iter_mut().zip(row).for_each(|(g, d)| *g += d);
        }
        if l > 0 {
            // dA = dZ · W, then through tanh'.
            let mut da = vec![0.0; batch * fin];
            gemm(
                (batch, fout, fin),
                (&dz, fout as isize, 1),
                (model.weights(l), fin as isize, 1),
                0.0,
                &mut da,
            );
            for (d, a) in da.iter_mut().zip(&acts[l - 1]) {
                *d *= 1.0 - a * a;
            }
            dz = da;
        }
    }
    Ok(Gradients { values: grads.params, loss: total * inv, correct })
}

/// `θ ← θ − lr·g`.
pub fn sgd_step(model: &mut MlpModel, grads: &Gradients, lr: f64) -> Result<()> {
    if grads.values.len() != model.params.len() {
        return Err(Error::invalid("gradient shape does not match model"));
    }
    for (p, g) in model.params.iter_mut().zip(&grads.values) {
        *p -= lr * g;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.001, batch_size: 1000, epochs: 30, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean minibatch loss over the epoch.
    pub loss: f64,
    /// Fraction of records classified correctly while the epoch ran.
    pub accuracy: f64,
}

/// Draws `size` distinct record indices (all of them if `size ≥ n`).
pub fn sample_batch(rng: &mut Prng, n: usize, size: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let size = size.min(n);
    // Partial Fisher-Yates.
    for i in 0..size {
        let j = i + rng.below(n - i);
        idx.swap(i, j);
    }
    idx.truncate(size);
    idx
}

/// One SGD step on the given records; returns the pre-step gradient.
pub fn train_step(model: &mut MlpModel, data: &Dataset, indices: &[usize], lr: f64) -> Result<Gradients> {
    let batch = data.subset(indices);
    let grads = backward(model, batch.features(), batch.labels())?;
    sgd_step(model, &grads, lr)?;
    Ok(grads)
}

/// Minibatch SGD over shuffled epochs.
pub fn train(model: &mut MlpModel, data: &Dataset, cfg: &TrainConfig) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if data.dim() != model.input_dim() {
        return Err(Error::invalid("dataset dimension does not match model input"));
    }
    let mut rng = Prng::new(cfg.seed, 0x0074_7261_696e);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let (mut loss_sum, mut correct, mut batches) = (0.0, 0usize, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let g = train_step(model, data, chunk, cfg.learning_rate)?;
            loss_sum += g.loss;
            correct += g.correct;
            batches += 1;
        }
        if !model.is_finite() {
            return Err(Error::Numerical(format!("parameters diverged in epoch {epoch}")));
        }
        history.push(EpochStats {
            epoch,
            loss: loss_sum / batches as f64,
            accuracy: correct as f64 / data.len() as f64,
        });
    }
    Ok(history)
}

/// Mean loss and accuracy of a model on a dataset.
pub fn evaluate(model: &MlpModel, data: &Dataset) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    let probs = model.forward_batch(data.features())?;
    let out = model.output_dim();
    let (mut total, mut correct) = (0.0, 0usize);
    for (row, &label) in probs.chunks_exact(out).zip(data.labels()) {
        total += loss(row, label);
        correct += usize::from(argmax(row) == label);
    }
    let n = data.len() as f64;
    Ok((total / n, correct as f64 / n))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_model(rng: &mut Prng, sizes: &[usize], scale: f64) -> MlpModel {
        let mut m = MlpModel::zeros(sizes).unwrap();
        m.params_mut().iter_mut().for_each(|p| *p = scale * rng.standard_normal());
        m
    }

    /// Scalar reference forward pass written with plain loops.
    fn naive_mean_loss(m: &MlpModel, x: &[f64], labels: &[u8]) -> f64 {
        let sizes = m.layer_sizes();
        let mut total = 0.0;
        for (b, &label) in labels.iter().enumerate() {
            let mut a: Vec<f64> = x[b * sizes[0]..(b + 1) * sizes[0]].to_vec();
            for l in 0..m.depth() {
                let (w, bias) = (m.weights(l), m.biases(l));
                let mut z = vec![0.0; sizes[l + 1]];
                for (o, zo) in z.iter_mut().enumerate() {
                    *zo = bias[o] + (0..sizes[l]).map(|i| w[o * sizes[l] + i] * a[i]).sum::<f64>();
                }
                if l + 1 < m.depth() {
                    a = z.iter().map(|v| v.tanh()).collect();
                } else {
                    let mx = z.iter().copied().fold(f64::MIN, f64::max);
                    let s: f64 = z.iter().map(|v| (v - mx).exp()).sum();
                    a = z.iter().map(|v| (v - mx).exp() / s).collect();
                }
            }
            total += -a[label as usize].ln();
        }
        total / labels.len() as f64
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let sizes = [6, 4, 2];
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for draw in 0..20u64 {
            let mut rng = Prng::new(100 + draw, 0);
            let mut model = random_model(&mut rng, &sizes, 0.7);
            let batch = 1 + rng.below(8);
            let x: Vec<f64> = (0..batch * 6).map(|_| rng.standard_normal()).collect();
            let labels: Vec<u8> = (0..batch).map(|_| rng.below(2) as u8).collect();
            let g = backward(&model, &x, &labels).unwrap();
            assert!((g.loss() - naive_mean_loss(&model, &x, &labels)).abs() < 1e-12);
            for k in 0..model.param_count() {
                let orig = model.params()[k];
                model.params_mut()[k] = orig + h;
                let up = naive_mean_loss(&model, &x, &labels);
                model.params_mut()[k] = orig - h;
                let down = naive_mean_loss(&model, &x, &labels);
                model.params_mut()[k] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = g.values()[k];
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
                worst = worst.max(rel);
                assert!(rel < 1e-4, "draw {draw} param {k}: analytic {an} vs fd {fd}");
            }
        }
        assert!(worst < 1e-4);
    }

    #[test]
    fn parameter_count_for_ten_antennas() {
        let m = MlpModel::zeros(&detector_layer_sizes(10)).unwrap();
        assert_eq!(m.layer_sizes(), &[600, 600, 1000, 600, 2]);
        let want = 600 * 600 + 600 + 600 * 1000 + 1000 + 1000 * 600 + 600 + 600 * 2 + 2;
        assert_eq!(want, 1_563_402);
        assert_eq!(m.param_count(), want);
    }

    #[test]
    fn init_is_glorot_uniform() {
        let sizes = [300, 200, 2];
        let a = init_model(&mut Prng::new(5, 0), &sizes).unwrap();
        let b = init_model(&mut Prng::new(5, 0), &sizes).unwrap();
        assert_eq!(a, b);
        for l in 0..a.depth() {
            assert!(a.biases(l).iter().all(|&v| v == 0.0));
            let w = a.weights(l);
            let limit = (6.0 / (sizes[l] + sizes[l + 1]) as f64).sqrt();
            assert!(w.iter().all(|v| v.abs() <= limit));
            let var = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
            let want = 2.0 / (sizes[l] + sizes[l + 1]) as f64;
            if w.len() > 1000 {
                assert!((var / want - 1.0).abs() < 0.1, "layer {l}: {var} vs {want}");
            }
        }
        assert!(init_model(&mut Prng::new(0, 0), &[3]).is_err());
        assert!(init_model(&mut Prng::new(0, 0), &[3, 0, 2]).is_err());
    }

    #[test]
    fn forward_examples() {
        let zero = MlpModel::zeros(&[4, 3, 2]).unwrap();
        assert_eq!(zero.forward(&[1.0, -2.0, 3.0, 0.5]).unwrap(), vec![0.5, 0.5]);
        assert!(zero.forward(&[1.0]).is_err());

        // 1 → 2 linear net: logits (w0 x + b0, w1 x + b1).
        let m = MlpModel::from_params(&[1, 2], vec![2.0, -1.0, 0.5, 0.25]).unwrap();
        let x = 0.8f64;
        let (z0, z1) = (2.0 * x + 0.5, -x + 0.25);
        let p1 = 1.0 / (1.0 + (z0 - z1).exp());
        let p = m.forward(&[x]).unwrap();
        assert!((p[1] - p1).abs() < 1e-15 && (p[0] - (1.0 - p1)).abs() < 1e-15);

        let base = softmax(&[0.3, -1.2]);
        let shifted = softmax(&[100.3, 98.8]);
        assert!((base[0] - shifted[0]).abs() < 1e-12);
        let extreme = softmax(&[700.0, -700.0]);
        assert!(extreme.iter().all(|v| v.is_finite()));
        assert!((extreme.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut rng = Prng::new(9, 0);
        let m = random_model(&mut rng, &[5, 7, 3], 3.0);
        let x: Vec<f64> = (0..5 * 50).map(|_| 10.0 * rng.standard_normal()).collect();
        let p = m.forward_batch(&x).unwrap();
        for row in p.chunks_exact(3) {
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_examples() {
        assert!((loss(&[0.5, 0.5], 0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(loss(&[0.0, 1.0], 1), 0.0);
        assert!((loss(&[0.9, 0.1], 1) - std::f64::consts::LN_10).abs() < 1e-12);
        assert!((loss(&[1.0, 0.0], 1) - (-PROB_FLOOR.ln())).abs() < 1e-12);
    }

    #[test]
    fn backward_symmetry_and_mean_invariance() {
        let zero = MlpModel::zeros(&[3, 4, 2]).unwrap();
        let x = [1.0, -0.5, 2.0, -1.0, 0.5, -2.0];
        let g = backward(&zero, &x, &[0, 1]).unwrap();
        let off = g.values().len() - 2;
        assert_eq!(&g.values()[off..], &[0.0, 0.0]);

        let mut rng = Prng::new(2, 0);
        let m = random_model(&mut rng, &[3, 4, 2], 0.5);
        let single = backward(&m, &x, &[0, 1]).unwrap();
        let doubled: Vec<f64> = x.iter().chain(&x).copied().collect();
        let dup = backward(&m, &doubled, &[0, 1, 0, 1]).unwrap();
        for (a, b) in single.values().iter().zip(dup.values()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(backward(&m, &x, &[0]).is_err());
        assert!(backward(&m, &[], &[]).is_err());
    }

    #[test]
    fn sgd_arithmetic() {
        let mut m = MlpModel::from_params(&[1, 1], vec![1.0, 0.0]).unwrap();
        let g = Gradients { values: vec![0.5, 0.0], loss: 0.0, correct: 0 };
        sgd_step(&mut m, &g, 0.1).unwrap();
        assert_eq!(m.params(), &[0.95, 0.0]);
        let before = m.clone();
        sgd_step(&mut m, &g, 0.0).unwrap();
        assert_eq!(m, before);
        let bad = Gradients { values: vec![1.0], loss: 0.0, correct: 0 };
        assert!(sgd_step(&mut m, &bad, 0.1).is_err());
    }

    fn separable(n: usize, seed: u64) -> Dataset {
        let mut rng = Prng::new(seed, 0);
        let mut d = Dataset::new(2);
        for _ in 0..n {
            let label = rng.below(2) as u8;
            let shift = if label == 1 { 1.5 } else { -1.5 };
            d.push(&[shift + 0.3 * rng.standard_normal(), 0.3 * rng.standard_normal()], label)
                .unwrap();
        }
        d
    }

    #[test]
    fn learns_separable_toy_set() {
        let data = separable(200, 1);
        let mut model = init_model(&mut Prng::new(1, 1), &[2, 8, 2]).unwrap();
        let cfg = TrainConfig { learning_rate: 0.1, batch_size: 20, epochs: 50, seed: 3 };
        let hist = train(&mut model, &data, &cfg).unwrap();
        assert_eq!(hist.len(), 50);
        assert_eq!(evaluate(&model, &data).unwrap().1, 1.0);

        let mut again = init_model(&mut Prng::new(1, 1), &[2, 8, 2]).unwrap();
        assert_eq!(train(&mut again, &data, &cfg).unwrap(), hist);
        assert_eq!(again, model);
    }

    #[test]
    fn train_rejects_bad_input() {
        let mut model = MlpModel::zeros(&[2, 2]).unwrap();
        let cfg = TrainConfig::default();
        assert!(train(&mut model, &Dataset::new(2), &cfg).is_err());
        assert!(train(&mut model, &separable(4, 0), &TrainConfig { batch_size: 0, ..cfg.clone() }).is_err());
        assert!(train(&mut model, &separable(4, 0), &TrainConfig { learning_rate: 0.0, ..cfg }).is_err());
    }

    #[test]
    fn predict_rules() {
        let zero = MlpModel::zeros(&[2, 2]).unwrap();
        assert_eq!(zero.predict(&[0.3, 0.3]).unwrap(), 0);
        assert_eq!(argmax(&[0.1, 0.9]), 1);
        let mut rng = Prng::new(4, 0);
        let m = random_model(&mut rng, &[3, 5, 2], 1.0);
        let x: Vec<f64> = (0..3 * 1000).map(|_| rng.standard_normal()).collect();
        let batch = m.predict_batch(&x).unwrap();
        for (i, row) in x.chunks_exact(3).enumerate() {
            let p = m.forward(row).unwrap();
            assert_eq!(batch[i], u8::from(p[1] > p[0]));
        }
    }

    #[test]
    fn model_file_round_trip() {
        let m = init_model(&mut Prng::new(7, 0), &[6, 4, 2]).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..6], b"AMBNN1");
        assert_eq!(&buf[6..10], &3u32.to_le_bytes());
        assert_eq!(buf.len(), 6 + 4 + 12 + 8 * m.param_count());
        // First weight follows the header.
        assert_eq!(&buf[22..30], &m.weights(0)[0].to_le_bytes());
        assert_eq!(MlpModel::read_from(&buf[..]).unwrap(), m);
        assert!(MlpModel::read_from(&buf[..buf.len() - 3]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(MlpModel::read_from(&bad[..]), Err(Error::Format(_))));
    }

    #[test]
    fn dataset_basics() {
        let mut d = Dataset::new(2);
        d.push(&[1.0, 2.0], 0).unwrap();
        d.push(&[3.0, 4.0], 1).unwrap();
        assert!(d.push(&[1.0], 0).is_err());
        assert!(d.push(&[1.0, 1.0], 2).is_err());
        assert_eq!(d.subset(&[1]).get(0), (&[3.0, 4.0][..], 1));
        assert_eq!(d.count_label(1), 1);
        assert_eq!(d.head(5).len(), 2);

        let mut rng = Prng::new(0, 0);
        let idx = sample_batch(&mut rng, 10, 4);
        assert_eq!(idx.len(), 4);
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 4);
        assert_eq!(sample_batch(&mut rng, 3, 10).len(), 3);
    }
}
