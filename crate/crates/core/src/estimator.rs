//! Single-angle regressor: a 60-9-1 fully connected network with tanh
//! hidden units and a sigmoid output mapped onto a configurable angle
//! range, trained by plain mini-batch gradient descent on squared error.
//! Small enough to hand-roll, which keeps the gradient exactly auditable
//! against finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};
use std::path::Path;

use crate::io::KvFile;
use crate::{Error, Result};

/// Input width: 30 band energies per ear.
pub const INPUT_DIM: usize = 60;
/// Hidden layer width.
pub const HIDDEN_DIM: usize = 9;
/// Total trainable scalars: 60·9 weights + 9 biases + 9 weights + 1 bias.
pub const PARAM_COUNT: usize = INPUT_DIM * HIDDEN_DIM + HIDDEN_DIM + HIDDEN_DIM + 1;

/// The network's parameters and its output mapping. The output sigmoid is
/// affinely stretched onto [angle_min, angle_max], so predictions always
/// stay inside the configured range.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    /// Hidden weights, row h holding the 60 input weights of unit h.
    pub w1: Vec<f64>,
    /// Hidden biases (9).
    pub b1: Vec<f64>,
    /// Output weights (9).
    pub w2: Vec<f64>,
    /// Output bias.
    pub b2: f64,
    pub angle_min_deg: f64,
    pub angle_max_deg: f64,
}

/// Training hyperparameters. Validation-based early stopping is off unless
/// `validation_fraction` is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Trailing fraction of the (seed-shuffled) samples held out for
    /// validation; `None` trains on everything and returns the final epoch.
    pub validation_fraction: Option<f64>,
    /// Epochs without validation improvement tolerated before stopping.
    pub patience: usize,
    pub loss: Loss,
}

/// Loss selector; squared error is the only trained criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Loss {
    #[default]
    SquaredError,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            epochs: 500,
            batch_size: 32,
            seed: 0,
            validation_fraction: None,
            patience: 20,
            loss: Loss::SquaredError,
        }
    }
}

/// Per-run training diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean squared error (normalized targets) per completed epoch.
    pub epoch_losses: Vec<f64>,
    /// Epoch whose parameters were returned (best validation epoch, or the
    /// last completed epoch without validation).
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Glorot-uniform initialization: each layer's weights drawn uniformly in
/// ±√(6/(fan_in+fan_out)), biases zero. Deterministic per seed; the first
/// layer's 540 weights are drawn before the output layer's 9.
pub fn init_network(seed: u64, angle_range_deg: (f64, f64)) -> Result<NetworkParams> {
    let (lo, hi) = angle_range_deg;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidConfig(format!("angle range [{lo}, {hi}] is not ordered")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let limit1 = (6.0 / (INPUT_DIM + HIDDEN_DIM) as f64).sqrt();
    let limit2 = (6.0 / (HIDDEN_DIM + 1) as f64).sqrt();
    let w1 = (0..INPUT_DIM * HIDDEN_DIM).map(|_| rng.gen_range(-limit1..limit1)).collect();
    let w2 = (0..HIDDEN_DIM).map(|_| rng.gen_range(-limit2..limit2)).collect();
    Ok(NetworkParams {
        w1,
        b1: vec![0.0; HIDDEN_DIM],
        w2,
        b2: 0.0,
        angle_min_deg: lo,
        angle_max_deg: hi,
    })
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl NetworkParams {
    /// Flattens the parameters in the canonical order used by the gradient
    /// and the binary format: w1 row-major, b1, w2, b2.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(PARAM_COUNT);
        flat.extend_from_slice(&self.w1);
        flat.extend_from_slice(&self.b1);
        flat.extend_from_slice(&self.w2);
        flat.push(self.b2);
        flat
    }

    /// Inverse of [`NetworkParams::to_flat`], keeping this range.
    pub fn from_flat(&self, flat: &[f64]) -> Result<NetworkParams> {
        if flat.len() != PARAM_COUNT {
            return Err(Error::DimensionMismatch { expected: PARAM_COUNT, got: flat.len() });
        }
        let (w1, rest) = flat.split_at(INPUT_DIM * HIDDEN_DIM);
        let (b1, rest) = rest.split_at(HIDDEN_DIM);
        let (w2, b2) = rest.split_at(HIDDEN_DIM);
        Ok(NetworkParams {
            w1: w1.to_vec(),
            b1: b1.to_vec(),
            w2: w2.to_vec(),
            b2: b2[0],
            ..*self
        })
    }

    fn forward(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let mut hidden = Vec::with_capacity(HIDDEN_DIM);
        for h in 0..HIDDEN_DIM {
            let row = &self.w1[h * INPUT_DIM..(h + 1) * INPUT_DIM];
            let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b1[h];
            hidden.push(z.tanh());
        }
        let z2: f64 = self.w2.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>() + self.b2;
        (hidden, sigmoid(z2))
    }

    fn normalize(&self, angle_deg: f64) -> f64 {
        (angle_deg - self.angle_min_deg) / (self.angle_max_deg - self.angle_min_deg)
    }

    fn denormalize(&self, y: f64) -> f64 {
        self.angle_min_deg + y * (self.angle_max_deg - self.angle_min_deg)
    }
}

/// Forward pass: angle_min + σ(w₂·tanh(W₁x+b₁) + b₂)·(angle_max−angle_min).
pub fn predict(p: &NetworkParams, x: &[f64]) -> Result<f64> {
    if x.len() != INPUT_DIM {
        return Err(Error::DimensionMismatch { expected: INPUT_DIM, got: x.len() });
    }
    let (_, y) = p.forward(x);
    Ok(p.denormalize(y))
}

/// Mean squared error over normalized targets, plus its gradient in the
/// canonical flat order. This is the exact quantity gradient descent steps
/// on, kept public so finite-difference checks can audit it.
pub fn loss_and_gradient(
    p: &NetworkParams,
    batch: &[(&[f64], f64)],
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput);
    }
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; PARAM_COUNT];
    let (gw1, rest) = grad.split_at_mut(INPUT_DIM * HIDDEN_DIM);
    let (gb1, rest) = rest.split_at_mut(HIDDEN_DIM);
    let (gw2, gb2) = rest.split_at_mut(HIDDEN_DIM);
    for &(x, target_deg) in batch {
        if x.len() != INPUT_DIM {
            return Err(Error::DimensionMismatch { expected: INPUT_DIM, got: x.len() });
        }
        let (hidden, y) = p.forward(x);
        let err = y - p.normalize(target_deg);
        loss += scale * err * err;
        // d(loss)/d(z2) through the sigmoid.
        let dz2 = scale * 2.0 * err * y * (1.0 - y);
        for h in 0..HIDDEN_DIM {
            gw2[h] += dz2 * hidden[h];
            let dz1 = dz2 * p.w2[h] * (1.0 - hidden[h] * hidden[h]);
            gb1[h] += dz1;
            let row = &mut gw1[h * INPUT_DIM..(h + 1) * INPUT_DIM];
            for (g, v) in row.iter_mut().zip(x) {
                *g += dz1 * v;
            }
        }
        gb2[0] += dz2;
    }
    Ok((loss, grad))
}

fn apply_step(p: &mut NetworkParams, grad: &[f64], lr: f64) {
    for (w, g) in p.w1.iter_mut().zip(&grad[..INPUT_DIM * HIDDEN_DIM]) {
        *w -= lr * g;
    }
    let off = INPUT_DIM * HIDDEN_DIM;
    for (b, g) in p.b1.iter_mut().zip(&grad[off..off + HIDDEN_DIM]) {
        *b -= lr * g;
    }
    for (w, g) in p.w2.iter_mut().zip(&grad[off + HIDDEN_DIM..off + 2 * HIDDEN_DIM]) {
        *w -= lr * g;
    }
    p.b2 -= lr * grad[PARAM_COUNT - 1];
}

fn mean_loss(p: &NetworkParams, samples: &[(&[f64], f64)]) -> f64 {
    samples
        .iter()
        .map(|&(x, t)| {
            let (_, y) = p.forward(x);
            let e = y - p.normalize(t);
            e * e
        })
        .sum::<f64>()
        / samples.len() as f64
}

/// Trains by mini-batch gradient descent with a per-epoch Fisher–Yates
/// shuffle drawn from `cfg.seed`. With validation enabled, returns the
/// parameters of the best validation epoch and stops after `patience`
/// epochs without improvement; otherwise returns the final epoch.
pub fn train(
    start: &NetworkParams,
    samples: &[(Vec<f64>, f64)],
    cfg: &TrainConfig,
) -> Result<(NetworkParams, TrainReport)> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(cfg.learning_rate > 0.0) || cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::InvalidConfig(
            "learning rate, epochs, and batch size must be positive".into(),
        ));
    }
    for (_, t) in samples {
        if !(start.angle_min_deg..=start.angle_max_deg).contains(t) {
            return Err(Error::InvalidConfig(format!(
                "target {t}° outside the output range [{}, {}]",
                start.angle_min_deg, start.angle_max_deg
            )));
        }
    }
    let Loss::SquaredError = cfg.loss;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();

    // Optional validation split: shuffle once, hold out the tail.
    let val_len = match cfg.validation_fraction {
        Some(f) => {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::InvalidConfig(format!("validation fraction {f}")));
            }
            shuffle(&mut order, &mut rng);
            (f * samples.len() as f64).round() as usize
        }
        None => 0,
    };
    let (train_idx, val_idx) = order.split_at(order.len() - val_len);
    if train_idx.is_empty() {
        return Err(Error::InvalidConfig("validation split leaves no training data".into()));
    }
    let mut train_idx = train_idx.to_vec();
    let val_set: Vec<(&[f64], f64)> =
        val_idx.iter().map(|&i| (samples[i].0.as_slice(), samples[i].1)).collect();

    let mut p = start.clone();
    let mut best = p.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut report =
        TrainReport { epoch_losses: Vec::with_capacity(cfg.epochs), best_epoch: 0, stopped_early: false };

    for epoch in 0..cfg.epochs {
        shuffle(&mut train_idx, &mut rng);
        let mut epoch_loss = 0.0;
        for chunk in train_idx.chunks(cfg.batch_size) {
            let batch: Vec<(&[f64], f64)> =
                chunk.iter().map(|&i| (samples[i].0.as_slice(), samples[i].1)).collect();
            let (loss, grad) = loss_and_gradient(&p, &batch)?;
            epoch_loss += loss * chunk.len() as f64;
            apply_step(&mut p, &grad, cfg.learning_rate);
        }
        epoch_loss /= train_idx.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        report.epoch_losses.push(epoch_loss);

        if val_len > 0 {
            let val_loss = mean_loss(&p, &val_set);
            if val_loss < best_val {
                best_val = val_loss;
                best = p.clone();
                best_epoch = epoch;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best > cfg.patience {
                    report.stopped_early = true;
                    break;
                }
            }
        }
    }

    if val_len > 0 {
        report.best_epoch = best_epoch;
        Ok((best, report))
    } else {
        report.best_epoch = report.epoch_losses.len() - 1;
        Ok((p, report))
    }
}

fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

// ---------------------------------------------------------------------------
// persistence
// ---------------------------------------------------------------------------

const MAGIC: &[u8; 4] = b"PNN1";

/// Writes the network as a little-endian binary (magic "PNN1", layer-shape
/// header, angle range, flat parameters) plus a human-readable `.txt`
/// sidecar of the shape and range.
pub fn save_network(p: &NetworkParams, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(4 + 4 * 5 + 8 * (2 + PARAM_COUNT));
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&2u32.to_le_bytes());
    for dim in [INPUT_DIM as u32, HIDDEN_DIM as u32, HIDDEN_DIM as u32, 1u32] {
        bytes.extend_from_slice(&dim.to_le_bytes());
    }
    bytes.extend_from_slice(&p.angle_min_deg.to_le_bytes());
    bytes.extend_from_slice(&p.angle_max_deg.to_le_bytes());
    for v in p.to_flat() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&bytes)?;

    let mut kv = KvFile::new();
    kv.set("network.format", "PNN1");
    kv.set("network.layers", "60x9, 9x1");
    kv.set("network.hidden_activation", "tanh");
    kv.set("network.output_activation", "sigmoid");
    kv.set("network.angle_min_deg", p.angle_min_deg);
    kv.set("network.angle_max_deg", p.angle_max_deg);
    kv.save(&path.with_extension("txt"))?;
    Ok(())
}

/// Reads a network written by [`save_network`] (binary part only).
pub fn load_network(path: &Path) -> Result<NetworkParams> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let fail = |msg: &str| Error::Format(format!("{}: {msg}", path.display()));
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(fail("missing PNN1 magic"));
    }
    let mut off = 4;
    let mut take_u32 = |bytes: &[u8]| -> Result<u32> {
        let v = bytes
            .get(off..off + 4)
            .ok_or_else(|| fail("truncated header"))?
            .try_into()
            .map(u32::from_le_bytes)
            .unwrap();
        off += 4;
        Ok(v)
    };
    let layers = take_u32(&bytes)?;
    let shape = [take_u32(&bytes)?, take_u32(&bytes)?, take_u32(&bytes)?, take_u32(&bytes)?];
    if layers != 2 || shape != [INPUT_DIM as u32, HIDDEN_DIM as u32, HIDDEN_DIM as u32, 1] {
        return Err(fail("unsupported layer shape"));
    }
    let mut take_f64 = || -> Result<f64> {
        let v = bytes
            .get(off..off + 8)
            .ok_or_else(|| fail("truncated payload"))?
            .try_into()
            .map(f64::from_le_bytes)
            .unwrap();
        off += 8;
        Ok(v)
    };
    let angle_min_deg = take_f64()?;
    let angle_max_deg = take_f64()?;
    let mut flat = Vec::with_capacity(PARAM_COUNT);
    for _ in 0..PARAM_COUNT {
        flat.push(take_f64()?);
    }
    if off != bytes.len() {
        return Err(fail("trailing bytes"));
    }
    let template = NetworkParams {
        w1: Vec::new(),
        b1: Vec::new(),
        w2: Vec::new(),
        b2: 0.0,
        angle_min_deg,
        angle_max_deg,
    };
    template.from_flat(&flat)
}
