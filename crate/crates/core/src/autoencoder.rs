//! Shallow `n/p/n` sigmoid autoencoder and per-class block error histograms.
//!
//! Both layers use the logistic sigmoid. The training loss for one sample is
//! the mean squared reconstruction error `(1/n) sum (y_i - x_i)^2`; batches
//! average it. Parameters live in one flat buffer in the order encoder
//! weights (`p x n`, row per hidden unit), encoder bias (`p`), decoder
//! weights (`n x p`, row per output), decoder bias (`n`). The model file
//! stores them in the same order.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::codec::{read_file, write_file, Decoder, Encoder};
use crate::dataset::{load_image, DatasetManifest, GrayImage, Split};
use crate::error::{Error, Result};
use crate::features::block_grid;

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    n: usize,
    p: usize,
    params: Vec<f64>,
}

/// Number of trainable parameters of an `n/p/n` network.
pub fn parameter_count(n: usize, p: usize) -> usize {
    2 * n * p + p + n
}

/// Builds an `n/p/n` network with weights uniform in `[-init_scale, init_scale]`
/// and zero biases.
pub fn init_autoencoder(n: usize, p: usize, seed: u64, init_scale: f64) -> Result<Autoencoder> {
    if p == 0 || p >= n {
        return Err(Error::NoCompression { n, p });
    }
    if !(init_scale.is_finite() && init_scale >= 0.0) {
        return Err(Error::InvalidParameter(format!("init scale {init_scale}")));
    }
    let mut ae = Autoencoder::zeros(n, p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (enc_w, dec_w) = (ae.enc_w_range(), ae.dec_w_range());
    for i in enc_w.chain(dec_w) {
        ae.params[i] = if init_scale > 0.0 {
            rng.gen_range(-init_scale..=init_scale)
        } else {
            0.0
        };
    }
    Ok(ae)
}

impl Autoencoder {
    /// All weights and biases zero.
    pub fn zeros(n: usize, p: usize) -> Result<Self> {
        if p == 0 || p >= n {
            return Err(Error::NoCompression { n, p });
        }
        Ok(Self {
            n,
            p,
            params: vec![0.0; parameter_count(n, p)],
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn enc_w_range(&self) -> std::ops::Range<usize> {
        0..self.p * self.n
    }

    fn enc_b_range(&self) -> std::ops::Range<usize> {
        let s = self.p * self.n;
        s..s + self.p
    }

    fn dec_w_range(&self) -> std::ops::Range<usize> {
        let s = self.p * self.n + self.p;
        s..s + self.n * self.p
    }

    fn dec_b_range(&self) -> std::ops::Range<usize> {
        let s = 2 * self.p * self.n + self.p;
        s..s + self.n
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn forward_into(&self, x: &[f64], hidden: &mut [f64], output: &mut [f64]) {
        let enc_w = &self.params[self.enc_w_range()];
        let enc_b = &self.params[self.enc_b_range()];
        let dec_w = &self.params[self.dec_w_range()];
        let dec_b = &self.params[self.dec_b_range()];
        for (j, h) in hidden.iter_mut().enumerate() {
            let row = &enc_w[j * self.n..(j + 1) * self.n];
            let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + enc_b[j];
            *h = sigmoid(z);
        }
        for (i, y) in output.iter_mut().enumerate() {
            let row = &dec_w[i * self.p..(i + 1) * self.p];
            let z: f64 = row.iter().zip(hidden.iter()).map(|(w, h)| w * h).sum::<f64>() + dec_b[i];
            *y = sigmoid(z);
        }
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x)?;
        let mut hidden = vec![0.0; self.p];
        let mut output = vec![0.0; self.n];
        self.forward_into(x, &mut hidden, &mut output);
        Ok(hidden)
    }

    /// `decode(encode(x))`.
    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x)?;
        let mut hidden = vec![0.0; self.p];
        let mut output = vec![0.0; self.n];
        self.forward_into(x, &mut hidden, &mut output);
        Ok(output)
    }

    /// Mean squared reconstruction error of one input.
    pub fn reconstruction_error(&self, x: &[f64]) -> Result<f64> {
        let y = self.reconstruct(x)?;
        Ok(mse(&y, x))
    }

    /// Mean loss over `samples` and its gradient with respect to
    /// [`Autoencoder::params`].
    pub fn loss_and_gradient<S: AsRef<[f64]>>(&self, samples: &[S]) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.params.len()];
        let loss = self.accumulate_gradient(samples.iter().map(AsRef::as_ref), &mut grad)?;
        Ok((loss, grad))
    }

    /// Adds the batch-mean gradient into `grad` and returns the batch-mean loss.
    fn accumulate_gradient<'s>(
        &self,
        batch: impl ExactSizeIterator<Item = &'s [f64]>,
        grad: &mut [f64],
    ) -> Result<f64> {
        let (n, p) = (self.n, self.p);
        let count = batch.len();
        if count == 0 {
            return Err(Error::InvalidParameter("empty batch".into()));
        }
        let scale = 1.0 / count as f64;
        let dec_w = &self.params[self.dec_w_range()];
        let (enc_w_r, enc_b_r, dec_w_r, dec_b_r) = (
            self.enc_w_range(),
            self.enc_b_range(),
            self.dec_w_range(),
            self.dec_b_range(),
        );

        let mut hidden = vec![0.0; p];
        let mut output = vec![0.0; n];
        let mut delta_out = vec![0.0; n];
        let mut delta_hidden = vec![0.0; p];
        let mut loss = 0.0;
        for x in batch {
            self.check_len(x)?;
            self.forward_into(x, &mut hidden, &mut output);
            loss += mse(&output, x);

            for i in 0..n {
                let y = output[i];
                delta_out[i] = scale * 2.0 * (y - x[i]) / n as f64 * y * (1.0 - y);
            }
            delta_hidden.fill(0.0);
            {
                let g_dec_w = &mut grad[dec_w_r.clone()];
                for i in 0..n {
                    let d = delta_out[i];
                    let w_row = &dec_w[i * p..(i + 1) * p];
                    let g_row = &mut g_dec_w[i * p..(i + 1) * p];
                    for j in 0..p {
                        g_row[j] += d * hidden[j];
                        delta_hidden[j] += d * w_row[j];
                    }
                }
            }
            for (g, d) in grad[dec_b_r.clone()].iter_mut().zip(&delta_out) {
                *g += d;
            }
            for j in 0..p {
                let h = hidden[j];
                delta_hidden[j] *= h * (1.0 - h);
            }
            {
                let g_enc_w = &mut grad[enc_w_r.clone()];
                for j in 0..p {
                    let d = delta_hidden[j];
                    let g_row = &mut g_enc_w[j * n..(j + 1) * n];
                    for (g, v) in g_row.iter_mut().zip(x) {
                        *g += d * v;
                    }
                }
            }
            for (g, d) in grad[enc_b_r.clone()].iter_mut().zip(&delta_hidden) {
                *g += d;
            }
        }
        Ok(loss * scale)
    }

    /// Layout: magic `AENC`, version, `n: u32`, `p: u32`, then the parameter
    /// buffer as little-endian f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::with_header(MODEL_MAGIC, MODEL_VERSION);
        enc.u32(self.n as u32);
        enc.u32(self.p as u32);
        enc.f64s(&self.params);
        enc.finish()
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut dec = Decoder::new(bytes, path, MODEL_MAGIC, MODEL_VERSION)?;
        let n = dec.u32()? as usize;
        let p = dec.u32()? as usize;
        if p == 0 || p >= n {
            return Err(dec.error(&format!("invalid topology {n}/{p}/{n}")));
        }
        let params = dec.f64s(parameter_count(n, p))?;
        dec.finish()?;
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!("{}: non-finite weight", path.display())));
        }
        Ok(Self { n, p, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&read_file(path)?, path)
    }
}

const MODEL_MAGIC: &[u8; 4] = b"AENC";
const MODEL_VERSION: u32 = 1;

fn mse(y: &[f64], x: &[f64]) -> f64 {
    y.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Samples per gradient step; anything `>=` the sample count is full-batch.
    pub batch_size: usize,
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            learning_rate: 0.1,
            batch_size: 32,
            seed: 0,
            init_scale: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Mini-batch gradient descent on the mean squared reconstruction error.
///
/// Sample order is reshuffled every epoch from `cfg.seed`. Returns the trained
/// network and the mean loss of each epoch, measured on the forward passes of
/// that epoch (before each batch's update).
pub fn train_autoencoder<S: AsRef<[f64]> + Sync>(
    mut ae: Autoencoder,
    samples: &[S],
    cfg: &TrainConfig,
) -> Result<(Autoencoder, Vec<f64>)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidParameter("no training samples".into()));
    }
    for s in samples {
        ae.check_len(s.as_ref())?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut grad = vec![0.0; ae.params.len()];
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut weighted_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grad.fill(0.0);
            let loss = ae.accumulate_gradient(batch.iter().map(|&i| samples[i].as_ref()), &mut grad)?;
            weighted_loss += loss * batch.len() as f64;
            for (w, g) in ae.params.iter_mut().zip(&grad) {
                *w -= cfg.learning_rate * g;
            }
        }
        let epoch_loss = weighted_loss / samples.len() as f64;
        if !epoch_loss.is_finite() || ae.params.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFiniteLoss { epoch: epoch + 1 });
        }
        epoch_losses.push(epoch_loss);
    }
    Ok((ae, epoch_losses))
}

/// Bilinearly resamples a `width x height` block to `side x side` and scales
/// intensities to `[0, 1]`, row-major.
///
/// Corner pixels map onto corner pixels: output sample `i` reads source
/// coordinate `i * (width - 1) / (side - 1)`.
pub fn resample_block(pixels: &[u8], width: usize, height: usize, side: usize) -> Result<Vec<f64>> {
    if width < 2 || height < 2 || pixels.len() != width * height {
        return Err(Error::InvalidImage(format!(
            "degenerate block {width}x{height} ({} pixels)",
            pixels.len()
        )));
    }
    if side < 2 {
        return Err(Error::InvalidParameter(format!("resample side {side} < 2")));
    }
    let px = |x: usize, y: usize| pixels[y * width + x] as f64;
    let axis = |i: usize, len: usize| -> (usize, usize, f64) {
        let pos = (i * (len - 1)) as f64 / (side - 1) as f64;
        let lo = (pos.floor() as usize).min(len - 2);
        (lo, lo + 1, pos - lo as f64)
    };
    let mut out = Vec::with_capacity(side * side);
    for oy in 0..side {
        let (y0, y1, fy) = axis(oy, height);
        for ox in 0..side {
            let (x0, x1, fx) = axis(ox, width);
            let top = px(x0, y0) * (1.0 - fx) + px(x1, y0) * fx;
            let bottom = px(x0, y1) * (1.0 - fx) + px(x1, y1) * fx;
            out.push((top * (1.0 - fy) + bottom * fy) / 255.0);
        }
    }
    Ok(out)
}

/// Resampled pixel vectors of every block of `image`, in block order.
pub fn block_samples(image: &GrayImage, k: usize, side: usize) -> Result<Vec<Vec<f64>>> {
    let grid = block_grid(image, k)?;
    grid.rects()
        .iter()
        .map(|r| resample_block(&image.crop_pixels(*r), r.width, r.height, side))
        .collect()
}

/// Per-class, per-block-position accumulated reconstruction error.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorHistogram {
    num_classes: usize,
    k: usize,
    sums: Vec<f64>,
    counts: Vec<u64>,
}

const HIST_MAGIC: &[u8; 4] = b"ERRH";
const HIST_VERSION: u32 = 1;

impl ErrorHistogram {
    pub fn new(num_classes: usize, k: usize) -> Self {
        Self {
            num_classes,
            k,
            sums: vec![0.0; num_classes * k * k],
            counts: vec![0; num_classes * k * k],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_blocks(&self) -> usize {
        self.k * self.k
    }

    fn row(&self, class: usize) -> Result<std::ops::Range<usize>> {
        if class >= self.num_classes {
            return Err(Error::ClassOutOfRange {
                class,
                classes: self.num_classes,
            });
        }
        let b = self.num_blocks();
        Ok(class * b..(class + 1) * b)
    }

    /// Adds one image's per-block errors to `class`.
    pub fn add_image(&mut self, class: usize, block_errors: &[f64]) -> Result<()> {
        let row = self.row(class)?;
        if block_errors.len() != row.len() {
            return Err(Error::DimensionMismatch {
                expected: row.len(),
                actual: block_errors.len(),
            });
        }
        for ((s, c), e) in self.sums[row.clone()]
            .iter_mut()
            .zip(&mut self.counts[row])
            .zip(block_errors)
        {
            *s += e;
            *c += 1;
        }
        Ok(())
    }

    pub fn sums(&self, class: usize) -> Result<&[f64]> {
        Ok(&self.sums[self.row(class)?])
    }

    pub fn counts(&self, class: usize) -> Result<&[u64]> {
        Ok(&self.counts[self.row(class)?])
    }

    /// Mean error per block position of `class`; fails if the class has no
    /// samples.
    pub fn mean_errors(&self, class: usize) -> Result<Vec<f64>> {
        let row = self.row(class)?;
        if self.counts[row.clone()].contains(&0) {
            return Err(Error::EmptyClass { class });
        }
        Ok(self.sums[row.clone()]
            .iter()
            .zip(&self.counts[row])
            .map(|(s, &c)| s / c as f64)
            .collect())
    }

    /// Layout: magic `ERRH`, version, `classes: u32`, `k: u32`, then the
    /// `C x k^2` sums (f64) and counts (u64), row-major, little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::with_header(HIST_MAGIC, HIST_VERSION);
        enc.u32(self.num_classes as u32);
        enc.u32(self.k as u32);
        enc.f64s(&self.sums);
        for &c in &self.counts {
            enc.u64(c);
        }
        enc.finish()
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut dec = Decoder::new(bytes, path, HIST_MAGIC, HIST_VERSION)?;
        let num_classes = dec.u32()? as usize;
        let k = dec.u32()? as usize;
        if k == 0 || k > 64 {
            return Err(dec.error(&format!("implausible grid order {k}")));
        }
        let len = num_classes * k * k;
        let sums = dec.f64s(len)?;
        let counts = (0..len).map(|_| dec.u64()).collect::<Result<Vec<_>>>()?;
        dec.finish()?;
        if sums.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Format(format!("{}: invalid error sum", path.display())));
        }
        Ok(Self {
            num_classes,
            k,
            sums,
            counts,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&read_file(path)?, path)
    }
}

/// Reconstruction error of each block of `image`, in block order.
pub fn block_errors(ae: &Autoencoder, image: &GrayImage, k: usize, side: usize) -> Result<Vec<f64>> {
    if side * side != ae.n() {
        return Err(Error::DimensionMismatch {
            expected: ae.n(),
            actual: side * side,
        });
    }
    block_samples(image, k, side)?
        .iter()
        .map(|x| ae.reconstruction_error(x))
        .collect()
}

/// Accumulates block errors of already-loaded `(class, image)` pairs.
/// Errors are computed in parallel but merged in input order.
pub fn error_histogram_from_images(
    ae: &Autoencoder,
    images: &[(usize, &GrayImage)],
    num_classes: usize,
    k: usize,
    side: usize,
) -> Result<ErrorHistogram> {
    let per_image: Vec<Vec<f64>> = images
        .par_iter()
        .map(|(_, img)| block_errors(ae, img, k, side))
        .collect::<Result<_>>()?;
    let mut hist = ErrorHistogram::new(num_classes, k);
    for ((class, _), errors) in images.iter().zip(&per_image) {
        hist.add_image(*class, errors)?;
    }
    Ok(hist)
}

/// Builds the error histogram over the training split of `manifest`.
pub fn build_error_histogram(
    ae: &Autoencoder,
    manifest: &DatasetManifest,
    k: usize,
    side: usize,
) -> Result<ErrorHistogram> {
    let loaded: Vec<(usize, GrayImage)> = manifest
        .split(Split::Train)
        .map(|(_, e)| Ok((e.class, load_image(manifest.resolve(e))?)))
        .collect::<Result<_>>()?;
    if loaded.is_empty() {
        return Err(Error::InvalidParameter("training split is empty".into()));
    }
    let refs: Vec<(usize, &GrayImage)> = loaded.iter().map(|(c, i)| (*c, i)).collect();
    error_histogram_from_images(ae, &refs, manifest.num_classes(), k, side)
}
