//! RBF-kernel support vector machines trained with sequential minimal
//! optimization, combined one-vs-one for multiclass problems.
//!
//! The binary solver follows Platt's SMO: an outer loop alternates between
//! sweeps over all samples and over unbounded multipliers; the second index
//! is chosen by the largest `|E1 - E2|`, falling back to scans that start at
//! a seeded random offset. Decision values are `f(x) = sum_i coef_i K(sv_i, x) + b`
//! with `coef_i = alpha_i y_i`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::codec::{read_file, write_file, Decoder, Encoder};
use crate::dataset::mix_seed;
use crate::error::{Error, Result};

/// Multipliers below this magnitude are treated as zero and pruned.
pub const ALPHA_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmParams {
    pub c: f64,
    pub gamma: f64,
    pub tol: f64,
    pub max_passes: usize,
}

impl SvmParams {
    /// Defaults with `gamma = 1 / dim`.
    pub fn for_dimension(dim: usize) -> Self {
        Self {
            c: 10.0,
            gamma: 1.0 / dim.max(1) as f64,
            tol: 1e-3,
            max_passes: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("C", self.c), ("gamma", self.gamma), ("tol", self.tol)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("SVM {name} = {v} must be positive")));
            }
        }
        if self.max_passes == 0 {
            return Err(Error::InvalidParameter("SVM max_passes must be >= 1".into()));
        }
        Ok(())
    }
}

fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `exp(-gamma * |x - y|^2)`.
pub fn rbf_kernel(x: &[f64], y: &[f64], gamma: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    Ok((-gamma * squared_distance(x, y)).exp())
}

/// Dense kernel matrix of `samples`, row-major.
pub fn kernel_matrix<S: AsRef<[f64]>>(samples: &[S], gamma: f64) -> Vec<f64> {
    let n = samples.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        k[i * n + i] = 1.0;
        for j in i + 1..n {
            let v = (-gamma * squared_distance(samples[i].as_ref(), samples[j].as_ref())).exp();
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

/// `sum alpha - 1/2 sum_ij alpha_i alpha_j y_i y_j K_ij`.
pub fn dual_objective(kernel: &[f64], labels: &[f64], alphas: &[f64]) -> f64 {
    let n = labels.len();
    let mut quad = 0.0;
    for i in 0..n {
        if alphas[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            quad += alphas[i] * alphas[j] * labels[i] * labels[j] * kernel[i * n + j];
        }
    }
    alphas.iter().sum::<f64>() - 0.5 * quad
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinarySvmModel {
    gamma: f64,
    support_vectors: Vec<Vec<f64>>,
    coef: Vec<f64>,
    bias: f64,
}

impl BinarySvmModel {
    pub fn support_vectors(&self) -> &[Vec<f64>] {
        &self.support_vectors
    }

    /// Signed multipliers `alpha_i y_i` of the support vectors.
    pub fn coefficients(&self) -> &[f64] {
        &self.coef
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn dim(&self) -> usize {
        self.support_vectors.first().map_or(0, Vec::len)
    }

    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        if !self.support_vectors.is_empty() && x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok(self
            .support_vectors
            .iter()
            .zip(&self.coef)
            .map(|(sv, c)| c * (-self.gamma * squared_distance(sv, x)).exp())
            .sum::<f64>()
            + self.bias)
    }

    /// `+1` or `-1`; a zero decision value maps to `-1`.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(if self.decision(x)? > 0.0 { 1.0 } else { -1.0 })
    }
}

/// A trained binary model plus the solver state needed for audits.
#[derive(Debug, Clone)]
pub struct BinaryTraining {
    pub model: BinarySvmModel,
    /// Multiplier of every training sample (not just support vectors).
    pub alphas: Vec<f64>,
    pub passes: usize,
    /// False when `max_passes` stopped the solver before KKT convergence.
    pub converged: bool,
}

struct Smo<'a> {
    kernel: &'a [f64],
    y: &'a [f64],
    alpha: Vec<f64>,
    errors: Vec<f64>,
    b: f64,
    c: f64,
    tol: f64,
    n: usize,
    rng: ChaCha8Rng,
}

impl Smo<'_> {
    fn k(&self, i: usize, j: usize) -> f64 {
        self.kernel[i * self.n + j]
    }

    fn is_bound(&self, i: usize) -> bool {
        self.alpha[i] <= 0.0 || self.alpha[i] >= self.c
    }

    fn take_step(&mut self, i1: usize, i2: usize) -> bool {
        if i1 == i2 {
            return false;
        }
        let (a1_old, a2_old) = (self.alpha[i1], self.alpha[i2]);
        let (y1, y2) = (self.y[i1], self.y[i2]);
        let (e1, e2) = (self.errors[i1], self.errors[i2]);
        let s = y1 * y2;
        let (lo, hi) = if y1 != y2 {
            ((a2_old - a1_old).max(0.0), (self.c + a2_old - a1_old).min(self.c))
        } else {
            ((a1_old + a2_old - self.c).max(0.0), (a1_old + a2_old).min(self.c))
        };
        if hi - lo <= 0.0 {
            return false;
        }
        let (k11, k12, k22) = (self.k(i1, i1), self.k(i1, i2), self.k(i2, i2));
        let eta = k11 + k22 - 2.0 * k12;
        let mut a2 = if eta > 0.0 {
            (a2_old + y2 * (e1 - e2) / eta).clamp(lo, hi)
        } else {
            // negated dual objective restricted to the line, as a function of a2
            let f1 = y1 * (e1 - self.b) - a1_old * k11 - s * a2_old * k12;
            let f2 = y2 * (e2 - self.b) - s * a1_old * k12 - a2_old * k22;
            let obj = |a2: f64| {
                let a1 = a1_old + s * (a2_old - a2);
                a1 * f1 + a2 * f2 + 0.5 * a1 * a1 * k11 + 0.5 * a2 * a2 * k22 + s * a1 * a2 * k12
            };
            let (l_obj, h_obj) = (obj(lo), obj(hi));
            if l_obj < h_obj - 1e-12 {
                lo
            } else if l_obj > h_obj + 1e-12 {
                hi
            } else {
                a2_old
            }
        };
        if a2 < ALPHA_EPS {
            a2 = 0.0;
        } else if a2 > self.c - ALPHA_EPS {
            a2 = self.c;
        }
        if (a2 - a2_old).abs() < 1e-12 * (a2 + a2_old + 1e-12) {
            return false;
        }
        let mut a1 = a1_old + s * (a2_old - a2);
        if a1 < ALPHA_EPS {
            a1 = 0.0;
        } else if a1 > self.c - ALPHA_EPS {
            a1 = self.c;
        }

        let d1 = y1 * (a1 - a1_old);
        let d2 = y2 * (a2 - a2_old);
        let b1 = self.b - e1 - d1 * k11 - d2 * k12;
        let b2 = self.b - e2 - d1 * k12 - d2 * k22;
        let b_new = if a1 > 0.0 && a1 < self.c {
            b1
        } else if a2 > 0.0 && a2 < self.c {
            b2
        } else {
            0.5 * (b1 + b2)
        };
        let db = b_new - self.b;
        for i in 0..self.n {
            self.errors[i] += d1 * self.kernel[i * self.n + i1] + d2 * self.kernel[i * self.n + i2] + db;
        }
        self.alpha[i1] = a1;
        self.alpha[i2] = a2;
        self.b = b_new;
        true
    }

    fn examine(&mut self, i2: usize) -> bool {
        let y2 = self.y[i2];
        let a2 = self.alpha[i2];
        let r2 = self.errors[i2] * y2;
        if !((r2 < -self.tol && a2 < self.c) || (r2 > self.tol && a2 > 0.0)) {
            return false;
        }
        let e2 = self.errors[i2];
        let unbound: Vec<usize> = (0..self.n).filter(|&i| !self.is_bound(i)).collect();
        if unbound.len() > 1 {
            let mut best = None;
            let mut best_gap = -1.0;
            for &i in &unbound {
                let gap = (self.errors[i] - e2).abs();
                if gap > best_gap {
                    best_gap = gap;
                    best = Some(i);
                }
            }
            if let Some(i1) = best {
                if self.take_step(i1, i2) {
                    return true;
                }
            }
        }
        if !unbound.is_empty() {
            let start = self.rng.gen_range(0..unbound.len());
            for off in 0..unbound.len() {
                let i1 = unbound[(start + off) % unbound.len()];
                if self.take_step(i1, i2) {
                    return true;
                }
            }
        }
        let start = self.rng.gen_range(0..self.n);
        for off in 0..self.n {
            let i1 = (start + off) % self.n;
            if self.take_step(i1, i2) {
                return true;
            }
        }
        false
    }

    /// Replaces the running bias with the one minimising the largest KKT
    /// residual of the final multipliers. Margins are recomputed from
    /// scratch rather than read from the error cache.
    fn refine_bias(&mut self) {
        // every sample asks for b >= anchor, b <= anchor, or both, where
        // anchor is the bias putting it exactly on its margin
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        let mut g = vec![0.0; self.n];
        for (i, gi) in g.iter_mut().enumerate() {
            *gi = (0..self.n).map(|j| self.alpha[j] * self.y[j] * self.k(i, j)).sum::<f64>();
            let anchor = self.y[i] - *gi;
            let at_zero = self.alpha[i] < ALPHA_EPS;
            let at_c = self.alpha[i] > self.c - ALPHA_EPS;
            let positive = self.y[i] > 0.0;
            if !at_zero && !at_c || at_zero == positive {
                lo = lo.max(anchor);
            }
            if !at_zero && !at_c || at_zero != positive {
                hi = hi.min(anchor);
            }
        }
        self.b = if lo <= hi {
            self.b.clamp(lo, hi)
        } else {
            0.5 * (lo + hi)
        };
        for ((e, gi), yi) in self.errors.iter_mut().zip(&g).zip(self.y) {
            *e = gi + self.b - yi;
        }
    }
}

fn check_binary_inputs<S: AsRef<[f64]>>(samples: &[S], labels: &[f64]) -> Result<usize> {
    if samples.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: samples.len(),
            actual: labels.len(),
        });
    }
    let dim = samples.first().map_or(0, |s| s.as_ref().len());
    for s in samples {
        let s = s.as_ref();
        if s.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: s.len(),
            });
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite feature value".into()));
        }
    }
    if let Some(bad) = labels.iter().find(|&&l| l != 1.0 && l != -1.0) {
        return Err(Error::InvalidParameter(format!("label {bad} is not +-1")));
    }
    let pos = labels.iter().filter(|&&l| l > 0.0).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::InvalidParameter(
            "binary SVM needs samples of both classes".into(),
        ));
    }
    Ok(dim)
}

/// Trains a binary SVM; labels must be `+1` / `-1`.
pub fn train_binary_svm<S: AsRef<[f64]>>(
    samples: &[S],
    labels: &[f64],
    params: &SvmParams,
    seed: u64,
) -> Result<BinarySvmModel> {
    Ok(train_binary_svm_detailed(samples, labels, params, seed)?.model)
}

pub fn train_binary_svm_detailed<S: AsRef<[f64]>>(
    samples: &[S],
    labels: &[f64],
    params: &SvmParams,
    seed: u64,
) -> Result<BinaryTraining> {
    params.validate()?;
    check_binary_inputs(samples, labels)?;
    let n = samples.len();
    let kernel = kernel_matrix(samples, params.gamma);
    let mut smo = Smo {
        kernel: &kernel,
        y: labels,
        alpha: vec![0.0; n],
        // f = 0 initially, so E_i = -y_i
        errors: labels.iter().map(|y| -y).collect(),
        b: 0.0,
        c: params.c,
        tol: params.tol,
        n,
        rng: ChaCha8Rng::seed_from_u64(seed),
    };

    let mut examine_all = true;
    let mut changed = 0usize;
    let mut passes = 0usize;
    while (changed > 0 || examine_all) && passes < params.max_passes {
        changed = 0;
        if examine_all {
            for i in 0..n {
                changed += smo.examine(i) as usize;
            }
        } else {
            for i in 0..n {
                if !smo.is_bound(i) {
                    changed += smo.examine(i) as usize;
                }
            }
        }
        passes += 1;
        if examine_all {
            examine_all = false;
        } else if changed == 0 {
            examine_all = true;
        }
    }
    let converged = !(changed > 0 || examine_all);
    smo.refine_bias();

    let mut support_vectors = Vec::new();
    let mut coef = Vec::new();
    for i in 0..n {
        if smo.alpha[i] >= ALPHA_EPS {
            support_vectors.push(samples[i].as_ref().to_vec());
            coef.push(smo.alpha[i] * labels[i]);
        }
    }
    Ok(BinaryTraining {
        model: BinarySvmModel {
            gamma: params.gamma,
            support_vectors,
            coef,
            bias: smo.b,
        },
        alphas: smo.alpha,
        passes,
        converged,
    })
}

/// Worst deviation from the dual constraints and KKT conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    /// `|sum alpha_i y_i|`.
    pub equality_residual: f64,
    /// Largest amount by which any `alpha_i` leaves `[0, C]`.
    pub box_violation: f64,
    /// Largest margin-condition violation of `y_i f(x_i)` against 1.
    pub max_kkt_violation: f64,
}

impl KktReport {
    pub fn satisfied(&self, tol: f64) -> bool {
        self.equality_residual <= tol && self.box_violation <= 0.0 && self.max_kkt_violation <= tol
    }
}

pub fn kkt_report<S: AsRef<[f64]>>(
    samples: &[S],
    labels: &[f64],
    alphas: &[f64],
    model: &BinarySvmModel,
    c: f64,
) -> Result<KktReport> {
    let equality_residual = alphas.iter().zip(labels).map(|(a, y)| a * y).sum::<f64>().abs();
    let box_violation = alphas
        .iter()
        .map(|&a| (-a).max(a - c).max(0.0))
        .fold(0.0, f64::max);
    let mut max_kkt_violation: f64 = 0.0;
    for ((x, &y), &a) in samples.iter().zip(labels).zip(alphas) {
        let margin = y * model.decision(x.as_ref())?;
        let violation = if a < ALPHA_EPS {
            (1.0 - margin).max(0.0)
        } else if a > c - ALPHA_EPS {
            (margin - 1.0).max(0.0)
        } else {
            (margin - 1.0).abs()
        };
        max_kkt_violation = max_kkt_violation.max(violation);
    }
    Ok(KktReport {
        equality_residual,
        box_violation,
        max_kkt_violation,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairModel {
    /// Class mapped to `-1`.
    pub a: usize,
    /// Class mapped to `+1`; always `a < b`.
    pub b: usize,
    pub model: BinarySvmModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MulticlassSvmModel {
    params: SvmParams,
    classes: Vec<usize>,
    pairs: Vec<PairModel>,
}

/// Audit data for one pairwise problem.
#[derive(Debug, Clone)]
pub struct PairTraining {
    pub a: usize,
    pub b: usize,
    pub passes: usize,
    pub converged: bool,
    pub kkt: KktReport,
}

/// Trains one binary SVM per class pair (`a -> -1`, `b -> +1`).
pub fn train_multiclass<S: AsRef<[f64]> + Sync>(
    samples: &[S],
    labels: &[usize],
    num_classes: usize,
    params: &SvmParams,
    seed: u64,
) -> Result<MulticlassSvmModel> {
    Ok(train_multiclass_detailed(samples, labels, num_classes, params, seed)?.0)
}

pub fn train_multiclass_detailed<S: AsRef<[f64]> + Sync>(
    samples: &[S],
    labels: &[usize],
    num_classes: usize,
    params: &SvmParams,
    seed: u64,
) -> Result<(MulticlassSvmModel, Vec<PairTraining>)> {
    params.validate()?;
    if samples.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: samples.len(),
            actual: labels.len(),
        });
    }
    if num_classes < 2 {
        return Err(Error::InvalidParameter(format!(
            "multiclass SVM needs at least 2 classes, got {num_classes}"
        )));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(Error::ClassOutOfRange {
                class: l,
                classes: num_classes,
            });
        }
        members[l].push(i);
    }
    if let Some(empty) = members.iter().position(Vec::is_empty) {
        return Err(Error::EmptyClass { class: empty });
    }
    let pair_keys: Vec<(usize, usize)> = (0..num_classes)
        .flat_map(|a| (a + 1..num_classes).map(move |b| (a, b)))
        .collect();
    let trained: Vec<(PairModel, PairTraining)> = pair_keys
        .par_iter()
        .enumerate()
        .map(|(pair_index, &(a, b))| {
            let idx: Vec<usize> = members[a].iter().chain(&members[b]).copied().collect();
            let xs: Vec<&[f64]> = idx.iter().map(|&i| samples[i].as_ref()).collect();
            let ys: Vec<f64> = idx
                .iter()
                .map(|&i| if labels[i] == a { -1.0 } else { 1.0 })
                .collect();
            let t = train_binary_svm_detailed(&xs, &ys, params, mix_seed(seed, pair_index as u64))?;
            let kkt = kkt_report(&xs, &ys, &t.alphas, &t.model, params.c)?;
            Ok((
                PairModel { a, b, model: t.model },
                PairTraining {
                    a,
                    b,
                    passes: t.passes,
                    converged: t.converged,
                    kkt,
                },
            ))
        })
        .collect::<Result<_>>()?;
    let (pairs, reports) = trained.into_iter().unzip();
    Ok((
        MulticlassSvmModel {
            params: *params,
            classes: (0..num_classes).collect(),
            pairs,
        },
        reports,
    ))
}

/// Per-class voting tallies for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct Votes {
    pub votes: Vec<usize>,
    /// Sum of `|decision|` over the pairwise contests each class won.
    pub confidence: Vec<f64>,
}

impl MulticlassSvmModel {
    pub fn params(&self) -> &SvmParams {
        &self.params
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn pairs(&self) -> &[PairModel] {
        &self.pairs
    }

    pub fn votes(&self, x: &[f64]) -> Result<Votes> {
        let c = self.classes.len();
        let mut votes = vec![0usize; c];
        let mut confidence = vec![0.0; c];
        for pair in &self.pairs {
            let f = pair.model.decision(x)?;
            let winner = if f > 0.0 { pair.b } else { pair.a };
            votes[winner] += 1;
            confidence[winner] += f.abs();
        }
        Ok(Votes { votes, confidence })
    }

    /// Majority vote; ties go to the larger confidence, then the smaller
    /// class index.
    pub fn classify(&self, x: &[f64]) -> Result<usize> {
        let v = self.votes(x)?;
        Ok(resolve_votes(&v))
    }

    /// Layout: magic `SVMM`, version, `C`, `gamma`, `tol` (f64),
    /// `max_passes: u32`, class count and class list (u32), pair count, then
    /// per pair `a`, `b`, support-vector count, dimension (u32), vectors,
    /// signed multipliers and bias (f64). Little-endian throughout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::with_header(SVM_MAGIC, SVM_VERSION);
        enc.f64(self.params.c);
        enc.f64(self.params.gamma);
        enc.f64(self.params.tol);
        enc.u32(self.params.max_passes as u32);
        enc.u32(self.classes.len() as u32);
        for &c in &self.classes {
            enc.u32(c as u32);
        }
        enc.u32(self.pairs.len() as u32);
        for p in &self.pairs {
            enc.u32(p.a as u32);
            enc.u32(p.b as u32);
            enc.u32(p.model.support_vectors.len() as u32);
            enc.u32(p.model.dim() as u32);
            for sv in &p.model.support_vectors {
                enc.f64s(sv);
            }
            enc.f64s(&p.model.coef);
            enc.f64(p.model.bias);
        }
        enc.finish()
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut dec = Decoder::new(bytes, path, SVM_MAGIC, SVM_VERSION)?;
        let params = SvmParams {
            c: dec.f64()?,
            gamma: dec.f64()?,
            tol: dec.f64()?,
            max_passes: dec.u32()? as usize,
        };
        params.validate()?;
        let class_count = dec.u32()? as usize;
        let classes = (0..class_count)
            .map(|_| dec.u32().map(|c| c as usize))
            .collect::<Result<Vec<_>>>()?;
        let pair_count = dec.u32()? as usize;
        if pair_count != class_count * class_count.saturating_sub(1) / 2 {
            return Err(dec.error(&format!("{pair_count} pairs for {class_count} classes")));
        }
        let mut pairs = Vec::with_capacity(pair_count);
        for _ in 0..pair_count {
            let a = dec.u32()? as usize;
            let b = dec.u32()? as usize;
            if a >= b || b >= class_count {
                return Err(dec.error(&format!("invalid pair ({a}, {b})")));
            }
            let sv_count = dec.u32()? as usize;
            let dim = dec.u32()? as usize;
            let support_vectors = (0..sv_count)
                .map(|_| dec.f64s(dim))
                .collect::<Result<Vec<_>>>()?;
            let coef = dec.f64s(sv_count)?;
            let bias = dec.f64()?;
            pairs.push(PairModel {
                a,
                b,
                model: BinarySvmModel {
                    gamma: params.gamma,
                    support_vectors,
                    coef,
                    bias,
                },
            });
        }
        dec.finish()?;
        Ok(Self {
            params,
            classes,
            pairs,
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

const SVM_MAGIC: &[u8; 4] = b"SVMM";
const SVM_VERSION: u32 = 1;

/// Winner of a vote table under the tie-breaking rules of
/// [`MulticlassSvmModel::classify`].
pub fn resolve_votes(v: &Votes) -> usize {
    let mut best = 0;
    for c in 1..v.votes.len() {
        let better = v.votes[c] > v.votes[best]
            || (v.votes[c] == v.votes[best] && v.confidence[c] > v.confidence[best]);
        if better {
            best = c;
        }
    }
    best
}
