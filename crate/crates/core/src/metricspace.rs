//! Pooled multimodal embeddings and the two contrastive objectives trained
//! on them: supervised contrastive loss over pooled rows, and the symmetric
//! image-text (CLIP-style) loss used for pretraining.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::linalg::{dot, normalize_in_place, Matrix};
use crate::{Error, Result};

/// Whether similarities are divided or multiplied by the temperature.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TempMode {
    #[default]
    Divide,
    Multiply,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    pub temp: f64,
    pub temp_mode: TempMode,
    /// Keep the anchor's self-similarity in the softmax denominator.
    pub include_self: bool,
}

impl ContrastiveConfig {
    pub fn new(temp: f64) -> Self {
        Self { temp, temp_mode: TempMode::Divide, include_self: false }
    }

    /// Factor applied to every similarity before the softmax.
    pub fn logit_scale(&self) -> f64 {
        match self.temp_mode {
            TempMode::Divide => 1.0 / self.temp,
            TempMode::Multiply => self.temp,
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.temp > 0.0 && self.temp.is_finite()) {
            return Err(Error::invalid("temperature must be positive and finite"));
        }
        Ok(())
    }
}

/// Pools an image and a text embedding: `normalize(w·f + (1−w)·g)`.
/// The endpoints return the corresponding input unchanged.
pub fn pool(f: &[f64], g: &[f64], im_wt: f64) -> Result<Vec<f64>> {
    if f.len() != g.len() {
        return Err(Error::DimensionMismatch { expected: f.len(), got: g.len() });
    }
    if !(0.0..=1.0).contains(&im_wt) {
        return Err(Error::invalid("im_wt must lie in [0, 1]"));
    }
    if im_wt == 1.0 {
        return Ok(f.to_vec());
    }
    if im_wt == 0.0 {
        return Ok(g.to_vec());
    }
    let mut z: Vec<f64> = f.iter().zip(g).map(|(a, b)| im_wt * a + (1.0 - im_wt) * b).collect();
    normalize_in_place(&mut z).map_err(|_| Error::DegeneratePool)?;
    Ok(z)
}

/// A minibatch of per-modality and pooled unit embeddings with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledBatch {
    image: Matrix,
    text: Matrix,
    pooled: Matrix,
    labels: Vec<usize>,
    im_wt: f64,
}

impl PooledBatch {
    /// `image` and `text` rows must already be unit-norm.
    pub fn new(image: Matrix, text: Matrix, labels: Vec<usize>, im_wt: f64) -> Result<Self> {
        if image.rows() != text.rows() || image.cols() != text.cols() {
            return Err(Error::invalid("image and text embeddings must share a shape"));
        }
        if labels.len() != image.rows() {
            return Err(Error::DimensionMismatch { expected: image.rows(), got: labels.len() });
        }
        if labels.is_empty() {
            return Err(Error::invalid("batch has no instances"));
        }
        for r in image.iter_rows().chain(text.iter_rows()) {
            if (dot(r, r) - 1.0).abs() > 1e-6 {
                return Err(Error::invalid("modality embeddings must be unit-norm"));
            }
        }
        let mut pooled = Matrix::zeros(image.rows(), image.cols());
        for i in 0..image.rows() {
            let z = pool(image.row(i), text.row(i), im_wt)?;
            pooled.row_mut(i).copy_from_slice(&z);
        }
        Ok(Self { image, text, pooled, labels, im_wt })
    }

    pub fn image(&self) -> &Matrix {
        &self.image
    }

    pub fn text(&self) -> &Matrix {
        &self.text
    }

    pub fn pooled(&self) -> &Matrix {
        &self.pooled
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn im_wt(&self) -> f64 {
        self.im_wt
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossReport {
    pub value: f64,
    /// Loss term of each anchor; 0 for skipped anchors.
    pub per_anchor: Vec<f64>,
    /// Anchors without any in-batch positive.
    pub skipped_anchors: BTreeSet<usize>,
}

/// Supervised contrastive loss on the pooled rows of `batch`.
pub fn supcon_loss(batch: &PooledBatch, cfg: &ContrastiveConfig) -> Result<LossReport> {
    supcon_loss_embeddings(batch.pooled(), batch.labels(), cfg)
}

/// Gradient of [`supcon_loss`]'s value with respect to each pooled entry.
pub fn supcon_grad(batch: &PooledBatch, cfg: &ContrastiveConfig) -> Result<Matrix> {
    Ok(supcon_loss_and_grad(batch.pooled(), batch.labels(), cfg)?.1)
}

/// Supervised contrastive loss on an arbitrary embedding matrix.
///
/// For an anchor `i` with positives `P(i) = {p ≠ i : y_p = y_i}` and
/// candidates `A(i)` (all rows but `i`, or all rows with `include_self`):
/// `ℓ_i = −1/|P(i)| Σ_{p∈P(i)} log softmax_{A(i)}(c·z_i·z_j)_p`,
/// with `c` the logit scale. The value is the mean over anchors with a
/// nonempty `P(i)`; anchors without positives are skipped.
pub fn supcon_loss_embeddings<L: PartialEq>(z: &Matrix, labels: &[L], cfg: &ContrastiveConfig) -> Result<LossReport> {
    Ok(supcon_core(z, labels, cfg, false)?.0)
}

pub fn supcon_loss_and_grad<L: PartialEq>(z: &Matrix, labels: &[L], cfg: &ContrastiveConfig) -> Result<(LossReport, Matrix)> {
    let (report, grad) = supcon_core(z, labels, cfg, true)?;
    Ok((report, grad.expect("gradient requested")))
}

fn supcon_core<L: PartialEq>(
    z: &Matrix,
    labels: &[L],
    cfg: &ContrastiveConfig,
    want_grad: bool,
) -> Result<(LossReport, Option<Matrix>)> {
    cfg.check()?;
    let b = z.rows();
    if b < 2 {
        return Err(Error::invalid("supervised contrastive loss needs at least two instances"));
    }
    if labels.len() != b {
        return Err(Error::DimensionMismatch { expected: b, got: labels.len() });
    }
    let c = cfg.logit_scale();
    let sims = z.mul_transpose(z);

    let mut per_anchor = vec![0.0; b];
    let mut skipped = BTreeSet::new();
    // dℓ_i/d(logit_ij), assembled row by row when a gradient is wanted.
    let mut dlogits = want_grad.then(|| Matrix::zeros(b, b));
    let mut logits = vec![0.0; b];
    let mut probs = vec![0.0; b];

    for i in 0..b {
        let positives: Vec<usize> = (0..b).filter(|&p| p != i && labels[p] == labels[i]).collect();
        if positives.is_empty() {
            skipped.insert(i);
            continue;
        }
        let in_denominator = |j: usize| cfg.include_self || j != i;
        let mut max = f64::NEG_INFINITY;
        for j in 0..b {
            logits[j] = c * sims.get(i, j);
            if in_denominator(j) {
                max = max.max(logits[j]);
            }
        }
        let mut sum = 0.0;
        for j in 0..b {
            if in_denominator(j) {
                probs[j] = (logits[j] - max).exp();
                sum += probs[j];
            } else {
                probs[j] = 0.0;
            }
        }
        let log_denominator = max + sum.ln();
        let inv_p = 1.0 / positives.len() as f64;
        let pos_mean: f64 = positives.iter().map(|&p| logits[p]).sum::<f64>() * inv_p;
        per_anchor[i] = log_denominator - pos_mean;

        if let Some(d) = dlogits.as_mut() {
            let row = d.row_mut(i);
            for j in 0..b {
                row[j] = probs[j] / sum;
            }
            for &p in &positives {
                row[p] -= inv_p;
            }
        }
    }

    let n_valid = b - skipped.len();
    let value = if n_valid == 0 {
        0.0
    } else {
        per_anchor.iter().sum::<f64>() / n_valid as f64
    };
    let report = LossReport { value, per_anchor, skipped_anchors: skipped };

    let grad = dlogits.map(|d| {
        // L = (1/N) Σ_i ℓ_i with logit_ij = c z_i·z_j, so
        // dL/dZ = (c/N) (D + Dᵀ) Z where D = dℓ/dlogits.
        let scale = if n_valid == 0 { 0.0 } else { c / n_valid as f64 };
        let mut sym = Matrix::zeros(b, b);
        for i in 0..b {
            for j in 0..b {
                sym.set(i, j, scale * (d.get(i, j) + d.get(j, i)));
            }
        }
        sym.matmul(z)
    });
    Ok((report, grad))
}

/// Symmetric image-text cross-entropy over the `B×B` similarity matrix,
/// matched pairs on the diagonal.
pub fn clip_loss(image: &Matrix, text: &Matrix, cfg: &ContrastiveConfig) -> Result<f64> {
    Ok(clip_core(image, text, cfg, false)?.0)
}

/// Loss with gradients with respect to the image and text rows.
pub fn clip_loss_and_grad(image: &Matrix, text: &Matrix, cfg: &ContrastiveConfig) -> Result<(f64, Matrix, Matrix)> {
    let (loss, grads) = clip_core(image, text, cfg, true)?;
    let (gi, gt) = grads.expect("gradient requested");
    Ok((loss, gi, gt))
}

fn clip_core(
    image: &Matrix,
    text: &Matrix,
    cfg: &ContrastiveConfig,
    want_grad: bool,
) -> Result<(f64, Option<(Matrix, Matrix)>)> {
    cfg.check()?;
    let b = image.rows();
    if b == 0 {
        return Err(Error::invalid("CLIP loss needs at least one pair"));
    }
    if text.rows() != b || text.cols() != image.cols() {
        return Err(Error::invalid("image and text embeddings must share a shape"));
    }
    let c = cfg.logit_scale();
    let mut logits = image.mul_transpose(text);
    logits.as_mut_slice().iter_mut().for_each(|x| *x *= c);

    // Row softmax (image → text) and column softmax (text → image).
    let mut row_sm = Matrix::zeros(b, b);
    let mut col_sm = Matrix::zeros(b, b);
    let mut row_loss = 0.0;
    let mut col_loss = 0.0;
    for i in 0..b {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&x| (x - max).exp()).sum();
        row_loss += max + sum.ln() - row[i];
        for j in 0..b {
            row_sm.set(i, j, (row[j] - max).exp() / sum);
        }
    }
    for j in 0..b {
        let max = (0..b).map(|i| logits.get(i, j)).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = (0..b).map(|i| (logits.get(i, j) - max).exp()).sum();
        col_loss += max + sum.ln() - logits.get(j, j);
        for i in 0..b {
            col_sm.set(i, j, (logits.get(i, j) - max).exp() / sum);
        }
    }
    let bf = b as f64;
    let loss = 0.5 * (row_loss / bf + col_loss / bf);
    if !want_grad {
        return Ok((loss, None));
    }
    // dL/dlogits = ½[(row_sm − I) + (col_sm − I)] / B.
    let mut d = Matrix::zeros(b, b);
    for i in 0..b {
        for j in 0..b {
            let eye = if i == j { 1.0 } else { 0.0 };
            d.set(i, j, c * 0.5 * ((row_sm.get(i, j) - eye) + (col_sm.get(i, j) - eye)) / bf);
        }
    }
    let grad_image = d.matmul(text);
    let grad_text = d.transpose().matmul(image);
    Ok((loss, Some((grad_image, grad_text))))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn pool_cases() {
        let z = pool(&[1.0, 0.0], &[0.0, 1.0], 0.5).unwrap();
        assert!((z[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((z[1] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        let f = [0.6, 0.8];
        let g = [0.8, -0.6];
        assert_eq!(pool(&f, &g, 1.0).unwrap(), f);
        assert_eq!(pool(&f, &g, 0.0).unwrap(), g);
        // Half weight is the normalized plain mean.
        let mean: Vec<f64> = f.iter().zip(&g).map(|(a, b)| (a + b) / 2.0).collect();
        let want = crate::vecindex::l2_normalize(&mean).unwrap();
        let got = pool(&f, &g, 0.5).unwrap();
        assert!(got.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-15));
        assert!(matches!(pool(&[1.0, 0.0], &[-1.0, 0.0], 0.5), Err(Error::DegeneratePool)));
    }

    #[test]
    fn supcon_identical_pair_is_zero() {
        let z = m(&[&[1.0, 0.0], &[1.0, 0.0]]);
        let r = supcon_loss_embeddings(&z, &[0, 0], &ContrastiveConfig::new(0.1)).unwrap();
        assert_eq!(r.value, 0.0);
        let (_, g) = supcon_loss_and_grad(&z, &[0, 0], &ContrastiveConfig::new(0.1)).unwrap();
        assert!(g.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn supcon_two_class_hand_value() {
        let z = m(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[0.0, 1.0]]);
        let r = supcon_loss_embeddings(&z, &["a", "a", "b", "b"], &ContrastiveConfig::new(1.0)).unwrap();
        let e = std::f64::consts::E;
        let want = -(e / (e + 2.0)).ln();
        assert!((r.value - want).abs() < 1e-12);
        assert!((r.value - 0.55144).abs() < 1e-4);
        assert!(r.per_anchor.iter().all(|&t| (t - want).abs() < 1e-12));
    }

    #[test]
    fn supcon_skips_anchors_without_positives() {
        let z = m(&[&[1.0, 0.0], &[0.0, 1.0], &[0.6, 0.8]]);
        let r = supcon_loss_embeddings(&z, &[1, 2, 3], &ContrastiveConfig::new(0.1)).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.skipped_anchors.len(), 3);
    }

    #[test]
    fn multiply_mode_and_self_inclusion() {
        let z = m(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[0.0, 1.0]]);
        let labels = [0, 0, 1, 1];
        let mul = ContrastiveConfig { temp: 2.0, temp_mode: TempMode::Multiply, include_self: false };
        let div = ContrastiveConfig { temp: 0.5, ..ContrastiveConfig::new(0.5) };
        let a = supcon_loss_embeddings(&z, &labels, &mul).unwrap().value;
        let b = supcon_loss_embeddings(&z, &labels, &div).unwrap().value;
        assert_eq!(a, b);
        // With self in the denominator: −log(e / (2e + 2)) at τ = 1.
        let incl = ContrastiveConfig { include_self: true, ..ContrastiveConfig::new(1.0) };
        let e = std::f64::consts::E;
        let v = supcon_loss_embeddings(&z, &labels, &incl).unwrap().value;
        assert!((v + (e / (2.0 * e + 2.0)).ln()).abs() < 1e-12);
    }

    #[test]
    fn clip_hand_values() {
        let one = m(&[&[1.0, 0.0]]);
        assert_eq!(clip_loss(&one, &one, &ContrastiveConfig::new(0.07)).unwrap(), 0.0);
        let eye = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let v = clip_loss(&eye, &eye, &ContrastiveConfig::new(1.0)).unwrap();
        let e = std::f64::consts::E;
        assert!((v + (e / (e + 1.0)).ln()).abs() < 1e-12);
    }
}
