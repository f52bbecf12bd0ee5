//! Training losses of a domain separation network, built on the autodiff
//! graph so every term is differentiable.
//!
//! Batch conventions: the leading axis of every input is the batch. Task,
//! domain and pose losses are batch means; the reconstruction loss is a
//! per-domain batch mean of per-sample errors, summed over the two domains.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Floor inside the logarithm of classification likelihoods.
pub const LOG_FLOOR: f64 = 1e-12;
/// Floor inside the pose log-metric.
pub const POSE_FLOOR: f64 = 1e-6;
/// Floor on a predicted quaternion's norm before normalization.
pub const QUAT_NORM_FLOOR: f64 = 1e-8;
/// Added under the square root when L2-normalizing code rows.
const ROW_NORM_EPS: f64 = 1e-12;

/// Standard deviations of the default multi-RBF kernel.
pub const DEFAULT_BANDWIDTHS: [f64; 19] = [
    1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 100.0, 1e3,
    1e4, 1e5, 1e6,
];

/// Mixture of RBF kernels `k(x, y) = sum_n eta_n exp(-|x - y|^2 / (2 sigma_n))`.
///
/// `sigma_n` divides the squared distance directly (it is not squared).
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSpec {
    bandwidths: Vec<f64>,
    weights: Vec<f64>,
}

impl KernelSpec {
    pub fn new(bandwidths: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if bandwidths.is_empty() || bandwidths.len() != weights.len() {
            return Err(Error::invalid(format!(
                "kernel needs equally many bandwidths and weights, got {} and {}",
                bandwidths.len(),
                weights.len()
            )));
        }
        if bandwidths.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("kernel bandwidths must be positive and finite"));
        }
        if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) || !weights.iter().any(|&w| w > 0.0) {
            return Err(Error::invalid(
                "kernel weights must be non-negative with at least one positive",
            ));
        }
        Ok(KernelSpec {
            bandwidths,
            weights,
        })
    }

    pub fn single(sigma: f64) -> Result<Self> {
        KernelSpec::new(vec![sigma], vec![1.0])
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Kernel matrix between the rows of `a` and the rows of `b`.
    pub fn matrix<T: Real>(&self, g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
        let d = g.pairwise_sq_dist(a, b)?;
        let mut acc: Option<Var> = None;
        for (&sigma, &eta) in self.bandwidths.iter().zip(&self.weights) {
            if eta == 0.0 {
                continue;
            }
            let scaled = g.scale(d, T::lit(-1.0 / (2.0 * sigma)));
            let mut k = g.exp(scaled);
            if eta != 1.0 {
                k = g.scale(k, T::lit(eta));
            }
            acc = Some(match acc {
                Some(prev) => g.add(prev, k)?,
                None => k,
            });
        }
        Ok(acc.expect("validated: at least one positive weight"))
    }
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::new(DEFAULT_BANDWIDTHS.to_vec(), vec![1.0; DEFAULT_BANDWIDTHS.len()])
            .expect("valid default kernel")
    }
}

/// How code matrices are preprocessed before the Gram-type losses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CodeNorm {
    /// Use the matrices as given.
    Raw,
    /// L2-normalize every row; Gram matrices are additionally divided by the
    /// batch size.
    Normalized,
}

/// Relative weights of the loss terms and the step at which the adaptation
/// terms switch on.
#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    /// Reconstruction.
    pub alpha: f64,
    /// Difference (orthogonality).
    pub beta: f64,
    /// Similarity.
    pub gamma: f64,
    /// Pose term of the task loss.
    pub xi: f64,
    pub warmup_steps: u64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.05,
            beta: 0.05,
            gamma: 0.25,
            xi: 0.125,
            warmup_steps: 500,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("xi", self.xi),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config {
                    key: name.into(),
                    message: format!("must be finite and >= 0, got {v}"),
                });
            }
        }
        Ok(())
    }

    /// Whether the adaptation terms contribute at `step`.
    pub fn adaptation_active(&self, step: u64) -> bool {
        step >= self.warmup_steps
    }
}

/// Unit quaternion `(w, x, y, z)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quaternion { w, x, y, z }
    }

    /// Rotation by `angle` radians about the z axis.
    pub fn about_z(angle: f64) -> Self {
        let h = 0.5 * angle;
        Quaternion::new(h.cos(), 0.0, 0.0, h.sin()).positive()
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Quaternion::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(self, o: Quaternion) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    /// Unit-norm copy; `None` for a zero quaternion.
    pub fn normalized(self) -> Option<Self> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| Quaternion::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    /// Representative with `w >= 0` (q and -q are the same rotation).
    pub fn positive(self) -> Self {
        if self.w < 0.0 {
            Quaternion::new(-self.w, -self.x, -self.y, -self.z)
        } else {
            self
        }
    }

    /// Angle in degrees of the rotation taking `self` to `other`, i.e.
    /// `2 acos|q.p|` for unit inputs. Computed as a half-angle `atan2` of the
    /// chord lengths, which stays exact for identical inputs where `acos`
    /// loses precision near 1.
    pub fn angle_to_deg(self, other: Quaternion) -> f64 {
        let a = self.normalized().unwrap_or(self);
        let mut b = other.normalized().unwrap_or(other);
        if a.dot(b) < 0.0 {
            b = Quaternion::new(-b.w, -b.x, -b.y, -b.z);
        }
        let diff = Quaternion::new(a.w - b.w, a.x - b.x, a.y - b.y, a.z - b.z).norm();
        let sum = Quaternion::new(a.w + b.w, a.x + b.x, a.y + b.y, a.z + b.z).norm();
        4.0 * diff.atan2(sum).to_degrees()
    }
}

/// Mean rotation angle in degrees between paired quaternions.
pub fn mean_angle_error(truth: &[Quaternion], predicted: &[Quaternion]) -> Result<f64> {
    if truth.len() != predicted.len() {
        return Err(Error::shape(
            "mean_angle_error",
            &[truth.len(), 4],
            &[predicted.len(), 4],
        ));
    }
    if truth.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = truth
        .iter()
        .zip(predicted)
        .map(|(a, b)| a.angle_to_deg(*b))
        .sum();
    Ok(total / truth.len() as f64)
}

fn batch_size<T: Real>(g: &Graph<T>, v: Var) -> T {
    T::from_usize(g.shape(v)[0]).unwrap()
}

/// Views a tensor as `[batch, features]`; rank-1 inputs are one sample.
fn as_rows<T: Real>(g: &mut Graph<T>, v: Var) -> Result<Var> {
    let s = g.shape(v).to_vec();
    if s.len() == 1 {
        g.reshape(v, &[1, s[0]])
    } else if s.len() == 2 {
        Ok(v)
    } else {
        g.flatten(v)
    }
}

/// Mean over the batch of `-y . log(max(y_hat, 1e-12))`.
pub fn task_nll<T: Real>(g: &mut Graph<T>, predictions: Var, labels: Var) -> Result<Var> {
    let (ps, ls) = (g.shape(predictions), g.shape(labels));
    if ps != ls || ps.len() != 2 {
        return Err(Error::shape("task_nll", ps, ls));
    }
    let n = batch_size(g, predictions);
    let clamped = g.clamp_min(predictions, T::lit(LOG_FLOOR));
    let logs = g.log(clamped);
    let picked = g.mul(labels, logs)?;
    let total = g.sum(picked);
    Ok(g.scale(total, -T::one() / n))
}

/// Scale-invariant MSE: per sample `|d|^2 / k - (d . 1)^2 / k^2` with
/// `d = x - x_hat` and `k` the number of elements per sample, averaged over
/// the batch.
pub fn si_mse<T: Real>(g: &mut Graph<T>, x: Var, x_hat: Var) -> Result<Var> {
    if g.shape(x) != g.shape(x_hat) {
        return Err(Error::shape("si_mse", g.shape(x), g.shape(x_hat)));
    }
    let d = g.sub(x, x_hat)?;
    let d = as_rows(g, d)?;
    let k = T::from_usize(g.shape(d)[1]).unwrap();
    let sq = g.square(d);
    let sq_sum = g.sum_axis(sq, 1)?;
    let first = g.scale(sq_sum, T::one() / k);
    let lin = g.sum_axis(d, 1)?;
    let lin_sq = g.square(lin);
    let second = g.scale(lin_sq, T::one() / (k * k));
    let per_sample = g.sub(first, second)?;
    Ok(g.mean(per_sample))
}

/// Plain per-sample MSE `|x - x_hat|^2 / k`, averaged over the batch.
pub fn mse<T: Real>(g: &mut Graph<T>, x: Var, x_hat: Var) -> Result<Var> {
    if g.shape(x) != g.shape(x_hat) {
        return Err(Error::shape("mse", g.shape(x), g.shape(x_hat)));
    }
    let d = g.sub(x, x_hat)?;
    let sq = g.square(d);
    // mean over all elements == batch mean of per-sample means
    Ok(g.mean(sq))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReconKind {
    ScaleInvariant,
    Plain,
}

/// Reconstruction error of the source pair plus that of the target pair.
pub fn reconstruction_loss<T: Real>(
    g: &mut Graph<T>,
    source: (Var, Var),
    target: (Var, Var),
    kind: ReconKind,
) -> Result<Var> {
    let f = match kind {
        ReconKind::ScaleInvariant => si_mse::<T>,
        ReconKind::Plain => mse::<T>,
    };
    let s = f(g, source.0, source.1)?;
    let t = f(g, target.0, target.1)?;
    g.add(s, t)
}

/// Divides every row by its L2 norm (with a tiny epsilon under the root).
pub fn l2_normalize_rows<T: Real>(g: &mut Graph<T>, h: Var) -> Result<Var> {
    let h = as_rows(g, h)?;
    let sq = g.square(h);
    let ss = g.sum_axis(sq, 1)?;
    let ss = g.add_scalar(ss, T::lit(ROW_NORM_EPS));
    let norm = g.sqrt(ss);
    let inv = g.powf(norm, -T::one());
    g.mul_rows(h, inv)
}

fn frobenius_sq<T: Real>(g: &mut Graph<T>, m: Var) -> Var {
    let sq = g.square(m);
    g.sum(sq)
}

/// `|H_cᵀ H_p|_F^2` for one domain.
pub fn difference_term<T: Real>(
    g: &mut Graph<T>,
    shared: Var,
    private: Var,
    norm: CodeNorm,
) -> Result<Var> {
    let (ss, ps) = (g.shape(shared).to_vec(), g.shape(private).to_vec());
    if ss.len() != 2 || ps.len() != 2 || ss[0] != ps[0] {
        return Err(Error::shape("difference_loss", &ss, &ps));
    }
    let (hc, hp) = match norm {
        CodeNorm::Raw => (shared, private),
        CodeNorm::Normalized => (l2_normalize_rows(g, shared)?, l2_normalize_rows(g, private)?),
    };
    let hct = g.transpose(hc)?;
    let mut prod = g.matmul(hct, hp)?;
    if norm == CodeNorm::Normalized {
        prod = g.scale(prod, T::lit(1.0 / ss[0] as f64));
    }
    Ok(frobenius_sq(g, prod))
}

/// Soft subspace orthogonality between shared and private codes, summed over
/// both domains.
pub fn difference_loss<T: Real>(
    g: &mut Graph<T>,
    source: (Var, Var),
    target: (Var, Var),
    norm: CodeNorm,
) -> Result<Var> {
    let s = difference_term(g, source.0, source.1, norm)?;
    let t = difference_term(g, target.0, target.1, norm)?;
    g.add(s, t)
}

/// Mean binary cross-entropy of domain predictions in (0, 1) against labels
/// in {0, 1}, with log arguments floored at 1e-12.
pub fn dann_domain_loss<T: Real>(g: &mut Graph<T>, predicted: Var, labels: Var) -> Result<Var> {
    if g.shape(predicted) != g.shape(labels) {
        return Err(Error::shape("dann_domain_loss", g.shape(predicted), g.shape(labels)));
    }
    if let Some(bad) = g
        .value(labels)
        .data()
        .iter()
        .find(|&&d| d != T::zero() && d != T::one())
    {
        return Err(Error::invalid(format!(
            "dann_domain_loss: domain label {bad} is not 0 or 1"
        )));
    }
    let n = T::from_usize(g.value(predicted).len()).unwrap();
    let floor = T::lit(LOG_FLOOR);

    let p = g.clamp_min(predicted, floor);
    let log_p = g.log(p);
    let pos = g.mul(labels, log_p)?;

    let neg_pred = g.neg(predicted);
    let one_minus_p = g.add_scalar(neg_pred, T::one());
    let q = g.clamp_min(one_minus_p, floor);
    let log_q = g.log(q);
    let neg_labels = g.neg(labels);
    let one_minus_d = g.add_scalar(neg_labels, T::one());
    let neg = g.mul(one_minus_d, log_q)?;

    let both = g.add(pos, neg)?;
    let total = g.sum(both);
    Ok(g.scale(total, -T::one() / n))
}

/// Biased squared MMD between the rows of `source` and `target` under
/// `kernel`.
pub fn mmd_loss<T: Real>(
    g: &mut Graph<T>,
    source: Var,
    target: Var,
    kernel: &KernelSpec,
) -> Result<Var> {
    let (ss, ts) = (g.shape(source).to_vec(), g.shape(target).to_vec());
    if ss.len() != 2 || ts.len() != 2 || ss[1] != ts[1] {
        return Err(Error::shape("mmd_loss", &ss, &ts));
    }
    let kss = kernel.matrix(g, source, source)?;
    let kst = kernel.matrix(g, source, target)?;
    let ktt = kernel.matrix(g, target, target)?;
    let a = g.mean(kss);
    let b = g.mean(kst);
    let c = g.mean(ktt);
    let b2 = g.scale(b, T::lit(2.0));
    let ac = g.add(a, c)?;
    g.sub(ac, b2)
}

/// Squared Frobenius distance between the second-moment matrices of the two
/// domains' shared codes.
pub fn correg_loss<T: Real>(g: &mut Graph<T>, source: Var, target: Var, norm: CodeNorm) -> Result<Var> {
    let (ss, ts) = (g.shape(source).to_vec(), g.shape(target).to_vec());
    if ss.len() != 2 || ts.len() != 2 || ss[1] != ts[1] {
        return Err(Error::shape("correg_loss", &ss, &ts));
    }
    let gram = |g: &mut Graph<T>, h: Var| -> Result<Var> {
        let h = match norm {
            CodeNorm::Raw => h,
            CodeNorm::Normalized => l2_normalize_rows(g, h)?,
        };
        let ht = g.transpose(h)?;
        let m = g.matmul(ht, h)?;
        Ok(match norm {
            CodeNorm::Raw => m,
            CodeNorm::Normalized => {
                let n = batch_size(g, h);
                g.scale(m, T::one() / n)
            }
        })
    };
    let gs = gram(g, source)?;
    let gt = gram(g, target)?;
    let diff = g.sub(gs, gt)?;
    Ok(frobenius_sq(g, diff))
}

/// Normalizes predicted quaternion rows to unit length (norm floored at
/// 1e-8) and flips each to `w >= 0`. Errors on an all-zero row.
pub fn normalize_quaternions<T: Real>(g: &mut Graph<T>, q: Var) -> Result<Var> {
    let s = g.shape(q).to_vec();
    if s.len() != 2 || s[1] != 4 {
        return Err(Error::shape("normalize_quaternions", &s, &[0, 4]));
    }
    let values = g.value(q);
    let mut signs = Vec::with_capacity(s[0]);
    for i in 0..s[0] {
        let row = values.row(i);
        if row.iter().all(|v| *v == T::zero()) {
            return Err(Error::invalid(format!("predicted quaternion {i} has zero norm")));
        }
        signs.push(if row[0] < T::zero() { -T::one() } else { T::one() });
    }
    let sq = g.square(q);
    let ss = g.sum_axis(sq, 1)?;
    let norm = g.sqrt(ss);
    let norm = g.clamp_min(norm, T::lit(QUAT_NORM_FLOOR));
    let inv = g.powf(norm, -T::one());
    let sign_t = crate::tensor::Tensor::new(&[s[0]], signs)?;
    let sign = g.constant(sign_t);
    let scale = g.mul(inv, sign)?;
    g.mul_rows(q, scale)
}

/// `xi * mean(log(max(1 - |q . q_hat|, 1e-6)))` with `q_hat` normalized first.
pub fn pose_term<T: Real>(g: &mut Graph<T>, truth: Var, predicted: Var, xi: f64) -> Result<Var> {
    if g.shape(truth) != g.shape(predicted) {
        return Err(Error::shape("pose_task_loss", g.shape(truth), g.shape(predicted)));
    }
    let q_hat = normalize_quaternions(g, predicted)?;
    let prod = g.mul(truth, q_hat)?;
    let dot = g.sum_axis(prod, 1)?;
    let dot = g.abs(dot);
    let neg = g.neg(dot);
    let gap = g.add_scalar(neg, T::one());
    let gap = g.clamp_min(gap, T::lit(POSE_FLOOR));
    let logs = g.log(gap);
    let m = g.mean(logs);
    Ok(g.scale(m, T::lit(xi)))
}

/// Classification NLL plus the weighted pose log-metric.
pub fn pose_task_loss<T: Real>(
    g: &mut Graph<T>,
    predictions: Var,
    labels: Var,
    truth: Var,
    predicted: Var,
    xi: f64,
) -> Result<Var> {
    let nll = task_nll(g, predictions, labels)?;
    let pose = pose_term(g, truth, predicted, xi)?;
    g.add(nll, pose)
}

/// Loss terms computed on one graph. Absent terms do not apply to the
/// model variant.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub task: Var,
    pub recon: Option<Var>,
    pub difference: Option<Var>,
    pub similarity: Option<Var>,
}

/// `task + alpha recon + beta difference + gamma similarity`; before
/// `warmup_steps` the result is exactly the task loss.
pub fn total_loss<T: Real>(
    g: &mut Graph<T>,
    parts: &LossParts,
    weights: &LossWeights,
    step: u64,
) -> Result<Var> {
    let mut total = parts.task;
    if !weights.adaptation_active(step) {
        return Ok(total);
    }
    for (part, w) in [
        (parts.recon, weights.alpha),
        (parts.difference, weights.beta),
        (parts.similarity, weights.gamma),
    ] {
        if let Some(v) = part {
            if w != 0.0 {
                let scaled = g.scale(v, T::lit(w));
                total = g.add(total, scaled)?;
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    type G = Graph<f64>;

    fn c(g: &mut G, rows: &[Vec<f64>]) -> Var {
        g.constant(Tensor::from_rows(rows).unwrap())
    }

    fn val(g: &G, v: Var) -> f64 {
        g.value(v).item()
    }

    #[test]
    fn task_nll_examples() {
        let mut g = G::new();
        let y = c(&mut g, &[vec![0., 1., 0.]]);
        let p = c(&mut g, &[vec![0., 1., 0.]]);
        let l = task_nll(&mut g, p, y).unwrap();
        assert_eq!(val(&g, l), 0.0);

        let y = c(&mut g, &[vec![0., 0., 1.]]);
        let p = c(&mut g, &[vec![0.2, 0.3, 0.5]]);
        let l = task_nll(&mut g, p, y).unwrap();
        assert!((val(&g, l) - std::f64::consts::LN_2).abs() < 1e-6);

        let y = c(&mut g, &[vec![1., 0., 0., 0.], vec![0., 0., 0., 1.]]);
        let p = c(&mut g, &[vec![0.25; 4], vec![0.25; 4]]);
        let l = task_nll(&mut g, p, y).unwrap();
        assert!((val(&g, l) - 4f64.ln()).abs() < 1e-12);

        let bad = c(&mut g, &[vec![1., 0.]]);
        assert!(task_nll(&mut g, p, bad).is_err());
    }

    #[test]
    fn si_mse_examples() {
        let mut g = G::new();
        let x = g.constant(Tensor::from_f64(&[4], &[1., 2., 3., 4.]).unwrap());
        let z = g.constant(Tensor::zeros(&[4]));
        let l = si_mse(&mut g, x, z).unwrap();
        assert!((val(&g, l) - 1.25).abs() < 1e-12);

        let same = si_mse(&mut g, x, x).unwrap();
        assert_eq!(val(&g, same), 0.0);

        let shifted = g.add_scalar(x, 3.5);
        let l = si_mse(&mut g, x, shifted).unwrap();
        assert!(val(&g, l).abs() < 1e-12);

        let short = g.constant(Tensor::zeros(&[3]));
        assert!(si_mse(&mut g, x, short).is_err());
    }

    #[test]
    fn reconstruction_examples() {
        let mut g = G::new();
        let x = g.constant(Tensor::from_f64(&[1, 4], &[1., 2., 3., 4.]).unwrap());
        let z = g.constant(Tensor::zeros(&[1, 4]));
        let perfect = reconstruction_loss(&mut g, (x, x), (z, z), ReconKind::ScaleInvariant).unwrap();
        assert_eq!(val(&g, perfect), 0.0);
        let a = reconstruction_loss(&mut g, (x, z), (x, x), ReconKind::ScaleInvariant).unwrap();
        let b = reconstruction_loss(&mut g, (x, x), (x, z), ReconKind::ScaleInvariant).unwrap();
        assert!((val(&g, a) - 1.25).abs() < 1e-12);
        assert_eq!(val(&g, a), val(&g, b));
    }

    #[test]
    fn plain_mse_sees_offsets() {
        let mut g = G::new();
        let x = g.constant(Tensor::from_f64(&[1, 4], &[1., 2., 3., 4.]).unwrap());
        let y = g.add_scalar(x, 2.0);
        let l = mse(&mut g, x, y).unwrap();
        assert!((val(&g, l) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn difference_examples() {
        let mut g = G::new();
        let hc = c(&mut g, &[vec![1., 0.], vec![0., 0.]]);
        let hp = c(&mut g, &[vec![0., 0.], vec![0., 1.]]);
        let l = difference_term(&mut g, hc, hp, CodeNorm::Raw).unwrap();
        assert_eq!(val(&g, l), 0.0);

        let hc = c(&mut g, &[vec![1., 1.]]);
        let hp = c(&mut g, &[vec![1., -1.]]);
        let l = difference_term(&mut g, hc, hp, CodeNorm::Raw).unwrap();
        assert!((val(&g, l) - 4.0).abs() < 1e-12);
        // normalized rows: entries become +-1/2
        let l = difference_term(&mut g, hc, hp, CodeNorm::Normalized).unwrap();
        assert!((val(&g, l) - 1.0).abs() < 1e-10);

        let zero = c(&mut g, &[vec![0., 0.]]);
        let l = difference_loss(&mut g, (hc, zero), (hc, zero), CodeNorm::Normalized).unwrap();
        assert_eq!(val(&g, l), 0.0);

        // identical unit rows reach the batch-size independent maximum of 1
        let hc = c(&mut g, &[vec![1., 0.], vec![1., 0.], vec![1., 0.]]);
        let hp = c(&mut g, &[vec![0., 2.], vec![0., 2.], vec![0., 2.]]);
        let l = difference_term(&mut g, hc, hp, CodeNorm::Normalized).unwrap();
        assert!((val(&g, l) - 1.0).abs() < 1e-9);

        let three = c(&mut g, &[vec![0., 0.], vec![1., 1.]]);
        assert!(difference_term(&mut g, hc, three, CodeNorm::Raw).is_err());
    }

    #[test]
    fn dann_examples() {
        let mut g = G::new();
        let d = c(&mut g, &[vec![1.], vec![0.]]);
        let l = dann_domain_loss(&mut g, d, d).unwrap();
        assert!(val(&g, l).abs() < 1e-11);

        let half = c(&mut g, &[vec![0.5], vec![0.5]]);
        let l = dann_domain_loss(&mut g, half, d).unwrap();
        assert!((val(&g, l) - std::f64::consts::LN_2).abs() < 1e-6);

        let flipped = c(&mut g, &[vec![0.], vec![1.]]);
        let l = dann_domain_loss(&mut g, flipped, d).unwrap();
        assert!((val(&g, l) - 27.631021).abs() < 1e-5);

        let bad = c(&mut g, &[vec![0.5], vec![1.]]);
        assert!(dann_domain_loss(&mut g, half, bad).is_err());
    }

    #[test]
    fn mmd_examples() {
        let mut g = G::new();
        let a = c(&mut g, &[vec![0.]]);
        let b = c(&mut g, &[vec![1.]]);
        let k = KernelSpec::single(1.0).unwrap();
        let l = mmd_loss(&mut g, a, b, &k).unwrap();
        let expected = 2.0 - 2.0 * (-0.5f64).exp();
        assert!((val(&g, l) - expected).abs() < 1e-12);
        assert!((val(&g, l) - 0.786939).abs() < 1e-6);

        let s = c(&mut g, &[vec![0.3, -1.0], vec![2.0, 0.1]]);
        let l = mmd_loss(&mut g, s, s, &KernelSpec::default()).unwrap();
        assert!(val(&g, l).abs() <= 1e-12);

        let wide = c(&mut g, &[vec![0., 1., 2.]]);
        assert!(mmd_loss(&mut g, s, wide, &k).is_err());
    }

    #[test]
    fn kernel_spec_validation() {
        assert!(KernelSpec::new(vec![1.0], vec![]).is_err());
        assert!(KernelSpec::new(vec![0.0], vec![1.0]).is_err());
        assert!(KernelSpec::new(vec![1.0, 2.0], vec![0.0, 0.0]).is_err());
        assert!(KernelSpec::new(vec![1.0, 2.0], vec![0.0, 0.5]).is_ok());
        let d = KernelSpec::default();
        assert_eq!(d.bandwidths().len(), 19);
        assert!(d.weights().iter().all(|&w| w == d.weights()[0]));
    }

    #[test]
    fn correg_examples() {
        let mut g = G::new();
        let s = c(&mut g, &[vec![1., 0.]]);
        let t = c(&mut g, &[vec![0., 1.]]);
        let l = correg_loss(&mut g, s, t, CodeNorm::Raw).unwrap();
        assert!((val(&g, l) - 2.0).abs() < 1e-12);
        let r = correg_loss(&mut g, t, s, CodeNorm::Raw).unwrap();
        assert_eq!(val(&g, l), val(&g, r));
        let same = correg_loss(&mut g, s, s, CodeNorm::Normalized).unwrap();
        assert_eq!(val(&g, same), 0.0);
    }

    #[test]
    fn quaternion_helpers() {
        let q = Quaternion::about_z(std::f64::consts::FRAC_PI_2);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((q.w - h).abs() < 1e-15 && (q.z - h).abs() < 1e-15);
        assert_eq!(Quaternion::about_z(0.0), Quaternion::IDENTITY);
        assert!((Quaternion::IDENTITY.angle_to_deg(q) - 90.0).abs() < 1e-9);
        let neg = Quaternion::new(-q.w, -q.x, -q.y, -q.z);
        assert_eq!(neg.positive(), q);
        assert!(Quaternion::new(0., 0., 0., 0.).normalized().is_none());
    }

    #[test]
    fn mean_angle_examples() {
        let q = Quaternion::about_z(0.7);
        let neg = Quaternion::new(-q.w, -q.x, -q.y, -q.z);
        assert!(mean_angle_error(&[q], &[q]).unwrap().abs() < 1e-9);
        assert!(mean_angle_error(&[q], &[neg]).unwrap().abs() < 1e-9);
        let rz = Quaternion::about_z(std::f64::consts::FRAC_PI_2);
        assert!((mean_angle_error(&[Quaternion::IDENTITY], &[rz]).unwrap() - 90.0).abs() < 1e-9);
        assert!(mean_angle_error(&[q, q], &[q]).is_err());
    }

    #[test]
    fn pose_examples() {
        let xi = 0.125;
        let mut g = G::new();
        let q = Quaternion::about_z(0.4).to_array().to_vec();
        let truth = c(&mut g, std::slice::from_ref(&q));
        let same = pose_term(&mut g, truth, truth, xi).unwrap();
        assert_eq!(val(&g, same), xi * 1e-6f64.ln());

        let neg: Vec<f64> = q.iter().map(|v| -v).collect();
        let negv = c(&mut g, &[neg]);
        let flipped = pose_term(&mut g, truth, negv, xi).unwrap();
        assert_eq!(val(&g, flipped), val(&g, same));

        let id = c(&mut g, &[Quaternion::IDENTITY.to_array().to_vec()]);
        let rz = c(&mut g, &[Quaternion::about_z(std::f64::consts::FRAC_PI_2).to_array().to_vec()]);
        let l = pose_term(&mut g, id, rz, 1.0).unwrap();
        // ln(1 - cos 45°)
        assert!((val(&g, l) - (-1.227_947_177_299_516)).abs() < 1e-12, "{}", val(&g, l));

        // unnormalized predictions are normalized first
        let scaled = c(&mut g, &[vec![0.0, 0.0, 0.0, 3.0]]);
        let l = pose_term(&mut g, id, scaled, 1.0).unwrap();
        assert_eq!(val(&g, l), 0.0);

        let zero = c(&mut g, &[vec![0.0; 4]]);
        assert!(pose_term(&mut g, id, zero, 1.0).is_err());
    }

    #[test]
    fn total_loss_gating() {
        let mut g = G::new();
        let task = g.constant(Tensor::scalar(0.75));
        let recon = g.constant(Tensor::scalar(2.0));
        let diff = g.constant(Tensor::scalar(3.0));
        let sim = g.constant(Tensor::scalar(5.0));
        let parts = LossParts {
            task,
            recon: Some(recon),
            difference: Some(diff),
            similarity: Some(sim),
        };
        let w = LossWeights {
            alpha: 1.0,
            beta: 0.0,
            gamma: 0.0,
            xi: 0.0,
            warmup_steps: 10,
        };
        let early = total_loss(&mut g, &parts, &w, 9).unwrap();
        assert_eq!(val(&g, early), 0.75);
        let late = total_loss(&mut g, &parts, &w, 10).unwrap();
        assert_eq!(val(&g, late), 2.75);

        let zero = LossWeights {
            alpha: 0.0,
            warmup_steps: 0,
            ..w
        };
        let t = total_loss(&mut g, &parts, &zero, 100).unwrap();
        assert_eq!(val(&g, t), 0.75);

        let full = LossWeights {
            alpha: 0.5,
            beta: 0.25,
            gamma: 0.1,
            xi: 0.0,
            warmup_steps: 0,
        };
        let t = total_loss(&mut g, &parts, &full, 0).unwrap();
        assert!((val(&g, t) - (0.75 + 1.0 + 0.75 + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn loss_weights_validation() {
        assert!(LossWeights::default().validate().is_ok());
        let bad = LossWeights {
            beta: -0.1,
            ..LossWeights::default()
        };
        let err = bad.validate().unwrap_err().to_string();
        assert!(err.contains("beta"));
    }
}
