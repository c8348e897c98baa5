//! The volume-contrast objective and its analytic gradients.
//!
//! * logits `l_i = max(cos(p, q_i), 0)`; `q` is detached here, so gradients
//!   reach `p` only.
//! * distances `d_i = min(|y_i - l_i|, 1 - LOG_EPS)`.
//! * prediction loss `L_pred = -(1/n) sum_i ln(1 - d_i)`.
//! * basis similarities `s_ij = cos(q_i, q_j)` (unclamped, gradients reach `q`).
//! * regularizer `L_reg = 2 / (n (n - 1)) sum_{i<j} |s_ij|`.
//! * total `L = L_pred + lambda * L_reg`.

use serde::Serialize;
use thiserror::Error;

use crate::real::Real;

/// Embeddings with a norm at or below this are treated as collapsed.
pub const NORM_EPS: f64 = 1e-8;
/// Keeps `ln(1 - d)` finite: each prediction term is capped at `-ln(LOG_EPS)`.
pub const LOG_EPS: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("degenerate embedding: {what} has norm {norm:e} (collapsed features?)")]
    DegenerateEmbedding { what: String, norm: f64 },
    #[error("length mismatch: {what} has {found} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("the basis regularizer needs at least 2 bases, got {0}")]
    TooFewBases(usize),
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn norm_checked<T: Real>(v: &[T], what: impl FnOnce() -> String) -> Result<T, LossError> {
    let n = dot(v, v).sqrt();
    if !(n.as_f64() > NORM_EPS) {
        return Err(LossError::DegenerateEmbedding {
            what: what(),
            norm: n.as_f64(),
        });
    }
    Ok(n)
}

fn check_dims<T: Real>(p_len: usize, q: &[Vec<T>]) -> Result<(), LossError> {
    for qi in q {
        if qi.len() != p_len {
            return Err(LossError::LengthMismatch {
                what: "basis vector",
                expected: p_len,
                found: qi.len(),
            });
        }
    }
    Ok(())
}

/// `d cos(a, b) / d a`, given norms and the cosine itself.
fn cosine_grad<'a, T: Real>(
    a: &'a [T],
    b: &'a [T],
    na: T,
    nb: T,
    cos: T,
) -> impl Iterator<Item = T> + 'a {
    let inv = T::one() / (na * nb);
    let self_coef = cos / (na * na);
    a.iter().zip(b).map(move |(&ai, &bi)| bi * inv - self_coef * ai)
}

fn sign<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Raw cosines `cos(p, q_i)` before clamping.
fn raw_cosines<T: Real>(p: &[T], q: &[Vec<T>]) -> Result<(Vec<T>, T, Vec<T>), LossError> {
    check_dims(p.len(), q)?;
    let np = norm_checked(p, || "crop embedding p".to_string())?;
    let mut norms = Vec::with_capacity(q.len());
    let mut cos = Vec::with_capacity(q.len());
    for (i, qi) in q.iter().enumerate() {
        let nq = norm_checked(qi, || format!("basis q_{i}"))?;
        cos.push(dot(p, qi) / (np * nq));
        norms.push(nq);
    }
    Ok((cos, np, norms))
}

/// Similarity logits `l_i = max(cos(p, q_i), 0)`.
pub fn similarity_logits<T: Real>(p: &[T], q: &[Vec<T>]) -> Result<Vec<T>, LossError> {
    let (cos, _, _) = raw_cosines(p, q)?;
    Ok(cos.into_iter().map(|c| c.max(T::zero())).collect())
}

/// Back-propagates `dL/dl` to `p`. There is no counterpart for `q`: the bases
/// are constants inside the logits.
pub fn similarity_logits_backward<T: Real>(
    p: &[T],
    q: &[Vec<T>],
    dl: &[T],
) -> Result<Vec<T>, LossError> {
    let (cos, np, norms) = raw_cosines(p, q)?;
    let mut dp = vec![T::zero(); p.len()];
    for (i, qi) in q.iter().enumerate() {
        if cos[i] <= T::zero() || dl[i] == T::zero() {
            continue;
        }
        for (g, c) in dp.iter_mut().zip(cosine_grad(p, qi, np, norms[i], cos[i])) {
            *g += dl[i] * c;
        }
    }
    Ok(dp)
}

fn check_pair<T: Real>(l: &[T], y: &[T]) -> Result<(), LossError> {
    if l.len() != y.len() {
        return Err(LossError::LengthMismatch {
            what: "position label",
            expected: l.len(),
            found: y.len(),
        });
    }
    Ok(())
}

/// Clamped distances `d_i = min(|y_i - l_i|, 1 - LOG_EPS)`.
pub fn distances<T: Real>(l: &[T], y: &[T]) -> Result<Vec<T>, LossError> {
    check_pair(l, y)?;
    let cap = T::one() - T::of(LOG_EPS);
    Ok(l.iter().zip(y).map(|(&li, &yi)| (yi - li).abs().min(cap)).collect())
}

pub fn prediction_loss<T: Real>(l: &[T], y: &[T]) -> Result<T, LossError> {
    let d = distances(l, y)?;
    let n = T::of(d.len() as f64);
    // `0 - x` keeps a perfect prediction at +0 rather than -0
    Ok(T::zero() - d.iter().map(|&di| (T::one() - di).ln()).sum::<T>() / n)
}

/// `dL_pred / dl`.
pub fn prediction_loss_grad<T: Real>(l: &[T], y: &[T]) -> Result<Vec<T>, LossError> {
    check_pair(l, y)?;
    let n = T::of(l.len() as f64);
    let cap = T::one() - T::of(LOG_EPS);
    Ok(l.iter()
        .zip(y)
        .map(|(&li, &yi)| {
            let d = (yi - li).abs();
            if d > cap {
                return T::zero();
            }
            // d = |y - l|  =>  dd/dl = -sign(y - l)
            -sign(yi - li) / (n * (T::one() - d))
        })
        .collect())
}

/// Symmetric matrix of pairwise basis cosines; the diagonal is set to 1.
pub fn basis_similarity<T: Real>(q: &[Vec<T>]) -> Result<Vec<Vec<T>>, LossError> {
    let norms = basis_norms(q)?;
    let n = q.len();
    let mut s = vec![vec![T::one(); n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let c = dot(&q[i], &q[j]) / (norms[i] * norms[j]);
            s[i][j] = c;
            s[j][i] = c;
        }
    }
    Ok(s)
}

fn basis_norms<T: Real>(q: &[Vec<T>]) -> Result<Vec<T>, LossError> {
    if let Some(first) = q.first() {
        check_dims(first.len(), q)?;
    }
    q.iter()
        .enumerate()
        .map(|(i, qi)| norm_checked(qi, || format!("basis q_{i}")))
        .collect()
}

fn pair_weight<T: Real>(n: usize) -> T {
    T::of(2.0 / (n as f64 * (n as f64 - 1.0)))
}

/// Mean absolute off-diagonal similarity over the `n (n - 1) / 2` pairs.
pub fn regularization_loss<T: Real>(s: &[Vec<T>]) -> Result<T, LossError> {
    let n = s.len();
    if n < 2 {
        return Err(LossError::TooFewBases(n));
    }
    let mut acc = T::zero();
    for i in 0..n {
        for j in i + 1..n {
            acc += s[i][j].abs();
        }
    }
    Ok(acc * pair_weight::<T>(n))
}

/// `dL_reg / dq_i` for every basis.
pub fn regularization_grad<T: Real>(q: &[Vec<T>]) -> Result<Vec<Vec<T>>, LossError> {
    let n = q.len();
    if n < 2 {
        return Err(LossError::TooFewBases(n));
    }
    let norms = basis_norms(q)?;
    let w = pair_weight::<T>(n);
    let mut dq = vec![vec![T::zero(); q[0].len()]; n];
    for i in 0..n {
        for j in i + 1..n {
            let s = dot(&q[i], &q[j]) / (norms[i] * norms[j]);
            let coef = w * sign(s);
            if coef == T::zero() {
                continue;
            }
            let gi: Vec<T> = cosine_grad(&q[i], &q[j], norms[i], norms[j], s).collect();
            let gj: Vec<T> = cosine_grad(&q[j], &q[i], norms[j], norms[i], s).collect();
            for (acc, g) in dq[i].iter_mut().zip(gi) {
                *acc += coef * g;
            }
            for (acc, g) in dq[j].iter_mut().zip(gj) {
                *acc += coef * g;
            }
        }
    }
    Ok(dq)
}

/// Diagnostics and loss values for one random crop against one basis set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossReport<T> {
    pub l: Vec<T>,
    pub d: Vec<T>,
    pub s: Vec<Vec<T>>,
    pub l_pred: T,
    pub l_reg: T,
    pub l_total: T,
    pub lambda: T,
}

impl<T: Real> LossReport<T> {
    pub fn mean_abs_s(&self) -> T {
        mean_abs_offdiag(&self.s)
    }

    pub fn max_l(&self) -> T {
        self.l.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn min_l(&self) -> T {
        self.l.iter().copied().fold(T::infinity(), T::min)
    }

    pub const CSV_HEADER: &'static str = "step,L_pred,L_reg,L_total,mean_abs_s,max_l,min_l";

    pub fn csv_row(&self, step: u64) -> String {
        format!(
            "{step},{},{},{},{},{},{}",
            self.l_pred,
            self.l_reg,
            self.l_total,
            self.mean_abs_s(),
            self.max_l(),
            self.min_l()
        )
    }
}

pub fn mean_abs_offdiag<T: Real>(s: &[Vec<T>]) -> T {
    let n = s.len();
    if n < 2 {
        return T::zero();
    }
    let mut acc = T::zero();
    for i in 0..n {
        for j in i + 1..n {
            acc += s[i][j].abs();
        }
    }
    acc * pair_weight::<T>(n)
}

/// Gradients of the total loss, split by branch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradients<T> {
    pub dp: Vec<T>,
    /// Contribution of the prediction branch to `dL/dq`: identically zero.
    pub dq_prediction: Vec<Vec<T>>,
    /// `lambda * dL_reg/dq`.
    pub dq_regularization: Vec<Vec<T>>,
}

impl<T: Real> LossGradients<T> {
    pub fn dq(&self) -> Vec<Vec<T>> {
        self.dq_prediction
            .iter()
            .zip(&self.dq_regularization)
            .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| x + y).collect())
            .collect()
    }
}

/// `L = L_pred(p, sg(q), y) + lambda * L_reg(q)` with gradients.
pub fn total_loss<T: Real>(
    p: &[T],
    q: &[Vec<T>],
    y: &[T],
    lambda: T,
) -> Result<(LossReport<T>, LossGradients<T>), LossError> {
    let (report, mut grads) = volume_loss(std::slice::from_ref(&p.to_vec()), q, std::slice::from_ref(&y.to_vec()), lambda)?;
    let report = report.crops.into_iter().next().expect("one crop");
    Ok((report, LossGradients {
        dp: grads.dp.pop().expect("one crop"),
        dq_prediction: grads.dq_prediction,
        dq_regularization: grads.dq_regularization,
    }))
}

/// Loss for one volume: prediction loss averaged over its crops plus the
/// regularizer on the volume's bases (counted once).
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeLoss<T> {
    pub crops: Vec<LossReport<T>>,
    pub l_pred: T,
    pub l_reg: T,
    pub l_total: T,
    pub mean_abs_s: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeGradients<T> {
    pub dp: Vec<Vec<T>>,
    pub dq_prediction: Vec<Vec<T>>,
    pub dq_regularization: Vec<Vec<T>>,
}

pub fn volume_loss<T: Real>(
    ps: &[Vec<T>],
    q: &[Vec<T>],
    ys: &[Vec<T>],
    lambda: T,
) -> Result<(VolumeLoss<T>, VolumeGradients<T>), LossError> {
    if ps.len() != ys.len() {
        return Err(LossError::LengthMismatch {
            what: "label list",
            expected: ps.len(),
            found: ys.len(),
        });
    }
    let s = basis_similarity(q)?;
    let l_reg = regularization_loss(&s)?;
    let reg_grad = regularization_grad(q)?;
    let m = T::of(ps.len().max(1) as f64);

    let mut crops = Vec::with_capacity(ps.len());
    let mut dps = Vec::with_capacity(ps.len());
    let mut pred_sum = T::zero();
    for (p, y) in ps.iter().zip(ys) {
        if y.len() != q.len() {
            return Err(LossError::LengthMismatch {
                what: "position label",
                expected: q.len(),
                found: y.len(),
            });
        }
        let l = similarity_logits(p, q)?;
        let d = distances(&l, y)?;
        let l_pred = prediction_loss(&l, y)?;
        let dl: Vec<T> = prediction_loss_grad(&l, y)?.into_iter().map(|g| g / m).collect();
        dps.push(similarity_logits_backward(p, q, &dl)?);
        pred_sum += l_pred;
        crops.push(LossReport {
            l,
            d,
            s: s.clone(),
            l_pred,
            l_reg,
            l_total: l_pred + lambda * l_reg,
            lambda,
        });
    }
    let l_pred = pred_sum / m;
    let dim = q.first().map_or(0, Vec::len);
    Ok((
        VolumeLoss {
            crops,
            l_pred,
            l_reg,
            l_total: l_pred + lambda * l_reg,
            mean_abs_s: mean_abs_offdiag(&s),
        },
        VolumeGradients {
            dp: dps,
            dq_prediction: vec![vec![T::zero(); dim]; q.len()],
            dq_regularization: reg_grad
                .into_iter()
                .map(|g| g.into_iter().map(|x| lambda * x).collect())
                .collect(),
        },
    ))
}
