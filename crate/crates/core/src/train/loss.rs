use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::IGNORE_LABEL;
use crate::nets::ForwardOutput;
use crate::tensor::{Elem, Tensor};

/// Mean cross-entropy over points whose label is not [`IGNORE_LABEL`].
pub fn seg_loss<T: Elem>(logits: &Tensor<T>, labels: &[i32]) -> Result<Tensor<T>> {
    if logits.rank() != 2 || logits.shape()[0] != labels.len() {
        return Err(Error::dim(format!(
            "seg_loss: logits {:?} vs {} labels",
            logits.shape(),
            labels.len()
        )));
    }
    let c = logits.shape()[1];
    let mut picks = Vec::with_capacity(labels.len());
    for (n, &l) in labels.iter().enumerate() {
        if l == IGNORE_LABEL {
            continue;
        }
        if l < 0 || l as usize >= c {
            return Err(Error::Domain(format!("label {l} at point {n} outside 0..{c}")));
        }
        picks.push((n, l as usize));
    }
    if picks.is_empty() {
        return Err(Error::UndefinedLoss("every label is ignored".into()));
    }
    let scale = -T::one() / T::from(picks.len()).unwrap();
    Ok(logits.log_softmax(1)?.pick(&picks)?.sum().scale(scale))
}

fn check_distribution<T: Elem>(p: &Tensor<T>, q_logits: &Tensor<T>) -> Result<()> {
    if p.rank() != 2 || p.shape() != q_logits.shape() {
        return Err(Error::dim(format!(
            "xm_loss: target {:?} vs mimic logits {:?}",
            p.shape(),
            q_logits.shape()
        )));
    }
    let c = p.shape()[1].max(1);
    for (n, row) in p.data().chunks(c).enumerate() {
        if row.iter().any(|v| *v < T::zero()) || row.iter().copied().sum::<T>() <= T::zero() {
            return Err(Error::Contract(format!("target row {n} is not a distribution")));
        }
    }
    Ok(())
}

/// `(1/N) Σ_n KL(P_n ‖ softmax(Q_n))` with `P` held constant.
pub fn xm_loss<T: Elem>(p: &Tensor<T>, q_logits: &Tensor<T>) -> Result<Tensor<T>> {
    check_distribution(p, q_logits)?;
    let n = T::from(p.shape()[0].max(1)).unwrap();
    let p = p.detach();
    let entropy: T = p
        .data()
        .iter()
        .filter(|v| **v > T::zero())
        .map(|v| *v * v.ln())
        .sum();
    let cross = q_logits.log_softmax(1)?.mul(&p)?.sum();
    Tensor::full(&[], entropy / n).sub(&cross.scale(T::one() / n))
}

/// Mimicry loss from the target branch's logits. With `detach` the target is
/// a constant (the default); otherwise gradients also reach the target branch.
pub fn xm_loss_from_logits<T: Elem>(p_logits: &Tensor<T>, q_logits: &Tensor<T>, detach: bool) -> Result<Tensor<T>> {
    if detach {
        return xm_loss(&p_logits.softmax(1)?.detach(), q_logits);
    }
    if p_logits.shape() != q_logits.shape() || p_logits.rank() != 2 {
        return Err(Error::dim("xm_loss: logits shapes differ"));
    }
    let n = T::from(p_logits.shape()[0].max(1)).unwrap();
    let p = p_logits.softmax(1)?;
    let diff = p_logits.log_softmax(1)?.sub(&q_logits.log_softmax(1)?)?;
    Ok(p.mul(&diff)?.sum().scale(T::one() / n))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_s: f64,
    pub lambda_t: f64,
    pub lambda_xs: f64,
    pub lambda_xt: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_s: 0.8,
            lambda_t: 0.1,
            lambda_xs: 0.1,
            lambda_xt: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_s", self.lambda_s),
            ("lambda_t", self.lambda_t),
            ("lambda_xs", self.lambda_xs),
            ("lambda_xt", self.lambda_xt),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a nonnegative number, got {v}")));
            }
        }
        Ok(())
    }
}

/// Scalar values of the objective's terms, for logging.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossTerms {
    pub total: f64,
    pub seg_source: f64,
    pub seg_target: Option<f64>,
    pub xm_source: f64,
    pub xm_target: Option<f64>,
}

/// Per-point supervision for one branch pair. Fusion labels apply to the
/// optional fusion head.
#[derive(Clone, Copy, Debug)]
pub struct Supervision<'a> {
    pub labels_2d: &'a [i32],
    pub labels_3d: &'a [i32],
}

impl<'a> Supervision<'a> {
    pub fn shared(labels: &'a [i32]) -> Self {
        Self {
            labels_2d: labels,
            labels_3d: labels,
        }
    }
}

/// Segmentation loss of both branches (and the fusion head, if present).
/// A branch whose labels are all ignored contributes nothing; if every
/// branch is unsupervised the loss is undefined.
pub fn branch_seg_loss<T: Elem>(out: &ForwardOutput<T>, sup: Supervision) -> Result<Tensor<T>> {
    let mut terms = Vec::new();
    for (logits, labels) in [
        (&out.out2d.main_logits, sup.labels_2d),
        (&out.out3d.main_logits, sup.labels_3d),
    ] {
        match seg_loss(logits, labels) {
            Ok(l) => terms.push(l),
            Err(Error::UndefinedLoss(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if let Some(f) = &out.fusion_logits {
        let fused: Vec<i32> = sup
            .labels_2d
            .iter()
            .zip(sup.labels_3d)
            .map(|(&a, &b)| if a == b { a } else { IGNORE_LABEL })
            .collect();
        match seg_loss(f, &fused) {
            Ok(l) => terms.push(l),
            Err(Error::UndefinedLoss(_)) => {}
            Err(e) => return Err(e),
        }
    }
    let mut it = terms.into_iter();
    let first = it
        .next()
        .ok_or_else(|| Error::UndefinedLoss("no supervised point in the batch".into()))?;
    it.try_fold(first, |acc, t| acc.add(&t))
}

/// Both mimicry directions: 2D aux mimics 3D main, 3D aux mimics 2D main.
pub fn branch_xm_loss<T: Elem>(out: &ForwardOutput<T>, detach: bool) -> Result<Tensor<T>> {
    let a = xm_loss_from_logits(&out.out3d.main_logits, &out.out2d.aux_logits, detach)?;
    let b = xm_loss_from_logits(&out.out2d.main_logits, &out.out3d.aux_logits, detach)?;
    a.add(&b)
}

/// Source and (optional) target halves of one training step.
pub struct StepOutputs<'a, T: Elem> {
    pub source: &'a ForwardOutput<T>,
    pub source_labels: &'a [i32],
    pub target: Option<&'a ForwardOutput<T>>,
    pub pseudo: Option<Supervision<'a>>,
}

/// `L_seg(src) + λ_t·L_seg(tgt, pseudo) + λ_xs·L_xM(src) + λ_xt·L_xM(tgt)`.
///
/// The pseudo-label term is dropped when no pseudo-labels are given; both
/// target terms are dropped without a target batch.
pub fn total_loss<T: Elem>(step: &StepOutputs<T>, w: &LossWeights, detach: bool) -> Result<(Tensor<T>, LossTerms)> {
    w.validate()?;
    let val = |t: &Tensor<T>| t.item().to_f64().unwrap_or(f64::NAN);
    let seg_s = branch_seg_loss(step.source, Supervision::shared(step.source_labels))?;
    let xm_s = branch_xm_loss(step.source, detach)?;
    let mut terms = LossTerms {
        seg_source: val(&seg_s),
        xm_source: val(&xm_s),
        ..LossTerms::default()
    };
    let mut total = seg_s.add(&xm_s.scale(T::lit(w.lambda_xs)))?;
    if let Some(tgt) = step.target {
        if let Some(sup) = step.pseudo {
            match branch_seg_loss(tgt, sup) {
                Ok(seg_t) => {
                    terms.seg_target = Some(val(&seg_t));
                    total = total.add(&seg_t.scale(T::lit(w.lambda_t)))?;
                }
                Err(Error::UndefinedLoss(_)) => terms.seg_target = Some(0.0),
                Err(e) => return Err(e),
            }
        }
        let xm_t = branch_xm_loss(tgt, detach)?;
        terms.xm_target = Some(val(&xm_t));
        total = total.add(&xm_t.scale(T::lit(w.lambda_xt)))?;
    }
    terms.total = val(&total);
    Ok((total, terms))
}
