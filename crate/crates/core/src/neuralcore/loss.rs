use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::mlp::Activation;
use crate::error::{Error, Result};

/// Predictions are clamped into `[PROB_CLAMP, 1 - PROB_CLAMP]` before any log.
pub const PROB_CLAMP: f64 = 1e-7;

#[inline]
fn clamp_prob(p: f64) -> (f64, f64) {
    let hi = 1.0 - PROB_CLAMP;
    if p < PROB_CLAMP {
        (PROB_CLAMP, 0.0)
    } else if p > hi {
        (hi, 0.0)
    } else {
        (p, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self { alpha: 0.5, gamma: 4.0 }
    }
}

impl FocalParams {
    pub fn new(alpha: f64, gamma: f64) -> Result<Self> {
        let p = Self { alpha, gamma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Validation(format!("focal alpha must be in (0,1), got {}", self.alpha)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Validation(format!("focal gamma must be >= 0, got {}", self.gamma)));
        }
        Ok(())
    }
}

/// Mean focal loss over every element of the batch, and its gradient with
/// respect to `pred`.
///
/// Per element: `-[α·q·(1-p)^γ·ln p + (1-α)·(1-q)·p^γ·ln(1-p)]`.
pub fn focal_loss(
    pred: ArrayView2<f64>,
    target: ArrayView2<f64>,
    params: &FocalParams,
) -> Result<(f64, Array2<f64>)> {
    if pred.dim() != target.dim() {
        return Err(Error::Shape(format!(
            "prediction is {:?} but target is {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    let n = pred.len();
    if n == 0 {
        return Err(Error::Shape("focal loss needs at least one element".into()));
    }
    let (alpha, gamma) = (params.alpha, params.gamma);
    let scale = 1.0 / n as f64;
    let mut total = 0.0;
    let mut grad = Array2::zeros(pred.dim());
    ndarray::Zip::from(&mut grad)
        .and(pred)
        .and(target)
        .for_each(|g, &raw, &q| {
            let (p, pass) = clamp_prob(raw);
            let (lp, l1p) = (p.ln(), (1.0 - p).ln());
            let pos = alpha * q;
            let neg = (1.0 - alpha) * (1.0 - q);
            let term = pos * (1.0 - p).powf(gamma) * lp + neg * p.powf(gamma) * l1p;
            total -= term;
            let dterm = pos * (-gamma * (1.0 - p).powf(gamma - 1.0) * lp + (1.0 - p).powf(gamma) / p)
                + neg * (gamma * p.powf(gamma - 1.0) * l1p - p.powf(gamma) / (1.0 - p));
            *g = -dterm * scale * pass;
        });
    Ok((total * scale, grad))
}

/// Single-vector convenience wrapper around [`focal_loss`].
pub fn focal_loss_vec(pred: &[f64], target: &[f64], params: &FocalParams) -> Result<(f64, Vec<f64>)> {
    let p = ArrayView2::from_shape((1, pred.len()), pred).expect("row view");
    let t = ArrayView2::from_shape((1, target.len()), target)
        .map_err(|e| Error::Shape(e.to_string()))?;
    let (loss, g) = focal_loss(p, t, params)?;
    Ok((loss, g.into_raw_vec_and_offset().0))
}

fn check_labels(rows: usize, cols: usize, labels: &[usize]) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::Shape(format!("{} labels for a batch of {rows}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= cols) {
        return Err(Error::Validation(format!("label {bad} out of range for {cols} classes")));
    }
    Ok(())
}

/// Batch-mean `-ln(pred[label])` over sigmoid outputs; gradient is with
/// respect to `pred`.
pub fn action_loss(pred: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    check_labels(pred.nrows(), pred.ncols(), labels)?;
    let scale = 1.0 / labels.len().max(1) as f64;
    let mut grad = Array2::zeros(pred.dim());
    let mut total = 0.0;
    for (b, &y) in labels.iter().enumerate() {
        let (p, pass) = clamp_prob(pred[[b, y]]);
        total -= p.ln();
        grad[[b, y]] = -pass * scale / p;
    }
    Ok((total * scale, grad))
}

pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exp = logits.mapv(|v| (v - max).exp());
    let sum = exp.sum();
    exp / sum
}

/// Batch-mean softmax cross-entropy; gradient is with respect to the logits.
pub fn softmax_cross_entropy(logits: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    check_labels(logits.nrows(), logits.ncols(), labels)?;
    let scale = 1.0 / labels.len().max(1) as f64;
    let mut grad = Array2::zeros(logits.dim());
    let mut total = 0.0;
    for (b, &y) in labels.iter().enumerate() {
        let probs = softmax(logits.row(b));
        total -= clamp_prob(probs[y]).0.ln();
        let mut row = grad.row_mut(b);
        row.assign(&(probs * scale));
        row[y] -= scale;
    }
    Ok((total * scale, grad))
}

/// How the action network's last layer is read out and trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionHead {
    /// Sigmoid outputs with `-ln(pred[label])`.
    #[default]
    SigmoidCe,
    /// Identity outputs treated as logits of a softmax.
    SoftmaxCe,
}

impl ActionHead {
    pub fn output_activation(self) -> Activation {
        match self {
            ActionHead::SigmoidCe => Activation::Sigmoid,
            ActionHead::SoftmaxCe => Activation::Identity,
        }
    }

    /// Loss and gradient with respect to the raw network output.
    pub fn loss(self, output: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
        match self {
            ActionHead::SigmoidCe => action_loss(output, labels),
            ActionHead::SoftmaxCe => softmax_cross_entropy(output, labels),
        }
    }

    /// Class scores for one output row.
    pub fn probabilities(self, output: ArrayView1<f64>) -> Vec<f64> {
        match self {
            ActionHead::SigmoidCe => output.to_vec(),
            ActionHead::SoftmaxCe => softmax(output).to_vec(),
        }
    }
}

impl std::str::FromStr for ActionHead {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid_ce" => Ok(ActionHead::SigmoidCe),
            "softmax_ce" => Ok(ActionHead::SoftmaxCe),
            other => Err(Error::Validation(format!(
                "unknown action head '{other}' (expected sigmoid_ce or softmax_ce)"
            ))),
        }
    }
}

impl std::fmt::Display for ActionHead {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ActionHead::SigmoidCe => "sigmoid_ce",
            ActionHead::SoftmaxCe => "softmax_ce",
        })
    }
}
