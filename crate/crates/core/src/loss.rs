//! Weighted logistic + soft-Dice loss and its per-pixel weight map.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::labels::{LabelTable, TissueClass};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;
use crate::volume::LabelSlice;

const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightMapConfig {
    /// Structuring-element radius in pixels (square element, side 2r + 1).
    pub radius: usize,
    pub gradient_scale: f64,
    pub w_gm: f64,
    pub w_wm: f64,
}

impl Default for WeightMapConfig {
    fn default() -> Self {
        Self {
            radius: 2,
            gradient_scale: 1.0,
            w_gm: 2.0,
            w_wm: 2.0,
        }
    }
}

/// Per-pixel loss weights with their four additive components.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap {
    pub h: usize,
    pub w: usize,
    pub omega: Vec<f64>,
    pub median_freq: Vec<f64>,
    pub gradient: Vec<f64>,
    pub gm: Vec<f64>,
    pub wm_sulci: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub logistic_term: f64,
    pub dice_term: f64,
}

/// Binary dilation with a `(2r+1)²` square; pixels outside the frame are unset.
pub fn dilate(mask: &[bool], h: usize, w: usize, r: usize) -> Vec<bool> {
    morph(mask, h, w, r, true)
}

/// Binary erosion with a `(2r+1)²` square; pixels outside the frame are unset.
pub fn erode(mask: &[bool], h: usize, w: usize, r: usize) -> Vec<bool> {
    morph(mask, h, w, r, false)
}

fn morph(mask: &[bool], h: usize, w: usize, r: usize, grow: bool) -> Vec<bool> {
    let pass = |src: &[bool], along_rows: bool| -> Vec<bool> {
        let mut out = vec![false; h * w];
        for i in 0..h {
            for j in 0..w {
                let (pos, len) = if along_rows { (j, w) } else { (i, h) };
                let lo = pos as isize - r as isize;
                let hi = pos as isize + r as isize;
                let mut acc = !grow;
                for q in lo..=hi {
                    let v = if q < 0 || q >= len as isize {
                        false
                    } else if along_rows {
                        src[i * w + q as usize]
                    } else {
                        src[q as usize * w + j]
                    };
                    if grow {
                        acc |= v;
                    } else {
                        acc &= v;
                    }
                }
                out[i * w + j] = acc;
            }
        }
        out
    };
    let rows = pass(mask, true);
    pass(&rows, false)
}

/// Median of the frequencies of the classes present in the slice divided by
/// the frequency of each pixel's class.
pub fn median_frequency_weights(labels: &[u16]) -> Vec<f64> {
    let n = labels.len() as f64;
    let mut counts = std::collections::BTreeMap::<u16, usize>::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let mut freqs: Vec<f64> = counts.values().map(|&c| c as f64 / n).collect();
    freqs.sort_by(|a, b| a.total_cmp(b));
    let m = freqs.len();
    let median = if m % 2 == 1 {
        freqs[m / 2]
    } else {
        0.5 * (freqs[m / 2 - 1] + freqs[m / 2])
    };
    labels
        .iter()
        .map(|l| median / (counts[l] as f64 / n))
        .collect()
}

pub fn build_weight_map(
    labels: &LabelSlice,
    table: &LabelTable,
    cfg: &WeightMapConfig,
) -> Result<WeightMap> {
    let (h, w) = (labels.h, labels.w);
    let mut classes = Vec::with_capacity(labels.data.len());
    for &l in &labels.data {
        classes.push(table.class_of(l)?);
    }
    if cfg.gradient_scale < 0.0 || cfg.w_gm < 0.0 || cfg.w_wm < 0.0 {
        return invalid("weight map scales must be non-negative");
    }
    let median_freq = median_frequency_weights(&labels.data);

    let mut gradient = vec![0.0; h * w];
    let present: std::collections::BTreeSet<u16> = labels.data.iter().copied().collect();
    let at = |i: isize, j: isize| {
        labels.data[(i.clamp(0, h as isize - 1) as usize) * w + j.clamp(0, w as isize - 1) as usize]
    };
    for &c in &present {
        let hot = |i: isize, j: isize| if at(i, j) == c { 1.0f64 } else { 0.0 };
        for i in 0..h as isize {
            for j in 0..w as isize {
                let gx = 0.5 * (hot(i, j + 1) - hot(i, j - 1));
                let gy = 0.5 * (hot(i + 1, j) - hot(i - 1, j));
                gradient[i as usize * w + j as usize] += (gx * gx + gy * gy).sqrt();
            }
        }
    }
    gradient.iter_mut().for_each(|g| *g *= cfg.gradient_scale);

    let cortex: Vec<bool> = classes.iter().map(|&c| c == TissueClass::Cortex).collect();
    let r = cfg.radius;
    let grown = dilate(&cortex, h, w, r);
    let shrunk = erode(&cortex, h, w, r);
    let closed = erode(&grown, h, w, r);
    let gm: Vec<f64> = (0..h * w)
        .map(|k| {
            if grown[k] && !shrunk[k] {
                cfg.w_gm
            } else {
                0.0
            }
        })
        .collect();
    let wm_sulci: Vec<f64> = (0..h * w)
        .map(|k| {
            let wm_strand = classes[k] == TissueClass::Wm && grown[k];
            let sulcus =
                matches!(classes[k], TissueClass::Background | TissueClass::Csf) && closed[k];
            if wm_strand || sulcus {
                cfg.w_wm
            } else {
                0.0
            }
        })
        .collect();
    let omega = (0..h * w)
        .map(|k| median_freq[k] + gradient[k] + gm[k] + wm_sulci[k])
        .collect();
    Ok(WeightMap {
        h,
        w,
        omega,
        median_freq,
        gradient,
        gm,
        wm_sulci,
    })
}

fn check_inputs<T: Scalar>(
    probs: &Tensor4<T>,
    labels: &[u16],
    weights: &[T],
    strict: bool,
) -> Result<()> {
    let [n, c, h, w] = probs.shape();
    if labels.len() != n * h * w || weights.len() != n * h * w {
        return invalid("labels and weights must cover every pixel of the batch");
    }
    if c < 2 {
        return invalid("loss needs at least two classes");
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= c) {
        return invalid(format!("label {bad} out of range for {c} classes"));
    }
    if weights.iter().any(|w| !(w.as_f64() >= 0.0)) {
        return invalid("weights must be finite and non-negative");
    }
    if strict {
        let hw = h * w;
        let p = probs.data();
        for s in 0..n {
            for q in 0..hw {
                let mut sum = 0.0;
                for l in 0..c {
                    let v = p[(s * c + l) * hw + q].as_f64();
                    if !(-1e-6..=1.0 + 1e-6).contains(&v) {
                        return invalid("probabilities must lie in [0, 1]");
                    }
                    sum += v;
                }
                if (sum - 1.0).abs() > 1e-3 {
                    return invalid("probabilities do not sum to one");
                }
            }
        }
    }
    Ok(())
}

/// Loss value and its gradient with respect to `probs`. `labels` holds class
/// indices for every pixel (`n × h × w`), `weights` the matching ω.
pub fn composite_loss_with_grad<T: Scalar>(
    probs: &Tensor4<T>,
    labels: &[u16],
    weights: &[T],
) -> Result<(LossValue, Tensor4<T>)> {
    check_inputs(probs, labels, weights, true)?;
    Ok(loss_unchecked(probs, labels, weights))
}

pub fn composite_loss<T: Scalar>(
    probs: &Tensor4<T>,
    labels: &[u16],
    weights: &[T],
) -> Result<LossValue> {
    composite_loss_with_grad(probs, labels, weights).map(|r| r.0)
}

/// Same formula without the distribution check, for perturbation studies.
pub fn composite_loss_raw<T: Scalar>(
    probs: &Tensor4<T>,
    labels: &[u16],
    weights: &[T],
) -> Result<(LossValue, Tensor4<T>)> {
    check_inputs(probs, labels, weights, false)?;
    Ok(loss_unchecked(probs, labels, weights))
}

fn loss_unchecked<T: Scalar>(
    probs: &Tensor4<T>,
    labels: &[u16],
    weights: &[T],
) -> (LossValue, Tensor4<T>) {
    let [n, c, h, w] = probs.shape();
    let hw = h * w;
    let p = probs.data();
    let inv_n = 1.0 / n as f64;
    let mut grad = vec![0.0f64; p.len()];
    let (mut logistic, mut dice) = (0.0, 0.0);
    for s in 0..n {
        let lab = &labels[s * hw..(s + 1) * hw];
        let om = &weights[s * hw..(s + 1) * hw];
        for q in 0..hw {
            let k = (s * c + lab[q] as usize) * hw + q;
            let pv = p[k].as_f64();
            let wq = om[q].as_f64();
            logistic -= wq * pv.max(LOG_FLOOR).ln() * inv_n;
            if pv > LOG_FLOOR {
                grad[k] -= wq / pv * inv_n;
            }
        }
        for l in 0..c {
            let plane = &p[(s * c + l) * hw..(s * c + l + 1) * hw];
            let (mut inter, mut sp, mut sy) = (0.0, 0.0, 0.0);
            for q in 0..hw {
                let pv = plane[q].as_f64();
                let y = if lab[q] as usize == l { 1.0 } else { 0.0 };
                inter += pv * y;
                sp += pv;
                sy += y;
            }
            let denom = sp + sy;
            if denom == 0.0 {
                dice -= inv_n;
                continue;
            }
            dice -= 2.0 * inter / denom * inv_n;
            for q in 0..hw {
                let y = if lab[q] as usize == l { 1.0 } else { 0.0 };
                grad[(s * c + l) * hw + q] -=
                    (2.0 * y / denom - 2.0 * inter / (denom * denom)) * inv_n;
            }
        }
    }
    let g = Tensor4::from_vec(probs.shape(), grad.into_iter().map(T::lit).collect())
        .expect("shape preserved");
    (
        LossValue {
            total: logistic + dice,
            logistic_term: logistic,
            dice_term: dice,
        },
        g,
    )
}
