//! Independent reference implementations used by the integration and
//! acceptance tests. Nothing here calls the library code under test except
//! the raw network (`Backend::logits`, `DeskCnn::logits_from_layer`).

#![allow(dead_code)]

use rand::Rng;
use sise_core::model::{Backend, DeskCnn, ScoreSurface, Tensor};
use sise_core::Grid;

pub fn softmax_at(logits: &[f64], c: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|v| (v - m).exp()).sum();
    (logits[c] - m).exp() / z
}

pub fn score(logits: &[f64], c: usize, surface: ScoreSurface) -> f64 {
    match surface {
        ScoreSurface::Logit => logits[c],
        ScoreSurface::Probability => softmax_at(logits, c),
    }
}

/// `x * m` per channel, moving masked pixels to zero.
pub fn mask_input(x: &Tensor, m: &Grid) -> Tensor {
    let (c, h, w) = x.shape();
    let mut data = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for p in 0..h * w {
            data.push(x.as_slice()[ch * h * w + p] * m.as_slice()[p]);
        }
    }
    Tensor::from_vec(c, h, w, data).unwrap()
}

/// Unbatched `mean_m score(I*m) * m / sum(m)`.
pub fn loop_visualization(
    net: &dyn Backend,
    x: &Tensor,
    c: usize,
    masks: &[Grid],
    surface: ScoreSurface,
) -> Vec<f64> {
    let n = x.height() * x.width();
    let mut acc = vec![0.0; n];
    for m in masks {
        let s = score(&net.logits(&mask_input(x, m)).unwrap(), c, surface);
        let total: f64 = m.as_slice().iter().sum();
        for p in 0..n {
            acc[p] += s * m.as_slice()[p] / total;
        }
    }
    acc.iter().map(|v| v / masks.len() as f64).collect()
}

/// Unbatched `sum_m score(I*m) m / sum_m m`, min-max rescaled.
pub fn loop_rise(
    net: &dyn Backend,
    x: &Tensor,
    c: usize,
    masks: &[Grid],
    surface: ScoreSurface,
) -> Vec<f64> {
    let n = x.height() * x.width();
    let mut num = vec![0.0; n];
    let mut den = vec![0.0; n];
    for m in masks {
        let s = score(&net.logits(&mask_input(x, m)).unwrap(), c, surface);
        for p in 0..n {
            num[p] += s * m.as_slice()[p];
            den[p] += m.as_slice()[p];
        }
    }
    let raw: Vec<f64> = (0..n)
        .map(|p| if den[p] > 0.0 { num[p] / den[p] } else { 0.0 })
        .collect();
    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    raw.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// `max |a - b| / max |b|`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        / scale
}

pub fn random_smooth_mask(rng: &mut impl Rng, h: usize, w: usize) -> Grid {
    let cells = rng.random_range(2..6);
    let coarse = Grid::from_fn(cells, cells, |_, _| rng.random::<f64>());
    let up = coarse.resize_bilinear(h, w);
    // keep the mask strictly non-degenerate
    let mut m = up;
    m.as_mut_slice()[rng.random_range(0..h * w)] = 1.0;
    m
}

/// Exhaustive Otsu: every cut between the 256 bins is scored directly from
/// the pixel values it separates; the first maximum wins.
pub fn otsu_exhaustive(map: &Grid) -> Vec<bool> {
    let v = map.as_slice();
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![true; v.len()];
    }
    let bin = |x: f64| (((x - lo) / (hi - lo) * 256.0) as usize).min(255);
    let n = v.len() as f64;
    let mut best = (-1.0, 1usize);
    for cut in 1..256 {
        let (mut n0, mut s0, mut n1, mut s1) = (0.0, 0.0, 0.0, 0.0);
        for &x in v {
            if bin(x) < cut {
                n0 += 1.0;
                s0 += x;
            } else {
                n1 += 1.0;
                s1 += x;
            }
        }
        if n0 == 0.0 || n1 == 0.0 {
            continue;
        }
        let d = s0 / n0 - s1 / n1;
        let var = (n0 / n) * (n1 / n) * d * d;
        if var > best.0 * (1.0 + 1e-12) {
            best = (var, cut);
        }
    }
    v.iter().map(|&x| bin(x) >= best.1).collect()
}

/// One-sided finite differences `(forward, backward)` of the class score
/// with respect to the activation of `layer`, along direction `dir` (same
/// shape as `act`). Their mean is the central difference.
pub fn fd_one_sided(
    net: &DeskCnn,
    layer: &str,
    act: &Tensor,
    dir: &[f64],
    c: usize,
    surface: ScoreSurface,
    h: f64,
) -> (f64, f64) {
    let at = |step: f64| {
        let data: Vec<f64> = act
            .as_slice()
            .iter()
            .zip(dir)
            .map(|(a, d)| a + step * d)
            .collect();
        let t = Tensor::from_vec(act.channels(), act.height(), act.width(), data).unwrap();
        score(&net.logits_from_layer(layer, &t).unwrap(), c, surface)
    };
    let mid = at(0.0);
    ((at(h) - mid) / h, (mid - at(-h)) / h)
}

pub fn fd_directional(
    net: &DeskCnn,
    layer: &str,
    act: &Tensor,
    dir: &[f64],
    c: usize,
    surface: ScoreSurface,
    h: f64,
) -> f64 {
    let (f, b) = fd_one_sided(net, layer, act, dir, c, surface, h);
    0.5 * (f + b)
}

/// A ReLU or max-pool kink within `h` shows up as one-sided slopes that
/// disagree; the central difference is no oracle there.
pub fn smooth_at(forward: f64, backward: f64) -> bool {
    close(forward, backward, 1e-3, 1e-8)
}

/// Relative agreement with a small absolute floor for near-zero values.
pub fn close(a: f64, b: f64, rel: f64, floor: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + floor
}
