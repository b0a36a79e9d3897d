//! Overlap and surface-distance metrics plus the paired statistics used to
//! compare methods.
//!
//! DSC is reported on a 0–100 scale. ASD is the pooled mean of the distances
//! from every border voxel of one mask to the nearest border voxel of the
//! other, in both directions, measured between voxel centres in mm. A border
//! voxel is a mask voxel with at least one face neighbour outside the mask
//! (the volume exterior counts as outside).

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Result};
use crate::volume::LabelVolume;

/// Largest number of non-zero differences handled by the exact null
/// distribution.
pub const WILCOXON_EXACT_MAX_N: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructureScore {
    pub label: u16,
    pub dsc: f64,
    /// `None` when either mask is empty.
    pub asd: Option<f64>,
}

fn check_pair(a: &LabelVolume, b: &LabelVolume) -> Result<()> {
    if a.dims != b.dims {
        return invalid(format!(
            "volume extents differ: {:?} vs {:?}",
            a.dims, b.dims
        ));
    }
    if a.res != b.res {
        return invalid(format!("voxel sizes differ: {} vs {}", a.res, b.res));
    }
    Ok(())
}

/// Dice similarity coefficient of `label` in percent; both masks empty → 100.
pub fn dsc(a: &LabelVolume, b: &LabelVolume, label: u16) -> Result<f64> {
    check_pair(a, b)?;
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.data.iter().zip(&b.data) {
        let (ia, ib) = (x == label, y == label);
        na += ia as usize;
        nb += ib as usize;
        both += (ia && ib) as usize;
    }
    if na + nb == 0 {
        return Ok(100.0);
    }
    Ok(100.0 * 2.0 * both as f64 / (na + nb) as f64)
}

/// Border voxels of `label`, as flat indices in ascending order.
pub fn border_voxels(v: &LabelVolume, label: u16) -> Vec<usize> {
    let [nz, ny, nx] = v.dims;
    let inside = |z: isize, y: isize, x: isize| {
        z >= 0
            && y >= 0
            && x >= 0
            && (z as usize) < nz
            && (y as usize) < ny
            && (x as usize) < nx
            && v.get(z as usize, y as usize, x as usize) == label
    };
    let mut out = Vec::new();
    for z in 0..nz as isize {
        for y in 0..ny as isize {
            for x in 0..nx as isize {
                if !inside(z, y, x) {
                    continue;
                }
                let open = [
                    (1, 0, 0),
                    (-1, 0, 0),
                    (0, 1, 0),
                    (0, -1, 0),
                    (0, 0, 1),
                    (0, 0, -1),
                ]
                .iter()
                .any(|&(dz, dy, dx)| !inside(z + dz, y + dy, x + dx));
                if open {
                    out.push(v.index(z as usize, y as usize, x as usize));
                }
            }
        }
    }
    out
}

/// One-dimensional squared distance transform of a sampled function
/// (lower envelope of parabolas). `None` entries carry no feature.
fn edt_1d(f: &[Option<f64>], out: &mut [Option<f64>]) {
    let n = f.len();
    let mut v: Vec<usize> = Vec::with_capacity(n);
    let mut z: Vec<f64> = Vec::with_capacity(n + 1);
    for (q, fq) in f.iter().enumerate() {
        let Some(fq) = *fq else { continue };
        let qf = q as f64;
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.clear();
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let pf = p as f64;
                    let fp = f[p].expect("envelope holds features");
                    let s = ((fq + qf * qf) - (fp + pf * pf)) / (2.0 * qf - 2.0 * pf);
                    if s <= *z.last().expect("paired with v") {
                        v.pop();
                        z.pop();
                        if v.is_empty() {
                            continue;
                        }
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = None);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let qf = q as f64;
        while k + 1 < v.len() && z[k + 1] < qf {
            k += 1;
        }
        let p = v[k];
        let d = qf - p as f64;
        *o = Some(f[p].expect("feature") + d * d);
    }
}

/// Exact squared Euclidean distance (in voxels²) from every voxel to the
/// nearest feature voxel; `None` when there is no feature at all.
pub fn squared_distance_transform(dims: [usize; 3], features: &[usize]) -> Vec<Option<f64>> {
    let [nz, ny, nx] = dims;
    let mut g: Vec<Option<f64>> = vec![None; nz * ny * nx];
    for &k in features {
        g[k] = Some(0.0);
    }
    let mut buf_in = Vec::new();
    let mut buf_out = Vec::new();
    // axis x
    for z in 0..nz {
        for y in 0..ny {
            let base = (z * ny + y) * nx;
            buf_in.clear();
            buf_in.extend_from_slice(&g[base..base + nx]);
            buf_out.resize(nx, None);
            edt_1d(&buf_in, &mut buf_out);
            g[base..base + nx].copy_from_slice(&buf_out);
        }
    }
    // axis y
    for z in 0..nz {
        for x in 0..nx {
            buf_in.clear();
            buf_in.extend((0..ny).map(|y| g[(z * ny + y) * nx + x]));
            buf_out.resize(ny, None);
            edt_1d(&buf_in, &mut buf_out);
            for y in 0..ny {
                g[(z * ny + y) * nx + x] = buf_out[y];
            }
        }
    }
    // axis z
    for y in 0..ny {
        for x in 0..nx {
            buf_in.clear();
            buf_in.extend((0..nz).map(|z| g[(z * ny + y) * nx + x]));
            buf_out.resize(nz, None);
            edt_1d(&buf_in, &mut buf_out);
            for z in 0..nz {
                g[(z * ny + y) * nx + x] = buf_out[z];
            }
        }
    }
    g
}

/// Average symmetric surface distance of `label` in mm; `None` if either
/// mask is empty.
pub fn asd(a: &LabelVolume, b: &LabelVolume, label: u16) -> Result<Option<f64>> {
    check_pair(a, b)?;
    let ba = border_voxels(a, label);
    let bb = border_voxels(b, label);
    if ba.is_empty() || bb.is_empty() {
        return Ok(None);
    }
    let da = squared_distance_transform(a.dims, &ba);
    let db = squared_distance_transform(b.dims, &bb);
    let mut sum = 0.0;
    for &k in &ba {
        sum += db[k].expect("b has border voxels").sqrt() * a.res;
    }
    for &k in &bb {
        sum += da[k].expect("a has border voxels").sqrt() * a.res;
    }
    Ok(Some(sum / (ba.len() + bb.len()) as f64))
}

pub fn score_structure(
    pred: &LabelVolume,
    reference: &LabelVolume,
    label: u16,
) -> Result<StructureScore> {
    Ok(StructureScore {
        label,
        dsc: dsc(pred, reference, label)?,
        asd: asd(pred, reference, label)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WilcoxonMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilcoxonResult {
    /// Two-sided p-value; `None` when every difference is zero.
    pub p: Option<f64>,
    /// Sum of ranks of the positive differences.
    pub w_plus: f64,
    /// Number of non-zero differences.
    pub n: usize,
    pub method: WilcoxonMethod,
}

/// Average ranks (1-based) of `v`, with the tie-group sizes.
fn average_ranks(v: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j + 2) as f64 / 2.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, ties)
}

/// Two-sided paired Wilcoxon signed-rank test of `x - y`. Zero differences
/// are dropped. Up to [`WILCOXON_EXACT_MAX_N`] remaining pairs the exact null
/// distribution over all sign patterns is used (ties handled through the
/// average ranks); above that a normal approximation with tie and
/// continuity correction.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<WilcoxonResult> {
    if x.len() != y.len() {
        return invalid("paired samples differ in length");
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return invalid("paired samples must be finite");
    }
    let d: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(a, b)| a - b)
        .filter(|&v| v != 0.0)
        .collect();
    let n = d.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            p: None,
            w_plus: 0.0,
            n: 0,
            method: WilcoxonMethod::Exact,
        });
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let (ranks, ties) = average_ranks(&abs);
    let w_plus: f64 = d
        .iter()
        .zip(&ranks)
        .filter(|(v, _)| **v > 0.0)
        .map(|(_, r)| r)
        .sum();
    if n <= WILCOXON_EXACT_MAX_N {
        // Doubled ranks are integers; count sign patterns per attainable sum.
        let r2: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let total: usize = r2.iter().sum();
        let mut counts = vec![0f64; total + 1];
        counts[0] = 1.0;
        for &r in &r2 {
            for s in (r..=total).rev() {
                counts[s] += counts[s - r];
            }
        }
        let all = 2f64.powi(n as i32);
        let w2 = (2.0 * w_plus).round() as usize;
        let lower: f64 = counts[..=w2].iter().sum::<f64>() / all;
        let upper: f64 = counts[w2..].iter().sum::<f64>() / all;
        let p = (2.0 * lower.min(upper)).min(1.0);
        return Ok(WilcoxonResult {
            p: Some(p),
            w_plus,
            n,
            method: WilcoxonMethod::Exact,
        });
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let p = (2.0 * (1.0 - normal.cdf(z))).min(1.0);
    Ok(WilcoxonResult {
        p: Some(p),
        w_plus,
        n,
        method: WilcoxonMethod::Normal,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BhResult {
    pub adjusted: Vec<f64>,
    pub rejected: Vec<bool>,
}

/// Benjamini–Hochberg step-up adjustment at false discovery rate `alpha`.
pub fn benjamini_hochberg(p: &[f64], alpha: f64) -> Result<BhResult> {
    if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return invalid("p-values must lie in [0, 1]");
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return invalid("alpha must lie in (0, 1)");
    }
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank0, &i) in order.iter().enumerate().rev() {
        let v = p[i] * m as f64 / (rank0 + 1) as f64;
        running = running.min(v);
        adjusted[i] = running.min(1.0);
    }
    let mut k_max = 0;
    for (rank0, &i) in order.iter().enumerate() {
        if p[i] <= (rank0 + 1) as f64 / m as f64 * alpha {
            k_max = rank0 + 1;
        }
    }
    let mut rejected = vec![false; m];
    for &i in &order[..k_max] {
        rejected[i] = true;
    }
    Ok(BhResult { adjusted, rejected })
}

/// Raw and BH-adjusted p-values of one paired comparison across structures.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedTestResult {
    pub raw_p: Vec<Option<f64>>,
    /// Adjusted over the non-degenerate tests only.
    pub adjusted_p: Vec<Option<f64>>,
    pub rejected: Vec<bool>,
    pub alpha: f64,
}

/// Runs one Wilcoxon test per structure (`a[k]`, `b[k]` are paired subject
/// scores) and corrects across structures.
pub fn paired_tests(a: &[Vec<f64>], b: &[Vec<f64>], alpha: f64) -> Result<PairedTestResult> {
    if a.len() != b.len() {
        return invalid("structure counts differ");
    }
    let raw_p = a
        .iter()
        .zip(b)
        .map(|(x, y)| wilcoxon_signed_rank(x, y).map(|r| r.p))
        .collect::<Result<Vec<_>>>()?;
    let defined: Vec<f64> = raw_p.iter().flatten().copied().collect();
    let bh = benjamini_hochberg(&defined, alpha)?;
    let mut adjusted_p = Vec::with_capacity(raw_p.len());
    let mut rejected = Vec::with_capacity(raw_p.len());
    let mut k = 0;
    for p in &raw_p {
        if p.is_some() {
            adjusted_p.push(Some(bh.adjusted[k]));
            rejected.push(bh.rejected[k]);
            k += 1;
        } else {
            adjusted_p.push(None);
            rejected.push(false);
        }
    }
    Ok(PairedTestResult {
        raw_p,
        adjusted_p,
        rejected,
        alpha,
    })
}
