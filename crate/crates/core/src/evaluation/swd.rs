use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mesh::{TextureImage, BACKGROUND};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwdParams {
    /// Pyramid resolutions, each the image side divided by a power of two.
    pub resolutions: Vec<usize>,
    pub patch: usize,
    pub patches_per_image: usize,
    pub projections: usize,
    pub repeats: usize,
    pub seed: u64,
    /// Standardize every patch per channel before projecting.
    pub normalize: bool,
    /// Exclude patches touching background (pure black) texels.
    pub mask_background: bool,
    /// Project onto these directions instead of random ones (each normalized).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub directions: Option<Vec<Vec<f64>>>,
}

impl Default for SwdParams {
    fn default() -> Self {
        Self {
            resolutions: vec![128, 64, 32, 16],
            patch: 7,
            patches_per_image: 128,
            projections: 128,
            repeats: 4,
            seed: 0,
            normalize: true,
            mask_background: true,
            directions: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwdReport {
    /// Descending resolutions.
    pub resolutions: Vec<usize>,
    /// SWD ×1e3 per resolution.
    pub values: Vec<f64>,
    pub average: f64,
    pub params: SwdParams,
}

/// Single-channel-per-plane image used for pyramid arithmetic.
#[derive(Debug, Clone, PartialEq)]
struct Planes {
    side: usize,
    data: [Vec<f64>; 3],
}

impl Planes {
    fn from_image(img: &TextureImage) -> Self {
        let mut data = [Vec::new(), Vec::new(), Vec::new()];
        for c in 0..3 {
            data[c] = img.pixels().iter().map(|p| p[c]).collect();
        }
        Self { side: img.width(), data }
    }

    fn map2(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut data = self.data.clone();
        for c in 0..3 {
            for (a, b) in data[c].iter_mut().zip(&other.data[c]) {
                *a = f(*a, *b);
            }
        }
        Self { side: self.side, data }
    }
}

const TAPS: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i.clamp(0, n - 1) as usize
}

/// Separable binomial blur with reflected borders.
fn blur(p: &Planes) -> Planes {
    let n = p.side;
    let mut out = p.clone();
    for c in 0..3 {
        let src = &p.data[c];
        let mut tmp = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                tmp[i * n + j] = TAPS
                    .iter()
                    .enumerate()
                    .map(|(t, w)| w * src[i * n + reflect(j as isize + t as isize - 2, n)])
                    .sum();
            }
        }
        for i in 0..n {
            for j in 0..n {
                out.data[c][i * n + j] = TAPS
                    .iter()
                    .enumerate()
                    .map(|(t, w)| w * tmp[reflect(i as isize + t as isize - 2, n) * n + j])
                    .sum();
            }
        }
    }
    out
}

fn downsample(p: &Planes) -> Planes {
    let b = blur(p);
    let n = p.side / 2;
    let mut data = [vec![0.0; n * n], vec![0.0; n * n], vec![0.0; n * n]];
    for c in 0..3 {
        for i in 0..n {
            for j in 0..n {
                data[c][i * n + j] = b.data[c][2 * i * p.side + 2 * j];
            }
        }
    }
    Planes { side: n, data }
}

fn upsample(p: &Planes) -> Planes {
    let n = 2 * p.side;
    let mut data = [vec![0.0; n * n], vec![0.0; n * n], vec![0.0; n * n]];
    for c in 0..3 {
        for i in 0..n {
            for j in 0..n {
                data[c][i * n + j] = p.data[c][(i / 2) * p.side + j / 2];
            }
        }
    }
    blur(&Planes { side: n, data })
}

/// Pyramid levels at the requested resolutions (descending). Every level except the
/// coarsest is the band-pass difference `G_r − up(G_{r/2})`; the coarsest is `G_r`.
fn pyramid(img: &TextureImage, resolutions: &[usize]) -> Vec<Planes> {
    let coarsest = *resolutions.last().expect("non-empty resolutions");
    let mut gauss = vec![Planes::from_image(img)];
    while gauss.last().unwrap().side > coarsest {
        let next = downsample(gauss.last().unwrap());
        gauss.push(next);
    }
    resolutions
        .iter()
        .map(|&r| {
            let k = gauss.iter().position(|g| g.side == r).expect("validated resolution");
            if r == coarsest {
                gauss[k].clone()
            } else {
                gauss[k].map2(&upsample(&gauss[k + 1]), |a, b| a - b)
            }
        })
        .collect()
}

/// Background mask at side `r`: a texel is background if any source texel in its block
/// is, then grown by one texel since the blur spreads the border.
fn background_mask(img: &TextureImage, r: usize) -> Vec<bool> {
    let s = img.width() / r;
    let mut mask = vec![false; r * r];
    for (idx, p) in img.pixels().iter().enumerate() {
        if *p == BACKGROUND {
            let (i, j) = (idx / img.width(), idx % img.width());
            mask[(i / s) * r + j / s] = true;
        }
    }
    let mut grown = mask.clone();
    for i in 0..r {
        for j in 0..r {
            if mask[i * r + j] {
                for di in -1isize..=1 {
                    for dj in -1isize..=1 {
                        let (a, b) = (i as isize + di, j as isize + dj);
                        if a >= 0 && b >= 0 && (a as usize) < r && (b as usize) < r {
                            grown[a as usize * r + b as usize] = true;
                        }
                    }
                }
            }
        }
    }
    grown
}

/// Top-left corners of patches that avoid masked texels.
fn valid_corners(mask: Option<&[bool]>, r: usize, patch: usize) -> Vec<(usize, usize)> {
    let span = r - patch + 1;
    let mut out = Vec::new();
    for i in 0..span {
        for j in 0..span {
            let ok = match mask {
                None => true,
                Some(m) => (0..patch).all(|a| (0..patch).all(|b| !m[(i + a) * r + j + b])),
            };
            if ok {
                out.push((i, j));
            }
        }
    }
    out
}

fn check(set: &[TextureImage], params: &SwdParams, name: &str) -> Result<()> {
    if set.is_empty() {
        return Err(Error::invalid(format!("{name} image set is empty")));
    }
    let side = set[0].width();
    for img in set {
        if img.width() != img.height() || img.width() != side {
            return Err(Error::invalid(format!("{name} images must be square and equally sized")));
        }
    }
    for &r in &params.resolutions {
        if r == 0 || r > side || side % r != 0 || !(side / r).is_power_of_two() {
            return Err(Error::invalid(format!("resolution {r} is not {side} divided by a power of two")));
        }
        if params.patch > r {
            return Err(Error::invalid(format!("patch {} larger than resolution {r}", params.patch)));
        }
    }
    Ok(())
}

/// `patches x (patch² · 3)` descriptors of one set at pyramid position `level`.
fn sample_patches(set: &[TextureImage], params: &SwdParams, level: usize, stream: u64) -> Result<DMatrix<f64>> {
    let p = params.patch;
    let width = p * p * 3;
    let r = params.resolutions[level];
    let mut rows: Vec<f64> = Vec::new();
    for (idx, img) in set.iter().enumerate() {
        let planes = &pyramid(img, &params.resolutions)[level];
        let mask = params.mask_background.then(|| background_mask(img, r));
        let corners = valid_corners(mask.as_deref(), r, p);
        if corners.is_empty() {
            continue;
        }
        let mut rng = rng::rng_for(params.seed, &[stream, level as u64, idx as u64]);
        for _ in 0..params.patches_per_image {
            let (i0, j0) = corners[rng.random_range(0..corners.len())];
            let start = rows.len();
            for c in 0..3 {
                for a in 0..p {
                    for b in 0..p {
                        rows.push(planes.data[c][(i0 + a) * r + j0 + b]);
                    }
                }
            }
            if params.normalize {
                for c in 0..3 {
                    let chunk = &mut rows[start + c * p * p..start + (c + 1) * p * p];
                    let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
                    let var = chunk.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / chunk.len() as f64;
                    let std = var.sqrt().max(1e-8);
                    for v in chunk {
                        *v = (*v - mean) / std;
                    }
                }
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::invalid(format!("no unmasked {p}x{p} patch at resolution {r}")));
    }
    Ok(DMatrix::from_row_slice(rows.len() / width, width, &rows))
}

fn directions(params: &SwdParams, width: usize, level: usize, repeat: usize) -> Result<DMatrix<f64>> {
    let mut dirs = match &params.directions {
        Some(fixed) => {
            if fixed.is_empty() || fixed.iter().any(|d| d.len() != width) {
                return Err(Error::invalid(format!("fixed directions must have length {width}")));
            }
            DMatrix::from_fn(width, fixed.len(), |i, j| fixed[j][i])
        }
        None => {
            let mut rng = rng::rng_for(params.seed, &[2, level as u64, repeat as u64]);
            DMatrix::from_fn(width, params.projections, |_, _| StandardNormal.sample(&mut rng))
        }
    };
    for mut col in dirs.column_iter_mut() {
        let norm = col.norm();
        if !(norm > 0.0) {
            return Err(Error::invalid("zero projection direction"));
        }
        col /= norm;
    }
    Ok(dirs)
}

/// Mean over projections of `mean |sorted(a) − sorted(b)|`, both truncated to the smaller
/// count.
fn sliced_distance(a: &DMatrix<f64>, b: &DMatrix<f64>, dirs: &DMatrix<f64>) -> f64 {
    let pa = a * dirs;
    let pb = b * dirs;
    let count = pa.nrows().min(pb.nrows());
    let mut total = 0.0;
    for k in 0..dirs.ncols() {
        let mut xa: Vec<f64> = pa.column(k).iter().copied().collect();
        let mut xb: Vec<f64> = pb.column(k).iter().copied().collect();
        xa.sort_by(f64::total_cmp);
        xb.sort_by(f64::total_cmp);
        total += truncated_w1(&xa, &xb, count);
    }
    total / dirs.ncols() as f64
}

/// Sorted samples taken at evenly spread ranks when one side has more.
fn truncated_w1(xa: &[f64], xb: &[f64], count: usize) -> f64 {
    let pick = |x: &[f64], i: usize| x[i * x.len() / count];
    (0..count).map(|i| (pick(xa, i) - pick(xb, i)).abs()).sum::<f64>() / count as f64
}

/// Multi-resolution sliced Wasserstein distance between two image collections. Sets are
/// sampled from independent streams of `params.seed`.
pub fn sliced_wasserstein(a: &[TextureImage], b: &[TextureImage], params: &SwdParams) -> Result<SwdReport> {
    check(a, params, "first")?;
    check(b, params, "second")?;
    if a[0].width() != b[0].width() {
        return Err(Error::invalid("image sets have different sizes"));
    }
    if params.resolutions.is_empty() || params.patch == 0 || params.patches_per_image == 0 || params.repeats == 0 {
        return Err(Error::invalid("resolutions, patch, patches_per_image and repeats must be positive"));
    }
    if params.directions.is_none() && params.projections == 0 {
        return Err(Error::invalid("projections must be positive"));
    }
    let mut sorted = params.clone();
    sorted.resolutions.sort_unstable_by(|x, y| y.cmp(x));
    sorted.resolutions.dedup();
    let width = sorted.patch * sorted.patch * 3;
    let mut values = Vec::with_capacity(sorted.resolutions.len());
    for level in 0..sorted.resolutions.len() {
        let pa = sample_patches(a, &sorted, level, 0)?;
        let pb = sample_patches(b, &sorted, level, 1)?;
        let mut total = 0.0;
        for repeat in 0..sorted.repeats {
            total += sliced_distance(&pa, &pb, &directions(&sorted, width, level, repeat)?);
        }
        values.push(1e3 * total / sorted.repeats as f64);
    }
    let average = values.iter().sum::<f64>() / values.len() as f64;
    Ok(SwdReport {
        resolutions: sorted.resolutions.clone(),
        values,
        average,
        params: sorted,
    })
}
