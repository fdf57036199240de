//! Texture images and the UV mapping between vertex colors and texels.
//!
//! Texel `(i, j)` (row, column) has its center at `((j + 0.5) / W, (i + 0.5) / H)` in UV
//! space, with `v` pointing down the image. Sampling and rasterization both use this
//! convention so they invert each other.

use std::path::Path;

use super::{TemplateTopology, VertexColorVector};
use crate::error::{check_len, Error, Result};

/// Color written to texels no UV triangle covers.
pub const BACKGROUND: [f64; 3] = [0.0, 0.0, 0.0];

#[derive(Debug, Clone, PartialEq)]
pub struct TextureImage {
    height: usize,
    width: usize,
    pixels: Vec<[f64; 3]>,
}

impl TextureImage {
    pub fn new(height: usize, width: usize, pixels: Vec<[f64; 3]>) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::invalid(format!(
                "texture must be at least 2x2, got {height}x{width}"
            )));
        }
        check_len("texture pixel count", height * width, pixels.len())?;
        if pixels.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("texture channel outside [0, 1]"));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, color: [f64; 3]) -> Result<Self> {
        Self::new(height, width, vec![color; height * width])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                pixels.push(f(i, j));
            }
        }
        Self::new(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> [f64; 3] {
        self.pixels[row * self.width + col]
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let pixels = img
            .pixels()
            .map(|p| [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0])
            .collect();
        Self::new(h as usize, w as usize, pixels)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut buf = image::RgbImage::new(self.width as u32, self.height as u32);
        for (px, c) in buf.pixels_mut().zip(&self.pixels) {
            *px = image::Rgb(c.map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
        }
        buf.save(path)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }
}

/// Bilinear lookup between the four texel centers around `uv`; clamps to the border.
pub fn sample_texture_at_uv(img: &TextureImage, uv: [f64; 2]) -> Result<[f64; 3]> {
    if !(0.0..=1.0).contains(&uv[0]) || !(0.0..=1.0).contains(&uv[1]) {
        return Err(Error::invalid(format!("uv {uv:?} outside the unit square")));
    }
    let x = (uv[0] * img.width as f64 - 0.5).clamp(0.0, (img.width - 1) as f64);
    let y = (uv[1] * img.height as f64 - 0.5).clamp(0.0, (img.height - 1) as f64);
    let (j0, i0) = (x.floor() as usize, y.floor() as usize);
    let (j1, i1) = ((j0 + 1).min(img.width - 1), (i0 + 1).min(img.height - 1));
    let (fx, fy) = (x - j0 as f64, y - i0 as f64);
    let (p00, p01, p10, p11) = (img.get(i0, j0), img.get(i0, j1), img.get(i1, j0), img.get(i1, j1));
    let mut out = [0.0; 3];
    for c in 0..3 {
        let top = p00[c] * (1.0 - fx) + p01[c] * fx;
        let bottom = p10[c] * (1.0 - fx) + p11[c] * fx;
        out[c] = (top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0);
    }
    Ok(out)
}

pub fn vertex_colors_from_texture(
    topo: &TemplateTopology,
    img: &TextureImage,
) -> Result<VertexColorVector> {
    let mut values = Vec::with_capacity(topo.dim());
    for &uv in topo.uv() {
        values.extend(sample_texture_at_uv(img, uv)?);
    }
    VertexColorVector::new(values)
}

/// Barycentric interpolation of vertex colors into a `height x width` image.
///
/// Texels are assigned to the first face (in face order) that contains their center.
/// Uncovered texels directly adjacent to covered ones take the mean of their covered
/// 8-neighbors, so bilinear lookups at chart-boundary vertices do not blend in the
/// background; everything else is [`BACKGROUND`].
pub fn rasterize_vertex_colors_to_texture(
    topo: &TemplateTopology,
    colors: &VertexColorVector,
    height: usize,
    width: usize,
) -> Result<TextureImage> {
    if height < 2 || width < 2 {
        return Err(Error::invalid(format!(
            "resolution must be at least 2x2, got {height}x{width}"
        )));
    }
    check_len("rasterized colors", topo.dim(), colors.len())?;
    let c = colors.values();
    let mut pixels = vec![BACKGROUND; height * width];
    let mut covered = vec![false; height * width];
    let eps = 1e-12;

    for (fi, &[a, b, cc]) in topo.faces().iter().enumerate() {
        let area2 = 2.0 * topo.uv_area(fi);
        if area2.abs() <= f64::EPSILON {
            return Err(Error::invalid(format!("face {fi} is degenerate in UV space")));
        }
        let (pa, pb, pc) = (topo.uv()[a], topo.uv()[b], topo.uv()[cc]);
        let umin = pa[0].min(pb[0]).min(pc[0]);
        let umax = pa[0].max(pb[0]).max(pc[0]);
        let vmin = pa[1].min(pb[1]).min(pc[1]);
        let vmax = pa[1].max(pb[1]).max(pc[1]);
        let j_lo = ((umin * width as f64 - 0.5).floor().max(0.0)) as usize;
        let j_hi = ((umax * width as f64 - 0.5).ceil().min((width - 1) as f64)) as usize;
        let i_lo = ((vmin * height as f64 - 0.5).floor().max(0.0)) as usize;
        let i_hi = ((vmax * height as f64 - 0.5).ceil().min((height - 1) as f64)) as usize;
        for i in i_lo..=i_hi {
            let v = (i as f64 + 0.5) / height as f64;
            for j in j_lo..=j_hi {
                let idx = i * width + j;
                if covered[idx] {
                    continue;
                }
                let u = (j as f64 + 0.5) / width as f64;
                let wa = ((pb[0] - u) * (pc[1] - v) - (pc[0] - u) * (pb[1] - v)) / area2;
                let wb = ((pc[0] - u) * (pa[1] - v) - (pa[0] - u) * (pc[1] - v)) / area2;
                let wc = 1.0 - wa - wb;
                if wa < -eps || wb < -eps || wc < -eps {
                    continue;
                }
                let mut px = [0.0; 3];
                for ch in 0..3 {
                    px[ch] = (wa * c[3 * a + ch] + wb * c[3 * b + ch] + wc * c[3 * cc + ch])
                        .clamp(0.0, 1.0);
                }
                pixels[idx] = px;
                covered[idx] = true;
            }
        }
    }

    let mut gutter = Vec::new();
    for i in 0..height {
        for j in 0..width {
            if covered[i * width + j] {
                continue;
            }
            let mut sum = [0.0; 3];
            let mut count = 0usize;
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    let (ni, nj) = (i as i64 + di, j as i64 + dj);
                    if ni < 0 || nj < 0 || ni >= height as i64 || nj >= width as i64 {
                        continue;
                    }
                    let n = ni as usize * width + nj as usize;
                    if covered[n] {
                        for ch in 0..3 {
                            sum[ch] += pixels[n][ch];
                        }
                        count += 1;
                    }
                }
            }
            if count > 0 {
                gutter.push((i * width + j, sum.map(|s| s / count as f64)));
            }
        }
    }
    for (idx, px) in gutter {
        pixels[idx] = px;
    }
    TextureImage::new(height, width, pixels)
}
