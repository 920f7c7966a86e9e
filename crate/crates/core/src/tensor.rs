//! Grid and feature-map containers plus the resampling primitives every
//! other module builds on.
//!
//! Coordinates: pixel centers sit at integer positions, origin top-left,
//! `x` is the column and `y` the row. Every border is clamp-to-edge.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single-channel `height × width` grid of reals, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid2D {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Grid2D {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::param(format!("grid must be at least 1x1, got {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(Error::param(format!(
                "grid {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::param(format!("non-finite value at index {i}")));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0, "grid must be at least 1x1");
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(height > 0 && width > 0, "grid must be at least 1x1");
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self { height, width, data }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn same_shape(&self, other: &Grid2D) -> bool {
        self.dims() == other.dims()
    }

    pub(crate) fn ensure_same_shape(&self, other: &Grid2D, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::param(format!(
                "{what}: shape {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )))
        }
    }

    /// Clamped integer read.
    #[inline]
    fn at_clamped(&self, y: isize, x: isize) -> f64 {
        let y = y.clamp(0, self.height as isize - 1) as usize;
        let x = x.clamp(0, self.width as isize - 1) as usize;
        self.data[y * self.width + x]
    }

    /// Crop `size_h × size_w` starting at `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, size_h: usize, size_w: usize) -> Result<Grid2D> {
        if top + size_h > self.height || left + size_w > self.width || size_h == 0 || size_w == 0 {
            return Err(Error::param("crop window outside grid"));
        }
        Ok(Grid2D::from_fn(size_h, size_w, |y, x| self.get(top + y, left + x)))
    }
}

/// A `channels × height × width` activation tensor, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::param("feature map dimensions must be positive"));
        }
        if data.len() != channels * height * width {
            return Err(Error::param(format!(
                "feature map {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("non-finite value in feature map"));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        assert!(channels > 0 && height > 0 && width > 0);
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    /// Stack single-channel grids of identical shape.
    pub fn stack(grids: &[&Grid2D]) -> Result<Self> {
        let first = grids.first().ok_or_else(|| Error::param("cannot stack zero grids"))?;
        let (h, w) = first.dims();
        let mut data = Vec::with_capacity(grids.len() * h * w);
        for g in grids {
            first.ensure_same_shape(g, "stack")?;
            data.extend_from_slice(g.as_slice());
        }
        Ok(Self {
            channels: grids.len(),
            height: h,
            width: w,
            data,
        })
    }

    /// Concatenate along the channel axis.
    pub fn concat(maps: &[&FeatureMap]) -> Result<Self> {
        let first = maps.first().ok_or_else(|| Error::param("cannot concat zero maps"))?;
        let (h, w) = (first.height, first.width);
        let mut data = Vec::new();
        let mut channels = 0;
        for m in maps {
            if (m.height, m.width) != (h, w) {
                return Err(Error::param("concat: spatial dims differ"));
            }
            channels += m.channels;
            data.extend_from_slice(&m.data);
        }
        Ok(Self {
            channels,
            height: h,
            width: w,
            data,
        })
    }

    pub fn from_grid(g: &Grid2D) -> Self {
        Self {
            channels: 1,
            height: g.height,
            width: g.width,
            data: g.data.clone(),
        }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn channel_grid(&self, c: usize) -> Grid2D {
        Grid2D {
            height: self.height,
            width: self.width,
            data: self.channel(c).to_vec(),
        }
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn crop(&self, top: usize, left: usize, size_h: usize, size_w: usize) -> Result<FeatureMap> {
        if top + size_h > self.height || left + size_w > self.width || size_h == 0 || size_w == 0 {
            return Err(Error::param("crop window outside feature map"));
        }
        let mut data = Vec::with_capacity(self.channels * size_h * size_w);
        for c in 0..self.channels {
            for y in 0..size_h {
                let start = (c * self.height + top + y) * self.width + left;
                data.extend_from_slice(&self.data[start..start + size_w]);
            }
        }
        Ok(FeatureMap {
            channels: self.channels,
            height: size_h,
            width: size_w,
            data,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interp {
    Nearest,
    Bilinear,
    /// Catmull-Rom (a = -0.5). Resize only.
    Bicubic,
}

impl Interp {
    pub const ALL: [Interp; 3] = [Interp::Nearest, Interp::Bilinear, Interp::Bicubic];
}

impl std::fmt::Display for Interp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Interp::Nearest => "nearest",
            Interp::Bilinear => "bilinear",
            Interp::Bicubic => "bicubic",
        })
    }
}

/// Interpolation for point sampling; bicubic is not available here.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointSampling {
    Nearest,
    Bilinear,
}

pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::param(format!("gaussian sigma must be positive, got {sigma}")));
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let denom = 2.0 * sigma * sigma;
    let mut k: Vec<f64> = (-radius..=radius).map(|i| (-((i * i) as f64) / denom).exp()).collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    Ok(k)
}

/// Separable Gaussian blur, radius `ceil(3σ)`, normalized kernel, clamped border.
pub fn gaussian_blur(g: &Grid2D, sigma: f64) -> Result<Grid2D> {
    let k = gaussian_kernel(sigma)?;
    let r = (k.len() / 2) as isize;
    let (h, w) = g.dims();
    let mut tmp = Grid2D::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * g.at_clamped(y as isize, x as isize + i as isize - r);
            }
            tmp.set(y, x, acc);
        }
    }
    let mut out = Grid2D::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * tmp.at_clamped(y as isize + i as isize - r, x as isize);
            }
            out.set(y, x, acc);
        }
    }
    Ok(out)
}

#[inline]
fn catmull_rom(t: f64) -> [f64; 4] {
    // weights for samples at offsets -1, 0, 1, 2
    let t2 = t * t;
    let t3 = t2 * t;
    [
        -0.5 * t3 + t2 - 0.5 * t,
        1.5 * t3 - 2.5 * t2 + 1.0,
        -1.5 * t3 + 2.0 * t2 + 0.5 * t,
        0.5 * t3 - 0.5 * t2,
    ]
}

/// One output tap list along an axis: (source index, weight) pairs.
fn axis_taps(n_in: usize, n_out: usize, mode: Interp) -> Vec<Vec<(usize, f64)>> {
    let scale = n_in as f64 / n_out as f64;
    let last = n_in as isize - 1;
    (0..n_out)
        .map(|d| {
            let center = (d as f64 + 0.5) * scale - 0.5;
            match mode {
                Interp::Nearest => {
                    let s = (((d as f64 + 0.5) * scale).floor() as usize).min(n_in - 1);
                    vec![(s, 1.0)]
                }
                Interp::Bilinear => {
                    let c = center.clamp(0.0, last as f64);
                    let i0 = c.floor() as usize;
                    let i1 = (i0 + 1).min(n_in - 1);
                    let t = c - i0 as f64;
                    vec![(i0, 1.0 - t), (i1, t)]
                }
                Interp::Bicubic => {
                    let i0 = center.floor();
                    let t = center - i0;
                    let w = catmull_rom(t);
                    (0..4)
                        .map(|k| {
                            let idx = (i0 as isize + k as isize - 1).clamp(0, last) as usize;
                            (idx, w[k])
                        })
                        .collect()
                }
            }
        })
        .collect()
}

/// Resize with pixel-center alignment. Same-size resize returns the input unchanged.
pub fn resize(g: &Grid2D, out_h: usize, out_w: usize, mode: Interp) -> Result<Grid2D> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::param(format!("resize target must be at least 1x1, got {out_h}x{out_w}")));
    }
    let (h, w) = g.dims();
    if (out_h, out_w) == (h, w) {
        return Ok(g.clone());
    }
    let xt = axis_taps(w, out_w, mode);
    let yt = axis_taps(h, out_h, mode);
    // horizontal pass: h × out_w
    let mut tmp = vec![0.0; h * out_w];
    for y in 0..h {
        let row = &g.data[y * w..(y + 1) * w];
        for (x, taps) in xt.iter().enumerate() {
            tmp[y * out_w + x] = taps.iter().map(|&(i, wt)| wt * row[i]).sum();
        }
    }
    let mut data = vec![0.0; out_h * out_w];
    for (y, taps) in yt.iter().enumerate() {
        for x in 0..out_w {
            data[y * out_w + x] = taps.iter().map(|&(i, wt)| wt * tmp[i * out_w + x]).sum();
        }
    }
    Ok(Grid2D {
        height: out_h,
        width: out_w,
        data,
    })
}

/// Adjoint of [`resize`] from `in_h × in_w`: scatters `grad` (shaped like the
/// resize output) back through the same taps.
pub fn resize_adjoint(grad: &Grid2D, in_h: usize, in_w: usize, mode: Interp) -> Result<Grid2D> {
    if in_h == 0 || in_w == 0 {
        return Err(Error::param("resize_adjoint source must be at least 1x1"));
    }
    let (out_h, out_w) = grad.dims();
    if (out_h, out_w) == (in_h, in_w) {
        return Ok(grad.clone());
    }
    let xt = axis_taps(in_w, out_w, mode);
    let yt = axis_taps(in_h, out_h, mode);
    let mut tmp = vec![0.0; in_h * out_w];
    for (y, taps) in yt.iter().enumerate() {
        for x in 0..out_w {
            let g = grad.data[y * out_w + x];
            for &(i, wt) in taps {
                tmp[i * out_w + x] += wt * g;
            }
        }
    }
    let mut data = vec![0.0; in_h * in_w];
    for y in 0..in_h {
        for (x, taps) in xt.iter().enumerate() {
            let g = tmp[y * out_w + x];
            for &(i, wt) in taps {
                data[y * in_w + i] += wt * g;
            }
        }
    }
    Ok(Grid2D {
        height: in_h,
        width: in_w,
        data,
    })
}

/// Sample at a real coordinate; coordinates are clamped into the grid.
pub fn sample_at(g: &Grid2D, x: f64, y: f64, mode: PointSampling) -> f64 {
    let xc = x.clamp(0.0, (g.width - 1) as f64);
    let yc = y.clamp(0.0, (g.height - 1) as f64);
    match mode {
        PointSampling::Nearest => g.get(yc.round() as usize, xc.round() as usize),
        PointSampling::Bilinear => {
            let x0 = xc.floor() as usize;
            let y0 = yc.floor() as usize;
            let x1 = (x0 + 1).min(g.width - 1);
            let y1 = (y0 + 1).min(g.height - 1);
            let tx = xc - x0 as f64;
            let ty = yc - y0 as f64;
            // lerp form: exact when neighbours are equal
            let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);
            let top = lerp(g.get(y0, x0), g.get(y0, x1), tx);
            let bottom = lerp(g.get(y1, x0), g.get(y1, x1), tx);
            lerp(top, bottom, ty)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Dense 2-D convolution with the product kernel and clamped reads.
    fn dense_blur_oracle(g: &Grid2D, sigma: f64) -> Grid2D {
        let r = (3.0 * sigma).ceil() as isize;
        let mut k2 = Vec::new();
        let mut total = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                let v = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
                k2.push((dy, dx, v));
                total += v;
            }
        }
        Grid2D::from_fn(g.height(), g.width(), |y, x| {
            k2.iter()
                .map(|&(dy, dx, v)| v / total * g.at_clamped(y as isize + dy, x as isize + dx))
                .sum()
        })
    }

    #[test]
    fn blur_constant_is_constant() {
        let g = Grid2D::filled(9, 13, 4.25);
        let b = gaussian_blur(&g, 2.5).unwrap();
        for v in b.as_slice() {
            assert_abs_diff_eq!(*v, 4.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn blur_impulse_matches_kernel_peak() {
        let mut g = Grid2D::zeros(41, 41);
        g.set(20, 20, 1.0);
        let b = gaussian_blur(&g, 3.0).unwrap();
        let k = gaussian_kernel(3.0).unwrap();
        let peak = k[k.len() / 2] * k[k.len() / 2];
        assert_abs_diff_eq!(b.get(20, 20), peak, epsilon = 1e-15);
        let oracle = dense_blur_oracle(&g, 3.0);
        assert_abs_diff_eq!(oracle.get(20, 20), peak, epsilon = 1e-12);
        assert_abs_diff_eq!(b.as_slice().iter().sum::<f64>(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn blur_ramp_matches_dense_oracle_with_wide_sigma() {
        let g = Grid2D::from_fn(5, 5, |y, x| (y * 5 + x) as f64);
        let b = gaussian_blur(&g, 10.0).unwrap();
        let o = dense_blur_oracle(&g, 10.0);
        for (a, e) in b.as_slice().iter().zip(o.as_slice()) {
            assert_abs_diff_eq!(a, e, epsilon = 1e-9);
        }
    }

    #[test]
    fn blur_rejects_nonpositive_sigma() {
        let g = Grid2D::zeros(3, 3);
        assert!(gaussian_blur(&g, 0.0).is_err());
        assert!(gaussian_blur(&g, -1.0).is_err());
    }

    #[test]
    fn blur_preserves_interior_mean() {
        let sigma = 1.5;
        let margin = (6.0 * sigma) as usize + 1;
        let n = 64;
        let g = Grid2D::from_fn(n, n, |y, x| {
            let inside = (margin..n - margin).contains(&y) && (margin..n - margin).contains(&x);
            if inside {
                ((x * 7 + y * 13) % 11) as f64
            } else {
                0.0
            }
        });
        let b = gaussian_blur(&g, sigma).unwrap();
        let rel = (b.mean() - g.mean()).abs() / g.mean();
        assert!(rel < 1e-6, "relative mean drift {rel}");
    }

    #[test]
    fn nearest_checkerboard_downsample_uses_center_mapping() {
        let g = Grid2D::from_fn(4, 4, |y, x| ((x + y) % 2) as f64);
        let r = resize(&g, 2, 2, Interp::Nearest).unwrap();
        // dst d maps to floor((d + 0.5) * 2) = 1, 3
        for (dy, sy) in [(0, 1), (1, 3)] {
            for (dx, sx) in [(0, 1), (1, 3)] {
                assert_eq!(r.get(dy, dx), g.get(sy, sx));
            }
        }
        assert_eq!(r.as_slice(), &[0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn resize_constant_any_size() {
        let g = Grid2D::filled(7, 5, 3.5);
        for mode in Interp::ALL {
            for (h, w) in [(1, 1), (3, 11), (20, 9)] {
                let r = resize(&g, h, w, mode).unwrap();
                for v in r.as_slice() {
                    assert_abs_diff_eq!(*v, 3.5, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn resize_rejects_zero_target() {
        assert!(resize(&Grid2D::zeros(2, 2), 0, 3, Interp::Bilinear).is_err());
    }

    #[test]
    fn resize_adjoint_satisfies_inner_product_identity() {
        // <resize(a), b> == <a, adjoint(b)>
        let a = Grid2D::from_fn(9, 7, |y, x| ((y * 31 + x * 17) % 13) as f64 - 6.0);
        let b = Grid2D::from_fn(4, 5, |y, x| ((y * 7 + x * 3) % 5) as f64 - 2.0);
        for mode in Interp::ALL {
            let lhs: f64 = resize(&a, 4, 5, mode).unwrap().as_slice().iter().zip(b.as_slice()).map(|(p, q)| p * q).sum();
            let adj = resize_adjoint(&b, 9, 7, mode).unwrap();
            let rhs: f64 = a.as_slice().iter().zip(adj.as_slice()).map(|(p, q)| p * q).sum();
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-9);
        }
    }

    #[test]
    fn sample_at_cases() {
        let g = Grid2D::new(1, 2, vec![0.0, 1.0]).unwrap();
        assert_eq!(sample_at(&g, 0.5, 0.0, PointSampling::Bilinear), 0.5);
        let c = Grid2D::from_fn(3, 3, |_, _| 0.7);
        assert_eq!(sample_at(&c, 0.3, 1.9, PointSampling::Bilinear), 0.7);
        let g = Grid2D::from_fn(3, 4, |y, x| (y * 10 + x) as f64);
        for mode in [PointSampling::Nearest, PointSampling::Bilinear] {
            assert_eq!(sample_at(&g, 2.0, 1.0, mode), 12.0);
            assert_eq!(sample_at(&g, -3.0, 1.0, mode), sample_at(&g, 0.0, 1.0, mode));
            assert_eq!(sample_at(&g, 9.0, 7.0, mode), 23.0);
        }
    }

    #[test]
    fn grid_rejects_bad_data() {
        assert!(Grid2D::new(0, 3, vec![]).is_err());
        assert!(Grid2D::new(2, 2, vec![1.0; 3]).is_err());
        assert!(Grid2D::new(1, 1, vec![f64::NAN]).is_err());
    }

    fn arb_grid() -> impl Strategy<Value = Grid2D> {
        (1usize..9, 1usize..9).prop_flat_map(|(h, w)| {
            prop::collection::vec(-100.0f64..100.0, h * w).prop_map(move |d| Grid2D::new(h, w, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn same_size_resize_is_bit_exact(g in arb_grid()) {
            for mode in Interp::ALL {
                let r = resize(&g, g.height(), g.width(), mode).unwrap();
                prop_assert_eq!(&r, &g);
            }
        }

        #[test]
        fn bilinear_sample_within_neighbor_range(g in arb_grid(), fx in 0.0f64..1.0, fy in 0.0f64..1.0) {
            let x = fx * (g.width() - 1) as f64;
            let y = fy * (g.height() - 1) as f64;
            let v = sample_at(&g, x, y, PointSampling::Bilinear);
            let (x0, y0) = (x.floor() as usize, y.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(g.width() - 1), (y0 + 1).min(g.height() - 1));
            let n = [g.get(y0, x0), g.get(y0, x1), g.get(y1, x0), g.get(y1, x1)];
            let lo = n.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = n.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }
}
