//! Real-valued image grid used for both observations and latent estimates.
//!
//! Pixels are stored planar: channel-major, then row-major, so
//! `data[c * width * height + y * width + x]`.

use crate::error::{DeblurError, Result};

/// Luminance weights (R, G, B).
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(DeblurError::InvalidDimensions(format!(
                "image must be at least 1x1, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(DeblurError::InvalidDimensions(format!(
                "expected 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(DeblurError::InvalidDimensions(format!(
                "data length {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Single-channel image from a row-major buffer.
    pub fn gray(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(width, height, 1, data)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "image must be non-empty");
        Self {
            width,
            height,
            channels: 1,
            data: vec![value; width * height],
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    /// Single-channel image with pixel `(x, y)` set to `f(x, y)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image must be non-empty");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            channels: 1,
            data,
        }
    }

    /// Stacks equally sized single-channel planes.
    pub fn from_channels(planes: &[Image]) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| DeblurError::InvalidDimensions("no channel planes".into()))?;
        let (w, h) = first.dims();
        let mut data = Vec::with_capacity(w * h * planes.len());
        for p in planes {
            if p.dims() != (w, h) || p.channels != 1 {
                return Err(DeblurError::DimensionMismatch(
                    "channel planes must be single-channel and equally sized".into(),
                ));
            }
            data.extend_from_slice(&p.data);
        }
        Self::new(w, h, planes.len(), data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Pixel of the first channel.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    #[inline]
    pub fn at(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[c * self.pixel_count() + y * self.width + x]
    }

    /// Pixel with circular (wrap-around) indexing.
    #[inline]
    pub fn get_wrapped(&self, x: isize, y: isize) -> f64 {
        let xx = x.rem_euclid(self.width as isize) as usize;
        let yy = y.rem_euclid(self.height as isize) as usize;
        self.get(xx, yy)
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.pixel_count();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel(&self, c: usize) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.plane(c).to_vec(),
        }
    }

    pub fn split_channels(&self) -> Vec<Image> {
        (0..self.channels).map(|c| self.channel(c)).collect()
    }

    /// Luminance (0.299 R + 0.587 G + 0.114 B); single-channel images are returned as is.
    pub fn luminance(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
        let data = r
            .iter()
            .zip(g)
            .zip(b)
            .map(|((r, g), b)| LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b)
            .collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn scaled(&self, s: f64) -> Image {
        self.map(|v| v * s)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(DeblurError::NonFinite(what.to_string()))
        }
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn clamp01(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Rectangular window `[x0, x0 + w) x [y0, y0 + h)` of every channel.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(DeblurError::InvalidDimensions(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h * self.channels);
        for c in 0..self.channels {
            let plane = self.plane(c);
            for y in y0..y0 + h {
                data.extend_from_slice(&plane[y * self.width + x0..y * self.width + x0 + w]);
            }
        }
        Image::new(w, h, self.channels, data)
    }

    /// Quarter-turn counter-clockwise rotation: `(x, y) -> (y, W - 1 - x)`.
    pub fn rot90(&self) -> Image {
        let (w, h) = self.dims();
        let mut data = vec![0.0; self.data.len()];
        for c in 0..self.channels {
            let src = self.plane(c);
            let dst = &mut data[c * w * h..(c + 1) * w * h];
            for y in 0..h {
                for x in 0..w {
                    let (nx, ny) = (y, w - 1 - x);
                    dst[ny * h + nx] = src[y * w + x];
                }
            }
        }
        Image {
            width: h,
            height: w,
            channels: self.channels,
            data,
        }
    }

    /// Circular shift so that pixel `(x, y)` moves to `(x + dx, y + dy) mod size`.
    pub fn shifted(&self, dx: isize, dy: isize) -> Image {
        let (w, h) = self.dims();
        let mut data = vec![0.0; self.data.len()];
        for c in 0..self.channels {
            let src = self.plane(c);
            let dst = &mut data[c * w * h..(c + 1) * w * h];
            for y in 0..h {
                let ny = (y as isize + dy).rem_euclid(h as isize) as usize;
                for x in 0..w {
                    let nx = (x as isize + dx).rem_euclid(w as isize) as usize;
                    dst[ny * w + nx] = src[y * w + x];
                }
            }
        }
        Image {
            data,
            ..self.clone()
        }
    }

    /// Separable resampling with a triangle filter, widened on downscale so
    /// every source pixel contributes.
    pub fn resize(&self, new_w: usize, new_h: usize) -> Result<Image> {
        if new_w == 0 || new_h == 0 {
            return Err(DeblurError::InvalidDimensions(
                "resize target must be non-empty".into(),
            ));
        }
        if (new_w, new_h) == self.dims() {
            return Ok(self.clone());
        }
        let wx = resample_weights(self.width, new_w);
        let wy = resample_weights(self.height, new_h);
        let mut data = Vec::with_capacity(new_w * new_h * self.channels);
        let mut tmp = vec![0.0; new_w * self.height];
        for c in 0..self.channels {
            let src = self.plane(c);
            for y in 0..self.height {
                let row = &src[y * self.width..(y + 1) * self.width];
                for (ox, taps) in wx.iter().enumerate() {
                    tmp[y * new_w + ox] = taps.iter().map(|&(i, w)| w * row[i]).sum();
                }
            }
            for taps in &wy {
                for ox in 0..new_w {
                    data.push(taps.iter().map(|&(i, w)| w * tmp[i * new_w + ox]).sum());
                }
            }
        }
        Image::new(new_w, new_h, self.channels, data)
    }

    /// Pads every channel so the padded grid wraps smoothly: each pad band is a
    /// raised-cosine blend from the replicated near edge to the replicated far
    /// edge, which makes the result approximately periodic.
    pub fn pad_periodic_blend(
        &self,
        left: usize,
        right: usize,
        top: usize,
        bottom: usize,
    ) -> Image {
        let (w, h) = self.dims();
        let nw = w + left + right;
        let nh = h + top + bottom;
        let mut data = Vec::with_capacity(nw * nh * self.channels);
        let mut mid = vec![0.0; nw * h];
        for c in 0..self.channels {
            let src = self.plane(c);
            for y in 0..h {
                blend_line(
                    &src[y * w..(y + 1) * w],
                    left,
                    right,
                    &mut mid[y * nw..(y + 1) * nw],
                );
            }
            let mut plane = vec![0.0; nw * nh];
            let mut col = vec![0.0; h];
            let mut out = vec![0.0; nh];
            for x in 0..nw {
                for y in 0..h {
                    col[y] = mid[y * nw + x];
                }
                blend_line(&col, top, bottom, &mut out);
                for y in 0..nh {
                    plane[y * nw + x] = out[y];
                }
            }
            data.extend_from_slice(&plane);
        }
        Image {
            width: nw,
            height: nh,
            channels: self.channels,
            data,
        }
    }
}

fn blend_line(src: &[f64], before: usize, after: usize, out: &mut [f64]) {
    let n = src.len();
    let band = before + after;
    let (first, last) = (src[0], src[n - 1]);
    let fill = |j: usize| {
        let t = (j + 1) as f64 / (band + 1) as f64;
        let s = 0.5 * (1.0 - (std::f64::consts::PI * t).cos());
        (1.0 - s) * last + s * first
    };
    for (i, o) in out.iter_mut().enumerate() {
        *o = if i < before {
            fill(after + i)
        } else if i < before + n {
            src[i - before]
        } else {
            fill(i - before - n)
        };
    }
}

fn resample_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = dst as f64 / src as f64;
    let support = if scale < 1.0 { 1.0 / scale } else { 1.0 };
    (0..dst)
        .map(|o| {
            let center = (o as f64 + 0.5) / scale - 0.5;
            let lo = (center - support).floor().max(0.0) as usize;
            let hi = ((center + support).ceil() as usize).min(src - 1);
            let mut taps: Vec<(usize, f64)> = (lo..=hi)
                .filter_map(|i| {
                    let w = 1.0 - (i as f64 - center).abs() / support;
                    (w > 0.0).then_some((i, w))
                })
                .collect();
            if taps.is_empty() {
                let nearest = center.round().clamp(0.0, (src - 1) as f64) as usize;
                taps.push((nearest, 1.0));
            }
            let total: f64 = taps.iter().map(|t| t.1).sum();
            for t in &mut taps {
                t.1 /= total;
            }
            taps
        })
        .collect()
}
