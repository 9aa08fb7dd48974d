use nalgebra::Point2;

use super::Feature;
use crate::imaging::{label_at, LabelImage, RgbImage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorParams {
    /// Gaussian window of the structure tensor, pixels.
    pub window_sigma: f32,
    pub harris_k: f32,
    /// Non-maximum suppression radius, pixels.
    pub nms_radius: usize,
    /// Responses below `relative_threshold * max_response` are ignored.
    pub relative_threshold: f32,
    pub absolute_threshold: f32,
    /// Spacing of the 8x8 descriptor samples, pixels.
    pub descriptor_stride: f32,
    /// Pre-blur applied before descriptor sampling.
    pub descriptor_sigma: f32,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            window_sigma: 1.5,
            harris_k: 0.04,
            nms_radius: 3,
            relative_threshold: 1e-4,
            absolute_threshold: 1e-2,
            descriptor_stride: 2.0,
            descriptor_sigma: 1.0,
        }
    }
}

pub const DESCRIPTOR_SIDE: usize = 8;

fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f32> = (-radius..=radius).map(|x| (-(x * x) as f32 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with clamped borders.
fn blur(src: &[f32], w: usize, h: usize, sigma: f32) -> Vec<f32> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let mut tmp = vec![0.0; src.len()];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xx = (x as i64 + i as i64 - r).clamp(0, w as i64 - 1) as usize;
                acc += kv * row[xx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for (i, kv) in k.iter().enumerate() {
            let yy = (y as i64 + i as i64 - r).clamp(0, h as i64 - 1) as usize;
            let src_row = &tmp[yy * w..(yy + 1) * w];
            let dst_row = &mut out[y * w..(y + 1) * w];
            for x in 0..w {
                dst_row[x] += kv * src_row[x];
            }
        }
    }
    out
}

fn harris_response(gray: &[f32], w: usize, h: usize, params: &DetectorParams) -> Vec<f32> {
    let mut ixx = vec![0.0; w * h];
    let mut iyy = vec![0.0; w * h];
    let mut ixy = vec![0.0; w * h];
    let at = |x: usize, y: usize| gray[y * w + x];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            // Sobel, scaled to intensity per pixel
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1)
                - at(x - 1, y - 1)
                - 2.0 * at(x - 1, y)
                - at(x - 1, y + 1))
                / 8.0;
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1)
                - at(x - 1, y - 1)
                - 2.0 * at(x, y - 1)
                - at(x + 1, y - 1))
                / 8.0;
            let i = y * w + x;
            ixx[i] = gx * gx;
            iyy[i] = gy * gy;
            ixy[i] = gx * gy;
        }
    }
    let sxx = blur(&ixx, w, h, params.window_sigma);
    let syy = blur(&iyy, w, h, params.window_sigma);
    let sxy = blur(&ixy, w, h, params.window_sigma);
    sxx.iter().zip(&syy).zip(&sxy).map(|((a, b), c)| a * b - c * c - params.harris_k * (a + b) * (a + b)).collect()
}

fn bilinear(img: &[f32], w: usize, h: usize, x: f32, y: f32) -> f32 {
    let x = x.clamp(0.0, (w - 1) as f32);
    let y = y.clamp(0.0, (h - 1) as f32);
    let x0 = (x.floor() as usize).min(w - 1);
    let y0 = (y.floor() as usize).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f32;
    let fy = y - y0 as f32;
    let top = img[y0 * w + x0] * (1.0 - fx) + img[y0 * w + x1] * fx;
    let bottom = img[y1 * w + x0] * (1.0 - fx) + img[y1 * w + x1] * fx;
    top * (1.0 - fy) + bottom * fy
}

fn describe(smooth: &[f32], w: usize, h: usize, u: f32, v: f32, stride: f32) -> Option<Vec<f32>> {
    let half = (DESCRIPTOR_SIDE as f32 - 1.0) / 2.0;
    let mut d = Vec::with_capacity(DESCRIPTOR_SIDE * DESCRIPTOR_SIDE);
    for j in 0..DESCRIPTOR_SIDE {
        for i in 0..DESCRIPTOR_SIDE {
            d.push(bilinear(smooth, w, h, u + (i as f32 - half) * stride, v + (j as f32 - half) * stride));
        }
    }
    let mean = d.iter().sum::<f32>() / d.len() as f32;
    d.iter_mut().for_each(|x| *x -= mean);
    let norm = d.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
    if norm < 1e-3 {
        return None;
    }
    d.iter_mut().for_each(|x| *x = (*x as f64 / norm) as f32);
    Some(d)
}

/// Harris corners with non-maximum suppression, normalized patch
/// descriptors and the label under each keypoint. Returns at most
/// `max_count` features, strongest first.
pub fn detect_features(rgb: &RgbImage, labels: &LabelImage, max_count: usize, params: &DetectorParams) -> Vec<Feature> {
    let (w, h) = (rgb.width(), rgb.height());
    assert_eq!((w, h), (labels.width(), labels.height()), "rgb and label rasters must have equal size");
    let gray = rgb.to_gray();
    let response = harris_response(&gray, w, h, params);
    let max_r = response.iter().copied().fold(0.0f32, f32::max);
    let threshold = (params.relative_threshold * max_r).max(params.absolute_threshold);
    let margin = (params.descriptor_stride * DESCRIPTOR_SIDE as f32 / 2.0).ceil() as usize + 2;
    let margin = margin.max(params.nms_radius + 1);
    if w <= 2 * margin || h <= 2 * margin || max_r <= threshold {
        return Vec::new();
    }

    let r = params.nms_radius as i64;
    let mut candidates = Vec::new();
    for y in margin..h - margin {
        for x in margin..w - margin {
            let c = response[y * w + x];
            if c <= threshold {
                continue;
            }
            let idx = y * w + x;
            let mut is_max = true;
            'window: for dy in -r..=r {
                for dx in -r..=r {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let q = ((y as i64 + dy) as usize) * w + (x as i64 + dx) as usize;
                    let o = response[q];
                    if o > c || (o == c && q < idx) {
                        is_max = false;
                        break 'window;
                    }
                }
            }
            if is_max {
                candidates.push((c, x, y));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.2, a.1).cmp(&(b.2, b.1))));

    let smooth = blur(&gray, w, h, params.descriptor_sigma);
    let mut out = Vec::with_capacity(max_count.min(candidates.len()));
    for (score, x, y) in candidates {
        if out.len() >= max_count {
            break;
        }
        let at = |x: usize, y: usize| response[y * w + x];
        let offset = |m: f32, c: f32, p: f32| {
            let den = m - 2.0 * c + p;
            if den.abs() > 1e-12 {
                (0.5 * (m - p) / den).clamp(-0.5, 0.5)
            } else {
                0.0
            }
        };
        let u = x as f32 + offset(at(x - 1, y), score, at(x + 1, y));
        let v = y as f32 + offset(at(x, y - 1), score, at(x, y + 1));
        let Some(descriptor) = describe(&smooth, w, h, u, v, params.descriptor_stride) else { continue };
        let pixel = Point2::new(u as f64, v as f64);
        out.push(Feature {
            index: out.len(),
            pixel,
            descriptor,
            label: label_at(labels, pixel.x, pixel.y),
            response: score,
        });
    }
    out
}
