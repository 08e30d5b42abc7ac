//! Scale-invariant keypoints and 128-component gradient-histogram
//! descriptors.
//!
//! The scale space follows the usual construction: a 2x upsampled seed image
//! blurred to sigma 0.8 (in input pixels), three scales per octave plus three
//! auxiliary images, difference-of-Gaussians extrema refined by a quadratic
//! fit, then contrast and edge rejection. Orientation and descriptor layouts
//! match OpenCV's. Octaves are halved with a 2x2 mean rather than by dropping
//! every other pixel, so quarter-turn rotations of the input give rotated
//! keypoints.

use std::f32::consts::PI;

use crate::raster::{resize, Raster};

pub const DESCRIPTOR_LEN: usize = 128;
/// Every image is resized to this square size before extraction.
pub const INPUT_SIZE: u32 = 64;

const SCALES_PER_OCTAVE: usize = 3;
const CONTRAST_THRESHOLD: f32 = 0.04;
const EDGE_THRESHOLD: f32 = 10.0;
const SIGMA_IN: f32 = 0.5;
const SIGMA_MIN: f32 = 0.8;
const IMAGE_BORDER: usize = 5;
const MAX_INTERPOLATION_STEPS: usize = 5;
const ORI_BINS: usize = 36;
const ORI_RADIUS_FACTOR: f32 = 4.5;
const ORI_SIGMA_FACTOR: f32 = 1.5;
const ORI_PEAK_RATIO: f32 = 0.8;
const DESC_HISTS: usize = 4;
const DESC_BINS: usize = 8;
const DESC_SCALE_FACTOR: f32 = 3.0;
const DESC_MAG_CAP: f32 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    /// Position and scale in pixels of the 64x64 resized input.
    pub x: f32,
    pub y: f32,
    pub scale: f32,
    /// Counter-clockwise, radians in `[0, 2pi)`.
    pub orientation: f32,
    pub response: f32,
}

pub type Descriptor = [f32; DESCRIPTOR_LEN];

/// Keypoints with one unit-length descriptor each.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureSet {
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<Descriptor>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Plane {
    w: usize,
    h: usize,
    data: Vec<f32>,
}

impl Plane {
    #[inline]
    fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.w + x]
    }

    fn upsample2(&self) -> Plane {
        // Bilinear, pixel-center aligned.
        let (w, h) = (self.w * 2, self.h * 2);
        let sample = |c: usize, n: usize| {
            let s = (c as f32 + 0.5) / 2.0 - 0.5;
            let s = s.clamp(0.0, (n - 1) as f32);
            let i = s.floor() as usize;
            let j = (i + 1).min(n - 1);
            (i, j, s - i as f32)
        };
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            let (y0, y1, fy) = sample(y, self.h);
            for x in 0..w {
                let (x0, x1, fx) = sample(x, self.w);
                let top = self.at(x0, y0) * (1.0 - fx) + self.at(x1, y0) * fx;
                let bot = self.at(x0, y1) * (1.0 - fx) + self.at(x1, y1) * fx;
                data.push(top * (1.0 - fy) + bot * fy);
            }
        }
        Plane { w, h, data }
    }

    fn halve(&self) -> Plane {
        let (w, h) = (self.w / 2, self.h / 2);
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let s = self.at(2 * x, 2 * y)
                    + self.at(2 * x + 1, 2 * y)
                    + self.at(2 * x, 2 * y + 1)
                    + self.at(2 * x + 1, 2 * y + 1);
                data.push(s * 0.25);
            }
        }
        Plane { w, h, data }
    }

    fn blur(&self, sigma: f32) -> Plane {
        let radius = ((4.0 * sigma).ceil() as usize).max(1);
        let mut kernel: Vec<f32> = (0..=2 * radius)
            .map(|i| {
                let d = i as f32 - radius as f32;
                (-d * d / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let total: f32 = kernel.iter().sum();
        kernel.iter_mut().for_each(|k| *k /= total);
        // Reflect without repeating the edge pixel.
        let reflect = |i: isize, n: usize| -> usize {
            let n = n as isize;
            if n == 1 {
                return 0;
            }
            let period = 2 * (n - 1);
            let mut i = i.rem_euclid(period);
            if i >= n {
                i = period - i;
            }
            i as usize
        };
        let r = radius as isize;
        let mut tmp = vec![0.0; self.w * self.h];
        for y in 0..self.h {
            for x in 0..self.w {
                let mut acc = 0.0;
                for (k, &kv) in kernel.iter().enumerate() {
                    acc += kv * self.at(reflect(x as isize + k as isize - r, self.w), y);
                }
                tmp[y * self.w + x] = acc;
            }
        }
        let mut data = vec![0.0; self.w * self.h];
        for y in 0..self.h {
            for x in 0..self.w {
                let mut acc = 0.0;
                for (k, &kv) in kernel.iter().enumerate() {
                    acc += kv * tmp[reflect(y as isize + k as isize - r, self.h) * self.w + x];
                }
                data[y * self.w + x] = acc;
            }
        }
        Plane {
            w: self.w,
            h: self.h,
            data,
        }
    }

    fn minus(&self, other: &Plane) -> Plane {
        Plane {
            w: self.w,
            h: self.h,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }
}

struct Octave {
    gauss: Vec<Plane>,
    dog: Vec<Plane>,
}

fn build_pyramid(seed: Plane) -> Vec<Octave> {
    let n_octaves = ((seed.w.min(seed.h) as f32).log2() - 2.0).round() as usize + 1;
    let m = 2f32.powf(2.0 / SCALES_PER_OCTAVE as f32);
    let increments: Vec<f32> = (1..SCALES_PER_OCTAVE as i32 + 3)
        .map(|s| {
            let a = m.powi(s - 1);
            (a * m - a).sqrt() * SIGMA_MIN * 2.0
        })
        .collect();
    let mut octaves: Vec<Octave> = Vec::with_capacity(n_octaves);
    let mut first = seed;
    for o in 0..n_octaves {
        if o > 0 {
            first = octaves[o - 1].gauss[SCALES_PER_OCTAVE].halve();
        }
        let mut gauss = vec![first.clone()];
        for &inc in &increments {
            let next = gauss.last().expect("octave starts non-empty").blur(inc);
            gauss.push(next);
        }
        let dog = gauss.windows(2).map(|p| p[1].minus(&p[0])).collect();
        octaves.push(Octave { gauss, dog });
    }
    octaves
}

fn is_extremum(dog: &[Plane], s: usize, x: usize, y: usize) -> bool {
    let v = dog[s].at(x, y);
    if v.abs() <= 0.5 * CONTRAST_THRESHOLD / SCALES_PER_OCTAVE as f32 {
        return false;
    }
    for plane in &dog[s - 1..=s + 1] {
        for yy in y - 1..=y + 1 {
            for xx in x - 1..=x + 1 {
                let u = plane.at(xx, yy);
                if (v > 0.0 && u > v) || (v < 0.0 && u < v) {
                    return false;
                }
            }
        }
    }
    true
}

struct Refined {
    s: usize,
    x: usize,
    y: usize,
    offset: [f32; 3],
    contrast: f32,
}

fn gradient_hessian(dog: &[Plane], s: usize, x: usize, y: usize) -> ([f32; 3], [[f32; 3]; 3]) {
    let (p, c, n) = (&dog[s - 1], &dog[s], &dog[s + 1]);
    let g = [
        (n.at(x, y) - p.at(x, y)) / 2.0,
        (c.at(x + 1, y) - c.at(x - 1, y)) / 2.0,
        (c.at(x, y + 1) - c.at(x, y - 1)) / 2.0,
    ];
    let v2 = c.at(x, y) * 2.0;
    let hss = n.at(x, y) + p.at(x, y) - v2;
    let hxx = c.at(x + 1, y) + c.at(x - 1, y) - v2;
    let hyy = c.at(x, y + 1) + c.at(x, y - 1) - v2;
    let hsx = (n.at(x + 1, y) - n.at(x - 1, y) - p.at(x + 1, y) + p.at(x - 1, y)) / 4.0;
    let hsy = (n.at(x, y + 1) - n.at(x, y - 1) - p.at(x, y + 1) + p.at(x, y - 1)) / 4.0;
    let hxy = (c.at(x + 1, y + 1) - c.at(x - 1, y + 1) - c.at(x + 1, y - 1)
        + c.at(x - 1, y - 1))
        / 4.0;
    (g, [[hss, hsx, hsy], [hsx, hxx, hxy], [hsy, hxy, hyy]])
}

/// Solves `H a = -g` for a symmetric 3x3 `H` by cofactors.
fn solve3(h: [[f32; 3]; 3], g: [f32; 3]) -> Option<[f32; 3]> {
    let [[a, b, c], [_, d, e], [_, _, f]] = h;
    let det = a * (d * f - e * e) - b * (b * f - c * e) + c * (b * e - c * d);
    if det.abs() < 1e-12 {
        return None;
    }
    let inv = [
        [d * f - e * e, c * e - b * f, b * e - c * d],
        [c * e - b * f, a * f - c * c, b * c - a * e],
        [b * e - c * d, b * c - a * e, a * d - b * b],
    ];
    let mut out = [0.0; 3];
    for (o, row) in out.iter_mut().zip(inv) {
        *o = -(row[0] * g[0] + row[1] * g[1] + row[2] * g[2]) / det;
    }
    Some(out)
}

fn refine(dog: &[Plane], mut s: usize, mut x: usize, mut y: usize) -> Option<Refined> {
    let (w, h) = (dog[0].w, dog[0].h);
    for _ in 0..MAX_INTERPOLATION_STEPS {
        let (g, hess) = gradient_hessian(dog, s, x, y);
        let off = solve3(hess, g)?;
        if off.iter().all(|o| o.abs() < 0.5) {
            let contrast = dog[s].at(x, y) + 0.5 * (off[0] * g[0] + off[1] * g[1] + off[2] * g[2]);
            return Some(Refined {
                s,
                x,
                y,
                offset: off,
                contrast,
            });
        }
        if off.iter().any(|o| o.abs() > 1e6) {
            return None;
        }
        let ns = s as i64 + off[0].round() as i64;
        let nx = x as i64 + off[1].round() as i64;
        let ny = y as i64 + off[2].round() as i64;
        let b = IMAGE_BORDER as i64;
        if ns < 1
            || ns > SCALES_PER_OCTAVE as i64
            || nx < b
            || nx >= w as i64 - b
            || ny < b
            || ny >= h as i64 - b
        {
            return None;
        }
        (s, x, y) = (ns as usize, nx as usize, ny as usize);
    }
    None
}

fn on_edge(dog: &Plane, x: usize, y: usize) -> bool {
    let v2 = dog.at(x, y) * 2.0;
    let dxx = dog.at(x + 1, y) + dog.at(x - 1, y) - v2;
    let dyy = dog.at(x, y + 1) + dog.at(x, y - 1) - v2;
    let dxy = (dog.at(x + 1, y + 1) - dog.at(x - 1, y + 1) - dog.at(x + 1, y - 1)
        + dog.at(x - 1, y - 1))
        / 4.0;
    let tr = dxx + dyy;
    let det = dxx * dyy - dxy * dxy;
    det <= 0.0 || tr * tr * EDGE_THRESHOLD > (EDGE_THRESHOLD + 1.0).powi(2) * det
}

/// `(dx, dy)` with y pointing up.
#[inline]
fn gradient(img: &Plane, x: usize, y: usize) -> (f32, f32) {
    (
        img.at(x + 1, y) - img.at(x - 1, y),
        img.at(x, y - 1) - img.at(x, y + 1),
    )
}

fn orientation_histogram(img: &Plane, x: usize, y: usize, sigma: f32) -> [f32; ORI_BINS] {
    let radius = (ORI_RADIUS_FACTOR * sigma).round() as i64;
    let weight_scale = -1.0 / (2.0 * (ORI_SIGMA_FACTOR * sigma).powi(2));
    let mut raw = [0.0f32; ORI_BINS];
    for dy in -radius..=radius {
        let yy = y as i64 + dy;
        if yy <= 0 || yy >= img.h as i64 - 1 {
            continue;
        }
        for dx in -radius..=radius {
            let xx = x as i64 + dx;
            if xx <= 0 || xx >= img.w as i64 - 1 {
                continue;
            }
            let (gx, gy) = gradient(img, xx as usize, yy as usize);
            let mag = (gx * gx + gy * gy).sqrt();
            let w = ((dx * dx + dy * dy) as f32 * weight_scale).exp();
            let bin = (gy.atan2(gx) * ORI_BINS as f32 / (2.0 * PI)).round() as i64;
            raw[bin.rem_euclid(ORI_BINS as i64) as usize] += w * mag;
        }
    }
    let mut hist = [0.0f32; ORI_BINS];
    let at = |i: i64| raw[i.rem_euclid(ORI_BINS as i64) as usize];
    for (i, h) in hist.iter_mut().enumerate() {
        let i = i as i64;
        *h = (at(i - 2) + at(i + 2)) / 16.0 + (at(i - 1) + at(i + 1)) * 4.0 / 16.0
            + at(i) * 6.0 / 16.0;
    }
    hist
}

fn descriptor(img: &Plane, x: f32, y: f32, sigma: f32, orientation: f32) -> Descriptor {
    let n = DESC_HISTS;
    let (x, y) = (x.round() as i64, y.round() as i64);
    let hist_width = DESC_SCALE_FACTOR * sigma;
    let radius = (hist_width * 2f32.sqrt() * (n + 1) as f32 * 0.5).round() as i64;
    let (sin, cos) = orientation.sin_cos();
    let (sin, cos) = (sin / hist_width, cos / hist_width);
    let weight_scale = -2.0 / (n * n) as f32;
    // A one-cell apron on every side keeps the trilinear spreading branch-free.
    let mut hist = vec![0.0f32; (n + 2) * (n + 2) * DESC_BINS];
    let idx = |r: usize, c: usize, o: usize| (r * (n + 2) + c) * DESC_BINS + o;
    for wy in -radius..=radius {
        for wx in -radius..=radius {
            let col_rot = wx as f32 * cos - wy as f32 * sin;
            let row_rot = wx as f32 * sin + wy as f32 * cos;
            let rbin = row_rot + (n / 2) as f32;
            let cbin = col_rot + (n / 2) as f32;
            let (ay, ax) = (y + wy, x + wx);
            if !(rbin > -0.5 && rbin < n as f32 + 0.5 && cbin > -0.5 && cbin < n as f32 + 0.5)
                || ay <= 0
                || ay >= img.h as i64 - 1
                || ax <= 0
                || ax >= img.w as i64 - 1
            {
                continue;
            }
            let (gx, gy) = gradient(img, ax as usize, ay as usize);
            let weight = ((col_rot * col_rot + row_rot * row_rot) * weight_scale).exp();
            let mag = (gx * gx + gy * gy).sqrt() * weight;
            let mut angle = gy.atan2(gx) - orientation;
            angle = angle.rem_euclid(2.0 * PI);
            let obin = angle * DESC_BINS as f32 / (2.0 * PI);

            let (rb, cb) = (rbin - 0.5, cbin - 0.5);
            let (r0, c0, o0) = (rb.floor(), cb.floor(), obin.floor());
            let (fr, fc, fo) = (rb - r0, cb - c0, obin - o0);
            let r0 = (r0 + 1.0) as usize;
            let c0 = (c0 + 1.0) as usize;
            let o0 = (o0 as usize) % DESC_BINS;
            let o1 = (o0 + 1) % DESC_BINS;
            for (dr, wr) in [(0, 1.0 - fr), (1, fr)] {
                for (dc, wc) in [(0, 1.0 - fc), (1, fc)] {
                    let v = mag * wr * wc;
                    hist[idx(r0 + dr, c0 + dc, o0)] += v * (1.0 - fo);
                    hist[idx(r0 + dr, c0 + dc, o1)] += v * fo;
                }
            }
        }
    }
    let mut out = [0.0f32; DESCRIPTOR_LEN];
    let mut k = 0;
    for r in 1..=n {
        for c in 1..=n {
            for o in 0..DESC_BINS {
                out[k] = hist[idx(r, c, o)];
                k += 1;
            }
        }
    }
    let norm = out.iter().map(|v| v * v).sum::<f32>().sqrt();
    let cap = norm * DESC_MAG_CAP;
    out.iter_mut().for_each(|v| *v = v.min(cap));
    let norm = out.iter().map(|v| v * v).sum::<f32>().sqrt().max(f32::EPSILON);
    out.iter_mut().for_each(|v| *v /= norm);
    out
}

fn seed_plane(img: &Raster) -> Plane {
    let resized = resize(img, INPUT_SIZE, INPUT_SIZE).expect("target size is non-zero");
    let base = Plane {
        w: INPUT_SIZE as usize,
        h: INPUT_SIZE as usize,
        data: resized.pixels().iter().map(|&p| f32::from(p) / 255.0).collect(),
    };
    let sigma = (SIGMA_MIN * SIGMA_MIN - SIGMA_IN * SIGMA_IN).sqrt() * 2.0;
    base.upsample2().blur(sigma)
}

/// Resizes `img` to 64x64 and extracts keypoints and descriptors.
pub fn extract_features(img: &Raster) -> FeatureSet {
    let octaves = build_pyramid(seed_plane(img));
    let mut set = FeatureSet::default();
    // Neighboring extrema can refine to the same sample point.
    let mut seen = std::collections::HashSet::new();
    for (o, oct) in octaves.iter().enumerate() {
        let (w, h) = (oct.dog[0].w, oct.dog[0].h);
        if w < 2 * IMAGE_BORDER || h < 2 * IMAGE_BORDER {
            continue;
        }
        // Octave pixels to input pixels; the seed is 2x the input.
        let to_input = 2f32.powi(o as i32) * 0.5;
        for s in 1..=SCALES_PER_OCTAVE {
            for y in IMAGE_BORDER..h - IMAGE_BORDER {
                for x in IMAGE_BORDER..w - IMAGE_BORDER {
                    if !is_extremum(&oct.dog, s, x, y) {
                        continue;
                    }
                    let Some(r) = refine(&oct.dog, s, x, y) else {
                        continue;
                    };
                    if !seen.insert((o, r.s, r.x, r.y)) {
                        continue;
                    }
                    if r.contrast.abs() * SCALES_PER_OCTAVE as f32 <= CONTRAST_THRESHOLD
                        || on_edge(&oct.dog[r.s], r.x, r.y)
                    {
                        continue;
                    }
                    let sigma = SIGMA_MIN
                        * 2.0
                        * 2f32.powf((r.s as f32 + r.offset[0]) / SCALES_PER_OCTAVE as f32);
                    let img = &oct.gauss[r.s];
                    let fx = r.x as f32 + r.offset[1];
                    let fy = r.y as f32 + r.offset[2];
                    let hist = orientation_histogram(img, r.x, r.y, sigma);
                    let peak = hist.iter().copied().fold(0.0f32, f32::max);
                    for k in 0..ORI_BINS {
                        let prev = hist[(k + ORI_BINS - 1) % ORI_BINS];
                        let next = hist[(k + 1) % ORI_BINS];
                        if !(hist[k] > prev && hist[k] > next && hist[k] >= ORI_PEAK_RATIO * peak)
                        {
                            continue;
                        }
                        let interp = 0.5 * (prev - next) / (prev - 2.0 * hist[k] + next);
                        let bin = (k as f32 + interp).rem_euclid(ORI_BINS as f32);
                        let orientation = bin * 2.0 * PI / ORI_BINS as f32;
                        set.keypoints.push(Keypoint {
                            x: fx * to_input,
                            y: fy * to_input,
                            scale: sigma * to_input,
                            orientation,
                            response: r.contrast.abs(),
                        });
                        set.descriptors.push(descriptor(img, fx, fy, sigma, orientation));
                    }
                }
            }
        }
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_image_is_featureless() {
        assert!(extract_features(&Raster::filled(40, 30, 255)).is_empty());
        assert!(extract_features(&Raster::filled(64, 64, 0)).is_empty());
    }

    #[test]
    fn blur_preserves_constant() {
        let p = Plane {
            w: 9,
            h: 7,
            data: vec![0.25; 63],
        };
        for v in p.blur(2.3).data {
            assert!((v - 0.25).abs() < 1e-6);
        }
    }

    #[test]
    fn blur_commutes_with_quarter_turn() {
        let w = 11;
        let h = 8;
        let data: Vec<f32> = (0..w * h).map(|i| ((i * 37) % 17) as f32 / 17.0).collect();
        let p = Plane { w, h, data };
        let rot = |p: &Plane| {
            let mut data = vec![0.0; p.w * p.h];
            for y in 0..p.h {
                for x in 0..p.w {
                    // clockwise: (x, y) -> (h - 1 - y, x) in a h x w plane
                    data[x * p.h + (p.h - 1 - y)] = p.at(x, y);
                }
            }
            Plane { w: p.h, h: p.w, data }
        };
        let a = rot(&p.blur(1.4));
        let b = rot(&p).blur(1.4);
        for (u, v) in a.data.iter().zip(&b.data) {
            assert!((u - v).abs() < 1e-5);
        }
    }

    #[test]
    fn descriptors_are_unit_length() {
        let img = Raster::from_fn(20, 20, |x, y| {
            if (8..12).contains(&x) || (8..12).contains(&y) || (x < 6 && y < 6) {
                0
            } else {
                255
            }
        });
        let f = extract_features(&img);
        assert!(!f.is_empty());
        assert_eq!(f.keypoints.len(), f.descriptors.len());
        for d in &f.descriptors {
            let n: f32 = d.iter().map(|v| v * v).sum::<f32>().sqrt();
            assert!((n - 1.0).abs() < 1e-4);
            assert!(d.iter().all(|v| *v >= 0.0));
        }
    }
}
