use serde::{Deserialize, Serialize};

use super::{BinaryRaster, INK, PAPER};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Horizontal,
    Vertical,
}

/// Straight structuring element: `1 x length` when horizontal, `length x 1` when vertical.
///
/// The anchor sits at `length / 2`, so the footprint covers offsets
/// `-(length / 2) ..= length - 1 - length / 2` along the kernel axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineKernel {
    pub orientation: Orientation,
    pub length: u32,
}

impl LineKernel {
    pub fn horizontal(length: u32) -> Self {
        assert!(length >= 1, "kernel length must be at least 1");
        LineKernel {
            orientation: Orientation::Horizontal,
            length,
        }
    }

    pub fn vertical(length: u32) -> Self {
        assert!(length >= 1, "kernel length must be at least 1");
        LineKernel {
            orientation: Orientation::Vertical,
            length,
        }
    }

    /// `(width, height)` of the footprint.
    pub fn shape(&self) -> (u32, u32) {
        match self.orientation {
            Orientation::Horizontal => (self.length, 1),
            Orientation::Vertical => (1, self.length),
        }
    }

    fn offsets(&self) -> (i64, i64) {
        let before = i64::from(self.length / 2);
        (-before, i64::from(self.length) - 1 - before)
    }
}

/// Applies `f` to every line of `img` along the kernel axis. `f` receives the
/// ink flags of one line and writes the output flags.
fn along_axis(
    img: &BinaryRaster,
    orientation: Orientation,
    mut f: impl FnMut(&[bool], &mut [bool]),
) -> BinaryRaster {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (lines, len) = match orientation {
        Orientation::Horizontal => (h, w),
        Orientation::Vertical => (w, h),
    };
    let index = |line: usize, i: usize| match orientation {
        Orientation::Horizontal => line * w + i,
        Orientation::Vertical => i * w + line,
    };
    let src = img.pixels();
    let mut out = vec![PAPER; w * h];
    let mut input = vec![false; len];
    let mut output = vec![false; len];
    for line in 0..lines {
        for (i, v) in input.iter_mut().enumerate() {
            *v = src[index(line, i)] == INK;
        }
        f(&input, &mut output);
        for (i, &v) in output.iter().enumerate() {
            if v {
                out[index(line, i)] = INK;
            }
        }
    }
    BinaryRaster {
        width: img.width(),
        height: img.height(),
        pixels: out,
    }
}

fn prefix_counts(line: &[bool]) -> Vec<u32> {
    let mut acc = Vec::with_capacity(line.len() + 1);
    acc.push(0);
    let mut total = 0;
    for &v in line {
        total += u32::from(v);
        acc.push(total);
    }
    acc
}

fn erode_once(img: &BinaryRaster, k: LineKernel) -> BinaryRaster {
    let (lo, hi) = k.offsets();
    along_axis(img, k.orientation, |line, out| {
        let counts = prefix_counts(line);
        let n = line.len() as i64;
        for (p, o) in out.iter_mut().enumerate() {
            let (a, b) = (p as i64 + lo, p as i64 + hi);
            // Off-image positions count as background.
            *o = a >= 0 && b < n && counts[b as usize + 1] - counts[a as usize] == k.length;
        }
    })
}

fn dilate_once(img: &BinaryRaster, k: LineKernel) -> BinaryRaster {
    let (lo, hi) = k.offsets();
    along_axis(img, k.orientation, |line, out| {
        let counts = prefix_counts(line);
        let n = line.len() as i64;
        for (p, o) in out.iter_mut().enumerate() {
            // Reflected footprint, so that dilation is the adjoint of erosion.
            let a = (p as i64 - hi).max(0);
            let b = (p as i64 - lo).min(n - 1);
            *o = a <= b && counts[b as usize + 1] > counts[a as usize];
        }
    })
}

/// A pixel stays ink only if the whole kernel footprint around it is ink.
pub fn erode(img: &BinaryRaster, k: LineKernel, iterations: u32) -> BinaryRaster {
    let mut out = img.clone();
    for _ in 0..iterations {
        out = erode_once(&out, k);
    }
    out
}

/// A pixel becomes ink if any pixel of the (reflected) footprint is ink.
pub fn dilate(img: &BinaryRaster, k: LineKernel, iterations: u32) -> BinaryRaster {
    let mut out = img.clone();
    for _ in 0..iterations {
        out = dilate_once(&out, k);
    }
    out
}

/// Erosion followed by dilation with the same kernel.
pub fn open(img: &BinaryRaster, k: LineKernel, iterations: u32) -> BinaryRaster {
    dilate(&erode(img, k, iterations), k, iterations)
}

/// Opening with each kernel; returns `(horizontal lines, vertical lines)`.
pub fn detect_lines(
    img: &BinaryRaster,
    horiz: LineKernel,
    vert: LineKernel,
    iterations: u32,
) -> (BinaryRaster, BinaryRaster) {
    (open(img, horiz, iterations), open(img, vert, iterations))
}

/// Ink union of two same-sized images.
pub fn combine_lines(hlines: &BinaryRaster, vlines: &BinaryRaster) -> Result<BinaryRaster> {
    check_dims(hlines, vlines)?;
    let pixels = hlines
        .pixels()
        .iter()
        .zip(vlines.pixels())
        .map(|(&a, &b)| if a == INK || b == INK { INK } else { PAPER })
        .collect();
    Ok(BinaryRaster {
        width: hlines.width(),
        height: hlines.height(),
        pixels,
    })
}

/// Ink of `img` that is not ink in `mask`.
pub fn subtract_ink(img: &BinaryRaster, mask: &BinaryRaster) -> Result<BinaryRaster> {
    check_dims(img, mask)?;
    let pixels = img
        .pixels()
        .iter()
        .zip(mask.pixels())
        .map(|(&a, &m)| if a == INK && m != INK { INK } else { PAPER })
        .collect();
    Ok(BinaryRaster {
        width: img.width(),
        height: img.height(),
        pixels,
    })
}

fn check_dims(a: &BinaryRaster, b: &BinaryRaster) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::DimensionMismatch {
            left: (a.width(), a.height()),
            right: (b.width(), b.height()),
        });
    }
    Ok(())
}
