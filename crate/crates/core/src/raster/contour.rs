//! Topological border following (Suzuki & Abe) over 8-connected ink, and the
//! rectangle finder built on top of it.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{BBox, BinaryRaster, INK};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BorderKind {
    /// Boundary between an ink component and the background surrounding it.
    Outer,
    /// Boundary between an ink component and a background hole inside it.
    Hole,
}

#[derive(Debug, Clone)]
pub struct Border {
    pub kind: BorderKind,
    /// Index of the enclosing border in the returned list; `None` for borders
    /// whose parent is the image frame.
    pub parent: Option<usize>,
    /// Traced ink pixels, in tracing order. May revisit pixels.
    pub pixels: Vec<(u32, u32)>,
    pub bbox: BBox,
}

// Clockwise in image coordinates (y grows downwards), starting east.
const DIRS: [(i64, i64); 8] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];

fn dir_of(from: (i64, i64), to: (i64, i64)) -> usize {
    let d = (to.0 - from.0, to.1 - from.1);
    DIRS.iter()
        .position(|&x| x == d)
        .expect("points are 8-neighbours")
}

/// Traces every outer and hole border of the ink in `img`, with the
/// parent/child hierarchy.
pub fn trace_borders(img: &BinaryRaster) -> Vec<Border> {
    let (w, h) = (i64::from(img.width()), i64::from(img.height()));
    let pw = w + 2;
    // Padded label grid: 0 background, 1 unvisited ink, +/-n visited by border n.
    let mut f = vec![0i64; (pw * (h + 2)) as usize];
    let idx = |x: i64, y: i64| (y * pw + x) as usize;
    for y in 0..h {
        for x in 0..w {
            if img.is_ink(x as u32, y as u32) {
                f[idx(x + 1, y + 1)] = 1;
            }
        }
    }

    // Border numbers start at 2; number 1 is the image frame (a hole border).
    let mut borders: Vec<Border> = Vec::new();
    let kind_of = |borders: &[Border], nbd: i64| -> BorderKind {
        if nbd == 1 {
            BorderKind::Hole
        } else {
            borders[(nbd - 2) as usize].kind
        }
    };
    let parent_of = |borders: &[Border], nbd: i64| -> Option<usize> {
        if nbd == 1 {
            None
        } else {
            borders[(nbd - 2) as usize].parent
        }
    };

    let mut nbd: i64 = 1;
    for y in 1..=h {
        let mut lnbd: i64 = 1;
        for x in 1..=w {
            let v = f[idx(x, y)];
            if v == 0 {
                continue;
            }
            let start = if v == 1 && f[idx(x - 1, y)] == 0 {
                Some((BorderKind::Outer, (x - 1, y)))
            } else if v >= 1 && f[idx(x + 1, y)] == 0 {
                if v > 1 {
                    lnbd = v;
                }
                Some((BorderKind::Hole, (x + 1, y)))
            } else {
                None
            };

            if let Some((kind, from)) = start {
                nbd += 1;
                let lnbd_kind = kind_of(&borders, lnbd);
                let lnbd_index = if lnbd == 1 { None } else { Some((lnbd - 2) as usize) };
                let parent = if kind == lnbd_kind {
                    parent_of(&borders, lnbd)
                } else {
                    lnbd_index
                };
                let pixels = follow(&mut f, pw, (x, y), from, nbd);
                let bbox = bbox_of(&pixels);
                borders.push(Border {
                    kind,
                    parent,
                    pixels,
                    bbox,
                });
            }

            let v = f[idx(x, y)];
            if v != 1 {
                lnbd = v.abs();
            }
        }
    }
    borders
}

fn follow(f: &mut [i64], pw: i64, start: (i64, i64), from: (i64, i64), nbd: i64) -> Vec<(u32, u32)> {
    let idx = |p: (i64, i64)| (p.1 * pw + p.0) as usize;
    let step = |p: (i64, i64), d: usize| (p.0 + DIRS[d].0, p.1 + DIRS[d].1);
    let unpad = |p: (i64, i64)| ((p.0 - 1) as u32, (p.1 - 1) as u32);

    let d0 = dir_of(start, from);
    let first = (0..8)
        .map(|k| (d0 + k) % 8)
        .map(|d| step(start, d))
        .find(|&q| f[idx(q)] != 0);
    let Some(p1) = first else {
        f[idx(start)] = -nbd;
        return vec![unpad(start)];
    };

    let mut pixels = Vec::new();
    let mut p2 = p1;
    let mut p3 = start;
    loop {
        let d2 = dir_of(p3, p2);
        let mut east_zero = false;
        let mut p4 = p3;
        for k in 1..=8 {
            let d = (d2 + 8 - k) % 8;
            let q = step(p3, d);
            if f[idx(q)] != 0 {
                p4 = q;
                break;
            }
            if d == 0 {
                east_zero = true;
            }
        }
        if east_zero {
            f[idx(p3)] = -nbd;
        } else if f[idx(p3)] == 1 {
            f[idx(p3)] = nbd;
        }
        pixels.push(unpad(p3));
        if p4 == start && p3 == p1 {
            break;
        }
        p2 = p3;
        p3 = p4;
    }
    pixels
}

fn bbox_of(pixels: &[(u32, u32)]) -> BBox {
    let x0 = pixels.iter().map(|p| p.0).min().unwrap_or(0);
    let x1 = pixels.iter().map(|p| p.0).max().unwrap_or(0);
    let y0 = pixels.iter().map(|p| p.1).min().unwrap_or(0);
    let y1 = pixels.iter().map(|p| p.1).max().unwrap_or(0);
    BBox::from_corners(x0, y0, x1, y1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RectangleConfig {
    /// Minimum bounding-box area in px².
    pub min_area: u64,
    /// Minimum width and height, which keeps thick straight strokes out.
    pub min_side: u32,
    /// Fraction of the bounding-box perimeter the traced border must cover.
    pub fill_ratio: f64,
    /// Boxes whose four edges all lie within this many pixels of a larger
    /// box are the same rectangle traced twice (outer and hole border of one
    /// ruled line) and are dropped.
    pub duplicate_tolerance: u32,
}

impl Default for RectangleConfig {
    fn default() -> Self {
        RectangleConfig {
            min_area: 100,
            min_side: 6,
            fill_ratio: 0.9,
            duplicate_tolerance: 3,
        }
    }
}

fn perimeter_coverage(border: &Border) -> f64 {
    let b = border.bbox;
    let (x1, y1) = (b.right() - 1, b.bottom() - 1);
    let on_edge: HashSet<(u32, u32)> = border
        .pixels
        .iter()
        .copied()
        .filter(|&(x, y)| x == b.x || x == x1 || y == b.y || y == y1)
        .collect();
    let perimeter = if b.w == 1 || b.h == 1 {
        b.area()
    } else {
        2 * u64::from(b.w) + 2 * u64::from(b.h) - 4
    };
    on_edge.len() as f64 / perimeter as f64
}

fn near_duplicate(a: &BBox, b: &BBox, tol: u32) -> bool {
    a.x.abs_diff(b.x) <= tol
        && a.y.abs_diff(b.y) <= tol
        && a.right().abs_diff(b.right()) <= tol
        && a.bottom().abs_diff(b.bottom()) <= tol
}

/// Bounding boxes of closed rectangular borders, outer and nested, largest
/// first.
pub fn find_rectangles(boxes_img: &BinaryRaster, cfg: &RectangleConfig) -> Vec<BBox> {
    if !boxes_img.pixels().contains(&INK) {
        return Vec::new();
    }
    let mut candidates: Vec<BBox> = trace_borders(boxes_img)
        .iter()
        .filter(|b| {
            b.bbox.area() >= cfg.min_area
                && b.bbox.w >= cfg.min_side
                && b.bbox.h >= cfg.min_side
                && perimeter_coverage(b) >= cfg.fill_ratio
        })
        .map(|b| b.bbox)
        .collect();
    candidates.sort_by(|a, b| b.area().cmp(&a.area()).then((a.y, a.x, a.w, a.h).cmp(&(b.y, b.x, b.w, b.h))));
    let mut kept: Vec<BBox> = Vec::new();
    for c in candidates {
        if !kept
            .iter()
            .any(|k| near_duplicate(k, &c, cfg.duplicate_tolerance))
        {
            kept.push(c);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outline(img: &mut BinaryRaster, b: BBox, thickness: u32) {
        for y in b.y..b.bottom() {
            for x in b.x..b.right() {
                let edge = x < b.x + thickness
                    || x >= b.right() - thickness
                    || y < b.y + thickness
                    || y >= b.bottom() - thickness;
                if edge {
                    img.set_ink(x, y, true);
                }
            }
        }
    }

    #[test]
    fn blank_has_no_rectangles() {
        let cfg = RectangleConfig::default();
        assert!(find_rectangles(&BinaryRaster::blank(50, 50), &cfg).is_empty());
    }

    #[test]
    fn single_outline() {
        let mut img = BinaryRaster::blank(160, 100);
        outline(&mut img, BBox::new(20, 30, 100, 50), 1);
        let rects = find_rectangles(&img, &RectangleConfig::default());
        assert_eq!(rects, vec![BBox::new(20, 30, 100, 50)]);
    }

    #[test]
    fn thick_outline_is_reported_once() {
        let mut img = BinaryRaster::blank(160, 100);
        outline(&mut img, BBox::new(20, 30, 100, 50), 3);
        let rects = find_rectangles(&img, &RectangleConfig::default());
        assert_eq!(rects, vec![BBox::new(20, 30, 100, 50)]);
    }

    #[test]
    fn nested_outlines() {
        let mut img = BinaryRaster::blank(200, 200);
        let outer = BBox::new(10, 10, 150, 120);
        let inner = BBox::new(40, 50, 60, 30);
        outline(&mut img, outer, 1);
        outline(&mut img, inner, 2);
        let rects = find_rectangles(&img, &RectangleConfig::default());
        assert_eq!(rects.len(), 2);
        assert_eq!(rects[0], outer);
        assert_eq!(rects[1], inner);
        assert!(rects[0].contains(&rects[1]));
    }

    #[test]
    fn grid_yields_outer_box_and_cells() {
        let mut img = BinaryRaster::blank(120, 90);
        let table = BBox::new(5, 5, 101, 61);
        outline(&mut img, table, 1);
        for x in table.x..table.right() {
            img.set_ink(x, 25, true);
            img.set_ink(x, 45, true);
        }
        let rects = find_rectangles(&img, &RectangleConfig::default());
        assert_eq!(rects[0], table);
        assert_eq!(rects.len(), 4);
        assert!(rects.contains(&BBox::new(5, 5, 101, 21)));
        assert!(rects.contains(&BBox::new(5, 25, 101, 21)));
        assert!(rects.contains(&BBox::new(5, 45, 101, 21)));
    }

    #[test]
    fn plus_sign_is_not_a_rectangle() {
        let img = BinaryRaster::from_fn(60, 60, |x, y| x == 30 || y == 30);
        assert!(find_rectangles(&img, &RectangleConfig::default()).is_empty());
    }

    #[test]
    fn hierarchy_links_hole_to_outer() {
        let mut img = BinaryRaster::blank(30, 30);
        outline(&mut img, BBox::new(2, 2, 20, 20), 2);
        let borders = trace_borders(&img);
        assert_eq!(borders.len(), 2);
        assert_eq!(borders[0].kind, BorderKind::Outer);
        assert_eq!(borders[0].parent, None);
        assert_eq!(borders[1].kind, BorderKind::Hole);
        assert_eq!(borders[1].parent, Some(0));
        assert_eq!(borders[1].bbox, BBox::new(3, 3, 18, 18));
    }

    #[test]
    fn single_pixel_border() {
        let mut img = BinaryRaster::blank(5, 5);
        img.set_ink(2, 2, true);
        let borders = trace_borders(&img);
        assert_eq!(borders.len(), 1);
        assert_eq!(borders[0].pixels, vec![(2, 2)]);
    }
}
