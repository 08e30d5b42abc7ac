use super::{BBox, BinaryRaster};

/// One 8-connected blob of ink.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Component {
    pub bbox: BBox,
    /// Number of ink pixels.
    pub area: u64,
}

/// Labels ink under 8-connectivity. Components come out in raster order of
/// their first (top-most, then left-most) pixel.
pub fn connected_components(img: &BinaryRaster) -> Vec<Component> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut seen = vec![false; w * h];
    let mut stack = Vec::new();
    let mut out = Vec::new();
    let px = img.pixels();
    for start in 0..w * h {
        if seen[start] || px[start] != super::INK {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let mut area = 0u64;
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            area += 1;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if !seen[j] && px[j] == super::INK {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        out.push(Component {
            bbox: BBox::from_corners(x0 as u32, y0 as u32, x1 as u32, y1 as u32),
            area,
        });
    }
    out
}
