//! Built-in library of small drawing symbols for synthetic fixtures.
//!
//! Every glyph is 14 to 20 px on a side, is drawn with a two-pixel frame so
//! each row and column holds at least `MIN_LINE_INK` ink pixels, and differs
//! from each of its quarter-turn rotations.

use crate::font;
use crate::raster::BinaryRaster;

/// Least ink in any glyph row or column. A table row stays non-white under
/// the default `white_mean_min` of 250 while the table is narrower than
/// `51 * MIN_LINE_INK` px.
pub const MIN_LINE_INK: usize = 4;

#[derive(Debug, Clone, Copy)]
enum Frame {
    Square(u32),
    Rect(u32, u32),
    Rounded(u32),
    Circle(u32),
}

#[derive(Debug, Clone, Copy)]
enum Mark {
    Letter(char, u32, u32),
    Block(u32, u32, u32, u32),
    Line(i32, i32, i32, i32),
}

struct Spec {
    name: &'static str,
    frame: Frame,
    marks: &'static [Mark],
}

use Frame::*;
use Mark::*;

const SPECS: &[Spec] = &[
    Spec { name: "DUPLEX OUTLET", frame: Circle(19), marks: &[Line(4, 9, 14, 9), Block(8, 12, 3, 3)] },
    Spec { name: "CEILING LIGHT", frame: Circle(19), marks: &[Letter('L', 7, 6)] },
    Spec { name: "EXIT SIGN", frame: Rect(20, 14), marks: &[Letter('E', 3, 4), Letter('X', 11, 4)] },
    Spec { name: "SMOKE DETECTOR", frame: Square(18), marks: &[Letter('S', 3, 3), Block(11, 11, 4, 4)] },
    Spec { name: "FLOOR DRAIN", frame: Square(18), marks: &[Line(1, 1, 16, 16), Block(11, 2, 4, 4)] },
    Spec { name: "THERMOSTAT", frame: Rounded(19), marks: &[Letter('T', 7, 5), Line(3, 15, 15, 15)] },
    Spec { name: "JUNCTION BOX", frame: Square(18), marks: &[Letter('J', 6, 5)] },
    Spec { name: "FIRE ALARM", frame: Rect(16, 20), marks: &[Letter('F', 5, 3), Block(5, 13, 6, 4)] },
    Spec { name: "EXHAUST FAN", frame: Circle(19), marks: &[Line(4, 4, 14, 14), Line(4, 14, 8, 10)] },
    Spec { name: "DATA OUTLET", frame: Rect(20, 16), marks: &[Letter('D', 3, 4), Letter('T', 11, 4)] },
    Spec { name: "WALL SWITCH", frame: Square(18), marks: &[Letter('K', 6, 4), Line(2, 14, 9, 14)] },
    Spec { name: "MOTION SENSOR", frame: Rounded(19), marks: &[Letter('M', 3, 3), Block(12, 12, 4, 4)] },
    Spec { name: "SPEAKER", frame: Rect(14, 20), marks: &[Letter('P', 4, 3), Line(3, 14, 10, 17)] },
    Spec { name: "CAMERA", frame: Rect(20, 14), marks: &[Letter('C', 3, 4), Block(12, 4, 5, 6)] },
    Spec { name: "DIMMER", frame: Circle(19), marks: &[Letter('R', 7, 6), Block(4, 12, 2, 2)] },
    Spec { name: "HOSE BIB", frame: Square(18), marks: &[Letter('H', 3, 3), Line(10, 14, 15, 3)] },
    Spec { name: "GAS VALVE", frame: Rounded(19), marks: &[Letter('G', 7, 6)] },
    Spec { name: "PANEL BOARD", frame: Rect(16, 20), marks: &[Block(2, 2, 4, 16), Letter('P', 8, 3)] },
    Spec { name: "FLOOR BOX", frame: Rect(20, 16), marks: &[Line(2, 13, 17, 2), Letter('B', 12, 7)] },
    Spec { name: "DOOR BELL", frame: Square(18), marks: &[Block(2, 2, 14, 3), Letter('Q', 6, 8)] },
];

#[derive(Debug, Clone, PartialEq)]
pub struct Glyph {
    /// Legend text for the glyph.
    pub name: &'static str,
    pub bitmap: BinaryRaster,
}

fn frame_bitmap(frame: Frame) -> BinaryRaster {
    match frame {
        Square(s) => outline(s, s, 0),
        Rect(w, h) => outline(w, h, 0),
        Rounded(s) => outline(s, s, 3),
        Circle(d) => {
            let c = (d - 1) as f64 / 2.0;
            BinaryRaster::from_fn(d, d, |x, y| {
                let r = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)).sqrt();
                (r - c + 0.5).abs() < 1.0
            })
        }
    }
}

/// Two-pixel rectangle outline with corners cut diagonally by `cut` px.
fn outline(w: u32, h: u32, cut: u32) -> BinaryRaster {
    BinaryRaster::from_fn(w, h, |x, y| {
        let dx = x.min(w - 1 - x);
        let dy = y.min(h - 1 - y);
        if dx < cut && dy < cut {
            dx + dy + 1 >= cut && dx + dy <= cut
        } else {
            dx < 2 || dy < 2
        }
    })
}

fn draw_line(img: &mut BinaryRaster, x0: i32, y0: i32, x1: i32, y1: i32) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = ((x1 - x0).signum(), (y1 - y0).signum());
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        img.set_ink(x as u32, y as u32, true);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn build(spec: &Spec) -> Glyph {
    let mut img = frame_bitmap(spec.frame);
    for mark in spec.marks {
        match *mark {
            Letter(ch, x0, y0) => {
                for (x, y) in font::ink_pixels(&ch.to_string()) {
                    img.set_ink(x0 + x, y0 + y, true);
                }
            }
            Block(x0, y0, w, h) => {
                for y in y0..y0 + h {
                    for x in x0..x0 + w {
                        img.set_ink(x, y, true);
                    }
                }
            }
            Line(x0, y0, x1, y1) => draw_line(&mut img, x0, y0, x1, y1),
        }
    }
    Glyph {
        name: spec.name,
        bitmap: img,
    }
}

/// All glyphs, in a fixed order.
pub fn glyph_library() -> Vec<Glyph> {
    SPECS.iter().map(build).collect()
}

pub fn library_size() -> usize {
    SPECS.len()
}
