//! Quadrilateral text-box annotations: the `x1,y1,...,x4,y4` text format and
//! rasterization into box masks.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mask::Mask;
use crate::error::{Error, Result};

/// Four integer vertices, clockwise in image coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quad(pub [[i32; 2]; 4]);

impl Quad {
    /// Axis-aligned rectangle spanning `(x0, y0)`–`(x1, y1)` inclusive.
    pub fn rect(x0: i32, y0: i32, x1: i32, y1: i32) -> Self {
        Quad([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    }

    /// Shoelace area (absolute).
    pub fn area(&self) -> f64 {
        let p = &self.0;
        let twice: i64 = (0..4)
            .map(|i| {
                let [x0, y0] = p[i];
                let [x1, y1] = p[(i + 1) % 4];
                x0 as i64 * y1 as i64 - x1 as i64 * y0 as i64
            })
            .sum();
        (twice as f64 / 2.0).abs()
    }

    pub fn clamped(&self, width: u32, height: u32) -> Quad {
        let mut q = *self;
        for v in &mut q.0 {
            v[0] = v[0].clamp(0, width.saturating_sub(1) as i32);
            v[1] = v[1].clamp(0, height.saturating_sub(1) as i32);
        }
        q
    }

    pub fn to_f64(&self) -> [(f64, f64); 4] {
        self.0.map(|[x, y]| (x as f64, y as f64))
    }

    /// Point-in-polygon with the even-odd rule; points on an edge count as inside.
    pub fn contains(&self, px: i32, py: i32) -> bool {
        let p = &self.0;
        let mut inside = false;
        for i in 0..4 {
            let [xi, yi] = p[i];
            let [xj, yj] = p[(i + 3) % 4];
            if on_segment((xi, yi), (xj, yj), (px, py)) {
                return true;
            }
            if (yi > py) != (yj > py) {
                let t = (py - yi) as f64 / (yj - yi) as f64;
                let x_cross = xi as f64 + t * (xj - xi) as f64;
                if (px as f64) < x_cross {
                    inside = !inside;
                }
            }
        }
        inside
    }

    fn format_line(&self) -> String {
        let mut s = String::new();
        for (i, [x, y]) in self.0.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            let _ = write!(s, "{x},{y}");
        }
        s
    }
}

fn on_segment(a: (i32, i32), b: (i32, i32), p: (i32, i32)) -> bool {
    let cross = (b.0 - a.0) as i64 * (p.1 - a.1) as i64 - (b.1 - a.1) as i64 * (p.0 - a.0) as i64;
    cross == 0
        && p.0 >= a.0.min(b.0)
        && p.0 <= a.0.max(b.0)
        && p.1 >= a.1.min(b.1)
        && p.1 <= a.1.max(b.1)
}

/// All text boxes of one image.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxAnnotation {
    pub polygons: Vec<Quad>,
}

impl BoxAnnotation {
    pub fn new(polygons: Vec<Quad>) -> Self {
        Self { polygons }
    }

    /// Parses one `x1,y1,x2,y2,x3,y3,x4,y4` line per box. Blank lines are ignored;
    /// `path` is only used in error messages.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut polygons = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Annotation {
                path: path.to_path_buf(),
                line: idx + 1,
                msg,
            };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 8 {
                return Err(err(format!("expected 8 integers, found {} fields", fields.len())));
            }
            let mut v = [[0i32; 2]; 4];
            for (k, f) in fields.iter().enumerate() {
                v[k / 2][k % 2] = f
                    .parse()
                    .map_err(|_| err(format!("`{f}` is not an integer")))?;
            }
            polygons.push(Quad(v));
        }
        Ok(Self { polygons })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        self.polygons
            .iter()
            .map(|q| q.format_line() + "\n")
            .collect()
    }

    /// Vertices clamped into a `width × height` image.
    pub fn clamped(&self, width: u32, height: u32) -> Self {
        Self {
            polygons: self.polygons.iter().map(|q| q.clamped(width, height)).collect(),
        }
    }
}

/// Rasterizes the union of all polygons. Pixel `(x, y)` is set when the point
/// `(x, y)` lies inside or on the boundary of some polygon. Zero-area polygons
/// are skipped with a warning.
pub fn rasterize_box_mask(annotation: &BoxAnnotation, height: u32, width: u32) -> Mask {
    let mut mask = Mask::zeros(width, height);
    for quad in &annotation.polygons {
        let quad = quad.clamped(width, height);
        if quad.area() == 0.0 {
            log::warn!("skipping degenerate box {:?}", quad.0);
            continue;
        }
        let xs = quad.0.map(|v| v[0]);
        let ys = quad.0.map(|v| v[1]);
        let (x0, x1) = (*xs.iter().min().unwrap(), *xs.iter().max().unwrap());
        let (y0, y1) = (*ys.iter().min().unwrap(), *ys.iter().max().unwrap());
        for y in y0..=y1 {
            for x in x0..=x1 {
                if quad.contains(x, y) {
                    mask.set(x as u32, y as u32, true);
                }
            }
        }
    }
    mask
}
