//! CSV tables and portable-pixmap scatter plots.
//!
//! Numbers are written with Rust's `Display`, which is locale-independent
//! (always `.` as decimal separator) and round-trips every `f64`.

use std::fmt::Write as _;

/// In-memory CSV with a fixed header.
#[derive(Clone, Debug, PartialEq)]
pub struct Csv {
    columns: usize,
    text: String,
}

impl Csv {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let mut text = header.iter().map(|s| s.as_ref()).collect::<Vec<_>>().join(",");
        text.push('\n');
        Self { columns: header.len(), text }
    }

    pub fn row<S: AsRef<str>>(&mut self, fields: &[S]) {
        assert_eq!(fields.len(), self.columns, "CSV row width");
        let line = fields.iter().map(|s| s.as_ref()).collect::<Vec<_>>().join(",");
        self.text.push_str(&line);
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

pub fn num(v: f64) -> String {
    v.to_string()
}

/// Header `prefix_1, ..., prefix_n`.
pub fn indexed(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}_{i}")).collect()
}

const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [23, 190, 207],
];

/// Scatter of 2D points as a plain (`P3`) portable pixmap of exactly
/// `width × height` pixels. Points are coloured by `groups[i]` and mapped
/// into the padded bounding box of all finite points.
pub fn scatter_ppm(points: &[[f64; 2]], groups: &[usize], width: usize, height: usize) -> String {
    let mut pixels = vec![[255u8; 3]; width * height];
    let finite: Vec<&[f64; 2]> = points.iter().filter(|p| p[0].is_finite() && p[1].is_finite()).collect();
    if !finite.is_empty() && width > 0 && height > 0 {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in &finite {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        for k in 0..2 {
            let pad = 0.05 * (hi[k] - lo[k]).max(1e-9);
            lo[k] -= pad;
            hi[k] += pad;
        }
        for (p, &g) in points.iter().zip(groups) {
            if !(p[0].is_finite() && p[1].is_finite()) {
                continue;
            }
            let x = ((p[0] - lo[0]) / (hi[0] - lo[0]) * (width - 1) as f64).round() as usize;
            let y = ((hi[1] - p[1]) / (hi[1] - lo[1]) * (height - 1) as f64).round() as usize;
            let colour = PALETTE[g % PALETTE.len()];
            for (dx, dy) in [(0i64, 0i64), (1, 0), (-1, 0), (0, 1), (0, -1)] {
                let (px, py) = (x as i64 + dx, y as i64 + dy);
                if px >= 0 && py >= 0 && (px as usize) < width && (py as usize) < height {
                    pixels[py as usize * width + px as usize] = colour;
                }
            }
        }
    }
    let mut out = format!("P3\n{width} {height}\n255\n");
    for row in pixels.chunks(width.max(1)) {
        let line: Vec<String> = row.iter().map(|c| format!("{} {} {}", c[0], c[1], c[2])).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_header_and_rows() {
        let mut c = Csv::new(&["a", "b"]);
        c.row(&[num(0.5), num(-2.0)]);
        assert_eq!(c.as_str(), "a,b\n0.5,-2\n");
        assert_eq!(indexed("z", 2), vec!["z_1", "z_2"]);
    }

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, 1e-300, -123456.789, std::f64::consts::E] {
            assert_eq!(num(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
        assert!(!num(1234.5).contains(','));
    }

    #[test]
    fn ppm_has_requested_dimensions() {
        let img = scatter_ppm(&[[0.0, 0.0], [1.0, 1.0], [f64::NAN, 0.0]], &[0, 1, 2], 37, 21);
        let mut lines = img.lines();
        assert_eq!(lines.next(), Some("P3"));
        assert_eq!(lines.next(), Some("37 21"));
        assert_eq!(lines.next(), Some("255"));
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 21);
        assert!(rows.iter().all(|r| r.split_whitespace().count() == 37 * 3));
        assert!(img.contains("31 119 180") && img.contains("255 127 14"));
    }
}
