//! Deterministic file writers: CSV with 12 significant digits, JSON, and
//! binary PPM heatmaps.

use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;

/// 12 significant digits, `.` separator. Plain decimal for magnitudes in
/// `[1e-6, 1e15)`, exponent form otherwise; trailing zeros trimmed.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let e = v.abs().log10().floor() as i32;
    if (-6..15).contains(&e) {
        let decimals = (11 - e).max(0) as usize;
        let s = format!("{v:.decimals$}");
        trim_fraction(&s).to_string()
    } else {
        let s = format!("{v:.11e}");
        let (mantissa, exp) = s.split_once('e').expect("exponent form");
        format!("{}e{exp}", trim_fraction(mantissa))
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Rows of numbers under a header, Unix newlines.
pub struct Csv {
    buf: String,
}

impl Csv {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let mut buf = header.iter().map(|h| h.as_ref()).collect::<Vec<_>>().join(",");
        buf.push('\n');
        Csv { buf }
    }

    pub fn row(&mut self, values: impl IntoIterator<Item = f64>) {
        self.mixed_row(&[], values);
    }

    /// Row whose leading cells are text.
    pub fn mixed_row(&mut self, text: &[&str], values: impl IntoIterator<Item = f64>) {
        let cells: Vec<String> = text.iter().map(|t| t.to_string()).chain(values.into_iter().map(fmt_num)).collect();
        self.buf.push_str(&cells.join(","));
        self.buf.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.buf
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        fs::write(path, &self.buf)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    s.push('\n');
    fs::write(path, s)
}

/// A row-major grid of values to be drawn as one heatmap panel.
pub struct Panel<'a> {
    pub rows: usize,
    pub cols: usize,
    pub values: &'a [f64],
}

fn lerp(a: [u8; 3], b: [u8; 3], t: f64) -> [u8; 3] {
    let f = |x: u8, y: u8| (x as f64 + (y as f64 - x as f64) * t).round() as u8;
    [f(a[0], b[0]), f(a[1], b[1]), f(a[2], b[2])]
}

/// Black through purple and orange to pale yellow on `[0, 1]`.
fn sequential(t: f64) -> [u8; 3] {
    const STOPS: [[u8; 3]; 5] = [[0, 0, 4], [87, 16, 110], [188, 55, 84], [249, 142, 9], [252, 255, 164]];
    let t = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let k = (t.floor() as usize).min(STOPS.len() - 2);
    lerp(STOPS[k], STOPS[k + 1], t - k as f64)
}

/// Blue through white to red on `[-1, 1]`.
fn diverging(t: f64) -> [u8; 3] {
    let t = t.clamp(-1.0, 1.0);
    if t < 0.0 {
        lerp([255, 255, 255], [33, 102, 172], -t)
    } else {
        lerp([255, 255, 255], [178, 24, 43], t)
    }
}

/// Side-by-side panels with a shared linear colour scale: diverging and
/// symmetric when any value is negative, sequential from zero otherwise.
/// Each cell is `scale` pixels square; panels are separated by a white gap.
pub fn heatmap_ppm(panels: &[Panel], scale: usize) -> Vec<u8> {
    let scale = scale.max(1);
    let gap = if panels.len() > 1 { 2 * scale } else { 0 };
    let height = panels.iter().map(|p| p.rows).max().unwrap_or(0) * scale;
    let width = panels.iter().map(|p| p.cols * scale).sum::<usize>() + gap * panels.len().saturating_sub(1);
    let all = || panels.iter().flat_map(|p| p.values.iter().copied());
    let signed = all().any(|v| v < 0.0);
    let vmax = all().fold(0.0f64, |m, v| m.max(v.abs()));
    let color = |v: f64| {
        let t = if vmax > 0.0 { v / vmax } else { 0.0 };
        if signed { diverging(t) } else { sequential(t) }
    };
    let mut img = vec![255u8; width * height * 3];
    let mut x0 = 0;
    for p in panels {
        for r in 0..p.rows {
            for c in 0..p.cols {
                let rgb = color(p.values[r * p.cols + c]);
                // row 0 at the bottom so images match the lattice y axis
                let y_cell = p.rows - 1 - r;
                for dy in 0..scale {
                    for dx in 0..scale {
                        let x = x0 + c * scale + dx;
                        let y = y_cell * scale + dy;
                        let k = (y * width + x) * 3;
                        img[k..k + 3].copy_from_slice(&rgb);
                    }
                }
            }
        }
        x0 += p.cols * scale + gap;
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(&img);
    out
}

/// Cell size giving roughly 320 pixels along the longest panel side.
pub fn auto_scale(rows: usize, cols: usize) -> usize {
    (320 / rows.max(cols).max(1)).clamp(1, 32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format() {
        assert_eq!(fmt_num(0.0), "0");
        assert_eq!(fmt_num(1.0), "1");
        assert_eq!(fmt_num(-2.5), "-2.5");
        assert_eq!(fmt_num(std::f64::consts::PI), "3.14159265359");
        assert_eq!(fmt_num(0.001234567890123), "0.00123456789012");
        assert_eq!(fmt_num(1.5e-9), "1.5e-9");
        assert_eq!(fmt_num(-6.02214076e23), "-6.02214076e23");
        assert_eq!(fmt_num(123456.0), "123456");
    }

    #[test]
    fn csv_layout() {
        let mut c = Csv::new(&["a", "b"]);
        c.row([1.0, 0.5]);
        c.mixed_row(&["x"], [2.0]);
        assert_eq!(c.as_str(), "a,b\n1,0.5\nx,2\n");
    }

    #[test]
    fn ppm_header_and_size() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let img = heatmap_ppm(&[Panel { rows: 2, cols: 3, values: &v }], 2);
        let header = b"P6\n6 4\n255\n";
        assert_eq!(&img[..header.len()], header);
        assert_eq!(img.len(), header.len() + 6 * 4 * 3);

        let two = heatmap_ppm(&[Panel { rows: 2, cols: 3, values: &v }, Panel { rows: 2, cols: 3, values: &v }], 1);
        assert!(two.starts_with(b"P6\n8 2\n255\n"));
    }

    #[test]
    fn colour_scales() {
        assert_eq!(diverging(0.0), [255, 255, 255]);
        assert_eq!(diverging(1.0), [178, 24, 43]);
        assert_eq!(sequential(0.0), [0, 0, 4]);
        assert_eq!(sequential(1.0), [252, 255, 164]);
    }
}
