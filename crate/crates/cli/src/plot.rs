//! Metric-versus-severity plots: per-case values as grey dots and the mean
//! with a ±1 sd bar in purple, one column per severity.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};

use crate::error::CliResult;
use crate::output::write_bytes;

const WIDTH: u32 = 640;
const HEIGHT: u32 = 400;
const LEFT: i64 = 64;
const RIGHT: i64 = 24;
const TOP: i64 = 20;
const BOTTOM: i64 = 48;

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);
const POINT: Rgb<u8> = Rgb([150, 150, 150]);
const PURPLE: Rgb<u8> = Rgb([128, 0, 128]);

/// One x position: its tick label and the per-case values there.
#[derive(Debug, Clone)]
pub struct Column {
    pub label: String,
    pub values: Vec<f64>,
}

/// 3×5 glyphs, one row per byte, most significant of the low three bits on
/// the left.
fn glyph(c: char) -> Option<[u8; 5]> {
    Some(match c {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 1, 1],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        '.' => [0, 0, 0, 0, 2],
        '-' => [0, 0, 7, 0, 0],
        'e' => [7, 4, 6, 4, 7],
        'c' => [7, 4, 4, 4, 7],
        'l' => [4, 4, 4, 4, 7],
        'a' => [2, 5, 7, 5, 5],
        'n' => [6, 5, 5, 5, 5],
        _ => return None,
    })
}

struct Canvas {
    img: RgbImage,
}

impl Canvas {
    fn put(&mut self, x: i64, y: i64, c: Rgb<u8>) {
        if x >= 0 && y >= 0 && (x as u32) < WIDTH && (y as u32) < HEIGHT {
            self.img.put_pixel(x as u32, y as u32, c);
        }
    }

    fn rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb<u8>) {
        for y in y0.min(y1)..=y0.max(y1) {
            for x in x0.min(x1)..=x0.max(x1) {
                self.put(x, y, c);
            }
        }
    }

    fn disc(&mut self, cx: i64, cy: i64, r: i64, c: Rgb<u8>) {
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy <= r * r {
                    self.put(cx + dx, cy + dy, c);
                }
            }
        }
    }

    fn text_width(s: &str, scale: i64) -> i64 {
        s.chars().count() as i64 * 4 * scale - scale
    }

    fn text(&mut self, x: i64, y: i64, s: &str, scale: i64, c: Rgb<u8>) {
        for (i, ch) in s.chars().enumerate() {
            let Some(rows) = glyph(ch) else { continue };
            let ox = x + i as i64 * 4 * scale;
            for (r, bits) in rows.iter().enumerate() {
                for b in 0..3 {
                    if bits >> (2 - b) & 1 == 1 {
                        let px = ox + b * scale;
                        let py = y + r as i64 * scale;
                        self.rect(px, py, px + scale - 1, py + scale - 1, c);
                    }
                }
            }
        }
    }
}

fn y_range(columns: &[Column]) -> (f64, f64) {
    let vals = columns.iter().flat_map(|c| c.values.iter().copied()).filter(|v| v.is_finite());
    let (lo, hi) = vals.fold((0.0f64, 1.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    (lo.floor(), hi.ceil())
}

/// Renders the plot as PNG bytes.
pub fn render(columns: &[Column]) -> CliResult<Vec<u8>> {
    let mut cv = Canvas { img: RgbImage::from_pixel(WIDTH, HEIGHT, WHITE) };
    let (x0, x1) = (LEFT, WIDTH as i64 - RIGHT);
    let (y0, y1) = (TOP, HEIGHT as i64 - BOTTOM);
    let (lo, hi) = y_range(columns);
    let to_y = |v: f64| y1 - ((v - lo) / (hi - lo) * (y1 - y0) as f64).round() as i64;

    let ticks = 5;
    for t in 0..=ticks {
        let v = lo + (hi - lo) * t as f64 / ticks as f64;
        let y = to_y(v);
        cv.rect(x0, y, x1, y, GRID);
        cv.rect(x0 - 5, y, x0, y, BLACK);
        let label = format!("{}", (v * 100.0).round() / 100.0);
        cv.text(x0 - 10 - Canvas::text_width(&label, 2), y - 5, &label, 2, BLACK);
    }
    cv.rect(x0, y0, x0, y1, BLACK);
    cv.rect(x0, y1, x1, y1, BLACK);

    let n = columns.len().max(1) as i64;
    let step = (x1 - x0) / n;
    for (i, col) in columns.iter().enumerate() {
        let cx = x0 + step / 2 + i as i64 * step;
        cv.rect(cx, y1, cx, y1 + 5, BLACK);
        cv.text(cx - Canvas::text_width(&col.label, 2) / 2, y1 + 12, &col.label, 2, BLACK);
        let finite: Vec<f64> = col.values.iter().copied().filter(|v| v.is_finite()).collect();
        for (j, &v) in finite.iter().enumerate() {
            let jitter = (j as i64 % 7 - 3) * 3;
            cv.disc(cx + jitter, to_y(v), 3, POINT);
        }
        if finite.is_empty() {
            continue;
        }
        let (mean, sd) = ctrobust::metrics::mean_sd(&finite);
        let (top, bot) = (to_y(mean + sd), to_y(mean - sd));
        cv.rect(cx - 1, top, cx + 1, bot, PURPLE);
        cv.rect(cx - 8, top - 1, cx + 8, top + 1, PURPLE);
        cv.rect(cx - 8, bot - 1, cx + 8, bot + 1, PURPLE);
        cv.disc(cx, to_y(mean), 5, PURPLE);
    }

    let mut buf = Cursor::new(Vec::new());
    cv.img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

pub fn write_plot(path: &Path, columns: &[Column]) -> CliResult<()> {
    write_bytes(path, &render(columns)?)
}
