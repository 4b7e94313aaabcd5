//! Static trade-off scatter plot: privacy metric on the horizontal axis,
//! utility accuracy on the vertical axis, both spanning [0, 1]. Marker size
//! encodes the downsampling ratio or the ensemble size; the chance level is a
//! vertical reference line. Pure pixel drawing, no text.

use std::path::Path;

use anonyvid::eval::TradeoffRecord;
use image::{Rgb, RgbImage};

pub const PLOT_SIZE: u32 = 640;
const MARGIN: u32 = 40;

const AXIS: Rgb<u8> = Rgb([30, 30, 30]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);
const CHANCE: Rgb<u8> = Rgb([200, 60, 60]);

fn method_color(method: &str) -> Rgb<u8> {
    match method {
        "raw" => Rgb([120, 120, 120]),
        "downsample" => Rgb([60, 110, 200]),
        "adversarial" => Rgb([40, 160, 90]),
        _ => Rgb([170, 100, 180]),
    }
}

/// Map a value in [0, 1] to pixel coordinates inside the plot frame.
fn to_px(x: f64, y: f64) -> (i64, i64) {
    let span = (PLOT_SIZE - 2 * MARGIN) as f64;
    let px = MARGIN as f64 + x.clamp(0.0, 1.0) * span;
    let py = (PLOT_SIZE - MARGIN) as f64 - y.clamp(0.0, 1.0) * span;
    (px.round() as i64, py.round() as i64)
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn disc(img: &mut RgbImage, cx: i64, cy: i64, r: i64, c: Rgb<u8>) {
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                put(img, cx + dx, cy + dy, c);
            }
        }
    }
}

fn marker_radius(rec: &TradeoffRecord) -> i64 {
    // larger s or larger M draws a bigger marker
    let scale = rec.s.or(rec.m).unwrap_or(1) as f64;
    (3.0 + 2.0 * scale.sqrt()).round() as i64
}

/// Render the sweep to a PNG file. The chance reference line is the mean
/// chance level of the records (they agree within a sweep).
pub fn render_tradeoff(records: &[TradeoffRecord], path: &Path) -> Result<(), String> {
    let mut img = RgbImage::from_pixel(PLOT_SIZE, PLOT_SIZE, Rgb([255, 255, 255]));

    // grid every 0.1
    for i in 0..=10 {
        let v = i as f64 / 10.0;
        let (gx, _) = to_px(v, 0.0);
        let (_, gy) = to_px(0.0, v);
        for t in MARGIN..=(PLOT_SIZE - MARGIN) {
            put(&mut img, gx, t as i64, GRID);
            put(&mut img, t as i64, gy, GRID);
        }
    }
    // frame
    let (x0, y0) = to_px(0.0, 0.0);
    let (x1, y1) = to_px(1.0, 1.0);
    for x in x1.min(x0)..=x0.max(x1) {
        put(&mut img, x, y0, AXIS);
        put(&mut img, x, y1, AXIS);
    }
    for y in y1.min(y0)..=y0.max(y1) {
        put(&mut img, x0, y, AXIS);
        put(&mut img, x1, y, AXIS);
    }

    if !records.is_empty() {
        let chance =
            records.iter().map(|r| r.chance_level).sum::<f64>() / records.len() as f64;
        let (cx, _) = to_px(chance, 0.0);
        for y in y1..=y0 {
            put(&mut img, cx, y, CHANCE);
        }
    }

    for rec in records {
        let (px, py) = to_px(rec.privacy_metric, rec.a_t);
        disc(&mut img, px, py, marker_radius(rec), method_color(&rec.method));
    }

    img.save(path)
        .map_err(|e| format!("cannot write plot {}: {e}", path.display()))
}
