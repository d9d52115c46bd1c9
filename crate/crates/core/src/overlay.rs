//! Diagnostic drawing of a detection on top of its image.

use image::{Rgb, RgbImage};

use crate::geometry::{Homography, Point};
use crate::image::GrayImage;
use crate::pipeline::DetectionResult;

const MODULE: Rgb<u8> = Rgb([255, 64, 32]);
const LATTICE: Rgb<u8> = Rgb([48, 200, 64]);
const INLIER: Rgb<u8> = Rgb([40, 120, 255]);
const OUTLIER: Rgb<u8> = Rgb([255, 0, 255]);

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

/// Bresenham line between two points, clipped to the canvas.
pub fn draw_line(img: &mut RgbImage, a: Point, b: Point, c: Rgb<u8>) {
    if !(a.x.is_finite() && a.y.is_finite() && b.x.is_finite() && b.y.is_finite()) {
        return;
    }
    let limit = 4.0 * (img.width() + img.height()) as f64;
    if a.x.abs().max(a.y.abs()).max(b.x.abs()).max(b.y.abs()) > limit {
        return;
    }
    let (mut x0, mut y0) = (a.x.round() as i64, a.y.round() as i64);
    let (x1, y1) = (b.x.round() as i64, b.y.round() as i64);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        put(img, x0, y0, c);
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

fn draw_cross(img: &mut RgbImage, p: Point, r: f64, c: Rgb<u8>) {
    draw_line(img, Point::new(p.x - r, p.y), Point::new(p.x + r, p.y), c);
    draw_line(img, Point::new(p.x, p.y - r), Point::new(p.x, p.y + r), c);
}

fn draw_lattice(img: &mut RgbImage, h: &Homography, cols: usize, rows: usize) {
    let seg = |img: &mut RgbImage, a: Point, b: Point| {
        if let (Ok(p), Ok(q)) = (h.project(a), h.project(b)) {
            draw_line(img, p, q, LATTICE);
        }
    };
    for i in 0..=cols {
        for j in 0..rows {
            seg(img, Point::new(i as f64, j as f64), Point::new(i as f64, j as f64 + 1.0));
        }
    }
    for j in 0..=rows {
        for i in 0..cols {
            seg(img, Point::new(i as f64, j as f64), Point::new(i as f64 + 1.0, j as f64));
        }
    }
}

/// The image with the refined lattice, module outline and detected
/// crossings (inliers and outliers in different colors) drawn on top.
pub fn render_overlay(img: &GrayImage, r: &DetectionResult) -> RgbImage {
    let gray = img.to_luma8();
    let mut out = RgbImage::from_fn(gray.width(), gray.height(), |x, y| {
        let v = gray.get_pixel(x, y)[0];
        Rgb([v, v, v])
    });
    draw_lattice(&mut out, &r.h, r.cols, r.rows);
    for k in 0..4 {
        draw_line(&mut out, r.corners[k], r.corners[(k + 1) % 4], MODULE);
    }
    let size = 0.01 * img.width().max(img.height()) as f64;
    for e in &r.crossings.entries {
        if let Some(p) = e.image {
            draw_cross(&mut out, p, size.max(2.0), if e.inlier { INLIER } else { OUTLIER });
        }
    }
    out
}
