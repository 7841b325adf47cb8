//! SVG overlay of tracklet lines, intersection points, and the vanishing
//! region, in the style of a per-video diagnostic plot.

use std::fmt::Write as _;

use crate::geometry::{Line2, Point2};
use crate::vanishing::{IntersectionSet, VanishingRegion};

/// Clips a normalized line to the image rectangle, returning the two
/// border crossings when the line is visible.
fn clip_line(line: &Line2<f64>, w: f64, h: f64) -> Option<(Point2<f64>, Point2<f64>)> {
    let mut hits: Vec<Point2<f64>> = Vec::new();
    let tol = 1e-9;
    // x = 0 and x = w
    if line.b.abs() > tol {
        for x in [0.0, w] {
            let y = -(line.a * x + line.c) / line.b;
            if (-tol..=h + tol).contains(&y) {
                hits.push(Point2::new(x, y));
            }
        }
    }
    // y = 0 and y = h
    if line.a.abs() > tol {
        for y in [0.0, h] {
            let x = -(line.b * y + line.c) / line.a;
            if (-tol..=w + tol).contains(&x) {
                hits.push(Point2::new(x, y));
            }
        }
    }
    hits.dedup_by(|a, b| a.dist(b) < 1e-6);
    if hits.len() >= 2 {
        Some((hits[0], hits[1]))
    } else {
        None
    }
}

/// Renders the overlay. `lines` are the fitted tracklet lines.
pub fn render_overlay(
    image_w: f64,
    image_h: f64,
    lines: &[Line2<f64>],
    intersections: &IntersectionSet<f64>,
    region: Option<&VanishingRegion<f64>>,
) -> String {
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{image_w}" height="{image_h}" viewBox="0 0 {image_w} {image_h}">"#
    );
    let _ = writeln!(
        svg,
        r##"<rect width="{image_w}" height="{image_h}" fill="#101418"/>"##
    );
    for line in lines {
        if let Some((p, q)) = clip_line(line, image_w, image_h) {
            let _ = writeln!(
                svg,
                r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#4f8f4f" stroke-width="1.5" opacity="0.7"/>"##,
                p.x, p.y, q.x, q.y
            );
        }
    }
    for p in &intersections.points {
        let _ = writeln!(
            svg,
            r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#4f7fdf" opacity="0.8"/>"##,
            p.x, p.y
        );
    }
    if let Some(region) = region {
        let r = region.radius.max(5.0);
        let _ = writeln!(
            svg,
            r##"<circle cx="{:.2}" cy="{:.2}" r="{:.2}" fill="#df4fb0" opacity="0.35"/>"##,
            region.centroid.x, region.centroid.y, r
        );
        let _ = writeln!(
            svg,
            r##"<circle cx="{:.2}" cy="{:.2}" r="4" fill="#df4fb0"/>"##,
            region.centroid.x, region.centroid.y
        );
    }
    svg.push_str("</svg>\n");
    svg
}
