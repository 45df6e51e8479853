use super::manifest::Polygon;
use crate::error::{Error, Result};

/// Axis-aligned rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }
}

fn vertices(p: &Polygon) -> &[[f64; 2]] {
    match (p.first(), p.last()) {
        (Some(a), Some(b)) if p.len() > 1 && a == b => &p[..p.len() - 1],
        _ => p,
    }
}

pub fn signed_area(p: &Polygon) -> f64 {
    let v = vertices(p);
    let n = v.len();
    (0..n).map(|i| v[i][0] * v[(i + 1) % n][1] - v[(i + 1) % n][0] * v[i][1]).sum::<f64>() / 2.0
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

fn segments_touch(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let (d1, d2, d3, d4) = (orient(c, d, a), orient(c, d, b), orient(a, b, c), orient(a, b, d));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

/// At least three vertices, nonzero area and no two non-adjacent edges
/// touching.
pub fn validate_polygon(p: &Polygon) -> Result<()> {
    let v = vertices(p);
    let n = v.len();
    if n < 3 {
        return Err(Error::InvalidPolygon(format!("{n} vertices, need at least 3")));
    }
    if v.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::InvalidPolygon("non-finite coordinate".into()));
    }
    if signed_area(p).abs() <= 0.0 {
        return Err(Error::InvalidPolygon("zero area".into()));
    }
    for i in 0..n {
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if !adjacent && segments_touch(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]) {
                return Err(Error::InvalidPolygon(format!("edges {i} and {j} intersect")));
            }
        }
    }
    Ok(())
}

fn edges(polys: &[Polygon]) -> Vec<([f64; 2], [f64; 2])> {
    let mut out = Vec::new();
    for p in polys {
        let v = vertices(p);
        for i in 0..v.len() {
            out.push((v[i], v[(i + 1) % v.len()]));
        }
    }
    out
}

/// Exact area of `rect ∩ ⋃ polys` by vertical slab decomposition: within a
/// slab free of vertices, edge crossings and boundary crossings the covered length is linear in
/// x, so its midpoint value times the slab width is exact.
pub fn union_area_in_rect(polys: &[Polygon], rect: Rect) -> f64 {
    if polys.is_empty() || rect.area() <= 0.0 {
        return 0.0;
    }
    let es = edges(polys);
    let mut xs = vec![rect.x0, rect.x1];
    xs.extend(es.iter().flat_map(|(a, b)| [a[0], b[0]]));
    // crossings with the rectangle's horizontal sides also bend the covered length
    for &(a, b) in &es {
        for y in [rect.y0, rect.y1] {
            if (a[1] - y) * (b[1] - y) < 0.0 {
                xs.push(a[0] + (y - a[1]) / (b[1] - a[1]) * (b[0] - a[0]));
            }
        }
    }
    for (i, &(a, b)) in es.iter().enumerate() {
        for &(c, d) in &es[i + 1..] {
            let den = (b[0] - a[0]) * (d[1] - c[1]) - (b[1] - a[1]) * (d[0] - c[0]);
            if den == 0.0 {
                continue;
            }
            let t = ((c[0] - a[0]) * (d[1] - c[1]) - (c[1] - a[1]) * (d[0] - c[0])) / den;
            let u = ((c[0] - a[0]) * (b[1] - a[1]) - (c[1] - a[1]) * (b[0] - a[0])) / den;
            if (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u) {
                xs.push(a[0] + t * (b[0] - a[0]));
            }
        }
    }
    xs.retain(|&x| x >= rect.x0 && x <= rect.x1);
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let mut area = 0.0;
    for w in xs.windows(2) {
        let xm = 0.5 * (w[0] + w[1]);
        area += (w[1] - w[0]) * covered_length(polys, xm, rect.y0, rect.y1);
    }
    area
}

/// Length of the vertical line `x = xm` inside the union, clipped to `[y0, y1]`.
fn covered_length(polys: &[Polygon], xm: f64, y0: f64, y1: f64) -> f64 {
    let mut intervals = Vec::new();
    for p in polys {
        let v = vertices(p);
        let mut ys: Vec<f64> = (0..v.len())
            .filter_map(|i| {
                let (a, b) = (v[i], v[(i + 1) % v.len()]);
                ((a[0] <= xm) != (b[0] <= xm)).then(|| a[1] + (xm - a[0]) / (b[0] - a[0]) * (b[1] - a[1]))
            })
            .collect();
        ys.sort_by(f64::total_cmp);
        for pair in ys.chunks_exact(2) {
            let (lo, hi) = (pair[0].max(y0), pair[1].min(y1));
            if hi > lo {
                intervals.push((lo, hi));
            }
        }
    }
    intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut total = 0.0;
    let mut cur: Option<(f64, f64)> = None;
    for (lo, hi) in intervals {
        match cur {
            Some((cl, ch)) if lo <= ch => cur = Some((cl, ch.max(hi))),
            Some((cl, ch)) => {
                total += ch - cl;
                cur = Some((lo, hi));
            }
            None => cur = Some((lo, hi)),
        }
    }
    if let Some((cl, ch)) = cur {
        total += ch - cl;
    }
    total
}
