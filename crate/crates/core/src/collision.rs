//! Oriented-rectangle overlap test via the separating-axis theorem.

/// Rectangle described by its center, half-extents, and heading [rad].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedRect {
    pub cx: f64,
    pub cy: f64,
    pub half_len: f64,
    pub half_wid: f64,
    pub heading: f64,
}

impl OrientedRect {
    pub fn new(cx: f64, cy: f64, half_len: f64, half_wid: f64, heading: f64) -> Self {
        Self { cx, cy, half_len, half_wid, heading }
    }

    /// Corner coordinates in counter-clockwise order.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.heading.sin_cos();
        let ex = [c * self.half_len, s * self.half_len];
        let ey = [-s * self.half_wid, c * self.half_wid];
        let mut out = [[0.0; 2]; 4];
        for (i, (sx, sy)) in [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)]
            .iter()
            .enumerate()
        {
            out[i] = [
                self.cx + sx * ex[0] + sy * ey[0],
                self.cy + sx * ex[1] + sy * ey[1],
            ];
        }
        out
    }

    fn axes(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.heading.sin_cos();
        [[c, s], [-s, c]]
    }
}

/// True when the rectangles overlap; touching boundaries count as contact.
pub fn rects_collide(a: &OrientedRect, b: &OrientedRect) -> bool {
    let ca = a.corners();
    let cb = b.corners();
    for axis in a.axes().iter().chain(b.axes().iter()) {
        let (a_lo, a_hi) = project(&ca, axis);
        let (b_lo, b_hi) = project(&cb, axis);
        if a_hi < b_lo || b_hi < a_lo {
            return false;
        }
    }
    true
}

fn project(corners: &[[f64; 2]; 4], axis: &[f64; 2]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for c in corners {
        let d = c[0] * axis[0] + c[1] * axis[1];
        lo = lo.min(d);
        hi = hi.max(d);
    }
    (lo, hi)
}
