//! Planar geometry in `f64`: rays, segments, oriented rectangles, polylines.

pub type P2 = [f64; 2];

pub fn sub(a: P2, b: P2) -> P2 {
    [a[0] - b[0], a[1] - b[1]]
}

pub fn cross(a: P2, b: P2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

pub fn dot(a: P2, b: P2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub fn norm(a: P2) -> f64 {
    a[0].hypot(a[1])
}

/// Nearest `t ≥ 0` with `o + t·dir` on segment `ab`, if any.
pub fn ray_segment(o: P2, dir: P2, a: P2, b: P2) -> Option<f64> {
    let e = sub(b, a);
    let den = cross(dir, e);
    if den.abs() < 1e-15 {
        return None;
    }
    let ao = sub(a, o);
    let t = cross(ao, e) / den;
    let u = cross(ao, dir) / den;
    (t >= 0.0 && (0.0..=1.0).contains(&u)).then_some(t)
}

/// Oriented rectangle: center, heading, half length (along heading), half width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub c: P2,
    pub theta: f64,
    pub hl: f64,
    pub hw: f64,
}

impl Rect {
    pub fn axes(&self) -> (P2, P2) {
        let (s, c) = self.theta.sin_cos();
        ([c, s], [-s, c])
    }

    /// Corners counter-clockwise starting front-left.
    pub fn corners(&self) -> [P2; 4] {
        let (u, v) = self.axes();
        let p = |a: f64, b: f64| [self.c[0] + a * u[0] + b * v[0], self.c[1] + a * u[1] + b * v[1]];
        [p(self.hl, self.hw), p(-self.hl, self.hw), p(-self.hl, -self.hw), p(self.hl, -self.hw)]
    }

    pub fn edges(&self) -> [(P2, P2); 4] {
        let c = self.corners();
        [(c[0], c[1]), (c[1], c[2]), (c[2], c[3]), (c[3], c[0])]
    }

    /// Slab intersection; a ray starting inside reports its exit distance.
    pub fn ray_hit(&self, o: P2, dir: P2) -> Option<f64> {
        let (u, v) = self.axes();
        let rel = sub(o, self.c);
        let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
        for (axis, half) in [(u, self.hl), (v, self.hw)] {
            let p = dot(rel, axis);
            let d = dot(dir, axis);
            if d.abs() < 1e-15 {
                if p.abs() > half {
                    return None;
                }
                continue;
            }
            let (mut a, mut b) = ((-half - p) / d, (half - p) / d);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
        }
        if t0 > t1 || t1 < 0.0 {
            return None;
        }
        Some(if t0 >= 0.0 { t0 } else { t1 })
    }

    /// Separating-axis overlap test.
    pub fn overlaps(&self, other: &Rect) -> bool {
        let (a, b) = (self.corners(), other.corners());
        let (u1, v1) = self.axes();
        let (u2, v2) = other.axes();
        for axis in [u1, v1, u2, v2] {
            let span = |pts: &[P2; 4]| {
                pts.iter().map(|&p| dot(p, axis)).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                    (lo.min(x), hi.max(x))
                })
            };
            let (alo, ahi) = span(&a);
            let (blo, bhi) = span(&b);
            if ahi < blo || bhi < alo {
                return false;
            }
        }
        true
    }
}

/// Projection of a point onto a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc length of the foot point.
    pub s: f64,
    /// Signed offset, positive to the left of the direction of travel.
    pub lateral: f64,
    pub tangent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pts: Vec<P2>,
    cum: Vec<f64>,
}

impl Polyline {
    pub fn new(pts: Vec<P2>) -> Self {
        let mut cum = Vec::with_capacity(pts.len());
        let mut acc = 0.0;
        for (i, p) in pts.iter().enumerate() {
            if i > 0 {
                acc += norm(sub(*p, pts[i - 1]));
            }
            cum.push(acc);
        }
        Self { pts, cum }
    }

    pub fn points(&self) -> &[P2] {
        &self.pts
    }

    pub fn length(&self) -> f64 {
        *self.cum.last().unwrap_or(&0.0)
    }

    pub fn segments(&self) -> impl Iterator<Item = (P2, P2)> + '_ {
        self.pts.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn project(&self, p: P2) -> Projection {
        let mut best = (f64::INFINITY, Projection { s: 0.0, lateral: 0.0, tangent: 0.0 });
        for (i, (a, b)) in self.segments().enumerate() {
            let e = sub(b, a);
            let len2 = dot(e, e);
            if len2 == 0.0 {
                continue;
            }
            let u = (dot(sub(p, a), e) / len2).clamp(0.0, 1.0);
            let foot = [a[0] + u * e[0], a[1] + u * e[1]];
            let d = norm(sub(p, foot));
            if d < best.0 {
                let len = len2.sqrt();
                let side = cross(e, sub(p, a)).signum();
                best = (
                    d,
                    Projection { s: self.cum[i] + u * len, lateral: side * d, tangent: e[1].atan2(e[0]) },
                );
            }
        }
        best.1
    }

    /// Point and tangent heading at arc length `s`, clamped to the ends.
    pub fn at(&self, s: f64) -> (P2, f64) {
        let n = self.pts.len();
        let s = s.clamp(0.0, self.length());
        let i = match self.cum.partition_point(|&c| c <= s) {
            0 => 0,
            k => (k - 1).min(n - 2),
        };
        let (a, b) = (self.pts[i], self.pts[i + 1]);
        let e = sub(b, a);
        let len = norm(e);
        let u = if len > 0.0 { (s - self.cum[i]) / len } else { 0.0 };
        ([a[0] + u * e[0], a[1] + u * e[1]], e[1].atan2(e[0]))
    }

    /// Polyline offset along per-vertex normals (positive = left).
    pub fn offset(&self, d: f64) -> Polyline {
        let n = self.pts.len();
        let pts = (0..n)
            .map(|i| {
                let a = self.pts[i.saturating_sub(1)];
                let b = self.pts[(i + 1).min(n - 1)];
                let t = sub(b, a);
                let l = norm(t);
                let nrm = [-t[1] / l, t[0] / l];
                [self.pts[i][0] + d * nrm[0], self.pts[i][1] + d * nrm[1]]
            })
            .collect();
        Polyline::new(pts)
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let mut a = a % std::f64::consts::TAU;
    if a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    } else if a < -std::f64::consts::PI {
        a += std::f64::consts::TAU;
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ray_hits_square_face() {
        let r = Rect { c: [10.0, 0.0], theta: 0.0, hl: 0.5, hw: 0.5 };
        assert!((r.ray_hit([0.0, 0.0], [1.0, 0.0]).unwrap() - 9.5).abs() < 1e-12);
        assert!(r.ray_hit([0.0, 0.0], [-1.0, 0.0]).is_none());
        assert!((r.ray_hit([10.0, 0.0], [1.0, 0.0]).unwrap() - 0.5).abs() < 1e-12);
        let t = ray_segment([0.0, 0.0], [1.0, 0.0], [9.5, -0.5], [9.5, 0.5]).unwrap();
        assert!((t - 9.5).abs() < 1e-12);
    }

    #[test]
    fn sat_overlap() {
        let a = Rect { c: [0.0, 0.0], theta: 0.0, hl: 1.0, hw: 1.0 };
        let b = Rect { c: [1.9, 0.0], theta: 0.3, hl: 1.0, hw: 0.5 };
        let c = Rect { c: [3.5, 0.0], theta: 0.0, hl: 1.0, hw: 0.5 };
        assert!(a.overlaps(&b));
        assert!(!a.overlaps(&c));
    }

    #[test]
    fn polyline_projection() {
        let p = Polyline::new(vec![[0.0, 0.0], [10.0, 0.0], [10.0, 10.0]]);
        let q = p.project([5.0, 2.0]);
        assert!((q.s - 5.0).abs() < 1e-12 && (q.lateral - 2.0).abs() < 1e-12);
        let q = p.project([12.0, 5.0]);
        assert!((q.s - 15.0).abs() < 1e-12 && (q.lateral + 2.0).abs() < 1e-12);
        let (pt, th) = p.at(12.0);
        assert_eq!(pt, [10.0, 2.0]);
        assert!((th - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert_eq!(p.length(), 20.0);
    }
}
