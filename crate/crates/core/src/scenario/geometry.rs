use serde::{Deserialize, Serialize};

use crate::error::{EmpError, Result};

/// Position and heading `[x, y, cos α, sin α]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub cos: f64,
    pub sin: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, alpha: f64) -> Self {
        Self {
            x,
            y,
            cos: alpha.cos(),
            sin: alpha.sin(),
        }
    }

    /// Pose from a heading direction; a zero direction gives α = 0.
    pub fn from_direction(position: [f64; 2], dir: [f64; 2]) -> Self {
        let n = dir[0].hypot(dir[1]);
        let (cos, sin) = if n > 0.0 {
            (dir[0] / n, dir[1] / n)
        } else {
            (1.0, 0.0)
        };
        Self {
            x: position[0],
            y: position[1],
            cos,
            sin,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.sin.atan2(self.cos)
    }

    pub fn to_row(self) -> [f64; 4] {
        [self.x, self.y, self.cos, self.sin]
    }

    /// World point expressed in this pose's frame.
    pub fn to_local(&self, p: [f64; 2]) -> [f64; 2] {
        let dx = p[0] - self.x;
        let dy = p[1] - self.y;
        [dx * self.cos + dy * self.sin, dy * self.cos - dx * self.sin]
    }

    /// Local point mapped back to the world frame.
    pub fn to_world(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.x + p[0] * self.cos - p[1] * self.sin,
            self.y + p[0] * self.sin + p[1] * self.cos,
        ]
    }

    pub fn distance(&self, other: &Pose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// A rotation followed by a translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub cos: f64,
    pub sin: f64,
    pub tx: f64,
    pub ty: f64,
}

impl RigidTransform {
    pub fn new(angle: f64, tx: f64, ty: f64) -> Self {
        Self {
            cos: angle.cos(),
            sin: angle.sin(),
            tx,
            ty,
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            cos: 1.0,
            sin: 0.0,
            tx,
            ty,
        }
    }

    pub fn rotate(&self, v: [f64; 2]) -> [f64; 2] {
        [v[0] * self.cos - v[1] * self.sin, v[0] * self.sin + v[1] * self.cos]
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let r = self.rotate(p);
        [r[0] + self.tx, r[1] + self.ty]
    }

    pub fn apply_pose(&self, pose: &Pose) -> Pose {
        let [x, y] = self.apply([pose.x, pose.y]);
        let [cos, sin] = self.rotate([pose.cos, pose.sin]);
        Pose { x, y, cos, sin }
    }
}

pub fn velocity_magnitude(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

/// Arc-length uniform resampling to `n` points; endpoints are copied exactly.
pub fn resample_polyline(points: &[[f64; 2]], n: usize) -> Result<Vec<[f64; 2]>> {
    if points.len() < 2 || n < 2 {
        return Err(EmpError::DegeneratePolyline(format!(
            "need at least two input and output points (got {} → {n})",
            points.len()
        )));
    }
    let mut cum = Vec::with_capacity(points.len());
    cum.push(0.0);
    for w in points.windows(2) {
        let last = *cum.last().unwrap();
        cum.push(last + (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]));
    }
    let total = *cum.last().unwrap();
    if !(total > 0.0) {
        return Err(EmpError::DegeneratePolyline("zero-length polyline".into()));
    }
    let mut out = Vec::with_capacity(n);
    out.push(points[0]);
    let mut seg = 0;
    for i in 1..n - 1 {
        let s = total * i as f64 / (n - 1) as f64;
        while seg + 2 < cum.len() && cum[seg + 1] < s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let t = if len > 0.0 { (s - cum[seg]) / len } else { 0.0 };
        let (a, b) = (points[seg], points[seg + 1]);
        out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
    }
    out.push(points[points.len() - 1]);
    Ok(out)
}
