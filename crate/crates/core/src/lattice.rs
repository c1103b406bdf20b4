//! Cubic lattice boxes, the canonical site packing, and the nearest-neighbour
//! averaging stencil shared by the kernel tables, the partition-function
//! engine and the chaos analytics.
//!
//! Sites of a box `center ± radius` (sup-norm) are packed with axis 0
//! contiguous: `index = Σ_i (x_i - center_i + radius) * side^i`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An axis-aligned cube `{x : |x - center|_∞ ≤ radius}` in `Z^d`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BoxSpec", into = "BoxSpec")]
pub struct CubeGrid {
    dim: usize,
    center: Vec<i64>,
    radius: i64,
    side: usize,
    strides: Vec<usize>,
}

impl CubeGrid {
    pub fn new(center: Vec<i64>, radius: i64) -> Result<Self> {
        let dim = center.len();
        if dim == 0 {
            return Err(Error::invalid("lattice dimension must be at least 1"));
        }
        if radius < 0 {
            return Err(Error::invalid(format!("negative box radius {radius}")));
        }
        let side = (2 * radius + 1) as usize;
        let mut strides = Vec::with_capacity(dim);
        let mut s = 1usize;
        for _ in 0..dim {
            strides.push(s);
            s = s
                .checked_mul(side)
                .ok_or_else(|| Error::invalid("lattice box too large to index"))?;
        }
        Ok(Self {
            dim,
            center,
            radius,
            side,
            strides,
        })
    }

    /// Box centred at the origin.
    pub fn centered(dim: usize, radius: i64) -> Result<Self> {
        Self::new(vec![0; dim], radius)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn center(&self) -> &[i64] {
        &self.center
    }

    pub fn radius(&self) -> i64 {
        self.radius
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn len(&self) -> usize {
        self.strides[self.dim - 1] * self.side
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, x: &[i64]) -> bool {
        x.iter()
            .zip(&self.center)
            .all(|(&xi, &ci)| (xi - ci).abs() <= self.radius)
    }

    /// Canonical packed index of `x`, or `None` outside the box.
    pub fn index(&self, x: &[i64]) -> Option<usize> {
        debug_assert_eq!(x.len(), self.dim);
        let mut idx = 0usize;
        for i in 0..self.dim {
            let off = x[i] - self.center[i] + self.radius;
            if off < 0 || off as usize >= self.side {
                return None;
            }
            idx += off as usize * self.strides[i];
        }
        Some(idx)
    }

    /// Index of `x`, which the caller guarantees lies in the box.
    #[inline]
    pub(crate) fn index_unchecked(&self, x: &[i64]) -> usize {
        let mut idx = 0usize;
        for i in 0..self.dim {
            idx += (x[i] - self.center[i] + self.radius) as usize * self.strides[i];
        }
        idx
    }

    pub fn coords(&self, mut idx: usize) -> Vec<i64> {
        let mut x = vec![0; self.dim];
        for i in 0..self.dim {
            let off = idx % self.side;
            idx /= self.side;
            x[i] = off as i64 - self.radius + self.center[i];
        }
        x
    }

    /// All sites in packing order.
    pub fn sites(&self) -> impl Iterator<Item = Vec<i64>> + '_ {
        (0..self.len()).map(move |i| self.coords(i))
    }

    /// Is `other` a sub-box of `self`?
    pub fn covers(&self, other: &CubeGrid) -> bool {
        self.dim == other.dim
            && self
                .center
                .iter()
                .zip(&other.center)
                .all(|(&a, &b)| (a - b).abs() + other.radius <= self.radius)
    }
}

#[derive(Serialize, Deserialize)]
struct BoxSpec {
    center: Vec<i64>,
    radius: i64,
}

impl TryFrom<BoxSpec> for CubeGrid {
    type Error = Error;

    fn try_from(b: BoxSpec) -> Result<Self> {
        CubeGrid::new(b.center, b.radius)
    }
}

impl From<CubeGrid> for BoxSpec {
    fn from(g: CubeGrid) -> Self {
        BoxSpec {
            center: g.center,
            radius: g.radius,
        }
    }
}

/// Per-coordinate L1 "excess" of `y` beyond the cube `center ± half`.
#[inline]
pub(crate) fn excess(y: i64, center: i64, half: i64) -> i64 {
    ((y - center).abs() - half).max(0)
}

/// A space region described row by row: points of a cube box that satisfy a
/// list of L1-distance constraints `Σ_i max(|y_i - c_i| - half, 0) ≤ budget`
/// and, optionally, a Euclidean ball `|y - c|_2 < r`.
#[derive(Clone, Debug)]
pub(crate) struct RowRegion {
    pub cap: CubeGrid,
    pub l1: Vec<L1Constraint>,
    pub ball: Option<(Vec<i64>, f64)>,
}

#[derive(Clone, Debug)]
pub(crate) struct L1Constraint {
    pub center: Vec<i64>,
    pub half: i64,
    pub budget: i64,
}

impl RowRegion {
    #[cfg(test)]
    pub fn cube(cap: CubeGrid) -> Self {
        Self {
            cap,
            l1: Vec::new(),
            ball: None,
        }
    }

    /// Visit each nonempty row segment `(rest, lo, hi)`: coordinates
    /// `rest[1..]` of axes ≥ 1 (with `rest[0]` unused) and the inclusive
    /// axis-0 range `lo..=hi`.
    pub fn for_each_row<F: FnMut(&[i64], i64, i64)>(&self, mut f: F) {
        let d = self.cap.dim();
        let c = self.cap.center();
        let r = self.cap.radius();
        let mut y: Vec<i64> = c.iter().map(|&ci| ci - r).collect();
        loop {
            let mut lo = c[0] - r;
            let mut hi = c[0] + r;
            let mut empty = false;
            for con in &self.l1 {
                let used: i64 = (1..d).map(|i| excess(y[i], con.center[i], con.half)).sum();
                let allow = con.budget - used;
                if allow < 0 {
                    empty = true;
                    break;
                }
                lo = lo.max(con.center[0] - con.half - allow);
                hi = hi.min(con.center[0] + con.half + allow);
            }
            if !empty {
                if let Some((bc, br)) = &self.ball {
                    let rest: f64 = (1..d).map(|i| ((y[i] - bc[i]) as f64).powi(2)).sum();
                    let left = br * br - rest;
                    if left <= 0.0 {
                        empty = true;
                    } else {
                        // strict inequality |y0 - c0| < sqrt(left)
                        let s = left.sqrt();
                        let mut m = s.floor() as i64;
                        if (m as f64) * (m as f64) >= left {
                            m -= 1;
                        }
                        lo = lo.max(bc[0] - m);
                        hi = hi.min(bc[0] + m);
                    }
                }
            }
            if !empty && lo <= hi {
                f(&y, lo, hi);
            }
            // advance axes 1..d
            let mut axis = 1;
            loop {
                if axis >= d {
                    return;
                }
                y[axis] += 1;
                if y[axis] <= c[axis] + r {
                    break;
                }
                y[axis] = c[axis] - r;
                axis += 1;
            }
        }
    }

    #[cfg(test)]
    pub fn count(&self) -> usize {
        let mut n = 0usize;
        self.for_each_row(|_, lo, hi| n += (hi - lo + 1) as usize);
        n
    }
}

/// `dst(y) = (1/2d) Σ_{|e|=1} src(y + e)` for every `y` in `region`.
///
/// `src` and `dst` share the storage grid `grid`; every neighbour of the
/// region must lie inside `grid`.
pub(crate) fn average_neighbors(grid: &CubeGrid, src: &[f64], dst: &mut [f64], region: &RowRegion) {
    let d = grid.dim();
    let inv = 1.0 / (2 * d) as f64;
    let strides = grid.strides();
    let mut coord = vec![0i64; d];
    region.for_each_row(|rest, lo, hi| {
        coord[1..].copy_from_slice(&rest[1..]);
        coord[0] = lo;
        let base = grid.index_unchecked(&coord);
        let len = (hi - lo + 1) as usize;
        let out = &mut dst[base..base + len];
        let left = &src[base - 1..base - 1 + len];
        let right = &src[base + 1..base + 1 + len];
        match strides.len() {
            3 => {
                let (s1, s2) = (strides[1], strides[2]);
                let a = &src[base - s1..base - s1 + len];
                let b = &src[base + s1..base + s1 + len];
                let c = &src[base - s2..base - s2 + len];
                let e = &src[base + s2..base + s2 + len];
                for i in 0..len {
                    out[i] = (((left[i] + right[i]) + (a[i] + b[i])) + (c[i] + e[i])) * inv;
                }
            }
            _ => {
                for ((o, &a), &b) in out.iter_mut().zip(left).zip(right) {
                    *o = a + b;
                }
                for &st in &strides[1..] {
                    let up = &src[base + st..base + st + len];
                    let down = &src[base - st..base - st + len];
                    for ((o, &a), &b) in out.iter_mut().zip(up).zip(down) {
                        *o += a + b;
                    }
                }
                for o in out.iter_mut() {
                    *o *= inv;
                }
            }
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn packing_roundtrip() {
        let g = CubeGrid::new(vec![2, -1, 5], 3).unwrap();
        for i in 0..g.len() {
            let x = g.coords(i);
            assert_eq!(g.index(&x), Some(i));
        }
        assert_eq!(g.index(&[6, 0, 0]), None);
        assert_eq!(g.len(), 343);
    }

    #[test]
    fn row_region_counts_l1_ball() {
        let cap = CubeGrid::centered(3, 5).unwrap();
        let mut reg = RowRegion::cube(cap);
        reg.l1.push(L1Constraint {
            center: vec![0, 0, 0],
            half: 0,
            budget: 2,
        });
        // |y|_1 <= 2 in Z^3: 1 + 6 + 18 = 25
        assert_eq!(reg.count(), 25);
    }

    #[test]
    fn row_region_euclidean_ball_is_strict() {
        let cap = CubeGrid::centered(3, 3).unwrap();
        let mut reg = RowRegion::cube(cap);
        reg.ball = Some((vec![0, 0, 0], 1.0));
        assert_eq!(reg.count(), 1);
        reg.ball = Some((vec![0, 0, 0], 1.2));
        assert_eq!(reg.count(), 7);
        reg.ball = Some((vec![0, 0, 0], 1.5));
        assert_eq!(reg.count(), 19);
    }

    #[test]
    fn averaging_matches_naive() {
        let g = CubeGrid::centered(2, 4).unwrap();
        let src: Vec<f64> = (0..g.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut dst = vec![0.0; g.len()];
        let inner = CubeGrid::centered(2, 3).unwrap();
        average_neighbors(&g, &src, &mut dst, &RowRegion::cube(inner.clone()));
        for x in inner.sites() {
            let mut s = 0.0;
            for (a, b) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                s += src[g.index(&[x[0] + a, x[1] + b]).unwrap()];
            }
            let got = dst[g.index(&x).unwrap()];
            assert!((got - s / 4.0).abs() < 1e-15);
        }
    }
}
