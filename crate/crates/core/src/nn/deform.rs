//! Deformable sampling for a single-group, stride-1, same-padded kernel.
//!
//! Offsets are laid out `[2 * taps, H, W]` with `(dy, dx)` for tap `t` in
//! channels `2t` and `2t + 1`. Taps are ordered row-major over the kernel.

use crate::tensor::Real;

/// Bilinear footprint of one fractional position.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Footprint<T> {
    /// Flat indices of (y0,x0), (y0,x1), (y1,x0), (y1,x1); `None` when outside.
    idx: [Option<usize>; 4],
    fy: T,
    fx: T,
}

impl<T: Real> Footprint<T> {
    #[inline]
    pub fn new(py: T, px: T, h: usize, w: usize) -> Self {
        let y0 = py.floor();
        let x0 = px.floor();
        let (fy, fx) = (py - y0, px - x0);
        let (y0, x0) = (y0.as_f64() as isize, x0.as_f64() as isize);
        let at = |y: isize, x: isize| {
            (y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w).then(|| y as usize * w + x as usize)
        };
        Self { idx: [at(y0, x0), at(y0, x0 + 1), at(y0 + 1, x0), at(y0 + 1, x0 + 1)], fy, fx }
    }

    #[inline]
    fn weights(&self) -> [T; 4] {
        let (one, fy, fx) = (T::one(), self.fy, self.fx);
        [(one - fy) * (one - fx), (one - fy) * fx, fy * (one - fx), fy * fx]
    }

    #[inline]
    fn corners(&self, plane: &[T]) -> [T; 4] {
        self.idx.map(|i| i.map_or(T::zero(), |i| plane[i]))
    }

    #[inline]
    pub fn sample(&self, plane: &[T]) -> T {
        let v = self.corners(plane);
        let wt = self.weights();
        wt[0] * v[0] + wt[1] * v[1] + wt[2] * v[2] + wt[3] * v[3]
    }

    /// Partial derivatives of [`Footprint::sample`] w.r.t. `(py, px)`.
    /// At lattice points this is the one-sided derivative from above.
    #[inline]
    fn slope(&self, plane: &[T]) -> (T, T) {
        let v = self.corners(plane);
        let one = T::one();
        let dy = (one - self.fx) * (v[2] - v[0]) + self.fx * (v[3] - v[1]);
        let dx = (one - self.fy) * (v[1] - v[0]) + self.fy * (v[3] - v[2]);
        (dy, dx)
    }

    #[inline]
    fn scatter(&self, plane: &mut [T], g: T) {
        let wt = self.weights();
        for (i, w) in self.idx.iter().zip(wt) {
            if let Some(i) = i {
                plane[*i] += g * w;
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct DeformGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
}

impl DeformGeom {
    pub fn taps(&self) -> usize {
        self.kh * self.kw
    }

    pub fn hw(&self) -> usize {
        self.h * self.w
    }

    fn footprints<'a, T: Real>(&'a self, offsets: &'a [T], tap: usize) -> impl Iterator<Item = Footprint<T>> + 'a {
        let (ki, kj) = (tap / self.kw, tap % self.kw);
        let hw = self.hw();
        let dy = &offsets[2 * tap * hw..(2 * tap + 1) * hw];
        let dx = &offsets[(2 * tap + 1) * hw..(2 * tap + 2) * hw];
        let ry = ki as isize - (self.kh / 2) as isize;
        let rx = kj as isize - (self.kw / 2) as isize;
        (0..hw).map(move |p| {
            let (y, x) = ((p / self.w) as isize, (p % self.w) as isize);
            let py = T::of((y + ry) as f64) + dy[p];
            let px = T::of((x + rx) as f64) + dx[p];
            Footprint::new(py, px, self.h, self.w)
        })
    }
}

/// Column matrix `[c * taps, h * w]` of deformed samples.
pub(crate) fn sample_cols<T: Real>(g: &DeformGeom, x: &[T], offsets: &[T]) -> Vec<T> {
    let (taps, hw) = (g.taps(), g.hw());
    let mut cols = vec![T::zero(); g.c * taps * hw];
    for tap in 0..taps {
        for (p, fp) in g.footprints(offsets, tap).enumerate() {
            for c in 0..g.c {
                cols[(c * taps + tap) * hw + p] = fp.sample(&x[c * hw..(c + 1) * hw]);
            }
        }
    }
    cols
}

/// Pulls `dcols` back to the input and to the offsets.
pub(crate) fn backward_cols<T: Real>(
    g: &DeformGeom,
    x: &[T],
    offsets: &[T],
    dcols: &[T],
    need_x: bool,
    need_off: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let (taps, hw) = (g.taps(), g.hw());
    let mut dx = need_x.then(|| vec![T::zero(); g.c * hw]);
    let mut doff = need_off.then(|| vec![T::zero(); 2 * taps * hw]);
    for tap in 0..taps {
        for (p, fp) in g.footprints(offsets, tap).enumerate() {
            let (mut gy, mut gx) = (T::zero(), T::zero());
            for c in 0..g.c {
                let gcol = dcols[(c * taps + tap) * hw + p];
                if let Some(dx) = dx.as_mut() {
                    fp.scatter(&mut dx[c * hw..(c + 1) * hw], gcol);
                }
                if need_off {
                    let (sy, sx) = fp.slope(&x[c * hw..(c + 1) * hw]);
                    gy += gcol * sy;
                    gx += gcol * sx;
                }
            }
            if let Some(doff) = doff.as_mut() {
                doff[2 * tap * hw + p] = gy;
                doff[(2 * tap + 1) * hw + p] = gx;
            }
        }
    }
    (dx, doff)
}
