//! Directional running-max scans over feature planes.
//!
//! `top` takes the suffix max up each column (scanning from the last row),
//! `bottom` the prefix max down each column, `left` the suffix max along each
//! row (scanning from the last column) and `right` the prefix max.

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Top,
    Bottom,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Top, Direction::Bottom, Direction::Left, Direction::Right];

    pub fn is_vertical(self) -> bool {
        matches!(self, Direction::Top | Direction::Bottom)
    }
}

/// Scans one `h x w` plane, recording for each output cell the flat index of
/// the input cell whose value survived. Ties keep the earlier-scanned cell.
pub(crate) fn pool_plane_tracked(
    input: &[f64],
    h: usize,
    w: usize,
    dir: Direction,
    out: &mut [f64],
    src: &mut [u32],
) {
    out.copy_from_slice(input);
    for (i, s) in src.iter_mut().enumerate() {
        *s = i as u32;
    }
    if h == 0 || w == 0 {
        return;
    }
    let mut step = |cur: usize, prev: usize| {
        if input[cur] <= out[prev] {
            out[cur] = out[prev];
            src[cur] = src[prev];
        }
    };
    match dir {
        Direction::Top => {
            for i in (0..h - 1).rev() {
                for j in 0..w {
                    step(i * w + j, (i + 1) * w + j);
                }
            }
        }
        Direction::Bottom => {
            for i in 1..h {
                for j in 0..w {
                    step(i * w + j, (i - 1) * w + j);
                }
            }
        }
        Direction::Left => {
            for i in 0..h {
                for j in (0..w - 1).rev() {
                    step(i * w + j, i * w + j + 1);
                }
            }
        }
        Direction::Right => {
            for i in 0..h {
                for j in 1..w {
                    step(i * w + j, i * w + j - 1);
                }
            }
        }
    }
}

/// In-place scan of one plane without source tracking.
pub(crate) fn scan_in_place(buf: &mut [f64], h: usize, w: usize, dir: Direction) {
    if h == 0 || w == 0 {
        return;
    }
    match dir {
        Direction::Top => {
            for i in (0..h - 1).rev() {
                let (head, tail) = buf.split_at_mut((i + 1) * w);
                for (a, &b) in head[i * w..].iter_mut().zip(&tail[..w]) {
                    *a = a.max(b);
                }
            }
        }
        Direction::Bottom => {
            for i in 1..h {
                let (head, tail) = buf.split_at_mut(i * w);
                for (a, &b) in tail[..w].iter_mut().zip(&head[(i - 1) * w..]) {
                    *a = a.max(b);
                }
            }
        }
        Direction::Left => {
            for row in buf.chunks_mut(w) {
                let mut m = f64::NEG_INFINITY;
                for v in row.iter_mut().rev() {
                    m = m.max(*v);
                    *v = m;
                }
            }
        }
        Direction::Right => {
            for row in buf.chunks_mut(w) {
                let mut m = f64::NEG_INFINITY;
                for v in row.iter_mut() {
                    m = m.max(*v);
                    *v = m;
                }
            }
        }
    }
}

/// `buf <- scan(buf + add_in) + add_out`, fused into one pass.
pub(crate) fn scan_sum_in_place(
    buf: &mut [f64],
    add_in: &[f64],
    add_out: Option<&[f64]>,
    h: usize,
    w: usize,
    dir: Direction,
) {
    for (b, a) in buf.iter_mut().zip(add_in) {
        *b += a;
    }
    scan_in_place(buf, h, w, dir);
    if let Some(o) = add_out {
        for (b, a) in buf.iter_mut().zip(o) {
            *b += a;
        }
    }
}

/// Horizontal scans fused with their additions (row-sequential, so the add
/// rides along in the same pass); vertical scans vectorize across the row.
pub(crate) fn scan_fused(
    buf: &mut [f64],
    add_in: Option<&[f64]>,
    add_out: Option<&[f64]>,
    h: usize,
    w: usize,
    dir: Direction,
) {
    if h == 0 || w == 0 {
        return;
    }
    match dir {
        Direction::Left | Direction::Right => scan_rows(buf, add_in, add_out, h, w, dir),
        Direction::Top | Direction::Bottom => match add_in {
            Some(a) => scan_sum_in_place(buf, a, add_out, h, w, dir),
            None => {
                scan_in_place(buf, h, w, dir);
                if let Some(o) = add_out {
                    buf.iter_mut().zip(o).for_each(|(b, a)| *b += a);
                }
            }
        },
    }
}

fn scan_rows(buf: &mut [f64], add_in: Option<&[f64]>, add_out: Option<&[f64]>, h: usize, w: usize, dir: Direction) {
    let zeros = vec![0.0; w];
    for (i, row) in buf.chunks_mut(w).take(h).enumerate() {
        let span = i * w..(i + 1) * w;
        let a = add_in.map_or(&zeros[..], |a| &a[span.clone()]);
        let o = add_out.map_or(&zeros[..], |o| &o[span]);
        let cells = row.iter_mut().zip(a).zip(o);
        let mut m = f64::NEG_INFINITY;
        let mut visit = |((v, a), o): ((&mut f64, &f64), &f64)| {
            m = m.max(*v + a);
            *v = m + o;
        };
        if dir == Direction::Left {
            cells.rev().for_each(&mut visit);
        } else {
            cells.for_each(&mut visit);
        }
    }
}

/// `dst += scan(src)` for a horizontal direction, in one pass.
pub(crate) fn scan_accumulate(src: &[f64], dst: &mut [f64], h: usize, w: usize, dir: Direction) {
    assert!(!dir.is_vertical(), "scan_accumulate handles horizontal scans only");
    for (srow, drow) in src.chunks(w.max(1)).zip(dst.chunks_mut(w.max(1))).take(h) {
        let mut m = f64::NEG_INFINITY;
        if dir == Direction::Left {
            for (s, d) in srow.iter().zip(drow.iter_mut()).rev() {
                m = m.max(*s);
                *d += m;
            }
        } else {
            for (s, d) in srow.iter().zip(drow.iter_mut()) {
                m = m.max(*s);
                *d += m;
            }
        }
    }
}

/// Applies one directional scan to every plane of `f`.
pub fn directional_pool(f: &Tensor, dir: Direction) -> Tensor {
    let s = f.shape();
    let mut out = f.clone();
    let p = s.plane();
    if p > 0 {
        for plane in out.data_mut().chunks_mut(p) {
            scan_in_place(plane, s.h(), s.w(), dir);
        }
    }
    out
}

/// Reference scan: every output cell is an explicit max over its whole ray.
pub fn naive_pool_oracle(f: &Tensor, dir: Direction) -> Tensor {
    let s = f.shape();
    let (h, w) = (s.h(), s.w());
    let mut out = Tensor::zeros(s);
    for n in 0..s.n() {
        for c in 0..s.c() {
            for i in 0..h {
                for j in 0..w {
                    let ray: Box<dyn Iterator<Item = (usize, usize)>> = match dir {
                        Direction::Top => Box::new((i..h).map(move |k| (k, j))),
                        Direction::Bottom => Box::new((0..=i).map(move |k| (k, j))),
                        Direction::Left => Box::new((j..w).map(move |k| (i, k))),
                        Direction::Right => Box::new((0..=j).map(move |k| (i, k))),
                    };
                    let m = ray
                        .map(|(y, x)| f.at(n, c, y, x))
                        .fold(f64::NEG_INFINITY, f64::max);
                    out.set(n, c, i, j, m);
                }
            }
        }
    }
    out
}
