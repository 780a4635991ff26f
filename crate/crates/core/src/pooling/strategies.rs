use super::directional::{scan_accumulate, scan_fused, Direction};
use super::{CornerType, PoolingStrategy};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn expect_branches(name: &str, got: &[Var], want: usize) -> Result<()> {
    if got.len() != want {
        return Err(Error::invalid(format!(
            "{name} pooling expects {want} branch features, got {}",
            got.len()
        )));
    }
    Ok(())
}

/// Runs `body` on each plane of a copy of `f`, passing the original plane.
fn per_plane(f: &Tensor, mut body: impl FnMut(&mut [f64], &[f64], usize, usize)) -> Tensor {
    let s = f.shape();
    let (h, w, p) = (s.h(), s.w(), s.plane());
    let mut out = f.clone();
    if p > 0 {
        for (o, i) in out.data_mut().chunks_mut(p).zip(f.data().chunks(p)) {
            body(o, i, h, w);
        }
    }
    out
}

/// Corner pooling: `V(A) + H(B)`.
#[derive(Debug, Default, Clone, Copy)]
pub struct CornerPool;

impl PoolingStrategy for CornerPool {
    fn name(&self) -> &'static str {
        "cp"
    }
    fn scans(&self) -> usize {
        2
    }
    fn branches(&self) -> usize {
        2
    }

    fn compose(&self, tape: &mut Tape, b: &[Var], corner: CornerType) -> Result<Var> {
        expect_branches(self.name(), b, 2)?;
        let (v, h) = corner.directions();
        let pv = tape.directional_pool(b[0], v);
        let ph = tape.directional_pool(b[1], h);
        tape.add(pv, ph)
    }

    fn core(&self, f: &Tensor, corner: CornerType) -> Tensor {
        let (v, hd) = corner.directions();
        per_plane(f, |o, i, h, w| {
            scan_fused(o, None, None, h, w, v);
            scan_accumulate(i, o, h, w, hd);
        })
    }
}

/// Cascade corner pooling: `V(H(A1) + A2) + H(V(B1) + B2)`.
#[derive(Debug, Default, Clone, Copy)]
pub struct CascadeCornerPool;

impl PoolingStrategy for CascadeCornerPool {
    fn name(&self) -> &'static str {
        "ccp"
    }
    fn scans(&self) -> usize {
        4
    }
    fn branches(&self) -> usize {
        4
    }

    fn compose(&self, tape: &mut Tape, b: &[Var], corner: CornerType) -> Result<Var> {
        expect_branches(self.name(), b, 4)?;
        let (v, h) = corner.directions();
        let inner_a = tape.directional_pool(b[0], h);
        let sum_a = tape.add(inner_a, b[1])?;
        let first = tape.directional_pool(sum_a, v);
        let inner_b = tape.directional_pool(b[2], v);
        let sum_b = tape.add(inner_b, b[3])?;
        let second = tape.directional_pool(sum_b, h);
        tape.add(first, second)
    }

    fn core(&self, f: &Tensor, corner: CornerType) -> Tensor {
        let (v, hd) = corner.directions();
        per_plane(f, |o, i, h, w| {
            scan_fused(o, None, None, h, w, hd);
            scan_fused(o, Some(i), None, h, w, v);
            let first = o.to_vec();
            o.copy_from_slice(i);
            scan_fused(o, None, None, h, w, v);
            scan_fused(o, Some(i), Some(&first), h, w, hd);
        })
    }
}

/// Vertical-horizontal corner pooling.
///
/// A vertical scan carries the strongest interior response onto the
/// horizontal margin, the margin is reinforced by a second branch, then a
/// horizontal scan carries the enhanced margin onto the corner and a third
/// branch is added: `H(V(A) + B) + C`.
#[derive(Debug, Default, Clone, Copy)]
pub struct VerticalHorizontalCornerPool;

impl PoolingStrategy for VerticalHorizontalCornerPool {
    fn name(&self) -> &'static str {
        "vhcp"
    }
    fn scans(&self) -> usize {
        2
    }
    fn branches(&self) -> usize {
        3
    }

    fn compose(&self, tape: &mut Tape, b: &[Var], corner: CornerType) -> Result<Var> {
        expect_branches(self.name(), b, 3)?;
        let (v, h) = corner.directions();
        let interior = tape.directional_pool(b[0], v);
        let margin = tape.add(interior, b[1])?;
        let focused = tape.directional_pool(margin, h);
        tape.add(focused, b[2])
    }

    fn core(&self, f: &Tensor, corner: CornerType) -> Tensor {
        let (v, hd) = corner.directions();
        per_plane(f, |o, i, h, w| {
            scan_fused(o, None, None, h, w, v);
            scan_fused(o, Some(i), Some(i), h, w, hd);
        })
    }
}

/// Center pooling: `right(left(A)) + bottom(top(B))`, i.e. row max plus
/// column max at every cell. The corner type is ignored.
#[derive(Debug, Default, Clone, Copy)]
pub struct CenterPool;

impl PoolingStrategy for CenterPool {
    fn name(&self) -> &'static str {
        "center"
    }
    fn scans(&self) -> usize {
        4
    }
    fn branches(&self) -> usize {
        2
    }

    fn compose(&self, tape: &mut Tape, b: &[Var], _corner: CornerType) -> Result<Var> {
        expect_branches(self.name(), b, 2)?;
        let l = tape.directional_pool(b[0], Direction::Left);
        let row = tape.directional_pool(l, Direction::Right);
        let t = tape.directional_pool(b[1], Direction::Top);
        let col = tape.directional_pool(t, Direction::Bottom);
        tape.add(row, col)
    }

    fn core(&self, f: &Tensor, _corner: CornerType) -> Tensor {
        per_plane(f, |o, i, h, w| {
            scan_fused(o, None, None, h, w, Direction::Left);
            scan_fused(o, None, None, h, w, Direction::Right);
            let row = o.to_vec();
            o.copy_from_slice(i);
            scan_fused(o, None, None, h, w, Direction::Top);
            scan_fused(o, None, Some(&row), h, w, Direction::Bottom);
        })
    }
}
