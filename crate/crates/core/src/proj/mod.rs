//! Projections used by the proximal steps.

mod s1;
mod s2;

use nalgebra::DVector;

pub use s1::S1Factor;
pub use s2::kernel_projector;

use crate::error::Result;
use crate::oper::{DualLayout, PrimalLayout};
use crate::par::{for_each_segment, split_segments_mut};
use crate::problem::{BoxSet, Raocp, StageSoc, TerminalSoc};
use crate::risk::{ConeDesc, ConeKind};
use crate::scalar::{norm2, Real};

/// Projection onto the second-order cone `{ (h, t) : |h| <= t }`, in place.
pub fn proj_soc<T: Real>(v: &mut [T]) {
    let d = v.len();
    let (head, tail) = v.split_at_mut(d - 1);
    let t = tail[0];
    let nh = norm2(head);
    if nh <= t {
        return;
    }
    if nh <= -t {
        head.iter_mut().for_each(|x| *x = T::zero());
        tail[0] = T::zero();
        return;
    }
    let m = (nh + t) * T::lit(0.5);
    let f = m / nh;
    head.iter_mut().for_each(|x| *x *= f);
    tail[0] = m;
}

/// Projection onto `SOC + a`, in place.
pub fn proj_translated_soc<T: Real>(v: &mut [T], a: &[T]) {
    for (x, &s) in v.iter_mut().zip(a) {
        *x -= s;
    }
    proj_soc(v);
    for (x, &s) in v.iter_mut().zip(a) {
        *x += s;
    }
}

/// Projection onto a product of primitive cones, in place.
pub fn proj_cone<T: Real>(v: &mut [T], cone: &ConeDesc) {
    let mut o = 0;
    for &(k, d) in &cone.parts {
        let seg = &mut v[o..o + d];
        match k {
            ConeKind::Zero => seg.iter_mut().for_each(|x| *x = T::zero()),
            ConeKind::Free => {}
            ConeKind::NonnegOrthant => seg.iter_mut().for_each(|x| *x = x.max(T::zero())),
            ConeKind::Soc => proj_soc(seg),
        }
        o += d;
    }
}

/// Offline data of all projections: the factorisation behind the dynamics
/// projection, the kernel projectors of the risk blocks, and the sets of the
/// dual side.
#[derive(Debug, Clone)]
pub struct SolverCache<T: Real> {
    pub s1: S1Factor<T>,
    /// Orthogonal projector onto the kernel block of every non-leaf node.
    pub s2: Vec<nalgebra::DMatrix<T>>,
    dual_cones: Vec<ConeDesc>,
    boxes: Vec<BoxSet<T>>,
    leaf_boxes: Vec<BoxSet<T>>,
    stage_a: Vec<DVector<T>>,
    leaf_a: Vec<DVector<T>>,
}

/// Builds every offline factor for `p`.
pub fn s1_factor_offline<T: Real>(p: &Raocp<T>) -> Result<SolverCache<T>> {
    let s1 = S1Factor::new(p)?;
    let s2 = p.risks.iter().map(kernel_projector).collect();
    let stage_a = p
        .stage_costs
        .iter()
        .map(|c| StageSoc::new(c).map(|s| s.a))
        .collect::<Result<Vec<_>>>()?;
    let leaf_a = p
        .terminal_costs
        .iter()
        .map(|c| TerminalSoc::new(c).map(|s| s.a))
        .collect::<Result<Vec<_>>>()?;
    Ok(SolverCache {
        s1,
        s2,
        dual_cones: p.risks.iter().map(|r| r.cone.dual()).collect(),
        boxes: p.constraints.iter().map(|c| c.set.clone()).collect(),
        leaf_boxes: p.terminal_constraints.iter().map(|c| c.set.clone()).collect(),
        stage_a,
        leaf_a,
    })
}

impl<T: Real> SolverCache<T> {
    /// Projection of the dynamics part `z1` (states then inputs) onto the
    /// affine set of trajectories starting at `x_init`.
    pub fn proj_s1(&self, layout: &PrimalLayout, z1: &mut [T], x_init: &[T]) {
        self.s1.project(layout, z1, x_init);
    }

    /// Projection of the risk part `z2` onto the kernel conditions.
    pub fn proj_s2(&self, layout: &PrimalLayout, z: &mut [T]) {
        let nn = layout.num_nonleaf();
        let mut bounds: Vec<usize> = (0..nn).map(|i| layout.z2_block(i).start).collect();
        bounds.push(layout.len());
        let segs = split_segments_mut(z, &bounds);
        for_each_segment(segs, |i, seg| {
            let n = &self.s2[i];
            let w = n * DVector::from_column_slice(seg);
            seg.copy_from_slice(w.as_slice());
        });
    }

    /// Projection onto the dual-side set, segment by segment.
    pub fn proj_s3(&self, layout: &DualLayout, eta: &mut [T]) {
        assert_eq!(eta.len(), layout.len(), "dual length");
        let nn = self.boxes.len();
        let nr = self.stage_a.len();
        let bounds = layout.bounds().to_vec();
        let segs = split_segments_mut(eta, &bounds);
        for_each_segment(segs, |g, seg| {
            if g < nn {
                let ny = self.dual_cones[g].dim();
                proj_cone(&mut seg[..ny], &self.dual_cones[g]);
                seg[ny] = seg[ny].max(T::zero());
                self.boxes[g].project(&mut seg[ny + 1..]);
            } else if g < nn + nr {
                proj_translated_soc(seg, self.stage_a[g - nn].as_slice());
            } else {
                let l = g - nn - nr;
                let r = self.leaf_boxes[l].dim();
                self.leaf_boxes[l].project(&mut seg[..r]);
                proj_translated_soc(&mut seg[r..], self.leaf_a[l].as_slice());
            }
        });
    }

    pub fn stage_translation(&self, i: usize) -> &DVector<T> {
        &self.stage_a[i - 1]
    }

    pub fn leaf_translation(&self, leaf_pos: usize) -> &DVector<T> {
        &self.leaf_a[leaf_pos]
    }

    pub fn node_box(&self, i: usize) -> &BoxSet<T> {
        &self.boxes[i]
    }

    pub fn leaf_box(&self, leaf_pos: usize) -> &BoxSet<T> {
        &self.leaf_boxes[leaf_pos]
    }

    pub fn dual_cone(&self, i: usize) -> &ConeDesc {
        &self.dual_cones[i]
    }
}
