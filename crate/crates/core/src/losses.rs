//! Training objective: two corner losses plus the optional center-attention
//! loss.

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::network::{CenterVars, CornerVars, PredictionVars, RawPredictions};
use crate::targets::{CenterTargets, CornerTargets, TrainingTargets};

/// Weight of the guiding-shift term.
pub const ALPHA: f64 = 0.05;

/// Every term as logged; the guiding terms are stored unweighted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub det_tl: f64,
    pub off_tl: f64,
    pub cs_tl: f64,
    pub delta_tl: f64,
    pub det_br: f64,
    pub off_br: f64,
    pub cs_br: f64,
    pub delta_br: f64,
    pub det_ce: f64,
    pub off_ce: f64,
    pub ba: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const CSV_HEADER: &'static str =
        "L_det_tl,L_off_tl,L_cs_tl,L_delta_tl,L_det_br,L_off_br,L_cs_br,L_delta_br,L_det_ce,L_off_ce,L_ba,total";

    pub fn components(&self) -> [f64; 11] {
        [
            self.det_tl,
            self.off_tl,
            self.cs_tl,
            self.delta_tl,
            self.det_br,
            self.off_br,
            self.cs_br,
            self.delta_br,
            self.det_ce,
            self.off_ce,
            self.ba,
        ]
    }

    /// Recomputes the total from the logged parts.
    pub fn recombine(&self) -> f64 {
        self.det_tl
            + self.off_tl
            + self.cs_tl
            + ALPHA * self.delta_tl
            + self.det_br
            + self.off_br
            + self.cs_br
            + ALPHA * self.delta_br
            + self.det_ce
            + self.off_ce
            + self.ba
    }

    pub fn csv_row(&self) -> String {
        let mut parts: Vec<String> = self.components().iter().map(|v| format!("{v}")).collect();
        parts.push(format!("{}", self.total));
        parts.join(",")
    }
}

fn sum_all(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}

/// `L_det + L_off + L_cs + ALPHA * L_delta`, with the four raw parts.
pub fn corner_loss(
    tape: &mut Tape,
    p: &CornerVars,
    t: &CornerTargets,
    objects: &[usize],
) -> Result<(Var, [f64; 4])> {
    let det = tape.gaussian_focal_loss(p.heatmap, &t.heatmap, objects)?;
    let off = tape.smooth_l1_masked(p.offset, &t.offset, &t.mask)?;
    let cs = tape.smooth_l1_masked(p.centripetal, &t.centripetal, &t.mask)?;
    let delta = tape.smooth_l1_masked(p.guiding, &t.guiding, &t.mask)?;
    let parts = [det, off, cs, delta].map(|v| tape.value(v).data()[0]);
    let weighted = tape.scale(delta, ALPHA);
    Ok((sum_all(tape, &[det, off, cs, weighted])?, parts))
}

/// `L_det + L_off + L_ba` of the center branch.
pub fn bcca_loss(
    tape: &mut Tape,
    p: Option<&CenterVars>,
    t: &CenterTargets,
    objects: &[usize],
) -> Result<(Var, [f64; 3])> {
    let p = p.ok_or_else(|| Error::invalid("center-attention loss needs the center branch"))?;
    let det = tape.gaussian_focal_loss(p.heatmap, &t.heatmap, objects)?;
    let off = tape.smooth_l1_masked(p.offset, &t.offset, &t.mask)?;
    let ba = tape.smooth_l1_masked(p.bc, &t.bc, &t.mask)?;
    let parts = [det, off, ba].map(|v| tape.value(v).data()[0]);
    Ok((sum_all(tape, &[det, off, ba])?, parts))
}

/// Full objective; the center terms are zero when `p.center` is absent.
pub fn total_loss(tape: &mut Tape, p: &PredictionVars, t: &TrainingTargets) -> Result<(Var, LossBreakdown)> {
    let (ltl, tl) = corner_loss(tape, &p.tl, &t.tl, &t.objects)?;
    let (lbr, br) = corner_loss(tape, &p.br, &t.br, &t.objects)?;
    let mut b = LossBreakdown {
        det_tl: tl[0],
        off_tl: tl[1],
        cs_tl: tl[2],
        delta_tl: tl[3],
        det_br: br[0],
        off_br: br[1],
        cs_br: br[2],
        delta_br: br[3],
        ..Default::default()
    };
    let mut total = tape.add(ltl, lbr)?;
    if p.center.is_some() {
        let (lce, ce) = bcca_loss(tape, p.center.as_ref(), &t.center, &t.objects)?;
        b.det_ce = ce[0];
        b.off_ce = ce[1];
        b.ba = ce[2];
        total = tape.add(total, lce)?;
    }
    b.total = tape.value(total).data()[0];
    Ok((total, b))
}

/// [`total_loss`] on plain prediction tensors.
pub fn total_loss_values(p: &RawPredictions, t: &TrainingTargets) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let mut corner = |c: &crate::network::CornerMaps| CornerVars {
        heatmap: tape.constant(c.heatmap.clone()),
        offset: tape.constant(c.offset.clone()),
        centripetal: tape.constant(c.centripetal.clone()),
        guiding: tape.constant(c.guiding.clone()),
    };
    let tl = corner(&p.tl);
    let br = corner(&p.br);
    let center = p.center.as_ref().map(|c| CenterVars {
        heatmap: tape.constant(c.heatmap.clone()),
        offset: tape.constant(c.offset.clone()),
        bc: tape.constant(c.bc.clone()),
    });
    let vars = PredictionVars { tl, br, center };
    Ok(total_loss(&mut tape, &vars, t)?.1)
}
