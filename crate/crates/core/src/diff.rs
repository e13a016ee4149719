//! Exact gradients of the training loss and a central finite-difference
//! verifier.
//!
//! The backward pass is the hand-derived chain rule through the cached
//! [`Query`] intermediates. Curvature gradients flow through every map that
//! depends on `c`: the exponential and logarithmic maps, the ball projections,
//! the Möbius additions and the distance.

use std::collections::BTreeSet;
use std::ops::{Deref, DerefMut};

use crate::data::Quadruple;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::geometry::kernel;
use crate::model::{self, curvature_preactivation, sigmoid, softplus, Query};
use crate::params::{CurvatureSpec, ModelParams, ParamKind};

/// Gradients, shaped like the parameters they belong to. Entries of rows the
/// batch never touches stay zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet(ModelParams);

impl GradientSet {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self(params.zeros_like())
    }

    pub fn into_inner(self) -> ModelParams {
        self.0
    }

    /// First non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<(ParamKind, usize)> {
        self.0
            .arrays()
            .find_map(|(k, a)| a.iter().position(|v| !v.is_finite()).map(|i| (k, i)))
    }
}

impl Deref for GradientSet {
    type Target = ModelParams;
    fn deref(&self) -> &ModelParams {
        &self.0
    }
}

impl DerefMut for GradientSet {
    fn deref_mut(&mut self) -> &mut ModelParams {
        &mut self.0
    }
}

#[inline]
fn row_mut(a: &mut [f64], i: usize, n: usize) -> &mut [f64] {
    &mut a[i * n..(i + 1) * n]
}

/// Pair-parameter gradient from block-angle gradients (`θ = atan2(b, a)`).
fn pair_backward(raw: &[f64], grad_angle: &[f64], grad_raw: &mut [f64]) {
    for (i, &g) in grad_angle.iter().enumerate() {
        let (a, b) = (raw[2 * i], raw[2 * i + 1]);
        let r2 = a * a + b * b;
        if r2 > 0.0 {
            grad_raw[2 * i] -= b / r2 * g;
            grad_raw[2 * i + 1] += a / r2 * g;
        }
    }
}

impl Query {
    /// Pulls `Q̄` back onto the subject, relation and time parameters.
    /// Returns the total `c̄` picked up along the way.
    pub(crate) fn backward(
        &self,
        params: &ModelParams,
        grad_q: &[f64],
        grads: &mut ModelParams,
    ) -> f64 {
        let n = params.dim;
        let c = self.c;
        let mut gc = 0.0;

        let mut grad_translated = grad_q.to_vec();
        if let Some((shift, step)) = &self.time_shift {
            let mut g_raw = vec![0.0; n];
            gc += step
                .proj
                .scale
                .backward(&step.proj.input, grad_q, &mut g_raw);
            let mut gx = vec![0.0; n];
            let mut gy = vec![0.0; n];
            gc += kernel::mobius_add_backward(
                self.translate.output(),
                &shift.output,
                c,
                &step.proj.input,
                &step.cache,
                &g_raw,
                &mut gx,
                &mut gy,
            );
            let tt = grads
                .time_trans
                .as_mut()
                .expect("time translation gradient allocated");
            gc += shift
                .scale
                .backward(&shift.input, &gy, row_mut(tt, self.t, n));
            grad_translated = gx;
        }

        let mut g_raw = vec![0.0; n];
        gc += self.translate.proj.scale.backward(
            &self.translate.proj.input,
            &grad_translated,
            &mut g_raw,
        );
        let mut g_att = vec![0.0; n];
        let mut g_rel = vec![0.0; n];
        gc += kernel::mobius_add_backward(
            &self.attended.output,
            &self.relation.output,
            c,
            &self.translate.proj.input,
            &self.translate.cache,
            &g_raw,
            &mut g_att,
            &mut g_rel,
        );
        gc += self.relation.scale.backward(
            &self.relation.input,
            &g_rel,
            row_mut(&mut grads.rel_emb, self.p, n),
        );

        let mut g_tan = vec![0.0; n];
        gc += self
            .attended
            .scale
            .backward(&self.attended.input, &g_att, &mut g_tan);

        // tangent = α_rot·l_rot + α_ref·l_ref, α = softmax(⟨a, l_rot⟩, ⟨a, l_ref⟩)
        let [a_rot, a_ref] = self.alpha;
        let ga_rot = kernel::dot(&g_tan, &self.l_rot.output);
        let ga_ref = kernel::dot(&g_tan, &self.l_ref.output);
        let mean = a_rot * ga_rot + a_ref * ga_ref;
        let gl_rot_logit = a_rot * (ga_rot - mean);
        let gl_ref_logit = a_ref * (ga_ref - mean);
        let ctx = params.context(self.p);
        let ctx_grad = row_mut(&mut grads.rel_ctx, self.p, n);
        let mut g_lrot = vec![0.0; n];
        let mut g_lref = vec![0.0; n];
        for i in 0..n {
            g_lrot[i] = a_rot * g_tan[i] + gl_rot_logit * ctx[i];
            g_lref[i] = a_ref * g_tan[i] + gl_ref_logit * ctx[i];
            ctx_grad[i] +=
                gl_rot_logit * self.l_rot.output[i] + gl_ref_logit * self.l_ref.output[i];
        }

        let mut g_qrot = vec![0.0; n];
        let mut g_qref = vec![0.0; n];
        gc += self
            .l_rot
            .scale
            .backward(&self.l_rot.input, &g_lrot, &mut g_qrot);
        gc += self
            .l_ref
            .scale
            .backward(&self.l_ref.input, &g_lref, &mut g_qref);

        let mut g_hs = vec![0.0; n];
        let mut g_angle = vec![0.0; n / 2];
        kernel::rotate_backward(&self.rot_cs, &self.q_rot, &g_qrot, &mut g_hs, &mut g_angle);
        pair_backward(
            params.rotation(self.p),
            &g_angle,
            row_mut(&mut grads.rel_rot, self.p, n),
        );
        kernel::reflect_backward(&self.ref_cs, &self.q_ref, &g_qref, &mut g_hs, &mut g_angle);
        pair_backward(
            params.reflection(self.p),
            &g_angle,
            row_mut(&mut grads.rel_ref, self.p, n),
        );

        gc += self.subject.scale.backward(
            &self.subject.input,
            &g_hs,
            row_mut(&mut grads.entity_emb, self.s, n),
        );
        gc
    }

    /// Backward of `score = −d²(Q, exp0(e_o)) + b_s + b_o` for upstream
    /// `g_score`. Accumulates `Q̄` and returns this candidate's `c̄`.
    fn candidate_backward(
        &self,
        params: &ModelParams,
        o: usize,
        g_score: f64,
        grad_q: &mut [f64],
        scratch: &mut [f64],
        grads: &mut ModelParams,
    ) -> f64 {
        let n = params.dim;
        let (scale, _, sd) = self.object_distance(params, o);
        let e_o = params.entity(o);
        let q = self.point();
        let lam = scale.lambda;
        let g_d2 = -g_score;
        for i in 0..n {
            let ho = lam * e_o[i];
            grad_q[i] += g_d2 * (2.0 * sd.d_x2 * q[i] + sd.d_xy * ho);
            scratch[i] = g_d2 * (2.0 * sd.d_y2 * ho + sd.d_xy * q[i]);
        }
        let mut gc = g_d2 * sd.d_c;
        gc += scale.backward(e_o, scratch, row_mut(&mut grads.entity_emb, o, n));
        grads.entity_bias[self.s] += g_score;
        grads.entity_bias[o] += g_score;
        gc
    }
}

/// Pushes `c̄` through the softplus into the curvature parameters.
fn curvature_backward(
    params: &ModelParams,
    spec: CurvatureSpec,
    quad: (usize, usize, usize, usize),
    pre: f64,
    gc: f64,
    grads: &mut ModelParams,
) {
    let (s, p, o, t) = quad;
    let g_pre = gc * sigmoid(pre);
    let mu = params.rel_curv[p];
    match spec {
        CurvatureSpec::RelationOnly => grads.rel_curv[p] += g_pre,
        CurvatureSpec::RelationTime | CurvatureSpec::RelationTimePlusTranslation => {
            let tau = params.time_curv.as_ref().expect("validated")[t];
            grads.rel_curv[p] += g_pre * tau;
            grads.time_curv.as_mut().expect("validated")[t] += g_pre * mu;
        }
        CurvatureSpec::RelationTimeDotProduct => {
            let tau = params.time_curv.as_ref().expect("validated")[t];
            let (es, eo) = (params.entity(s), params.entity(o));
            let dot = kernel::dot(es, eo);
            grads.rel_curv[p] += g_pre * tau * dot;
            grads.time_curv.as_mut().expect("validated")[t] += g_pre * mu * dot;
            let k = g_pre * mu * tau;
            let n = params.dim;
            // s == o contributes both terms to the same row
            let (es, eo) = (es.to_vec(), eo.to_vec());
            let gs = row_mut(&mut grads.entity_emb, s, n);
            gs.iter_mut().zip(&eo).for_each(|(g, v)| *g += k * v);
            let go = row_mut(&mut grads.entity_emb, o, n);
            go.iter_mut().zip(&es).for_each(|(g, v)| *g += k * v);
        }
    }
}

/// `log Σ exp(scores) − scores[0]` and the softmax weights.
fn softmax_xent(scores: &[f64]) -> (f64, Vec<f64>) {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    let lse = m + z.ln();
    (lse - scores[0], exps.into_iter().map(|e| e / z).collect())
}

/// Cross-entropy of the true object against its negatives, forward only.
pub fn example_loss(
    params: &ModelParams,
    spec: CurvatureSpec,
    q: &Quadruple,
    negatives: &[usize],
) -> Result<f64> {
    let mut scores = Vec::with_capacity(negatives.len() + 1);
    model::score_candidates_into(
        params,
        spec,
        q.s,
        q.p,
        q.t,
        std::iter::once(q.o).chain(negatives.iter().copied()),
        &mut scores,
    )?;
    let (loss, _) = softmax_xent(&scores);
    Ok(loss)
}

/// Loss of one example scaled by `weight`, with its gradient accumulated into
/// `grads`.
pub fn example_loss_and_grads(
    params: &ModelParams,
    spec: CurvatureSpec,
    q: &Quadruple,
    negatives: &[usize],
    weight: f64,
    grads: &mut ModelParams,
) -> Result<f64> {
    let n = params.dim;
    let candidates: Vec<usize> = std::iter::once(q.o)
        .chain(negatives.iter().copied())
        .collect();
    let mut scratch = vec![0.0; n];
    let mut grad_q = vec![0.0; n];

    if spec.is_object_dependent() {
        let mut queries = Vec::with_capacity(candidates.len());
        let mut scores = Vec::with_capacity(candidates.len());
        for &o in &candidates {
            let pre = curvature_preactivation(params, spec, q.p, q.t, q.s, o)?;
            let query = Query::build(params, spec, q.s, q.p, q.t, softplus(pre))?;
            scores.push(query.score_object(params, o));
            queries.push((pre, query));
        }
        let (loss, probs) = softmax_xent(&scores);
        check_loss(loss, q)?;
        for (j, ((pre, query), &o)) in queries.iter().zip(&candidates).enumerate() {
            let g = weight * (probs[j] - if j == 0 { 1.0 } else { 0.0 });
            grad_q.fill(0.0);
            let mut gc = query.candidate_backward(params, o, g, &mut grad_q, &mut scratch, grads);
            gc += query.backward(params, &grad_q, grads);
            curvature_backward(params, spec, (q.s, q.p, o, q.t), *pre, gc, grads);
        }
        return Ok(weight * loss);
    }

    let pre = curvature_preactivation(params, spec, q.p, q.t, q.s, q.s)?;
    let query = Query::build(params, spec, q.s, q.p, q.t, softplus(pre))?;
    let scores: Vec<f64> = candidates
        .iter()
        .map(|&o| query.score_object(params, o))
        .collect();
    let (loss, probs) = softmax_xent(&scores);
    check_loss(loss, q)?;
    let mut gc = 0.0;
    for (j, &o) in candidates.iter().enumerate() {
        let g = weight * (probs[j] - if j == 0 { 1.0 } else { 0.0 });
        gc += query.candidate_backward(params, o, g, &mut grad_q, &mut scratch, grads);
    }
    gc += query.backward(params, &grad_q, grads);
    curvature_backward(params, spec, (q.s, q.p, q.o, q.t), pre, gc, grads);
    Ok(weight * loss)
}

fn check_loss(loss: f64, q: &Quadruple) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!(
            "loss {loss} for quadruple (s={}, p={}, o={}, t={})",
            q.s, q.p, q.o, q.t
        )))
    }
}

fn check_batch(
    params: &ModelParams,
    spec: CurvatureSpec,
    batch: &[Quadruple],
    negatives: &[Vec<usize>],
) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if batch.len() != negatives.len() {
        return Err(Error::InvalidArgument(format!(
            "{} examples but {} negative lists",
            batch.len(),
            negatives.len()
        )));
    }
    params.validate(spec)?;
    for (q, negs) in batch.iter().zip(negatives) {
        model::check_ids(params, q.s, q.p, q.o, q.t)?;
        if let Some(&bad) = negs.iter().find(|&&o| o >= params.sizes.entities) {
            return Err(Error::InvalidArgument(format!(
                "negative id {bad} out of range"
            )));
        }
    }
    Ok(())
}

/// Mean cross-entropy over the batch (forward only).
pub fn batch_loss(
    params: &ModelParams,
    spec: CurvatureSpec,
    batch: &[Quadruple],
    negatives: &[Vec<usize>],
    exec: Execution,
) -> Result<f64> {
    check_batch(params, spec, batch, negatives)?;
    let pairs: Vec<(&Quadruple, &Vec<usize>)> = batch.iter().zip(negatives).collect();
    let losses = exec::map_items(exec, &pairs, |(q, negs)| {
        example_loss(params, spec, q, negs)
    });
    let mut total = 0.0;
    for (l, q) in losses.into_iter().zip(batch) {
        let l = l?;
        check_loss(l, q)?;
        total += l;
    }
    Ok(total / batch.len() as f64)
}

/// Mean loss over the batch and its exact gradient.
///
/// In [`Execution::Parallel`] the batch is split into one chunk per worker;
/// chunk gradients are summed in chunk order.
pub fn loss_and_grads(
    params: &ModelParams,
    spec: CurvatureSpec,
    batch: &[Quadruple],
    negatives: &[Vec<usize>],
    exec: Execution,
) -> Result<(f64, GradientSet)> {
    check_batch(params, spec, batch, negatives)?;
    let weight = 1.0 / batch.len() as f64;
    let pairs: Vec<(&Quadruple, &Vec<usize>)> = batch.iter().zip(negatives).collect();
    let parts = exec::map_chunks(exec, &pairs, |_, chunk| -> Result<(f64, GradientSet)> {
        let mut grads = GradientSet::zeros_like(params);
        let mut loss = 0.0;
        for (q, negs) in chunk {
            loss += example_loss_and_grads(params, spec, q, negs, weight, &mut grads)?;
        }
        Ok((loss, grads))
    });
    let mut parts = parts.into_iter();
    let (mut loss, mut grads) = parts.next().expect("non-empty batch")?;
    for part in parts {
        let (l, g) = part?;
        loss += l;
        grads.add_assign(&g);
    }
    Ok((loss, grads))
}

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone)]
pub struct FiniteDiffReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Entry with the largest error: array, flat index, analytic, numeric.
    pub worst: Option<(ParamKind, usize, f64, f64)>,
    pub tol: f64,
}

impl FiniteDiffReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tol
    }
}

/// Relative error floor: differences on gradients below this magnitude are
/// measured in absolute terms.
pub const FD_REL_FLOOR: f64 = 1e-6;

/// Every parameter entry that the batch can influence.
pub fn touched_entries(
    params: &ModelParams,
    spec: CurvatureSpec,
    batch: &[Quadruple],
    negatives: &[Vec<usize>],
) -> Vec<(ParamKind, usize)> {
    let n = params.dim;
    let mut set = BTreeSet::new();
    let row = |set: &mut BTreeSet<(usize, usize)>, kind: ParamKind, r: usize| {
        for i in r * n..(r + 1) * n {
            set.insert((kind as usize, i));
        }
    };
    for (q, negs) in batch.iter().zip(negatives) {
        for o in std::iter::once(q.s)
            .chain(std::iter::once(q.o))
            .chain(negs.iter().copied())
        {
            row(&mut set, ParamKind::EntityEmb, o);
            set.insert((ParamKind::EntityBias as usize, o));
        }
        for kind in [
            ParamKind::RelEmb,
            ParamKind::RelRot,
            ParamKind::RelRef,
            ParamKind::RelCtx,
        ] {
            row(&mut set, kind, q.p);
        }
        set.insert((ParamKind::RelCurv as usize, q.p));
        if spec.uses_time_curvature() && params.time_curv.is_some() {
            set.insert((ParamKind::TimeCurv as usize, q.t));
        }
        if spec.uses_time_translation() && params.time_trans.is_some() {
            row(&mut set, ParamKind::TimeTrans, q.t);
        }
    }
    set.into_iter()
        .map(|(k, i)| (ParamKind::ALL[k], i))
        .collect()
}

/// Central difference `(L(θ+h) − L(θ−h)) / 2h` for one entry.
pub fn numeric_gradient(
    params: &ModelParams,
    spec: CurvatureSpec,
    batch: &[Quadruple],
    negatives: &[Vec<usize>],
    entry: (ParamKind, usize),
    h: f64,
) -> Result<f64> {
    let mut p = params.clone();
    let (kind, i) = entry;
    let orig = p
        .array(kind)
        .ok_or_else(|| Error::InvalidArgument(format!("{} not allocated", kind.name())))?[i];
    p.array_mut(kind).unwrap()[i] = orig + h;
    let up = batch_loss(&p, spec, batch, negatives, Execution::Sequential)?;
    p.array_mut(kind).unwrap()[i] = orig - h;
    let down = batch_loss(&p, spec, batch, negatives, Execution::Sequential)?;
    Ok((up - down) / (2.0 * h))
}

/// Compares a supplied gradient against central differences on every touched
/// entry. The relative error is `|a − f| / max(|a|, |f|, 1e-6)`.
pub fn finite_diff_check_against(
    params: &ModelParams,
    spec: CurvatureSpec,
    batch: &[Quadruple],
    negatives: &[Vec<usize>],
    analytic: &GradientSet,
    h: f64,
    tol: f64,
) -> Result<FiniteDiffReport> {
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::InvalidArgument(format!(
            "step {h} outside [1e-7, 1e-3]"
        )));
    }
    let mut report = FiniteDiffReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
        tol,
    };
    for entry in touched_entries(params, spec, batch, negatives) {
        let a = analytic.array(entry.0).map(|v| v[entry.1]).unwrap_or(0.0);
        let f = numeric_gradient(params, spec, batch, negatives, entry, h)?;
        let err = (a - f).abs() / a.abs().max(f.abs()).max(FD_REL_FLOOR);
        report.checked += 1;
        if report.worst.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((entry.0, entry.1, a, f));
        }
    }
    Ok(report)
}

/// Finite-difference check of [`loss_and_grads`].
pub fn finite_diff_check(
    params: &ModelParams,
    spec: CurvatureSpec,
    batch: &[Quadruple],
    negatives: &[Vec<usize>],
    h: f64,
    tol: f64,
) -> Result<FiniteDiffReport> {
    let (_, grads) = loss_and_grads(params, spec, batch, negatives, Execution::Sequential)?;
    finite_diff_check_against(params, spec, batch, negatives, &grads, h, tol)
}
