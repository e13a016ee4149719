//! Forward pass: curvature, subject transformation, tangent-space attention,
//! query construction and scoring.
//!
//! For a fact `(s, p, o, t)` with active curvature `c`:
//!
//! ```text
//! h_s   = exp0(e_s, c)
//! q_rot = Rot(Θ_p) h_s            q_ref = Ref(Φ_p) h_s
//! α     = softmax(⟨a_p, log0(q_rot)⟩, ⟨a_p, log0(q_ref)⟩)
//! att   = exp0(α_rot log0(q_rot) + α_ref log0(q_ref), c)
//! Q     = att ⊕_c exp0(r_p, c)      [⊕_c exp0(w_t, c) with time translation]
//! score = −d_c(Q, exp0(e_o, c))² + b_s + b_o
//! ```
//!
//! Every ball point is projected back to radius `(1−ε)/√c` when needed.

use crate::error::{Error, Result};
use crate::geometry::kernel::{self, MobiusCache, RadialScale};
use crate::geometry::BallPoint;
use crate::params::{CurvatureSpec, ModelParams};

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Checks ids against the parameter shapes.
pub fn check_ids(params: &ModelParams, s: usize, p: usize, o: usize, t: usize) -> Result<()> {
    let sz = params.sizes;
    let bad = |what: &str, v: usize, n: usize| {
        Err(Error::InvalidArgument(format!(
            "{what} id {v} out of range (< {n})"
        )))
    };
    if s >= sz.entities {
        return bad("subject", s, sz.entities);
    }
    if o >= sz.entities {
        return bad("object", o, sz.entities);
    }
    if p >= sz.relation_rows() {
        return bad("relation", p, sz.relation_rows());
    }
    if t >= sz.timestamps {
        return bad("timestamp", t, sz.timestamps);
    }
    Ok(())
}

fn time_curvature(params: &ModelParams, spec: CurvatureSpec, t: usize) -> Result<f64> {
    params
        .time_curv
        .as_deref()
        .map(|tc| tc[t])
        .ok_or_else(|| Error::Config(format!("variant {spec} needs time curvatures")))
}

/// Argument of the softplus for `(p, t)` and, for the dot-product variant,
/// the pair `(s, o)`.
pub(crate) fn curvature_preactivation(
    params: &ModelParams,
    spec: CurvatureSpec,
    p: usize,
    t: usize,
    s: usize,
    o: usize,
) -> Result<f64> {
    let mu = params.rel_curv[p];
    Ok(match spec {
        CurvatureSpec::RelationOnly => mu,
        CurvatureSpec::RelationTime | CurvatureSpec::RelationTimePlusTranslation => {
            mu * time_curvature(params, spec, t)?
        }
        CurvatureSpec::RelationTimeDotProduct => {
            mu * time_curvature(params, spec, t)? * kernel::dot(params.entity(s), params.entity(o))
        }
    })
}

/// Active curvature for a fact. Always strictly positive.
pub fn curvature(
    params: &ModelParams,
    spec: CurvatureSpec,
    p: usize,
    t: usize,
    s: usize,
    o: usize,
) -> Result<f64> {
    check_ids(params, s, p, o, t)?;
    Ok(softplus(curvature_preactivation(params, spec, p, t, s, o)?))
}

/// `(cos, sin)` per block from consecutive parameter pairs; a zero pair is
/// the identity block.
pub(crate) fn pair_angles(raw: &[f64]) -> Vec<(f64, f64)> {
    raw.chunks_exact(2)
        .map(|ab| {
            let r = ab[0].hypot(ab[1]);
            if r > 0.0 {
                (ab[0] / r, ab[1] / r)
            } else {
                (1.0, 0.0)
            }
        })
        .collect()
}

/// Block angles `atan2(b, a)` encoded by consecutive parameter pairs.
pub fn block_angles(raw: &[f64]) -> crate::geometry::AngleVector {
    crate::geometry::AngleVector::new(raw.chunks_exact(2).map(|ab| ab[1].atan2(ab[0])).collect())
}

#[derive(Debug, Clone)]
pub(crate) struct RadialStep {
    pub input: Vec<f64>,
    pub scale: RadialScale,
    pub output: Vec<f64>,
}

impl RadialStep {
    fn new(input: Vec<f64>, scale: RadialScale) -> Self {
        let output = input.iter().map(|v| scale.lambda * v).collect();
        Self {
            input,
            scale,
            output,
        }
    }

    fn exp0(input: &[f64], c: f64) -> Self {
        Self::new(input.to_vec(), kernel::exp0_scale(kernel::norm(input), c))
    }

    fn log0(input: &[f64], c: f64) -> Self {
        Self::new(input.to_vec(), kernel::log0_scale(kernel::norm(input), c))
    }

    fn project(input: Vec<f64>, c: f64) -> Self {
        let scale = kernel::project_scale(kernel::norm(&input), c);
        Self::new(input, scale)
    }
}

/// A projected Möbius addition `proj(x ⊕ y)`.
#[derive(Debug, Clone)]
pub(crate) struct MobiusStep {
    pub cache: MobiusCache,
    pub proj: RadialStep,
}

impl MobiusStep {
    fn new(x: &[f64], y: &[f64], c: f64) -> Self {
        let mut raw = vec![0.0; x.len()];
        let cache = kernel::mobius_add(x, y, c, &mut raw);
        Self {
            cache,
            proj: RadialStep::project(raw, c),
        }
    }

    pub fn output(&self) -> &[f64] {
        &self.proj.output
    }
}

/// Query point `Q(s, p[, t])` with every intermediate kept for the
/// backward pass.
#[derive(Debug, Clone)]
pub struct Query {
    pub s: usize,
    pub p: usize,
    pub t: usize,
    pub c: f64,
    pub(crate) subject: RadialStep,
    pub(crate) rot_cs: Vec<(f64, f64)>,
    pub(crate) ref_cs: Vec<(f64, f64)>,
    pub(crate) q_rot: Vec<f64>,
    pub(crate) q_ref: Vec<f64>,
    pub(crate) l_rot: RadialStep,
    pub(crate) l_ref: RadialStep,
    pub(crate) alpha: [f64; 2],
    pub(crate) attended: RadialStep,
    pub(crate) relation: RadialStep,
    pub(crate) translate: MobiusStep,
    pub(crate) time_shift: Option<(RadialStep, MobiusStep)>,
    /// `‖Q‖²`
    pub(crate) q2: f64,
}

impl Query {
    /// Forward pass at a given curvature; ids must be valid.
    pub fn build(
        params: &ModelParams,
        spec: CurvatureSpec,
        s: usize,
        p: usize,
        t: usize,
        c: f64,
    ) -> Result<Self> {
        let n = params.dim;
        let subject = RadialStep::exp0(params.entity(s), c);
        let rot_cs = pair_angles(params.rotation(p));
        let ref_cs = pair_angles(params.reflection(p));
        let mut q_rot = vec![0.0; n];
        let mut q_ref = vec![0.0; n];
        kernel::rotate(&subject.output, &rot_cs, &mut q_rot);
        kernel::reflect(&subject.output, &ref_cs, &mut q_ref);
        let l_rot = RadialStep::log0(&q_rot, c);
        let l_ref = RadialStep::log0(&q_ref, c);

        let ctx = params.context(p);
        let a_rot = kernel::dot(ctx, &l_rot.output);
        let a_ref = kernel::dot(ctx, &l_ref.output);
        let m = a_rot.max(a_ref);
        let (e_rot, e_ref) = ((a_rot - m).exp(), (a_ref - m).exp());
        let alpha = [e_rot / (e_rot + e_ref), e_ref / (e_rot + e_ref)];

        let tangent: Vec<f64> = l_rot
            .output
            .iter()
            .zip(&l_ref.output)
            .map(|(r, f)| alpha[0] * r + alpha[1] * f)
            .collect();
        let attended = RadialStep::exp0(&tangent, c);
        let relation = RadialStep::exp0(params.relation(p), c);
        let translate = MobiusStep::new(&attended.output, &relation.output, c);

        let time_shift = if spec.uses_time_translation() {
            let w = params
                .time_translation(t)
                .ok_or_else(|| Error::Config(format!("variant {spec} needs time translations")))?;
            let shift = RadialStep::exp0(w, c);
            let step = MobiusStep::new(translate.output(), &shift.output, c);
            Some((shift, step))
        } else {
            None
        };

        let mut q = Self {
            s,
            p,
            t,
            c,
            subject,
            rot_cs,
            ref_cs,
            q_rot,
            q_ref,
            l_rot,
            l_ref,
            alpha,
            attended,
            relation,
            translate,
            time_shift,
            q2: 0.0,
        };
        q.q2 = kernel::dot(q.point(), q.point());
        Ok(q)
    }

    pub fn point(&self) -> &[f64] {
        match &self.time_shift {
            Some((_, step)) => step.output(),
            None => self.translate.output(),
        }
    }

    /// Attention weights `(α_rot, α_ref)`.
    pub fn attention(&self) -> (f64, f64) {
        (self.alpha[0], self.alpha[1])
    }

    /// Subject point after the rotation and after the reflection.
    pub fn transformed_subject(&self) -> (&[f64], &[f64]) {
        (&self.q_rot, &self.q_ref)
    }

    /// Attention output on the ball, before the relation translation.
    pub fn attended_point(&self) -> &[f64] {
        &self.attended.output
    }

    /// Squared distance from `Q` to `exp0(e_o, c)`.
    #[inline]
    pub(crate) fn object_distance(
        &self,
        params: &ModelParams,
        o: usize,
    ) -> (RadialScale, f64, kernel::SqDistance) {
        let e_o = params.entity(o);
        let r2 = kernel::dot(e_o, e_o);
        let scale = kernel::exp0_scale(r2.sqrt(), self.c);
        let qe = kernel::dot(self.point(), e_o);
        let lam = scale.lambda;
        let sd = kernel::sq_distance(self.q2, lam * lam * r2, lam * qe, self.c);
        (scale, qe, sd)
    }

    /// Plausibility of `o` completing this query.
    #[inline]
    pub fn score_object(&self, params: &ModelParams, o: usize) -> f64 {
        let (_, _, sd) = self.object_distance(params, o);
        -sd.value + params.entity_bias[self.s] + params.entity_bias[o]
    }
}

/// `Q(s, p[, t])` as a ball point together with its curvature.
///
/// The dot-product variant's curvature depends on the object, which must then
/// be supplied.
pub fn query_embedding(
    params: &ModelParams,
    spec: CurvatureSpec,
    s: usize,
    p: usize,
    t: usize,
    object: Option<usize>,
) -> Result<(BallPoint, f64)> {
    let o = match (spec.is_object_dependent(), object) {
        (true, None) => {
            return Err(Error::Config(
                "the dot-product curvature needs an object to build the query".into(),
            ))
        }
        (_, o) => o.unwrap_or(s),
    };
    check_ids(params, s, p, o, t)?;
    let c = softplus(curvature_preactivation(params, spec, p, t, s, o)?);
    let q = Query::build(params, spec, s, p, t, c)?;
    Ok((BallPoint::new(q.point().to_vec(), c)?, c))
}

/// Score of a single fact.
pub fn score(
    params: &ModelParams,
    spec: CurvatureSpec,
    s: usize,
    p: usize,
    o: usize,
    t: usize,
) -> Result<f64> {
    check_ids(params, s, p, o, t)?;
    let c = softplus(curvature_preactivation(params, spec, p, t, s, o)?);
    Ok(Query::build(params, spec, s, p, t, c)?.score_object(params, o))
}

/// Scores for every candidate object, computing the query once per `(s, p, t)`
/// (once per candidate for the object-dependent curvature).
pub fn score_candidates(
    params: &ModelParams,
    spec: CurvatureSpec,
    s: usize,
    p: usize,
    t: usize,
    candidates: &[usize],
) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("empty candidate list".into()));
    }
    for &o in candidates {
        check_ids(params, s, p, o, t)?;
    }
    let mut out = Vec::with_capacity(candidates.len());
    score_candidates_into(params, spec, s, p, t, candidates.iter().copied(), &mut out)?;
    Ok(out)
}

/// Unchecked scoring loop shared by ranking and loss code.
pub(crate) fn score_candidates_into(
    params: &ModelParams,
    spec: CurvatureSpec,
    s: usize,
    p: usize,
    t: usize,
    candidates: impl Iterator<Item = usize>,
    out: &mut Vec<f64>,
) -> Result<()> {
    if spec.is_object_dependent() {
        for o in candidates {
            let c = softplus(curvature_preactivation(params, spec, p, t, s, o)?);
            out.push(Query::build(params, spec, s, p, t, c)?.score_object(params, o));
        }
    } else {
        let c = softplus(curvature_preactivation(params, spec, p, t, s, s)?);
        let q = Query::build(params, spec, s, p, t, c)?;
        out.extend(candidates.map(|o| q.score_object(params, o)));
    }
    Ok(())
}
