//! Trainable arrays, initialisation, parameter accounting and checkpoints.
//!
//! Every array is stored row-major in a flat `Vec<f64>`. Relation arrays have
//! `2|R|` rows: forward relations first, their inverses after.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const INIT_SCALE: f64 = 1e-3;

/// Which curvature definition (and optional time translation) is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CurvatureSpec {
    /// `softplus(μ_p)`, the time-unaware baseline.
    RelationOnly,
    /// `softplus(μ_p·τ_t)`.
    RelationTime,
    /// `softplus(μ_p·τ_t)` plus a per-timestamp Möbius translation.
    RelationTimePlusTranslation,
    /// `softplus(μ_p·τ_t·⟨e_s, e_o⟩)`.
    RelationTimeDotProduct,
}

impl CurvatureSpec {
    pub const ALL: [CurvatureSpec; 4] = [
        CurvatureSpec::RelationOnly,
        CurvatureSpec::RelationTime,
        CurvatureSpec::RelationTimePlusTranslation,
        CurvatureSpec::RelationTimeDotProduct,
    ];

    pub fn uses_time_curvature(self) -> bool {
        !matches!(self, CurvatureSpec::RelationOnly)
    }

    pub fn uses_time_translation(self) -> bool {
        matches!(self, CurvatureSpec::RelationTimePlusTranslation)
    }

    /// Whether the curvature depends on the candidate object.
    pub fn is_object_dependent(self) -> bool {
        matches!(self, CurvatureSpec::RelationTimeDotProduct)
    }

    pub fn name(self) -> &'static str {
        match self {
            CurvatureSpec::RelationOnly => "relation",
            CurvatureSpec::RelationTime => "relation-time",
            CurvatureSpec::RelationTimePlusTranslation => "relation-time+translation",
            CurvatureSpec::RelationTimeDotProduct => "relation-time-dot",
        }
    }
}

impl fmt::Display for CurvatureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CurvatureSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown curvature variant `{s}`")))
    }
}

/// Vocabulary sizes. `relations` counts forward relations only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSizes {
    pub entities: usize,
    pub relations: usize,
    pub timestamps: usize,
}

impl VocabSizes {
    pub fn new(entities: usize, relations: usize, timestamps: usize) -> Self {
        Self {
            entities,
            relations,
            timestamps,
        }
    }

    /// Relation rows after inverse augmentation.
    pub fn relation_rows(&self) -> usize {
        2 * self.relations
    }
}

/// Identifies one of the parameter arrays, in checkpoint order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    EntityEmb,
    EntityBias,
    RelEmb,
    RelRot,
    RelRef,
    RelCtx,
    RelCurv,
    TimeCurv,
    TimeTrans,
}

impl ParamKind {
    pub const ALL: [ParamKind; 9] = [
        ParamKind::EntityEmb,
        ParamKind::EntityBias,
        ParamKind::RelEmb,
        ParamKind::RelRot,
        ParamKind::RelRef,
        ParamKind::RelCtx,
        ParamKind::RelCurv,
        ParamKind::TimeCurv,
        ParamKind::TimeTrans,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamKind::EntityEmb => "entity_emb",
            ParamKind::EntityBias => "entity_bias",
            ParamKind::RelEmb => "rel_emb",
            ParamKind::RelRot => "rel_rot",
            ParamKind::RelRef => "rel_ref",
            ParamKind::RelCtx => "rel_ctx",
            ParamKind::RelCurv => "rel_curv",
            ParamKind::TimeCurv => "time_curv",
            ParamKind::TimeTrans => "time_trans",
        }
    }
}

/// All trainable arrays of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dim: usize,
    pub sizes: VocabSizes,
    pub entity_emb: Vec<f64>,
    pub entity_bias: Vec<f64>,
    pub rel_emb: Vec<f64>,
    pub rel_rot: Vec<f64>,
    pub rel_ref: Vec<f64>,
    pub rel_ctx: Vec<f64>,
    pub rel_curv: Vec<f64>,
    pub time_curv: Option<Vec<f64>>,
    pub time_trans: Option<Vec<f64>>,
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "embedding dimension must be even and positive, got {dim}"
        )));
    }
    Ok(())
}

impl ModelParams {
    /// All-zero arrays with the layout required by `spec`.
    pub fn zeros(sizes: VocabSizes, dim: usize, spec: CurvatureSpec) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self::zeros_unchecked(
            sizes,
            dim,
            spec.uses_time_curvature(),
            spec.uses_time_translation(),
        ))
    }

    fn zeros_unchecked(sizes: VocabSizes, dim: usize, time_curv: bool, time_trans: bool) -> Self {
        let e = sizes.entities;
        let r = sizes.relation_rows();
        let t = sizes.timestamps;
        Self {
            dim,
            sizes,
            entity_emb: vec![0.0; e * dim],
            entity_bias: vec![0.0; e],
            rel_emb: vec![0.0; r * dim],
            rel_rot: vec![0.0; r * dim],
            rel_ref: vec![0.0; r * dim],
            rel_ctx: vec![0.0; r * dim],
            rel_curv: vec![0.0; r],
            time_curv: time_curv.then(|| vec![0.0; t]),
            time_trans: time_trans.then(|| vec![0.0; t * dim]),
        }
    }

    /// Zero arrays with exactly the same shapes (and optional arrays) as `self`.
    pub fn zeros_like(&self) -> Self {
        Self::zeros_unchecked(
            self.sizes,
            self.dim,
            self.time_curv.is_some(),
            self.time_trans.is_some(),
        )
    }

    /// Allocates `time_curv` filled with `value` if it is absent.
    pub fn with_time_curvature(mut self, value: f64) -> Self {
        if self.time_curv.is_none() {
            self.time_curv = Some(vec![value; self.sizes.timestamps]);
        }
        self
    }

    pub fn entity(&self, i: usize) -> &[f64] {
        &self.entity_emb[i * self.dim..(i + 1) * self.dim]
    }

    pub fn relation(&self, p: usize) -> &[f64] {
        &self.rel_emb[p * self.dim..(p + 1) * self.dim]
    }

    pub fn rotation(&self, p: usize) -> &[f64] {
        &self.rel_rot[p * self.dim..(p + 1) * self.dim]
    }

    pub fn reflection(&self, p: usize) -> &[f64] {
        &self.rel_ref[p * self.dim..(p + 1) * self.dim]
    }

    pub fn context(&self, p: usize) -> &[f64] {
        &self.rel_ctx[p * self.dim..(p + 1) * self.dim]
    }

    pub fn time_translation(&self, t: usize) -> Option<&[f64]> {
        self.time_trans
            .as_deref()
            .map(|v| &v[t * self.dim..(t + 1) * self.dim])
    }

    pub fn array(&self, kind: ParamKind) -> Option<&[f64]> {
        Some(match kind {
            ParamKind::EntityEmb => &self.entity_emb,
            ParamKind::EntityBias => &self.entity_bias,
            ParamKind::RelEmb => &self.rel_emb,
            ParamKind::RelRot => &self.rel_rot,
            ParamKind::RelRef => &self.rel_ref,
            ParamKind::RelCtx => &self.rel_ctx,
            ParamKind::RelCurv => &self.rel_curv,
            ParamKind::TimeCurv => return self.time_curv.as_deref(),
            ParamKind::TimeTrans => return self.time_trans.as_deref(),
        })
    }

    pub fn array_mut(&mut self, kind: ParamKind) -> Option<&mut [f64]> {
        Some(match kind {
            ParamKind::EntityEmb => &mut self.entity_emb,
            ParamKind::EntityBias => &mut self.entity_bias,
            ParamKind::RelEmb => &mut self.rel_emb,
            ParamKind::RelRot => &mut self.rel_rot,
            ParamKind::RelRef => &mut self.rel_ref,
            ParamKind::RelCtx => &mut self.rel_ctx,
            ParamKind::RelCurv => &mut self.rel_curv,
            ParamKind::TimeCurv => return self.time_curv.as_deref_mut(),
            ParamKind::TimeTrans => return self.time_trans.as_deref_mut(),
        })
    }

    /// Allocated arrays in declared order.
    pub fn arrays(&self) -> impl Iterator<Item = (ParamKind, &[f64])> {
        ParamKind::ALL
            .into_iter()
            .filter_map(move |k| self.array(k).map(|a| (k, a)))
    }

    /// Total number of allocated scalars.
    pub fn num_scalars(&self) -> usize {
        self.arrays().map(|(_, a)| a.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.arrays().all(|(_, a)| a.iter().all(|v| v.is_finite()))
    }

    /// Adds `other` elementwise. Shapes must match.
    pub fn add_assign(&mut self, other: &ModelParams) {
        for kind in ParamKind::ALL {
            if let (Some(dst), Some(src)) = (self.array_mut(kind), other.array(kind)) {
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for kind in ParamKind::ALL {
            if let Some(a) = self.array_mut(kind) {
                a.iter_mut().for_each(|v| *v *= factor);
            }
        }
    }

    pub fn fill_zero(&mut self) {
        for kind in ParamKind::ALL {
            if let Some(a) = self.array_mut(kind) {
                a.fill(0.0);
            }
        }
    }

    /// Checks that allocated arrays match `spec` and the declared shapes.
    pub fn validate(&self, spec: CurvatureSpec) -> Result<()> {
        check_dim(self.dim)?;
        let reference = Self::zeros_unchecked(
            self.sizes,
            self.dim,
            self.time_curv.is_some(),
            self.time_trans.is_some(),
        );
        for kind in ParamKind::ALL {
            let got = self.array(kind).map(<[f64]>::len);
            let want = reference.array(kind).map(<[f64]>::len);
            if got != want {
                return Err(Error::Config(format!(
                    "{} has {:?} entries, expected {:?}",
                    kind.name(),
                    got,
                    want
                )));
            }
        }
        if spec.uses_time_curvature() && self.time_curv.is_none() {
            return Err(Error::Config(format!(
                "variant {spec} needs time curvatures"
            )));
        }
        if spec.uses_time_translation() && self.time_trans.is_none() {
            return Err(Error::Config(format!(
                "variant {spec} needs time translations"
            )));
        }
        Ok(())
    }
}

/// Deterministic initialisation from `seed`.
///
/// Embeddings and attention contexts are drawn from `U(−0.001, 0.001)`,
/// Givens parameters from `U(−π, π)`; relation curvatures start at 0 and
/// time curvatures at 1, so a time-aware model starts equal to the
/// relation-only one.
pub fn init_params(
    sizes: VocabSizes,
    dim: usize,
    spec: CurvatureSpec,
    seed: u64,
) -> Result<ModelParams> {
    let mut params = ModelParams::zeros(sizes, dim, spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fill =
        |a: &mut [f64], lo: f64, hi: f64| a.iter_mut().for_each(|v| *v = rng.gen_range(lo..hi));
    fill(&mut params.entity_emb, -INIT_SCALE, INIT_SCALE);
    fill(&mut params.rel_emb, -INIT_SCALE, INIT_SCALE);
    fill(&mut params.rel_rot, -PI, PI);
    fill(&mut params.rel_ref, -PI, PI);
    fill(&mut params.rel_ctx, -INIT_SCALE, INIT_SCALE);
    if let Some(t) = params.time_curv.as_mut() {
        t.fill(1.0);
    }
    Ok(params)
}

/// Number of trainable scalars for `spec`.
///
/// The relation-only and relation-time rows follow
/// `(|E| + 2|R|)·n + |E| + 2|R|(1 + 3n)` and that count plus `|T|`; the
/// translation ablation adds `|T|·n`.
pub fn count_params(sizes: VocabSizes, dim: usize, spec: CurvatureSpec) -> u64 {
    let (e, r, t, n) = (
        sizes.entities as u64,
        sizes.relations as u64,
        sizes.timestamps as u64,
        dim as u64,
    );
    let base = (e + 2 * r) * n + e + 2 * r * (1 + 3 * n);
    let time = if spec.uses_time_curvature() { t } else { 0 };
    let trans = if spec.uses_time_translation() {
        t * n
    } else {
        0
    };
    base + time + trans
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HERC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Hashes of the three vocabularies a checkpoint was trained against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabFingerprint {
    pub entities: String,
    pub relations: String,
    pub timestamps: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub vocab: VocabFingerprint,
    pub sizes: VocabSizes,
    pub dim: usize,
    pub seed: u64,
    pub epoch: usize,
    #[serde(default)]
    pub valid_mrr: Option<f64>,
}

impl CheckpointMeta {
    pub fn verify_vocabulary(&self, found: &VocabFingerprint) -> Result<()> {
        let pairs = [
            ("entity", &self.vocab.entities, &found.entities),
            ("relation", &self.vocab.relations, &found.relations),
            ("timestamp", &self.vocab.timestamps, &found.timestamps),
        ];
        for (which, expected, found) in pairs {
            if expected != found {
                return Err(Error::VocabularyMismatch {
                    which,
                    expected: expected.clone(),
                    found: found.clone(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: CurvatureSpec,
    meta: CheckpointMeta,
}

/// Serialises parameters as `"HERC"`, a little-endian `u32` version, a
/// length-prefixed JSON metadata block, then each of the nine arrays in
/// declared order as a presence byte, a `u64` length and raw `f64` values.
pub fn save_checkpoint(
    params: &ModelParams,
    spec: CurvatureSpec,
    meta: &CheckpointMeta,
) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        spec,
        meta: meta.clone(),
    })?;
    let mut out = Vec::with_capacity(16 + header.len() + 8 * params.num_scalars() + 9 * 9);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for kind in ParamKind::ALL {
        match params.array(kind) {
            Some(a) => {
                out.push(1);
                out.extend_from_slice(&(a.len() as u64).to_le_bytes());
                for v in a {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            None => out.push(0),
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Checkpoint(format!(
                    "truncated while reading {what} at byte {}",
                    self.pos
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parses a checkpoint produced by [`save_checkpoint`].
pub fn load_checkpoint(bytes: &[u8]) -> Result<(ModelParams, CurvatureSpec, CheckpointMeta)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let header_len = r.u64("metadata length")? as usize;
    let header: Header = serde_json::from_slice(r.take(header_len, "metadata")?)
        .map_err(|e| Error::Checkpoint(format!("corrupt metadata: {e}")))?;
    let Header { spec, meta } = header;
    check_dim(meta.dim).map_err(|e| Error::Checkpoint(e.to_string()))?;

    let mut arrays: Vec<Option<Vec<f64>>> = Vec::with_capacity(ParamKind::ALL.len());
    for kind in ParamKind::ALL {
        match r.take(1, kind.name())?[0] {
            0 => arrays.push(None),
            1 => {
                let len = r.u64(kind.name())? as usize;
                let raw = r.take(
                    len.checked_mul(8)
                        .ok_or_else(|| Error::Checkpoint("length overflow".into()))?,
                    kind.name(),
                )?;
                arrays.push(Some(
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ));
            }
            b => {
                return Err(Error::Checkpoint(format!(
                    "bad presence flag {b} for {}",
                    kind.name()
                )))
            }
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after last array",
            bytes.len() - r.pos
        )));
    }

    let mut it = arrays.into_iter();
    let mut required = |kind: ParamKind| {
        it.next()
            .flatten()
            .ok_or_else(|| Error::Checkpoint(format!("missing required array {}", kind.name())))
    };
    let entity_emb = required(ParamKind::EntityEmb)?;
    let entity_bias = required(ParamKind::EntityBias)?;
    let rel_emb = required(ParamKind::RelEmb)?;
    let rel_rot = required(ParamKind::RelRot)?;
    let rel_ref = required(ParamKind::RelRef)?;
    let rel_ctx = required(ParamKind::RelCtx)?;
    let rel_curv = required(ParamKind::RelCurv)?;
    let time_curv = it.next().flatten();
    let time_trans = it.next().flatten();
    let params = ModelParams {
        dim: meta.dim,
        sizes: meta.sizes,
        entity_emb,
        entity_bias,
        rel_emb,
        rel_rot,
        rel_ref,
        rel_ctx,
        rel_curv,
        time_curv,
        time_trans,
    };
    params
        .validate(spec)
        .map_err(|e| Error::Checkpoint(format!("inconsistent arrays: {e}")))?;
    Ok((params, spec, meta))
}
