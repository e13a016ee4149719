#![allow(dead_code)]

use hercules::data::{build_filter_index, FilterIndex, Quadruple};
use hercules::model::score;
use hercules::params::init_params;
use hercules::{CurvatureSpec, ModelParams, VocabSizes};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random toy graph with augmented facts, its filter, and spread-out
/// parameters.
pub struct Toy {
    pub params: ModelParams,
    pub spec: CurvatureSpec,
    pub queries: Vec<Quadruple>,
    pub filter: FilterIndex,
}

pub fn random_toy(seed: u64, spec: CurvatureSpec) -> Toy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e = rng.gen_range(3..=12);
    let r = rng.gen_range(1..=3);
    let t = rng.gen_range(1..=4);
    let dim = 2 * rng.gen_range(1..=3);
    let mut params = init_params(VocabSizes::new(e, r, t), dim, spec, seed).unwrap();
    for v in params
        .entity_emb
        .iter_mut()
        .chain(params.rel_emb.iter_mut())
        .chain(params.rel_ctx.iter_mut())
    {
        *v = rng.gen_range(-0.8..0.8);
    }
    for v in params
        .rel_curv
        .iter_mut()
        .chain(params.entity_bias.iter_mut())
    {
        *v = rng.gen_range(-1.0..1.0);
    }
    if let Some(tc) = params.time_curv.as_mut() {
        tc.iter_mut().for_each(|v| *v = rng.gen_range(-2.0..2.0));
    }
    if let Some(tt) = params.time_trans.as_mut() {
        tt.iter_mut().for_each(|v| *v = rng.gen_range(-0.3..0.3));
    }
    // occasional exact ties through duplicated entity rows
    if e > 4 && rng.gen_bool(0.3) {
        let (a, b) = (0, 1);
        for i in 0..dim {
            params.entity_emb[b * dim + i] = params.entity_emb[a * dim + i];
        }
        params.entity_bias[b] = params.entity_bias[a];
    }
    let n_facts = rng.gen_range(1..=2 * e);
    let facts: Vec<Quadruple> = (0..n_facts)
        .map(|_| {
            Quadruple::new(
                rng.gen_range(0..e),
                rng.gen_range(0..r),
                rng.gen_range(0..e),
                rng.gen_range(0..t),
            )
        })
        .collect();
    let queries = hercules::data::augment_inverse(&facts, r).unwrap();
    let filter = build_filter_index(&[&queries]);
    Toy {
        params,
        spec,
        queries,
        filter,
    }
}

/// Rank by materialising every candidate's score one fact at a time, pushing
/// known answers to −∞ and sorting; ties favour the gold.
pub fn oracle_rank(toy: &Toy, q: &Quadruple) -> usize {
    let mut list: Vec<(f64, bool)> = (0..toy.params.sizes.entities)
        .map(|o| {
            let known = o != q.o && toy.filter.contains(q.s, q.p, o, q.t);
            let s = if known {
                f64::NEG_INFINITY
            } else {
                score(&toy.params, toy.spec, q.s, q.p, o, q.t).unwrap()
            };
            (s, o == q.o)
        })
        .collect();
    // descending by score, gold first among equals
    list.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(b.1.cmp(&a.1)));
    1 + list.iter().position(|x| x.1).unwrap()
}

pub fn raw_rank(toy: &Toy, q: &Quadruple) -> usize {
    let gold = score(&toy.params, toy.spec, q.s, q.p, q.o, q.t).unwrap();
    1 + (0..toy.params.sizes.entities)
        .filter(|&o| score(&toy.params, toy.spec, q.s, q.p, o, q.t).unwrap() > gold)
        .count()
}
