//! Quadruple files, vocabularies, inverse-relation augmentation and the
//! filtered-evaluation index.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::params::{VocabFingerprint, VocabSizes};

/// An indexed `(subject, predicate, object, timestamp)` fact. Inverse
/// relations occupy `|R|..2|R|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Quadruple {
    pub s: usize,
    pub p: usize,
    pub o: usize,
    pub t: usize,
}

impl Quadruple {
    pub fn new(s: usize, p: usize, o: usize, t: usize) -> Self {
        Self { s, p, o, t }
    }
}

/// One unindexed line of a split file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawQuadruple {
    pub subject: String,
    pub relation: String,
    pub object: String,
    pub timestamp: String,
}

impl RawQuadruple {
    pub fn new(subject: &str, relation: &str, object: &str, timestamp: &str) -> Self {
        Self {
            subject: subject.to_owned(),
            relation: relation.to_owned(),
            object: object.to_owned(),
            timestamp: timestamp.to_owned(),
        }
    }
}

/// Reads a four-column TSV split. Line order is preserved.
pub fn parse_split(path: impl AsRef<Path>) -> Result<Vec<RawQuadruple>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_split_str(&text, path)
}

pub(crate) fn parse_split_str(text: &str, path: &Path) -> Result<Vec<RawQuadruple>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let body = text.strip_suffix('\n').unwrap_or(text);
    if body.is_empty() {
        return Err(err(0, "empty split file".into()));
    }
    body.split('\n')
        .enumerate()
        .map(|(i, line)| {
            let line = line.strip_suffix('\r').unwrap_or(line);
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(err(
                    i + 1,
                    format!("expected 4 tab-separated fields, found {}", fields.len()),
                ));
            }
            if let Some(k) = fields.iter().position(|f| f.is_empty()) {
                return Err(err(i + 1, format!("field {} is empty", k + 1)));
            }
            Ok(RawQuadruple {
                subject: fields[0].to_owned(),
                relation: fields[1].to_owned(),
                object: fields[2].to_owned(),
                timestamp: fields[3].to_owned(),
            })
        })
        .collect()
}

/// A string ↔ index bijection in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Index {
    names: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Index {
    fn intern(&mut self, name: &str) -> usize {
        if let Some(&i) = self.ids.get(name) {
            return i;
        }
        let i = self.names.len();
        self.names.push(name.to_owned());
        self.ids.insert(name.to_owned(), i);
        i
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// SHA-256 over the names in index order, newline separated.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for n in &self.names {
            h.update(n.as_bytes());
            h.update(b"\n");
        }
        h.finalize()
            .iter()
            .fold(String::with_capacity(64), |mut s, b| {
                let _ = write!(s, "{b:02x}");
                s
            })
    }

    /// Two-column `index<TAB>string` dump.
    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for (i, n) in self.names.iter().enumerate() {
            let _ = writeln!(out, "{i}\t{n}");
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Entity, relation and timestamp vocabularies. Relation ids cover forward
/// relations only; inverse `p` is `p + |R|`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    pub entities: Index,
    pub relations: Index,
    pub timestamps: Index,
}

impl Vocabulary {
    pub fn sizes(&self) -> VocabSizes {
        VocabSizes::new(
            self.entities.len(),
            self.relations.len(),
            self.timestamps.len(),
        )
    }

    pub fn fingerprint(&self) -> VocabFingerprint {
        VocabFingerprint {
            entities: self.entities.fingerprint(),
            relations: self.relations.fingerprint(),
            timestamps: self.timestamps.fingerprint(),
        }
    }

    fn index(&self, raw: &RawQuadruple) -> Quadruple {
        // build_vocab has seen every string
        Quadruple {
            s: self.entities.id(&raw.subject).unwrap(),
            p: self.relations.id(&raw.relation).unwrap(),
            o: self.entities.id(&raw.object).unwrap(),
            t: self.timestamps.id(&raw.timestamp).unwrap(),
        }
    }

    /// Writes `entities.tsv`, `relations.tsv` and `timestamps.tsv` into `dir`.
    pub fn dump(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.entities.write_tsv(dir.join("entities.tsv"))?;
        self.relations.write_tsv(dir.join("relations.tsv"))?;
        self.timestamps.write_tsv(dir.join("timestamps.tsv"))
    }
}

/// Vocabulary over the union of all splits, in order of first occurrence
/// (train, then valid, then test; subject before object within a row).
pub fn build_vocab(
    train: &[RawQuadruple],
    valid: &[RawQuadruple],
    test: &[RawQuadruple],
) -> Vocabulary {
    let mut v = Vocabulary::default();
    for q in train.iter().chain(valid).chain(test) {
        v.entities.intern(&q.subject);
        v.relations.intern(&q.relation);
        v.entities.intern(&q.object);
        v.timestamps.intern(&q.timestamp);
    }
    v
}

/// Appends `⟨o, p + |R|, s, t⟩` for every `⟨s, p, o, t⟩`; output is the
/// originals followed by their inverses.
pub fn augment_inverse(quads: &[Quadruple], num_relations: usize) -> Result<Vec<Quadruple>> {
    if let Some(q) = quads.iter().find(|q| q.p >= num_relations) {
        return Err(Error::InvalidArgument(format!(
            "relation id {} ≥ |R| = {num_relations}; input already augmented?",
            q.p
        )));
    }
    let mut out = Vec::with_capacity(2 * quads.len());
    out.extend_from_slice(quads);
    out.extend(
        quads
            .iter()
            .map(|q| Quadruple::new(q.o, q.p + num_relations, q.s, q.t)),
    );
    Ok(out)
}

/// Inverse of relation `p` in the augmented id space.
pub fn inverse_relation(p: usize, num_relations: usize) -> usize {
    if p < num_relations {
        p + num_relations
    } else {
        p - num_relations
    }
}

/// Every known object for each `(s, p, t)` key.
#[derive(Debug, Clone, Default)]
pub struct FilterIndex {
    map: HashMap<(usize, usize, usize), Vec<usize>>,
}

impl FilterIndex {
    pub fn lookup(&self, s: usize, p: usize, t: usize) -> &[usize] {
        self.map.get(&(s, p, t)).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn contains(&self, s: usize, p: usize, o: usize, t: usize) -> bool {
        self.lookup(s, p, t).binary_search(&o).is_ok()
    }

    pub fn num_keys(&self) -> usize {
        self.map.len()
    }
}

/// Builds the filter from (augmented) splits.
pub fn build_filter_index(splits: &[&[Quadruple]]) -> FilterIndex {
    let mut map: HashMap<(usize, usize, usize), Vec<usize>> = HashMap::new();
    for q in splits.iter().flat_map(|s| s.iter()) {
        map.entry((q.s, q.p, q.t)).or_default().push(q.o);
    }
    for v in map.values_mut() {
        v.sort_unstable();
        v.dedup();
    }
    FilterIndex { map }
}

/// An ingested benchmark: vocabulary, indexed splits (not augmented) and the
/// filter over all augmented splits.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub train: Vec<Quadruple>,
    pub valid: Vec<Quadruple>,
    pub test: Vec<Quadruple>,
    pub filter: FilterIndex,
}

impl Dataset {
    pub fn from_raw(
        train: &[RawQuadruple],
        valid: &[RawQuadruple],
        test: &[RawQuadruple],
    ) -> Result<Self> {
        let vocab = build_vocab(train, valid, test);
        let index =
            |split: &[RawQuadruple]| split.iter().map(|r| vocab.index(r)).collect::<Vec<_>>();
        let (train, valid, test) = (index(train), index(valid), index(test));
        let r = vocab.relations.len();
        let filter = build_filter_index(&[
            &augment_inverse(&train, r)?,
            &augment_inverse(&valid, r)?,
            &augment_inverse(&test, r)?,
        ]);
        Ok(Self {
            vocab,
            train,
            valid,
            test,
            filter,
        })
    }

    /// Loads `train`, `valid` and `test` from `dir` (bare names or with a
    /// `.txt` / `.tsv` extension).
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let train = parse_split(split_path(dir, "train")?)?;
        let valid = parse_split(split_path(dir, "valid")?)?;
        let test = parse_split(split_path(dir, "test")?)?;
        Self::from_raw(&train, &valid, &test)
    }

    pub fn sizes(&self) -> VocabSizes {
        self.vocab.sizes()
    }

    pub fn num_relations(&self) -> usize {
        self.vocab.relations.len()
    }

    pub fn augmented(&self, split: &[Quadruple]) -> Vec<Quadruple> {
        // split ids come from this vocabulary, so augmentation cannot fail
        augment_inverse(split, self.num_relations())
            .expect("indexed split has forward relations only")
    }
}

/// Locates a split file by stem.
pub fn split_path(dir: &Path, stem: &str) -> Result<PathBuf> {
    for name in [
        stem.to_owned(),
        format!("{stem}.txt"),
        format!("{stem}.tsv"),
    ] {
        let p = dir.join(&name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::io(
        dir.join(stem),
        std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no `{stem}` split in {}", dir.display()),
        ),
    ))
}

/// Writes splits as TSV files named `train.txt`, `valid.txt`, `test.txt`.
pub fn write_splits(dir: impl AsRef<Path>, splits: [(&str, &[RawQuadruple]); 3]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, rows) in splits {
        let path = dir.join(format!("{name}.txt"));
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        for r in rows {
            writeln!(
                f,
                "{}\t{}\t{}\t{}",
                r.subject, r.relation, r.object, r.timestamp
            )
            .map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}
