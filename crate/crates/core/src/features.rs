//! Sparse overlap features for labeled triples.
//!
//! Column `j` of a row for triple `(person, o)` holds the range-normalized
//! `C_o(r_j)` of pooled activity `r_j` when the person has at least one
//! outgoing `r_j` triple and `r_j` is in `R_o`; otherwise it is zero.
//! Normalization bounds are the min and max of `C_o(r)` over every object `o`
//! of the relation and every pooled `r` in `R_o`.
//!
//! # Export format
//!
//! A matrix is written as two tab-separated files. The entries file is
//!
//! ```text
//! #row  col  value
//! 0  3  0.25
//! ```
//!
//! and the sidecar `<entries>.meta` carries shape, column names and rows:
//!
//! ```text
//! #relsifter-matrix  1
//! shape  <rows>  <cols>
//! col  <j>  <name>
//! row  <i>  <person>  <object>  <resolved 0|1>  <label 0-7 | ->
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::kg_store::{escape_field, resolve_entity, unescape_field, AliasTable, KnowledgeGraph, PredicateId};
use crate::pertinence::{pool_features, PertinenceTable, PooledFeatureSet};

pub const MAX_SCORE: u8 = 7;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledTriple {
    pub person: String,
    pub object: String,
    pub score: Option<u8>,
}

impl LabeledTriple {
    pub fn new(person: impl Into<String>, object: impl Into<String>, score: Option<u8>) -> Self {
        LabeledTriple {
            person: person.into(),
            object: object.into(),
            score,
        }
    }
}

/// Reads `person<TAB>object[<TAB>score]` lines. Blank and `#` lines are skipped.
pub fn read_labeled_triples<R: BufRead>(source: R) -> Result<Vec<LabeledTriple>> {
    let mut out = Vec::new();
    for (n, line) in source.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let loc = || format!("triples:{}", n + 1);
        let fields: Vec<&str> = line.split('\t').collect();
        let (person, object, score) = match fields.as_slice() {
            [p, o] => (*p, *o, None),
            [p, o, s] => (*p, *o, Some(*s)),
            _ => return Err(Error::parse(loc(), "expected 2 or 3 tab-separated fields")),
        };
        if person.is_empty() || object.is_empty() {
            return Err(Error::parse(loc(), "empty person or object"));
        }
        let score = match score.map(str::trim).filter(|s| !s.is_empty()) {
            None => None,
            Some(s) => Some(parse_score(s).ok_or_else(|| {
                Error::parse(loc(), format!("score `{s}` is not an integer in 0-7"))
            })?),
        };
        out.push(LabeledTriple::new(unescape_field(person), unescape_field(object), score));
    }
    Ok(out)
}

pub(crate) fn parse_score(s: &str) -> Option<u8> {
    s.parse::<u8>().ok().filter(|&v| v <= MAX_SCORE)
}

pub fn write_labeled_triples<W: Write>(mut out: W, triples: &[LabeledTriple]) -> Result<()> {
    for t in triples {
        write!(out, "{}\t{}", escape_field(&t.person), escape_field(&t.object))?;
        match t.score {
            Some(s) => writeln!(out, "\t{s}")?,
            None => writeln!(out)?,
        }
    }
    out.flush()?;
    Ok(())
}

/// Pooled columns plus the normalization bounds of one relation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpace {
    pub pooled: PooledFeatureSet,
    pub norm_lo: f64,
    pub norm_hi: f64,
    pub column_names: Vec<String>,
    column_of: HashMap<PredicateId, usize>,
}

impl FeatureSpace {
    pub fn cols(&self) -> usize {
        self.pooled.len()
    }

    pub fn column_of(&self, activity: PredicateId) -> Option<usize> {
        self.column_of.get(&activity).copied()
    }

    pub fn is_degenerate(&self) -> bool {
        self.norm_lo == self.norm_hi
    }

    /// Min-max scaling into `[0, 1]`; every value maps to 1 when the bounds coincide.
    pub fn normalize(&self, combined: f64) -> f64 {
        if self.is_degenerate() {
            1.0
        } else {
            ((combined - self.norm_lo) / (self.norm_hi - self.norm_lo)).clamp(0.0, 1.0)
        }
    }
}

pub fn build_space(table: &PertinenceTable, k: usize) -> Result<FeatureSpace> {
    let pooled = pool_features(table, k)?;
    let column_of: HashMap<PredicateId, usize> = pooled
        .activities
        .iter()
        .enumerate()
        .map(|(j, &a)| (a, j))
        .collect();
    let column_names = pooled
        .activities
        .iter()
        .map(|&a| table.activity_name(a).unwrap_or_default().to_owned())
        .collect();

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for profile in &table.objects {
        for &a in &pooled.activities {
            if let Some(score) = profile.score(a) {
                lo = lo.min(score.combined);
                hi = hi.max(score.combined);
            }
        }
    }
    if !lo.is_finite() {
        lo = 0.0;
        hi = 0.0;
    }
    if lo == hi {
        log::warn!(
            "relation `{}`: degenerate normalization bounds ({lo}); all features map to 1",
            table.relation_name
        );
    }
    Ok(FeatureSpace {
        pooled,
        norm_lo: lo,
        norm_hi: hi,
        column_names,
        column_of,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRow {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseRow {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn view(&self) -> RowView<'_> {
        RowView {
            indices: &self.indices,
            values: &self.values,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RowView<'a> {
    pub indices: &'a [usize],
    pub values: &'a [f64],
}

impl<'a> RowView<'a> {
    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(self.values)
            .map(|(&j, &v)| dense[j] * v)
            .sum()
    }

    pub fn get(&self, col: usize) -> f64 {
        match self.indices.binary_search(&col) {
            Ok(i) => self.values[i],
            Err(_) => 0.0,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + 'a {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowMeta {
    pub person: String,
    pub object: String,
    pub resolved: bool,
}

/// Feature row plus its resolution flag.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturizedRow {
    pub row: SparseRow,
    pub resolved: bool,
}

/// Row for one triple. Unresolved person or object (or an object the table
/// does not know) yields an empty row flagged unresolved.
pub fn featurize(
    triple: &LabeledTriple,
    g: &KnowledgeGraph,
    space: &FeatureSpace,
    table: &PertinenceTable,
    aliases: &AliasTable,
) -> FeaturizedRow {
    let person = resolve_entity(g, &triple.person, aliases).id();
    let profile = resolve_entity(g, &triple.object, aliases)
        .id()
        .and_then(|o| table.profile(o));
    let (person, profile) = match (person, profile) {
        (Some(p), Some(prof)) => (p, prof),
        _ => {
            return FeaturizedRow {
                row: SparseRow::default(),
                resolved: false,
            }
        }
    };

    let mut entries: Vec<(usize, f64)> = Vec::new();
    let mut last = None;
    for &(activity, _) in g.outgoing(person) {
        if last == Some(activity) {
            continue;
        }
        last = Some(activity);
        let (Some(col), Some(score)) = (space.column_of(activity), profile.score(activity)) else {
            continue;
        };
        let value = space.normalize(score.combined);
        if value != 0.0 {
            entries.push((col, value));
        }
    }
    entries.sort_unstable_by_key(|&(c, _)| c);
    FeaturizedRow {
        row: SparseRow {
            indices: entries.iter().map(|&(c, _)| c).collect(),
            values: entries.iter().map(|&(_, v)| v).collect(),
        },
        resolved: true,
    }
}

/// CSR feature matrix with labels and per-row provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
    pub labels: Vec<Option<u8>>,
    pub meta: Vec<RowMeta>,
    pub column_names: Vec<String>,
}

impl FeatureMatrix {
    pub fn new(column_names: Vec<String>) -> Self {
        FeatureMatrix {
            cols: column_names.len(),
            indptr: vec![0],
            indices: Vec::new(),
            values: Vec::new(),
            labels: Vec::new(),
            meta: Vec::new(),
            column_names,
        }
    }

    /// Unnamed columns, for synthetic data.
    pub fn with_cols(cols: usize) -> Self {
        Self::new((0..cols).map(|j| format!("f{j}")).collect())
    }

    pub fn rows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn push_row(&mut self, row: SparseRow, label: Option<u8>, meta: RowMeta) -> Result<()> {
        if row.indices.len() != row.values.len() {
            return Err(Error::Contract("row index/value length mismatch".into()));
        }
        if row.indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Contract("row indices must be strictly increasing".into()));
        }
        if row.indices.last().is_some_and(|&j| j >= self.cols) {
            return Err(Error::Contract(format!("column out of range (cols = {})", self.cols)));
        }
        if !meta.resolved && row.nnz() > 0 {
            return Err(Error::Contract("unresolved rows must be empty".into()));
        }
        if label.is_some_and(|l| l > MAX_SCORE) {
            return Err(Error::Contract(format!("label {label:?} outside 0-7")));
        }
        self.indices.extend_from_slice(&row.indices);
        self.values.extend_from_slice(&row.values);
        self.indptr.push(self.indices.len());
        self.labels.push(label);
        self.meta.push(meta);
        Ok(())
    }

    /// Convenience for tests and synthetic data: a resolved row from dense values.
    pub fn push_dense(&mut self, dense: &[f64], label: Option<u8>) -> Result<()> {
        let mut row = SparseRow::default();
        for (j, &v) in dense.iter().enumerate() {
            if v != 0.0 {
                row.indices.push(j);
                row.values.push(v);
            }
        }
        let i = self.rows();
        self.push_row(
            row,
            label,
            RowMeta {
                person: format!("row{i}"),
                object: String::new(),
                resolved: true,
            },
        )
    }

    pub fn row(&self, i: usize) -> RowView<'_> {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        RowView {
            indices: &self.indices[a..b],
            values: &self.values[a..b],
        }
    }

    pub fn is_resolved(&self, i: usize) -> bool {
        self.meta[i].resolved
    }

    /// Labels of every row; errors if any row lacks one.
    pub fn required_labels(&self) -> Result<Vec<u8>> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, l)| l.ok_or_else(|| Error::Contract(format!("row {i} has no label"))))
            .collect()
    }

    /// New matrix holding `rows` in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let mut out = FeatureMatrix::new(self.column_names.clone());
        for &i in rows {
            let v = self.row(i);
            out.indices.extend_from_slice(v.indices);
            out.values.extend_from_slice(v.values);
            out.indptr.push(out.indices.len());
            out.labels.push(self.labels[i]);
            out.meta.push(self.meta[i].clone());
        }
        out
    }

    pub fn dense_row(&self, i: usize) -> Vec<f64> {
        let mut dense = vec![0.0; self.cols];
        for (j, v) in self.row(i).iter() {
            dense[j] = v;
        }
        dense
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows()).flat_map(move |i| self.row(i).iter().map(move |(j, v)| (i, j, v)))
    }

    pub fn meta_path(entries: &Path) -> PathBuf {
        let mut s = entries.as_os_str().to_owned();
        s.push(".meta");
        PathBuf::from(s)
    }

    pub fn write_entries<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "#row\tcol\tvalue")?;
        for (i, j, v) in self.entries() {
            writeln!(out, "{i}\t{j}\t{v}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_meta<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "#relsifter-matrix\t1")?;
        writeln!(out, "shape\t{}\t{}", self.rows(), self.cols)?;
        for (j, name) in self.column_names.iter().enumerate() {
            writeln!(out, "col\t{j}\t{}", escape_field(name))?;
        }
        for (i, m) in self.meta.iter().enumerate() {
            let label = self.labels[i].map_or_else(|| "-".to_owned(), |l| l.to_string());
            writeln!(
                out,
                "row\t{i}\t{}\t{}\t{}\t{label}",
                escape_field(&m.person),
                escape_field(&m.object),
                u8::from(m.resolved)
            )?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_files(&self, entries_path: &Path) -> Result<()> {
        let file = File::create(entries_path).map_err(|e| Error::io(entries_path, e))?;
        self.write_entries(BufWriter::new(file))?;
        let meta_path = Self::meta_path(entries_path);
        let file = File::create(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        self.write_meta(BufWriter::new(file))
    }

    pub fn read_files(entries_path: &Path) -> Result<Self> {
        let meta_path = Self::meta_path(entries_path);
        let meta = File::open(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let entries = File::open(entries_path).map_err(|e| Error::io(entries_path, e))?;
        Self::read(BufReader::new(entries), BufReader::new(meta))
    }

    pub fn read<E: BufRead, M: BufRead>(entries: E, meta: M) -> Result<Self> {
        let mut lines = meta.lines();
        match lines.next().transpose()? {
            Some(h) if h == "#relsifter-matrix\t1" => {}
            _ => return Err(Error::parse("matrix meta:1", "bad header")),
        }
        let mut shape = None;
        let mut column_names = Vec::new();
        let mut rows_meta: Vec<(RowMeta, Option<u8>)> = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            let loc = || format!("matrix meta:{}", n + 2);
            let num = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::parse(loc(), format!("bad number `{s}`")))
            };
            let fields: Vec<&str> = line.split('\t').collect();
            match fields.as_slice() {
                ["shape", r, c] => shape = Some((num(r)?, num(c)?)),
                ["col", j, name] => {
                    if num(j)? != column_names.len() {
                        return Err(Error::parse(loc(), "columns out of order"));
                    }
                    column_names.push(unescape_field(name));
                }
                ["row", i, person, object, resolved, label] => {
                    if num(i)? != rows_meta.len() {
                        return Err(Error::parse(loc(), "rows out of order"));
                    }
                    let label = match *label {
                        "-" => None,
                        s => Some(parse_score(s).ok_or_else(|| Error::parse(loc(), "bad label"))?),
                    };
                    let resolved = match *resolved {
                        "0" => false,
                        "1" => true,
                        _ => return Err(Error::parse(loc(), "bad resolved flag")),
                    };
                    rows_meta.push((
                        RowMeta {
                            person: unescape_field(person),
                            object: unescape_field(object),
                            resolved,
                        },
                        label,
                    ));
                }
                _ => return Err(Error::parse(loc(), "unrecognized record")),
            }
        }
        let (rows, cols) = shape.ok_or_else(|| Error::parse("matrix meta", "missing shape"))?;
        if cols != column_names.len() || rows != rows_meta.len() {
            return Err(Error::parse("matrix meta", "shape disagrees with records"));
        }

        let mut per_row: Vec<SparseRow> = vec![SparseRow::default(); rows];
        for (n, line) in entries.lines().enumerate() {
            let line = line?;
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let loc = || format!("matrix entries:{}", n + 1);
            let fields: Vec<&str> = line.split('\t').collect();
            let [i, j, v] = fields.as_slice() else {
                return Err(Error::parse(loc(), "expected row, col, value"));
            };
            let i: usize = i.parse().map_err(|_| Error::parse(loc(), "bad row"))?;
            let j: usize = j.parse().map_err(|_| Error::parse(loc(), "bad col"))?;
            let v: f64 = v.parse().map_err(|_| Error::parse(loc(), "bad value"))?;
            if i >= rows || j >= cols || !(0.0..=1.0).contains(&v) {
                return Err(Error::parse(loc(), "entry out of range"));
            }
            per_row[i].indices.push(j);
            per_row[i].values.push(v);
        }

        let mut m = FeatureMatrix::new(column_names);
        for (row, (meta, label)) in per_row.into_iter().zip(rows_meta) {
            m.push_row(row, label, meta)
                .map_err(|e| Error::parse("matrix entries", e.to_string()))?;
        }
        Ok(m)
    }
}

/// One row per input triple, in input order.
pub fn build_matrix(
    triples: &[LabeledTriple],
    g: &KnowledgeGraph,
    space: &FeatureSpace,
    table: &PertinenceTable,
    aliases: &AliasTable,
) -> Result<FeatureMatrix> {
    let mut m = FeatureMatrix::new(space.column_names.clone());
    for t in triples {
        let f = featurize(t, g, space, table, aliases);
        m.push_row(
            f.row,
            t.score,
            RowMeta {
                person: t.person.clone(),
                object: t.object.clone(),
                resolved: f.resolved,
            },
        )?;
    }
    let unresolved = m.meta.iter().filter(|r| !r.resolved).count();
    log::info!(
        "featurized {} triples ({} unresolved) into {} columns, {} nonzeros",
        m.rows(),
        unresolved,
        m.cols(),
        m.nnz()
    );
    Ok(m)
}
