//! TF-IDF features from entity abstracts, as an alternative to graph activities.
//!
//! Text is lowercased, split on non-alphanumeric characters, stripped of
//! stopwords and stemmed. Each object is characterized by the concatenated
//! abstracts of its members: terms are ranked by `count * ln(N / df)` (`N`
//! abstracts in the corpus, `df` abstracts containing the term) and the top-k
//! of every object are pooled into columns. A person's row holds the TF-IDF of
//! each pooled term in their own abstract, min-max scaled over the corpus.
//!
//! # Stemmer
//!
//! Rules are tried in order and the first match is applied; the process
//! repeats until no rule matches, so stemming is idempotent.
//!
//! 1. `-sses` → `-ss`
//! 2. `-ies` → `-y` when the word is longer than 4 characters
//! 3. `-s` → `` when the word has at least 4 characters and does not end in
//!    `-ss`, `-us` or `-is`
//! 4. `-ing` → `` when the remainder has at least 3 characters and a vowel;
//!    a trailing doubled consonant other than `l`, `s`, `z` is then undoubled
//! 5. `-ed` → `` under the same conditions as rule 4
//! 6. `-ly` → `` when the remainder has at least 4 characters

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::BufRead;

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, FeaturizedRow, LabeledTriple, RowMeta, SparseRow};
use crate::kg_store::{unescape_field, AliasTable};

const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stopwords(HashSet<String>);

impl Stopwords {
    /// One word per line; blank lines and `#` comments are ignored.
    pub fn read<R: BufRead>(source: R) -> Result<Self> {
        let mut words = HashSet::new();
        for line in source.lines() {
            let line = line?;
            let w = line.trim();
            if !w.is_empty() && !w.starts_with('#') {
                words.insert(w.to_lowercase());
            }
        }
        Ok(Stopwords(words))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for Stopwords {
    fn default() -> Self {
        Stopwords::read(DEFAULT_STOPWORDS.as_bytes()).expect("bundled stopword list")
    }
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y')
}

fn chars(s: &str) -> usize {
    s.chars().count()
}

fn undouble(stem: &str) -> String {
    let mut it = stem.chars().rev();
    match (it.next(), it.next()) {
        (Some(a), Some(b)) if a == b && !is_vowel(a) && !matches!(a, 'l' | 's' | 'z') && a.is_alphabetic() => {
            stem[..stem.len() - a.len_utf8()].to_owned()
        }
        _ => stem.to_owned(),
    }
}

fn stem_step(word: &str) -> Option<String> {
    let n = chars(word);
    if let Some(stem) = word.strip_suffix("sses") {
        return Some(format!("{stem}ss"));
    }
    if let Some(stem) = word.strip_suffix("ies") {
        if n > 4 {
            return Some(format!("{stem}y"));
        }
    }
    if let Some(stem) = word.strip_suffix('s') {
        if n >= 4 && !(word.ends_with("ss") || word.ends_with("us") || word.ends_with("is")) {
            return Some(stem.to_owned());
        }
    }
    for suffix in ["ing", "ed"] {
        if let Some(stem) = word.strip_suffix(suffix) {
            if chars(stem) >= 3 && stem.chars().any(is_vowel) {
                return Some(undouble(stem));
            }
        }
    }
    if let Some(stem) = word.strip_suffix("ly") {
        if chars(stem) >= 4 {
            return Some(stem.to_owned());
        }
    }
    None
}

pub fn stem(word: &str) -> String {
    let mut current = word.to_owned();
    while let Some(next) = stem_step(&current) {
        current = next;
    }
    current
}

pub fn preprocess(text: &str, stopwords: &Stopwords) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty() && !stopwords.contains(t))
        .map(stem)
        .filter(|t| !t.is_empty() && !stopwords.contains(t))
        .collect()
}

/// Entity string → abstract text.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AbstractCorpus {
    docs: BTreeMap<String, String>,
}

impl AbstractCorpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, entity: impl Into<String>, text: impl Into<String>) -> Result<()> {
        let entity = entity.into();
        if self.docs.contains_key(&entity) {
            return Err(Error::Config(format!("duplicate abstract for `{entity}`")));
        }
        self.docs.insert(entity, text.into());
        Ok(())
    }

    pub fn get(&self, entity: &str) -> Option<&str> {
        self.docs.get(entity).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// `entity<TAB>abstract` lines; tabs and newlines in the text are escaped.
    pub fn read_tsv<R: BufRead>(source: R) -> Result<Self> {
        let mut corpus = AbstractCorpus::new();
        for (n, line) in source.lines().enumerate() {
            let line = line?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let (entity, text) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(format!("corpus:{}", n + 1), "expected `entity<TAB>abstract`"))?;
            corpus
                .insert(unescape_field(entity), unescape_field(text))
                .map_err(|e| Error::parse(format!("corpus:{}", n + 1), e.to_string()))?;
        }
        Ok(corpus)
    }

    fn resolve<'a>(&'a self, label: &'a str, aliases: &'a AliasTable) -> Option<&'a str> {
        aliases
            .get(label)
            .filter(|t| self.docs.contains_key(*t))
            .or_else(|| self.docs.contains_key(label).then_some(label))
    }
}

fn term_counts(tokens: Vec<String>) -> HashMap<String, u64> {
    let mut counts = HashMap::new();
    for t in tokens {
        *counts.entry(t).or_insert(0) += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextFeatureSpace {
    pub k: usize,
    /// Pooled terms; column `j` is `vocabulary[j]`.
    pub vocabulary: Vec<String>,
    /// Top-k terms of each object, best first.
    pub per_object: BTreeMap<String, Vec<String>>,
    pub idf: HashMap<String, f64>,
    pub stopwords: Stopwords,
    pub norm_lo: f64,
    pub norm_hi: f64,
    column_of: HashMap<String, usize>,
    doc_counts: BTreeMap<String, HashMap<String, u64>>,
}

impl TextFeatureSpace {
    pub fn cols(&self) -> usize {
        self.vocabulary.len()
    }

    fn normalize(&self, v: f64) -> f64 {
        if self.norm_lo == self.norm_hi {
            1.0
        } else {
            ((v - self.norm_lo) / (self.norm_hi - self.norm_lo)).clamp(0.0, 1.0)
        }
    }
}

/// `members` maps each object to the persons holding it.
pub fn build_text_space(
    corpus: &AbstractCorpus,
    members: &BTreeMap<String, Vec<String>>,
    k: usize,
    stopwords: Stopwords,
) -> Result<TextFeatureSpace> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let doc_counts: BTreeMap<String, HashMap<String, u64>> = corpus
        .docs
        .iter()
        .map(|(e, text)| (e.clone(), term_counts(preprocess(text, &stopwords))))
        .collect();
    let n_docs = doc_counts.len() as f64;
    let mut df: HashMap<&str, u64> = HashMap::new();
    for counts in doc_counts.values() {
        for term in counts.keys() {
            *df.entry(term.as_str()).or_insert(0) += 1;
        }
    }
    let idf: HashMap<String, f64> = df
        .iter()
        .map(|(&t, &d)| (t.to_owned(), (n_docs / d as f64).ln()))
        .collect();

    let mut per_object = BTreeMap::new();
    for (object, persons) in members {
        let mut tf: HashMap<&str, u64> = HashMap::new();
        for p in persons {
            if let Some(counts) = doc_counts.get(p) {
                for (t, &c) in counts {
                    *tf.entry(t.as_str()).or_insert(0) += c;
                }
            }
        }
        let mut ranked: Vec<(&str, u64, f64)> = tf
            .into_iter()
            .map(|(t, c)| (t, c, c as f64 * idf[t]))
            .filter(|&(_, _, score)| score > 0.0)
            .collect();
        ranked.sort_by(|a, b| b.2.total_cmp(&a.2).then(b.1.cmp(&a.1)).then(a.0.cmp(b.0)));
        per_object.insert(
            object.clone(),
            ranked.into_iter().take(k).map(|(t, _, _)| t.to_owned()).collect::<Vec<_>>(),
        );
    }

    let mut vocabulary = Vec::new();
    let mut column_of = HashMap::new();
    for terms in per_object.values() {
        for t in terms {
            if !column_of.contains_key(t) {
                column_of.insert(t.clone(), vocabulary.len());
                vocabulary.push(t.clone());
            }
        }
    }

    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for counts in doc_counts.values() {
        for t in &vocabulary {
            if let Some(&c) = counts.get(t) {
                let v = c as f64 * idf[t];
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    if !lo.is_finite() {
        lo = 0.0;
        hi = 0.0;
    }
    Ok(TextFeatureSpace {
        k,
        vocabulary,
        per_object,
        idf,
        stopwords,
        norm_lo: lo,
        norm_hi: hi,
        column_of,
        doc_counts,
    })
}

/// Row for `person`; a person without an abstract gets an empty row flagged unresolved.
pub fn text_featurize(person: &str, corpus: &AbstractCorpus, space: &TextFeatureSpace, aliases: &AliasTable) -> FeaturizedRow {
    let Some(counts) = corpus.resolve(person, aliases).and_then(|e| space.doc_counts.get(e)) else {
        return FeaturizedRow {
            row: SparseRow::default(),
            resolved: false,
        };
    };
    let mut entries: Vec<(usize, f64)> = counts
        .iter()
        .filter_map(|(t, &c)| {
            let col = *space.column_of.get(t)?;
            let v = space.normalize(c as f64 * space.idf[t]);
            (v != 0.0).then_some((col, v))
        })
        .collect();
    entries.sort_unstable_by_key(|&(c, _)| c);
    FeaturizedRow {
        row: SparseRow {
            indices: entries.iter().map(|&(c, _)| c).collect(),
            values: entries.iter().map(|&(_, v)| v).collect(),
        },
        resolved: true,
    }
}

pub fn build_text_matrix(
    triples: &[LabeledTriple],
    corpus: &AbstractCorpus,
    space: &TextFeatureSpace,
    aliases: &AliasTable,
) -> Result<FeatureMatrix> {
    let mut m = FeatureMatrix::new(space.vocabulary.clone());
    for t in triples {
        let f = text_featurize(&t.person, corpus, space, aliases);
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
    Ok(m)
}
