//! Triple-dump ingestion and the interned, subject-indexed knowledge graph.
//!
//! Two line formats are accepted:
//!
//! * `tsv`: `subject<TAB>predicate<TAB>object`, exactly three non-empty fields.
//! * `nt`: a subset of N-Triples, `<s> <p> <o> .`, where subjects are IRIs or
//!   blank nodes, predicates are IRIs and objects may also be quoted literals.
//!   IRIs are interned without their angle brackets; literals (including any
//!   `@lang` / `^^<datatype>` suffix) and blank nodes are interned verbatim as
//!   opaque entity strings.
//!
//! Blank lines and lines starting with `#` are ignored. Every other line that
//! fails to parse is counted as malformed and skipped; if more than half of a
//! source is malformed the whole source is rejected as a format mismatch.
//!
//! # Snapshot format
//!
//! [`KnowledgeGraph::write_snapshot`] emits a line-oriented TSV file (fields separated by tabs):
//!
//! ```text
//! #relsifter-graph  1
//! E  <entity-id>  <entity string>
//! P  <predicate-id>  <predicate string>
//! T  <subject-id>  <predicate-id>  <object-id>
//! ```
//!
//! Strings escape `\`, tab, CR and LF as `\\`, `\t`, `\r`, `\n`. Ids are written
//! explicitly so a snapshot reloads with identical ids and triple order.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SNAPSHOT_MAGIC: &str = "#relsifter-graph";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PredicateId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl PredicateId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Dense string interner. Ids are handed out in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SymbolTable {
    names: Vec<String>,
    ids: HashMap<String, u32>,
}

impl SymbolTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, s: &str) -> u32 {
        if let Some(&id) = self.ids.get(s) {
            return id;
        }
        let id = u32::try_from(self.names.len()).expect("symbol table overflow");
        self.names.push(s.to_owned());
        self.ids.insert(s.to_owned(), id);
        id
    }

    pub fn get(&self, s: &str) -> Option<u32> {
        self.ids.get(s).copied()
    }

    pub fn resolve(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &str)> {
        self.names
            .iter()
            .enumerate()
            .map(|(i, s)| (i as u32, s.as_str()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub subject: EntityId,
    pub predicate: PredicateId,
    pub object: EntityId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DumpFormat {
    Tsv,
    NTriples,
}

impl FromStr for DumpFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(DumpFormat::Tsv),
            "nt" | "ntriples" | "n-triples" => Ok(DumpFormat::NTriples),
            other => Err(Error::Config(format!(
                "unknown dump format `{other}` (expected tsv or nt)"
            ))),
        }
    }
}

impl fmt::Display for DumpFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DumpFormat::Tsv => f.write_str("tsv"),
            DumpFormat::NTriples => f.write_str("nt"),
        }
    }
}

/// Line counts from one ingested source.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseStats {
    /// Non-blank, non-comment lines.
    pub lines: usize,
    pub parsed: usize,
    pub malformed: usize,
}

impl ParseStats {
    fn absorb(&mut self, other: ParseStats) {
        self.lines += other.lines;
        self.parsed += other.parsed;
        self.malformed += other.malformed;
    }
}

/// Immutable knowledge graph with subject and (predicate, object) indexes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeGraph {
    entities: SymbolTable,
    predicates: SymbolTable,
    triples: Vec<Triple>,
    subject_index: Vec<Vec<(PredicateId, EntityId)>>,
    po_index: HashMap<(PredicateId, EntityId), Vec<EntityId>>,
}

/// Accumulates triples from one or more sources, then freezes them into a
/// [`KnowledgeGraph`].
#[derive(Debug, Default)]
pub struct GraphBuilder {
    entities: SymbolTable,
    predicates: SymbolTable,
    triples: HashSet<Triple>,
    stats: ParseStats,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, subject: &str, predicate: &str, object: &str) -> Triple {
        let triple = Triple {
            subject: EntityId(self.entities.intern(subject)),
            predicate: PredicateId(self.predicates.intern(predicate)),
            object: EntityId(self.entities.intern(object)),
        };
        self.triples.insert(triple);
        triple
    }

    /// Parse every line of `source`. Malformed lines are counted and skipped.
    pub fn ingest<R: BufRead>(&mut self, source: R, format: DumpFormat) -> Result<ParseStats> {
        let mut stats = ParseStats::default();
        for line in source.lines() {
            let line = line?;
            let trimmed = line.trim_end_matches(['\r', '\n']);
            if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
                continue;
            }
            stats.lines += 1;
            let parsed = match format {
                DumpFormat::Tsv => parse_tsv_line(trimmed),
                DumpFormat::NTriples => parse_nt_line(trimmed),
            };
            match parsed {
                Some((s, p, o)) => {
                    self.add(&s, &p, &o);
                    stats.parsed += 1;
                }
                None => stats.malformed += 1,
            }
        }
        if stats.malformed * 2 > stats.lines {
            return Err(Error::FormatMismatch {
                malformed: stats.malformed,
                total: stats.lines,
            });
        }
        if stats.malformed > 0 {
            log::warn!(
                "skipped {} malformed of {} {format} lines",
                stats.malformed,
                stats.lines
            );
        }
        self.stats.absorb(stats);
        Ok(stats)
    }

    pub fn stats(&self) -> ParseStats {
        self.stats
    }

    pub fn build(self) -> KnowledgeGraph {
        let mut triples: Vec<Triple> = self.triples.into_iter().collect();
        triples.sort_unstable();
        KnowledgeGraph::from_parts(self.entities, self.predicates, triples)
    }
}

/// Parse a whole dump in one go.
pub fn parse_dump<R: BufRead>(source: R, format: DumpFormat) -> Result<(KnowledgeGraph, ParseStats)> {
    let mut builder = GraphBuilder::new();
    let stats = builder.ingest(source, format)?;
    Ok((builder.build(), stats))
}

fn parse_tsv_line(line: &str) -> Option<(String, String, String)> {
    let mut fields = line.split('\t');
    let s = fields.next()?;
    let p = fields.next()?;
    let o = fields.next()?;
    if fields.next().is_some() || s.is_empty() || p.is_empty() || o.is_empty() {
        return None;
    }
    Some((s.to_owned(), p.to_owned(), o.to_owned()))
}

fn parse_nt_line(line: &str) -> Option<(String, String, String)> {
    let mut rest = line.trim_start();
    let (s, r) = nt_subject(rest)?;
    rest = skip_ws(r)?;
    let (p, r) = nt_iri(rest)?;
    rest = skip_ws(r)?;
    let (o, r) = nt_object(rest)?;
    let r = r.trim_start();
    let r = r.strip_prefix('.')?.trim_start();
    if !(r.is_empty() || r.starts_with('#')) {
        return None;
    }
    Some((s, p, o))
}

/// Requires at least one whitespace character.
fn skip_ws(s: &str) -> Option<&str> {
    let trimmed = s.trim_start_matches([' ', '\t']);
    (trimmed.len() < s.len()).then_some(trimmed)
}

fn nt_subject(s: &str) -> Option<(String, &str)> {
    if s.starts_with('<') {
        nt_iri(s)
    } else {
        nt_blank(s)
    }
}

fn nt_object(s: &str) -> Option<(String, &str)> {
    match s.chars().next()? {
        '<' => nt_iri(s),
        '"' => nt_literal(s),
        _ => nt_blank(s),
    }
}

fn nt_iri(s: &str) -> Option<(String, &str)> {
    let body = s.strip_prefix('<')?;
    let end = body.find('>')?;
    let iri = &body[..end];
    if iri.is_empty() || iri.contains([' ', '\t', '<', '"']) {
        return None;
    }
    Some((iri.to_owned(), &body[end + 1..]))
}

fn nt_blank(s: &str) -> Option<(String, &str)> {
    let body = s.strip_prefix("_:")?;
    let end = body
        .find(|c: char| c.is_whitespace())
        .unwrap_or(body.len());
    if end == 0 {
        return None;
    }
    Some((s[..end + 2].to_owned(), &body[end..]))
}

fn nt_literal(s: &str) -> Option<(String, &str)> {
    let bytes = s.as_bytes();
    let mut i = 1;
    loop {
        match bytes.get(i)? {
            b'\\' => i += 2,
            b'"' => break,
            _ => i += 1,
        }
    }
    let mut end = i + 1;
    let tail = &s[end..];
    if let Some(lang) = tail.strip_prefix('@') {
        let n = lang
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '-'))
            .unwrap_or(lang.len());
        if n == 0 {
            return None;
        }
        end += 1 + n;
    } else if let Some(dt) = tail.strip_prefix("^^") {
        let (_, after) = nt_iri(dt)?;
        end = s.len() - after.len();
    }
    Some((s[..end].to_owned(), &s[end..]))
}

impl KnowledgeGraph {
    fn from_parts(entities: SymbolTable, predicates: SymbolTable, triples: Vec<Triple>) -> Self {
        let mut subject_index = vec![Vec::new(); entities.len()];
        let mut po_index: HashMap<(PredicateId, EntityId), Vec<EntityId>> = HashMap::new();
        for t in &triples {
            subject_index[t.subject.index()].push((t.predicate, t.object));
            po_index
                .entry((t.predicate, t.object))
                .or_default()
                .push(t.subject);
        }
        for list in &mut subject_index {
            list.sort_unstable();
        }
        for list in po_index.values_mut() {
            list.sort_unstable();
        }
        KnowledgeGraph {
            entities,
            predicates,
            triples,
            subject_index,
            po_index,
        }
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn entities(&self) -> &SymbolTable {
        &self.entities
    }

    pub fn predicates(&self) -> &SymbolTable {
        &self.predicates
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entities.get(name).map(EntityId)
    }

    pub fn predicate_id(&self, name: &str) -> Option<PredicateId> {
        self.predicates.get(name).map(PredicateId)
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        self.entities.resolve(id.0).expect("entity id not interned")
    }

    pub fn predicate_name(&self, id: PredicateId) -> &str {
        self.predicates.resolve(id.0).expect("predicate id not interned")
    }

    /// Outgoing `(predicate, object)` pairs of `subject`, sorted.
    pub fn outgoing(&self, subject: EntityId) -> &[(PredicateId, EntityId)] {
        self.subject_index
            .get(subject.index())
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Sorted subjects `s` with `(s, predicate, object)` in the graph.
    pub fn subjects_with(&self, predicate: PredicateId, object: EntityId) -> &[EntityId] {
        self.po_index
            .get(&(predicate, object))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Predicate of every triple with this subject, with multiplicity, in
    /// `(predicate, object)` order.
    pub fn activities_of(&self, subject: EntityId) -> Vec<PredicateId> {
        self.outgoing(subject).iter().map(|&(p, _)| p).collect()
    }

    /// Distinct objects `o` with at least one `(·, predicate, o)` triple,
    /// sorted by entity string.
    pub fn objects_of(&self, predicate: PredicateId) -> Vec<EntityId> {
        let mut objects: Vec<EntityId> = self
            .po_index
            .keys()
            .filter(|(p, _)| *p == predicate)
            .map(|&(_, o)| o)
            .collect();
        objects.sort_by(|a, b| self.entity_name(*a).cmp(self.entity_name(*b)));
        objects
    }

    /// Distinct subjects of any `(·, predicate, ·)` triple, sorted by id.
    pub fn subjects_of(&self, predicate: PredicateId) -> Vec<EntityId> {
        let mut subjects: Vec<EntityId> = self
            .triples
            .iter()
            .filter(|t| t.predicate == predicate)
            .map(|t| t.subject)
            .collect();
        subjects.sort_unstable();
        subjects.dedup();
        subjects
    }

    pub fn write_snapshot<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{SNAPSHOT_MAGIC}\t{SNAPSHOT_VERSION}")?;
        for (id, name) in self.entities.iter() {
            writeln!(out, "E\t{id}\t{}", escape_field(name))?;
        }
        for (id, name) in self.predicates.iter() {
            writeln!(out, "P\t{id}\t{}", escape_field(name))?;
        }
        for t in &self.triples {
            writeln!(out, "T\t{}\t{}\t{}", t.subject.0, t.predicate.0, t.object.0)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_snapshot<R: BufRead>(source: R) -> Result<Self> {
        let mut lines = source.lines().enumerate();
        let header = match lines.next() {
            Some((_, line)) => line?,
            None => return Err(Error::parse("snapshot:1", "empty snapshot")),
        };
        let version = header
            .strip_prefix(SNAPSHOT_MAGIC)
            .and_then(|v| v.trim().parse::<u32>().ok());
        if version != Some(SNAPSHOT_VERSION) {
            return Err(Error::parse("snapshot:1", format!("bad header `{header}`")));
        }

        let mut entities = SymbolTable::new();
        let mut predicates = SymbolTable::new();
        let mut triples = Vec::new();
        for (n, line) in lines {
            let line = line?;
            let loc = || format!("snapshot:{}", n + 1);
            let fields: Vec<&str> = line.split('\t').collect();
            let num = |s: &str| {
                s.parse::<u32>()
                    .map_err(|_| Error::parse(loc(), format!("bad id `{s}`")))
            };
            match fields.as_slice() {
                ["E", id, name] => {
                    if entities.intern(&unescape_field(name)) != num(id)? {
                        return Err(Error::parse(loc(), "entity ids out of order"));
                    }
                }
                ["P", id, name] => {
                    if predicates.intern(&unescape_field(name)) != num(id)? {
                        return Err(Error::parse(loc(), "predicate ids out of order"));
                    }
                }
                ["T", s, p, o] => {
                    let t = Triple {
                        subject: EntityId(num(s)?),
                        predicate: PredicateId(num(p)?),
                        object: EntityId(num(o)?),
                    };
                    if t.subject.index() >= entities.len()
                        || t.object.index() >= entities.len()
                        || t.predicate.index() >= predicates.len()
                    {
                        return Err(Error::parse(loc(), "triple references unknown id"));
                    }
                    triples.push(t);
                }
                _ => return Err(Error::parse(loc(), "unrecognized record")),
            }
        }
        triples.sort_unstable();
        triples.dedup();
        Ok(Self::from_parts(entities, predicates, triples))
    }
}

pub(crate) fn escape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

pub(crate) fn unescape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

/// Task-label → KG entity string mapping.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AliasTable {
    map: HashMap<String, String>,
}

impl AliasTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, label: impl Into<String>, entity: impl Into<String>) {
        self.map.insert(label.into(), entity.into());
    }

    pub fn get(&self, label: &str) -> Option<&str> {
        self.map.get(label).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Reads `label<TAB>entity` lines; blank and `#` lines are ignored.
    pub fn read_tsv<R: BufRead>(source: R) -> Result<Self> {
        let mut table = AliasTable::new();
        for (n, line) in source.lines().enumerate() {
            let line = line?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            match line.split_once('\t') {
                Some((label, entity)) if !label.is_empty() && !entity.is_empty() => {
                    table.insert(unescape_field(label), unescape_field(entity));
                }
                _ => {
                    return Err(Error::parse(
                        format!("aliases:{}", n + 1),
                        "expected `label<TAB>entity`",
                    ))
                }
            }
        }
        Ok(table)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    Resolved(EntityId),
    Unresolved,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolutionOutcome {
    pub query: String,
    pub result: Resolution,
}

impl ResolutionOutcome {
    pub fn id(&self) -> Option<EntityId> {
        match self.result {
            Resolution::Resolved(id) => Some(id),
            Resolution::Unresolved => None,
        }
    }

    pub fn is_resolved(&self) -> bool {
        matches!(self.result, Resolution::Resolved(_))
    }
}

/// Alias hit first, then an exact case-sensitive match on the entity string.
/// An alias whose target is not in the graph falls through to the exact match.
pub fn resolve_entity(g: &KnowledgeGraph, label: &str, aliases: &AliasTable) -> ResolutionOutcome {
    let result = aliases
        .get(label)
        .and_then(|target| g.entity_id(target))
        .or_else(|| g.entity_id(label))
        .map_or(Resolution::Unresolved, Resolution::Resolved);
    ResolutionOutcome {
        query: label.to_owned(),
        result,
    }
}

/// Running tally of resolution outcomes, so unresolved lookups stay countable.
#[derive(Debug, Clone, Default)]
pub struct ResolutionLog {
    pub outcomes: Vec<ResolutionOutcome>,
}

impl ResolutionLog {
    pub fn record(&mut self, outcome: ResolutionOutcome) -> Option<EntityId> {
        let id = outcome.id();
        self.outcomes.push(outcome);
        id
    }

    pub fn unresolved(&self) -> usize {
        self.outcomes.iter().filter(|o| !o.is_resolved()).count()
    }

    pub fn resolved(&self) -> usize {
        self.outcomes.len() - self.unresolved()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn tsv(text: &str) -> KnowledgeGraph {
        parse_dump(text.as_bytes(), DumpFormat::Tsv).unwrap().0
    }

    fn string_triples(g: &KnowledgeGraph) -> BTreeSet<(String, String, String)> {
        g.triples()
            .iter()
            .map(|t| {
                (
                    g.entity_name(t.subject).to_owned(),
                    g.predicate_name(t.predicate).to_owned(),
                    g.entity_name(t.object).to_owned(),
                )
            })
            .collect()
    }

    #[test]
    fn intern_is_idempotent_and_resolves() {
        let mut table = SymbolTable::new();
        let a = table.intern("actor");
        let b = table.intern("pianist");
        assert_eq!(table.intern("actor"), a);
        assert_ne!(a, b);
        assert_eq!(table.resolve(a), Some("actor"));
        assert_eq!(table.resolve(b), Some("pianist"));
        assert_eq!(table.len(), 2);
    }

    #[test]
    fn three_lines_three_triples() {
        let g = tsv("a\tp\tb\na\tq\tc\nb\tp\tc\n");
        assert_eq!(g.len(), 3);
        for t in g.triples() {
            assert!(g.subjects_with(t.predicate, t.object).contains(&t.subject));
            assert!(g.outgoing(t.subject).contains(&(t.predicate, t.object)));
        }
    }

    #[test]
    fn duplicate_lines_stored_once() {
        let g = tsv("a\tp\tb\na\tp\tb\n");
        assert_eq!(g.len(), 1);
    }

    #[test]
    fn malformed_tsv_lines_are_skipped() {
        let text = "a\tp\tb\nnot a triple\na\tp\n\n# comment\nc\tp\td\n";
        let (g, stats) = parse_dump(text.as_bytes(), DumpFormat::Tsv).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(stats.lines, 4);
        assert_eq!(stats.malformed, 2);
    }

    #[test]
    fn mostly_malformed_is_format_mismatch() {
        let text = "<a> <p> <b> .\n<c> <p> <d> .\na\tp\tb\n";
        let err = parse_dump(text.as_bytes(), DumpFormat::Tsv).unwrap_err();
        assert!(matches!(err, Error::FormatMismatch { malformed: 2, total: 3 }));
    }

    #[test]
    fn ntriples_terms() {
        let text = concat!(
            "<http://x/a> <http://x/p> <http://x/b> .\n",
            "<http://x/a> <http://x/label> \"Alpha \\\"A\\\"\"@en .\n",
            "_:b1 <http://x/p> \"3\"^^<http://www.w3.org/2001/XMLSchema#integer> . # trailing\n",
            "<http://x/a> <http://x/p> <http://x/b>\n",
        );
        let (g, stats) = parse_dump(text.as_bytes(), DumpFormat::NTriples).unwrap();
        assert_eq!(stats.malformed, 1);
        let triples = string_triples(&g);
        assert!(triples.contains(&("http://x/a".into(), "http://x/p".into(), "http://x/b".into())));
        assert!(triples.contains(&(
            "http://x/a".into(),
            "http://x/label".into(),
            "\"Alpha \\\"A\\\"\"@en".into()
        )));
        assert!(triples.contains(&(
            "_:b1".into(),
            "http://x/p".into(),
            "\"3\"^^<http://www.w3.org/2001/XMLSchema#integer>".into()
        )));
    }

    #[test]
    fn ntriples_rejects_literal_subject_and_predicate() {
        assert!(parse_nt_line("\"s\" <p> <o> .").is_none());
        assert!(parse_nt_line("<s> \"p\" <o> .").is_none());
        assert!(parse_nt_line("<s><p><o> .").is_none());
    }

    #[test]
    fn subjects_with_fixture() {
        let g = tsv("a\thasProfession\tactor\nb\thasProfession\tactor\nc\thasProfession\tsinger\n");
        let p = g.predicate_id("hasProfession").unwrap();
        let actor = g.entity_id("actor").unwrap();
        let names: Vec<&str> = g
            .subjects_with(p, actor)
            .iter()
            .map(|&s| g.entity_name(s))
            .collect();
        assert_eq!(names, vec!["a", "b"]);
        let singer = g.entity_id("singer").unwrap();
        assert!(g.subjects_with(p, g.entity_id("a").unwrap()).is_empty());
        assert_eq!(g.subjects_with(p, singer).len(), 1);
    }

    #[test]
    fn activities_keep_multiplicity() {
        let g = tsv("p\tstarredIn\tm1\np\tstarredIn\tm2\np\tbornIn\tc\n");
        let p = g.entity_id("p").unwrap();
        let acts = g.activities_of(p);
        let starred = g.predicate_id("starredIn").unwrap();
        let born = g.predicate_id("bornIn").unwrap();
        assert_eq!(acts.iter().filter(|&&a| a == starred).count(), 2);
        assert_eq!(acts.iter().filter(|&&a| a == born).count(), 1);
        assert!(g.activities_of(g.entity_id("m1").unwrap()).is_empty());
    }

    #[test]
    fn resolution_chain() {
        let g = tsv("Mozart\tprofession\tComposer\n");
        let mut aliases = AliasTable::new();
        aliases.insert("W. A. Mozart", "Mozart");
        aliases.insert("Ghost", "Nobody");

        let direct = resolve_entity(&g, "Mozart", &aliases);
        assert_eq!(direct.id(), g.entity_id("Mozart"));
        let aliased = resolve_entity(&g, "W. A. Mozart", &aliases);
        assert_eq!(aliased.id(), g.entity_id("Mozart"));
        assert_eq!(resolve_entity(&g, "mozart", &aliases).result, Resolution::Unresolved);
        assert_eq!(resolve_entity(&g, "Ghost", &aliases).result, Resolution::Unresolved);

        let mut log = ResolutionLog::default();
        log.record(direct);
        log.record(resolve_entity(&g, "Salieri", &aliases));
        assert_eq!((log.resolved(), log.unresolved()), (1, 1));
    }

    #[test]
    fn snapshot_round_trip() {
        let g = tsv("a\tp\tb\nb\tq\twith\\slash\nc\tp\ta\n");
        let mut buf = Vec::new();
        g.write_snapshot(&mut buf).unwrap();
        let back = KnowledgeGraph::read_snapshot(buf.as_slice()).unwrap();
        assert_eq!(back, g);
        let mut again = Vec::new();
        back.write_snapshot(&mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn escape_round_trip() {
        for s in ["plain", "tab\there", "nl\nx", "back\\slash", "\\t literal"] {
            assert_eq!(unescape_field(&escape_field(s)), s);
        }
    }
}
