//! Activity statistics and pertinence scores for the objects of a type-like
//! relation.
//!
//! For an object `o` (a profession, a nationality) let `S_o` be the persons
//! holding it, `U` the universe of persons and `R_o` the predicates observed on
//! outgoing edges of members of `S_o`. For each `r` in `R_o` four counters are
//! kept: `g_S` / `g_U` count persons in `S_o` / `U` with at least one `r`
//! triple, `f_S` / `f_U` count `r` triples over the same sets. Then
//!
//! ```text
//! P = log(1 + g_S) * log(|U| / g_U)
//! F = log(1 + f_S) * log(sum_{r' in R_o} (1 + f_U(r') - f_S(r')) / (1 + f_U(r) - f_S(r)))
//! C = P * F
//! ```
//!
//! and the top-k activities of `o` are those with the largest `C`.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kg_store::{EntityId, KnowledgeGraph, PredicateId};

/// A type-like relation and the objects it ranges over.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TlrSpec {
    pub relation_name: String,
    pub tlr_predicate: PredicateId,
    pub objects: Vec<EntityId>,
}

impl TlrSpec {
    /// Every object of `predicate` in the graph, sorted by entity string.
    pub fn from_graph(g: &KnowledgeGraph, relation_name: &str, predicate: &str) -> Result<Self> {
        let tlr_predicate = g.predicate_id(predicate).ok_or_else(|| Error::Lookup {
            kind: "predicate",
            name: predicate.to_owned(),
        })?;
        Ok(TlrSpec {
            relation_name: relation_name.to_owned(),
            tlr_predicate,
            objects: g.objects_of(tlr_predicate),
        })
    }

    /// All subjects of the relation predicate plus `extras`, sorted and deduplicated.
    pub fn universe(&self, g: &KnowledgeGraph, extras: &[EntityId]) -> Vec<EntityId> {
        let mut u = g.subjects_of(self.tlr_predicate);
        u.extend_from_slice(extras);
        u.sort_unstable();
        u.dedup();
        u
    }
}

/// Raw counters for one `(object, activity)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActivityStats {
    pub object: EntityId,
    pub activity: PredicateId,
    pub g_s: u64,
    pub g_u: u64,
    pub f_s: u64,
    pub f_u: u64,
}

/// Which counter feeds the within-`S_o` factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CounterRoles {
    /// `P` uses person counts (`g`), `F` uses occurrence counts (`f`).
    #[default]
    Standard,
    /// `P`'s first factor uses `f_S`; `F` is computed from `g` counts. The
    /// inverse-popularity factor of `P` always uses `g_U`, since `|U|` counts persons.
    Swapped,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogBase {
    ln_base: f64,
}

impl LogBase {
    pub const NATURAL: LogBase = LogBase { ln_base: 1.0 };

    pub fn new(base: f64) -> Result<Self> {
        if !(base > 1.0 && base.is_finite()) {
            return Err(Error::Config(format!("log base must be > 1, got {base}")));
        }
        if base == std::f64::consts::E {
            return Ok(Self::NATURAL);
        }
        Ok(LogBase { ln_base: base.ln() })
    }

    #[inline]
    pub fn log(&self, x: f64) -> f64 {
        if self.ln_base == 1.0 {
            x.ln()
        } else {
            x.ln() / self.ln_base
        }
    }
}

impl Default for LogBase {
    fn default() -> Self {
        Self::NATURAL
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PertinenceConfig {
    pub log_base: LogBase,
    pub roles: CounterRoles,
}

/// Counters for one object, before any scoring.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectStats {
    pub object: EntityId,
    pub members: usize,
    /// One entry per `r` in `R_o`, ordered by predicate id.
    pub activities: Vec<ActivityStats>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectIssue {
    pub object: EntityId,
    pub message: String,
}

/// Output of [`collect_stats`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationStats {
    pub relation_name: String,
    pub tlr_predicate: PredicateId,
    pub universe_size: usize,
    pub objects: Vec<ObjectStats>,
    pub issues: Vec<ObjectIssue>,
}

/// Per-person activity counts, summed over a set of persons.
#[derive(Default)]
struct Tally {
    persons: HashMap<PredicateId, u64>,
    occurrences: HashMap<PredicateId, u64>,
}

impl Tally {
    fn add_person(&mut self, g: &KnowledgeGraph, person: EntityId) {
        let mut last = None;
        for &(p, _) in g.outgoing(person) {
            *self.occurrences.entry(p).or_default() += 1;
            // outgoing() is sorted by predicate, so a change marks a new predicate
            if last != Some(p) {
                *self.persons.entry(p).or_default() += 1;
                last = Some(p);
            }
        }
    }
}

/// Exact counters for every object of `spec` over `universe`.
///
/// Objects without members are reported in `issues` rather than failing the
/// whole relation. Every member of an object must belong to `universe`.
pub fn collect_stats(
    g: &KnowledgeGraph,
    spec: &TlrSpec,
    universe: &[EntityId],
) -> Result<RelationStats> {
    let mut in_universe = vec![false; g.entities().len()];
    let mut totals = Tally::default();
    for &person in universe {
        if !std::mem::replace(&mut in_universe[person.index()], true) {
            totals.add_person(g, person);
        }
    }
    let universe_size = in_universe.iter().filter(|&&b| b).count();

    let per_object: Vec<Result<std::result::Result<ObjectStats, ObjectIssue>>> = spec
        .objects
        .par_iter()
        .map(|&object| {
            let members = g.subjects_with(spec.tlr_predicate, object);
            if members.is_empty() {
                return Ok(Err(ObjectIssue {
                    object,
                    message: format!("object `{}` has no subjects", g.entity_name(object)),
                }));
            }
            let mut local = Tally::default();
            for &person in members {
                if !in_universe[person.index()] {
                    return Err(Error::Contract(format!(
                        "member `{}` of `{}` is outside the universe",
                        g.entity_name(person),
                        g.entity_name(object)
                    )));
                }
                local.add_person(g, person);
            }
            let mut activities: Vec<ActivityStats> = local
                .occurrences
                .iter()
                .map(|(&activity, &f_s)| ActivityStats {
                    object,
                    activity,
                    g_s: local.persons[&activity],
                    g_u: totals.persons[&activity],
                    f_s,
                    f_u: totals.occurrences[&activity],
                })
                .collect();
            activities.sort_unstable_by_key(|s| s.activity);
            Ok(Ok(ObjectStats {
                object,
                members: members.len(),
                activities,
            }))
        })
        .collect();

    let mut objects = Vec::with_capacity(per_object.len());
    let mut issues = Vec::new();
    for entry in per_object {
        match entry? {
            Ok(stats) => objects.push(stats),
            Err(issue) => {
                log::warn!("{}", issue.message);
                issues.push(issue);
            }
        }
    }
    Ok(RelationStats {
        relation_name: spec.relation_name.clone(),
        tlr_predicate: spec.tlr_predicate,
        universe_size,
        objects,
        issues,
    })
}

/// Popularity pertinence with natural logarithm.
pub fn popularity_pertinence(stats: &ActivityStats, universe_size: usize) -> Result<f64> {
    popularity_with(stats, universe_size, PertinenceConfig::default())
}

fn popularity_with(stats: &ActivityStats, universe_size: usize, cfg: PertinenceConfig) -> Result<f64> {
    if stats.g_u == 0 {
        return Err(Error::Domain(format!(
            "activity {:?} has g_U = 0; only activities in R_o may be scored",
            stats.activity
        )));
    }
    let within = match cfg.roles {
        CounterRoles::Standard => stats.g_s,
        CounterRoles::Swapped => stats.f_s,
    };
    let log = cfg.log_base;
    Ok(log.log(1.0 + within as f64) * log.log(universe_size as f64 / stats.g_u as f64))
}

/// Focus pertinence with natural logarithm. `all_stats_for_o` must be exactly
/// the stats of `R_o` for the same object.
pub fn focus_pertinence(stats: &ActivityStats, all_stats_for_o: &[ActivityStats]) -> Result<f64> {
    check_focus_inputs(stats, all_stats_for_o)?;
    let cfg = PertinenceConfig::default();
    Ok(focus_with(stats, focus_mass(all_stats_for_o, cfg.roles), cfg))
}

fn check_focus_inputs(stats: &ActivityStats, all: &[ActivityStats]) -> Result<()> {
    if !all.iter().any(|s| s.activity == stats.activity) {
        return Err(Error::Contract(format!(
            "activity {:?} missing from R_o stats",
            stats.activity
        )));
    }
    if let Some(bad) = all.iter().find(|s| s.object != stats.object || s.g_s == 0) {
        return Err(Error::Contract(format!(
            "stats for {:?} do not describe R_o of {:?}",
            bad.activity, stats.object
        )));
    }
    Ok(())
}

fn outside_count(s: &ActivityStats, roles: CounterRoles) -> (u64, u64) {
    match roles {
        CounterRoles::Standard => (s.f_s, s.f_u),
        CounterRoles::Swapped => (s.g_s, s.g_u),
    }
}

/// `sum_{r'} (1 + U(r') - S(r'))` over `R_o`.
fn focus_mass(all: &[ActivityStats], roles: CounterRoles) -> f64 {
    all.iter()
        .map(|s| {
            let (inside, total) = outside_count(s, roles);
            (1 + total - inside) as f64
        })
        .sum()
}

fn focus_with(stats: &ActivityStats, mass: f64, cfg: PertinenceConfig) -> f64 {
    let (inside, total) = outside_count(stats, cfg.roles);
    let log = cfg.log_base;
    log.log(1.0 + inside as f64) * log.log(mass / (1 + total - inside) as f64)
}

pub fn combined_pertinence(popularity: f64, focus: f64) -> f64 {
    popularity * focus
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivityScore {
    pub stats: ActivityStats,
    pub popularity: f64,
    pub focus: f64,
    pub combined: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectProfile {
    pub object: EntityId,
    pub members: usize,
    /// `R_o`, ordered by predicate id.
    pub activities: Vec<ActivityScore>,
    /// Indices into `activities`, best first.
    ranking: Vec<usize>,
}

impl ObjectProfile {
    pub fn ranked(&self) -> impl Iterator<Item = &ActivityScore> {
        self.ranking.iter().map(|&i| &self.activities[i])
    }

    pub fn score(&self, activity: PredicateId) -> Option<&ActivityScore> {
        self.activities
            .binary_search_by_key(&activity, |s| s.stats.activity)
            .ok()
            .map(|i| &self.activities[i])
    }
}

/// Scored activities for every object of one relation.
#[derive(Debug, Clone, PartialEq)]
pub struct PertinenceTable {
    pub relation_name: String,
    pub tlr_predicate: PredicateId,
    pub universe_size: usize,
    /// Sorted by object entity string.
    pub objects: Vec<ObjectProfile>,
    pub issues: Vec<ObjectIssue>,
    object_names: BTreeMap<EntityId, String>,
    activity_names: BTreeMap<PredicateId, String>,
}

impl PertinenceTable {
    /// Score `stats`. `g` supplies the strings used for ordering and output.
    pub fn compute(g: &KnowledgeGraph, stats: RelationStats, cfg: PertinenceConfig) -> Result<Self> {
        let mut object_names = BTreeMap::new();
        let mut activity_names = BTreeMap::new();
        let mut objects = Vec::with_capacity(stats.objects.len());
        let natural = PertinenceConfig {
            log_base: LogBase::NATURAL,
            ..cfg
        };
        for obj in stats.objects {
            object_names.insert(obj.object, g.entity_name(obj.object).to_owned());
            let mass = focus_mass(&obj.activities, cfg.roles);
            let mut activities = Vec::with_capacity(obj.activities.len());
            // Ranks use natural-log C. Any base only rescales C, but rounding
            // could otherwise reorder near-ties between bases.
            let mut keys = Vec::with_capacity(obj.activities.len());
            for s in &obj.activities {
                activity_names
                    .entry(s.activity)
                    .or_insert_with(|| g.predicate_name(s.activity).to_owned());
                let popularity = popularity_with(s, stats.universe_size, cfg)?;
                let focus = focus_with(s, mass, cfg);
                keys.push(combined_pertinence(
                    popularity_with(s, stats.universe_size, natural)?,
                    focus_with(s, mass, natural),
                ));
                activities.push(ActivityScore {
                    stats: *s,
                    popularity,
                    focus,
                    combined: combined_pertinence(popularity, focus),
                });
            }
            let mut ranking: Vec<usize> = (0..activities.len()).collect();
            ranking.sort_by(|&a, &b| {
                let (x, y) = (&activities[a], &activities[b]);
                keys[b]
                    .total_cmp(&keys[a])
                    .then(y.stats.g_s.cmp(&x.stats.g_s))
                    .then_with(|| {
                        activity_names[&x.stats.activity].cmp(&activity_names[&y.stats.activity])
                    })
            });
            objects.push(ObjectProfile {
                object: obj.object,
                members: obj.members,
                activities,
                ranking,
            });
        }
        objects.sort_by(|a, b| object_names[&a.object].cmp(&object_names[&b.object]));
        Ok(PertinenceTable {
            relation_name: stats.relation_name,
            tlr_predicate: stats.tlr_predicate,
            universe_size: stats.universe_size,
            objects,
            issues: stats.issues,
            object_names,
            activity_names,
        })
    }

    /// Collect and score in one step, with `U` = all subjects of the relation predicate.
    pub fn build(g: &KnowledgeGraph, spec: &TlrSpec, cfg: PertinenceConfig) -> Result<Self> {
        let universe = spec.universe(g, &[]);
        let stats = collect_stats(g, spec, &universe)?;
        Self::compute(g, stats, cfg)
    }

    pub fn profile(&self, object: EntityId) -> Option<&ObjectProfile> {
        self.objects.iter().find(|p| p.object == object)
    }

    /// `C_o(r)`, or `None` when `r` is not in `R_o` or `o` is unknown.
    pub fn combined(&self, object: EntityId, activity: PredicateId) -> Option<f64> {
        self.profile(object)?.score(activity).map(|s| s.combined)
    }

    pub fn object_name(&self, object: EntityId) -> Option<&str> {
        self.object_names.get(&object).map(String::as_str)
    }

    pub fn activity_name(&self, activity: PredicateId) -> Option<&str> {
        self.activity_names.get(&activity).map(String::as_str)
    }

    /// Writes `object rank activity g_S g_U f_S f_U P F C` rows for the top-k
    /// of every object, with a header line.
    pub fn write_tsv<W: Write>(&self, mut out: W, k: usize) -> Result<()> {
        writeln!(out, "object\trank\tactivity\tg_S\tg_U\tf_S\tf_U\tP\tF\tC")?;
        for profile in &self.objects {
            let object = &self.object_names[&profile.object];
            for (rank, score) in profile.ranked().take(k).enumerate() {
                let s = &score.stats;
                writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    crate::kg_store::escape_field(object),
                    rank + 1,
                    crate::kg_store::escape_field(&self.activity_names[&s.activity]),
                    s.g_s,
                    s.g_u,
                    s.f_s,
                    s.f_u,
                    score.popularity,
                    score.focus,
                    score.combined
                )?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// The `k` highest-`C` activities of `object`, best first. Ties go to the
/// larger `g_S`, then the lexicographically smaller predicate string.
pub fn top_k_activities(
    table: &PertinenceTable,
    object: EntityId,
    k: usize,
) -> Result<Vec<PredicateId>> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let profile = table.profile(object).ok_or_else(|| Error::Lookup {
        kind: "object",
        name: format!("{object:?}"),
    })?;
    Ok(profile.ranked().take(k).map(|s| s.stats.activity).collect())
}

/// Deduplicated union of per-object top-k activities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PooledFeatureSet {
    pub relation_name: String,
    pub k: usize,
    pub activities: Vec<PredicateId>,
}

impl PooledFeatureSet {
    pub fn len(&self) -> usize {
        self.activities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.activities.is_empty()
    }
}

/// Pools top-k lists in order of first appearance, walking objects by entity
/// string and each list best first.
pub fn pool_features(table: &PertinenceTable, k: usize) -> Result<PooledFeatureSet> {
    let mut seen = std::collections::HashSet::new();
    let mut activities = Vec::new();
    for profile in &table.objects {
        for activity in top_k_activities(table, profile.object, k)? {
            if seen.insert(activity) {
                activities.push(activity);
            }
        }
    }
    Ok(PooledFeatureSet {
        relation_name: table.relation_name.clone(),
        k,
        activities,
    })
}
