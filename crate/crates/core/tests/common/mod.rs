//! Independent oracles and data generators shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use relsifter::features::LabeledTriple;
use relsifter::kg_store::{GraphBuilder, KnowledgeGraph};

pub type StrTriple = (String, String, String);

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn graph_of(triples: &[StrTriple]) -> KnowledgeGraph {
    let mut b = GraphBuilder::new();
    for (s, p, o) in triples {
        b.add(s, p, o);
    }
    b.build()
}

pub fn t(s: &str, p: &str, o: &str) -> StrTriple {
    (s.to_owned(), p.to_owned(), o.to_owned())
}

/// Recount of the pertinence scores straight from string triples.
pub mod oracle {
    use super::*;

    #[derive(Debug, Clone, Copy)]
    pub struct Scores {
        pub g_s: u64,
        pub g_u: u64,
        pub f_s: u64,
        pub f_u: u64,
        pub p: f64,
        pub f: f64,
        pub c: f64,
    }

    /// `object -> activity -> scores` for relation predicate `tlr`.
    pub fn pertinence(triples: &[StrTriple], tlr: &str, ln: impl Fn(f64) -> f64) -> BTreeMap<String, BTreeMap<String, Scores>> {
        let set: BTreeSet<&StrTriple> = triples.iter().collect();
        let mut holders: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for (s, p, o) in &set {
            if p == tlr {
                holders.entry(o.as_str()).or_default().insert(s.as_str());
            }
        }
        let universe: BTreeSet<&str> = holders.values().flatten().copied().collect();

        let count = |people: &BTreeSet<&str>, activity: &str| -> (u64, u64) {
            let mut persons = 0;
            let mut occurrences = 0;
            for person in people {
                let n = set.iter().filter(|(s, p, _)| s == person && p == activity).count() as u64;
                occurrences += n;
                persons += (n > 0) as u64;
            }
            (persons, occurrences)
        };

        let mut out = BTreeMap::new();
        for (object, members) in &holders {
            let activities: BTreeSet<&str> = set
                .iter()
                .filter(|(s, _, _)| members.contains(s.as_str()))
                .map(|(_, p, _)| p.as_str())
                .collect();
            let raw: Vec<(&str, u64, u64, u64, u64)> = activities
                .iter()
                .map(|a| {
                    let (g_s, f_s) = count(members, a);
                    let (g_u, f_u) = count(&universe, a);
                    (*a, g_s, g_u, f_s, f_u)
                })
                .collect();
            let mass: f64 = raw.iter().map(|r| (1 + r.4 - r.3) as f64).sum();
            let mut per = BTreeMap::new();
            for (a, g_s, g_u, f_s, f_u) in raw {
                let p = ln(1.0 + g_s as f64) * ln(universe.len() as f64 / g_u as f64);
                let f = ln(1.0 + f_s as f64) * ln(mass / (1 + f_u - f_s) as f64);
                per.insert(
                    a.to_owned(),
                    Scores {
                        g_s,
                        g_u,
                        f_s,
                        f_u,
                        p,
                        f,
                        c: p * f,
                    },
                );
            }
            out.insert(object.to_string(), per);
        }
        out
    }

    /// Top-k by the documented order: C desc, g_S desc, name asc.
    pub fn top_k(scores: &BTreeMap<String, Scores>, k: usize) -> Vec<String> {
        let mut v: Vec<(&String, &Scores)> = scores.iter().collect();
        v.sort_by(|a, b| {
            b.1.c
                .total_cmp(&a.1.c)
                .then(b.1.g_s.cmp(&a.1.g_s))
                .then(a.0.cmp(b.0))
        });
        v.into_iter().take(k).map(|(a, _)| a.clone()).collect()
    }
}

/// Random graph of at most `max_triples` triples over at most three relation values.
pub fn random_mini_kg(rng: &mut impl Rng, max_triples: usize) -> Vec<StrTriple> {
    let persons = rng.gen_range(2..=8);
    let objects = rng.gen_range(1..=3);
    let activities = ["a", "b", "c", "d", "e"];
    let mut out = Vec::new();
    for i in 0..persons {
        out.push(t(&format!("p{i}"), "rel", &format!("o{}", rng.gen_range(0..objects))));
    }
    while out.len() < max_triples && rng.gen_bool(0.95) {
        let s = format!("p{}", rng.gen_range(0..persons + 2));
        let a = activities.choose(rng).unwrap();
        let o = format!("x{}", rng.gen_range(0..4));
        out.push(t(&s, a, &o));
    }
    out.truncate(max_triples);
    out
}

pub mod metrics {
    pub fn accuracy(pred: &[u8], gold: &[u8], tol: u8) -> f64 {
        let mut hits = 0usize;
        for i in 0..pred.len() {
            let d = pred[i] as i32 - gold[i] as i32;
            if d.abs() <= tol as i32 {
                hits += 1;
            }
        }
        hits as f64 / pred.len() as f64
    }

    pub fn avg_diff(pred: &[u8], gold: &[u8]) -> f64 {
        let total: i64 = pred
            .iter()
            .zip(gold)
            .map(|(&p, &g)| (p as i64 - g as i64).abs())
            .sum();
        total as f64 / pred.len() as f64
    }

    /// Pairwise tau-b.
    pub fn tau_b(x: &[i64], y: &[i64]) -> f64 {
        let n = x.len();
        let (mut concordant, mut discordant, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
        for i in 0..n {
            for j in i + 1..n {
                let dx = (x[i] - x[j]).signum();
                let dy = (y[i] - y[j]).signum();
                if dx == 0 && dy == 0 {
                    continue;
                } else if dx == 0 {
                    tx += 1;
                } else if dy == 0 {
                    ty += 1;
                } else if dx == dy {
                    concordant += 1;
                } else {
                    discordant += 1;
                }
            }
        }
        let denom = (((concordant + discordant + tx) * (concordant + discordant + ty)) as f64).sqrt();
        if denom == 0.0 {
            return f64::NAN;
        }
        (concordant - discordant) as f64 / denom
    }
}

/// Eight people, two professions, hand-sized counts.
///
/// Singers s1-s4, painters s5-s8:
/// - `performer`: s1, s2, s3
/// - `record label`: s1 (twice), s2
/// - `genre`: s1, s5
/// - `movement`: s5, s6
/// - `exhibition`: s5, s6 (twice), s7, s8
pub fn eight_person_fixture() -> Vec<StrTriple> {
    let mut v = Vec::new();
    for i in 1..=4 {
        v.push(t(&format!("s{i}"), "profession", "Singer"));
    }
    for i in 5..=8 {
        v.push(t(&format!("s{i}"), "profession", "Painter"));
    }
    for s in ["s1", "s2", "s3"] {
        v.push(t(s, "performer", &format!("venue_{s}")));
    }
    v.push(t("s1", "record label", "label_a"));
    v.push(t("s1", "record label", "label_b"));
    v.push(t("s2", "record label", "label_a"));
    v.push(t("s1", "genre", "pop"));
    v.push(t("s5", "genre", "pop"));
    v.push(t("s5", "movement", "cubism"));
    v.push(t("s6", "movement", "cubism"));
    v.push(t("s5", "exhibition", "salon"));
    v.push(t("s6", "exhibition", "salon"));
    v.push(t("s6", "exhibition", "biennale"));
    v.push(t("s7", "exhibition", "salon"));
    v.push(t("s8", "exhibition", "salon"));
    v
}

/// Data with planted profession signal.
pub struct Planted {
    pub triples: Vec<StrTriple>,
    pub train: Vec<LabeledTriple>,
    pub test: Vec<LabeledTriple>,
}

pub const PLANTED_PROFESSIONS: usize = 4;
pub const PLANTED_ACTIVITIES: usize = 5;

/// About 200 people, each holding a primary and a secondary profession.
/// Each profession owns five characteristic activities that a person carries
/// with probability 0.8 when it is their primary profession and 0.1 otherwise.
/// Ten generic activities occur with probability 0.3 for everyone. The score of
/// (person, profession) is `round(7 * overlap / 5)` where overlap counts the
/// profession's characteristic activities the person carries.
pub fn planted_signal(persons: usize, seed: u64) -> Planted {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut triples = Vec::new();
    let mut labeled = Vec::new();
    for i in 0..persons {
        let person = format!("person_{i:03}");
        let primary = i % PLANTED_PROFESSIONS;
        let secondary = (primary + 1 + rng.gen_range(0..PLANTED_PROFESSIONS - 1)) % PLANTED_PROFESSIONS;
        let mut overlap = [0usize; PLANTED_PROFESSIONS];
        for (prof, count) in overlap.iter_mut().enumerate() {
            let rate = if prof == primary { 0.8 } else { 0.1 };
            for j in 0..PLANTED_ACTIVITIES {
                if rng.gen_bool(rate) {
                    *count += 1;
                    triples.push(t(&person, &format!("activity_{prof}_{j}"), &format!("thing_{prof}_{j}_{i}")));
                }
            }
        }
        for j in 0..10 {
            if rng.gen_bool(0.3) {
                triples.push(t(&person, &format!("generic_{j}"), &format!("g_{j}_{}", i % 7)));
            }
        }
        for prof in [primary, secondary] {
            let object = format!("Profession_{prof}");
            triples.push(t(&person, "profession", &object));
            let score = (7.0 * overlap[prof] as f64 / PLANTED_ACTIVITIES as f64).round() as u8;
            labeled.push(LabeledTriple::new(person.clone(), object, Some(score)));
        }
    }
    labeled.shuffle(&mut rng);
    let cut = labeled.len() * 3 / 4;
    let test = labeled.split_off(cut);
    Planted {
        triples,
        train: labeled,
        test,
    }
}

pub fn write_triples_tsv(path: &Path, triples: &[StrTriple]) {
    let body: String = triples.iter().map(|(s, p, o)| format!("{s}\t{p}\t{o}\n")).collect();
    fs::write(path, body).unwrap();
}

pub fn write_labeled(path: &Path, triples: &[LabeledTriple]) {
    let f = fs::File::create(path).unwrap();
    relsifter::features::write_labeled_triples(f, triples).unwrap();
}

/// Writes the planted data plus a config into `dir` and returns the config path.
pub fn planted_pipeline(dir: &Path, learner: &str, grid: Option<&str>, persons: usize, seed: u64) -> PathBuf {
    let data = planted_signal(persons, seed);
    write_triples_tsv(&dir.join("kg.tsv"), &data.triples);
    write_labeled(&dir.join("train.tsv"), &data.train);
    write_labeled(&dir.join("test.tsv"), &data.test);
    let grid_line = grid.map(|g| format!("grid = [{g}]\n")).unwrap_or_default();
    let config = format!(
        "version = 1\n\
         graph = [\"kg.tsv\"]\n\
         out_dir = \"out\"\n\
         k = 5\n\
         \n\
         [learner]\n\
         kind = \"{learner}\"\n\
         {grid_line}\
         \n\
         [seeds]\n\
         data = 7\n\
         model = 11\n\
         fallback = 13\n\
         \n\
         [[relation]]\n\
         name = \"profession\"\n\
         predicate = \"profession\"\n\
         train = \"train.tsv\"\n\
         test = \"test.tsv\"\n"
    );
    let path = dir.join("config.toml");
    fs::write(&path, config).unwrap();
    path
}
