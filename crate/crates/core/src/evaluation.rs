//! Scoring with the random fallback, and the three task metrics.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{parse_score, FeatureMatrix, LabeledTriple, MAX_SCORE};
use crate::kg_store::{escape_field, unescape_field};
use crate::learners::Predictor;

/// A prediction counts as correct when it is within this many points of gold.
pub const DEFAULT_TOLERANCE: u8 = 2;
pub const FALLBACK_RNG: &str = "chacha8";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Via {
    Model,
    RandomFallback,
}

impl Via {
    pub fn as_str(self) -> &'static str {
        match self {
            Via::Model => "model",
            Via::RandomFallback => "random-fallback",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    pub person: String,
    pub object: String,
    pub predicted: u8,
    pub gold: Option<u8>,
    pub via: Via,
}

/// Predicts every row of `x`: resolved rows through `model`, unresolved rows
/// uniformly from 0-7 with a ChaCha8 generator seeded by `seed`.
pub fn score_triples(x: &FeatureMatrix, model: &dyn Predictor, seed: u64) -> Result<Vec<Prediction>> {
    if model.n_features() != x.cols() {
        return Err(Error::Contract(format!(
            "model expects {} features, matrix has {}",
            model.n_features(),
            x.cols()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let preds: Vec<Prediction> = (0..x.rows())
        .map(|i| {
            let meta = &x.meta[i];
            let (predicted, via) = if meta.resolved {
                (model.predict(x.row(i)), Via::Model)
            } else {
                (rng.gen_range(0..=MAX_SCORE), Via::RandomFallback)
            };
            Prediction {
                person: meta.person.clone(),
                object: meta.object.clone(),
                predicted,
                gold: x.labels[i],
                via,
            }
        })
        .collect();
    let fallback = preds.iter().filter(|p| p.via == Via::RandomFallback).count();
    log::info!("scored {} triples, {fallback} by random fallback", preds.len());
    Ok(preds)
}

/// Fraction of pairs with `|predicted - gold| <= tolerance`; 0 for empty input.
pub fn task_accuracy(predicted: &[u8], gold: &[u8], tolerance: u8) -> f64 {
    if predicted.is_empty() {
        return 0.0;
    }
    let hits = predicted
        .iter()
        .zip(gold)
        .filter(|(&p, &g)| p.abs_diff(g) <= tolerance)
        .count();
    hits as f64 / predicted.len() as f64
}

fn gold_pairs(preds: &[Prediction]) -> Result<(Vec<u8>, Vec<u8>)> {
    let mut predicted = Vec::with_capacity(preds.len());
    let mut gold = Vec::with_capacity(preds.len());
    for (i, p) in preds.iter().enumerate() {
        let g = p
            .gold
            .ok_or_else(|| Error::Contract(format!("prediction {i} has no gold score")))?;
        predicted.push(p.predicted);
        gold.push(g);
    }
    if predicted.is_empty() {
        return Err(Error::Contract("no predictions to evaluate".into()));
    }
    Ok((predicted, gold))
}

pub fn accuracy(preds: &[Prediction]) -> Result<f64> {
    accuracy_with(preds, DEFAULT_TOLERANCE)
}

pub fn accuracy_with(preds: &[Prediction], tolerance: u8) -> Result<f64> {
    let (p, g) = gold_pairs(preds)?;
    Ok(task_accuracy(&p, &g, tolerance))
}

pub fn avg_score_diff(preds: &[Prediction]) -> Result<f64> {
    let (p, g) = gold_pairs(preds)?;
    let total: u64 = p.iter().zip(&g).map(|(&a, &b)| u64::from(a.abs_diff(b))).sum();
    Ok(total as f64 / p.len() as f64)
}

/// Kendall tau-b between predicted and gold scores; NaN when either side is constant.
pub fn kendall_tau(preds: &[Prediction]) -> Result<f64> {
    let (p, g) = gold_pairs(preds)?;
    if p.len() < 2 {
        return Err(Error::Contract("Kendall tau needs at least 2 rows".into()));
    }
    let p: Vec<i64> = p.into_iter().map(i64::from).collect();
    let g: Vec<i64> = g.into_iter().map(i64::from).collect();
    let tau = kendall_tau_b(&p, &g);
    if tau.is_nan() {
        log::warn!("Kendall tau undefined: predicted or gold scores have no variance");
    }
    Ok(tau)
}

fn tie_pairs<T: PartialEq>(sorted: &[T]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for i in 1..=sorted.len() {
        if i < sorted.len() && sorted[i] == sorted[i - 1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total
}

/// Counts pairs `i < j` with `v[i] > v[j]` while sorting `v`.
fn merge_count(v: &mut [i64], buf: &mut Vec<i64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], buf) + merge_count(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf.push(v[j]);
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Knight's O(n log n) tau-b.
pub fn kendall_tau_b(x: &[i64], y: &[i64]) -> f64 {
    assert_eq!(x.len(), y.len(), "tau-b needs paired sequences");
    let n = x.len() as u64;
    let n0 = n * n.saturating_sub(1) / 2;
    let mut pairs: Vec<(i64, i64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_unstable();

    let xs: Vec<i64> = pairs.iter().map(|p| p.0).collect();
    let tied_x = tie_pairs(&xs);
    let tied_xy = tie_pairs(&pairs);

    let mut ys: Vec<i64> = pairs.iter().map(|p| p.1).collect();
    let mut scratch = Vec::with_capacity(ys.len());
    let swaps = merge_count(&mut ys, &mut scratch);
    let tied_y = tie_pairs(&ys);

    let numerator = n0 as f64 - tied_x as f64 - tied_y as f64 + tied_xy as f64 - 2.0 * swaps as f64;
    let denominator = ((n0 - tied_x) as f64 * (n0 - tied_y) as f64).sqrt();
    if denominator == 0.0 {
        return f64::NAN;
    }
    numerator / denominator
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub accuracy: f64,
    pub avg_score_diff: f64,
    pub kendall_tau: f64,
    pub n: usize,
    pub n_fallback: usize,
    pub tolerance: u8,
    pub fallback_rng: String,
    pub fallback_seed: u64,
}

pub fn evaluate(preds: &[Prediction], tolerance: u8, fallback_seed: u64) -> Result<EvaluationReport> {
    let kendall_tau = if preds.len() >= 2 {
        kendall_tau(preds)?
    } else {
        f64::NAN
    };
    Ok(EvaluationReport {
        accuracy: accuracy_with(preds, tolerance)?,
        avg_score_diff: avg_score_diff(preds)?,
        kendall_tau,
        n: preds.len(),
        n_fallback: preds.iter().filter(|p| p.via == Via::RandomFallback).count(),
        tolerance,
        fallback_rng: FALLBACK_RNG.into(),
        fallback_seed,
    })
}

impl EvaluationReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "triples evaluated     {}", self.n);
        let _ = writeln!(s, "random fallbacks      {}", self.n_fallback);
        let _ = writeln!(s, "accuracy (|d| <= {})   {:.4}", self.tolerance, self.accuracy);
        let _ = writeln!(s, "average score diff    {:.4}", self.avg_score_diff);
        let _ = writeln!(s, "kendall tau-b         {:.4}", self.kendall_tau);
        let _ = writeln!(s, "fallback generator    {} (seed {})", self.fallback_rng, self.fallback_seed);
        s
    }

    pub fn to_kv(&self) -> String {
        format!(
            "accuracy={}\navg_score_diff={}\nkendall_tau={}\nn={}\nn_fallback={}\ntolerance={}\nfallback_rng={}\nfallback_seed={}\n",
            self.accuracy,
            self.avg_score_diff,
            self.kendall_tau,
            self.n,
            self.n_fallback,
            self.tolerance,
            self.fallback_rng,
            self.fallback_seed
        )
    }
}

/// Contest layout: `person<TAB>object<TAB>score`.
pub fn write_predictions<W: Write>(mut out: W, preds: &[Prediction]) -> Result<()> {
    for p in preds {
        writeln!(
            out,
            "{}\t{}\t{}",
            escape_field(&p.person),
            escape_field(&p.object),
            p.predicted
        )?;
    }
    out.flush()?;
    Ok(())
}

/// One `model` / `random-fallback` line per prediction.
pub fn write_via<W: Write>(mut out: W, preds: &[Prediction]) -> Result<()> {
    for p in preds {
        writeln!(out, "{}", p.via.as_str())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_via<R: BufRead>(source: R) -> Result<Vec<Via>> {
    source
        .lines()
        .enumerate()
        .map(|(n, line)| match line?.trim() {
            "model" => Ok(Via::Model),
            "random-fallback" => Ok(Via::RandomFallback),
            other => Err(Error::parse(format!("via:{}", n + 1), format!("unknown source `{other}`"))),
        })
        .collect()
}

pub fn read_predictions<R: BufRead>(source: R) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for (n, line) in source.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let loc = || format!("predictions:{}", n + 1);
        let fields: Vec<&str> = line.split('\t').collect();
        let [person, object, score] = fields.as_slice() else {
            return Err(Error::parse(loc(), "expected person, object, score"));
        };
        let predicted = parse_score(score.trim())
            .ok_or_else(|| Error::parse(loc(), format!("score `{score}` outside 0-7")))?;
        out.push(Prediction {
            person: unescape_field(person),
            object: unescape_field(object),
            predicted,
            gold: None,
            via: Via::Model,
        });
    }
    Ok(out)
}

/// Attaches gold scores by `(person, object)`, in gold-file order. Every gold
/// triple must have a prediction.
pub fn join_gold(preds: Vec<Prediction>, gold: &[LabeledTriple]) -> Result<Vec<Prediction>> {
    let mut by_key: HashMap<(String, String), VecDeque<Prediction>> = HashMap::new();
    for p in preds {
        by_key
            .entry((p.person.clone(), p.object.clone()))
            .or_default()
            .push_back(p);
    }
    gold.iter()
        .map(|t| {
            let score = t.score.ok_or_else(|| {
                Error::Config(format!("gold triple ({}, {}) has no score", t.person, t.object))
            })?;
            let mut p = by_key
                .get_mut(&(t.person.clone(), t.object.clone()))
                .and_then(VecDeque::pop_front)
                .ok_or_else(|| Error::Lookup {
                    kind: "prediction for",
                    name: format!("({}, {})", t.person, t.object),
                })?;
            p.gold = Some(score);
            Ok(p)
        })
        .collect()
}
