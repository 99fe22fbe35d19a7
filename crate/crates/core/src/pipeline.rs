//! End-to-end orchestration: ingest → activities → featurize → train → score →
//! evaluate. Every stage is also exposed on its own so the CLI subcommands and
//! [`run_pipeline`] share one code path.
//!
//! # Config file (TOML)
//!
//! ```toml
//! version = 1
//! graph = ["kg.tsv"]          # one or more dumps
//! graph_format = "tsv"        # or "nt"
//! out_dir = "out"
//! k = 5
//! mode = "kg"                 # or "text"
//! log_base = 2.718281828459045
//!
//! [learner]
//! kind = "olr"                # or "forest"
//! grid = [1, 5, 10]           # defaults to the standard grid of the learner
//! folds = 10
//! loss_scale = "sum"          # or "mean"; OLR only
//!
//! [seeds]
//! data = 0
//! model = 0
//! fallback = 0
//!
//! [text]                      # only for mode = "text"
//! corpus = "abstracts.tsv"
//! stopwords = "stopwords.txt" # optional
//!
//! [[relation]]
//! name = "profession"
//! predicate = "profession"
//! train = "profession.train.tsv"
//! test = "profession.test.tsv"   # optional
//! aliases = "aliases.tsv"        # optional
//! ```
//!
//! Relative paths are resolved against the directory holding the config file.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{
    evaluate, read_predictions, read_via, score_triples, write_predictions, write_via, EvaluationReport, Prediction,
    DEFAULT_TOLERANCE,
};
use crate::features::{build_matrix, build_space, read_labeled_triples, FeatureMatrix, LabeledTriple};
use crate::kg_store::{AliasTable, DumpFormat, GraphBuilder, KnowledgeGraph};
use crate::learners::{default_grid, train, LearnerKind, LossScale, ModelFile, OptimizerSettings, TrainConfig, DEFAULT_FOLDS};
use crate::pertinence::{LogBase, PertinenceConfig, PertinenceTable, TlrSpec};
use crate::text_features::{build_text_matrix, build_text_space, AbstractCorpus, Stopwords};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    #[default]
    Kg,
    Text,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSection {
    #[serde(default = "default_learner")]
    pub kind: LearnerKind,
    #[serde(default)]
    pub grid: Option<Vec<f64>>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub loss_scale: LossScale,
}

fn default_learner() -> LearnerKind {
    LearnerKind::Olr
}
fn default_folds() -> usize {
    DEFAULT_FOLDS
}
fn default_max_iterations() -> usize {
    OptimizerSettings::default().max_iterations
}
fn default_tolerance() -> f64 {
    OptimizerSettings::default().tolerance
}
fn default_k() -> usize {
    5
}
fn default_format() -> String {
    "tsv".into()
}

impl Default for LearnerSection {
    fn default() -> Self {
        LearnerSection {
            kind: default_learner(),
            grid: None,
            folds: default_folds(),
            max_iterations: default_max_iterations(),
            tolerance: default_tolerance(),
            loss_scale: LossScale::default(),
        }
    }
}

impl LearnerSection {
    pub fn train_config(&self, seeds: &Seeds) -> TrainConfig {
        TrainConfig {
            learner: self.kind,
            grid: self.grid.clone().unwrap_or_else(|| default_grid(self.kind)),
            folds: self.folds,
            data_seed: seeds.data,
            model_seed: seeds.model,
            optimizer: OptimizerSettings {
                max_iterations: self.max_iterations,
                tolerance: self.tolerance,
                loss_scale: self.loss_scale,
                ..OptimizerSettings::default()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    #[serde(default)]
    pub data: u64,
    #[serde(default)]
    pub model: u64,
    #[serde(default)]
    pub fallback: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationConfig {
    pub name: String,
    pub predicate: String,
    pub train: PathBuf,
    #[serde(default)]
    pub test: Option<PathBuf>,
    #[serde(default)]
    pub aliases: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextSection {
    pub corpus: PathBuf,
    #[serde(default)]
    pub stopwords: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    pub graph: Vec<PathBuf>,
    #[serde(default = "default_format")]
    pub graph_format: String,
    pub out_dir: PathBuf,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub mode: FeatureMode,
    #[serde(default)]
    pub log_base: Option<f64>,
    #[serde(default)]
    pub learner: LearnerSection,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub text: Option<TextSection>,
    pub relation: Vec<RelationConfig>,
}

impl PipelineConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.graph.iter_mut().for_each(fix);
        fix(&mut self.out_dir);
        for r in &mut self.relation {
            fix(&mut r.train);
            r.test.as_mut().map(fix);
            r.aliases.as_mut().map(fix);
        }
        if let Some(t) = &mut self.text {
            fix(&mut t.corpus);
            t.stopwords.as_mut().map(fix);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} unsupported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.graph.is_empty() || self.relation.is_empty() {
            return Err(Error::Config("need at least one graph dump and one relation".into()));
        }
        self.graph_format.parse::<DumpFormat>()?;
        self.pertinence_config()?;
        if self.mode == FeatureMode::Text && self.text.is_none() {
            return Err(Error::Config("mode = \"text\" requires a [text] section".into()));
        }
        let mut names = std::collections::HashSet::new();
        for r in &self.relation {
            if !names.insert(&r.name) || r.name.is_empty() || r.name.contains(['/', '\\']) {
                return Err(Error::Config(format!("bad or duplicate relation name `{}`", r.name)));
            }
        }
        let mut paths: Vec<&Path> = self.graph.iter().map(PathBuf::as_path).collect();
        for r in &self.relation {
            paths.push(&r.train);
            paths.extend(r.test.as_deref());
            paths.extend(r.aliases.as_deref());
        }
        if let Some(t) = &self.text {
            paths.push(&t.corpus);
            paths.extend(t.stopwords.as_deref());
        }
        for p in paths {
            if !p.is_file() {
                return Err(Error::Config(format!("input file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn pertinence_config(&self) -> Result<PertinenceConfig> {
        Ok(PertinenceConfig {
            log_base: match self.log_base {
                Some(b) => LogBase::new(b)?,
                None => LogBase::NATURAL,
            },
            ..PertinenceConfig::default()
        })
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

pub fn ingest(dumps: &[PathBuf], format: DumpFormat) -> Result<KnowledgeGraph> {
    let mut builder = GraphBuilder::new();
    for path in dumps {
        let stats = builder.ingest(open(path)?, format).map_err(|e| match e {
            Error::Stream(io) => Error::io(path, io),
            other => other,
        })?;
        log::info!(
            "{}: {} lines, {} parsed, {} malformed",
            path.display(),
            stats.lines,
            stats.parsed,
            stats.malformed
        );
    }
    let g = builder.build();
    log::info!(
        "graph: {} triples, {} entities, {} predicates",
        g.len(),
        g.entities().len(),
        g.predicates().len()
    );
    Ok(g)
}

pub fn load_graph(path: &Path) -> Result<KnowledgeGraph> {
    KnowledgeGraph::read_snapshot(open(path)?)
}

pub fn save_graph(g: &KnowledgeGraph, path: &Path) -> Result<()> {
    g.write_snapshot(create(path)?)
}

pub fn activities(
    g: &KnowledgeGraph,
    relation: &str,
    predicate: &str,
    cfg: PertinenceConfig,
) -> Result<PertinenceTable> {
    let spec = TlrSpec::from_graph(g, relation, predicate)?;
    let table = PertinenceTable::build(g, &spec, cfg)?;
    let sizes: Vec<usize> = table.objects.iter().map(|p| p.activities.len()).collect();
    log::info!(
        "relation `{relation}`: |U| = {}, {} objects, |R_o| min {} max {}",
        table.universe_size,
        table.objects.len(),
        sizes.iter().min().copied().unwrap_or(0),
        sizes.iter().max().copied().unwrap_or(0)
    );
    Ok(table)
}

pub fn load_triples(path: &Path) -> Result<Vec<LabeledTriple>> {
    read_labeled_triples(open(path)?)
}

pub fn load_aliases(path: Option<&Path>) -> Result<AliasTable> {
    match path {
        Some(p) => AliasTable::read_tsv(open(p)?),
        None => Ok(AliasTable::new()),
    }
}

/// Inputs of the text featurizer.
pub struct TextInputs {
    pub corpus: AbstractCorpus,
    pub stopwords: Stopwords,
}

impl TextInputs {
    pub fn load(corpus: &Path, stopwords: Option<&Path>) -> Result<Self> {
        Ok(TextInputs {
            corpus: AbstractCorpus::read_tsv(open(corpus)?)?,
            stopwords: match stopwords {
                Some(p) => Stopwords::read(open(p)?)?,
                None => Stopwords::default(),
            },
        })
    }
}

/// Featurizes each triple set against one feature space built from `table`.
pub fn featurize(
    g: &KnowledgeGraph,
    table: &PertinenceTable,
    k: usize,
    text: Option<&TextInputs>,
    aliases: &AliasTable,
    sets: &[&[LabeledTriple]],
) -> Result<Vec<FeatureMatrix>> {
    match text {
        None => {
            let space = build_space(table, k)?;
            sets.iter()
                .map(|t| build_matrix(t, g, &space, table, aliases))
                .collect()
        }
        Some(inputs) => {
            let mut members = BTreeMap::new();
            for profile in &table.objects {
                let persons = g
                    .subjects_with(table.tlr_predicate, profile.object)
                    .iter()
                    .map(|&s| g.entity_name(s).to_owned())
                    .collect::<Vec<_>>();
                members.insert(g.entity_name(profile.object).to_owned(), persons);
            }
            let space = build_text_space(&inputs.corpus, &members, k, inputs.stopwords.clone())?;
            sets.iter()
                .map(|t| build_text_matrix(t, &inputs.corpus, &space, aliases))
                .collect()
        }
    }
}

/// Grid-searched model on the resolved, labeled rows of `x`.
pub fn train_model(x: &FeatureMatrix, config: &TrainConfig) -> Result<ModelFile> {
    let rows: Vec<usize> = (0..x.rows())
        .filter(|&i| x.is_resolved(i) && x.labels[i].is_some())
        .collect();
    log::info!(
        "training {} on {} of {} rows ({} unresolved or unlabeled skipped)",
        config.learner,
        rows.len(),
        x.rows(),
        x.rows() - rows.len()
    );
    train(&x.select_rows(&rows), config)
}

pub fn score(x: &FeatureMatrix, model: &ModelFile, fallback_seed: u64) -> Result<Vec<Prediction>> {
    if model.column_names != x.column_names {
        return Err(Error::Contract(
            "matrix columns differ from the columns the model was trained on".into(),
        ));
    }
    score_triples(x, model.model.as_predictor(), fallback_seed)
}

pub fn write_scores(preds: &[Prediction], path: &Path) -> Result<()> {
    write_predictions(create(path)?, preds)?;
    write_via(create(&via_path(path))?, preds)
}

pub fn via_path(predictions: &Path) -> PathBuf {
    let mut s = predictions.as_os_str().to_owned();
    s.push(".via");
    PathBuf::from(s)
}

/// Reads predictions plus their `.via` sidecar when present.
pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let mut preds = read_predictions(open(path)?)?;
    let via = via_path(path);
    if via.is_file() {
        let sources = read_via(open(&via)?)?;
        if sources.len() != preds.len() {
            return Err(Error::Contract(format!(
                "{} lists {} sources for {} predictions",
                via.display(),
                sources.len(),
                preds.len()
            )));
        }
        for (p, v) in preds.iter_mut().zip(sources) {
            p.via = v;
        }
    }
    Ok(preds)
}

pub fn write_report(report: &EvaluationReport, dir: &Path) -> Result<()> {
    let path = dir.join("report.txt");
    create(&path)?
        .write_all(report.to_text().as_bytes())
        .map_err(|e| Error::io(&path, e))?;
    let path = dir.join("report.kv");
    create(&path)?
        .write_all(report.to_kv().as_bytes())
        .map_err(|e| Error::io(&path, e))?;
    Ok(())
}

pub fn write_model(model: &ModelFile, path: &Path) -> Result<()> {
    model.write(create(path)?)
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    ModelFile::read(open(path)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationOutcome {
    pub name: String,
    pub selected: f64,
    pub cv_accuracy: f64,
    pub report: Option<EvaluationReport>,
}

struct StageMarker {
    path: PathBuf,
}

impl StageMarker {
    fn set(&self, text: &str) -> Result<()> {
        fs::write(&self.path, format!("{text}\n")).map_err(|e| Error::io(&self.path, e))
    }
}

/// Runs every stage for every relation, persisting each artifact under `out_dir`.
///
/// `out_dir/stage` names the stage in progress; it reads `done` after success
/// and `failed <stage>: <error>` after a failure.
pub fn run_pipeline(config: &PipelineConfig) -> Result<Vec<RelationOutcome>> {
    config.validate()?;
    fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
    let marker = StageMarker {
        path: config.out_dir.join("stage"),
    };
    let mut current = String::from("ingest");
    let result = run_stages(config, &marker, &mut current);
    match &result {
        Ok(_) => marker.set("done")?,
        Err(e) => {
            log::error!("stage {current} failed: {e}");
            let _ = marker.set(&format!("failed {current}: {e}"));
        }
    }
    result
}

fn run_stages(config: &PipelineConfig, marker: &StageMarker, current: &mut String) -> Result<Vec<RelationOutcome>> {
    let mut enter = |stage: String| -> Result<()> {
        log::info!("stage: {stage}");
        marker.set(&stage)?;
        *current = stage;
        Ok(())
    };

    enter("ingest".into())?;
    let format: DumpFormat = config.graph_format.parse()?;
    let g = ingest(&config.graph, format)?;
    save_graph(&g, &config.out_dir.join("graph.tsv"))?;

    let text = match (&config.mode, &config.text) {
        (FeatureMode::Text, Some(t)) => Some(TextInputs::load(&t.corpus, t.stopwords.as_deref())?),
        _ => None,
    };
    let pert = config.pertinence_config()?;
    let train_config = config.learner.train_config(&config.seeds);

    let mut outcomes = Vec::new();
    for rel in &config.relation {
        let dir = config.out_dir.join(&rel.name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

        enter(format!("{}/activities", rel.name))?;
        let table = activities(&g, &rel.name, &rel.predicate, pert)?;
        table.write_tsv(create(&dir.join("activities.tsv"))?, config.k)?;

        enter(format!("{}/featurize", rel.name))?;
        let aliases = load_aliases(rel.aliases.as_deref())?;
        let train_triples = load_triples(&rel.train)?;
        let test_triples = rel.test.as_deref().map(load_triples).transpose()?;
        let mut sets: Vec<&[LabeledTriple]> = vec![&train_triples];
        if let Some(t) = &test_triples {
            sets.push(t);
        }
        let mut matrices = featurize(&g, &table, config.k, text.as_ref(), &aliases, &sets)?.into_iter();
        let train_matrix = matrices.next().expect("train matrix");
        train_matrix.write_files(&dir.join("train.matrix.tsv"))?;
        let test_matrix = matrices.next();
        if let Some(m) = &test_matrix {
            m.write_files(&dir.join("test.matrix.tsv"))?;
        }

        enter(format!("{}/train", rel.name))?;
        let model = train_model(&train_matrix, &train_config)?;
        write_model(&model, &dir.join("model.json"))?;
        let cv_accuracy = model
            .grid
            .iter()
            .find(|e| e.value == model.selected)
            .map_or(f64::NAN, |e| e.cv.mean_accuracy);
        log::info!(
            "relation `{}`: selected {} (cv accuracy {cv_accuracy:.4})",
            rel.name,
            model.selected
        );

        let mut report = None;
        if let Some(m) = &test_matrix {
            enter(format!("{}/score", rel.name))?;
            let preds = score(m, &model, config.seeds.fallback)?;
            write_scores(&preds, &dir.join("predictions.tsv"))?;

            if preds.iter().all(|p| p.gold.is_some()) && !preds.is_empty() {
                enter(format!("{}/evaluate", rel.name))?;
                let r = evaluate(&preds, DEFAULT_TOLERANCE, config.seeds.fallback)?;
                log::info!(
                    "relation `{}`: accuracy {:.4}, avg diff {:.4}, tau {:.4}, {} fallbacks",
                    rel.name,
                    r.accuracy,
                    r.avg_score_diff,
                    r.kendall_tau,
                    r.n_fallback
                );
                write_report(&r, &dir)?;
                report = Some(r);
            }
        }
        outcomes.push(RelationOutcome {
            name: rel.name.clone(),
            selected: model.selected,
            cv_accuracy,
            report,
        });
    }
    Ok(outcomes)
}
