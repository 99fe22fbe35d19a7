//! Model training: ordinal logistic regression and random forests, plus seeded
//! k-fold cross-validation and grid search shared by both.

pub mod forest;
pub mod olr;

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::task_accuracy;
use crate::features::{FeatureMatrix, RowView};

pub use forest::{fit_forest, forest_votes, predict_forest, ForestModel};
pub use olr::{fit_olr, olr_gradient, olr_loss, predict_olr, LossScale, OptimizerSettings, OrdinalModel, N_THRESHOLDS};

pub const DEFAULT_FOLDS: usize = 10;
pub const DEFAULT_OLR_GRID: [f64; 11] = [1.0, 5.0, 10.0, 15.0, 20.0, 50.0, 75.0, 100.0, 250.0, 500.0, 1000.0];
pub const DEFAULT_FOREST_GRID: [usize; 5] = [10, 50, 100, 250, 500];

pub trait Predictor {
    fn predict(&self, row: RowView<'_>) -> u8;
    fn n_features(&self) -> usize;
}

impl Predictor for OrdinalModel {
    fn predict(&self, row: RowView<'_>) -> u8 {
        predict_olr(self, row)
    }

    fn n_features(&self) -> usize {
        self.weights.len()
    }
}

impl Predictor for ForestModel {
    fn predict(&self, row: RowView<'_>) -> u8 {
        predict_forest(self, row)
    }

    fn n_features(&self) -> usize {
        self.n_features
    }
}

/// Something that fits a [`Predictor`] for one hyperparameter value.
pub trait Learner: Sync {
    type Param: Copy + PartialOrd + fmt::Display + Send + Sync;
    type Model: Predictor + Send;

    fn fit(&self, x: &FeatureMatrix, y: &[u8], param: Self::Param) -> Result<Self::Model>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OlrLearner {
    pub settings: OptimizerSettings,
}

impl Learner for OlrLearner {
    type Param = f64;
    type Model = OrdinalModel;

    fn fit(&self, x: &FeatureMatrix, y: &[u8], alpha: f64) -> Result<OrdinalModel> {
        fit_olr(x, y, alpha, &self.settings)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ForestLearner {
    pub seed: u64,
}

impl Learner for ForestLearner {
    type Param = usize;
    type Model = ForestModel;

    fn fit(&self, x: &FeatureMatrix, y: &[u8], n_estimators: usize) -> Result<ForestModel> {
        fit_forest(x, y, n_estimators, self.seed)
    }
}

/// Test-row indices per fold: a seeded shuffle cut into contiguous pieces
/// whose sizes differ by at most one.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {folds}")));
    }
    if n < folds {
        return Err(Error::Config(format!("{n} rows cannot fill {folds} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / folds, n % folds);
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let len = base + usize::from(f < extra);
        out.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvScore {
    pub mean_accuracy: f64,
    pub fold_accuracy: Vec<f64>,
}

/// Mean held-out task accuracy over seeded folds.
pub fn cross_validate<L: Learner>(
    learner: &L,
    x: &FeatureMatrix,
    y: &[u8],
    param: L::Param,
    folds: usize,
    seed: u64,
) -> Result<CvScore> {
    if y.len() != x.rows() {
        return Err(Error::Contract("label count differs from row count".into()));
    }
    let assignment = fold_assignment(x.rows(), folds, seed)?;
    let fold_accuracy: Vec<f64> = assignment
        .par_iter()
        .map(|test| {
            let mut is_test = vec![false; x.rows()];
            test.iter().for_each(|&i| is_test[i] = true);
            let train: Vec<usize> = (0..x.rows()).filter(|&i| !is_test[i]).collect();
            let x_train = x.select_rows(&train);
            let y_train: Vec<u8> = train.iter().map(|&i| y[i]).collect();
            let model = learner.fit(&x_train, &y_train, param)?;
            let predicted: Vec<u8> = test.iter().map(|&i| model.predict(x.row(i))).collect();
            let gold: Vec<u8> = test.iter().map(|&i| y[i]).collect();
            Ok(task_accuracy(&predicted, &gold, crate::evaluation::DEFAULT_TOLERANCE))
        })
        .collect::<Result<_>>()?;
    let mean_accuracy = fold_accuracy.iter().sum::<f64>() / fold_accuracy.len() as f64;
    Ok(CvScore {
        mean_accuracy,
        fold_accuracy,
    })
}

pub struct GridSearch<L: Learner> {
    pub best_param: L::Param,
    pub best_model: L::Model,
    pub scores: Vec<(L::Param, CvScore)>,
}

/// Cross-validates every grid value, keeps the best mean accuracy (ties to the
/// smaller value) and refits it on all rows.
pub fn grid_search<L: Learner>(
    learner: &L,
    x: &FeatureMatrix,
    y: &[u8],
    grid: &[L::Param],
    folds: usize,
    seed: u64,
) -> Result<GridSearch<L>> {
    if grid.is_empty() {
        return Err(Error::Config("empty hyperparameter grid".into()));
    }
    let mut scores = Vec::with_capacity(grid.len());
    for &param in grid {
        let score = cross_validate(learner, x, y, param, folds, seed)?;
        log::info!("grid value {param}: cv accuracy {:.4}", score.mean_accuracy);
        scores.push((param, score));
    }
    let mut best = 0;
    for (i, (param, score)) in scores.iter().enumerate().skip(1) {
        let (best_param, best_score) = &scores[best];
        if score.mean_accuracy > best_score.mean_accuracy
            || (score.mean_accuracy == best_score.mean_accuracy && param < best_param)
        {
            best = i;
        }
    }
    let best_param = scores[best].0;
    let best_model = learner.fit(x, y, best_param)?;
    Ok(GridSearch {
        best_param,
        best_model,
        scores,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    Olr,
    Forest,
}

impl FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "olr" => Ok(LearnerKind::Olr),
            "forest" | "rf" => Ok(LearnerKind::Forest),
            other => Err(Error::Config(format!("unknown learner `{other}`"))),
        }
    }
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LearnerKind::Olr => "olr",
            LearnerKind::Forest => "forest",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learner: LearnerKind,
    /// Penalties for OLR or tree counts for the forest.
    pub grid: Vec<f64>,
    pub folds: usize,
    /// Fold shuffling seed.
    pub data_seed: u64,
    /// Forest bootstrap/feature sampling seed.
    pub model_seed: u64,
    pub optimizer: OptimizerSettings,
}

impl TrainConfig {
    pub fn new(learner: LearnerKind) -> Self {
        TrainConfig {
            learner,
            grid: default_grid(learner),
            folds: DEFAULT_FOLDS,
            data_seed: 0,
            model_seed: 0,
            optimizer: OptimizerSettings::default(),
        }
    }
}

pub fn default_grid(learner: LearnerKind) -> Vec<f64> {
    match learner {
        LearnerKind::Olr => DEFAULT_OLR_GRID.to_vec(),
        LearnerKind::Forest => DEFAULT_FOREST_GRID.iter().map(|&n| n as f64).collect(),
    }
}

/// Parses a comma-separated grid such as `1,5,10`.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| Error::Config(format!("bad grid value `{s}`")))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrainedModel {
    Olr(OrdinalModel),
    Forest(ForestModel),
}

impl TrainedModel {
    pub fn as_predictor(&self) -> &dyn Predictor {
        match self {
            TrainedModel::Olr(m) => m,
            TrainedModel::Forest(m) => m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub value: f64,
    pub cv: CvScore,
}

/// Versioned on-disk model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub folds: usize,
    pub data_seed: u64,
    pub selected: f64,
    pub grid: Vec<GridEntry>,
    pub column_names: Vec<String>,
    pub model: TrainedModel,
}

pub const MODEL_FORMAT: &str = "relsifter-model";
pub const MODEL_VERSION: u32 = 1;

impl ModelFile {
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut out, self)
            .map_err(|e| Error::Contract(format!("model serialization failed: {e}")))?;
        writeln!(out)?;
        out.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(source: R) -> Result<Self> {
        let file: ModelFile = serde_json::from_reader(source)
            .map_err(|e| Error::parse("model file", e.to_string()))?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(Error::parse(
                "model file",
                format!("unsupported format {} v{}", file.format, file.version),
            ));
        }
        Ok(file)
    }
}

fn forest_grid(grid: &[f64]) -> Result<Vec<usize>> {
    grid.iter()
        .map(|&v| {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!("tree count must be a positive integer, got {v}")))
            }
        })
        .collect()
}

/// Grid search with `config` on every row of `x` (all rows must be labeled).
pub fn train(x: &FeatureMatrix, config: &TrainConfig) -> Result<ModelFile> {
    let y = x.required_labels()?;
    let (selected, model, grid) = match config.learner {
        LearnerKind::Olr => {
            let learner = OlrLearner {
                settings: config.optimizer,
            };
            let search = grid_search(&learner, x, &y, &config.grid, config.folds, config.data_seed)?;
            if !search.best_model.converged {
                log::warn!(
                    "OLR alpha={} did not reach tolerance {:e} in {} iterations",
                    search.best_param,
                    config.optimizer.tolerance,
                    search.best_model.iterations
                );
            }
            let grid = search
                .scores
                .into_iter()
                .map(|(value, cv)| GridEntry { value, cv })
                .collect();
            (search.best_param, TrainedModel::Olr(search.best_model), grid)
        }
        LearnerKind::Forest => {
            let learner = ForestLearner {
                seed: config.model_seed,
            };
            let values = forest_grid(&config.grid)?;
            let search = grid_search(&learner, x, &y, &values, config.folds, config.data_seed)?;
            let grid = search
                .scores
                .into_iter()
                .map(|(value, cv)| GridEntry {
                    value: value as f64,
                    cv,
                })
                .collect();
            (
                search.best_param as f64,
                TrainedModel::Forest(search.best_model),
                grid,
            )
        }
    };
    Ok(ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        folds: config.folds,
        data_seed: config.data_seed,
        selected,
        grid,
        column_names: x.column_names.clone(),
        model,
    })
}
