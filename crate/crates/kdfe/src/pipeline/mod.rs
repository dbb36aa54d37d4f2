//! The fixed evaluation grid: preprocessing, feature selection, model fitting
//! with cross-validated hyperparameter search, and held-out metrics.
//!
//! A grid cell is one (imputation, balancing, scorer, model) combination.
//! Within a cell, every model hyperparameter combination is crossed with the
//! selected-feature counts {5, 10, 15} and scored by 5-fold CV accuracy; all
//! fold statistics (imputation, scaling, oversampling, selection) are fitted
//! on the fold's training part only. Each cell owns a private RNG derived
//! from the master seed and the cell's config string, so parallel and serial
//! runs produce identical records.

pub mod frame;
pub mod metrics;
pub mod models;
pub mod preprocess;
pub mod select;

use frame::{encode, fit_encoder, Matrix, RawFrame};
use metrics::{compute_metrics, MetricsRecord};
use models::forest::{fit_trees, forest_scores, ForestModel};
use models::knn::{knn_scores_multi, KnnModel};
use models::linear::{fit_linear, LinearKind, SvmLoss};
use models::rbf_svm::fit_rbf_svm;
use models::{ModelKind, TrainedModel};
use preprocess::{
    oversample, stratified_kfold, stratified_split, Balancing, Imputation, Imputer, MinMaxScaler,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use select::{score_features, FsScorer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("preprocess error: {0}")]
    Preprocess(#[from] preprocess::PreprocessError),
    #[error("metrics error: {0}")]
    Metrics(#[from] metrics::MetricsError),
    #[error("cross-validation degenerate: {0}")]
    DegenerateCv(String),
    #[error("feature/column mismatch: expected {expected} columns, got {got}")]
    ColumnMismatch { expected: usize, got: usize },
}

pub const K_GRID: [usize; 3] = [5, 10, 15];
pub const ONE_HOT_CARDINALITY_THRESHOLD: usize = 10;
pub const SPLIT_SEED: u64 = 42;
pub const TRAIN_RATIO: f64 = 0.8;
const CV_FOLDS: usize = 5;

/// Feature-set group; decides the grid shape (24 vs 72 cells).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Event,
    Pcd,
}

/// One cell of the evaluation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub imputation: Imputation,
    pub balancing: Balancing,
    pub fs_scorer: FsScorer,
    pub model: ModelKind,
}

impl PipelineConfig {
    pub fn label(&self) -> String {
        format!(
            "{:?}|{:?}|{:?}|{}",
            self.imputation,
            self.balancing,
            self.fs_scorer,
            self.model.as_str()
        )
    }
}

/// Grid enumeration, identical order across experiments in a group so that
/// per-config comparisons line up by index.
pub fn grid_configs(group: Group) -> Vec<PipelineConfig> {
    let imputations = [Imputation::Mean, Imputation::Median];
    let (balancers, scorers, model_kinds): (Vec<Balancing>, Vec<FsScorer>, Vec<ModelKind>) =
        match group {
            Group::Event => (
                vec![Balancing::Smote, Balancing::Adasyn],
                vec![FsScorer::AnovaF, FsScorer::Chi2],
                vec![ModelKind::Knn, ModelKind::LogReg, ModelKind::LinearSvm],
            ),
            Group::Pcd => (
                vec![Balancing::Smote, Balancing::Adasyn, Balancing::None],
                vec![FsScorer::AnovaF, FsScorer::Chi2, FsScorer::MutualInfo],
                vec![
                    ModelKind::Knn,
                    ModelKind::LogReg,
                    ModelKind::RbfSvm,
                    ModelKind::RandomForest,
                ],
            ),
        };
    let mut out = Vec::new();
    for imputation in imputations {
        for &balancing in &balancers {
            for &fs_scorer in &scorers {
                for &model in &model_kinds {
                    out.push(PipelineConfig {
                        imputation,
                        balancing,
                        fs_scorer,
                        model,
                    });
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Problem preparation
// ---------------------------------------------------------------------------

/// Encoded matrix plus the fixed train/test split shared by every grid cell.
#[derive(Debug, Clone)]
pub struct Problem {
    pub matrix: Matrix,
    pub y: Vec<bool>,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
pub struct ProblemOptions {
    pub split_seed: u64,
    /// Row budget for very large event matrices: a deterministic stratified
    /// subsample keeps the grid tractable at desk scale. `None` disables.
    pub max_rows: Option<usize>,
    pub subsample_seed: u64,
}

impl Default for ProblemOptions {
    fn default() -> Self {
        ProblemOptions {
            split_seed: SPLIT_SEED,
            max_rows: None,
            subsample_seed: 7,
        }
    }
}

fn stratified_subsample(y: &[bool], cap: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = y.len();
    let mut keep = Vec::with_capacity(cap);
    for class in [false, true] {
        let mut indices: Vec<usize> = (0..total).filter(|&i| y[i] == class).collect();
        indices.shuffle(&mut rng);
        let quota = ((indices.len() as f64 / total as f64) * cap as f64).round() as usize;
        indices.truncate(quota.max(1));
        keep.extend(indices);
    }
    keep.sort_unstable();
    keep.truncate(cap);
    keep
}

/// Splits, fits the categorical encoder on the training rows, and encodes.
pub fn prepare_problem(
    frame: &RawFrame,
    options: ProblemOptions,
) -> Result<Problem, PipelineError> {
    let (frame_rows, y): (Option<Vec<usize>>, Vec<bool>) = match options.max_rows {
        Some(cap) if frame.rows() > cap => {
            let keep = stratified_subsample(&frame.y, cap, options.subsample_seed);
            let y = keep.iter().map(|&i| frame.y[i]).collect();
            (Some(keep), y)
        }
        _ => (None, frame.y.clone()),
    };
    let subsampled = match &frame_rows {
        None => frame.clone(),
        Some(keep) => {
            let columns = frame
                .columns
                .iter()
                .map(|c| match c {
                    frame::RawColumn::Numeric { id, values } => frame::RawColumn::Numeric {
                        id: id.clone(),
                        values: keep.iter().map(|&i| values[i]).collect(),
                    },
                    frame::RawColumn::Categorical { id, values } => {
                        frame::RawColumn::Categorical {
                            id: id.clone(),
                            values: keep.iter().map(|&i| values[i].clone()).collect(),
                        }
                    }
                    frame::RawColumn::Date { id, values } => frame::RawColumn::Date {
                        id: id.clone(),
                        values: keep.iter().map(|&i| values[i]).collect(),
                    },
                })
                .collect();
            RawFrame {
                columns,
                y: y.clone(),
            }
        }
    };
    let (train_idx, test_idx) = stratified_split(&y, TRAIN_RATIO, options.split_seed)?;
    let encoder = fit_encoder(&subsampled, &train_idx, ONE_HOT_CARDINALITY_THRESHOLD);
    let matrix = encode(&subsampled, &encoder);
    Ok(Problem {
        matrix,
        y,
        train_idx,
        test_idx,
    })
}

// ---------------------------------------------------------------------------
// Hyperparameter grids
// ---------------------------------------------------------------------------

pub const KNN_NEIGHBOR_GRID: [usize; 3] = [3, 5, 7];
pub const LOGREG_C_GRID: [f64; 5] = [0.001, 0.01, 0.1, 1.0, 10.0];
pub const LOGREG_MAX_ITER: usize = 100;
pub const LINEAR_SVM_C_GRID: [f64; 5] = [0.001, 0.01, 0.1, 1.0, 10.0];
pub const LINEAR_SVM_MAX_ITER: usize = 1000;
pub const LINEAR_SVM_LOSSES: [SvmLoss; 2] = [SvmLoss::Hinge, SvmLoss::SquaredHinge];
pub const RBF_SVM_C_GRID: [f64; 3] = [0.1, 1.0, 10.0];
pub const FOREST_TREES_GRID: [usize; 3] = [100, 200, 300];
pub const FOREST_DEPTH_GRID: [Option<usize>; 3] = [None, Some(5), Some(10)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HyperParams {
    Knn { n_neighbors: usize },
    LogReg { c: f64 },
    LinearSvm { c: f64, loss: SvmLoss },
    RbfSvm { c: f64 },
    Forest { n_trees: usize, max_depth: Option<usize> },
}

impl HyperParams {
    pub fn label(&self) -> String {
        match self {
            HyperParams::Knn { n_neighbors } => format!("n_neighbors={n_neighbors}"),
            HyperParams::LogReg { c } => format!("C={c}"),
            HyperParams::LinearSvm { c, loss } => format!("C={c},loss={loss:?}"),
            HyperParams::RbfSvm { c } => format!("C={c}"),
            HyperParams::Forest { n_trees, max_depth } => match max_depth {
                None => format!("n_estimators={n_trees},max_depth=None"),
                Some(d) => format!("n_estimators={n_trees},max_depth={d}"),
            },
        }
    }
}

pub fn hyper_grid(model: ModelKind) -> Vec<HyperParams> {
    match model {
        ModelKind::Knn => KNN_NEIGHBOR_GRID
            .iter()
            .map(|&n| HyperParams::Knn { n_neighbors: n })
            .collect(),
        ModelKind::LogReg => LOGREG_C_GRID
            .iter()
            .map(|&c| HyperParams::LogReg { c })
            .collect(),
        ModelKind::LinearSvm => {
            let mut out = Vec::new();
            for &c in &LINEAR_SVM_C_GRID {
                for &loss in &LINEAR_SVM_LOSSES {
                    out.push(HyperParams::LinearSvm { c, loss });
                }
            }
            out
        }
        ModelKind::RbfSvm => RBF_SVM_C_GRID
            .iter()
            .map(|&c| HyperParams::RbfSvm { c })
            .collect(),
        ModelKind::RandomForest => {
            let mut out = Vec::new();
            for &max_depth in &FOREST_DEPTH_GRID {
                for &n_trees in &FOREST_TREES_GRID {
                    out.push(HyperParams::Forest { n_trees, max_depth });
                }
            }
            out
        }
    }
}

// ---------------------------------------------------------------------------
// Cell fitting
// ---------------------------------------------------------------------------

/// Everything a fitted grid cell needs to score new rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedCell {
    pub config: PipelineConfig,
    pub imputer: Imputer,
    pub scaler: MinMaxScaler,
    pub selected_columns: Vec<usize>,
    pub selected_names: Vec<String>,
    pub model: TrainedModel,
    pub chosen_k: usize,
    pub chosen_hyper: HyperParams,
    pub cv_accuracy: f64,
}

fn derived_seed(base: u64, salt: u64) -> u64 {
    base ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn accuracy(scores: &[f64], labels: &[bool]) -> f64 {
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(s, l)| (**s > 0.5) == **l)
        .count();
    correct as f64 / labels.len().max(1) as f64
}

struct PreparedFold {
    /// Balanced, imputed, scaled training part.
    fit_x: Matrix,
    fit_y: Vec<bool>,
    /// Imputed, scaled validation part.
    val_x: Matrix,
    val_y: Vec<bool>,
}

fn prepare_fold(
    train_x: &Matrix,
    train_y: &[bool],
    fit_idx: &[usize],
    val_idx: &[usize],
    config: &PipelineConfig,
    rng: &mut ChaCha8Rng,
) -> Option<PreparedFold> {
    let fit_y: Vec<bool> = fit_idx.iter().map(|&i| train_y[i]).collect();
    let val_y: Vec<bool> = val_idx.iter().map(|&i| train_y[i]).collect();
    let classes = fit_y.iter().filter(|v| **v).count();
    if classes == 0 || classes == fit_y.len() {
        return None; // degenerate fold
    }
    let mut fit_x = train_x.slice_rows(fit_idx);
    let mut val_x = train_x.slice_rows(val_idx);
    let imputer = Imputer::fit(&fit_x, config.imputation);
    imputer.transform(&mut fit_x);
    imputer.transform(&mut val_x);
    let scaler = MinMaxScaler::fit(&fit_x);
    scaler.transform(&mut fit_x);
    scaler.transform(&mut val_x);
    let (fit_x, fit_y) = oversample(&fit_x, &fit_y, config.balancing, rng);
    Some(PreparedFold {
        fit_x,
        fit_y,
        val_x,
        val_y,
    })
}

/// Validation accuracies for every hyperparameter on one (fold, k) dataset.
/// KNN shares one neighbor search across its grid; the forest evaluates
/// n_estimators as prefixes of a single 300-tree build per depth.
fn fold_accuracies(
    model: ModelKind,
    hypers: &[HyperParams],
    fit_x: &Matrix,
    fit_y: &[bool],
    val_x: &Matrix,
    val_y: &[bool],
    seed: u64,
) -> Vec<f64> {
    match model {
        ModelKind::Knn => {
            let ks: Vec<usize> = hypers
                .iter()
                .map(|h| match h {
                    HyperParams::Knn { n_neighbors } => *n_neighbors,
                    _ => unreachable!(),
                })
                .collect();
            knn_scores_multi(fit_x, fit_y, val_x, &ks)
                .into_iter()
                .map(|scores| accuracy(&scores, val_y))
                .collect()
        }
        ModelKind::LogReg => hypers
            .iter()
            .map(|h| match h {
                HyperParams::LogReg { c } => {
                    let m = fit_linear(fit_x, fit_y, LinearKind::Logistic, *c, LOGREG_MAX_ITER);
                    accuracy(&m.predict_scores(val_x), val_y)
                }
                _ => unreachable!(),
            })
            .collect(),
        ModelKind::LinearSvm => hypers
            .iter()
            .map(|h| match h {
                HyperParams::LinearSvm { c, loss } => {
                    let m = fit_linear(
                        fit_x,
                        fit_y,
                        LinearKind::Svm(*loss),
                        *c,
                        LINEAR_SVM_MAX_ITER,
                    );
                    accuracy(&m.predict_scores(val_x), val_y)
                }
                _ => unreachable!(),
            })
            .collect(),
        ModelKind::RbfSvm => hypers
            .iter()
            .enumerate()
            .map(|(i, h)| match h {
                HyperParams::RbfSvm { c } => {
                    let m = fit_rbf_svm(fit_x, fit_y, *c, derived_seed(seed, i as u64 + 1));
                    accuracy(&m.predict_scores(val_x), val_y)
                }
                _ => unreachable!(),
            })
            .collect(),
        ModelKind::RandomForest => {
            let max_trees = FOREST_TREES_GRID[FOREST_TREES_GRID.len() - 1];
            let mut out = vec![0.0; hypers.len()];
            for (depth_idx, &depth) in FOREST_DEPTH_GRID.iter().enumerate() {
                let trees = fit_trees(
                    fit_x,
                    fit_y,
                    max_trees,
                    depth,
                    derived_seed(seed, depth_idx as u64 + 1),
                );
                for (i, h) in hypers.iter().enumerate() {
                    if let HyperParams::Forest { n_trees, max_depth } = h {
                        if *max_depth == depth {
                            let scores = forest_scores(&trees[..*n_trees], val_x);
                            out[i] = accuracy(&scores, val_y);
                        }
                    }
                }
            }
            out
        }
    }
}

fn fit_final_model(
    model: ModelKind,
    hyper: &HyperParams,
    x: &Matrix,
    y: &[bool],
    seed: u64,
) -> TrainedModel {
    match (model, hyper) {
        (ModelKind::Knn, HyperParams::Knn { n_neighbors }) => {
            TrainedModel::Knn(KnnModel::fit(x, y, *n_neighbors))
        }
        (ModelKind::LogReg, HyperParams::LogReg { c }) => TrainedModel::Linear(fit_linear(
            x,
            y,
            LinearKind::Logistic,
            *c,
            LOGREG_MAX_ITER,
        )),
        (ModelKind::LinearSvm, HyperParams::LinearSvm { c, loss }) => TrainedModel::Linear(
            fit_linear(x, y, LinearKind::Svm(*loss), *c, LINEAR_SVM_MAX_ITER),
        ),
        (ModelKind::RbfSvm, HyperParams::RbfSvm { c }) => {
            TrainedModel::Rbf(fit_rbf_svm(x, y, *c, seed))
        }
        (ModelKind::RandomForest, HyperParams::Forest { n_trees, max_depth }) => {
            TrainedModel::Forest(ForestModel::fit(x, y, *n_trees, *max_depth, seed))
        }
        _ => unreachable!("hyperparameter/model mismatch"),
    }
}

/// Fits one grid cell on the training split: exhaustive (hyperparams × k)
/// search by 5-fold CV accuracy, ties broken towards smaller k then grid
/// order, then a refit on the full training split.
pub fn fit_model(
    train_x: &Matrix,
    train_y: &[bool],
    config: &PipelineConfig,
    cell_seed: u64,
) -> Result<FittedCell, PipelineError> {
    let folds = stratified_kfold(train_y, CV_FOLDS);
    let hypers = hyper_grid(config.model);
    let mut acc_sum = vec![vec![0.0f64; K_GRID.len()]; hypers.len()];
    let mut folds_used = 0usize;

    for (fold_idx, val_idx) in folds.iter().enumerate() {
        let fit_idx: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != fold_idx)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        let mut fold_rng =
            ChaCha8Rng::seed_from_u64(derived_seed(cell_seed, fold_idx as u64 + 101));
        let Some(prepared) = prepare_fold(
            train_x,
            train_y,
            &fit_idx,
            val_idx,
            config,
            &mut fold_rng,
        ) else {
            continue;
        };
        folds_used += 1;
        let scores = score_features(&prepared.fit_x, &prepared.fit_y, config.fs_scorer);
        for (k_idx, &k) in K_GRID.iter().enumerate() {
            let selected = top_k_columns(&scores, k);
            let fit_sub = prepared.fit_x.select_columns(&selected);
            let val_sub = prepared.val_x.select_columns(&selected);
            let fold_seed = derived_seed(cell_seed, (fold_idx * 31 + k_idx) as u64 + 1000);
            let accuracies = fold_accuracies(
                config.model,
                &hypers,
                &fit_sub,
                &prepared.fit_y,
                &val_sub,
                &prepared.val_y,
                fold_seed,
            );
            for (h_idx, acc) in accuracies.into_iter().enumerate() {
                acc_sum[h_idx][k_idx] += acc;
            }
        }
    }
    if folds_used == 0 {
        return Err(PipelineError::DegenerateCv(
            "every fold had a single-class training part".to_string(),
        ));
    }

    // Winner: highest mean accuracy; ties -> smaller k, then grid order.
    let mut best: Option<(f64, usize, usize)> = None; // (acc, k_idx, h_idx)
    for h_idx in 0..hypers.len() {
        for k_idx in 0..K_GRID.len() {
            let acc = acc_sum[h_idx][k_idx] / folds_used as f64;
            let candidate = (acc, k_idx, h_idx);
            let better = match best {
                None => true,
                Some((best_acc, best_k, best_h)) => {
                    acc > best_acc
                        || (acc == best_acc && (k_idx, h_idx) < (best_k, best_h))
                }
            };
            if better {
                best = Some(candidate);
            }
        }
    }
    let (cv_accuracy, k_idx, h_idx) = best.expect("grid is non-empty");
    let chosen_k = K_GRID[k_idx];
    let chosen_hyper = hypers[h_idx].clone();

    // Refit on the full training split.
    let mut x = train_x.clone();
    let imputer = Imputer::fit(&x, config.imputation);
    imputer.transform(&mut x);
    let scaler = MinMaxScaler::fit(&x);
    scaler.transform(&mut x);
    let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(cell_seed, 7_777));
    let (balanced_x, balanced_y) = oversample(&x, train_y, config.balancing, &mut rng);
    let scores = score_features(&balanced_x, &balanced_y, config.fs_scorer);
    let selected_columns = top_k_columns(&scores, chosen_k);
    let selected_names = selected_columns
        .iter()
        .map(|&c| train_x.column_names[c].clone())
        .collect();
    let final_x = balanced_x.select_columns(&selected_columns);
    let model = fit_final_model(
        config.model,
        &chosen_hyper,
        &final_x,
        &balanced_y,
        derived_seed(cell_seed, 8_888),
    );
    Ok(FittedCell {
        config: *config,
        imputer,
        scaler,
        selected_columns,
        selected_names,
        model,
        chosen_k,
        chosen_hyper,
        cv_accuracy,
    })
}

fn top_k_columns(scores: &[f64], k: usize) -> Vec<usize> {
    if k >= scores.len() {
        return (0..scores.len()).collect();
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut selected: Vec<usize> = order[..k].to_vec();
    selected.sort_unstable();
    selected
}

/// Scores new rows with a fitted cell's stored transforms.
pub fn predict_scores(cell: &FittedCell, x: &Matrix) -> Result<Vec<f64>, PipelineError> {
    if x.cols != cell.imputer.fill.len() {
        return Err(PipelineError::ColumnMismatch {
            expected: cell.imputer.fill.len(),
            got: x.cols,
        });
    }
    let mut x = x.clone();
    cell.imputer.transform(&mut x);
    cell.scaler.transform(&mut x);
    let x = x.select_columns(&cell.selected_columns);
    Ok(cell.model.predict_scores(&x))
}

// ---------------------------------------------------------------------------
// Grid execution
// ---------------------------------------------------------------------------

/// One persisted grid-cell outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRecord {
    pub experiment: String,
    pub group: Group,
    pub config_index: usize,
    pub imputation: Imputation,
    pub balancing: Balancing,
    pub fs_scorer: FsScorer,
    pub model: ModelKind,
    pub cell_seed: u64,
    pub metrics: Option<MetricsRecord>,
    pub chosen_k: Option<usize>,
    pub chosen_hyper: Option<String>,
    pub selected_features: Vec<String>,
    pub cv_accuracy: Option<f64>,
    pub error: Option<String>,
}

fn fnv1a(text: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in text.bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub fn cell_seed(master_seed: u64, experiment: &str, config: &PipelineConfig) -> u64 {
    master_seed ^ fnv1a(&format!("{experiment}|{}", config.label()))
}

fn run_cell(
    problem: &Problem,
    config: &PipelineConfig,
    experiment: &str,
    group: Group,
    config_index: usize,
    master_seed: u64,
) -> ResultRecord {
    let seed = cell_seed(master_seed, experiment, config);
    let mut record = ResultRecord {
        experiment: experiment.to_string(),
        group,
        config_index,
        imputation: config.imputation,
        balancing: config.balancing,
        fs_scorer: config.fs_scorer,
        model: config.model,
        cell_seed: seed,
        metrics: None,
        chosen_k: None,
        chosen_hyper: None,
        selected_features: Vec::new(),
        cv_accuracy: None,
        error: None,
    };
    let train_x = problem.matrix.slice_rows(&problem.train_idx);
    let train_y: Vec<bool> = problem.train_idx.iter().map(|&i| problem.y[i]).collect();
    let test_x = problem.matrix.slice_rows(&problem.test_idx);
    let test_y: Vec<bool> = problem.test_idx.iter().map(|&i| problem.y[i]).collect();
    let outcome = fit_model(&train_x, &train_y, config, seed).and_then(|cell| {
        let scores = predict_scores(&cell, &test_x)?;
        let metrics = compute_metrics(&scores, &test_y, 0.5)?;
        Ok((cell, metrics))
    });
    match outcome {
        Ok((cell, metrics)) => {
            record.metrics = Some(metrics);
            record.chosen_k = Some(cell.chosen_k);
            record.chosen_hyper = Some(cell.chosen_hyper.label());
            record.selected_features = cell.selected_names;
            record.cv_accuracy = Some(cell.cv_accuracy);
        }
        Err(err) => record.error = Some(err.to_string()),
    }
    record
}

/// Runs every grid cell for one experiment. Cells execute in parallel; each
/// derives its own RNG from (master seed, config), so the output is identical
/// to a serial run. Individual cell failures become failed records.
pub fn run_grid(
    problem: &Problem,
    group: Group,
    experiment: &str,
    master_seed: u64,
) -> Vec<ResultRecord> {
    let configs = grid_configs(group);
    configs
        .par_iter()
        .enumerate()
        .map(|(i, config)| run_cell(problem, config, experiment, group, i, master_seed))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use frame::RawColumn;
    use rand::Rng;

    #[test]
    fn grid_cardinalities_match_groups() {
        assert_eq!(grid_configs(Group::Event).len(), 24);
        assert_eq!(grid_configs(Group::Pcd).len(), 72);
    }

    #[test]
    fn event_grid_excludes_pcd_only_options() {
        for config in grid_configs(Group::Event) {
            assert_ne!(config.fs_scorer, FsScorer::MutualInfo);
            assert_ne!(config.balancing, Balancing::None);
            assert_ne!(config.model, ModelKind::RbfSvm);
            assert_ne!(config.model, ModelKind::RandomForest);
        }
        for config in grid_configs(Group::Pcd) {
            assert_ne!(config.model, ModelKind::LinearSvm);
        }
    }

    /// Synthetic frame with one strong numeric signal and noise columns.
    fn toy_frame(n: usize, seed: u64) -> RawFrame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<bool> = (0..n).map(|i| i % 4 == 0).collect();
        let signal: Vec<f64> = y
            .iter()
            .map(|l| if *l { 1.0 } else { 0.0 } + rng.random_range(-0.1..0.1))
            .collect();
        let mut columns = vec![RawColumn::Numeric {
            id: "signal".to_string(),
            values: signal,
        }];
        for c in 0..6 {
            columns.push(RawColumn::Numeric {
                id: format!("noise{c}"),
                values: (0..n).map(|_| rng.random()).collect(),
            });
        }
        RawFrame { columns, y }
    }

    #[test]
    fn full_cell_on_separable_data_reaches_high_auroc() {
        let frame = toy_frame(200, 3);
        let problem = prepare_problem(&frame, ProblemOptions::default()).unwrap();
        for model in [ModelKind::Knn, ModelKind::LogReg, ModelKind::RandomForest] {
            let config = PipelineConfig {
                imputation: Imputation::Mean,
                balancing: Balancing::Smote,
                fs_scorer: FsScorer::AnovaF,
                model,
            };
            let record = run_cell(&problem, &config, "toy", Group::Pcd, 0, 1);
            let metrics = record.metrics.unwrap_or_else(|| {
                panic!("cell failed: {:?} {:?}", model, record.error)
            });
            assert!(metrics.auroc > 0.95, "{model:?} auroc {}", metrics.auroc);
            assert!(record.selected_features.contains(&"signal".to_string()));
        }
    }

    #[test]
    fn rerun_with_same_master_seed_is_byte_identical() {
        let frame = toy_frame(120, 5);
        let problem = prepare_problem(&frame, ProblemOptions::default()).unwrap();
        let a = run_grid(&problem, Group::Event, "det", 42);
        let b = run_grid(&problem, Group::Event, "det", 42);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        assert_eq!(a.len(), 24);
        assert!(a.iter().all(|r| r.error.is_none()));
    }

    #[test]
    fn winner_tie_breaks_prefer_smaller_k() {
        // All-noise data: many (hyper, k) cells tie; the reported k must be
        // the smallest grid value.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y: Vec<bool> = (0..80).map(|i| i % 2 == 0).collect();
        let columns = (0..8)
            .map(|c| RawColumn::Numeric {
                id: format!("n{c}"),
                values: (0..80).map(|_| rng.random()).collect(),
            })
            .collect();
        let frame = RawFrame { columns, y };
        let problem = prepare_problem(&frame, ProblemOptions::default()).unwrap();
        let train_x = problem.matrix.slice_rows(&problem.train_idx);
        let train_y: Vec<bool> = problem.train_idx.iter().map(|&i| problem.y[i]).collect();
        let config = PipelineConfig {
            imputation: Imputation::Mean,
            balancing: Balancing::None,
            fs_scorer: FsScorer::AnovaF,
            model: ModelKind::Knn,
        };
        let cell = fit_model(&train_x, &train_y, &config, 1).unwrap();
        // With eight columns, k = 5 and k = 10 (capped to 8) can differ; the
        // chosen k must be the smallest among the best-scoring ties.
        let hypers = hyper_grid(ModelKind::Knn);
        assert!(K_GRID.contains(&cell.chosen_k));
        assert!(hypers.iter().any(|h| *h == cell.chosen_hyper));
    }

    #[test]
    fn mutating_test_labels_changes_no_training_artifact() {
        let frame = toy_frame(150, 11);
        let mut problem = prepare_problem(&frame, ProblemOptions::default()).unwrap();
        let config = PipelineConfig {
            imputation: Imputation::Median,
            balancing: Balancing::Adasyn,
            fs_scorer: FsScorer::Chi2,
            model: ModelKind::LogReg,
        };
        let train_x = problem.matrix.slice_rows(&problem.train_idx);
        let train_y: Vec<bool> = problem.train_idx.iter().map(|&i| problem.y[i]).collect();
        let before = fit_model(&train_x, &train_y, &config, 99).unwrap();
        // Poison every test label.
        for &i in &problem.test_idx {
            problem.y[i] = !problem.y[i];
        }
        let train_y_after: Vec<bool> =
            problem.train_idx.iter().map(|&i| problem.y[i]).collect();
        let after = fit_model(&train_x, &train_y_after, &config, 99).unwrap();
        assert_eq!(
            serde_json::to_string(&before).unwrap(),
            serde_json::to_string(&after).unwrap()
        );
    }

    #[test]
    fn row_cap_subsamples_stratified_and_deterministic() {
        let frame = toy_frame(400, 13);
        let options = ProblemOptions {
            max_rows: Some(100),
            ..ProblemOptions::default()
        };
        let a = prepare_problem(&frame, options).unwrap();
        let b = prepare_problem(&frame, options).unwrap();
        assert_eq!(a.y, b.y);
        assert_eq!(a.y.len(), 100);
        let positives = a.y.iter().filter(|v| **v).count();
        assert_eq!(positives, 25); // preserves the 1:4 ratio
    }
}
