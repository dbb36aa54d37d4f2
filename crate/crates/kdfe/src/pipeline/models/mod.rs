//! Model families of evaluation pipeline A.

pub mod forest;
pub mod knn;
pub mod linear;
pub mod rbf_svm;

use super::frame::Matrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Knn,
    LogReg,
    LinearSvm,
    RbfSvm,
    RandomForest,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Knn => "KNN",
            ModelKind::LogReg => "LOGREG",
            ModelKind::LinearSvm => "LINEAR_SVM",
            ModelKind::RbfSvm => "RBF_SVM",
            ModelKind::RandomForest => "RANDOM_FOREST",
        }
    }
}

/// A fitted model of any family; scores are in [0, 1], higher = more positive.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum TrainedModel {
    Knn(knn::KnnModel),
    Linear(linear::LinearModel),
    Rbf(rbf_svm::RbfSvmModel),
    Forest(forest::ForestModel),
}

impl TrainedModel {
    pub fn predict_scores(&self, x: &Matrix) -> Vec<f64> {
        match self {
            TrainedModel::Knn(m) => m.predict_scores(x),
            TrainedModel::Linear(m) => m.predict_scores(x),
            TrainedModel::Rbf(m) => m.predict_scores(x),
            TrainedModel::Forest(m) => m.predict_scores(x),
        }
    }
}
