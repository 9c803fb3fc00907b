use serde::{Deserialize, Serialize};

use super::{Covariance, Gaussian, Ica, Laplace, Rbm, ScoreModel, StudentT};
use crate::error::{Error, Result};
use crate::math::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Gaussian,
    Laplace,
    StudentT,
    Rbm,
    Ica,
}

/// On-disk form of a [`ScoreModel`]. Matrices are lists of rows.
///
/// Laplace and Student-t take their dimension from `mean` (the location).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDoc {
    pub variant: Option<Variant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov_diag: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dof: Option<f64>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_v: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_h: Option<Vec<f64>>,
    #[serde(rename = "W", default, skip_serializing_if = "Option::is_none")]
    pub w: Option<Vec<Vec<f64>>>,
}

fn required<T>(v: Option<T>, field: &str) -> Result<T> {
    v.ok_or_else(|| Error::config(field, "missing for this variant"))
}

fn matrix(rows: Vec<Vec<f64>>, field: &str) -> Result<Matrix> {
    Matrix::from_rows(&rows).map_err(|_| Error::config(field, "rows have different lengths"))
}

fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(<[f64]>::to_vec).collect()
}

impl ModelDoc {
    pub fn parse(text: &str) -> Result<ModelDoc> {
        crate::config::parse_json(text)
    }

    pub fn into_model(self) -> Result<ScoreModel> {
        let variant = required(self.variant, "variant")?;
        let with_field = |field: &'static str| move |e: Error| match e {
            Error::InvalidParameter { field: f, reason } => Error::config(f, reason),
            Error::DimensionMismatch { expected, got } => {
                Error::config(field, format!("dimension mismatch: expected {expected}, got {got}"))
            }
            Error::NonFinite { what, index } => Error::config(what, format!("non-finite entry {index}")),
            Error::Singular => Error::config(field, "matrix is singular"),
            other => other,
        };
        Ok(match variant {
            Variant::Gaussian => {
                let mean = required(self.mean, "mean")?;
                match (self.cov_diag, self.cov) {
                    (Some(d), None) => ScoreModel::Gaussian(Gaussian::diag(mean, d).map_err(with_field("cov_diag"))?),
                    (None, Some(c)) => {
                        ScoreModel::Gaussian(Gaussian::full(mean, matrix(c, "cov")?).map_err(with_field("cov"))?)
                    }
                    (None, None) => return Err(Error::config("cov_diag", "one of cov_diag or cov is required")),
                    (Some(_), Some(_)) => return Err(Error::config("cov", "give only one of cov_diag or cov")),
                }
            }
            Variant::Laplace => {
                let mean = required(self.mean, "mean")?;
                let scale = required(self.scale, "scale")?;
                ScoreModel::Laplace(Laplace::new(mean, scale).map_err(with_field("scale"))?)
            }
            Variant::StudentT => {
                let mean = required(self.mean, "mean")?;
                let dof = required(self.dof, "dof")?;
                ScoreModel::StudentT(StudentT::new(mean, dof).map_err(with_field("dof"))?)
            }
            Variant::Rbm => {
                let b = matrix(required(self.b, "B")?, "B")?;
                let b_v = required(self.b_v, "b_v")?;
                let b_h = required(self.b_h, "b_h")?;
                ScoreModel::Rbm(Rbm::new(b, b_v, b_h).map_err(with_field("B"))?)
            }
            Variant::Ica => ScoreModel::Ica(Ica::new(matrix(required(self.w, "W")?, "W")?).map_err(with_field("W"))?),
        })
    }

    pub fn from_model(model: &ScoreModel) -> ModelDoc {
        match model {
            ScoreModel::Gaussian(g) => {
                let mut doc = ModelDoc { variant: Some(Variant::Gaussian), mean: Some(g.mean.clone()), ..Default::default() };
                match &g.cov {
                    Covariance::Diag(v) => doc.cov_diag = Some(v.clone()),
                    Covariance::Full { cov, .. } => doc.cov = Some(rows_of(cov)),
                }
                doc
            }
            ScoreModel::Laplace(l) => ModelDoc {
                variant: Some(Variant::Laplace),
                mean: Some(l.location.clone()),
                scale: Some(l.scale),
                ..Default::default()
            },
            ScoreModel::StudentT(t) => ModelDoc {
                variant: Some(Variant::StudentT),
                mean: Some(t.location.clone()),
                dof: Some(t.dof),
                ..Default::default()
            },
            ScoreModel::Rbm(r) => ModelDoc {
                variant: Some(Variant::Rbm),
                b: Some(rows_of(r.weights())),
                b_v: Some(r.visible_bias().to_vec()),
                b_h: Some(r.hidden_bias().to_vec()),
                ..Default::default()
            },
            ScoreModel::Ica(i) => ModelDoc { variant: Some(Variant::Ica), w: Some(rows_of(i.w())), ..Default::default() },
        }
    }
}

impl ScoreModel {
    pub fn from_json(text: &str) -> Result<ScoreModel> {
        ModelDoc::parse(text)?.into_model()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelDoc::from_model(self)).expect("model documents always serialise")
    }
}
