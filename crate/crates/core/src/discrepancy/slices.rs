use serde::{Deserialize, Serialize};

use super::kernel::{check_unit, UNIT_NORM_TOL};
use crate::error::{Error, Result};
use crate::math::{dot, project_rows_to_sphere, Bandwidth, Matrix, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SliceVariant {
    /// Fixed orthonormal basis, optimised test directions.
    #[serde(rename = "g")]
    G,
    /// Both slicing and test directions optimised.
    #[serde(rename = "rg")]
    Rg,
}

/// Slicing directions `r` (rows of `basis`) paired with test directions
/// `g_r` (rows of `directions`).
#[derive(Clone, Debug, PartialEq)]
pub struct SliceConfig {
    variant: SliceVariant,
    basis: Matrix,
    directions: Matrix,
    bandwidths: Option<Vec<Bandwidth>>,
}

impl SliceConfig {
    pub fn new(variant: SliceVariant, basis: Matrix, directions: Matrix) -> Result<Self> {
        let cfg = SliceConfig { variant, basis, directions, bandwidths: None };
        cfg.validate()?;
        Ok(cfg)
    }

    /// One-hot basis with `G = I`.
    pub fn identity(d: usize) -> Self {
        SliceConfig { variant: SliceVariant::G, basis: Matrix::identity(d), directions: Matrix::identity(d), bandwidths: None }
    }

    /// One-hot basis with Gaussian-initialised, normalised directions.
    pub fn random_g(d: usize, rng: &mut Rng) -> Self {
        SliceConfig { variant: SliceVariant::G, basis: Matrix::identity(d), directions: random_unit_rows(d, d, rng), bandwidths: None }
    }

    /// `m` free slicing directions and `m` test directions, all random.
    pub fn random_rg(d: usize, m: usize, rng: &mut Rng) -> Self {
        let basis = random_unit_rows(m, d, rng);
        let directions = random_unit_rows(m, d, rng);
        SliceConfig { variant: SliceVariant::Rg, basis, directions, bandwidths: None }
    }

    pub fn with_bandwidths(mut self, bandwidths: Vec<Bandwidth>) -> Result<Self> {
        if bandwidths.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: bandwidths.len() });
        }
        self.bandwidths = Some(bandwidths);
        Ok(self)
    }

    pub fn clear_bandwidths(&mut self) {
        self.bandwidths = None;
    }

    pub fn variant(&self) -> SliceVariant {
        self.variant
    }

    pub fn dim(&self) -> usize {
        self.basis.cols()
    }

    /// Number of `(r, g_r)` pairs.
    pub fn len(&self) -> usize {
        self.basis.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.rows() == 0
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn directions(&self) -> &Matrix {
        &self.directions
    }

    pub fn bandwidth_overrides(&self) -> Option<&[Bandwidth]> {
        self.bandwidths.as_deref()
    }

    /// True when every basis row is a standard unit vector `e_k` with `k` equal to its row index.
    pub fn is_one_hot_identity(&self) -> bool {
        self.basis.rows() == self.basis.cols() && self.basis == Matrix::identity(self.basis.rows())
    }

    pub(crate) fn directions_mut(&mut self) -> &mut Matrix {
        &mut self.directions
    }

    pub(crate) fn basis_mut(&mut self) -> &mut Matrix {
        &mut self.basis
    }

    pub fn validate(&self) -> Result<()> {
        if self.basis.rows() == 0 {
            return Err(Error::param("O_r", "needs at least one slicing direction"));
        }
        if self.directions.shape() != self.basis.shape() {
            return Err(Error::DimensionMismatch { expected: self.basis.rows(), got: self.directions.rows() });
        }
        for r in self.basis.row_iter() {
            check_unit(r, "r")?;
        }
        for g in self.directions.row_iter() {
            check_unit(g, "g")?;
        }
        if self.variant == SliceVariant::G {
            for i in 0..self.basis.rows() {
                for j in 0..i {
                    let ip = dot(self.basis.row(i), self.basis.row(j));
                    if ip.abs() > UNIT_NORM_TOL {
                        return Err(Error::param("O_r", format!("rows {j} and {i} are not orthogonal")));
                    }
                }
            }
        }
        if let Some(b) = &self.bandwidths {
            if b.len() != self.len() {
                return Err(Error::DimensionMismatch { expected: self.len(), got: b.len() });
            }
        }
        Ok(())
    }
}

fn random_unit_rows(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    loop {
        let mut m = Matrix::from_fn(rows, cols, |_, _| rng.normal());
        if project_rows_to_sphere(&mut m).is_ok() {
            return m;
        }
    }
}

/// JSON form of a [`SliceConfig`]. `O_r` defaults to the one-hot basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceDoc {
    pub variant: SliceVariant,
    #[serde(rename = "O_r", default, skip_serializing_if = "Option::is_none")]
    pub basis: Option<Vec<Vec<f64>>>,
    #[serde(rename = "G")]
    pub directions: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidths: Option<Vec<f64>>,
}

impl SliceDoc {
    pub fn into_config(self) -> Result<SliceConfig> {
        let directions = Matrix::from_rows(&self.directions).map_err(|_| Error::config("G", "rows have different lengths"))?;
        let basis = match self.basis {
            Some(rows) => Matrix::from_rows(&rows).map_err(|_| Error::config("O_r", "rows have different lengths"))?,
            None => Matrix::identity(directions.cols()),
        };
        let mut cfg = SliceConfig { variant: self.variant, basis, directions, bandwidths: None };
        if let Some(b) = self.bandwidths {
            let b = b.into_iter().map(Bandwidth::new).collect::<Result<Vec<_>>>().map_err(|e| Error::config("bandwidths", e.to_string()))?;
            cfg.bandwidths = Some(b);
        }
        cfg.validate().map_err(|e| {
            let field = match &e {
                Error::NotUnitNorm { what: "r", .. } => "O_r",
                Error::InvalidParameter { field, .. } if field == "O_r" => "O_r",
                Error::DimensionMismatch { .. } if cfg.bandwidths.as_ref().is_some_and(|b| b.len() != cfg.basis.rows()) => "bandwidths",
                _ => "G",
            };
            Error::config(field, e.to_string())
        })?;
        Ok(cfg)
    }

    pub fn from_config(cfg: &SliceConfig) -> SliceDoc {
        let rows = |m: &Matrix| m.row_iter().map(<[f64]>::to_vec).collect::<Vec<_>>();
        SliceDoc {
            variant: cfg.variant,
            basis: Some(rows(&cfg.basis)),
            directions: rows(&cfg.directions),
            bandwidths: cfg.bandwidths.as_ref().map(|b| b.iter().map(|x| x.get()).collect()),
        }
    }
}

impl SliceConfig {
    pub fn from_json(text: &str) -> Result<SliceConfig> {
        crate::config::parse_json::<SliceDoc>(text)?.into_config()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&SliceDoc::from_config(self)).expect("slice documents always serialise")
    }
}
