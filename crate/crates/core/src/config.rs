//! JSON experiment configurations.
//!
//! Every command reads one JSON object. The keys `seed`, `workers` and `out`
//! are shared by all commands and may be overridden on the command line; the
//! remaining keys belong to the command.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::discrepancy::Method;
use crate::error::{Error, Result};
use crate::goftest::{BenchmarkSpec, RbmGofSpec};
use crate::models::IcaConfig;
use crate::samplers::{SamplerConfig, SamplerKind, SelectionSpec, SliceInit, VarianceSpec};
use crate::targets::{ModelDoc, ScoreModel};

/// Deserialize `text`, reporting failures as [`Error::Config`] with the JSON
/// path of the offending field.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let mut de = serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(&mut de).map_err(path_error)?;
    de.end().map_err(|e| Error::config("<root>", e.to_string()))?;
    Ok(value)
}

fn from_value<T: DeserializeOwned>(value: Value) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(path_error)
}

fn path_error<E: std::fmt::Display>(e: serde_path_to_error::Error<E>) -> Error {
    let path = e.path().to_string();
    let reason = e.inner().to_string().replace('\n', " ");
    Error::config(if path == "." || path == "?" { "<root>".to_string() } else { path }, reason)
}

/// Settings shared by every command.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub out: Option<String>,
}

const SHARED_KEYS: [&str; 3] = ["seed", "workers", "out"];

fn take_keys(map: &mut Map<String, Value>, keys: &[&str]) -> Map<String, Value> {
    keys.iter().filter_map(|k| map.remove(*k).map(|v| (k.to_string(), v))).collect()
}

fn object(text: &str) -> Result<Map<String, Value>> {
    match parse_json::<Value>(text)? {
        Value::Object(m) => Ok(m),
        _ => Err(Error::config("<root>", "expected a JSON object")),
    }
}

/// Split a command document into the shared settings and the command body.
pub fn split_document(text: &str) -> Result<(RunSettings, Map<String, Value>)> {
    let mut body = object(text)?;
    let shared = take_keys(&mut body, &SHARED_KEYS);
    Ok((from_value(Value::Object(shared))?, body))
}

fn default_methods() -> Vec<Method> {
    vec![Method::Ksd, Method::MaxSksdG, Method::MaxSksdRg]
}

fn methods_from(extra: &mut Map<String, Value>) -> Result<Vec<Method>> {
    let methods: Vec<Method> = match extra.remove("methods") {
        Some(v) => from_value::<Vec<Method>>(v).map_err(|e| prefix("methods", e))?,
        None => default_methods(),
    };
    if methods.is_empty() {
        return Err(Error::config("methods", "need at least one method"));
    }
    Ok(methods)
}

fn prefix(field: &str, e: Error) -> Error {
    match e {
        Error::Config { field: f, reason } if f == "<root>" => Error::config(field, reason),
        Error::Config { field: f, reason } if f.starts_with('[') => Error::config(format!("{field}{f}"), reason),
        Error::Config { field: f, reason } => Error::config(format!("{field}.{f}"), reason),
        other => other,
    }
}

/// `gof-benchmark`: one [`BenchmarkSpec`] per entry of `dims`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GofBenchmarkConfig {
    pub dims: Vec<usize>,
    pub methods: Vec<Method>,
    /// Spec for the first dimension; the others differ only in `dim`.
    pub spec: BenchmarkSpec,
}

impl GofBenchmarkConfig {
    pub fn from_body(mut body: Map<String, Value>) -> Result<Self> {
        let dims: Vec<usize> = match body.remove("dims") {
            Some(v) => from_value(v).map_err(|e| prefix("dims", e))?,
            None => return Err(Error::config("dims", "missing field")),
        };
        if dims.is_empty() {
            return Err(Error::config("dims", "need at least one dimension"));
        }
        if body.contains_key("dim") {
            return Err(Error::config("dim", "use `dims`"));
        }
        let methods = methods_from(&mut body)?;
        body.insert("dim".into(), Value::from(dims[0]));
        let spec: BenchmarkSpec = from_value(Value::Object(body))?;
        let cfg = GofBenchmarkConfig { dims, methods, spec };
        for s in cfg.specs() {
            s.validate()?;
        }
        Ok(cfg)
    }

    pub fn specs(&self) -> Vec<BenchmarkSpec> {
        self.dims.iter().map(|&dim| BenchmarkSpec { dim, ..self.spec.clone() }).collect()
    }
}

/// `gof-rbm`: an [`RbmGofSpec`] plus the methods to compare.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GofRbmConfig {
    pub methods: Vec<Method>,
    pub spec: RbmGofSpec,
}

impl GofRbmConfig {
    pub fn from_body(mut body: Map<String, Value>) -> Result<Self> {
        let methods = methods_from(&mut body)?;
        let spec: RbmGofSpec = from_value(Value::Object(body))?;
        spec.validate()?;
        Ok(GofRbmConfig { methods, spec })
    }
}

/// `svgd`: one SVGD or sliced SVGD run on an arbitrary target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvgdConfig {
    pub model: ModelDoc,
    #[serde(default = "svgd_defaults::sampler")]
    pub sampler: SamplerKind,
    pub particles: usize,
    pub steps: usize,
    /// Particles start at `N(init_mean · 1, init_var · I)`.
    #[serde(default)]
    pub init_mean: f64,
    #[serde(default = "svgd_defaults::init_var")]
    pub init_var: f64,
    #[serde(default)]
    pub init_slices: SliceInit,
    #[serde(default)]
    pub config: SamplerConfig,
}

mod svgd_defaults {
    use crate::samplers::SamplerKind;
    pub fn sampler() -> SamplerKind {
        SamplerKind::Ssvgd
    }
    pub fn init_var() -> f64 {
        1.0
    }
}

impl SvgdConfig {
    pub fn from_body(body: Map<String, Value>) -> Result<Self> {
        let cfg: SvgdConfig = from_value(Value::Object(body))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model(&self) -> Result<ScoreModel> {
        self.model.clone().into_model().map_err(|e| prefix("model", e))
    }

    pub fn validate(&self) -> Result<()> {
        self.model()?;
        if self.particles == 0 {
            return Err(Error::config("particles", "must be at least 1"));
        }
        if !(self.init_var > 0.0 && self.init_var.is_finite() && self.init_mean.is_finite()) {
            return Err(Error::config("init_var", "must be positive"));
        }
        self.config.validate().map_err(|e| prefix("config", e))
    }
}

/// `variance`: a [`VarianceSpec`] sweep.
pub fn variance_from_body(body: Map<String, Value>) -> Result<VarianceSpec> {
    let spec: VarianceSpec = from_value(Value::Object(body))?;
    spec.validate()?;
    Ok(spec)
}

/// Random correlated Gaussian target for `sghmc-select`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelatedTarget {
    pub dim: usize,
    pub min_var: f64,
    pub max_var: f64,
}

/// `sghmc-select`: exactly one of `target` (a model document) or
/// `correlated` must be given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SghmcSelectConfig {
    #[serde(default)]
    pub target: Option<ModelDoc>,
    #[serde(default)]
    pub correlated: Option<CorrelatedTarget>,
    pub selection: SelectionSpec,
}

impl SghmcSelectConfig {
    pub fn from_body(body: Map<String, Value>) -> Result<Self> {
        let cfg: SghmcSelectConfig = from_value(Value::Object(body))?;
        match (&cfg.target, &cfg.correlated) {
            (Some(doc), None) => {
                doc.clone().into_model().map_err(|e| prefix("target", e))?;
            }
            (None, Some(c)) => {
                if c.dim == 0 {
                    return Err(Error::config("correlated.dim", "must be at least 1"));
                }
                if !(c.min_var > 0.0 && c.max_var >= c.min_var && c.max_var.is_finite()) {
                    return Err(Error::config("correlated.min_var", "need 0 < min_var <= max_var"));
                }
            }
            _ => return Err(Error::config("target", "give exactly one of `target` and `correlated`")),
        }
        cfg.selection.validate().map_err(|e| prefix("selection", e))?;
        Ok(cfg)
    }
}

/// `ica`: an [`IcaConfig`].
pub fn ica_from_body(body: Map<String, Value>) -> Result<IcaConfig> {
    let cfg: IcaConfig = from_value(Value::Object(body))?;
    cfg.validate()?;
    Ok(cfg)
}
