//! The run configuration document: every section with defaults, strict
//! parsing with the offending key path, and `a.b.c=value` overrides.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::raypool::PoolConfig;
use crate::renderer::RenderConfig;
use crate::synthworld::SceneSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    pub density_init: f64,
    pub logit_init: f64,
    /// Density threshold for occupancy extraction.
    pub tau: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            density_init: -5.0,
            logit_init: 0.0,
            tau: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Checkpoint period in iterations; 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
    /// Evaluation period in iterations; 0 evaluates only at the end.
    pub eval_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 3000,
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            checkpoint_every: 1000,
            eval_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::invalid("beta1 and beta2 must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid("eps must be positive"));
        }
        Ok(())
    }
}

/// Settings of the `check-grad` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    pub dims: [usize; 3],
    /// Label classes including the free class.
    pub num_classes: usize,
    pub rays: usize,
    pub h: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            dims: [4, 4, 4],
            num_classes: 5,
            rays: 8,
            h: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scene: SceneSpec,
    pub field: FieldConfig,
    pub render: RenderConfig,
    pub loss: LossConfig,
    pub raypool: PoolConfig,
    pub trainer: TrainConfig,
    pub grad_check: GradCheckConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.render.validate()?;
        self.loss.validate()?;
        self.raypool.validate()?;
        self.trainer.validate()?;
        if !(self.field.tau >= 0.0) {
            return Err(Error::invalid("tau must be nonnegative"));
        }
        Ok(())
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let cfg: RunConfig = from_value_with_path(value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Config {
            path: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        Self::from_value(value)
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Deserializes any config section, reporting the failing key as a JSON
/// pointer.
pub fn from_value_with_path<T: serde::de::DeserializeOwned>(value: Value) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| Error::Config {
        path: pointer(&e.path().to_string()),
        message: e.inner().to_string(),
    })
}

fn pointer(dotted: &str) -> String {
    if dotted == "." {
        return "/".into();
    }
    dotted
        .split('.')
        .map(|seg| {
            // serde_path_to_error writes sequence indices as `[3]`
            let seg = seg.replace('[', "/").replace(']', "");
            format!("/{}", seg.trim_start_matches('/'))
        })
        .collect()
}

/// Applies `key.path=value` to a config document. The value is parsed as
/// JSON, falling back to a plain string.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| Error::Config {
        path: assignment.into(),
        message: "override must look like key.path=value".into(),
    })?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| Error::Config {
            path: format!("/{}", parts[..i].join("/")),
            message: "not an object".into(),
        })?;
        if i + 1 == parts.len() {
            obj.insert((*part).into(), value);
            return Ok(());
        }
        node = obj
            .entry(*part)
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

/// Every leaf key of the default configuration with its default value, in
/// document order.
pub fn default_keys() -> Vec<(String, Value)> {
    fn walk(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
        match v {
            Value::Object(map) if !map.is_empty() => {
                for (k, child) in map {
                    let key = if prefix.is_empty() {
                        k.clone()
                    } else {
                        format!("{prefix}.{k}")
                    };
                    walk(&key, child, out);
                }
            }
            _ => out.push((prefix.to_string(), v.clone())),
        }
    }
    let mut out = Vec::new();
    walk("", &RunConfig::default().to_value(), &mut out);
    out
}
