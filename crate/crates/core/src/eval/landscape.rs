//! Synthetic accuracy/cost landscape.
//!
//! Cost is the workload cost estimate. Accuracy is the geometric mean of the
//! LLM operators' model qualities, times a quality factor per code operator,
//! times one effect per directive tag on each operator, taken to the power
//! `1/N` for `N` LLM and code operators so that rewriting every operator
//! has about the effect of one pipeline-wide change, times an interaction
//! factor for every configured pair of tags present in the pipeline, plus
//! noise. Effects and noise are drawn from hashes of canonical content, so
//! the result depends only on the pipeline, never on how it was reached.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{EvalError, EvalResult, Evaluator};
use crate::ir::{canonical_serialize, estimate_cost, ModelCatalog, OperatorConfig, PipelineSpec, WorkloadProfile};

/// Multiplicative accuracy effect of one directive tag, drawn uniformly
/// from `[mean - spread, mean + spread]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectiveEffect {
    pub mean: f64,
    #[serde(default)]
    pub spread: f64,
}

/// Factor applied when both tags occur anywhere in the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interaction {
    pub a: String,
    pub b: String,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Landscape {
    pub version: u32,
    pub name: String,
    pub seed: u64,
    /// Half-width of the uniform accuracy noise.
    pub noise_scale: f64,
    /// Accuracy factor per code operator.
    pub code_quality: f64,
    /// Per-model quality; models not listed use the catalog's quality hint.
    pub model_quality: BTreeMap<String, f64>,
    pub effects: BTreeMap<String, DirectiveEffect>,
    pub interactions: Vec<Interaction>,
    pub workload: WorkloadProfile,
}

impl Default for Landscape {
    fn default() -> Self {
        Landscape {
            version: 1,
            name: "flat".into(),
            seed: 0,
            noise_scale: 0.0,
            code_quality: 0.9,
            model_quality: BTreeMap::new(),
            effects: BTreeMap::new(),
            interactions: Vec::new(),
            workload: WorkloadProfile::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LandscapeError {
    #[error("cannot read landscape: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed landscape: {0}")]
    Parse(String),
    #[error("invalid landscape: {0}")]
    Invalid(String),
}

fn unit_range(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

impl Landscape {
    pub fn from_yaml(text: &str) -> Result<Self, LandscapeError> {
        let l: Landscape = serde_yaml::from_str(text).map_err(|e| LandscapeError::Parse(e.to_string()))?;
        l.validate()?;
        Ok(l)
    }

    pub fn from_path(path: &Path) -> Result<Self, LandscapeError> {
        Self::from_yaml(&std::fs::read_to_string(path)?)
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("landscape serializes")
    }

    /// Landscape fixtures shipped with the crate, by name.
    pub fn builtin(name: &str) -> Option<Self> {
        let text = match name {
            "default" => include_str!("../../fixtures/landscapes/default.yaml"),
            "adversarial" => include_str!("../../fixtures/landscapes/adversarial.yaml"),
            _ => return None,
        };
        Some(Self::from_yaml(text).expect("shipped landscapes are valid"))
    }

    pub fn validate(&self) -> Result<(), LandscapeError> {
        let bad = |m: String| Err(LandscapeError::Invalid(m));
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return bad("noise_scale must be finite and non-negative".into());
        }
        if !(self.code_quality > 0.0 && self.code_quality <= 1.0) {
            return bad("code_quality must lie in (0, 1]".into());
        }
        if let Some((m, _)) = self.model_quality.iter().find(|(_, q)| !unit_range(**q)) {
            return bad(format!("quality of `{m}` must lie in [0, 1]"));
        }
        for (tag, e) in &self.effects {
            if !(e.mean > 0.0 && e.spread >= 0.0 && e.spread < e.mean && e.mean.is_finite()) {
                return bad(format!("effect of `{tag}` needs mean > spread >= 0"));
            }
        }
        if let Some(i) = self.interactions.iter().find(|i| !(i.factor > 0.0 && i.factor.is_finite())) {
            return bad(format!("interaction ({}, {}) needs a positive factor", i.a, i.b));
        }
        Ok(())
    }

    /// Same landscape with the noise and effect draws reseeded.
    pub fn reseeded(&self, seed: u64) -> Self {
        Landscape {
            seed,
            ..self.clone()
        }
    }

    pub fn evaluator(&self, catalog: &ModelCatalog) -> LandscapeEvaluator {
        let mut profile = self.workload.clone();
        profile.catalog = catalog.clone();
        LandscapeEvaluator {
            landscape: self.clone(),
            profile,
        }
    }
}

/// Uniform draw in [0, 1) from the landscape seed and labelled content.
fn draw(seed: u64, label: &str, content: &[u8]) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    h.update([0u8]);
    h.update(content);
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    (u64::from_le_bytes(bytes) >> 11) as f64 / (1u64 << 53) as f64
}

/// Operator content without its id.
fn op_bytes(op: &OperatorConfig) -> Vec<u8> {
    let mut v = serde_json::to_value(op).expect("operators serialize");
    if let Value::Object(m) = &mut v {
        m.remove("id");
    }
    v.to_string().into_bytes()
}

#[derive(Debug, Clone)]
pub struct LandscapeEvaluator {
    landscape: Landscape,
    profile: WorkloadProfile,
}

impl LandscapeEvaluator {
    pub fn landscape(&self) -> &Landscape {
        &self.landscape
    }

    fn quality(&self, model: &str) -> Option<f64> {
        self.landscape
            .model_quality
            .get(model)
            .copied()
            .or_else(|| self.profile.catalog.get(model).map(|m| m.quality_hint))
    }

    /// Accuracy before noise and clamping.
    pub fn expected_accuracy(&self, p: &PipelineSpec) -> Result<f64, EvalError> {
        let l = &self.landscape;
        let mut log_sum = 0.0;
        let mut llm_ops = 0;
        let mut acc = 1.0;
        let mut tags = BTreeSet::new();
        let scored = p
            .operators
            .iter()
            .filter(|op| op.op_type.is_llm() || op.op_type.is_code())
            .count()
            .max(1) as f64;
        for op in &p.operators {
            if op.op_type.is_llm() {
                let model = op.model.as_deref().unwrap_or_default();
                let q = self
                    .quality(model)
                    .ok_or_else(|| EvalError::Invalid(format!("unknown model `{model}` on `{}`", op.id)))?;
                log_sum += q.max(1e-12).ln();
                llm_ops += 1;
            } else if op.op_type.is_code() {
                acc *= l.code_quality;
            }
            let own: BTreeSet<String> = op.lineage().into_iter().collect();
            if !own.is_empty() {
                let content = op_bytes(op);
                for tag in &own {
                    if let Some(e) = l.effects.get(tag) {
                        let f = e.mean + e.spread * (2.0 * draw(l.seed, tag, &content) - 1.0);
                        acc *= f.powf(1.0 / scored);
                    }
                }
            }
            tags.extend(own);
        }
        if llm_ops > 0 {
            acc *= (log_sum / llm_ops as f64).exp();
        }
        for i in &l.interactions {
            let both = if i.a == i.b {
                p.lineage_tags().iter().filter(|t| **t == i.a).count() >= 2
            } else {
                tags.contains(&i.a) && tags.contains(&i.b)
            };
            if both {
                acc *= i.factor;
            }
        }
        Ok(acc)
    }
}

impl Evaluator for LandscapeEvaluator {
    fn evaluate(&self, p: &PipelineSpec) -> Result<EvalResult, EvalError> {
        let cost = estimate_cost(p, &self.profile).map_err(|e| EvalError::Invalid(e.to_string()))?;
        let l = &self.landscape;
        let noise = l.noise_scale * (2.0 * draw(l.seed, "noise", &canonical_serialize(p)) - 1.0);
        let accuracy = (self.expected_accuracy(p)? + noise).clamp(0.0, 1.0);
        Ok(EvalResult { cost, accuracy })
    }
}
