use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub model_id: String,
    pub family: String,
    pub input_price_per_token: f64,
    pub output_price_per_token: f64,
    pub context_window_tokens: u64,
    /// Prior quality estimate in [0, 1]; the simulated evaluator uses it as
    /// the model's base accuracy.
    #[serde(default = "default_quality")]
    pub quality_hint: f64,
}

fn default_quality() -> f64 {
    0.5
}

impl ModelEntry {
    /// Price of one input plus one output token; the ordering key for "cheaper".
    pub fn unit_price(&self) -> f64 {
        self.input_price_per_token + self.output_price_per_token
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CatalogError {
    #[error("model catalog is empty")]
    Empty,
    #[error("duplicate model id `{0}`")]
    DuplicateModel(String),
    #[error("model `{0}` has a negative price")]
    NegativePrice(String),
    #[error("model `{0}` has a zero context window")]
    ZeroContextWindow(String),
    #[error("model `{0}` has an empty family")]
    EmptyFamily(String),
    #[error("model `{0}` has quality_hint outside [0, 1]")]
    QualityOutOfRange(String),
    #[error("failed to parse model catalog: {0}")]
    Parse(String),
}

/// The models the optimizer may assign to LLM operators.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCatalog {
    pub models: Vec<ModelEntry>,
}

impl ModelCatalog {
    pub fn new(models: Vec<ModelEntry>) -> Result<Self, CatalogError> {
        let catalog = ModelCatalog { models };
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn from_yaml(text: &str) -> Result<Self, CatalogError> {
        let catalog: ModelCatalog =
            serde_yaml::from_str(text).map_err(|e| CatalogError::Parse(e.to_string()))?;
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("catalog serializes to YAML")
    }

    pub fn validate(&self) -> Result<(), CatalogError> {
        if self.models.is_empty() {
            return Err(CatalogError::Empty);
        }
        let mut seen = BTreeSet::new();
        for m in &self.models {
            if !seen.insert(m.model_id.as_str()) {
                return Err(CatalogError::DuplicateModel(m.model_id.clone()));
            }
            if !(m.input_price_per_token >= 0.0 && m.output_price_per_token >= 0.0) {
                return Err(CatalogError::NegativePrice(m.model_id.clone()));
            }
            if m.context_window_tokens == 0 {
                return Err(CatalogError::ZeroContextWindow(m.model_id.clone()));
            }
            if m.family.trim().is_empty() {
                return Err(CatalogError::EmptyFamily(m.model_id.clone()));
            }
            if !(0.0..=1.0).contains(&m.quality_hint) {
                return Err(CatalogError::QualityOutOfRange(m.model_id.clone()));
            }
        }
        Ok(())
    }

    pub fn get(&self, model_id: &str) -> Option<&ModelEntry> {
        self.models.iter().find(|m| m.model_id == model_id)
    }

    pub fn contains(&self, model_id: &str) -> bool {
        self.get(model_id).is_some()
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.models.iter().map(|m| m.model_id.as_str()).collect()
    }

    /// Cheapest model by unit price, ties broken by id, excluding `exclude`.
    pub fn cheapest_except(&self, exclude: &[&str]) -> Option<&ModelEntry> {
        self.models
            .iter()
            .filter(|m| !exclude.contains(&m.model_id.as_str()))
            .min_by(|a, b| {
                a.unit_price()
                    .total_cmp(&b.unit_price())
                    .then_with(|| a.model_id.cmp(&b.model_id))
            })
    }

    /// Highest quality_hint, ties broken by lower price then id.
    pub fn strongest_except(&self, exclude: &[&str]) -> Option<&ModelEntry> {
        self.models
            .iter()
            .filter(|m| !exclude.contains(&m.model_id.as_str()))
            .min_by(|a, b| {
                b.quality_hint
                    .total_cmp(&a.quality_hint)
                    .then_with(|| a.unit_price().total_cmp(&b.unit_price()))
                    .then_with(|| a.model_id.cmp(&b.model_id))
            })
    }

    pub fn families(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for m in &self.models {
            if !out.contains(&m.family) {
                out.push(m.family.clone());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, family: &str, price: f64) -> ModelEntry {
        ModelEntry {
            model_id: id.into(),
            family: family.into(),
            input_price_per_token: price,
            output_price_per_token: price * 4.0,
            context_window_tokens: 128_000,
            quality_hint: 0.6,
        }
    }

    #[test]
    fn rejects_duplicates_and_bad_prices() {
        let dup = ModelCatalog::new(vec![entry("a", "f", 1e-6), entry("a", "f", 2e-6)]);
        assert_eq!(dup.unwrap_err(), CatalogError::DuplicateModel("a".into()));
        let neg = ModelCatalog::new(vec![entry("a", "f", -1.0)]);
        assert_eq!(neg.unwrap_err(), CatalogError::NegativePrice("a".into()));
        let fam = ModelCatalog::new(vec![entry("a", " ", 1.0)]);
        assert_eq!(fam.unwrap_err(), CatalogError::EmptyFamily("a".into()));
        assert_eq!(ModelCatalog::new(vec![]).unwrap_err(), CatalogError::Empty);
    }

    #[test]
    fn cheapest_skips_excluded() {
        let c = ModelCatalog::new(vec![
            entry("big", "f", 5e-6),
            entry("small", "f", 1e-7),
            entry("mid", "g", 1e-6),
        ])
        .unwrap();
        assert_eq!(c.cheapest_except(&[]).unwrap().model_id, "small");
        assert_eq!(c.cheapest_except(&["small"]).unwrap().model_id, "mid");
    }

    #[test]
    fn yaml_round_trip() {
        let text = "models:\n  - model_id: m\n    family: f\n    input_price_per_token: 1.0e-6\n    output_price_per_token: 2.0e-6\n    context_window_tokens: 1000\n    quality_hint: 0.7\n";
        let c = ModelCatalog::from_yaml(text).unwrap();
        assert_eq!(ModelCatalog::from_yaml(&c.to_yaml()).unwrap(), c);
    }
}
