use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CompletionResponse;
use crate::error::{Error, Result};

/// USD per million tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Price {
    pub input_usd_per_million: f64,
    pub output_usd_per_million: f64,
}

impl Price {
    pub const fn new(input: f64, output: f64) -> Self {
        Price {
            input_usd_per_million: input,
            output_usd_per_million: output,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceTable {
    prices: BTreeMap<String, Price>,
}

const DEFAULT_PRICES: &[(&str, Price)] = &[
    ("gpt-5", Price::new(1.25, 10.00)),
    ("gpt-4o", Price::new(2.50, 10.00)),
    ("gemini-2.0-flash", Price::new(0.10, 0.40)),
    ("phi-4", Price::new(0.075, 0.30)),
    ("qwen-2.5-7b-instruct-1m", Price::new(0.15, 0.15)),
    ("phi-4-mini-instruct", Price::new(0.15, 0.15)),
    ("deepseek-coder-6.7b-instruct", Price::new(0.15, 0.15)),
    ("gemma-3-4b-it", Price::new(0.15, 0.15)),
    ("gemma-3-1b-it", Price::new(0.10, 0.10)),
];

impl Default for PriceTable {
    fn default() -> Self {
        PriceTable {
            prices: DEFAULT_PRICES
                .iter()
                .map(|(m, p)| (m.to_string(), *p))
                .collect(),
        }
    }
}

impl PriceTable {
    pub fn empty() -> Self {
        PriceTable {
            prices: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, model_id: impl Into<String>, price: Price) -> Result<()> {
        let valid = |x: f64| x.is_finite() && x >= 0.0;
        if !valid(price.input_usd_per_million) || !valid(price.output_usd_per_million) {
            return Err(Error::Config(
                "prices must be finite and non-negative".into(),
            ));
        }
        self.prices.insert(model_id.into(), price);
        Ok(())
    }

    pub fn get(&self, model_id: &str) -> Option<Price> {
        self.prices.get(model_id).copied()
    }

    pub fn models(&self) -> impl Iterator<Item = &str> {
        self.prices.keys().map(String::as_str)
    }

    /// Defaults overlaid with the entries of a JSON file
    /// `{"model": {"input_usd_per_million": .., "output_usd_per_million": ..}}`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let extra: BTreeMap<String, Price> = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut table = Self::default();
        for (m, p) in extra {
            table.insert(m, p)?;
        }
        Ok(table)
    }
}

pub fn cost_of_response(r: &CompletionResponse, prices: &PriceTable) -> Result<f64> {
    let p = prices
        .get(&r.model_id)
        .ok_or_else(|| Error::Unpriced(r.model_id.clone()))?;
    Ok(r.input_tokens as f64 * p.input_usd_per_million / 1e6
        + r.output_tokens as f64 * p.output_usd_per_million / 1e6)
}

/// Total USD over `usage`.
pub fn cost_of<'a>(
    usage: impl IntoIterator<Item = &'a CompletionResponse>,
    prices: &PriceTable,
) -> Result<f64> {
    // fold from +0.0: an empty float sum is -0.0
    usage
        .into_iter()
        .try_fold(0.0, |acc, r| Ok(acc + cost_of_response(r, prices)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::BackendKind;

    fn usage(model: &str, i: u64, o: u64) -> CompletionResponse {
        CompletionResponse {
            model_id: model.into(),
            text: String::new(),
            input_tokens: i,
            output_tokens: o,
            latency_seconds: 0.0,
            backend_kind: BackendKind::Mock,
            usage_estimated: false,
        }
    }

    #[test]
    fn million_token_prices() {
        let t = PriceTable::default();
        let c = cost_of(&[usage("gemini-2.0-flash", 1_000_000, 1_000_000)], &t).unwrap();
        assert!((c - 0.50).abs() < 1e-9);
        let c = cost_of(&[usage("gpt-5", 1_000_000, 1_000_000)], &t).unwrap();
        assert!((c - 11.25).abs() < 1e-9);
        assert_eq!(cost_of(&[usage("gpt-5", 0, 0)], &t).unwrap(), 0.0);
        assert_eq!(cost_of(&[], &t).unwrap(), 0.0);
    }

    #[test]
    fn unpriced_model_errors() {
        let err = cost_of(&[usage("mystery", 1, 1)], &PriceTable::default()).unwrap_err();
        assert!(matches!(err, Error::Unpriced(m) if m == "mystery"));
    }

    #[test]
    fn linear_in_usage() {
        let t = PriceTable::default();
        let a = [usage("phi-4", 1234, 99), usage("gpt-4o", 10, 7)];
        let b = [usage("gemma-3-1b-it", 555, 4444)];
        let all: Vec<_> = a.iter().chain(&b).cloned().collect();
        let sum = cost_of(&a, &t).unwrap() + cost_of(&b, &t).unwrap();
        assert!((cost_of(&all, &t).unwrap() - sum).abs() < 1e-15);
        assert!(cost_of(&[], &t).unwrap().is_sign_positive());
    }

    #[test]
    fn negative_prices_rejected_and_file_overlay() {
        let mut t = PriceTable::empty();
        assert!(t.insert("m", Price::new(-1.0, 0.0)).is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("prices.json");
        std::fs::write(
            &p,
            r#"{"local-slm": {"input_usd_per_million": 0.2, "output_usd_per_million": 0.3}}"#,
        )
        .unwrap();
        let t = PriceTable::load(&p).unwrap();
        assert_eq!(t.get("local-slm"), Some(Price::new(0.2, 0.3)));
        assert!(t.get("gpt-5").is_some());
    }
}
