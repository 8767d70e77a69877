use serde::{Deserialize, Serialize};

use super::{evaluate_repeated, EvalContext, MetricsReport};
use crate::dataset::Pair;
use crate::error::{Error, Result};
use crate::pipeline::PipelineConfig;

/// Values to try per knob; `None` keeps the base config's value and leaves
/// the knob out of the tags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub n_candidates: Option<Vec<usize>>,
    pub temperature: Option<Vec<f64>>,
    pub t: Option<Vec<usize>>,
}

impl SweepGrid {
    /// The full grid over number of generators, temperature and table count.
    pub fn full() -> Self {
        SweepGrid {
            n_candidates: Some(vec![1, 2, 3, 4]),
            temperature: Some(vec![0.2, 0.7, 1.2, 1.7]),
            t: Some(vec![1, 3, 5, 7, 9]),
        }
    }

    /// Parses `knob=v1,v2,...` with knob `n`, `temperature` or `t`.
    pub fn set(&mut self, arg: &str) -> Result<()> {
        let (knob, values) = arg
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("knob '{arg}' is not of the form name=v1,v2")))?;
        let parts: Vec<&str> = values
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .collect();
        if parts.is_empty() {
            return Err(Error::Config(format!("knob '{knob}' has no values")));
        }
        let bad = |v: &str| Error::Config(format!("invalid value '{v}' for knob '{knob}'"));
        match knob.trim() {
            "n" | "n_candidates" => {
                self.n_candidates = Some(
                    parts
                        .iter()
                        .map(|v| v.parse().map_err(|_| bad(v)))
                        .collect::<Result<_>>()?,
                )
            }
            "temperature" | "temp" => {
                self.temperature = Some(
                    parts
                        .iter()
                        .map(|v| v.parse().map_err(|_| bad(v)))
                        .collect::<Result<_>>()?,
                )
            }
            "t" | "top" => {
                self.t = Some(
                    parts
                        .iter()
                        .map(|v| v.parse().map_err(|_| bad(v)))
                        .collect::<Result<_>>()?,
                )
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown knob '{other}' (expected n, temperature or t)"
                )))
            }
        }
        Ok(())
    }

    /// Grid points in lexicographic order: candidates, then temperature, then t.
    pub fn points(&self, base: &PipelineConfig) -> Vec<(String, PipelineConfig)> {
        let ns = self
            .n_candidates
            .clone()
            .unwrap_or_else(|| vec![base.n_candidates]);
        let temps = self
            .temperature
            .clone()
            .unwrap_or_else(|| vec![base.generator_temperature]);
        let ts = self.t.clone().unwrap_or_else(|| vec![base.top_tables()]);
        let mut out = Vec::new();
        for &n in &ns {
            for &temp in &temps {
                for &t in &ts {
                    let mut parts = Vec::new();
                    if self.n_candidates.is_some() {
                        parts.push(format!("SLMs-{n}"));
                    }
                    if self.temperature.is_some() {
                        parts.push(format!("Temp-{temp}"));
                    }
                    if self.t.is_some() {
                        parts.push(format!("Top-{t}"));
                    }
                    let tag = if parts.is_empty() {
                        "base".to_string()
                    } else {
                        parts.join("_")
                    };
                    let mut cfg = base.clone();
                    cfg.n_candidates = n;
                    cfg.generator_temperature = temp;
                    cfg.t = Some(t);
                    out.push((tag, cfg));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub tag: String,
    pub n_candidates: usize,
    pub temperature: f64,
    pub t: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<MetricsReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Evaluates every grid point; a failing point is recorded and the sweep goes on.
pub fn run_sweep(
    grid: &SweepGrid,
    base: &PipelineConfig,
    dataset: &[Pair],
    ctx: &EvalContext,
    iterations: usize,
) -> Result<Vec<SweepPoint>> {
    let points = grid.points(base);
    if points.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    Ok(points
        .into_iter()
        .map(|(tag, cfg)| {
            let (report, error) = match evaluate_repeated(dataset, &cfg, ctx, iterations) {
                Ok(mut r) => {
                    r.tag = Some(tag.clone());
                    (Some(r), None)
                }
                Err(e) => {
                    log::warn!("sweep point {tag} failed: {e}");
                    (None, Some(e.to_string()))
                }
            };
            SweepPoint {
                tag,
                n_candidates: cfg.n_candidates,
                temperature: cfg.generator_temperature,
                t: cfg.top_tables(),
                report,
                error,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn full_grid_has_80_distinct_ordered_tags() {
        let pts = SweepGrid::full().points(&PipelineConfig::default());
        assert_eq!(pts.len(), 80);
        let tags: BTreeSet<&str> = pts.iter().map(|(t, _)| t.as_str()).collect();
        assert_eq!(tags.len(), 80);
        assert_eq!(pts[0].0, "SLMs-1_Temp-0.2_Top-1");
        assert_eq!(pts[1].0, "SLMs-1_Temp-0.2_Top-3");
        assert_eq!(pts[79].0, "SLMs-4_Temp-1.7_Top-9");
    }

    #[test]
    fn single_knob_tags() {
        let mut g = SweepGrid::default();
        g.set("t=1,3,5,7,9").unwrap();
        let tags: Vec<String> = g
            .points(&PipelineConfig::default())
            .into_iter()
            .map(|(t, _)| t)
            .collect();
        assert_eq!(tags, ["Top-1", "Top-3", "Top-5", "Top-7", "Top-9"]);
        assert_eq!(
            SweepGrid::default()
                .points(&PipelineConfig::default())
                .len(),
            1
        );
    }

    #[test]
    fn bad_knobs_are_config_errors() {
        let mut g = SweepGrid::default();
        for arg in ["x=1", "t", "t=", "n=a", "temperature=hot"] {
            assert!(g.set(arg).unwrap_err().is_config(), "{arg}");
        }
    }
}
