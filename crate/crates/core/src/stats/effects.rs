//! Treatment-effect estimation for condition contrasts.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::bh::bh_adjust;
use super::dataset::{Covariate, SessionRow};
use super::ols::{ols_with, Design, OlsOptions};
use super::StatsError;
use crate::questionnaire::Condition;

pub const TREATMENT_COLUMN: &str = "treatment";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SubgroupFilter {
    Include { covariate: String, values: Vec<String> },
    Exclude { covariate: String, values: Vec<String> },
}

impl SubgroupFilter {
    fn keeps(&self, row: &SessionRow) -> bool {
        let (covariate, values, include) = match self {
            SubgroupFilter::Include { covariate, values } => (covariate, values, true),
            SubgroupFilter::Exclude { covariate, values } => (covariate, values, false),
        };
        let hit = row.covariates.get(covariate).is_some_and(|c| values.contains(&c.label()));
        hit == include
    }

    pub fn label(&self) -> String {
        match self {
            SubgroupFilter::Include { covariate, values } => {
                format!("{covariate} in [{}]", values.join("|"))
            }
            SubgroupFilter::Exclude { covariate, values } => {
                format!("{covariate} not in [{}]", values.join("|"))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSpec {
    pub outcome: String,
    pub treated: Condition,
    pub baseline: Condition,
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default)]
    pub subgroup: Option<SubgroupFilter>,
    #[serde(default)]
    pub family: Option<String>,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub robust: bool,
}

fn default_level() -> f64 {
    0.95
}

impl EffectSpec {
    pub fn new(outcome: impl Into<String>, treated: Condition, baseline: Condition) -> Self {
        Self {
            outcome: outcome.into(),
            treated,
            baseline,
            covariates: Vec::new(),
            subgroup: None,
            family: None,
            level: default_level(),
            robust: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Effect {
    pub outcome: String,
    pub treated: Condition,
    pub baseline: Condition,
    pub family: Option<String>,
    pub subgroup: Option<String>,
    pub estimate: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
    /// Set by [`adjust_families`].
    pub p_adj: Option<f64>,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
    pub df: usize,
}

/// OLS of the outcome on a treated-vs-baseline indicator plus covariates,
/// restricted to the two conditions and the optional subgroup. Rows missing
/// the outcome or any covariate are dropped.
pub fn treatment_effect(rows: &[SessionRow], spec: &EffectSpec) -> Result<Effect, StatsError> {
    if spec.treated == spec.baseline {
        return Err(StatsError::InvalidArgument("treated and baseline conditions are equal".into()));
    }
    let sample: Vec<&SessionRow> = rows
        .iter()
        .filter(|r| r.condition == spec.treated || r.condition == spec.baseline)
        .filter(|r| spec.subgroup.as_ref().is_none_or(|f| f.keeps(r)))
        .filter(|r| r.outcomes.contains_key(&spec.outcome))
        .filter(|r| spec.covariates.iter().all(|c| r.covariates.contains_key(c)))
        .collect();
    for c in [spec.treated, spec.baseline] {
        if !sample.iter().any(|r| r.condition == c) {
            return Err(StatsError::EmptySubgroup(c.to_string()));
        }
    }

    let mut columns = vec!["intercept".to_string(), TREATMENT_COLUMN.to_string()];
    // Per covariate: None = numeric, Some(levels) = dummies for levels[1..].
    let mut encodings: Vec<(String, Option<Vec<String>>)> = Vec::new();
    for name in &spec.covariates {
        let values: Vec<&Covariate> = sample.iter().map(|r| &r.covariates[name]).collect();
        if values.iter().all(|v| matches!(v, Covariate::Numeric(_))) {
            columns.push(name.clone());
            encodings.push((name.clone(), None));
        } else {
            let levels: BTreeSet<String> = values.iter().map(|v| v.label()).collect();
            let levels: Vec<String> = levels.into_iter().collect();
            columns.extend(levels.iter().skip(1).map(|l| format!("{name}={l}")));
            encodings.push((name.clone(), Some(levels)));
        }
    }

    let mut y = Vec::with_capacity(sample.len());
    let mut x = Vec::with_capacity(sample.len());
    for r in &sample {
        y.push(r.outcomes[&spec.outcome]);
        let mut row = vec![1.0, (r.condition == spec.treated) as u8 as f64];
        for (name, enc) in &encodings {
            let value = &r.covariates[name];
            match (enc, value) {
                (None, Covariate::Numeric(v)) => row.push(*v),
                (Some(levels), v) => {
                    let label = v.label();
                    row.extend(levels.iter().skip(1).map(|l| (*l == label) as u8 as f64));
                }
                (None, Covariate::Categorical(_)) => unreachable!("numeric encoding checked above"),
            }
        }
        x.push(row);
    }
    let mut design = Design::new(y, x, columns)?;
    design.family_id = spec.family.clone();
    let fit = ols_with(&design, OlsOptions { robust: spec.robust })?;
    let j = 1;
    let (ci_low, ci_high) = fit.conf_int(j, spec.level);
    Ok(Effect {
        outcome: spec.outcome.clone(),
        treated: spec.treated,
        baseline: spec.baseline,
        family: spec.family.clone(),
        subgroup: spec.subgroup.as_ref().map(SubgroupFilter::label),
        estimate: fit.coefficients[j],
        se: fit.std_errors[j],
        t: fit.t_stats[j],
        p: fit.p_values[j],
        p_adj: None,
        ci_low,
        ci_high,
        n: sample.len(),
        df: fit.df_resid,
    })
}

/// BH-adjust p-values within each family. Effects without a family form
/// their own singleton family.
pub fn adjust_families(effects: &mut [Effect], q: f64) -> Result<(), StatsError> {
    let mut families: BTreeMap<Option<String>, Vec<usize>> = BTreeMap::new();
    for (i, e) in effects.iter().enumerate() {
        let key = e.family.clone().or_else(|| Some(format!("\u{0}{i}")));
        families.entry(key).or_default().push(i);
    }
    for idx in families.values() {
        let ps: Vec<f64> = idx.iter().map(|&i| effects[i].p).collect();
        let adj = bh_adjust(&ps, q)?;
        for (k, &i) in idx.iter().enumerate() {
            effects[i].p_adj = Some(adj.adjusted[k]);
        }
    }
    Ok(())
}

pub fn write_effects_csv(effects: &[Effect], writer: impl Write) -> Result<(), StatsError> {
    let err = |e: csv::Error| StatsError::Dataset(e.to_string());
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "outcome", "treated", "baseline", "n", "estimate", "se", "p", "p_adj", "ci_low", "ci_high", "family",
        "subgroup",
    ])
    .map_err(err)?;
    for e in effects {
        w.write_record([
            e.outcome.clone(),
            e.treated.to_string(),
            e.baseline.to_string(),
            e.n.to_string(),
            format!("{:.6}", e.estimate),
            format!("{:.6}", e.se),
            format!("{:.6}", e.p),
            e.p_adj.map(|p| format!("{p:.6}")).unwrap_or_default(),
            format!("{:.6}", e.ci_low),
            format!("{:.6}", e.ci_high),
            e.family.clone().unwrap_or_default(),
            e.subgroup.clone().unwrap_or_default(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| StatsError::Dataset(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: usize, c: Condition, y: f64, device: &str) -> SessionRow {
        SessionRow {
            session_id: id.to_string(),
            condition: c,
            outcomes: BTreeMap::from([("y".to_string(), y)]),
            covariates: BTreeMap::from([
                ("device".to_string(), Covariate::Categorical(device.into())),
                ("age".to_string(), Covariate::Numeric(20.0 + (id % 7) as f64)),
            ]),
        }
    }

    fn data() -> Vec<SessionRow> {
        let devices = ["desktop", "phone", "tablet"];
        (0..60)
            .map(|i| {
                let c = if i % 2 == 0 { Condition::Control } else { Condition::ElabRelevanceProbes };
                let y = 3.0 + (c == Condition::ElabRelevanceProbes) as u8 as f64 * 2.0 + ((i * 37) % 11) as f64 * 0.1;
                row(i, c, y, devices[i % 3])
            })
            .collect()
    }

    #[test]
    fn label_swap_flips_sign() {
        let rows = data();
        let mut spec = EffectSpec::new("y", Condition::ElabRelevanceProbes, Condition::Control);
        spec.covariates = vec!["device".into(), "age".into()];
        let a = treatment_effect(&rows, &spec).unwrap();
        std::mem::swap(&mut spec.treated, &mut spec.baseline);
        let b = treatment_effect(&rows, &spec).unwrap();
        assert!((a.estimate + b.estimate).abs() < 1e-10);
        assert!((a.se - b.se).abs() < 1e-10);
        assert!(a.estimate > 1.5);
    }

    #[test]
    fn subgroup_and_empty_subgroup() {
        let rows = data();
        let mut spec = EffectSpec::new("y", Condition::ElabRelevanceProbes, Condition::Control);
        spec.subgroup = Some(SubgroupFilter::Exclude { covariate: "device".into(), values: vec!["tablet".into()] });
        assert_eq!(treatment_effect(&rows, &spec).unwrap().n, 40);
        spec.baseline = Condition::ConfirmationProbes;
        assert!(matches!(treatment_effect(&rows, &spec), Err(StatsError::EmptySubgroup(_))));
    }

    #[test]
    fn families_adjust_together() {
        let rows = data();
        let spec = EffectSpec::new("y", Condition::ElabRelevanceProbes, Condition::Control);
        let e = treatment_effect(&rows, &spec).unwrap();
        let mut effects = vec![e.clone(), e.clone(), e];
        effects[0].family = Some("f".into());
        effects[1].family = Some("f".into());
        effects[1].p = 0.5;
        effects[2].p = 0.2;
        adjust_families(&mut effects, 0.05).unwrap();
        assert_eq!(effects[1].p_adj, Some(0.5));
        assert_eq!(effects[2].p_adj, Some(0.2));
        assert!(effects[0].p_adj.unwrap() >= effects[0].p);
    }
}
