//! Human-coded response-quality criteria: CSV ingest and majority-vote rates.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::questionnaire::{Condition, QuestionKind, Questionnaire};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Seed,
    PostProbe,
    Combined,
}

impl Segment {
    pub fn as_str(self) -> &'static str {
        match self {
            Segment::Seed => "seed",
            Segment::PostProbe => "post_probe",
            Segment::Combined => "combined",
        }
    }
}

impl std::str::FromStr for Segment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "seed" => Ok(Segment::Seed),
            "post_probe" | "postprobe" => Ok(Segment::PostProbe),
            "combined" => Ok(Segment::Combined),
            other => Err(format!("unknown segment `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Relevance,
    Specificity,
    Explanation,
    Completeness,
    Comprehensibility,
    Concision,
}

impl Criterion {
    pub const ALL: [Criterion; 6] = [
        Criterion::Relevance,
        Criterion::Specificity,
        Criterion::Explanation,
        Criterion::Completeness,
        Criterion::Comprehensibility,
        Criterion::Concision,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::Relevance => "relevance",
            Criterion::Specificity => "specificity",
            Criterion::Explanation => "explanation",
            Criterion::Completeness => "completeness",
            Criterion::Comprehensibility => "comprehensibility",
            Criterion::Concision => "concision",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct QualityKey {
    pub session_id: String,
    pub question_id: String,
    pub segment: Segment,
}

/// One coder's judgement of one response segment. `None` means not
/// applicable or left blank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityLabels {
    pub key: QualityKey,
    pub coder_id: String,
    pub values: [Option<bool>; 6],
}

impl QualityLabels {
    pub fn get(&self, c: Criterion) -> Option<bool> {
        self.values[c as usize]
    }
}

fn parse_bool(field: &str, value: &str, line: usize) -> Result<Option<bool>, MetricError> {
    match value.trim().to_ascii_lowercase().as_str() {
        "" | "na" | "n/a" => Ok(None),
        "1" | "true" | "t" | "yes" => Ok(Some(true)),
        "0" | "false" | "f" | "no" => Ok(Some(false)),
        other => Err(MetricError::Schema(format!("line {line}: `{field}` is not a boolean: `{other}`"))),
    }
}

/// Read the label CSV. Exact duplicate rows (same key, coder and values) are
/// collapsed; duplicates that disagree are an error.
pub fn ingest_quality_labels(reader: impl Read) -> Result<Vec<QualityLabels>, MetricError> {
    const REQUIRED: [&str; 4] = ["session_id", "question_id", "segment", "coder_id"];
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(|e| MetricError::Schema(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| MetricError::Schema(format!("missing column `{name}`")))
    };
    let key_cols: Vec<usize> = REQUIRED.iter().map(|n| col(n)).collect::<Result<_, _>>()?;
    let crit_cols: Vec<usize> = Criterion::ALL.iter().map(|c| col(c.as_str())).collect::<Result<_, _>>()?;

    let mut seen: BTreeMap<(QualityKey, String), QualityLabels> = BTreeMap::new();
    let mut order = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| MetricError::Schema(e.to_string()))?;
        let field = |c: usize| row.get(c).unwrap_or("").trim().to_string();
        let segment =
            field(key_cols[2]).parse::<Segment>().map_err(|e| MetricError::Schema(format!("line {line}: {e}")))?;
        let key = QualityKey { session_id: field(key_cols[0]), question_id: field(key_cols[1]), segment };
        let coder_id = field(key_cols[3]);
        if key.session_id.is_empty() || key.question_id.is_empty() || coder_id.is_empty() {
            return Err(MetricError::Schema(format!("line {line}: empty key field")));
        }
        let mut values = [None; 6];
        for (j, c) in Criterion::ALL.iter().enumerate() {
            values[j] = parse_bool(c.as_str(), &field(crit_cols[j]), line)?;
        }
        let label = QualityLabels { key: key.clone(), coder_id: coder_id.clone(), values };
        let id = (key, coder_id);
        match seen.get(&id) {
            Some(prev) if *prev == label => continue,
            Some(_) => {
                return Err(MetricError::ConflictingDuplicateRow(format!(
                    "{}/{}/{:?} coder {}",
                    id.0.session_id, id.0.question_id, id.0.segment, id.1
                )))
            }
            None => {
                order.push(id.clone());
                seen.insert(id, label);
            }
        }
    }
    Ok(order.into_iter().filter_map(|id| seen.remove(&id)).collect())
}

/// Majority value per response and criterion; ties and all-blank are `None`.
pub fn majority_quality(labels: &[QualityLabels]) -> BTreeMap<QualityKey, [Option<bool>; 6]> {
    let mut tally: BTreeMap<&QualityKey, [(usize, usize); 6]> = BTreeMap::new();
    for l in labels {
        let t = tally.entry(&l.key).or_insert([(0, 0); 6]);
        for (j, v) in l.values.iter().enumerate() {
            match v {
                Some(true) => t[j].0 += 1,
                Some(false) => t[j].1 += 1,
                None => {}
            }
        }
    }
    tally
        .into_iter()
        .map(|(k, t)| {
            let votes = t.map(|(yes, no)| match yes.cmp(&no) {
                std::cmp::Ordering::Greater => Some(true),
                std::cmp::Ordering::Less => Some(false),
                std::cmp::Ordering::Equal => None,
            });
            (k.clone(), votes)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityRate {
    pub condition: Condition,
    pub segment: Segment,
    pub criterion: Criterion,
    pub positives: usize,
    pub n: usize,
    /// Unresolved or not-applicable responses left out of `n`.
    pub excluded: usize,
}

impl QualityRate {
    pub fn rate(&self) -> Option<f64> {
        (self.n > 0).then(|| self.positives as f64 / self.n as f64)
    }
}

/// Rates per condition × segment × criterion. Explanation only counts for
/// opinion questions. Groups with no labeled responses report `rate() = None`.
pub fn quality_rates(
    labels: &[QualityLabels],
    session_conditions: &BTreeMap<String, Condition>,
    q: &Questionnaire,
) -> Vec<QualityRate> {
    let majority = majority_quality(labels);
    let mut groups: BTreeMap<(Condition, Segment, Criterion), QualityRate> = BTreeMap::new();
    for c in &q.conditions {
        for s in [Segment::Seed, Segment::PostProbe, Segment::Combined] {
            for k in Criterion::ALL {
                groups.insert(
                    (*c, s, k),
                    QualityRate { condition: *c, segment: s, criterion: k, positives: 0, n: 0, excluded: 0 },
                );
            }
        }
    }
    for (key, votes) in &majority {
        let Some(&condition) = session_conditions.get(&key.session_id) else {
            continue;
        };
        let is_opinion = q.question(&key.question_id).is_some_and(|s| s.kind == QuestionKind::Opinion);
        for k in Criterion::ALL {
            let Some(g) = groups.get_mut(&(condition, key.segment, k)) else {
                continue;
            };
            let applicable = k != Criterion::Explanation || is_opinion;
            match votes[k as usize] {
                Some(v) if applicable => {
                    g.n += 1;
                    g.positives += v as usize;
                }
                _ => g.excluded += 1,
            }
        }
    }
    groups.into_values().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::questionnaire::builtin_study;

    const HEADER: &str = "session_id,question_id,segment,coder_id,relevance,specificity,explanation,completeness,comprehensibility,concision\n";

    fn conditions(ids: &[&str]) -> BTreeMap<String, Condition> {
        ids.iter().map(|s| (s.to_string(), Condition::ElabRelevanceProbes)).collect()
    }

    fn rate(rates: &[QualityRate], seg: Segment, k: Criterion) -> &QualityRate {
        rates
            .iter()
            .find(|r| r.condition == Condition::ElabRelevanceProbes && r.segment == seg && r.criterion == k)
            .unwrap()
    }

    #[test]
    fn three_of_four_relevant() {
        let csv = format!(
            "{HEADER}a,Q1,seed,c1,1,0,1,1,1,1\nb,Q1,seed,c1,1,0,1,1,1,1\nc,Q1,seed,c1,1,0,1,1,1,1\nd,Q1,seed,c1,0,0,1,1,1,1\n"
        );
        let labels = ingest_quality_labels(csv.as_bytes()).unwrap();
        let rates = quality_rates(&labels, &conditions(&["a", "b", "c", "d"]), &builtin_study());
        assert_eq!(rate(&rates, Segment::Seed, Criterion::Relevance).rate(), Some(0.75));
    }

    #[test]
    fn explanation_excluded_for_factual_questions() {
        let csv = format!("{HEADER}a,Q4,seed,c1,1,1,0,1,1,1\nb,Q1,seed,c1,1,1,1,1,1,1\n");
        let labels = ingest_quality_labels(csv.as_bytes()).unwrap();
        let rates = quality_rates(&labels, &conditions(&["a", "b"]), &builtin_study());
        let expl = rate(&rates, Segment::Seed, Criterion::Explanation);
        assert_eq!((expl.n, expl.positives, expl.excluded), (1, 1, 1));
        assert_eq!(rate(&rates, Segment::Seed, Criterion::Relevance).n, 2);
    }

    #[test]
    fn empty_group_is_missing() {
        let rates = quality_rates(&[], &BTreeMap::new(), &builtin_study());
        assert!(rates.iter().all(|r| r.rate().is_none()));
    }

    #[test]
    fn duplicates() {
        let dup = format!("{HEADER}a,Q1,seed,c1,1,1,1,1,1,1\na,Q1,seed,c1,1,1,1,1,1,1\n");
        assert_eq!(ingest_quality_labels(dup.as_bytes()).unwrap().len(), 1);
        let clash = format!("{HEADER}a,Q1,seed,c1,1,1,1,1,1,1\na,Q1,seed,c1,0,1,1,1,1,1\n");
        assert!(matches!(ingest_quality_labels(clash.as_bytes()), Err(MetricError::ConflictingDuplicateRow(_))));
    }

    #[test]
    fn schema_errors() {
        let missing = "session_id,question_id,segment,coder_id,relevance\na,Q1,seed,c1,1\n";
        assert!(matches!(ingest_quality_labels(missing.as_bytes()), Err(MetricError::Schema(_))));
        let bad_bool = format!("{HEADER}a,Q1,seed,c1,maybe,1,1,1,1,1\n");
        assert!(matches!(ingest_quality_labels(bad_bool.as_bytes()), Err(MetricError::Schema(_))));
    }

    #[test]
    fn majority_across_coders_with_tie() {
        let csv = format!("{HEADER}a,Q1,seed,c1,1,1,,1,1,1\na,Q1,seed,c2,1,0,,1,1,1\na,Q1,seed,c3,0,0,,1,1,1\n");
        let labels = ingest_quality_labels(csv.as_bytes()).unwrap();
        let m = majority_quality(&labels);
        let v = m.values().next().unwrap();
        assert_eq!(v[Criterion::Relevance as usize], Some(true));
        assert_eq!(v[Criterion::Specificity as usize], Some(false));
        assert_eq!(v[Criterion::Explanation as usize], None);
    }
}
