//! JSON documents for systems, datasets, sample sets, policies and
//! evaluation reports. Matrices are nested row-major arrays; infinite costs
//! are written as the string `"inf"`.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::evaluation::EvaluationReport;
use crate::inference::{SampleSet, SamplingStats};
use crate::model::{Dataset, GainPolicy, LinearSystem, Rollout};
use crate::scalar::Cost;

impl Serialize for Cost<f64> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Cost::Finite(v) => s.serialize_f64(*v),
            Cost::Infinite => s.serialize_str("inf"),
        }
    }
}

struct CostVisitor;

impl<'de> Visitor<'de> for CostVisitor {
    type Value = Cost<f64>;

    fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
        f.write_str("a number or \"inf\"")
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Self::Value, E> {
        Ok(Cost::from(v))
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Self::Value, E> {
        Ok(Cost::Finite(v as f64))
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Self::Value, E> {
        Ok(Cost::Finite(v as f64))
    }

    fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Self::Value, E> {
        match v {
            "inf" | "Infinity" | "+inf" => Ok(Cost::Infinite),
            _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
        }
    }
}

impl<'de> Deserialize<'de> for Cost<f64> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        d.deserialize_any(CostVisitor)
    }
}

pub type Rows = Vec<Vec<f64>>;

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn rows_to_matrix(rows: &Rows, what: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::Parse(format!("{what}: rows have unequal lengths")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemDoc {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B")]
    pub b: Rows,
    #[serde(rename = "Pi")]
    pub pi: Rows,
}

impl SystemDoc {
    pub fn from_system(s: &LinearSystem<f64>) -> Self {
        Self { a: matrix_to_rows(s.a()), b: matrix_to_rows(s.b()), pi: matrix_to_rows(s.pi()) }
    }

    pub fn to_system(&self) -> Result<LinearSystem<f64>> {
        LinearSystem::new(rows_to_matrix(&self.a, "A")?, rows_to_matrix(&self.b, "B")?, rows_to_matrix(&self.pi, "Pi")?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutDoc {
    pub x: Rows,
    pub u: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDoc {
    pub n_x: usize,
    pub n_u: usize,
    pub rollouts: Vec<RolloutDoc>,
}

impl DatasetDoc {
    pub fn from_dataset(d: &Dataset<f64>) -> Self {
        let vecs = |v: &[DVector<f64>]| v.iter().map(|x| x.iter().copied().collect()).collect();
        Self {
            n_x: d.n_x(),
            n_u: d.n_u(),
            rollouts: d.rollouts().iter().map(|r| RolloutDoc { x: vecs(&r.x), u: vecs(&r.u) }).collect(),
        }
    }

    pub fn to_dataset(&self) -> Result<Dataset<f64>> {
        let vecs = |rows: &Rows| rows.iter().map(|r| DVector::from_column_slice(r)).collect();
        let rollouts = self.rollouts.iter().map(|r| Rollout { x: vecs(&r.x), u: vecs(&r.u) }).collect();
        Dataset::new(self.n_x, self.n_u, rollouts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSetDoc {
    pub samples: Vec<SystemDoc>,
    pub confidence: f64,
    pub log_weights: Vec<f64>,
    /// Least-squares model with the noise covariance used for sampling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nominal: Option<SystemDoc>,
    #[serde(default)]
    pub pool: usize,
    #[serde(default)]
    pub weight_discards: usize,
    #[serde(default)]
    pub unstabilizable: usize,
}

impl SampleSetDoc {
    pub fn from_set(set: &SampleSet<f64>, nominal: Option<&LinearSystem<f64>>) -> Self {
        Self {
            samples: set.samples.iter().map(SystemDoc::from_system).collect(),
            confidence: set.confidence,
            log_weights: set.log_weights.clone(),
            nominal: nominal.map(SystemDoc::from_system),
            pool: set.stats.pool,
            weight_discards: set.stats.weight_discards,
            unstabilizable: set.stats.unstabilizable,
        }
    }

    pub fn to_set(&self) -> Result<SampleSet<f64>> {
        let samples = self.samples.iter().map(SystemDoc::to_system).collect::<Result<Vec<_>>>()?;
        if self.log_weights.len() != samples.len() {
            return Err(Error::Parse("log_weights length differs from sample count".into()));
        }
        Ok(SampleSet {
            samples,
            confidence: self.confidence,
            log_weights: self.log_weights.clone(),
            cutoff: None,
            stats: SamplingStats {
                pool: self.pool,
                weight_discards: self.weight_discards,
                unstabilizable: self.unstabilizable,
            },
        })
    }

    pub fn nominal_system(&self) -> Result<Option<LinearSystem<f64>>> {
        self.nominal.as_ref().map(SystemDoc::to_system).transpose()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDoc {
    #[serde(rename = "K")]
    pub k: Rows,
    #[serde(rename = "Q")]
    pub q: Rows,
    #[serde(rename = "R")]
    pub r: Rows,
    pub method: String,
    #[serde(default)]
    pub cost_trace: Vec<Cost<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    /// Shared Lyapunov matrix when one was produced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<Rows>,
}

impl PolicyDoc {
    pub fn gain(&self) -> Result<GainPolicy<f64>> {
        GainPolicy::new(rows_to_matrix(&self.k, "K")?)
    }

    pub fn weights(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        Ok((rows_to_matrix(&self.q, "Q")?, rows_to_matrix(&self.r, "R")?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationDoc {
    pub suboptimality: Cost<f64>,
    pub cost_on_truth: Cost<f64>,
    pub optimal_cost: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unstable_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unstable: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robust_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate_valid: Option<bool>,
}

impl From<&EvaluationReport> for EvaluationDoc {
    fn from(r: &EvaluationReport) -> Self {
        Self {
            suboptimality: r.suboptimality,
            cost_on_truth: r.cost_on_truth,
            optimal_cost: r.optimal_cost,
            unstable_fraction: r.unstable_fraction(),
            unstable: r.robustness.map(|x| x.unstable),
            robust_samples: r.robustness.map(|x| x.total),
            certificate_valid: r.certificate_valid,
        }
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))
}

pub fn from_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

pub fn write_json<T: Serialize, P: AsRef<Path>>(path: P, value: &T) -> Result<()> {
    let mut text = to_json(value)?;
    text.push('\n');
    fs::write(path.as_ref(), text).map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))
}

pub fn read_json<T: for<'de> Deserialize<'de>, P: AsRef<Path>>(path: P) -> Result<T> {
    let text = fs::read_to_string(path.as_ref()).map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_toeplitz_system;
    use nalgebra::dmatrix;

    #[test]
    fn cost_json() {
        let v = vec![Cost::Finite(1.5), Cost::Infinite];
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(s, r#"[1.5,"inf"]"#);
        let back: Vec<Cost<f64>> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
        assert!(serde_json::from_str::<Cost<f64>>(r#""nan""#).is_err());
    }

    #[test]
    fn system_roundtrip() {
        let sys = make_toeplitz_system::<f64>(3).unwrap();
        let doc = SystemDoc::from_system(&sys);
        let text = to_json(&doc).unwrap();
        assert!(text.contains("\"A\"") && text.contains("\"Pi\""));
        let back = from_json::<SystemDoc>(&text).unwrap().to_system().unwrap();
        assert_eq!(back, sys);
    }

    #[test]
    fn ragged_matrix_rejected() {
        let doc = SystemDoc {
            a: vec![vec![1.0, 0.0], vec![0.0]],
            b: vec![vec![1.0], vec![0.0]],
            pi: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        };
        assert!(matches!(doc.to_system(), Err(Error::Parse(_))));
    }

    #[test]
    fn dataset_roundtrip() {
        let r = Rollout {
            x: vec![dmatrix![1.0; 2.0].column(0).into_owned(), DVector::from_vec(vec![0.5, 0.1])],
            u: vec![DVector::from_vec(vec![0.3])],
        };
        let d = Dataset::new(2, 1, vec![r]).unwrap();
        let doc = DatasetDoc::from_dataset(&d);
        assert_eq!(doc.rollouts[0].x, vec![vec![1.0, 2.0], vec![0.5, 0.1]]);
        let back = from_json::<DatasetDoc>(&to_json(&doc).unwrap()).unwrap().to_dataset().unwrap();
        assert_eq!(back.num_transitions(), 1);
    }
}
