use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::SideChanError;

pub const MODEL_SCHEMA_VERSION: u32 = 1;
/// Fewest training samples accepted per label.
pub const MIN_SAMPLES_PER_LABEL: usize = 5;

/// Nearest-centroid classifier over z-scored feature vectors, with a
/// per-dimension weight in the squared distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerprintModel {
    pub schema_version: u32,
    pub labels: Vec<String>,
    pub centroids: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub label: String,
    /// `(d2 - d1) / d2` for the nearest and second-nearest centroid
    /// distances; 1 when the model has a single label.
    pub margin: f64,
}

impl FingerprintModel {
    /// Fits the model. Labels are sorted; each needs at least
    /// [`MIN_SAMPLES_PER_LABEL`] samples and all vectors one length.
    pub fn train(samples: &[(String, Vec<f64>)]) -> Result<Self, SideChanError> {
        let dim = samples.first().map_or(0, |(_, v)| v.len());
        Self::train_weighted(samples, &vec![1.0; dim])
    }

    /// As [`train`](Self::train) with explicit distance weights, one per
    /// feature.
    pub fn train_weighted(samples: &[(String, Vec<f64>)], weights: &[f64]) -> Result<Self, SideChanError> {
        let dim = samples.first().map(|(_, v)| v.len()).ok_or_else(|| SideChanError::TrainingDataInsufficient {
            label: String::new(),
            count: 0,
            needed: MIN_SAMPLES_PER_LABEL,
        })?;
        if weights.len() != dim {
            return Err(SideChanError::DimensionMismatch { expected: dim, found: weights.len() });
        }
        let mut by_label: BTreeMap<&str, Vec<&[f64]>> = BTreeMap::new();
        for (l, v) in samples {
            if v.len() != dim {
                return Err(SideChanError::DimensionMismatch { expected: dim, found: v.len() });
            }
            by_label.entry(l.as_str()).or_default().push(v);
        }
        for (l, vs) in &by_label {
            if vs.len() < MIN_SAMPLES_PER_LABEL {
                return Err(SideChanError::TrainingDataInsufficient {
                    label: l.to_string(),
                    count: vs.len(),
                    needed: MIN_SAMPLES_PER_LABEL,
                });
            }
        }

        let n = samples.len() as f64;
        let mut mean = vec![0.0; dim];
        for (_, v) in samples {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x / n;
            }
        }
        let mut scale = vec![0.0; dim];
        for (_, v) in samples {
            for ((s, x), m) in scale.iter_mut().zip(v).zip(&mean) {
                *s += (x - m) * (x - m) / n;
            }
        }
        for s in &mut scale {
            *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
        }

        let mut model = Self {
            schema_version: MODEL_SCHEMA_VERSION,
            labels: Vec::new(),
            centroids: Vec::new(),
            mean,
            scale,
            weights: weights.to_vec(),
        };
        for (l, vs) in by_label {
            let mut c = vec![0.0; dim];
            for v in &vs {
                for (ci, z) in c.iter_mut().zip(model.normalize(v)) {
                    *ci += z / vs.len() as f64;
                }
            }
            model.labels.push(l.to_string());
            model.centroids.push(c);
        }
        Ok(model)
    }

    fn normalize<'a>(&'a self, v: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
        v.iter().zip(&self.mean).zip(&self.scale).map(|((x, m), s)| (x - m) / s)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn classify(&self, features: &[f64]) -> Result<Classification, SideChanError> {
        if features.len() != self.dim() {
            return Err(SideChanError::DimensionMismatch { expected: self.dim(), found: features.len() });
        }
        let z: Vec<f64> = self.normalize(features).collect();
        let mut d: Vec<(f64, &str)> = self
            .centroids
            .iter()
            .zip(&self.labels)
            .map(|(c, l)| {
                let dist = c
                    .iter()
                    .zip(&z)
                    .zip(&self.weights)
                    .map(|((a, b), w)| w * (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                (dist, l.as_str())
            })
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
        let (d1, label) = *d.first().ok_or_else(|| SideChanError::InvalidArgument("model has no labels".into()))?;
        let margin = match d.get(1) {
            None => 1.0,
            Some(&(d2, _)) if d2 > 0.0 => (d2 - d1) / d2,
            Some(_) => 0.0,
        };
        Ok(Classification { label: label.to_string(), margin })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, SideChanError> {
        let m: Self = serde_json::from_str(s).map_err(|e| SideChanError::Format(e.to_string()))?;
        if m.schema_version != MODEL_SCHEMA_VERSION {
            return Err(SideChanError::Format(format!("unsupported schema_version {}", m.schema_version)));
        }
        if m.centroids.len() != m.labels.len()
            || m.scale.len() != m.mean.len()
            || m.weights.len() != m.mean.len()
            || m.centroids.iter().any(|c| c.len() != m.mean.len())
        {
            return Err(SideChanError::Format("inconsistent model dimensions".into()));
        }
        Ok(m)
    }
}

/// Rows are true labels, columns predicted labels, both in `labels` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>) -> Self {
        let n = labels.len();
        Self { labels, counts: vec![vec![0; n]; n] }
    }

    fn index(&mut self, label: &str) -> usize {
        if let Some(i) = self.labels.iter().position(|l| l == label) {
            return i;
        }
        self.labels.push(label.to_string());
        for row in &mut self.counts {
            row.push(0);
        }
        self.counts.push(vec![0; self.labels.len()]);
        self.labels.len() - 1
    }

    pub fn record(&mut self, truth: &str, predicted: &str) {
        let t = self.index(truth);
        let p = self.index(predicted);
        self.counts[t][p] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let correct: usize = (0..self.labels.len()).map(|i| self.counts[i][i]).sum();
        correct as f64 / self.total().max(1) as f64
    }

    /// Fraction of each true label classified correctly, for labels with
    /// at least one sample.
    pub fn per_class_accuracy(&self) -> Vec<(String, f64)> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| {
                let n: usize = self.counts[i].iter().sum();
                (n > 0).then(|| (l.clone(), self.counts[i][i] as f64 / n as f64))
            })
            .collect()
    }

    /// `true_label,<predicted labels...>` header, one row per true label.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "true_label,{}", self.labels.join(","))?;
        for (l, row) in self.labels.iter().zip(&self.counts) {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            writeln!(out, "{l},{}", cells.join(","))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(label: &str, center: [f64; 2], n: usize) -> Vec<(String, Vec<f64>)> {
        (0..n)
            .map(|i| {
                let d = i as f64 * 0.01;
                (label.to_string(), vec![center[0] + d, center[1] - d])
            })
            .collect()
    }

    #[test]
    fn separable_clusters_classify() {
        let mut data = samples("b", [10.0, 0.0], 6);
        data.extend(samples("a", [0.0, 10.0], 6));
        let m = FingerprintModel::train(&data).unwrap();
        assert_eq!(m.labels, vec!["a", "b"]);
        let c = m.classify(&[9.0, 1.0]).unwrap();
        assert_eq!(c.label, "b");
        assert!(c.margin > 0.5 && c.margin <= 1.0);
        let back = FingerprintModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn equidistant_tie_picks_smallest_label() {
        let mut data = vec![("y".to_string(), vec![1.0, 0.0]); 5];
        data.extend(vec![("x".to_string(), vec![-1.0, 0.0]); 5]);
        let m = FingerprintModel::train(&data).unwrap();
        let c = m.classify(&[0.0, 7.0]).unwrap();
        assert_eq!(c.label, "x");
        assert!(c.margin.abs() < 1e-9);
    }

    #[test]
    fn too_few_samples_rejected() {
        let mut data = samples("a", [0.0, 0.0], 5);
        data.extend(samples("b", [1.0, 1.0], 4));
        match FingerprintModel::train(&data) {
            Err(SideChanError::TrainingDataInsufficient { label, count, .. }) => {
                assert_eq!((label.as_str(), count), ("b", 4))
            }
            other => panic!("{other:?}"),
        }
        assert!(FingerprintModel::train(&[]).is_err());
    }

    #[test]
    fn single_label_model_is_degenerate_but_valid() {
        let m = FingerprintModel::train(&samples("only", [3.0, 3.0], 5)).unwrap();
        let c = m.classify(&[100.0, -100.0]).unwrap();
        assert_eq!((c.label.as_str(), c.margin), ("only", 1.0));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let m = FingerprintModel::train(&samples("a", [0.0, 0.0], 5)).unwrap();
        assert!(matches!(m.classify(&[1.0]), Err(SideChanError::DimensionMismatch { expected: 2, found: 1 })));
    }

    #[test]
    fn confusion_matrix_counts() {
        let mut cm = ConfusionMatrix::new(vec!["a".into(), "b".into()]);
        cm.record("a", "a");
        cm.record("a", "b");
        cm.record("b", "b");
        assert!((cm.accuracy() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(cm.per_class_accuracy(), vec![("a".into(), 0.5), ("b".into(), 1.0)]);
        let mut out = Vec::new();
        cm.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "true_label,a,b\na,1,1\nb,0,1\n");
    }
}
