use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample<S> {
    pub x: Vec<S>,
    pub label: usize,
}

/// Examples held by one device (or the pooled corpus when `owner` is `None`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset<S> {
    pub examples: Vec<LabeledExample<S>>,
    pub owner: Option<usize>,
    pub feature_dim: usize,
    pub classes: usize,
}

impl<S: Scalar> Dataset<S> {
    pub fn new(examples: Vec<LabeledExample<S>>, classes: usize) -> Result<Self> {
        let feature_dim = examples.first().map_or(0, |e| e.x.len());
        for (i, e) in examples.iter().enumerate() {
            if e.x.len() != feature_dim {
                return Err(Error::Data(format!(
                    "example {i} has {} features, expected {feature_dim}",
                    e.x.len()
                )));
            }
            if e.label >= classes {
                return Err(Error::Data(format!(
                    "example {i} has label {} but only {classes} classes",
                    e.label
                )));
            }
        }
        Ok(Self {
            examples,
            owner: None,
            feature_dim,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn with_owner(mut self, owner: usize) -> Self {
        self.owner = Some(owner);
        self
    }

    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for e in &self.examples {
            counts[e.label] += 1;
        }
        counts
    }

    /// Keeps only examples whose label is in `labels`.
    pub fn filter_labels(&self, labels: &[usize]) -> Self {
        Self {
            examples: self
                .examples
                .iter()
                .filter(|e| labels.contains(&e.label))
                .cloned()
                .collect(),
            ..self.clone_empty()
        }
    }

    /// Copy with i.i.d. `N(0, std^2)` noise added to every feature.
    pub fn with_feature_noise(&self, std: f64, rng: &mut RngStream) -> Self {
        let mut out = self.clone();
        if std > 0.0 {
            let s = S::of(std);
            for e in &mut out.examples {
                for v in &mut e.x {
                    *v += s * S::of(rng.standard_normal());
                }
            }
        }
        out
    }

    /// Concatenates shards back into one unowned dataset.
    pub fn pool(shards: &[Dataset<S>]) -> Result<Self> {
        let first = shards
            .first()
            .ok_or_else(|| Error::arg("cannot pool zero shards"))?;
        let examples = shards.iter().flat_map(|s| s.examples.iter().cloned()).collect();
        Self::new(examples, first.classes)
    }

    fn clone_empty(&self) -> Self {
        Self {
            examples: Vec::new(),
            owner: self.owner,
            feature_dim: self.feature_dim,
            classes: self.classes,
        }
    }
}

/// Gaussian-blob classification task: one fixed center per class, examples
/// are center plus isotropic noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask<S> {
    pub centers: Vec<Vec<S>>,
    pub noise_std: S,
}

impl<S: Scalar> SyntheticTask<S> {
    /// Draws class centers with coordinates `N(0, spread^2)`.
    pub fn new(
        classes: usize,
        input_dim: usize,
        spread: f64,
        noise_std: f64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if classes == 0 || input_dim == 0 {
            return Err(Error::arg("classes and input dimension must be positive"));
        }
        if !(spread >= 0.0 && noise_std >= 0.0) {
            return Err(Error::arg("spread and noise must be non-negative"));
        }
        let centers = (0..classes)
            .map(|_| {
                (0..input_dim)
                    .map(|_| S::of(spread * rng.standard_normal()))
                    .collect()
            })
            .collect();
        Ok(Self {
            centers,
            noise_std: S::of(noise_std),
        })
    }

    pub fn classes(&self) -> usize {
        self.centers.len()
    }

    /// `per_class` fresh examples of every class, grouped by label.
    pub fn sample(&self, per_class: usize, rng: &mut RngStream) -> Result<Dataset<S>> {
        if per_class == 0 {
            return Err(Error::arg("per-class count must be positive"));
        }
        let mut examples = Vec::with_capacity(per_class * self.classes());
        for (label, center) in self.centers.iter().enumerate() {
            for _ in 0..per_class {
                let x = center
                    .iter()
                    .map(|&c| c + self.noise_std * S::of(rng.standard_normal()))
                    .collect();
                examples.push(LabeledExample { x, label });
            }
        }
        Dataset::new(examples, self.classes())
    }
}

/// One-shot synthetic dataset: new centers, then `per_class` examples each.
pub fn generate_synthetic_dataset<S: Scalar>(
    classes: usize,
    input_dim: usize,
    per_class: usize,
    spread: f64,
    noise_std: f64,
    rng: &mut RngStream,
) -> Result<Dataset<S>> {
    SyntheticTask::new(classes, input_dim, spread, noise_std, rng)?.sample(per_class, rng)
}

/// Reads `x_1,...,x_d,label` rows. A first row that does not parse as
/// numbers is treated as a header. When `classes` is `None` it is inferred as
/// `max label + 1`.
pub fn load_csv_dataset<S: Scalar>(path: &Path, classes: Option<usize>) -> Result<Dataset<S>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
    let mut examples = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        if record.len() < 2 {
            return Err(Error::Data(format!(
                "{}: row {} needs at least one feature and a label",
                path.display(),
                row + 1
            )));
        }
        let parsed = parse_row::<S>(&record);
        match parsed {
            Some(ex) => examples.push(ex),
            None if row == 0 => continue,
            None => {
                return Err(Error::Data(format!(
                    "{}: row {} is not numeric",
                    path.display(),
                    row + 1
                )))
            }
        }
    }
    if examples.is_empty() {
        return Err(Error::Data(format!("{}: no examples", path.display())));
    }
    let inferred = examples.iter().map(|e| e.label).max().unwrap_or(0) + 1;
    Dataset::new(examples, classes.unwrap_or(inferred))
}

fn parse_row<S: Scalar>(record: &csv::StringRecord) -> Option<LabeledExample<S>> {
    let n = record.len();
    let x = record
        .iter()
        .take(n - 1)
        .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()).map(S::of))
        .collect::<Option<Vec<S>>>()?;
    let label = record.get(n - 1)?.parse::<usize>().ok()?;
    Some(LabeledExample { x, label })
}
