//! Dataset persistence: a JSON-Lines file with one header line followed by
//! one record per sample. Loading validates shapes and re-scores every item
//! against the exact oracles.

use crate::error::{Error, Result};
use crate::geom::{PointConfiguration, ProblemInstance, ProblemKind};
use crate::search::{exact_score, ScoredSample};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

pub const SCORE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub kind: ProblemKind,
    pub dim: usize,
    pub count: usize,
    pub seed: u64,
    pub version: String,
}

impl DatasetHeader {
    pub fn new(instance: &ProblemInstance, seed: u64) -> Self {
        Self {
            kind: instance.kind,
            dim: instance.dim,
            count: instance.count,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn instance(&self) -> Result<ProblemInstance> {
        ProblemInstance::new(self.kind, self.dim, self.count, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub header: Option<DatasetHeader>,
    pub items: Vec<ScoredSample>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ItemRecord {
    points: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    radii: Option<Vec<f64>>,
    score: f64,
    condition: Vec<f64>,
}

impl ItemRecord {
    fn from_sample(s: &ScoredSample) -> Self {
        let d = s.config.dim;
        Self {
            points: (0..s.config.count)
                .map(|i| s.config.coords[i * d..(i + 1) * d].to_vec())
                .collect(),
            radii: s.config.radii.clone(),
            score: s.score,
            condition: s.condition.clone(),
        }
    }

    fn into_sample(self, dim: usize, line: usize) -> Result<ScoredSample> {
        let count = self.points.len();
        let mut coords = Vec::with_capacity(count * dim);
        for p in &self.points {
            if p.len() != dim {
                return Err(Error::MalformedRecord {
                    line,
                    message: format!("point has {} coordinates, expected {dim}", p.len()),
                });
            }
            coords.extend_from_slice(p);
        }
        let config = match self.radii {
            Some(r) => PointConfiguration::with_radii(dim, count, coords, r),
            None => PointConfiguration::new(dim, count, coords),
        }
        .map_err(|e| Error::MalformedRecord {
            line,
            message: e.to_string(),
        })?;
        Ok(ScoredSample {
            config,
            score: self.score,
            condition: self.condition,
        })
    }
}

/// Serialize the dataset to its canonical JSON-Lines byte representation.
pub fn dataset_to_bytes(dataset: &Dataset) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    if let Some(header) = &dataset.header {
        writeln!(out, "{}", serde_json::to_string(header)?)?;
    }
    for item in &dataset.items {
        writeln!(out, "{}", serde_json::to_string(&ItemRecord::from_sample(item))?)?;
    }
    Ok(out)
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(path, dataset_to_bytes(dataset)?)?;
    Ok(())
}

/// Load and validate a dataset. The first line is the header; every item is
/// re-scored via the exact oracles and rejected as stale when the stored
/// score drifts by more than [`SCORE_TOLERANCE`]. An empty file is a valid
/// empty dataset.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    load_dataset_str(&text)
}

pub fn load_dataset_str(text: &str) -> Result<Dataset> {
    let mut header: Option<DatasetHeader> = None;
    let mut items = Vec::new();
    let mut instance: Option<ProblemInstance> = None;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        if line_no == 1 {
            let h: DatasetHeader =
                serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
                    line: line_no,
                    message: format!("bad header: {e}"),
                })?;
            instance = Some(h.instance()?);
            header = Some(h);
            continue;
        }
        let record: ItemRecord = serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
            line: line_no,
            message: e.to_string(),
        })?;
        let inst = instance.as_ref().ok_or(Error::MalformedRecord {
            line: line_no,
            message: "record before header".into(),
        })?;
        let sample = record.into_sample(inst.dim, line_no)?;
        if sample.config.count != inst.count {
            return Err(Error::MalformedRecord {
                line: line_no,
                message: format!(
                    "sample has {} points, dataset declares {}",
                    sample.config.count, inst.count
                ),
            });
        }
        let actual = exact_score(inst, &sample.config)?;
        if (actual - sample.score).abs() > SCORE_TOLERANCE {
            return Err(Error::StaleScore {
                line: line_no,
                stored: sample.score,
                actual,
            });
        }
        items.push(sample);
    }
    Ok(Dataset { header, items })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::condition_vector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_dataset() -> Dataset {
        let instance = ProblemInstance::new(ProblemKind::Heilbronn, 2, 4, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let items: Vec<ScoredSample> = (0..3)
            .map(|_| {
                let coords: Vec<f64> = (0..8).map(|_| rng.gen::<f64>()).collect();
                let config = PointConfiguration::new(2, 4, coords).unwrap();
                ScoredSample {
                    score: exact_score(&instance, &config).unwrap(),
                    condition: condition_vector(&instance, &config).unwrap(),
                    config,
                }
            })
            .collect();
        Dataset {
            header: Some(DatasetHeader::new(&instance, 5)),
            items,
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let ds = toy_dataset();
        let bytes = dataset_to_bytes(&ds).unwrap();
        let loaded = load_dataset_str(std::str::from_utf8(&bytes).unwrap()).unwrap();
        let rebytes = dataset_to_bytes(&loaded).unwrap();
        assert_eq!(bytes, rebytes);
        assert_eq!(ds, loaded);
    }

    #[test]
    fn stale_score_rejected() {
        let ds = toy_dataset();
        let text = String::from_utf8(dataset_to_bytes(&ds).unwrap()).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        // Tamper with the score on the first item line.
        let mut record: serde_json::Value = serde_json::from_str(&lines[1]).unwrap();
        record["score"] = serde_json::json!(0.42);
        lines[1] = serde_json::to_string(&record).unwrap();
        let tampered = lines.join("\n");
        assert!(matches!(
            load_dataset_str(&tampered),
            Err(Error::StaleScore { line: 2, .. })
        ));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let ds = toy_dataset();
        let text = String::from_utf8(dataset_to_bytes(&ds).unwrap()).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[2] = "{ not json".into();
        let tampered = lines.join("\n");
        assert!(matches!(
            load_dataset_str(&tampered),
            Err(Error::MalformedRecord { line: 3, .. })
        ));
    }

    #[test]
    fn empty_file_is_valid_empty_dataset() {
        let ds = load_dataset_str("").unwrap();
        assert!(ds.header.is_none());
        assert!(ds.items.is_empty());
    }
}
