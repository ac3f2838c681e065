use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

use super::{default_feature_names, HouseholdFeatures, SECRET_NAME};

/// Feature rows before labelling.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledTable {
    pub household_ids: Vec<String>,
    pub features: Matrix<f64>,
    /// Mean consumption per household, kept out of `features`.
    pub secret: Vec<f64>,
    pub names: Vec<String>,
}

impl UnlabeledTable {
    pub fn from_households(rows: Vec<HouseholdFeatures>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("no households to tabulate".into()));
        }
        let names = default_feature_names();
        let mut household_ids = Vec::with_capacity(rows.len());
        let mut secret = Vec::with_capacity(rows.len());
        let mut data = Vec::with_capacity(rows.len() * names.len());
        for r in rows {
            if r.features.len() != names.len() {
                return Err(Error::Dimension {
                    expected: names.len(),
                    got: r.features.len(),
                });
            }
            household_ids.push(r.household_id);
            secret.push(r.mean_consumption);
            data.extend(r.features.values);
        }
        let features = Matrix::from_vec(household_ids.len(), names.len(), data)?;
        Ok(Self {
            household_ids,
            features,
            secret,
            names,
        })
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }
}

/// Labelled feature table: `n` households, `d` features, the secret column,
/// and binary responsiveness labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub household_ids: Vec<String>,
    pub features: Matrix<f64>,
    pub secret: Vec<f64>,
    pub labels: Vec<u8>,
    pub names: Vec<String>,
}

impl FeatureTable {
    pub fn new(
        household_ids: Vec<String>,
        features: Matrix<f64>,
        secret: Vec<f64>,
        labels: Vec<u8>,
        names: Vec<String>,
    ) -> Result<Self> {
        let n = features.rows();
        if household_ids.len() != n || secret.len() != n || labels.len() != n {
            return Err(Error::Shape(format!(
                "table columns disagree: {} ids, {n} rows, {} secrets, {} labels",
                household_ids.len(),
                secret.len(),
                labels.len()
            )));
        }
        if names.len() != features.cols() {
            return Err(Error::Dimension {
                expected: features.cols(),
                got: names.len(),
            });
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
        }
        Ok(Self {
            household_ids,
            features,
            secret,
            labels,
            names,
        })
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn d(&self) -> usize {
        self.features.cols()
    }

    pub fn label_mean(&self) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        self.labels.iter().map(|&y| y as f64).sum::<f64>() / self.labels.len() as f64
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let ones = self.labels.iter().filter(|&&y| y == 1).count();
        [self.labels.len() - ones, ones]
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            household_ids: idx.iter().map(|&i| self.household_ids[i].clone()).collect(),
            features: self.features.select_rows(idx),
            secret: idx.iter().map(|&i| self.secret[i]).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            names: self.names.clone(),
        }
    }

    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.names != other.names {
            return Err(Error::Schema("feature names differ".into()));
        }
        let mut out = self.clone();
        out.features = self.features.stack(&other.features)?;
        out.household_ids.extend(other.household_ids.iter().cloned());
        out.secret.extend_from_slice(&other.secret);
        out.labels.extend_from_slice(&other.labels);
        Ok(out)
    }

    /// Features with the secret appended as the last column.
    pub fn joint_matrix(&self) -> Matrix<f64> {
        let d = self.d();
        let mut data = Vec::with_capacity(self.n() * (d + 1));
        for (row, s) in self.features.iter_rows().zip(&self.secret) {
            data.extend_from_slice(row);
            data.push(*s);
        }
        Matrix::from_vec(self.n(), d + 1, data).expect("consistent shape")
    }

    /// Inverse of [`joint_matrix`](Self::joint_matrix).
    pub fn from_joint(
        household_ids: Vec<String>,
        joint: &Matrix<f64>,
        labels: Vec<u8>,
        names: Vec<String>,
    ) -> Result<Self> {
        let d = joint.cols().checked_sub(1).ok_or_else(|| Error::Shape("empty joint matrix".into()))?;
        let cols: Vec<usize> = (0..d).collect();
        let features = joint.select_cols(&cols);
        let secret = joint.column(d);
        Self::new(household_ids, features, secret, labels, names)
    }

    /// Hash of a row's feature bits, secret and label.
    pub fn row_fingerprint(&self, i: usize) -> [u8; 32] {
        let mut h = Sha256::new();
        for v in self.features.row(i) {
            h.update(v.to_le_bytes());
        }
        h.update(self.secret[i].to_le_bytes());
        h.update([self.labels[i]]);
        h.finalize().into()
    }

    /// Schema hash over the column names.
    pub fn schema_hash(&self) -> String {
        let mut h = Sha256::new();
        for n in &self.names {
            h.update(n.as_bytes());
            h.update([0]);
        }
        hex::encode(h.finalize())
    }

    /// CSV with header `household_id,<features>,mean_consumption,label`.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["household_id".to_string()];
        header.extend(self.names.iter().cloned());
        header.push(SECRET_NAME.into());
        header.push("label".into());
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec = vec![self.household_ids[i].clone()];
            rec.extend(self.features.row(i).iter().map(|v| v.to_string()));
            rec.push(self.secret[i].to_string());
            rec.push(self.labels[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn read_csv(input: impl Read) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header.len() < 4
            || header[0] != "household_id"
            || header[header.len() - 1] != "label"
            || header[header.len() - 2] != SECRET_NAME
        {
            return Err(Error::Schema(format!(
                "expected household_id,<features>,{SECRET_NAME},label header"
            )));
        }
        let names = header[1..header.len() - 2].to_vec();
        let d = names.len();
        let mut ids = Vec::new();
        let mut data = Vec::new();
        let mut secret = Vec::new();
        let mut labels = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let num = |s: &str| -> Result<f64> {
                s.trim().parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("bad number `{s}`"),
                })
            };
            if rec.len() != d + 3 {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {} fields, got {}", d + 3, rec.len()),
                });
            }
            ids.push(rec[0].to_string());
            for j in 0..d {
                data.push(num(&rec[j + 1])?);
            }
            secret.push(num(&rec[d + 1])?);
            let y: u8 = rec[d + 2].trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("bad label `{}`", &rec[d + 2]),
            })?;
            labels.push(y);
        }
        let features = Matrix::from_vec(ids.len(), d, data)?;
        Self::new(ids, features, secret, labels, names)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}
