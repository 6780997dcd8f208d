//! ASCII point-cloud files.
//!
//! Format: a header line `n d N has_mass has_tangent`, then `N` rows of
//! `n` coordinates, optionally a mass, optionally the `n*n` row-major
//! tangent projector entries, space-separated. Floats are written with 17
//! significant digits so the round trip is bit exact.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::varifold::{uniform_masses, PointCloudVarifold, Projector, VarifoldError};

#[derive(Debug, Error)]
pub enum CloudIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("line {line}: expected {expected} fields, found {found}")]
    RowArity {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: {message}")]
    BadValue { line: usize, message: String },
    #[error(transparent)]
    Varifold(#[from] VarifoldError),
    #[error("cloud has no tangents; estimate them (e.g. PCA at the kernel scale)")]
    MissingTangents,
}

/// Tolerance for projector invariants on file input.
pub const LOAD_PROJECTOR_TOL: f64 = 1e-6;

/// A parsed cloud file; masses default to `1/N`, tangents may be absent.
#[derive(Clone, Debug)]
pub struct LoadedCloud {
    pub n: usize,
    pub d: usize,
    pub points: Vec<DVector<f64>>,
    pub masses: Vec<f64>,
    pub tangents: Option<Vec<Projector>>,
}

impl LoadedCloud {
    /// Requires tangents to be present in the file.
    pub fn into_varifold(self) -> Result<PointCloudVarifold, CloudIoError> {
        let tangents = self.tangents.ok_or(CloudIoError::MissingTangents)?;
        Ok(PointCloudVarifold::new(
            self.n,
            self.d,
            self.points,
            self.masses,
            tangents,
        )?)
    }

    /// Falls back to PCA tangent estimation at `radius` when the file
    /// carries none.
    pub fn into_varifold_with_pca(self, radius: f64) -> Result<PointCloudVarifold, CloudIoError> {
        let tangents = match self.tangents {
            Some(t) => t,
            None => crate::varifold::estimate_tangents_pca(
                &self.points,
                &self.masses,
                radius,
                self.d,
            )?,
        };
        Ok(PointCloudVarifold::new(
            self.n,
            self.d,
            self.points,
            self.masses,
            tangents,
        )?)
    }
}

pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Serializes a varifold in canonical form (masses and tangents included).
pub fn cloud_to_string(v: &PointCloudVarifold) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {} {} 1 1", v.n, v.d, v.len());
    for i in 0..v.len() {
        let mut fields: Vec<String> = v.points[i].iter().map(|&x| format_f64(x)).collect();
        fields.push(format_f64(v.masses[i]));
        let m = v.tangents[i].matrix();
        for r in 0..v.n {
            for c in 0..v.n {
                fields.push(format_f64(m[(r, c)]));
            }
        }
        let _ = writeln!(out, "{}", fields.join(" "));
    }
    out
}

pub fn save_cloud(v: &PointCloudVarifold, path: &Path) -> Result<(), CloudIoError> {
    std::fs::write(path, cloud_to_string(v))?;
    Ok(())
}

pub fn cloud_from_str(text: &str) -> Result<LoadedCloud, CloudIoError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| CloudIoError::MalformedHeader("empty file".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 5 {
        return Err(CloudIoError::MalformedHeader(format!(
            "expected 5 header fields, found {}",
            fields.len()
        )));
    }
    let parse_usize = |s: &str, what: &str| -> Result<usize, CloudIoError> {
        s.parse()
            .map_err(|_| CloudIoError::MalformedHeader(format!("bad {what}: {s:?}")))
    };
    let n = parse_usize(fields[0], "ambient dimension")?;
    let d = parse_usize(fields[1], "varifold dimension")?;
    let count = parse_usize(fields[2], "point count")?;
    let has_mass = parse_flag(fields[3], "has_mass")?;
    let has_tangent = parse_flag(fields[4], "has_tangent")?;
    if n == 0 || d == 0 || d >= n {
        return Err(CloudIoError::MalformedHeader(format!(
            "dimensions must satisfy 1 <= d < n, got n={n} d={d}"
        )));
    }
    if count == 0 {
        return Err(CloudIoError::MalformedHeader("point count is zero".into()));
    }

    let expected = n + usize::from(has_mass) + if has_tangent { n * n } else { 0 };
    let mut points = Vec::with_capacity(count);
    let mut masses = Vec::with_capacity(count);
    let mut tangents = if has_tangent {
        Some(Vec::with_capacity(count))
    } else {
        None
    };

    let mut rows = 0;
    for (line_idx, line) in lines {
        let line_no = line_idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let values: Result<Vec<f64>, _> = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>().map_err(|_| CloudIoError::BadValue {
                    line: line_no,
                    message: format!("not a number: {tok:?}"),
                })
            })
            .collect();
        let values = values?;
        if values.len() != expected {
            return Err(CloudIoError::RowArity {
                line: line_no,
                expected,
                found: values.len(),
            });
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(CloudIoError::BadValue {
                line: line_no,
                message: "non-finite value".into(),
            });
        }
        points.push(DVector::from_column_slice(&values[..n]));
        let mut cursor = n;
        if has_mass {
            let m = values[cursor];
            if !(m > 0.0) {
                return Err(CloudIoError::BadValue {
                    line: line_no,
                    message: format!("mass must be positive, got {m}"),
                });
            }
            masses.push(m);
            cursor += 1;
        }
        if let Some(tangents) = tangents.as_mut() {
            let matrix = DMatrix::from_row_slice(n, n, &values[cursor..cursor + n * n]);
            let projector = Projector::try_new(matrix, d, LOAD_PROJECTOR_TOL).map_err(|e| {
                CloudIoError::BadValue {
                    line: line_no,
                    message: e.to_string(),
                }
            })?;
            tangents.push(projector);
        }
        rows += 1;
        if rows > count {
            break;
        }
    }
    if rows != count {
        return Err(CloudIoError::MalformedHeader(format!(
            "header promises {count} rows, found {rows}"
        )));
    }
    if !has_mass {
        masses = uniform_masses(count, 1.0)?;
    }
    Ok(LoadedCloud {
        n,
        d,
        points,
        masses,
        tangents,
    })
}

pub fn load_cloud(path: &Path) -> Result<LoadedCloud, CloudIoError> {
    cloud_from_str(&std::fs::read_to_string(path)?)
}

fn parse_flag(s: &str, what: &str) -> Result<bool, CloudIoError> {
    match s {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(CloudIoError::MalformedHeader(format!(
            "{what} must be 0 or 1, got {s:?}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barriers::{sample_shape, Shape, ShapeSampler};
    use crate::rng::SplitMix64;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = SplitMix64::new(77);
        let mut v = sample_shape(&ShapeSampler::new(Shape::unit_circle(), 17)).unwrap();
        for m in &mut v.masses {
            *m = rng.range(0.1, 2.0);
        }
        let text = cloud_to_string(&v);
        let loaded = cloud_from_str(&text).unwrap().into_varifold().unwrap();
        assert_eq!(loaded.points, v.points);
        assert_eq!(loaded.masses, v.masses);
        for (a, b) in loaded.tangents.iter().zip(&v.tangents) {
            assert_eq!(a.matrix(), b.matrix());
        }
        // Canonical files reproduce textually.
        assert_eq!(cloud_to_string(&loaded), text);
    }

    #[test]
    fn hand_written_two_point_file() {
        let text = "2 1 2 0 0\n0.0 0.0\n1.0 0.0\n";
        let loaded = cloud_from_str(text).unwrap();
        assert_eq!(loaded.points.len(), 2);
        assert_eq!(loaded.masses, vec![0.5, 0.5]);
        assert!(loaded.tangents.is_none());
        assert!(matches!(
            loaded.clone().into_varifold(),
            Err(CloudIoError::MissingTangents)
        ));
        let v = loaded.into_varifold_with_pca(1.5).unwrap();
        assert_eq!(v.tangents[0].rank(), 1);
    }

    #[test]
    fn rejects_bad_projector_trace() {
        // trace(P) = d + 0.5 fails the invariant.
        let text = "2 1 1 0 1\n0.0 0.0 1.0 0.0 0.0 0.5\n";
        match cloud_from_str(text) {
            Err(CloudIoError::BadValue { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_arity_mismatch_and_bad_header() {
        assert!(matches!(
            cloud_from_str("2 1 1 0 0\n1.0\n"),
            Err(CloudIoError::RowArity { .. })
        ));
        assert!(cloud_from_str("").is_err());
        assert!(cloud_from_str("2 1 1 0\n").is_err());
        assert!(cloud_from_str("2 2 1 0 0\n1.0 2.0\n").is_err());
        assert!(cloud_from_str("2 1 2 0 0\n1.0 2.0\n").is_err());
        assert!(cloud_from_str("2 1 1 0 2\n1.0 2.0\n").is_err());
        // Negative mass.
        assert!(cloud_from_str("2 1 1 1 0\n1.0 2.0 -0.5\n").is_err());
    }
}
