//! Versioned, checksummed archives for solution bundles and plain-text
//! CSV for matrices and tables.
//!
//! An archive is a JSON document
//!
//! ```text
//! { "schema_version": 1, "checksum": "<sha256 hex>", "payload": { … } }
//! ```
//!
//! where every floating-point value inside the payload is a decimal string
//! with 17 significant digits, which round-trips `f64` exactly. The
//! checksum covers the compact serialization of the payload. Files are
//! written to a temporary sibling and renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::problem::{ProblemSpec, Provenance, SolutionBundle};

pub const SCHEMA_VERSION: u32 = 1;

/// Decimal representation with 17 significant digits.
pub fn format_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else if x == 0.0 {
        if x.is_sign_negative() { "-0" } else { "0" }.to_string()
    } else {
        format!("{x:.16e}")
    }
}

pub fn parse_f64(s: &str) -> Result<f64> {
    let t = s.trim();
    match t {
        "NaN" | "nan" => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => t.parse::<f64>().map_err(|_| Error::input(format!("not a number: {t:?}"))),
    }
}

/// Matrix as CSV preceded by a `# rows,cols` header line.
pub fn matrix_to_csv(m: &Matrix) -> String {
    let mut out = format!("# {},{}\n", m.nrows(), m.ncols());
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|&x| format_f64(x)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn matrix_from_csv(text: &str) -> Result<Matrix> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::input("empty matrix file"))?;
    let dims = header
        .strip_prefix("# ")
        .and_then(|h| h.split_once(','))
        .ok_or_else(|| Error::input(format!("bad matrix header {header:?}")))?;
    let rows: usize = dims.0.trim().parse().map_err(|_| Error::input("bad row count"))?;
    let cols: usize = dims.1.trim().parse().map_err(|_| Error::input("bad column count"))?;
    let mut data = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != cols {
            return Err(Error::input(format!("row {seen} has {} cells, expected {cols}", cells.len())));
        }
        for c in cells {
            data.push(parse_f64(c)?);
        }
        seen += 1;
    }
    if seen != rows {
        return Err(Error::input(format!("expected {rows} rows, found {seen}")));
    }
    Ok(Matrix::from_row_slice(rows, cols, &data))
}

/// Writes `contents` to a temporary file next to `path`, flushes it and
/// renames it over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().ok_or_else(|| Error::input(format!("not a file path: {}", path.display())))?;
    let tmp: PathBuf = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = (|| -> Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct StoredMatrix {
    name: String,
    rows: usize,
    cols: usize,
    /// Row-major entries.
    data: Vec<String>,
}

impl StoredMatrix {
    fn new(name: String, m: &Matrix) -> Self {
        let data = m.row_iter().flat_map(|r| r.iter().map(|&x| format_f64(x)).collect::<Vec<_>>()).collect();
        Self { name, rows: m.nrows(), cols: m.ncols(), data }
    }

    fn to_matrix(&self) -> Result<Matrix> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::CorruptArchive(format!("matrix {} has the wrong number of entries", self.name)));
        }
        let vals = self.data.iter().map(|s| parse_f64(s)).collect::<Result<Vec<_>>>()?;
        Ok(Matrix::from_row_slice(self.rows, self.cols, &vals))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct StoredSpec {
    classes: usize,
    per_class: usize,
    layers: usize,
    widths: Vec<usize>,
    lambda_h1: String,
    lambda_w: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct BundlePayload {
    spec: StoredSpec,
    provenance: Provenance,
    matrices: Vec<StoredMatrix>,
}

#[derive(Serialize, Deserialize)]
struct Envelope<P> {
    schema_version: u32,
    checksum: String,
    payload: P,
}

fn checksum<P: Serialize>(payload: &P) -> Result<String> {
    let bytes = serde_json::to_vec(payload)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn encode<P: Serialize>(payload: P) -> Result<(Vec<u8>, String)> {
    let sum = checksum(&payload)?;
    let env = Envelope { schema_version: SCHEMA_VERSION, checksum: sum.clone(), payload };
    let mut bytes = serde_json::to_vec_pretty(&env)?;
    bytes.push(b'\n');
    Ok((bytes, sum))
}

fn decode<P: Serialize + for<'de> Deserialize<'de>>(bytes: &[u8]) -> Result<P> {
    let value: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| Error::CorruptArchive(format!("unreadable JSON: {e}")))?;
    let version = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::CorruptArchive("missing schema_version".into()))?;
    if version != SCHEMA_VERSION as u64 {
        return Err(Error::SchemaVersion { found: version as u32, expected: SCHEMA_VERSION });
    }
    let env: Envelope<P> =
        serde_json::from_value(value).map_err(|e| Error::CorruptArchive(format!("malformed archive: {e}")))?;
    if checksum(&env.payload)? != env.checksum {
        return Err(Error::CorruptArchive("checksum mismatch".into()));
    }
    Ok(env.payload)
}

/// Serializes a bundle and its problem into archive bytes; returns the
/// bytes and the checksum.
pub fn encode_bundle(bundle: &SolutionBundle, spec: &ProblemSpec) -> Result<(Vec<u8>, String)> {
    bundle.check_shapes(spec)?;
    let mut matrices = vec![StoredMatrix::new("H1".into(), &bundle.h1)];
    for (i, w) in bundle.weights.iter().enumerate() {
        matrices.push(StoredMatrix::new(format!("W{}", i + 1), w));
    }
    let payload = BundlePayload {
        spec: StoredSpec {
            classes: spec.classes,
            per_class: spec.per_class,
            layers: spec.layers,
            widths: spec.widths.clone(),
            lambda_h1: format_f64(spec.lambda_h1),
            lambda_w: spec.lambda_w.iter().map(|&x| format_f64(x)).collect(),
        },
        provenance: bundle.provenance,
        matrices,
    };
    encode(payload)
}

pub fn decode_bundle(bytes: &[u8]) -> Result<(SolutionBundle, ProblemSpec)> {
    let payload: BundlePayload = decode(bytes)?;
    let s = &payload.spec;
    let spec = ProblemSpec {
        classes: s.classes,
        per_class: s.per_class,
        layers: s.layers,
        widths: s.widths.clone(),
        lambda_h1: parse_f64(&s.lambda_h1)?,
        lambda_w: s.lambda_w.iter().map(|x| parse_f64(x)).collect::<Result<_>>()?,
    };
    let mut mats = payload.matrices.iter();
    let h1 = mats.next().ok_or_else(|| Error::CorruptArchive("no matrices".into()))?.to_matrix()?;
    let weights = mats.map(|m| m.to_matrix()).collect::<Result<Vec<_>>>()?;
    let bundle = SolutionBundle { h1, weights, provenance: payload.provenance };
    spec.validate().map_err(|e| Error::CorruptArchive(format!("stored spec is invalid: {e}")))?;
    bundle.check_shapes(&spec).map_err(|e| Error::CorruptArchive(e.to_string()))?;
    Ok((bundle, spec))
}

/// Stores a bundle atomically at `path`; returns the payload checksum.
pub fn store_bundle(bundle: &SolutionBundle, spec: &ProblemSpec, path: &Path) -> Result<String> {
    let (bytes, sum) = encode_bundle(bundle, spec)?;
    write_atomic(path, &bytes)?;
    Ok(sum)
}

pub fn load_bundle(path: &Path) -> Result<(SolutionBundle, ProblemSpec)> {
    decode_bundle(&fs::read(path)?)
}

/// Any serializable value as a checksummed archive.
pub fn store_json<P: Serialize>(value: &P, path: &Path) -> Result<String> {
    let (bytes, sum) = encode(value)?;
    write_atomic(path, &bytes)?;
    Ok(sum)
}

pub fn load_json<P: Serialize + for<'de> Deserialize<'de>>(path: &Path) -> Result<P> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 1.7976931348623157e308, 5e-324, 0.0, -0.0, 123456789.0] {
            let y = parse_f64(&format_f64(x)).unwrap();
            assert_eq!(x.to_bits(), y.to_bits(), "{x}");
        }
        assert!(parse_f64(&format_f64(f64::NAN)).unwrap().is_nan());
        assert_eq!(parse_f64("inf").unwrap(), f64::INFINITY);
        assert!(parse_f64("abc").is_err());
    }

    #[test]
    fn matrix_csv_round_trip() {
        let m = Matrix::from_fn(3, 4, |i, j| (i as f64 + 0.1) / (j as f64 + 0.7));
        let text = matrix_to_csv(&m);
        assert!(text.starts_with("# 3,4\n"));
        assert_eq!(matrix_from_csv(&text).unwrap(), m);
        assert!(matrix_from_csv("# 2,2\n1,2\n").is_err());
        assert!(matrix_from_csv("2,2\n").is_err());
    }

    #[test]
    fn bundle_bytes_round_trip_and_detect_corruption() {
        let spec = ProblemSpec::uniform(3, 2, 2, 4, 0.01);
        let mut b = SolutionBundle::zeros(&spec, Provenance::Trained);
        b.h1[(1, 2)] = std::f64::consts::PI;
        b.weights[1][(2, 3)] = -1e-17;
        let (bytes, sum) = encode_bundle(&b, &spec).unwrap();
        assert_eq!(sum.len(), 64);
        let (back, spec2) = decode_bundle(&bytes).unwrap();
        assert_eq!(back, b);
        assert_eq!(spec2, spec);

        let text = String::from_utf8(bytes.clone()).unwrap();
        let tampered = text.replacen("3.1415926535897931e0", "3.1415926535897932e0", 1);
        assert_ne!(tampered, text);
        assert!(matches!(decode_bundle(tampered.as_bytes()), Err(Error::CorruptArchive(_))));
        assert!(matches!(decode_bundle(&bytes[..bytes.len() / 2]), Err(Error::CorruptArchive(_))));
        let future = text.replacen("\"schema_version\": 1", "\"schema_version\": 7", 1);
        assert!(matches!(decode_bundle(future.as_bytes()), Err(Error::SchemaVersion { found: 7, expected: 1 })));
    }
}
