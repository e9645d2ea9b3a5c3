//! Feature-table file: one row per selected slice, split-tagged, with the
//! angle-scaled feature columns. The on-disk float form is the shortest
//! round-trip decimal, so read(write(x)) is bit-exact.

use std::path::Path;

use ringqcnn::data::{write_atomic, Split};
use ringqcnn::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRow {
    pub patient_id: String,
    pub slice_index: usize,
    pub split: Split,
    pub label: u8,
    pub values: Vec<f64>,
}

pub fn features_header(d: usize) -> String {
    let mut header = String::from("patient_id,slice_index,split,label");
    for i in 0..d {
        header.push_str(&format!(",x_{i}"));
    }
    header
}

pub fn write_features(path: &Path, rows: &[FeatureRow]) -> Result<()> {
    let d = rows
        .first()
        .ok_or_else(|| Error::data("no feature rows to write".to_string()))?
        .values
        .len();
    let mut out = features_header(d);
    out.push('\n');
    for row in rows {
        if row.values.len() != d {
            return Err(Error::contract(format!(
                "row for {} slice {} has {} features, expected {d}",
                row.patient_id,
                row.slice_index,
                row.values.len()
            )));
        }
        out.push_str(&format!(
            "{},{},{},{}",
            row.patient_id,
            row.slice_index,
            row.split.as_str(),
            row.label
        ));
        for v in &row.values {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_features(path: &Path) -> Result<Vec<FeatureRow>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::data(format!("reading {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::data(format!("{} is empty", path.display())))?;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.len() < 5 || columns[..4] != ["patient_id", "slice_index", "split", "label"] {
        return Err(Error::data(format!(
            "{}: unexpected header {header:?}",
            path.display()
        )));
    }
    let d = columns.len() - 4;
    for (i, col) in columns[4..].iter().enumerate() {
        if *col != format!("x_{i}") {
            return Err(Error::data(format!(
                "{}: feature column {i} is named {col:?}",
                path.display()
            )));
        }
    }

    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 + d {
            return Err(Error::data(format!(
                "{} row {}: {} fields, expected {}",
                path.display(),
                lineno + 2,
                fields.len(),
                4 + d
            )));
        }
        let context = |what: &str| format!("{} row {}: bad {what}", path.display(), lineno + 2);
        let slice_index: usize = fields[1].parse().map_err(|_| Error::data(context("slice index")))?;
        let split = Split::parse(fields[2]).map_err(|e| e.prefixed(&context("split")))?;
        let label: u8 = fields[3].parse().map_err(|_| Error::data(context("label")))?;
        if label > 1 {
            return Err(Error::data(context("label")));
        }
        let values = fields[4..]
            .iter()
            .map(|f| f.parse().map_err(|_| Error::data(context("feature value"))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(FeatureRow {
            patient_id: fields[0].to_string(),
            slice_index,
            split,
            label,
            values,
        });
    }
    if rows.is_empty() {
        return Err(Error::data(format!("{} holds no rows", path.display())));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_rows() -> Vec<FeatureRow> {
        vec![
            FeatureRow {
                patient_id: "p000".to_string(),
                slice_index: 7,
                split: Split::Train,
                label: 0,
                values: vec![0.25, -1.5, std::f64::consts::PI],
            },
            FeatureRow {
                patient_id: "p001".to_string(),
                slice_index: 0,
                split: Split::Test,
                label: 1,
                values: vec![1.0 / 3.0, 0.0, -0.125],
            },
        ]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.csv");
        let rows = sample_rows();
        write_features(&path, &rows).unwrap();
        let restored = read_features(&path).unwrap();
        assert_eq!(restored, rows);
        // and a rewrite of the parsed rows is byte-identical
        let bytes = std::fs::read(&path).unwrap();
        write_features(&path, &restored).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes);
    }

    #[test]
    fn header_names_every_feature_column() {
        assert_eq!(
            features_header(2),
            "patient_id,slice_index,split,label,x_0,x_1"
        );
    }

    #[test]
    fn rejects_malformed_tables() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.csv");

        std::fs::write(&path, "wrong,header\n").unwrap();
        assert!(read_features(&path).is_err());

        std::fs::write(&path, "patient_id,slice_index,split,label,x_0\n").unwrap();
        assert!(read_features(&path).is_err(), "no rows");

        std::fs::write(
            &path,
            "patient_id,slice_index,split,label,x_0\np000,0,train,2,0.5\n",
        )
        .unwrap();
        assert!(read_features(&path).is_err(), "label out of range");

        std::fs::write(
            &path,
            "patient_id,slice_index,split,label,x_0\np000,0,nowhere,1,0.5\n",
        )
        .unwrap();
        assert!(read_features(&path).is_err(), "unknown split");

        std::fs::write(
            &path,
            "patient_id,slice_index,split,label,x_0\np000,0,train,1,0.5,0.7\n",
        )
        .unwrap();
        assert!(read_features(&path).is_err(), "width mismatch");
    }
}
