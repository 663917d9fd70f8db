//! CSV ingestion and emission. Loading one-hot expands the named categorical
//! columns, min-max scales numeric columns (optionally deferred for the
//! domain-shift protocol, which scales with train-only statistics), and maps
//! labels to dense class indices by sorted distinct value.

use std::collections::BTreeSet;
use std::path::Path;

use treeflow::Dataset;

use crate::errors::{data, runtime, CliResult};

/// Missing values are rejected, not imputed.
pub fn load_csv(
    path: &Path,
    label_column: &str,
    categorical_columns: &[String],
    scale: bool,
) -> CliResult<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| data(format!("cannot open {}: {e}", path.display())))?;
    let headers: Vec<String> =
        reader.headers().map_err(data)?.iter().map(str::to_string).collect();

    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| data(format!("label column '{label_column}' not in header")))?;
    for cat in categorical_columns {
        if cat == label_column {
            return Err(data(format!("label column '{cat}' cannot also be categorical")));
        }
        if !headers.iter().any(|h| h == cat) {
            return Err(data(format!("categorical column '{cat}' not in header")));
        }
    }

    let mut rows: Vec<Vec<String>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(data)?;
        if record.len() != headers.len() {
            return Err(data(format!(
                "row {} has {} fields, header has {}",
                rows.len() + 2,
                record.len(),
                headers.len()
            )));
        }
        rows.push(record.iter().map(|s| s.trim().to_string()).collect());
    }
    if rows.is_empty() {
        return Err(data(format!("{} has no data rows", path.display())));
    }

    // Column blocks in original order: a numeric column stays one feature, a
    // categorical column becomes one indicator per distinct level.
    let mut names: Vec<String> = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (c, name) in headers.iter().enumerate() {
        if c == label_idx {
            continue;
        }
        if categorical_columns.contains(name) {
            let mut levels: BTreeSet<&str> = BTreeSet::new();
            for row in &rows {
                if row[c].is_empty() {
                    return Err(data(format!("missing value in column '{name}'")));
                }
                levels.insert(row[c].as_str());
            }
            for level in levels {
                names.push(format!("{name}={level}"));
                columns.push(
                    rows.iter().map(|row| if row[c] == level { 1.0 } else { 0.0 }).collect(),
                );
            }
        } else {
            let mut column = Vec::with_capacity(rows.len());
            for (r, row) in rows.iter().enumerate() {
                let cell = &row[c];
                if cell.is_empty() {
                    return Err(data(format!("missing value at row {}, column '{name}'", r + 2)));
                }
                let v: f64 = cell.parse().map_err(|_| {
                    data(format!("row {}, column '{name}': cannot parse '{cell}'", r + 2))
                })?;
                if !v.is_finite() {
                    return Err(data(format!("row {}, column '{name}': non-finite value", r + 2)));
                }
                column.push(v);
            }
            names.push(name.clone());
            columns.push(column);
        }
    }
    if columns.is_empty() {
        return Err(data("no feature columns besides the label"));
    }

    let class_names: Vec<String> = rows
        .iter()
        .map(|row| row[label_idx].clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if class_names.len() < 2 {
        return Err(data(format!(
            "label column '{label_column}' has a single class '{}'",
            class_names[0]
        )));
    }
    let labels: Vec<usize> = rows
        .iter()
        .map(|row| class_names.iter().position(|c| *c == row[label_idx]).expect("label seen"))
        .collect();

    let d = columns.len();
    let mut features = vec![0.0; rows.len() * d];
    for (f, column) in columns.iter().enumerate() {
        for (i, &v) in column.iter().enumerate() {
            features[i * d + f] = v;
        }
    }
    let dataset = Dataset::new(
        features,
        d,
        labels,
        class_names.len(),
        names,
        path.display().to_string(),
    )
    .map_err(data)?;
    if scale {
        dataset.minmax_scaled().map_err(data)
    } else {
        Ok(dataset)
    }
}

/// Writer matching the load format: feature columns by name, then a `label`
/// column of class indices. Floats use the shortest exact decimal form, so a
/// write/load round trip preserves values bit for bit.
pub fn write_csv(dataset: &Dataset, path: &Path) -> CliResult<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| runtime(format!("cannot create {}: {e}", path.display())))?;
    let mut header: Vec<String> = dataset.feature_names().to_vec();
    header.push("label".to_string());
    writer.write_record(&header).map_err(runtime)?;
    for i in 0..dataset.num_rows() {
        let mut record: Vec<String> = dataset.row(i).iter().map(|v| format!("{v}")).collect();
        record.push(dataset.label(i).to_string());
        writer.write_record(&record).map_err(runtime)?;
    }
    writer.flush().map_err(runtime)?;
    Ok(())
}
