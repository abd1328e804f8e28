//! Prediction file parsing.
//!
//! Binary files have a `p_hat` column, an optional `label` column and an
//! optional `c_star` column. Multi-class files have `p_0..p_{K-1}` and an
//! integer `label`, and must be reduced to a binary task.

use std::path::Path;

use calibkit::{reduce_multiclass, BinaryDataset, CalibError, Reduction};

#[derive(Debug, Clone)]
pub struct PredictionFile {
    pub dataset: Option<BinaryDataset>,
    /// Predictions, present even when the file has no labels.
    pub predictions: Vec<f64>,
    pub c_star: Option<Vec<f64>>,
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

fn parse_prob(field: &str, what: &str, line: usize) -> Result<f64, CalibError> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| CalibError::format(format!("{what} `{field}` is not a number")).at_line(line))?;
    if !(0.0..=1.0).contains(&v) {
        return Err(CalibError::format(format!("{what} {v} is outside [0,1]")).at_line(line));
    }
    Ok(v)
}

fn parse_label(field: &str, line: usize) -> Result<u8, CalibError> {
    match field.trim().parse::<f64>() {
        Ok(0.0) => Ok(0),
        Ok(1.0) => Ok(1),
        _ => Err(CalibError::format(format!("label `{field}` is not 0 or 1")).at_line(line)),
    }
}

/// Reads a prediction file. `require_labels` rejects files without a label column.
pub fn read_predictions(path: &Path, reduce: Option<Reduction>, require_labels: bool) -> Result<PredictionFile, CalibError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CalibError::format(format!("cannot open {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CalibError::format(format!("cannot read header: {e}")).at_line(1))?
        .clone();
    let label_col = column(&headers, "label");
    if require_labels && label_col.is_none() {
        return Err(CalibError::format("missing `label` column").at_line(1));
    }

    if let Some(p_col) = column(&headers, "p_hat") {
        if reduce.is_some() {
            return Err(CalibError::domain("--reduce applies only to multi-class files"));
        }
        let c_col = column(&headers, "c_star");
        let (mut preds, mut labels, mut c_star) = (Vec::new(), Vec::new(), Vec::new());
        for (i, record) in reader.records().enumerate() {
            let line = i + 2;
            let record = record.map_err(|e| CalibError::format(e.to_string()).at_line(line))?;
            let field = |c: usize| record.get(c).ok_or_else(|| CalibError::format("row is too short").at_line(line));
            preds.push(parse_prob(field(p_col)?, "prediction", line)?);
            if let Some(c) = label_col {
                labels.push(parse_label(field(c)?, line)?);
            }
            if let Some(c) = c_col {
                c_star.push(parse_prob(field(c)?, "c_star", line)?);
            }
        }
        if preds.is_empty() {
            return Err(CalibError::format("file has no data rows"));
        }
        let dataset = label_col.map(|_| BinaryDataset::new(preds.clone(), labels)).transpose()?;
        return Ok(PredictionFile { dataset, predictions: preds, c_star: c_col.map(|_| c_star) });
    }

    let class_cols: Vec<usize> = (0..).map_while(|k| column(&headers, &format!("p_{k}"))).collect();
    if class_cols.len() < 2 {
        return Err(CalibError::format("header needs `p_hat` or `p_0,...,p_{K-1}` columns").at_line(1));
    }
    let Some(mode) = reduce else {
        return Err(CalibError::domain(format!(
            "{}-class file needs an explicit --reduce confidence|ovr:<k>",
            class_cols.len()
        )));
    };
    let Some(label_col) = label_col else {
        return Err(CalibError::format("missing `label` column").at_line(1));
    };
    let (mut rows, mut labels) = (Vec::new(), Vec::new());
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| CalibError::format(e.to_string()).at_line(line))?;
        let field = |c: usize| record.get(c).ok_or_else(|| CalibError::format("row is too short").at_line(line));
        let row = class_cols
            .iter()
            .map(|&c| parse_prob(field(c)?, "class probability", line))
            .collect::<Result<Vec<f64>, _>>()?;
        let label = field(label_col)?;
        let label: usize = label
            .parse()
            .map_err(|_| CalibError::format(format!("class label `{label}` is not an index")).at_line(line))?;
        if label >= row.len() {
            return Err(CalibError::format(format!("class label {label} out of range")).at_line(line));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(CalibError::format(format!("class probabilities sum to {sum}")).at_line(line));
        }
        rows.push(row);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(CalibError::format("file has no data rows"));
    }
    let dataset = reduce_multiclass(&rows, &labels, mode)?;
    Ok(PredictionFile { predictions: dataset.predictions().to_vec(), dataset: Some(dataset), c_star: None })
}
