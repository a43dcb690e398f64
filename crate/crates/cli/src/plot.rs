//! CSV-to-chart assembly for the `plot` command. Metrics files plot their
//! accuracy columns against the epoch; trajectory files plot kinetic and
//! potential energy against the step; any other numeric CSV plots every
//! column against the first.

use crate::svg::{line_chart, Series};

#[derive(Debug)]
pub struct PlotError(pub String);

impl std::fmt::Display for PlotError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for PlotError {}

pub struct ParsedCsv {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn parse_csv(text: &str) -> Result<ParsedCsv, PlotError> {
    let mut lines = text.lines().filter(|l| !l.trim_start().starts_with('#'));
    let header_line = lines
        .next()
        .ok_or_else(|| PlotError("empty file: no header".into()))?;
    let header: Vec<String> = header_line.split(',').map(|s| s.trim().to_string()).collect();
    if header.iter().any(|h| h.is_empty()) {
        return Err(PlotError("malformed header".into()));
    }
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.len() {
            return Err(PlotError(format!(
                "row {} has {} fields, header has {}",
                idx + 2,
                fields.len(),
                header.len()
            )));
        }
        let values: Result<Vec<f64>, _> = fields.iter().map(|f| f.trim().parse::<f64>()).collect();
        rows.push(values.map_err(|_| {
            PlotError(format!("row {} contains a non-numeric field", idx + 2))
        })?);
    }
    Ok(ParsedCsv { header, rows })
}

fn column(parsed: &ParsedCsv, idx: usize) -> Vec<f64> {
    parsed.rows.iter().map(|r| r[idx]).collect()
}

fn series_for(parsed: &ParsedCsv, x_idx: usize, y_idx: usize) -> Series {
    let xs = column(parsed, x_idx);
    let ys = column(parsed, y_idx);
    Series {
        name: parsed.header[y_idx].clone(),
        points: xs.into_iter().zip(ys).collect(),
    }
}

/// Chooses the series by header shape and renders the chart.
pub fn render_plot(text: &str) -> Result<String, PlotError> {
    let parsed = parse_csv(text)?;
    let acc_cols: Vec<usize> = parsed
        .header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("acc_"))
        .map(|(i, _)| i)
        .collect();
    let find = |name: &str| parsed.header.iter().position(|h| h == name);

    let (title, x_label, series): (&str, String, Vec<Series>) =
        if !acc_cols.is_empty() && parsed.header[0] == "epoch" {
            let series = acc_cols.iter().map(|&c| series_for(&parsed, 0, c)).collect();
            ("accuracy vs epoch", "epoch".into(), series)
        } else if parsed.header[0] == "step"
            && find("kinetic").is_some()
            && find("potential").is_some()
        {
            let series = vec![
                series_for(&parsed, 0, find("kinetic").unwrap()),
                series_for(&parsed, 0, find("potential").unwrap()),
            ];
            ("latent dynamics", "step".into(), series)
        } else if parsed.header[0] == "epoch" && find("kinetic").is_some() {
            let mut series = vec![series_for(&parsed, 0, find("kinetic").unwrap())];
            if let Some(c) = find("entropy") {
                series.push(series_for(&parsed, 0, c));
            }
            ("training energetics", "epoch".into(), series)
        } else if parsed.header.len() >= 2 {
            let series = (1..parsed.header.len())
                .map(|c| series_for(&parsed, 0, c))
                .collect();
            ("series", parsed.header[0].clone(), series)
        } else {
            return Err(PlotError("csv has no plottable columns".into()));
        };
    Ok(line_chart(title, &x_label, &series))
}
