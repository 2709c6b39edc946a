//! Delimited-text persistence for feedback logs.
//!
//! Columns: `episode,location,<one per complete feature>,action,prior_level,level,signal`.
//! Feature cells hold the value name, or nothing when the feature does not apply.

use std::io::{Read, Write};

use super::{FeatureCatalog, FeedbackDataset, FeedbackError, FeedbackRecord};

fn header(catalog: &FeatureCatalog) -> Vec<String> {
    let mut h = vec!["episode".to_string(), "location".to_string()];
    h.extend(catalog.complete().iter().map(|f| f.name.clone()));
    h.extend(["action", "prior_level", "level", "signal"].map(String::from));
    h
}

fn io_err(e: impl std::fmt::Display) -> FeedbackError {
    FeedbackError::Io(e.to_string())
}

pub fn write_log<W: Write>(out: W, catalog: &FeatureCatalog, data: &FeedbackDataset) -> Result<(), FeedbackError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(header(catalog)).map_err(io_err)?;
    for r in data.records() {
        let mut row = vec![r.episode.to_string(), r.location.clone()];
        for (f, v) in catalog.complete().iter().zip(&r.features) {
            row.push(v.map(|v| f.values[v as usize].clone()).unwrap_or_default());
        }
        row.extend([r.action.clone(), r.prior_level.to_string(), r.level.to_string(), r.signal.to_string()]);
        w.write_record(&row).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_log<R: Read>(input: R, catalog: &FeatureCatalog) -> Result<FeedbackDataset, FeedbackError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let expected = header(catalog);
    let got: Vec<String> = rdr.headers().map_err(io_err)?.iter().map(String::from).collect();
    if got != expected {
        return Err(FeedbackError::Parse {
            line: 1,
            message: format!("header {got:?} does not match catalog {expected:?}"),
        });
    }
    let nf = catalog.len();
    let mut data = FeedbackDataset::new();
    for row in rdr.records() {
        let row = row.map_err(io_err)?;
        let line = row.position().map_or(0, |p| p.line());
        let parse = |message: String| FeedbackError::Parse { line, message };
        let episode = row[0].parse().map_err(|e| parse(format!("episode: {e}")))?;
        let mut features = Vec::with_capacity(nf);
        for (i, f) in catalog.complete().iter().enumerate() {
            let cell = &row[2 + i];
            features.push(if cell.is_empty() {
                None
            } else {
                Some(f.value_id(cell).ok_or_else(|| parse(format!("unknown {} value {cell:?}", f.name)))?)
            });
        }
        let rec = FeedbackRecord {
            episode,
            location: row[1].to_string(),
            features,
            action: row[2 + nf].to_string(),
            prior_level: row[3 + nf].parse().map_err(|e| parse(format!("{e}")))?,
            level: row[4 + nf].parse().map_err(|e| parse(format!("{e}")))?,
            signal: row[5 + nf].parse().map_err(|e| parse(format!("{e}")))?,
        };
        data.record(catalog, rec).map_err(|e| parse(e.to_string()))?;
    }
    Ok(data)
}
