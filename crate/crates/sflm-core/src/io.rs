//! File formats: curve, observation, coordinate, edge-list, and response
//! CSVs plus JSON persistence of fitted models.
//!
//! Every real number is written with 17 significant digits and a `.`
//! decimal separator so files round-trip bit-exactly and never depend on
//! the locale.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::estimator::SflmFit;
use crate::functional_data::{FunctionalDataset, RawObservations, SampleGrid};
use crate::simulation::RepRecord;
use crate::spatial_weights::SpatialWeights;

/// Formats a real with 17 significant digits (exact f64 round trip).
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_field<T: std::str::FromStr>(
    path: &Path,
    line: u64,
    field: &str,
    raw: &str,
) -> Result<T> {
    raw.trim()
        .parse::<T>()
        .map_err(|_| parse_err(path, line, format!("cannot parse {field} from `{raw}`")))
}

struct CsvRows {
    rows: Vec<(u64, Vec<String>)>,
}

fn read_csv(path: &Path, expected_cols: usize) -> Result<CsvRows> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => io_err(
                path,
                std::io::Error::new(std::io::ErrorKind::Other, e.to_string()),
            ),
            _ => parse_err(path, 0, e.to_string()),
        })?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(path, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if expected_cols > 0 && record.len() != expected_cols {
            return Err(parse_err(
                path,
                line,
                format!("expected {expected_cols} columns, found {}", record.len()),
            ));
        }
        rows.push((line, record.iter().map(str::to_string).collect()));
    }
    if rows.is_empty() {
        return Err(parse_err(path, 0, "file is empty"));
    }
    Ok(CsvRows { rows })
}

/// Assigns `values[unit] = value`, requiring units to cover 0..n-1 exactly.
fn place_by_unit<T: Clone>(
    path: &Path,
    entries: Vec<(u64, usize, T)>,
) -> Result<Vec<T>> {
    let n = entries.len();
    let mut out: Vec<Option<T>> = vec![None; n];
    for (line, unit, value) in entries {
        if unit >= n {
            return Err(parse_err(
                path,
                line,
                format!("unit {unit} out of range for {n} data rows"),
            ));
        }
        if out[unit].is_some() {
            return Err(parse_err(path, line, format!("duplicate unit {unit}")));
        }
        out[unit] = Some(value);
    }
    Ok(out.into_iter().map(|v| v.expect("all units placed")).collect())
}

/// Reads a wide curve CSV: header `unit,t_1,...,t_p` with the grid in the
/// header row, one curve per row.
pub fn read_curves_csv(path: &Path) -> Result<FunctionalDataset> {
    let csv = read_csv(path, 0)?;
    let (header_line, header) = &csv.rows[0];
    if header.is_empty() || header[0].trim() != "unit" {
        return Err(parse_err(path, *header_line, "header must start with `unit`"));
    }
    let grid_points: Vec<f64> = header[1..]
        .iter()
        .map(|cell| parse_field::<f64>(path, *header_line, "grid point", cell))
        .collect::<Result<_>>()?;
    let grid = SampleGrid::new(grid_points)
        .map_err(|e| parse_err(path, *header_line, e.to_string()))?;
    let p = grid.len();

    let mut entries = Vec::new();
    for (line, row) in &csv.rows[1..] {
        if row.len() != p + 1 {
            return Err(parse_err(
                path,
                *line,
                format!("expected {} columns, found {}", p + 1, row.len()),
            ));
        }
        let unit: usize = parse_field(path, *line, "unit", &row[0])?;
        let values: Vec<f64> = row[1..]
            .iter()
            .map(|cell| parse_field::<f64>(path, *line, "curve value", cell))
            .collect::<Result<_>>()?;
        entries.push((*line, unit, values));
    }
    if entries.is_empty() {
        return Err(parse_err(path, 0, "no curve rows"));
    }
    let rows = place_by_unit(path, entries)?;
    FunctionalDataset::from_rows(grid, &rows).map_err(|e| parse_err(path, 0, e.to_string()))
}

/// Writes the wide curve CSV.
pub fn write_curves_csv(path: &Path, ds: &FunctionalDataset) -> Result<()> {
    let mut out = String::from("unit");
    for &t in ds.grid().points() {
        out.push(',');
        out.push_str(&fmt_real(t));
    }
    out.push('\n');
    for i in 0..ds.n_units() {
        out.push_str(&i.to_string());
        for j in 0..ds.grid().len() {
            out.push(',');
            out.push_str(&fmt_real(ds.values()[(i, j)]));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Reads a long observation CSV with columns `unit,time,value`.
pub fn read_raw_observations_csv(path: &Path) -> Result<RawObservations> {
    let csv = read_csv(path, 3)?;
    let (header_line, header) = &csv.rows[0];
    if header[0].trim() != "unit" || header[1].trim() != "time" || header[2].trim() != "value" {
        return Err(parse_err(path, *header_line, "header must be `unit,time,value`"));
    }
    let mut max_unit = 0usize;
    let mut parsed = Vec::new();
    for (line, row) in &csv.rows[1..] {
        let unit: usize = parse_field(path, *line, "unit", &row[0])?;
        let time: f64 = parse_field(path, *line, "time", &row[1])?;
        let value: f64 = parse_field(path, *line, "value", &row[2])?;
        max_unit = max_unit.max(unit);
        parsed.push((*line, unit, time, value));
    }
    if parsed.is_empty() {
        return Err(parse_err(path, 0, "no observation rows"));
    }
    let mut units: Vec<Vec<(f64, f64)>> = vec![Vec::new(); max_unit + 1];
    for (_, unit, time, value) in parsed {
        units[unit].push((time, value));
    }
    RawObservations::new(units).map_err(|e| parse_err(path, 0, e.to_string()))
}

/// Reads a response CSV with columns `unit,y`, ordered by unit index.
pub fn read_response_csv(path: &Path) -> Result<Vec<f64>> {
    let csv = read_csv(path, 2)?;
    let (header_line, header) = &csv.rows[0];
    if header[0].trim() != "unit" || header[1].trim() != "y" {
        return Err(parse_err(path, *header_line, "header must be `unit,y`"));
    }
    let mut entries = Vec::new();
    for (line, row) in &csv.rows[1..] {
        let unit: usize = parse_field(path, *line, "unit", &row[0])?;
        let y: f64 = parse_field(path, *line, "y", &row[1])?;
        entries.push((*line, unit, y));
    }
    if entries.is_empty() {
        return Err(parse_err(path, 0, "no response rows"));
    }
    place_by_unit(path, entries)
}

/// Writes a response CSV.
pub fn write_response_csv(path: &Path, y: &[f64]) -> Result<()> {
    let mut out = String::from("unit,y\n");
    for (i, &v) in y.iter().enumerate() {
        out.push_str(&format!("{i},{}\n", fmt_real(v)));
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Reads a coordinate CSV with columns `unit,x,y`, ordered by unit index.
pub fn read_coords_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let csv = read_csv(path, 3)?;
    let (header_line, header) = &csv.rows[0];
    if header[0].trim() != "unit" || header[1].trim() != "x" || header[2].trim() != "y" {
        return Err(parse_err(path, *header_line, "header must be `unit,x,y`"));
    }
    let mut entries = Vec::new();
    for (line, row) in &csv.rows[1..] {
        let unit: usize = parse_field(path, *line, "unit", &row[0])?;
        let x: f64 = parse_field(path, *line, "x", &row[1])?;
        let y: f64 = parse_field(path, *line, "y", &row[2])?;
        entries.push((*line, unit, (x, y)));
    }
    if entries.is_empty() {
        return Err(parse_err(path, 0, "no coordinate rows"));
    }
    place_by_unit(path, entries)
}

/// Writes a coordinate CSV.
pub fn write_coords_csv(path: &Path, coords: &[(f64, f64)]) -> Result<()> {
    let mut out = String::from("unit,x,y\n");
    for (i, &(x, y)) in coords.iter().enumerate() {
        out.push_str(&format!("{i},{},{}\n", fmt_real(x), fmt_real(y)));
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Reads an edge-list CSV `from,to,weight` into an (unnormalized) weight
/// matrix, rejecting diagonal entries.
pub fn read_edge_list_csv(path: &Path) -> Result<SpatialWeights> {
    let csv = read_csv(path, 3)?;
    let (header_line, header) = &csv.rows[0];
    if header[0].trim() != "from" || header[1].trim() != "to" || header[2].trim() != "weight" {
        return Err(parse_err(path, *header_line, "header must be `from,to,weight`"));
    }
    let mut edges = Vec::new();
    let mut n = 0usize;
    for (line, row) in &csv.rows[1..] {
        let from: usize = parse_field(path, *line, "from", &row[0])?;
        let to: usize = parse_field(path, *line, "to", &row[1])?;
        let weight: f64 = parse_field(path, *line, "weight", &row[2])?;
        if from == to && weight != 0.0 {
            return Err(parse_err(
                path,
                *line,
                format!("diagonal weight for unit {from} must be zero"),
            ));
        }
        if !weight.is_finite() || weight < 0.0 {
            return Err(parse_err(path, *line, "weights must be finite and nonnegative"));
        }
        n = n.max(from + 1).max(to + 1);
        edges.push((from, to, weight));
    }
    if edges.is_empty() {
        return Err(parse_err(path, 0, "no edges"));
    }
    let mut m = DMatrix::zeros(n, n);
    for (from, to, weight) in edges {
        if from != to {
            m[(from, to)] = weight;
        }
    }
    SpatialWeights::from_matrix(m).map_err(|e| parse_err(path, 0, e.to_string()))
}

/// Writes a two-column CSV of reals under the given header.
pub fn write_pairs_csv(path: &Path, header: &str, pairs: &[(f64, f64)]) -> Result<()> {
    let mut out = format!("{header}\n");
    for &(a, b) in pairs {
        out.push_str(&format!("{},{}\n", fmt_real(a), fmt_real(b)));
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Writes the per-replication CSV `rep,rho_hat,mse_sflm,mse_flm`.
pub fn write_rep_records_csv(path: &Path, records: &[RepRecord]) -> Result<()> {
    let mut out = String::from("rep,rho_hat,mse_sflm,mse_flm\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.rep,
            fmt_real(r.rho_hat),
            fmt_real(r.mse_sflm),
            fmt_real(r.mse_flm)
        ));
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

const FIT_FIELDS: [&str; 9] = [
    "rho_hat",
    "alpha_hat",
    "b_hat",
    "sigma2_hat",
    "loglik",
    "m",
    "grid",
    "beta_hat",
    "converged",
];

/// Serializes a fit to pretty JSON. Serialization is canonical: the same
/// fit always produces the same bytes.
pub fn serialize_fit(fit: &SflmFit, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(fit)
        .map_err(|e| Error::Schema(e.to_string()))?;
    fs::write(path, json + "\n").map_err(|e| io_err(path, e))
}

/// Reads a fit back, reporting the first missing or malformed field.
pub fn deserialize_fit(path: &Path) -> Result<SflmFit> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| Error::Schema(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Schema("top-level object".into()))?;
    for field in FIT_FIELDS {
        if !obj.contains_key(field) {
            return Err(Error::Schema(field.into()));
        }
    }
    serde_json::from_value(value).map_err(|e| Error::Schema(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn sample_fit(m: usize) -> SflmFit {
        SflmFit {
            rho_hat: 0.58,
            alpha_hat: 0.0,
            b_hat: (0..m).map(|j| j as f64 + 0.5).collect(),
            sigma2_hat: 0.25,
            loglik: -3.72,
            m,
            grid: vec![0.0, 0.5, 1.0],
            beta_hat: vec![0.1, -0.2, 0.3],
            converged: true,
            rho_se: Some(0.07),
            rho_p_value: Some(0.0003),
            residuals: vec![1.0, 2.0],
        }
    }

    #[test]
    fn fit_round_trip_is_byte_identical() {
        let dir = tempdir().unwrap();
        let p1 = dir.path().join("fit1.json");
        let p2 = dir.path().join("fit2.json");
        let fit = sample_fit(2);
        serialize_fit(&fit, &p1).unwrap();
        let back = deserialize_fit(&p1).unwrap();
        serialize_fit(&back, &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
        assert_eq!(back.rho_hat.to_bits(), fit.rho_hat.to_bits());
        assert_eq!(back.b_hat, fit.b_hat);
        // Residuals are not part of the wire format.
        assert!(back.residuals.is_empty());
    }

    #[test]
    fn missing_field_is_named() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("fit.json");
        let fit = sample_fit(1);
        serialize_fit(&fit, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut v: Value = serde_json::from_str(&text).unwrap();
        v.as_object_mut().unwrap().remove("rho_hat");
        fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
        match deserialize_fit(&path) {
            Err(Error::Schema(field)) => assert_eq!(field, "rho_hat"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn intercept_only_fit_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("fit.json");
        let mut fit = sample_fit(0);
        fit.b_hat.clear();
        serialize_fit(&fit, &path).unwrap();
        let back = deserialize_fit(&path).unwrap();
        assert!(back.b_hat.is_empty());
        assert_eq!(back.m, 0);
    }

    #[test]
    fn curve_csv_round_trip() {
        use crate::functional_data::FunctionalDataset;
        let dir = tempdir().unwrap();
        let path = dir.path().join("curves.csv");
        let grid = SampleGrid::uniform(7).unwrap();
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|i| (0..7).map(|j| (i * 7 + j) as f64 / 3.0 - 2.0).collect())
            .collect();
        let ds = FunctionalDataset::from_rows(grid, &rows).unwrap();
        write_curves_csv(&path, &ds).unwrap();
        let back = read_curves_csv(&path).unwrap();
        assert_eq!(back.grid(), ds.grid());
        assert_eq!(back.values(), ds.values());
    }

    #[test]
    fn response_and_coords_round_trip() {
        let dir = tempdir().unwrap();
        let rp = dir.path().join("response.csv");
        let y = vec![1.5, -2.25, 0.125];
        write_response_csv(&rp, &y).unwrap();
        assert_eq!(read_response_csv(&rp).unwrap(), y);

        let cp = dir.path().join("coords.csv");
        let coords = vec![(0.0, 1.0), (2.5, -3.5)];
        write_coords_csv(&cp, &coords).unwrap();
        assert_eq!(read_coords_csv(&cp).unwrap(), coords);
    }

    #[test]
    fn parse_errors_name_file_and_line() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("response.csv");
        fs::write(&path, "unit,y\n0,1.0\n1,not_a_number\n").unwrap();
        match read_response_csv(&path) {
            Err(Error::Parse { path: p, line, .. }) => {
                assert!(p.ends_with("response.csv"));
                assert_eq!(line, 3);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn edge_list_rejects_diagonal_weights() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("w.csv");
        fs::write(&path, "from,to,weight\n0,1,1.0\n1,1,0.5\n").unwrap();
        assert!(matches!(
            read_edge_list_csv(&path),
            Err(Error::Parse { .. })
        ));
        fs::write(&path, "from,to,weight\n0,1,2.0\n1,0,1.0\n2,0,1.0\n").unwrap();
        let w = read_edge_list_csv(&path).unwrap();
        assert_eq!(w.n(), 3);
        assert_eq!(w.matrix()[(0, 1)], 2.0);
        assert!(!w.is_normalized());
    }

    #[test]
    fn raw_observation_csv_parses_by_unit() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("raw.csv");
        fs::write(
            &path,
            "unit,time,value\n0,0.1,1.0\n1,0.2,2.0\n0,0.9,3.0\n",
        )
        .unwrap();
        let raw = read_raw_observations_csv(&path).unwrap();
        assert_eq!(raw.n_units(), 2);
        assert_eq!(raw.unit(0), &[(0.1, 1.0), (0.9, 3.0)]);
        assert_eq!(raw.unit(1), &[(0.2, 2.0)]);
    }
}
