//! CSV and JSON readers and writers for calibration scans, time series,
//! observations and result tables.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::calibration::CalibrationScan;
use crate::error::{Error, Result};
use crate::scene::{ModeId, ObservationSeries, PhotonBudget, Scene, Source, DEFAULT_BIN_DURATION};
use crate::synth::SingleSourceTimeSeries;

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line: line as usize,
        message: message.into(),
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<(u64, Vec<String>)>,
}

fn read_table(path: &Path) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(File::open(path)?));
    let header = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(Table { header, rows })
}

fn number(path: &Path, line: u64, col: &str, raw: &str) -> Result<f64> {
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| parse_err(path, line, format!("column {col}: '{raw}' is not a finite number")))
}

fn expect_column(path: &Path, header: &[String], k: usize, name: &str) -> Result<()> {
    match header.get(k) {
        Some(h) if h == name => Ok(()),
        other => Err(parse_err(
            path,
            1,
            format!("column {} must be '{name}', found '{}'", k + 1, other.map(String::as_str).unwrap_or("")),
        )),
    }
}

fn mode_columns(path: &Path, header: &[String], from: usize, to: usize) -> Result<Vec<ModeId>> {
    header[from..to]
        .iter()
        .map(|h| ModeId::parse_label(h).ok_or_else(|| parse_err(path, 1, format!("unknown mode column '{h}'"))))
        .collect()
}

fn fmt(v: f64) -> String {
    format!("{v:e}")
}

/// Reads a calibration CSV into one scan per source present.
pub fn read_calibration_csv(path: impl AsRef<Path>) -> Result<Vec<CalibrationScan>> {
    let path = path.as_ref();
    let t = read_table(path)?;
    expect_column(path, &t.header, 0, "source_id")?;
    expect_column(path, &t.header, 1, "position_w0")?;
    let modes = mode_columns(path, &t.header, 2, t.header.len())?;
    if modes.is_empty() {
        return Err(parse_err(path, 1, "no mode columns"));
    }
    let mut groups: Vec<(Source, Vec<f64>, Vec<Vec<f64>>, u64)> = Vec::new();
    for (line, row) in &t.rows {
        if row.len() != t.header.len() {
            return Err(parse_err(path, *line, format!("expected {} fields, found {}", t.header.len(), row.len())));
        }
        let id: u8 = row[0]
            .parse()
            .map_err(|_| parse_err(path, *line, format!("source_id '{}' is not 1 or 2", row[0])))?;
        let source = Source::from_id(id).map_err(|e| parse_err(path, *line, e.to_string()))?;
        let x = number(path, *line, "position_w0", &row[1])?;
        let values = row[2..]
            .iter()
            .zip(&t.header[2..])
            .map(|(v, h)| number(path, *line, h, v))
            .collect::<Result<Vec<_>>>()?;
        match groups.iter_mut().find(|g| g.0 == source) {
            Some(g) => {
                g.1.push(x);
                g.2.push(values);
            }
            None => groups.push((source, vec![x], vec![values], *line)),
        }
    }
    groups
        .into_iter()
        .map(|(source, positions, values, line)| {
            let m = modes.len();
            let fractions = DMatrix::from_fn(positions.len(), m, |r, c| values[r][c]);
            CalibrationScan::new(source, modes.clone(), positions, fractions)
                .map_err(|e| parse_err(path, line, format!("source {}: {e}", source.id())))
        })
        .collect()
}

pub fn write_calibration_csv(path: impl AsRef<Path>, scans: &[CalibrationScan]) -> Result<()> {
    let modes = scans.first().map(|s| s.modes().to_vec()).unwrap_or_default();
    let mut w = BufWriter::new(File::create(path)?);
    let labels: Vec<String> = modes.iter().map(ModeId::label).collect();
    writeln!(w, "source_id,position_w0,{}", labels.join(","))?;
    for scan in scans {
        if scan.modes() != modes.as_slice() {
            return Err(Error::Dimension {
                expected: modes.len(),
                found: scan.modes().len(),
            });
        }
        for (r, x) in scan.positions().iter().enumerate() {
            let vals: Vec<String> = scan.fractions().row(r).iter().map(|v| fmt(*v)).collect();
            writeln!(w, "{},{},{}", scan.source().id(), fmt(*x), vals.join(","))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Time-series table: grouped rows keyed by a leading set of columns.
fn read_binned(
    path: &Path,
    keys: &[&str],
) -> Result<(Vec<ModeId>, Vec<(Vec<f64>, Vec<DVector<f64>>, f64)>)> {
    let t = read_table(path)?;
    for (k, name) in keys.iter().enumerate() {
        expect_column(path, &t.header, k, name)?;
    }
    let nk = keys.len();
    expect_column(path, &t.header, nk, "bin_index")?;
    let last = t.header.len().saturating_sub(1);
    expect_column(path, &t.header, last, "total_power")?;
    let modes = mode_columns(path, &t.header, nk + 1, last)?;
    let mut groups: Vec<(Vec<f64>, Vec<DVector<f64>>, f64)> = Vec::new();
    for (line, row) in &t.rows {
        if row.len() != t.header.len() {
            return Err(parse_err(path, *line, format!("expected {} fields, found {}", t.header.len(), row.len())));
        }
        let key = (0..nk)
            .map(|k| number(path, *line, keys[k], &row[k]))
            .collect::<Result<Vec<_>>>()?;
        let bin: usize = row[nk]
            .parse()
            .map_err(|_| parse_err(path, *line, format!("bin_index '{}' is not an integer", row[nk])))?;
        let values = DVector::from_iterator(
            modes.len(),
            (nk + 1..last)
                .map(|c| number(path, *line, &t.header[c], &row[c]))
                .collect::<Result<Vec<_>>>()?,
        );
        let total = number(path, *line, "total_power", &row[last])?;
        let fresh = groups.last().map(|g| g.0 != key).unwrap_or(true);
        if fresh {
            groups.push((key, Vec::new(), total));
        }
        let g = groups.last_mut().expect("group");
        if bin != g.1.len() {
            return Err(parse_err(path, *line, format!("bin_index {bin} out of sequence, expected {}", g.1.len())));
        }
        g.1.push(values);
    }
    Ok((modes, groups))
}

/// Reads a time-series CSV into one series per position, in file order.
pub fn read_time_series_csv(path: impl AsRef<Path>) -> Result<(Vec<ModeId>, Vec<SingleSourceTimeSeries>)> {
    let path = path.as_ref();
    let (modes, groups) = read_binned(path, &["position_w0"])?;
    let series = groups
        .into_iter()
        .map(|(k, bins, _)| SingleSourceTimeSeries::new(k[0], bins))
        .collect::<Result<Vec<_>>>()?;
    Ok((modes, series))
}

pub fn write_time_series_csv(
    path: impl AsRef<Path>,
    modes: &[ModeId],
    series: &[SingleSourceTimeSeries],
    total_power: f64,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let labels: Vec<String> = modes.iter().map(ModeId::label).collect();
    writeln!(w, "position_w0,bin_index,{},total_power", labels.join(","))?;
    for ts in series {
        for (k, b) in ts.series().iter().enumerate() {
            let vals: Vec<String> = b.iter().map(|v| fmt(*v)).collect();
            writeln!(w, "{},{k},{},{}", fmt(ts.position()), vals.join(","), fmt(total_power))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads simulated observations, one series per reference scene.
pub fn read_observations_csv(path: impl AsRef<Path>) -> Result<(Vec<ModeId>, Vec<(Scene, ObservationSeries)>)> {
    let path = path.as_ref();
    let (modes, groups) = read_binned(path, &["d_ref", "c_ref", "p_ref"])?;
    let out = groups
        .into_iter()
        .map(|(k, bins, total)| {
            let scene = Scene::new(k[0], k[1], k[2]).map_err(|e| parse_err(path, 0, e.to_string()))?;
            let budget = PhotonBudget::new(total).unwrap_or_default();
            Ok((scene, ObservationSeries::new(bins, DEFAULT_BIN_DURATION, budget)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((modes, out))
}

pub fn write_observations_csv(
    path: impl AsRef<Path>,
    modes: &[ModeId],
    data: &[(Scene, ObservationSeries)],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let labels: Vec<String> = modes.iter().map(ModeId::label).collect();
    writeln!(w, "d_ref,c_ref,p_ref,bin_index,{},total_power", labels.join(","))?;
    for (scene, series) in data {
        let total = series.photon_budget().get();
        for (k, b) in series.bins().iter().enumerate() {
            let vals: Vec<String> = b.iter().map(|v| fmt(*v)).collect();
            writeln!(
                w,
                "{},{},{},{k},{},{}",
                fmt(scene.d()),
                fmt(scene.c()),
                fmt(scene.p()),
                vals.join(","),
                fmt(total)
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes serializable records as a CSV with a header row.
pub fn write_rows<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(path, line, e.to_string())
        })?);
    }
    Ok(out)
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e.line() as u64, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::even_positions;
    use crate::optics::IdealResponse;
    use crate::scene::DemuxLayout;

    #[test]
    fn calibration_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cal.csv");
        let r = IdealResponse::new(DemuxLayout::dual_default());
        let scan = CalibrationScan::sample(&r, Source::One, even_positions(61, 0.35)).unwrap();
        write_calibration_csv(&p, std::slice::from_ref(&scan)).unwrap();
        let back = read_calibration_csv(&p).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0], scan);
    }

    #[test]
    fn parse_errors_carry_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "source_id,position_w0,m1_hg00\n1,0.0,0.5\n1,abc,0.4\n").unwrap();
        let err = read_calibration_csv(&p).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
        std::fs::write(&p, "source,position_w0,m1_hg00\n").unwrap();
        assert!(matches!(read_calibration_csv(&p), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn observations_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("obs.csv");
        let modes = crate::scene::default_dual_modes();
        let bins = vec![DVector::from_vec(vec![0.4, 0.01, 1e-4, 1e-6, -1e-7]); 3];
        let s = ObservationSeries::new(bins, DEFAULT_BIN_DURATION, PhotonBudget::default()).unwrap();
        let data = vec![(Scene::new(0.1, 0.0, 0.3).unwrap(), s.clone()), (Scene::new(0.2, 0.0, 0.3).unwrap(), s)];
        write_observations_csv(&p, &modes, &data).unwrap();
        let (m, back) = read_observations_csv(&p).unwrap();
        assert_eq!(m, modes);
        assert_eq!(back, data);
    }
}
