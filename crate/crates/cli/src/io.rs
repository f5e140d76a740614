//! CSV ingestion and export.
//!
//! Every reader reports malformed input as [`FsarError::Parse`] carrying the
//! file name and the 1-based line number of the offending record.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use fsar_core::basis::{FunctionalSample, Grid};
use fsar_core::inference::ConfidenceBand;
use fsar_core::{FsarError, Result};
use nalgebra::{DMatrix, DVector};

/// One CSV record and the line it started on.
#[derive(Debug, Clone)]
pub struct Record {
    pub line: usize,
    pub fields: Vec<String>,
}

fn io_error(path: &Path, source: std::io::Error) -> FsarError {
    FsarError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> FsarError {
    FsarError::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// All non-empty records, fields trimmed. No header handling.
pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let bytes = std::fs::read(path).map_err(|e| io_error(path, e))?;
    // The reader's line counter ignores blank lines and its positions point
    // before any skipped ones, so count newlines up to the first real byte.
    let line_at = |byte: u64| {
        let mut i = byte as usize;
        while i < bytes.len() {
            match bytes[i] {
                b'\r' | b'\n' => i += 1,
                b'#' => {
                    i += bytes[i..]
                        .iter()
                        .position(|&b| b == b'\n')
                        .map_or(bytes.len() - i, |p| p + 1)
                }
                _ => break,
            }
        }
        bytes[..i].iter().filter(|&&b| b == b'\n').count() + 1
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(bytes.as_slice());
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| line_at(p.byte()));
            match e.into_kind() {
                csv::ErrorKind::Io(io) => io_error(path, io),
                csv::ErrorKind::Utf8 { .. } => parse_error(path, line, "invalid UTF-8"),
                other => parse_error(path, line, format!("{other:?}")),
            }
        })?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let line = rec.position().map_or(0, |p| line_at(p.byte()));
        out.push(Record {
            line,
            fields: rec.iter().map(str::to_owned).collect(),
        });
    }
    if out.is_empty() {
        return Err(parse_error(path, 1, "file holds no records"));
    }
    Ok(out)
}

pub fn parse_f64(path: &Path, line: usize, field: &str, what: &str) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| parse_error(path, line, format!("{what}: '{field}' is not a number")))?;
    if !v.is_finite() {
        return Err(parse_error(path, line, format!("{what}: '{field}' is not finite")));
    }
    Ok(v)
}

fn is_numeric(fields: &[String]) -> bool {
    fields.iter().all(|f| f.parse::<f64>().is_ok())
}

/// Drop a leading header row, recognised by a non-numeric entry among
/// the columns from `from` on.
fn strip_header(records: &mut Vec<Record>, from: usize) {
    if records
        .first()
        .is_some_and(|r| !is_numeric(&r.fields[from.min(r.fields.len())..]))
    {
        records.remove(0);
    }
}

fn expect_fields(path: &Path, r: &Record, n: usize) -> Result<()> {
    if r.fields.len() != n {
        return Err(parse_error(
            path,
            r.line,
            format!("expected {n} fields, found {}", r.fields.len()),
        ));
    }
    Ok(())
}

/// Curves keyed by area identifier.
#[derive(Debug, Clone)]
pub struct Curves {
    pub ids: Vec<String>,
    pub sample: FunctionalSample,
}

/// Grid points from a one-column sidecar file (optional header).
pub fn read_grid(path: &Path) -> Result<Vec<f64>> {
    let mut recs = read_records(path)?;
    strip_header(&mut recs, 0);
    recs.iter()
        .map(|r| {
            expect_fields(path, r, 1)?;
            parse_f64(path, r.line, &r.fields[0], "grid point")
        })
        .collect()
}

/// Curves CSV: header row `id,t_1,...,t_N`, then one row per area.
///
/// When `grid` is given the header labels are ignored and the points come
/// from that file; otherwise the header must hold them.
pub fn read_curves(path: &Path, grid: Option<&Path>) -> Result<Curves> {
    let recs = read_records(path)?;
    let header = &recs[0];
    if header.fields.len() < 2 {
        return Err(parse_error(
            path,
            header.line,
            "header needs an id column and grid columns",
        ));
    }
    let width = header.fields.len() - 1;
    let points = match grid {
        Some(g) => {
            let pts = read_grid(g)?;
            if pts.len() != width {
                return Err(parse_error(
                    g,
                    1,
                    format!(
                        "{} grid points for {width} curve columns in {}",
                        pts.len(),
                        path.display()
                    ),
                ));
            }
            pts
        }
        None => header.fields[1..]
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| {
                    parse_error(
                        path,
                        header.line,
                        format!("header label '{f}' is not a grid point; supply the grid with --grid"),
                    )
                })
            })
            .collect::<Result<_>>()?,
    };
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for r in &recs[1..] {
        expect_fields(path, r, width + 1)?;
        ids.push(r.fields[0].clone());
        for f in &r.fields[1..] {
            values.push(parse_f64(path, r.line, f, "curve value")?);
        }
    }
    check_unique(path, &ids)?;
    let n = ids.len();
    let sample = FunctionalSample::new(DMatrix::from_row_slice(n, width, &values), Grid::new(points)?)?;
    Ok(Curves { ids, sample })
}

fn check_unique(path: &Path, ids: &[String]) -> Result<()> {
    let mut seen = HashMap::new();
    for (i, id) in ids.iter().enumerate() {
        if let Some(j) = seen.insert(id.as_str(), i) {
            return Err(FsarError::invalid(format!(
                "{}: area id '{id}' appears in rows {} and {}",
                path.display(),
                j + 1,
                i + 1
            )));
        }
    }
    Ok(())
}

/// Position of every id of `order` in `ids`; both lists must hold the same set.
fn align(path: &Path, ids: &[String], order: &[String]) -> Result<Vec<usize>> {
    if ids.len() != order.len() {
        return Err(FsarError::invalid(format!(
            "{} has {} areas but the curves file has {}",
            path.display(),
            ids.len(),
            order.len()
        )));
    }
    let pos: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    order
        .iter()
        .map(|id| {
            pos.get(id.as_str())
                .copied()
                .ok_or_else(|| FsarError::invalid(format!("{}: no row for area id '{id}'", path.display())))
        })
        .collect()
}

/// Response CSV: `id,y` rows matched to `order` by id, or a single `y`
/// column taken positionally. A header row is optional.
pub fn read_response(path: &Path, order: &[String]) -> Result<DVector<f64>> {
    let mut recs = read_records(path)?;
    let width = recs[0].fields.len();
    strip_header(&mut recs, width.saturating_sub(1));
    match width {
        1 => {
            let y: Vec<f64> = recs
                .iter()
                .map(|r| {
                    expect_fields(path, r, 1)?;
                    parse_f64(path, r.line, &r.fields[0], "response")
                })
                .collect::<Result<_>>()?;
            if y.len() != order.len() {
                return Err(FsarError::invalid(format!(
                    "{} has {} responses but the curves file has {} areas",
                    path.display(),
                    y.len(),
                    order.len()
                )));
            }
            Ok(DVector::from_vec(y))
        }
        2 => {
            let mut ids = Vec::new();
            let mut y = Vec::new();
            for r in &recs {
                expect_fields(path, r, 2)?;
                ids.push(r.fields[0].clone());
                y.push(parse_f64(path, r.line, &r.fields[1], "response")?);
            }
            check_unique(path, &ids)?;
            let idx = align(path, &ids, order)?;
            Ok(DVector::from_iterator(idx.len(), idx.iter().map(|&i| y[i])))
        }
        w => Err(parse_error(
            path,
            recs[0].line,
            format!("expected 1 or 2 columns, found {w}"),
        )),
    }
}

/// Coordinates CSV `id,x,y` (header optional), in file order.
pub fn read_coords(path: &Path) -> Result<(Vec<String>, Vec<[f64; 2]>)> {
    let mut recs = read_records(path)?;
    strip_header(&mut recs, 1);
    let mut ids = Vec::new();
    let mut xy = Vec::new();
    for r in &recs {
        expect_fields(path, r, 3)?;
        ids.push(r.fields[0].clone());
        xy.push([
            parse_f64(path, r.line, &r.fields[1], "x")?,
            parse_f64(path, r.line, &r.fields[2], "y")?,
        ]);
    }
    check_unique(path, &ids)?;
    Ok((ids, xy))
}

/// Coordinates reordered to match `order`.
pub fn read_coords_for(path: &Path, order: &[String]) -> Result<Vec<[f64; 2]>> {
    let (ids, xy) = read_coords(path)?;
    Ok(align(path, &ids, order)?.into_iter().map(|i| xy[i]).collect())
}

/// Dense square weights CSV, header row optional.
pub fn read_dense_weights(path: &Path) -> Result<DMatrix<f64>> {
    let mut recs = read_records(path)?;
    strip_header(&mut recs, 0);
    let n = recs.len();
    let mut values = Vec::with_capacity(n * n);
    for r in &recs {
        if r.fields.len() != n {
            return Err(parse_error(
                path,
                r.line,
                format!(
                    "weights matrix has {n} rows, so each row needs {n} fields, found {}",
                    r.fields.len()
                ),
            ));
        }
        for f in &r.fields {
            values.push(parse_f64(path, r.line, f, "weight")?);
        }
    }
    Ok(DMatrix::from_row_slice(n, n, &values))
}

/// Edge list of 0-based `i,j,weight` rows (header optional) for `n` areas.
/// Edges are taken as given; list both directions for a symmetric `W`.
pub fn read_edge_list(path: &Path, n: usize) -> Result<DMatrix<f64>> {
    let mut recs = read_records(path)?;
    strip_header(&mut recs, 0);
    let mut w = DMatrix::zeros(n, n);
    let index = |r: &Record, f: &str, what: &str| -> Result<usize> {
        let i: usize = f
            .parse()
            .map_err(|_| parse_error(path, r.line, format!("{what} '{f}' is not a 0-based index")))?;
        if i >= n {
            return Err(parse_error(
                path,
                r.line,
                format!("{what} {i} is out of range for {n} areas"),
            ));
        }
        Ok(i)
    };
    for r in &recs {
        expect_fields(path, r, 3)?;
        let i = index(r, &r.fields[0], "i")?;
        let j = index(r, &r.fields[1], "j")?;
        if i == j {
            return Err(parse_error(path, r.line, format!("self-loop at area {i}")));
        }
        if w[(i, j)] != 0.0 {
            return Err(parse_error(path, r.line, format!("duplicate edge ({i}, {j})")));
        }
        w[(i, j)] = parse_f64(path, r.line, &r.fields[2], "weight")?;
    }
    Ok(w)
}

/// Null slope on the grid: one `beta` column or `t,beta` rows whose `t`
/// must match the grid.
pub fn read_function(path: &Path, grid: &Grid) -> Result<Vec<f64>> {
    let mut recs = read_records(path)?;
    let width = recs[0].fields.len();
    strip_header(&mut recs, 0);
    let mut out = Vec::new();
    for (r, &t) in recs.iter().zip(grid.points()) {
        expect_fields(path, r, width)?;
        match width {
            1 => out.push(parse_f64(path, r.line, &r.fields[0], "beta")?),
            2 => {
                let ti = parse_f64(path, r.line, &r.fields[0], "t")?;
                if (ti - t).abs() > 1e-9 * (1.0 + t.abs()) {
                    return Err(parse_error(
                        path,
                        r.line,
                        format!("t = {ti} does not match grid point {t}"),
                    ));
                }
                out.push(parse_f64(path, r.line, &r.fields[1], "beta")?);
            }
            w => return Err(parse_error(path, r.line, format!("expected 1 or 2 columns, found {w}"))),
        }
    }
    if recs.len() != grid.len() {
        return Err(FsarError::invalid(format!(
            "{} has {} values for a grid of {} points",
            path.display(),
            recs.len(),
            grid.len()
        )));
    }
    Ok(out)
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| io_error(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_error(path: &Path, e: csv::Error) -> FsarError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => io_error(path, io),
        other => FsarError::invalid(format!("{}: {other:?}", path.display())),
    }
}

/// Write a header and rows of displayable cells.
pub fn write_rows<S: AsRef<str>>(path: &Path, header: &[&str], rows: &[Vec<S>]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(row.iter().map(AsRef::as_ref))
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

/// Dense headerless matrix, readable by [`read_dense_weights`].
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = writer(path)?;
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

/// Band as `t,center,lower,upper`.
pub fn write_band(path: &Path, band: &ConfidenceBand) -> Result<()> {
    let rows: Vec<Vec<String>> = band
        .grid
        .points()
        .iter()
        .enumerate()
        .map(|(i, t)| {
            vec![
                t.to_string(),
                band.center[i].to_string(),
                band.lower[i].to_string(),
                band.upper[i].to_string(),
            ]
        })
        .collect();
    write_rows(path, &["t", "center", "lower", "upper"], &rows)
}
