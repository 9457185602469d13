//! CSV formats.
//!
//! * long data: header `time,dim,value`, one row per observed entry; `dim`
//!   is a 0-based index or a name listed in an optional dims file (a single
//!   comma-separated header line).
//! * wide ground truth: header `time,<dim_0>,...,<dim_{D-1}>`.
//!
//! Floats are written with Rust's shortest round-trip formatting.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use super::{default_names, LongitudinalDataset};
use crate::error::{Error, Result};

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("line {line}: bad number {s:?}")))
}

pub fn write_long_csv<W: Write>(data: &LongitudinalDataset, mut w: W) -> Result<()> {
    writeln!(w, "time,dim,value")?;
    for i in 0..data.n_points() {
        for j in 0..data.n_dims() {
            if data.mask[(i, j)] {
                writeln!(w, "{},{},{}", data.times[i], j, data.values[(i, j)])?;
            }
        }
    }
    Ok(())
}

pub fn write_wide_csv<W: Write>(times: &[f64], values: &DMatrix<f64>, names: &[String], mut w: W) -> Result<()> {
    writeln!(w, "time,{}", names.join(","))?;
    for (i, t) in times.iter().enumerate() {
        let row: Vec<String> = values.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{t},{}", row.join(","))?;
    }
    Ok(())
}

/// Parses the dims file: one header line of comma-separated names.
pub fn parse_dim_names(text: &str) -> Result<Vec<String>> {
    let line = text.lines().find(|l| !l.trim().is_empty()).ok_or_else(|| Error::Parse("empty dims file".into()))?;
    let names: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
    if names.iter().any(|n| n.is_empty()) {
        return Err(Error::Parse("empty dimension name".into()));
    }
    Ok(names)
}

/// Reads long-format data. Without `names`, `D` is one more than the largest
/// index seen.
pub fn parse_long_csv(text: &str, names: Option<&[String]>) -> Result<LongitudinalDataset> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::Parse("empty data file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols != ["time", "dim", "value"] {
        return Err(Error::Parse(format!("expected header time,dim,value, got {header:?}")));
    }
    let mut rows: Vec<(f64, usize, f64)> = Vec::new();
    for (ln, line) in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(Error::Parse(format!("line {}: expected 3 fields", ln + 1)));
        }
        let t = parse_f64(f[0], ln + 1)?;
        let key = f[1].trim();
        let dim = match key.parse::<usize>() {
            Ok(j) => j,
            Err(_) => names
                .and_then(|ns| ns.iter().position(|n| n == key))
                .ok_or_else(|| Error::Parse(format!("line {}: unknown dimension {key:?}", ln + 1)))?,
        };
        rows.push((t, dim, parse_f64(f[2], ln + 1)?));
    }
    if rows.is_empty() {
        return Err(Error::EmptyObservations);
    }
    let d = match names {
        Some(ns) => ns.len(),
        None => rows.iter().map(|r| r.1).max().unwrap() + 1,
    };
    if let Some(r) = rows.iter().find(|r| r.1 >= d) {
        return Err(Error::Parse(format!("dimension index {} out of range", r.1)));
    }
    let mut index: BTreeMap<u64, usize> = BTreeMap::new();
    let mut times: Vec<f64> = rows.iter().map(|r| r.0).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    for (i, t) in times.iter().enumerate() {
        index.insert(t.to_bits(), i);
    }
    let n = times.len();
    let mut values = DMatrix::from_element(n, d, f64::NAN);
    let mut mask = DMatrix::from_element(n, d, false);
    for &(t, j, v) in &rows {
        let i = index[&t.to_bits()];
        if mask[(i, j)] {
            return Err(Error::DuplicateObservation { time: t, dim: j });
        }
        mask[(i, j)] = true;
        values[(i, j)] = v;
    }
    let names = names.map(|ns| ns.to_vec()).unwrap_or_else(|| default_names(d));
    LongitudinalDataset::new(times, values, mask, names, None)
}

/// Reads wide format into `(times, names, values)`.
pub fn parse_wide_csv(text: &str) -> Result<(Vec<f64>, Vec<String>, DMatrix<f64>)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::Parse("empty file".into()))?;
    let cols: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    if cols.first().map(String::as_str) != Some("time") || cols.len() < 2 {
        return Err(Error::Parse("wide header must start with time".into()));
    }
    let names = cols[1..].to_vec();
    let mut times = Vec::new();
    let mut data = Vec::new();
    for (ln, line) in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(Error::Parse(format!("line {}: expected {} fields", ln + 1, cols.len())));
        }
        times.push(parse_f64(f[0], ln + 1)?);
        for s in &f[1..] {
            data.push(parse_f64(s, ln + 1)?);
        }
    }
    let values = DMatrix::from_row_slice(times.len(), names.len(), &data);
    Ok((times, names, values))
}

/// Attaches wide ground truth to a dataset; the truth must cover every time
/// in the dataset, and any extra truth rows become fully unobserved rows.
pub fn attach_ground_truth(data: &LongitudinalDataset, times: &[f64], values: &DMatrix<f64>) -> Result<LongitudinalDataset> {
    if values.ncols() != data.n_dims() {
        return Err(Error::DimensionMismatch(format!(
            "truth has {} dims, data {}",
            values.ncols(),
            data.n_dims()
        )));
    }
    let n = times.len();
    let d = data.n_dims();
    let mut new_values = DMatrix::from_element(n, d, f64::NAN);
    let mut mask = DMatrix::from_element(n, d, false);
    let mut used = 0;
    for (i, t) in times.iter().enumerate() {
        if let Some(src) = data.times.iter().position(|s| s == t) {
            used += 1;
            for j in 0..d {
                if data.mask[(src, j)] {
                    mask[(i, j)] = true;
                    new_values[(i, j)] = data.values[(src, j)];
                }
            }
        }
    }
    if used != data.n_points() {
        return Err(Error::DimensionMismatch("ground truth misses some observed times".into()));
    }
    LongitudinalDataset::new(times.to_vec(), new_values, mask, data.dim_names.clone(), Some(values.clone()))
}

pub fn read_dataset(path: &Path, dims_file: Option<&Path>, truth_file: Option<&Path>) -> Result<LongitudinalDataset> {
    let names = match dims_file {
        Some(p) => Some(parse_dim_names(&fs::read_to_string(p)?)?),
        None => None,
    };
    let data = parse_long_csv(&fs::read_to_string(path)?, names.as_deref())?;
    match truth_file {
        Some(p) => {
            let (t, _, v) = parse_wide_csv(&fs::read_to_string(p)?)?;
            attach_ground_truth(&data, &t, &v)
        }
        None => Ok(data),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_eval::{apply_mask, generate_synthetic};

    #[test]
    fn long_round_trip() {
        let data = apply_mask(&generate_synthetic(20, 3, 2, 0.1, 1).unwrap(), 0.6, 2).unwrap();
        let mut buf = Vec::new();
        write_long_csv(&data, &mut buf).unwrap();
        let back = parse_long_csv(std::str::from_utf8(&buf).unwrap(), None).unwrap();
        // rows with no observation vanish from the long format
        let kept: Vec<usize> = (0..20).filter(|&i| data.mask.row(i).iter().any(|&m| m)).collect();
        assert_eq!(back.n_points(), kept.len());
        for (bi, &i) in kept.iter().enumerate() {
            assert_eq!(back.times[bi], data.times[i]);
            for j in 0..3 {
                assert_eq!(back.mask[(bi, j)], data.mask[(i, j)]);
                if data.mask[(i, j)] {
                    assert_eq!(back.values[(bi, j)], data.values[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn named_dimensions_and_errors() {
        let names = parse_dim_names("hip,knee\n").unwrap();
        let d = parse_long_csv("time,dim,value\n0.5,knee,1.0\n0.0,hip,2.0\n", Some(&names)).unwrap();
        assert_eq!(d.times, vec![0.0, 0.5]);
        assert!(d.mask[(1, 1)] && d.mask[(0, 0)]);
        assert!(matches!(parse_long_csv("time,dim,value\n0,ankle,1\n", Some(&names)), Err(Error::Parse(_))));
        assert!(matches!(parse_long_csv("t,d,v\n", None), Err(Error::Parse(_))));
        assert!(matches!(
            parse_long_csv("time,dim,value\n0,0,1\n0,0,2\n", None),
            Err(Error::DuplicateObservation { .. })
        ));
    }

    #[test]
    fn wide_round_trip_and_attach() {
        let full = generate_synthetic(15, 2, 1, 0.1, 1).unwrap();
        let gt = full.ground_truth.clone().unwrap();
        let mut buf = Vec::new();
        write_wide_csv(&full.times, &gt, &full.dim_names, &mut buf).unwrap();
        let (t, names, v) = parse_wide_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(t, full.times);
        assert_eq!(names, full.dim_names);
        assert_eq!(v, gt);
        let masked = apply_mask(&full, 0.3, 4).unwrap();
        let mut lbuf = Vec::new();
        write_long_csv(&masked, &mut lbuf).unwrap();
        let sparse = parse_long_csv(std::str::from_utf8(&lbuf).unwrap(), None).unwrap();
        let joined = attach_ground_truth(&sparse, &t, &v).unwrap();
        assert_eq!(joined.times, masked.times);
        assert_eq!(joined.mask, masked.mask);
        assert_eq!(joined.ground_truth, masked.ground_truth);
    }
}
