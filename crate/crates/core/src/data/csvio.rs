use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::dataset::PartiallyLabelledDataset;
use crate::error::{Error, Result};
use crate::ndgrad::Tensor;
use crate::report::fmt_float;

fn parse_err(line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

/// Reads `x0..x{d-1},label` rows. An empty label marks an unlabelled row.
/// The class count is `1 + max label` unless `n_classes` overrides it.
pub fn read_csv<R: Read>(reader: R, n_classes: Option<usize>) -> Result<PartiallyLabelledDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let width = header.len();
    let label_col = header
        .iter()
        .position(|h| h == "label")
        .ok_or_else(|| parse_err(1, "missing `label` column"))?;
    let d = width - 1;
    if d == 0 {
        return Err(parse_err(1, "no feature columns"));
    }
    // feature_col[k] = csv column holding x{k}
    let mut feature_col = vec![usize::MAX; d];
    for (c, h) in header.iter().enumerate() {
        if c == label_col {
            continue;
        }
        let k = h
            .strip_prefix('x')
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&k| k < d && feature_col[k] == usize::MAX)
            .ok_or_else(|| parse_err(1, format!("unexpected column `{h}`; expected x0..x{}", d - 1)))?;
        feature_col[k] = c;
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != width {
            return Err(parse_err(line, format!("expected {width} fields, found {}", rec.len())));
        }
        for &c in &feature_col {
            let cell = &rec[c];
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(line, format!("feature `{cell}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("feature `{cell}` is not finite")));
            }
            data.push(v);
        }
        let cell = &rec[label_col];
        if cell.is_empty() {
            labels.push(None);
        } else {
            let y: i64 = cell
                .parse()
                .map_err(|_| parse_err(line, format!("label `{cell}` is not an integer")))?;
            if y < 0 {
                return Err(parse_err(line, format!("label {y} is negative")));
            }
            labels.push(Some(y as usize));
        }
    }
    let max_label = labels.iter().flatten().max().copied();
    let c = match (n_classes, max_label) {
        (Some(c), Some(m)) if c <= m => {
            return Err(Error::config(format!("class count {c} too small for label {m}")));
        }
        (Some(c), _) => c,
        (None, Some(m)) => m + 1,
        (None, None) => 0,
    };
    let n = labels.len();
    PartiallyLabelledDataset::new(Tensor::new(vec![n, d], data)?, labels, c)
}

pub fn load_csv(path: &Path, n_classes: Option<usize>) -> Result<PartiallyLabelledDataset> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(f, n_classes)
}

pub fn write_csv_to<W: Write>(ds: &PartiallyLabelledDataset, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let d = ds.dim();
    let mut header: Vec<String> = (0..d).map(|k| format!("x{k}")).collect();
    header.push("label".into());
    let to_err = |e: csv::Error| Error::Serde(e.to_string());
    wtr.write_record(&header).map_err(to_err)?;
    for i in 0..ds.n() {
        let mut row: Vec<String> = ds.features().row(i).iter().map(|&v| fmt_float(v)).collect();
        row.push(ds.labels()[i].map(|y| y.to_string()).unwrap_or_default());
        wtr.write_record(&row).map_err(to_err)?;
    }
    wtr.flush().map_err(|e| Error::Serde(e.to_string()))
}

pub fn write_csv(ds: &PartiallyLabelledDataset, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_csv_to(ds, &mut buf)?;
    crate::report::write_atomic(path, &buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_from_empty_labels() {
        let text = "x0,label\n0.5,1\n1.5,\n2.5,0\n";
        let ds = read_csv(text.as_bytes(), None).unwrap();
        assert_eq!((ds.n(), ds.n_labelled(), ds.n_unlabelled()), (3, 2, 1));
        assert_eq!(ds.n_classes(), 2);
    }

    #[test]
    fn all_unlabelled_loads() {
        let ds = read_csv("x0,label\n0.5,\n1.0,\n".as_bytes(), None).unwrap();
        assert_eq!(ds.n_labelled(), 0);
    }

    #[test]
    fn columns_may_be_reordered() {
        let ds = read_csv("label,x1,x0\n1,2.0,3.0\n".as_bytes(), None).unwrap();
        assert_eq!(ds.features().data(), &[3.0, 2.0]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let cases = [
            ("x0,label\n0.5,1\n0.5\n", 3),
            ("x0,label\n0.5,1\nabc,0\n", 3),
            ("x0,label\n0.5,1\n0.1,0\n0.5,-1\n", 4),
            ("x0,label\n0.5,1.5\n", 2),
            ("x0,y\n0.5,1\n", 1),
        ];
        for (text, want) in cases {
            match read_csv(text.as_bytes(), None) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, want, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn override_class_count() {
        let ds = read_csv("x0,label\n0.5,1\n".as_bytes(), Some(4)).unwrap();
        assert_eq!(ds.n_classes(), 4);
        assert!(read_csv("x0,label\n0.5,3\n".as_bytes(), Some(2)).is_err());
    }
}
