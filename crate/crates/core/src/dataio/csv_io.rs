use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use super::Dataset;
use crate::error::{Error, Result};

/// A column addressed by header name or zero-based index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnRef {
    Name(String),
    Index(usize),
}

impl FromStr for ColumnRef {
    type Err = std::convert::Infallible;

    /// Purely numeric strings are indices, anything else is a name.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => ColumnRef::Index(i),
            Err(_) => ColumnRef::Name(s.to_string()),
        })
    }
}

impl std::fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ColumnRef::Name(n) => f.write_str(n),
            ColumnRef::Index(i) => write!(f, "{i}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub has_header: bool,
    pub label_column: ColumnRef,
    pub weight_column: Option<ColumnRef>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            has_header: true,
            label_column: ColumnRef::Name("label".into()),
            weight_column: None,
        }
    }
}

/// Loads a numeric CSV with one binary label column.
///
/// Positions in error messages are 1-based file lines.
pub fn load_csv(path: &Path, has_header: bool, label_column: ColumnRef) -> Result<Dataset> {
    load_csv_with(
        path,
        &CsvOptions {
            has_header,
            label_column,
            weight_column: None,
        },
    )
}

pub fn load_csv_with(path: &Path, opts: &CsvOptions) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(opts.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let header: Option<Vec<String>> = if opts.has_header {
        let h = reader
            .headers()
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        if h.is_empty() || (h.len() == 1 && h[0].is_empty()) {
            return Err(Error::Data("no data rows".into()));
        }
        Some(h.iter().map(str::to_string).collect())
    } else {
        None
    };

    let resolve = |c: &ColumnRef, what: &str| -> Result<usize> {
        match c {
            ColumnRef::Index(i) => Ok(*i),
            ColumnRef::Name(n) => header
                .as_ref()
                .and_then(|h| h.iter().position(|x| x == n))
                .ok_or_else(|| Error::Data(format!("{what} column '{n}' not found in header"))),
        }
    };
    let label_col = resolve(&opts.label_column, "label")?;
    let weight_col = opts.weight_column.as_ref().map(|c| resolve(c, "weight")).transpose()?;
    if weight_col == Some(label_col) {
        return Err(Error::Data("label and weight columns coincide".into()));
    }

    let mut width: Option<usize> = header.as_ref().map(Vec::len);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut weights = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(Error::Data(format!(
                "ragged row {line}: {} columns, expected {w}",
                rec.len()
            )));
        }
        if label_col >= w || weight_col.is_some_and(|c| c >= w) {
            return Err(Error::Data(format!("label/weight column out of range for {w} columns")));
        }
        for (col, cell) in rec.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::Data(format!("non-numeric value '{cell}' at row {line}, column {col}")))?;
            if col == label_col {
                let y = if v == 0.0 {
                    0
                } else if v == 1.0 {
                    1
                } else {
                    return Err(Error::Data(format!("non-binary label at row {line}")));
                };
                labels.push(y);
            } else if Some(col) == weight_col {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Data(format!("non-positive weight at row {line}, column {col}")));
                }
                weights.push(v);
            } else {
                if !v.is_finite() {
                    return Err(Error::Data(format!("non-finite value at row {line}, column {col}")));
                }
                features.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::Data("no data rows".into()));
    }
    let total = width.unwrap_or(0);
    let n_cols = total - 1 - usize::from(weight_col.is_some());
    let names = header.map(|h| {
        h.into_iter()
            .enumerate()
            .filter(|(i, _)| *i != label_col && Some(*i) != weight_col)
            .map(|(_, n)| n)
            .collect()
    });
    Dataset::new(features, n_cols, labels, weight_col.map(|_| weights), names)
}

/// Writes features then a trailing `label` column, plus the weights under
/// `weight_header` when given.
pub fn write_csv(ds: &Dataset, path: &Path, weight_header: Option<&str>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let mut header = ds.feature_names().join(",");
    if !header.is_empty() {
        header.push(',');
    }
    header.push_str("label");
    if let Some(w) = weight_header {
        header.push(',');
        header.push_str(w);
    }
    writeln!(out, "{header}").map_err(io)?;
    let mut line = String::new();
    for i in 0..ds.len() {
        line.clear();
        for v in ds.row(i) {
            line.push_str(&v.to_string());
            line.push(',');
        }
        line.push_str(if ds.labels()[i] == 1 { "1" } else { "0" });
        if weight_header.is_some() {
            line.push(',');
            line.push_str(&ds.weights()[i].to_string());
        }
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Feature columns of a CSV whose label (and weight) column may be absent.
///
/// Named label/weight columns are dropped when the header has them; indexed
/// ones are always dropped. Returns row-major values and the column count.
pub fn load_features_csv(path: &Path, opts: &CsvOptions) -> Result<(Vec<f64>, usize)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(opts.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Option<Vec<String>> = if opts.has_header {
        let h = reader
            .headers()
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        Some(h.iter().map(str::to_string).collect())
    } else {
        None
    };
    let locate = |c: &ColumnRef| match c {
        ColumnRef::Index(i) => Some(*i),
        ColumnRef::Name(n) => header.as_ref().and_then(|h| h.iter().position(|x| x == n)),
    };
    let skip: Vec<usize> = std::iter::once(&opts.label_column)
        .chain(opts.weight_column.as_ref())
        .filter_map(locate)
        .collect();
    let mut width: Option<usize> = header.as_ref().map(Vec::len);
    let mut values = Vec::new();
    let mut rows = 0usize;
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(Error::Data(format!(
                "ragged row {line}: {} columns, expected {w}",
                rec.len()
            )));
        }
        for (col, cell) in rec.iter().enumerate() {
            if skip.contains(&col) {
                continue;
            }
            let v: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::Data(format!("non-numeric value '{cell}' at row {line}, column {col}")))?;
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Data("no data rows".into()));
    }
    let cols = values.len() / rows;
    Ok((values, cols))
}

pub fn write_scores(path: &Path, scores: &[f64]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(out, "score").map_err(io)?;
    for s in scores {
        writeln!(out, "{s}").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_scores(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "score" => {}
        _ => return Err(Error::Data("scores file must start with header 'score'".into())),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Data(format!("bad score '{l}' at row {}", i + 1)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_headerless_rows() {
        let f = tmp("1.0,2.0,1\n0.5,0.1,0\n2.2,3.3,1\n");
        let ds = load_csv(f.path(), false, ColumnRef::Index(2)).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.row(0).len(), 2);
        assert_eq!(ds.labels(), &[1, 0, 1]);
        assert_eq!(ds.row(2), &[2.2, 3.3]);
    }

    #[test]
    fn label_by_name_in_middle() {
        let f = tmp("a,label,b\n1,0,2\n3,1,4\n");
        let ds = load_csv(f.path(), true, "label".parse().unwrap()).unwrap();
        assert_eq!(ds.feature_names(), &["a".to_string(), "b".to_string()]);
        assert_eq!(ds.row(1), &[3.0, 4.0]);
    }

    #[test]
    fn error_messages_carry_positions() {
        let e = load_csv(tmp("").path(), false, ColumnRef::Index(0)).unwrap_err();
        assert!(e.to_string().contains("no data rows"), "{e}");

        let e = load_csv(tmp("1,0\n2,2\n").path(), false, ColumnRef::Index(1)).unwrap_err();
        assert!(e.to_string().contains("non-binary label at row 2"), "{e}");

        let e = load_csv(tmp("1,0\nx,1\n").path(), false, ColumnRef::Index(1)).unwrap_err();
        assert!(e.to_string().contains("row 2, column 0"), "{e}");

        let e = load_csv(tmp("1,0\n1,2,1\n").path(), false, ColumnRef::Index(1)).unwrap_err();
        assert!(e.to_string().contains("ragged row 2"), "{e}");

        let e = load_csv(Path::new("/nonexistent/x.csv"), false, ColumnRef::Index(0)).unwrap_err();
        assert!(matches!(e, Error::Io { .. }));
    }

    #[test]
    fn weight_column_is_split_off() {
        let f = tmp("a,label,w\n1,0,2.5\n3,1,1\n");
        let ds = load_csv_with(
            f.path(),
            &CsvOptions {
                has_header: true,
                label_column: "label".parse().unwrap(),
                weight_column: Some("w".parse().unwrap()),
            },
        )
        .unwrap();
        assert_eq!(ds.weights(), &[2.5, 1.0]);
        assert_eq!(ds.feature_names(), &["a".to_string()]);
    }

    #[test]
    fn written_csv_loads_back() {
        let ds = Dataset::new(
            vec![0.5, -1.25, 3.0, 1e-7],
            2,
            vec![1, 0],
            Some(vec![2.0, 0.5]),
            Some(vec!["a".into(), "b".into()]),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_csv(&ds, &path, Some("w")).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next(), Some("a,b,label,w"));
        let opts = CsvOptions {
            weight_column: Some(ColumnRef::Name("w".into())),
            ..CsvOptions::default()
        };
        assert_eq!(load_csv_with(&path, &opts).unwrap(), ds);
        let (x, cols) = load_features_csv(&path, &opts).unwrap();
        assert_eq!((x.as_slice(), cols), (ds.features(), 2));
    }

    #[test]
    fn features_without_label_column() {
        let f = tmp("a,b\n1,2\n3,4\n");
        let (x, cols) = load_features_csv(f.path(), &CsvOptions::default()).unwrap();
        assert_eq!((x, cols), (vec![1.0, 2.0, 3.0, 4.0], 2));
        let f = tmp("a,label\n1,x\n");
        assert!(load_features_csv(f.path(), &CsvOptions::default()).is_ok());
        let f = tmp("a,b\n1,x\n");
        assert!(load_features_csv(f.path(), &CsvOptions::default()).is_err());
    }

    #[test]
    fn scores_round_trip() {
        let f = tempfile::NamedTempFile::new().unwrap();
        let s = vec![0.1, 1.0 / 3.0, 0.999_999_999_1];
        write_scores(f.path(), &s).unwrap();
        assert_eq!(read_scores(f.path()).unwrap(), s);
    }
}
