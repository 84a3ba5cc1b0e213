//! CSV ingestion, domain rescaling, and JSON helpers for matrices.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::coords::{Curve, FunctionalVariable};
use crate::error::{invalid, Error, Result};

/// Serde adapter writing a matrix as `{rows, cols, data}` with row-major data.
pub mod matrix_serde {
    use nalgebra::DMatrix;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Repr {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let data = m.transpose().as_slice().to_vec();
        Repr {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let r = Repr::deserialize(d)?;
        if r.rows * r.cols != r.data.len() {
            return Err(D::Error::custom(format!(
                "matrix {}×{} needs {} entries, found {}",
                r.rows,
                r.cols,
                r.rows * r.cols,
                r.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(r.rows, r.cols, &r.data))
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
            #[derive(Serialize)]
            struct W<'a>(#[serde(with = "super")] &'a DMatrix<f64>);
            m.as_ref().map(W).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DMatrix<f64>>, D::Error> {
            #[derive(Deserialize)]
            struct W(#[serde(with = "super")] DMatrix<f64>);
            Ok(Option::<W>::deserialize(d)?.map(|w| w.0))
        }
    }
}

/// Serde adapter writing a column vector as a plain JSON array.
pub mod vector_serde {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

/// The original observation interval of a variable, mapped affinely to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lo: f64,
    pub hi: f64,
}

impl Domain {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(invalid(format!("domain [{lo}, {hi}] is empty or not finite")));
        }
        Ok(Self { lo, hi })
    }

    pub fn unit() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }

    pub fn to_unit(&self, t: f64) -> f64 {
        ((t - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
    }

    pub fn from_unit(&self, s: f64) -> f64 {
        self.lo + s * (self.hi - self.lo)
    }

    fn of(points: impl Iterator<Item = f64>) -> Result<Self> {
        let (lo, hi) = points.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), t| (a.min(t), b.max(t)));
        Self::new(lo, hi)
    }
}

fn parse_field(s: &str, line: usize) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("`{}` is not a number", s.trim()),
    })
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}

fn read_records(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_error)?;
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(out.len() + 1, |p| p.line() as usize);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        out.push((line, rec.iter().map(str::to_owned).collect()));
    }
    Ok(out)
}

/// A functional variable read from CSV together with its original domain.
#[derive(Debug, Clone)]
pub struct LoadedVariable {
    pub variable: FunctionalVariable,
    pub domain: Domain,
}

/// Reads a functional variable.
///
/// Wide layout: the first row holds the grid, each further row one subject.
/// Long layout: a `subject,t,value` header followed by one observation per row,
/// allowing a different grid per subject. Grids are mapped to `[0, 1]` by the
/// affine map sending the observed range to the unit interval, unless `domain`
/// fixes it (as when new data must match a fitted model).
pub fn read_functional_csv(path: &Path, domain: Option<Domain>) -> Result<LoadedVariable> {
    let records = read_records(path)?;
    let Some((_, first)) = records.first() else {
        return Err(Error::Parse {
            line: 1,
            message: "empty file".into(),
        });
    };
    if first.first().is_some_and(|f| f.eq_ignore_ascii_case("subject")) {
        return read_long(&records[1..], domain);
    }
    let (line0, header) = &records[0];
    let grid: Vec<f64> = header.iter().map(|f| parse_field(f, *line0)).collect::<Result<_>>()?;
    let k = grid.len();
    let mut data = Vec::with_capacity((records.len() - 1) * k);
    for (line, rec) in &records[1..] {
        if rec.len() != k {
            return Err(Error::Parse {
                line: *line,
                message: format!("expected {k} fields, found {}", rec.len()),
            });
        }
        for f in rec {
            data.push(parse_field(f, *line)?);
        }
    }
    let domain = match domain {
        Some(d) => d,
        None => Domain::of(grid.iter().copied())?,
    };
    let grid: Vec<f64> = grid.iter().map(|&t| domain.to_unit(t)).collect();
    let values = DMatrix::from_row_slice(records.len() - 1, k, &data);
    Ok(LoadedVariable {
        variable: FunctionalVariable::common(grid, values)?,
        domain,
    })
}

fn read_long(records: &[(usize, Vec<String>)], domain: Option<Domain>) -> Result<LoadedVariable> {
    let mut subjects: BTreeMap<String, (usize, Vec<(f64, f64)>)> = BTreeMap::new();
    for (order, (line, rec)) in records.iter().enumerate() {
        if rec.len() != 3 {
            return Err(Error::Parse {
                line: *line,
                message: format!("expected subject,t,value, found {} fields", rec.len()),
            });
        }
        let t = parse_field(&rec[1], *line)?;
        let v = parse_field(&rec[2], *line)?;
        subjects
            .entry(rec[0].clone())
            .or_insert((order, Vec::new()))
            .1
            .push((t, v));
    }
    let domain = match domain {
        Some(d) => d,
        None => Domain::of(subjects.values().flat_map(|(_, obs)| obs.iter().map(|o| o.0)))?,
    };
    let mut ordered: Vec<_> = subjects.into_iter().collect();
    ordered.sort_by_key(|(_, (first, _))| *first);
    let curves = ordered
        .into_iter()
        .map(|(id, (_, mut obs))| {
            obs.sort_by(|a, b| a.0.total_cmp(&b.0));
            if obs.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(invalid(format!("subject `{id}` has repeated observation times")));
            }
            Ok(Curve {
                grid: obs.iter().map(|o| domain.to_unit(o.0)).collect(),
                values: obs.iter().map(|o| o.1).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LoadedVariable {
        variable: FunctionalVariable::per_subject(curves)?,
        domain,
    })
}

/// Reads a numeric matrix, one row per line. A non-numeric first row is
/// treated as a header and skipped.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let records = read_records(path)?;
    let skip = usize::from(
        records
            .first()
            .is_some_and(|(_, r)| r.iter().any(|f| f.parse::<f64>().is_err())),
    );
    let rows = &records[skip..];
    let Some((_, first)) = rows.first() else {
        return Err(Error::Parse {
            line: 1,
            message: "no data rows".into(),
        });
    };
    let k = first.len();
    let mut data = Vec::with_capacity(rows.len() * k);
    for (line, rec) in rows {
        if rec.len() != k {
            return Err(Error::Parse {
                line: *line,
                message: format!("expected {k} fields, found {}", rec.len()),
            });
        }
        for f in rec {
            data.push(parse_field(f, *line)?);
        }
    }
    Ok(DMatrix::from_row_slice(rows.len(), k, &data))
}

/// Reads 0/1 labels from a single-column CSV.
pub fn read_labels_csv(path: &Path) -> Result<Vec<u8>> {
    let m = read_matrix_csv(path)?;
    if m.ncols() != 1 {
        return Err(invalid("label file must have a single column"));
    }
    m.iter()
        .enumerate()
        .map(|(i, &v)| match v {
            0.0 => Ok(0),
            1.0 => Ok(1),
            _ => Err(Error::Parse {
                line: i + 1,
                message: format!("label {v} is not 0 or 1"),
            }),
        })
        .collect()
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes a header and numeric rows as CSV with full precision.
pub fn write_csv<W: Write>(mut w: W, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    writeln!(w, "{}", header.join(","))?;
    for r in rows {
        let fields: Vec<String> = r.iter().map(|&x| fmt_f64(x)).collect();
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_file(contents: &str) -> (std::path::PathBuf, impl Drop) {
        struct Guard(std::path::PathBuf);
        impl Drop for Guard {
            fn drop(&mut self) {
                let _ = std::fs::remove_file(&self.0);
            }
        }
        let path = std::env::temp_dir().join(format!(
            "fepls-io-{}-{}.csv",
            std::process::id(),
            contents.len() ^ contents.as_ptr() as usize
        ));
        std::fs::File::create(&path)
            .unwrap()
            .write_all(contents.as_bytes())
            .unwrap();
        (path.clone(), Guard(path))
    }

    #[test]
    fn matrix_json_is_row_major_and_exact() {
        #[derive(Serialize, Deserialize)]
        struct W(#[serde(with = "matrix_serde")] DMatrix<f64>);
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 0.1 + 0.2, -1e-300, std::f64::consts::PI]);
        let s = serde_json::to_string(&W(m.clone())).unwrap();
        assert!(s.starts_with(r#"{"rows":2,"cols":3,"data":[1.0,2.0,3.0,"#), "{s}");
        let back: W = serde_json::from_str(&s).unwrap();
        assert_eq!(back.0, m);
    }

    #[test]
    fn wide_csv_rescales_grid() {
        let (p, _g) = temp_file("10,15,20\n1,2,3\n4,5,6\n");
        let v = read_functional_csv(&p, None).unwrap();
        assert_eq!(v.domain, Domain { lo: 10.0, hi: 20.0 });
        match v.variable {
            FunctionalVariable::Common { grid, values } => {
                assert_eq!(grid, vec![0.0, 0.5, 1.0]);
                assert_eq!(values[(1, 2)], 6.0);
            }
            _ => panic!("expected common grid"),
        }
    }

    #[test]
    fn long_csv_keeps_per_subject_grids() {
        let (p, _g) = temp_file("subject,t,value\nb,0,1\na,0.5,2\nb,1,3\na,0,4\n");
        let v = read_functional_csv(&p, None).unwrap();
        let FunctionalVariable::PerSubject { curves } = v.variable else {
            panic!("expected per-subject layout");
        };
        assert_eq!(curves.len(), 2);
        assert_eq!(curves[0].grid, vec![0.0, 1.0]);
        assert_eq!(curves[1].values, vec![4.0, 2.0]);
    }

    #[test]
    fn malformed_csv_reports_line() {
        let (p, _g) = temp_file("0,1\n1,2\n3,oops\n");
        match read_functional_csv(&p, None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn seventeen_significant_digits() {
        let s = fmt_f64(0.1);
        assert_eq!(s.parse::<f64>().unwrap(), 0.1);
        assert_eq!(s.split('e').next().unwrap().replace(['.', '-'], "").len(), 17);
    }
}
