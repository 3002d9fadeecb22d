//! CSV ingestion: UTF-8, header row, comma separator, one row per example.
//!
//! Features are not rescaled; MMD bandwidths adapt through the median
//! heuristic, but callers mixing very different units should standardize.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DomainDataset;
use crate::error::{Error, Result};
use crate::numerics::Tensor2;

/// Which columns hold features, the optional label and the domain id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub features: Vec<String>,
    #[serde(default)]
    pub label: Option<String>,
    pub domain: String,
}

/// Reads `path` into one dataset per distinct domain value, in order of first
/// appearance. A domain whose label cells are all empty has no labels.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Vec<DomainDataset>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Schema(format!(
                "column `{name}` not in header of {}",
                path.display()
            ))
        })
    };
    let feature_idx: Vec<usize> = schema
        .features
        .iter()
        .map(|f| find(f))
        .collect::<Result<_>>()?;
    let label_idx = schema.label.as_deref().map(find).transpose()?;
    let domain_idx = find(&schema.domain)?;

    struct Acc {
        x: Vec<f64>,
        y: Vec<Option<f64>>,
    }
    let mut order: Vec<String> = Vec::new();
    let mut acc: HashMap<String, Acc> = HashMap::new();
    let mut bad_rows: Vec<usize> = Vec::new();

    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| csv_error(path, e))?;
        let domain = record.get(domain_idx).unwrap_or("").trim();
        if domain.is_empty() {
            return Err(Error::Data(format!("row {line}: empty domain value")));
        }
        let parsed: Option<Vec<f64>> = feature_idx
            .iter()
            .map(|&c| {
                record
                    .get(c)
                    .and_then(|v| v.trim().parse::<f64>().ok())
                    .filter(|v| v.is_finite())
            })
            .collect();
        let label = match label_idx {
            Some(c) => match record.get(c).map(str::trim) {
                None | Some("") => Ok(None),
                Some(v) => v
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .map(Some)
                    .ok_or(()),
            },
            None => Ok(None),
        };
        let (Some(features), Ok(label)) = (parsed, label) else {
            bad_rows.push(line);
            continue;
        };
        if !acc.contains_key(domain) {
            order.push(domain.to_string());
        }
        let entry = acc.entry(domain.to_string()).or_insert(Acc {
            x: Vec::new(),
            y: Vec::new(),
        });
        entry.x.extend(features);
        entry.y.push(label);
    }
    if !bad_rows.is_empty() {
        return Err(Error::Data(format!(
            "unparseable numeric values in {} at rows {:?}",
            path.display(),
            bad_rows
        )));
    }
    if order.is_empty() {
        return Err(Error::Data(format!("{} has no data rows", path.display())));
    }

    let d = feature_idx.len();
    order
        .into_iter()
        .map(|name| {
            let a = acc.remove(&name).expect("domain accumulated");
            let n = a.y.len();
            let labeled = a.y.iter().filter(|v| v.is_some()).count();
            let y = if labeled == 0 {
                None
            } else if labeled == n {
                Some(a.y.into_iter().map(|v| v.expect("checked")).collect())
            } else {
                return Err(Error::Data(format!(
                    "domain `{name}` has {labeled} labeled rows out of {n}"
                )));
            };
            DomainDataset::new(
                name,
                Tensor2::from_vec(n, d, a.x)?,
                y,
                schema.features.clone(),
            )
        })
        .collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        },
        _ => Error::Data(format!("{}: {e}", path.display())),
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes datasets in the same layout [`load_csv`] reads. The label column
/// is written only when `label` is given; unlabeled domains leave it empty.
pub fn save_csv(
    path: impl AsRef<Path>,
    datasets: &[&DomainDataset],
    domain_column: &str,
    label: Option<&str>,
) -> Result<CsvSchema> {
    let path = path.as_ref();
    super::check_consistent(datasets)?;
    let features = datasets
        .first()
        .map(|d| d.feature_names.clone())
        .ok_or_else(|| Error::Data("nothing to write".into()))?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = features.clone();
    if let Some(l) = label {
        header.push(l.to_string());
    }
    header.push(domain_column.to_string());
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for d in datasets {
        for r in 0..d.len() {
            let mut rec: Vec<String> = d.x.row(r).iter().map(|v| fmt_f64(*v)).collect();
            if label.is_some() {
                rec.push(d.y.as_ref().map_or(String::new(), |y| fmt_f64(y[r])));
            }
            rec.push(d.domain.clone());
            w.write_record(&rec).map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(CsvSchema {
        features,
        label: label.map(str::to_string),
        domain: domain_column.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;
    use std::io::Write;

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn schema(label: bool) -> CsvSchema {
        CsvSchema {
            features: vec!["f1".into(), "f2".into()],
            label: label.then(|| "label".into()),
            domain: "domain".into(),
        }
    }

    #[test]
    fn parses_a_row() {
        let f = write("f1,f2,label,domain\n0.5,1.0,3,src\n");
        let ds = load_csv(f.path(), &schema(true)).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds[0].domain, "src");
        assert_eq!(ds[0].x.row(0), &[0.5, 1.0]);
        assert_eq!(ds[0].y.as_deref(), Some(&[3.0][..]));
    }

    #[test]
    fn partitions_by_domain_and_drops_missing_labels() {
        let f = write("f1,f2,label,domain\n1,2,0,s\n3,4,,t\n5,6,1,s\n7,8,,t\n");
        let ds = load_csv(f.path(), &schema(true)).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!((ds[0].len(), ds[1].len()), (2, 2));
        assert!(ds[0].y.is_some());
        assert!(ds[1].y.is_none());
    }

    #[test]
    fn missing_column_is_schema_error() {
        let f = write("f1,label,domain\n1,0,s\n");
        assert!(matches!(
            load_csv(f.path(), &schema(true)),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn bad_numbers_report_rows() {
        let f = write("f1,f2,domain\n1,2,s\nx,4,s\n5,nope,s\n");
        let msg = load_csv(f.path(), &schema(false)).unwrap_err().to_string();
        assert!(msg.contains("[3, 4]"), "{msg}");
    }

    #[test]
    fn empty_domain_is_data_error() {
        let f = write("f1,f2,domain\n1,2,\n");
        assert!(matches!(
            load_csv(f.path(), &schema(false)),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_csv("/definitely/not/here.csv", &schema(false)).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.to_string().contains("/definitely/not/here.csv"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn save_then_load_is_identity(seed in 0u64..10_000, n in 1usize..12) {
            let mut rng = Rng::new(seed);
            let names = vec!["f1".to_string(), "f2".to_string()];
            let x = rng.gaussian(n, 2).unwrap().scale(1e3 * rng.uniform() + 1e-3);
            let y: Vec<f64> = (0..n).map(|_| rng.normal(0.0, 1.0) / 3.0).collect();
            let a = DomainDataset::new("s1", x.clone(), Some(y), names.clone()).unwrap();
            let b = DomainDataset::new("t", x, None, names).unwrap();
            let f = tempfile::NamedTempFile::new().unwrap();
            let schema = save_csv(f.path(), &[&a, &b], "domain", Some("label")).unwrap();
            let back = load_csv(f.path(), &schema).unwrap();
            prop_assert_eq!(back, vec![a, b]);
        }
    }
}
