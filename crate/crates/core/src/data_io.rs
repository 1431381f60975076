//! CSV and `key = value` files: datasets, chains, predictions, metrics.
//!
//! Floats are written with the shortest representation that parses back to
//! the same `f64`, so every file round-trips exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{GpParams, SpatialDataset, Split};
use crate::predict::PredictiveSummary;
use crate::sampler::ChainOutput;
use crate::score::PredictionMetrics;

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, line, format!("{other:?}")),
    }
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))
}

fn parse_f64(path: &Path, line: usize, field: &str) -> Result<f64> {
    field
        .parse()
        .map_err(|_| Error::parse(path, line, format!("'{field}' is not a number")))
}

fn record_line(rec: &csv::StringRecord) -> usize {
    rec.position().map_or(0, |p| p.line() as usize)
}

/// Header of a dataset with `dim` coordinates and `n_cov` covariates.
pub fn dataset_header(dim: usize, n_cov: usize) -> Vec<String> {
    let mut h: Vec<String> = (1..=dim).map(|k| format!("s{k}")).collect();
    h.push("y".into());
    h.extend((1..=n_cov).map(|k| format!("x{k}")));
    h.push("split".into());
    h
}

/// Columns `s1..sd,y,x1..xP,split`. The intercept column is implicit.
pub fn write_dataset(path: &Path, data: &SpatialDataset) -> Result<()> {
    let n_cov = data.n_coef() - 1;
    if (0..data.n()).any(|i| data.x_row(i)[0] != 1.0) {
        return Err(Error::input("dataset files store an implicit intercept; column 0 must be all ones"));
    }
    let mut w = writer(path)?;
    w.write_record(dataset_header(data.dim(), n_cov)).map_err(|e| csv_error(path, e))?;
    let mut row = Vec::with_capacity(data.dim() + n_cov + 2);
    for i in 0..data.n() {
        row.clear();
        row.extend(data.location(i).iter().map(f64::to_string));
        row.push(data.y()[i].to_string());
        row.extend(data.x_row(i)[1..].iter().map(f64::to_string));
        let split = data.split().map_or(Split::Train, |s| s[i]);
        row.push(split.as_str().to_string());
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<SpatialDataset> {
    let mut r = reader(path)?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let dim = header.iter().take_while(|h| h.starts_with('s') && h[1..].parse::<usize>().is_ok()).count();
    let n_cov = header.len().saturating_sub(dim + 2);
    if dim == 0 || header.len() < dim + 2 || header != dataset_header(dim, n_cov) {
        return Err(Error::parse(
            path,
            1,
            format!("expected header like {}", dataset_header(dim.max(2), n_cov).join(",")),
        ));
    }
    let (mut locs, mut y, mut cov, mut split) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = record_line(&rec);
        for k in 0..dim {
            locs.push(parse_f64(path, line, &rec[k])?);
        }
        y.push(parse_f64(path, line, &rec[dim])?);
        for k in 0..n_cov {
            cov.push(parse_f64(path, line, &rec[dim + 1 + k])?);
        }
        split.push(
            rec[dim + 1 + n_cov]
                .parse::<Split>()
                .map_err(|e| Error::parse(path, line, e.to_string()))?,
        );
    }
    SpatialDataset::with_intercept(dim, locs, y, &cov, n_cov, Some(split)).map_err(|e| match e {
        Error::Input(msg) => Error::parse(path, 0, msg),
        other => other,
    })
}

/// `<path>.meta`.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

pub fn write_key_values(path: &Path, pairs: &[(String, String)]) -> Result<()> {
    let mut out = String::new();
    for (k, v) in pairs {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(v);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Flat `key = value` lines; `#` starts a comment. Duplicate keys are an error.
pub fn read_key_values(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out: Vec<(String, String)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::parse(path, lineno + 1, "expected 'key = value'"));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::parse(path, lineno + 1, "empty key"));
        }
        if out.iter().any(|(seen, _)| seen == k) {
            return Err(Error::parse(path, lineno + 1, format!("duplicate key '{k}'")));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Draws CSV plus its `.meta` sidecar holding `meta` and the chain's own echo.
pub fn write_chain(path: &Path, chain: &ChainOutput, meta: &[(String, String)]) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["iter".to_string()];
    header.extend(chain.param_names());
    header.extend(["accepted", "batch_size", "wall_ms"].map(String::from));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (t, d) in chain.draws.iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(d.beta.iter().map(f64::to_string));
        row.extend([d.sigma2, d.omega, d.phi].map(|v| v.to_string()));
        row.push(u8::from(chain.accepted[t]).to_string());
        row.push(chain.batch_size[t].to_string());
        row.push(chain.wall_ms[t].to_string());
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let mut pairs = chain.meta.clone();
    pairs.extend(meta.iter().cloned());
    pairs.push(("final_scale_omega".into(), chain.proposal_scales[0].to_string()));
    pairs.push(("final_scale_phi".into(), chain.proposal_scales[1].to_string()));
    write_key_values(&meta_path(path), &pairs)
}

/// A draws file read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainFile {
    pub n_coef: usize,
    pub draws: Vec<GpParams>,
    pub accepted: Vec<bool>,
    pub batch_size: Vec<usize>,
    pub wall_ms: Vec<f64>,
    pub meta: BTreeMap<String, String>,
}

impl ChainFile {
    pub fn meta_value(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::input(format!("draws metadata lacks '{key}'")))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.meta_value(key)?;
        v.parse()
            .map_err(|_| Error::input(format!("draws metadata has a bad value for '{key}': {v}")))
    }
}

pub fn read_chain(path: &Path) -> Result<ChainFile> {
    let mut r = reader(path)?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let n_coef = header.iter().filter(|h| h.starts_with("beta")).count();
    let mut expected = vec!["iter".to_string()];
    expected.extend((0..n_coef).map(|p| format!("beta{p}")));
    expected.extend(["sigma2", "omega", "phi", "accepted", "batch_size", "wall_ms"].map(String::from));
    if n_coef == 0 || header != expected {
        return Err(Error::parse(path, 1, format!("expected header {}", expected.join(","))));
    }
    let mut out = ChainFile {
        n_coef,
        draws: Vec::new(),
        accepted: Vec::new(),
        batch_size: Vec::new(),
        wall_ms: Vec::new(),
        meta: BTreeMap::new(),
    };
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = record_line(&rec);
        let v = |k: usize| parse_f64(path, line, &rec[k]);
        let beta = (0..n_coef).map(|p| v(1 + p)).collect::<Result<Vec<_>>>()?;
        out.draws.push(GpParams {
            beta,
            sigma2: v(n_coef + 1)?,
            omega: v(n_coef + 2)?,
            phi: v(n_coef + 3)?,
        });
        out.accepted.push(match &rec[n_coef + 4] {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(Error::parse(path, line, format!("bad accepted flag '{other}'"))),
        });
        out.batch_size.push(
            rec[n_coef + 5]
                .parse()
                .map_err(|_| Error::parse(path, line, "bad batch size"))?,
        );
        out.wall_ms.push(v(n_coef + 6)?);
    }
    let meta = meta_path(path);
    if meta.exists() {
        out.meta = read_key_values(&meta)?.into_iter().collect();
    }
    Ok(out)
}

/// Columns `s1..sd,truth,mean,sd,lo95,hi95`.
pub fn write_predictions(path: &Path, summary: &PredictiveSummary, truth: &[f64]) -> Result<()> {
    if truth.len() != summary.len() {
        return Err(Error::input("truth and predictions differ in length"));
    }
    let mut w = writer(path)?;
    let mut header: Vec<String> = (1..=summary.dim).map(|k| format!("s{k}")).collect();
    header.extend(["truth", "mean", "sd", "lo95", "hi95"].map(String::from));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for j in 0..summary.len() {
        let mut row: Vec<String> = summary.location(j).iter().map(f64::to_string).collect();
        row.extend(
            [truth[j], summary.mean[j], summary.sd[j], summary.lo95[j], summary.hi95[j]].map(|v| v.to_string()),
        );
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<(PredictiveSummary, Vec<f64>)> {
    let mut r = reader(path)?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let dim = header.len().saturating_sub(5);
    let mut expected: Vec<String> = (1..=dim).map(|k| format!("s{k}")).collect();
    expected.extend(["truth", "mean", "sd", "lo95", "hi95"].map(String::from));
    if dim == 0 || header != expected {
        return Err(Error::parse(path, 1, "expected header s1,...,sd,truth,mean,sd,lo95,hi95"));
    }
    let mut s = PredictiveSummary {
        dim,
        locations: Vec::new(),
        mean: Vec::new(),
        sd: Vec::new(),
        lo95: Vec::new(),
        hi95: Vec::new(),
        draws: None,
    };
    let mut truth = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = record_line(&rec);
        for k in 0..dim {
            s.locations.push(parse_f64(path, line, &rec[k])?);
        }
        truth.push(parse_f64(path, line, &rec[dim])?);
        s.mean.push(parse_f64(path, line, &rec[dim + 1])?);
        let sd = parse_f64(path, line, &rec[dim + 2])?;
        if !(sd >= 0.0) {
            return Err(Error::parse(path, line, "negative predictive sd"));
        }
        s.sd.push(sd);
        s.lo95.push(parse_f64(path, line, &rec[dim + 3])?);
        s.hi95.push(parse_f64(path, line, &rec[dim + 4])?);
    }
    Ok((s, truth))
}

pub const METRICS_HEADER: [&str; 7] = ["label", "mae", "rpmse", "crps", "int", "wid", "cvg"];

/// Append one metrics row, writing the header if the file is new or empty.
pub fn append_metrics(path: &Path, label: &str, m: &PredictionMetrics) -> Result<()> {
    let fresh = fs::metadata(path).map(|md| md.len() == 0).unwrap_or(true);
    let file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(METRICS_HEADER).map_err(|e| csv_error(path, e))?;
    }
    let row = [m.mae, m.rpmse, m.crps, m.int, m.wid, m.cvg].map(|v| v.to_string());
    let mut rec = vec![label.to_string()];
    rec.extend(row);
    w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert_eq, proptest};

    fn dataset(values: &[f64]) -> SpatialDataset {
        let n = values.len();
        let locs: Vec<f64> = (0..n).flat_map(|i| [i as f64 * 0.37 + values[i] * 1e-3, values[i]]).collect();
        let cov: Vec<f64> = values.iter().map(|v| v * 3.1).collect();
        let split = (0..n).map(|i| if i % 3 == 0 { Split::Test } else { Split::Train }).collect();
        SpatialDataset::with_intercept(2, locs, values.to_vec(), &cov, 1, Some(split)).unwrap()
    }

    proptest! {
        #[test]
        fn dataset_round_trip_is_exact(values in proptest::collection::vec(-1e6f64..1e6, 1..30)) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("d.csv");
            let d = dataset(&values);
            write_dataset(&p, &d).unwrap();
            prop_assert_eq!(read_dataset(&p).unwrap(), d);
        }
    }

    #[test]
    fn rejects_bad_headers_and_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "a,b,y,split\n1,2,3,train\n").unwrap();
        assert!(matches!(read_dataset(&p), Err(Error::Parse { .. })));
        fs::write(&p, "s1,s2,y,split\n1,2,abc,train\n").unwrap();
        assert!(matches!(read_dataset(&p), Err(Error::Parse { line: 2, .. })));
        fs::write(&p, "s1,s2,y,split\n1,2,3,validation\n").unwrap();
        assert!(read_dataset(&p).is_err());
        assert!(matches!(read_dataset(&dir.path().join("missing.csv")), Err(Error::Io { .. })));
    }

    #[test]
    fn key_values_parse_and_reject_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.conf");
        fs::write(&p, "# comment\nalgorithm = fb\n\nbatches=4 # trailing\n").unwrap();
        assert_eq!(
            read_key_values(&p).unwrap(),
            vec![("algorithm".into(), "fb".into()), ("batches".into(), "4".into())]
        );
        fs::write(&p, "a = 1\na = 2\n").unwrap();
        assert!(read_key_values(&p).is_err());
        fs::write(&p, "no equals sign\n").unwrap();
        assert!(read_key_values(&p).is_err());
    }

    #[test]
    fn chain_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("draws.csv");
        let chain = ChainOutput {
            n_coef: 2,
            draws: vec![
                GpParams { beta: vec![0.1, -2.0 / 3.0], sigma2: 1.25, omega: 0.5, phi: 0.236 },
                GpParams { beta: vec![1e-17, 3.0], sigma2: 0.9, omega: 0.4, phi: 0.3 },
            ],
            accepted: vec![false, true],
            batch_size: vec![100, 200],
            wall_ms: vec![0.5, 0.25],
            seed: 4,
            burn_in: 1,
            proposal_scales: [0.2, 0.3],
            meta: vec![("algorithm".into(), "nn".into())],
        };
        write_chain(&p, &chain, &[("kernel".into(), "exponential".into())]).unwrap();
        let back = read_chain(&p).unwrap();
        assert_eq!(back.draws, chain.draws);
        assert_eq!(back.accepted, chain.accepted);
        assert_eq!(back.batch_size, chain.batch_size);
        assert_eq!(back.wall_ms, chain.wall_ms);
        assert_eq!(back.meta_value("kernel").unwrap(), "exponential");
        assert_eq!(back.meta_parse::<f64>("final_scale_phi").unwrap(), 0.3);
    }

    #[test]
    fn predictions_and_metrics_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pred.csv");
        let s = PredictiveSummary {
            dim: 2,
            locations: vec![0.1, 0.2, 0.3, 0.4],
            mean: vec![1.0, 2.0],
            sd: vec![0.5, 0.25],
            lo95: vec![0.0, 1.5],
            hi95: vec![2.0, 2.5],
            draws: None,
        };
        write_predictions(&p, &s, &[1.1, 2.2]).unwrap();
        let (back, truth) = read_predictions(&p).unwrap();
        assert_eq!(back, s);
        assert_eq!(truth, vec![1.1, 2.2]);
        let m = dir.path().join("m.csv");
        let metrics = PredictionMetrics { mae: 1.0, rpmse: 2.0, crps: 3.0, int: 4.0, wid: 5.0, cvg: 0.5 };
        append_metrics(&m, "a", &metrics).unwrap();
        append_metrics(&m, "b", &metrics).unwrap();
        let text = fs::read_to_string(&m).unwrap();
        assert_eq!(text, "label,mae,rpmse,crps,int,wid,cvg\na,1,2,3,4,5,0.5\nb,1,2,3,4,5,0.5\n");
    }
}
