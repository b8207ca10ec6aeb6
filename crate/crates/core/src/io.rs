//! File formats: network CSVs, matrix CSVs, the long-format measurement
//! stream, and JSON/CSV reports.
//!
//! Bus and line indices are 1-based in every file. Floats are written with
//! Rust's shortest round-trip formatting (at most 17 significant digits), so
//! a write/read cycle reproduces values bit for bit.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Branch, Network};
use crate::online::RunReport;
use crate::synth::MeasurementStream;

const WECC9_BRANCHES: &str = include_str!("../data/wecc9_branches.csv");
const WECC9_BUSES: &str = include_str!("../data/wecc9_buses.csv");

fn parse_err(path: &str, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        message: message.into(),
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    let mut s = String::new();
    File::open(path)?.read_to_string(&mut s)?;
    Ok(s)
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes())
}

fn check_header(rdr: &mut csv::Reader<&[u8]>, origin: &str, expected: &[&str]) -> Result<()> {
    let h = rdr.headers().map_err(|e| parse_err(origin, 1, e.to_string()))?;
    let got: Vec<&str> = h.iter().collect();
    if got != expected {
        return Err(parse_err(
            origin,
            1,
            format!("expected header {}, found {}", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str, origin: &str, line: u64) -> Result<T> {
    let raw = rec
        .get(i)
        .ok_or_else(|| parse_err(origin, line, format!("missing field {name}")))?;
    raw.parse()
        .map_err(|_| parse_err(origin, line, format!("invalid {name} {raw:?}")))
}

fn parse_bool(raw: &str) -> Option<bool> {
    match raw.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "y" => Some(true),
        "0" | "false" | "no" | "n" | "" => Some(false),
        _ => None,
    }
}

/// A parsed network plus non-fatal warnings (e.g. a defaulted slack bus).
#[derive(Debug, Clone)]
pub struct ParsedNetwork {
    pub network: Network,
    pub warnings: Vec<String>,
}

/// Parses network text. `branches` has header
/// `branch_id,from_bus,to_bus,reactance_pu`; the optional `buses` text has
/// header `bus_id,nominal_injection_pu,is_slack`. `origins` name the sources
/// in error messages.
pub fn parse_network_str(
    branches: &str,
    buses: Option<&str>,
    origins: (&str, &str),
) -> Result<ParsedNetwork> {
    let (bo, uo) = origins;
    let mut rdr = reader(branches);
    check_header(&mut rdr, bo, &["branch_id", "from_bus", "to_bus", "reactance_pu"])?;
    let mut raw = Vec::new();
    let mut ids = HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(bo, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let id: u32 = field(&rec, 0, "branch_id", bo, line)?;
        let from: usize = field(&rec, 1, "from_bus", bo, line)?;
        let to: usize = field(&rec, 2, "to_bus", bo, line)?;
        let x: f64 = field(&rec, 3, "reactance_pu", bo, line)?;
        if !ids.insert(id) {
            return Err(parse_err(bo, line, format!("duplicate branch id {id}")));
        }
        if from == 0 || to == 0 {
            return Err(parse_err(bo, line, format!("branch {id}: bus numbers start at 1")));
        }
        if x == 0.0 || !x.is_finite() {
            return Err(parse_err(bo, line, format!("branch {id} has invalid reactance {x}")));
        }
        raw.push((line, Branch { id, from: from - 1, to: to - 1, reactance: x }));
    }
    if raw.is_empty() {
        return Err(parse_err(bo, 1, "no branches"));
    }

    let mut warnings = Vec::new();
    let mut n_buses = raw.iter().map(|(_, b)| b.from.max(b.to) + 1).max().unwrap_or(0);
    let mut nominal = None;
    let mut slack = None;
    if let Some(text) = buses {
        let mut rdr = reader(text);
        check_header(&mut rdr, uo, &["bus_id", "nominal_injection_pu", "is_slack"])?;
        let mut rows: HashMap<usize, f64> = HashMap::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                parse_err(uo, line, e.to_string())
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            let bus: usize = field(&rec, 0, "bus_id", uo, line)?;
            let p: f64 = field(&rec, 1, "nominal_injection_pu", uo, line)?;
            let flag = rec.get(2).unwrap_or("");
            let is_slack =
                parse_bool(flag).ok_or_else(|| parse_err(uo, line, format!("invalid is_slack {flag:?}")))?;
            if bus == 0 {
                return Err(parse_err(uo, line, "bus numbers start at 1"));
            }
            if rows.insert(bus, p).is_some() {
                return Err(parse_err(uo, line, format!("duplicate bus id {bus}")));
            }
            if is_slack {
                if let Some(prev) = slack {
                    return Err(parse_err(
                        uo,
                        line,
                        format!("bus {bus} marked slack, but bus {} already is", prev + 1),
                    ));
                }
                slack = Some(bus - 1);
            }
        }
        n_buses = n_buses.max(rows.keys().copied().max().unwrap_or(0));
        let mut v = vec![0.0; n_buses];
        for j in 1..=n_buses {
            match rows.get(&j) {
                Some(&p) => v[j - 1] = p,
                None => return Err(parse_err(uo, 0, format!("bus {j} missing from bus file"))),
            }
        }
        nominal = Some(v);
    }
    let slack = slack.unwrap_or_else(|| {
        let msg = "no slack bus given; using bus 1".to_string();
        log::warn!("{msg}");
        warnings.push(msg);
        0
    });

    let branches = raw.into_iter().map(|(_, b)| b).collect();
    let mut network = Network::new(n_buses, branches, slack)?;
    if let Some(v) = nominal {
        network = network.with_nominal_injections(v)?;
    }
    Ok(ParsedNetwork { network, warnings })
}

/// Reads a branch CSV and optional bus CSV from disk.
pub fn parse_network(branches: &Path, buses: Option<&Path>) -> Result<ParsedNetwork> {
    let btext = read_to_string(branches)?;
    let utext = buses.map(read_to_string).transpose()?;
    let bo = branches.display().to_string();
    let uo = buses.map(|p| p.display().to_string()).unwrap_or_default();
    parse_network_str(&btext, utext.as_deref(), (&bo, &uo))
}

/// The WECC 3-machine 9-bus system (100 MVA base, slack at bus 1) with its
/// nominal generation and load as per-unit injections.
pub fn bundled_wecc9() -> Network {
    parse_network_str(WECC9_BRANCHES, Some(WECC9_BUSES), ("wecc9_branches.csv", "wecc9_buses.csv"))
        .expect("bundled network is valid")
        .network
}

/// Raw text of the bundled 9-bus files, (branches, buses).
pub fn bundled_wecc9_text() -> (&'static str, &'static str) {
    (WECC9_BRANCHES, WECC9_BUSES)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes a matrix as headerless CSV, one row per line.
pub fn write_matrix<W: Write>(mut out: W, m: &DMatrix<f64>) -> Result<()> {
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_matrix_file(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    write_matrix(create(path)?, m)
}

/// Parses a headerless numeric CSV into a matrix.
pub fn parse_matrix_str(text: &str, origin: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|c| {
                c.trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(origin, i as u64 + 1, format!("invalid number {:?}", c.trim())))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(
                    origin,
                    i as u64 + 1,
                    format!("expected {} columns, found {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    let c = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(rows.len(), c, |i, j| rows[i][j]))
}

pub fn read_matrix_file(path: &Path) -> Result<DMatrix<f64>> {
    parse_matrix_str(&read_to_string(path)?, &path.display().to_string())
}

/// Writes the long-format stream `k,kind,index,value`. Unavailable flow
/// entries are omitted.
pub fn write_stream<W: Write>(mut out: W, s: &MeasurementStream) -> Result<()> {
    writeln!(out, "k,kind,index,value")?;
    for k in 0..s.steps() {
        for j in 0..s.buses() {
            writeln!(out, "{},p,{},{}", k + 1, j + 1, s.delta_p[(j, k)])?;
        }
        for i in 0..s.lines() {
            if s.mask[(i, k)] {
                writeln!(out, "{},f,{},{}", k + 1, i + 1, s.delta_f[(i, k)])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_stream_file(path: &Path, s: &MeasurementStream) -> Result<()> {
    write_stream(create(path)?, s)
}

/// Parses the long-format stream. Dimensions are inferred from the largest
/// indices present unless `lines` is given (a line that is missing at every
/// step cannot be inferred). Every (k, p, bus) row must be present.
pub fn parse_stream_str(text: &str, origin: &str, lines: Option<usize>) -> Result<MeasurementStream> {
    let mut rdr = reader(text);
    check_header(&mut rdr, origin, &["k", "kind", "index", "value"])?;
    let mut p_rows = HashMap::new();
    let mut f_rows = HashMap::new();
    let (mut steps, mut n, mut l) = (0usize, 0usize, lines.unwrap_or(0));
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(origin, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let k: usize = field(&rec, 0, "k", origin, line)?;
        let kind = rec.get(1).unwrap_or("");
        let idx: usize = field(&rec, 2, "index", origin, line)?;
        let value: f64 = field(&rec, 3, "value", origin, line)?;
        if k == 0 || idx == 0 {
            return Err(parse_err(origin, line, "k and index start at 1"));
        }
        if !value.is_finite() {
            return Err(parse_err(origin, line, format!("non-finite value {value}")));
        }
        let target = match kind {
            "p" => {
                n = n.max(idx);
                &mut p_rows
            }
            "f" => {
                if let Some(lmax) = lines {
                    if idx > lmax {
                        return Err(parse_err(origin, line, format!("line {idx} exceeds {lmax}")));
                    }
                }
                l = l.max(idx);
                &mut f_rows
            }
            other => return Err(parse_err(origin, line, format!("unknown kind {other:?}, expected p or f"))),
        };
        if target.insert((k, idx), value).is_some() {
            return Err(parse_err(origin, line, format!("duplicate row for k={k}, {kind} {idx}")));
        }
        steps = steps.max(k);
    }
    let mut dp = DMatrix::zeros(n, steps);
    for k in 1..=steps {
        for j in 1..=n {
            dp[(j - 1, k - 1)] = *p_rows.get(&(k, j)).ok_or_else(|| {
                parse_err(origin, 0, format!("injection for bus {j} missing at k={k}"))
            })?;
        }
    }
    let mut df = DMatrix::zeros(l, steps);
    let mut mask = DMatrix::from_element(l, steps, false);
    for (&(k, i), &v) in &f_rows {
        df[(i - 1, k - 1)] = v;
        mask[(i - 1, k - 1)] = true;
    }
    MeasurementStream::new(dp, df, mask)
}

pub fn read_stream_file(path: &Path, lines: Option<usize>) -> Result<MeasurementStream> {
    parse_stream_str(&read_to_string(path)?, &path.display().to_string(), lines)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&read_to_string(path)?)?)
}

/// Objective trace as `iteration,objective`; iteration 0 is the start point.
pub fn write_trace<W: Write>(mut out: W, values: &[f64]) -> Result<()> {
    writeln!(out, "iteration,objective")?;
    for (i, v) in values.iter().enumerate() {
        writeln!(out, "{i},{v}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_trace_file(path: &Path, values: &[f64]) -> Result<()> {
    write_trace(create(path)?, values)
}

/// Long-format `step,series,value` rows for plotting a run report.
pub fn write_series<W: Write>(mut out: W, report: &RunReport) -> Result<()> {
    writeln!(out, "step,series,value")?;
    for s in &report.steps {
        writeln!(out, "{},cost,{}", s.k, s.cost)?;
        if let Some(v) = s.re_tracked {
            writeln!(out, "{},re_tracked,{v}", s.k)?;
        }
        if let Some(v) = s.re_tracked_avg {
            writeln!(out, "{},re_tracked_avg,{v}", s.k)?;
        }
        for (j, re) in s.re.iter().enumerate() {
            if let Some(v) = re {
                writeln!(out, "{},re_bus{},{v}", s.k, j + 1)?;
            }
        }
    }
    if let Some(r) = &report.regret {
        for (idx, k) in r.k.iter().enumerate() {
            writeln!(out, "{k},gap,{}", r.gap[idx])?;
            writeln!(out, "{k},regret,{}", r.regret[idx])?;
            writeln!(out, "{k},regret_avg,{}", r.regret_avg[idx])?;
            writeln!(out, "{k},path_length,{}", r.path_length[idx])?;
            writeln!(out, "{k},path_length_sq,{}", r.path_length_sq[idx])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_series_file(path: &Path, report: &RunReport) -> Result<()> {
    write_series(create(path)?, report)
}
