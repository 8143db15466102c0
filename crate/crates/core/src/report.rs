//! Per-rank results, run aggregates, scaling tables and their file formats.
//!
//! Two aggregate bandwidths are reported per kernel, both over the total bytes
//! all ranks moved: the mean-time figure divides by the mean per-rank time,
//! the conservative one by the slowest rank's time.
//!
//! Formats: a JSON document per run (metadata, rank records, aggregates) and
//! comma-separated tables. Table floats are written with 17 significant
//! digits; JSON uses shortest round-trip formatting, non-finite values as
//! strings.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::dmap::Map;
use crate::fsum::ExactSum;
use crate::runtime::Triples;
use crate::stream::{bytes_moved, Bandwidths, Kernel, StreamTimes, ValidationReport};

pub const TABLE_HEADER: &str = "np,nodes,ppn,tpn,n_global,n_trials,bw_copy,bw_scale,bw_add,bw_triad,bw_copy_cons,bw_scale_cons,bw_add_cons,bw_triad_cons,validated";

pub const RANKS_HEADER: &str = "run_id,pid,host,local_elements,threads,n_trials,t_copy,t_scale,t_add,t_triad,bw_copy,bw_scale,bw_add,bw_triad,max_rel_err_a,max_rel_err_b,max_rel_err_c,tolerance,validated,checksum,checksum_partials,wall_start,wall_end,pinning";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReportError {
    #[error("no rank results to aggregate")]
    EmptyInput,
    #[error("rank results come from different runs: {0:?}")]
    MixedRunIds(Vec<String>),
    #[error("inconsistent sweep: {0}")]
    InconsistentSweep(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

/// Parse failure with its location.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}, field '{field}': {message}")]
pub struct ParseError {
    pub line: usize,
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            other => Err(format!("unknown format '{other}' (expected json or csv)")),
        }
    }
}

/// f64 that survives JSON even when non-finite.
mod lossless {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(|_| serde::de::Error::custom(format!("not a number: '{t}'"))),
        }
    }
}

/// Validation outcome as stored in reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub pass: bool,
    #[serde(with = "lossless")]
    pub max_rel_err_a: f64,
    #[serde(with = "lossless")]
    pub max_rel_err_b: f64,
    #[serde(with = "lossless")]
    pub max_rel_err_c: f64,
    pub tolerance: f64,
}

impl From<ValidationReport> for ValidationRecord {
    fn from(v: ValidationReport) -> Self {
        ValidationRecord {
            pass: v.pass,
            max_rel_err_a: v.max_rel_err_a,
            max_rel_err_b: v.max_rel_err_b,
            max_rel_err_c: v.max_rel_err_c,
            tolerance: v.tolerance,
        }
    }
}

/// What one pid measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankResult {
    pub run_id: String,
    pub pid: usize,
    pub host: String,
    pub local_elements: usize,
    pub threads: usize,
    pub n_trials: usize,
    pub times: StreamTimes,
    pub bandwidths: Bandwidths,
    pub validation: ValidationRecord,
    /// Sum of the owned elements of A, B and C after the run.
    #[serde(with = "lossless")]
    pub checksum: f64,
    /// Exact form of `checksum`, so rank sums combine without rounding.
    #[serde(default)]
    pub checksum_partials: Vec<f64>,
    /// Unix seconds around the timed section.
    pub wall_start: f64,
    pub wall_end: f64,
    pub pinning: String,
}

impl RankResult {
    pub fn bytes(&self, k: Kernel) -> f64 {
        bytes_moved(k, self.local_elements, self.n_trials)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: String,
    pub np: usize,
    pub n_global: usize,
    pub map: Map,
    pub config: RunConfig,
}

impl RunMeta {
    pub fn new(run_id: impl Into<String>, config: &RunConfig) -> Result<Self, crate::dmap::MapError> {
        Ok(RunMeta { run_id: run_id.into(), np: config.np(), n_global: config.n_global(), map: config.map()?, config: config.clone() })
    }

    pub fn triples(&self) -> Triples {
        self.config.triples
    }

    pub fn n_trials(&self) -> usize {
        self.config.n_trials
    }

    pub fn q(&self) -> f64 {
        self.config.q
    }

    pub fn n_per_proc(&self) -> usize {
        self.config.n_per_proc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelAggregate {
    pub total_bytes: f64,
    /// Total bytes over the mean rank time.
    pub bw_mean_time: f64,
    /// Total bytes over the slowest rank's time.
    pub bw_conservative: f64,
    pub rank_bw_min: f64,
    pub rank_bw_mean: f64,
    pub rank_bw_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub meta: RunMeta,
    pub copy: KernelAggregate,
    pub scale: KernelAggregate,
    pub add: KernelAggregate,
    pub triad: KernelAggregate,
    pub validated: bool,
    #[serde(with = "lossless")]
    pub checksum: f64,
    pub ranks: Vec<RankResult>,
}

impl AggregateReport {
    pub fn kernel(&self, k: Kernel) -> &KernelAggregate {
        match k {
            Kernel::Copy => &self.copy,
            Kernel::Scale => &self.scale,
            Kernel::Add => &self.add,
            Kernel::Triad => &self.triad,
        }
    }

    pub fn table_row(&self) -> TableRow {
        let t = self.meta.triples();
        TableRow {
            np: self.meta.np,
            nodes: t.n_node,
            ppn: t.n_ppn,
            tpn: t.n_tpn,
            n_global: self.meta.n_global,
            n_trials: self.meta.n_trials(),
            bw: Bandwidths::from_fn(|k| self.kernel(k).bw_mean_time),
            bw_cons: Bandwidths::from_fn(|k| self.kernel(k).bw_conservative),
            validated: self.validated,
        }
    }
}

fn aggregate_kernel(ranks: &[RankResult], k: Kernel) -> KernelAggregate {
    let n = ranks.len() as f64;
    let total_bytes: f64 = ranks.iter().map(|r| r.bytes(k)).sum();
    let mean_t = ranks.iter().map(|r| r.times.get(k)).sum::<f64>() / n;
    let max_t = ranks.iter().map(|r| r.times.get(k)).fold(0.0, f64::max);
    let bws = ranks.iter().map(|r| r.bandwidths.get(k));
    KernelAggregate {
        total_bytes,
        bw_mean_time: total_bytes / mean_t,
        bw_conservative: total_bytes / max_t,
        rank_bw_min: bws.clone().fold(f64::INFINITY, f64::min),
        rank_bw_mean: bws.clone().sum::<f64>() / n,
        rank_bw_max: bws.fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Exact total of the rank checksums; ranks without partials count by value.
fn combined_checksum(ranks: &[RankResult]) -> f64 {
    let mut total = ExactSum::new();
    for r in ranks {
        if r.checksum_partials.is_empty() || !r.checksum.is_finite() {
            total.add(r.checksum);
        } else {
            total.merge(&ExactSum::from_partials(&r.checksum_partials));
        }
    }
    total.value()
}

/// Combines rank results (any order) into a run report. Pure.
pub fn aggregate(meta: RunMeta, ranks: Vec<RankResult>) -> Result<AggregateReport, ReportError> {
    if ranks.is_empty() {
        return Err(ReportError::EmptyInput);
    }
    let mut ids: Vec<String> = ranks.iter().map(|r| r.run_id.clone()).chain([meta.run_id.clone()]).collect();
    ids.sort();
    ids.dedup();
    if ids.len() > 1 {
        return Err(ReportError::MixedRunIds(ids));
    }
    let mut ranks = ranks;
    ranks.sort_by_key(|r| r.pid);
    Ok(AggregateReport {
        copy: aggregate_kernel(&ranks, Kernel::Copy),
        scale: aggregate_kernel(&ranks, Kernel::Scale),
        add: aggregate_kernel(&ranks, Kernel::Add),
        triad: aggregate_kernel(&ranks, Kernel::Triad),
        validated: ranks.iter().all(|r| r.validation.pass),
        checksum: combined_checksum(&ranks),
        meta,
        ranks,
    })
}

/// One scaling-table line. Mean-time and conservative bandwidths per kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableRow {
    pub np: usize,
    pub nodes: usize,
    pub ppn: usize,
    pub tpn: usize,
    pub n_global: usize,
    pub n_trials: usize,
    pub bw: Bandwidths,
    pub bw_cons: Bandwidths,
    pub validated: bool,
}

impl TableRow {
    /// Placeholder for a sweep point whose run failed: NaN bandwidths.
    pub fn failed(triples: Triples, n_per_proc: usize, n_trials: usize) -> Self {
        let nan = Bandwidths::from_fn(|_| f64::NAN);
        TableRow {
            np: triples.np(),
            nodes: triples.n_node,
            ppn: triples.n_ppn,
            tpn: triples.n_tpn,
            n_global: n_per_proc * triples.np(),
            n_trials,
            bw: nan,
            bw_cons: nan,
            validated: false,
        }
    }

    pub fn is_failure_marker(&self) -> bool {
        !self.validated && self.bw.bw_triad.is_nan()
    }

    /// Bitwise equality, NaN included.
    pub fn same_bits(&self, other: &TableRow) -> bool {
        let f = |r: &TableRow| {
            Kernel::ALL.iter().flat_map(|&k| [r.bw.get(k).to_bits(), r.bw_cons.get(k).to_bits()]).collect::<Vec<_>>()
        };
        (self.np, self.nodes, self.ppn, self.tpn, self.n_global, self.n_trials, self.validated)
            == (other.np, other.nodes, other.ppn, other.tpn, other.n_global, other.n_trials, other.validated)
            && f(self) == f(other)
    }
}

/// Orders sweep rows by process count. All rows must share the per-process
/// size and trial count.
pub fn to_table(rows: &[TableRow]) -> Result<Vec<TableRow>, ReportError> {
    let Some(first) = rows.first() else {
        return Err(ReportError::EmptyInput);
    };
    let per_proc = |r: &TableRow| (r.n_global / r.np.max(1), r.n_global % r.np.max(1));
    for r in rows {
        if per_proc(r) != per_proc(first) || r.n_trials != first.n_trials {
            return Err(ReportError::InconsistentSweep(format!(
                "np={} has N={} Nt={}, np={} has N={} Nt={}",
                first.np, first.n_global, first.n_trials, r.np, r.n_global, r.n_trials
            )));
        }
    }
    let mut out = rows.to_vec();
    out.sort_by_key(|r| r.np);
    if let Some(w) = out.windows(2).find(|w| w[0].np == w[1].np) {
        return Err(ReportError::InconsistentSweep(format!("np={} appears twice", w[0].np)));
    }
    Ok(out)
}

pub fn report_table(reports: &[AggregateReport]) -> Result<Vec<TableRow>, ReportError> {
    to_table(&reports.iter().map(AggregateReport::table_row).collect::<Vec<_>>())
}

fn fmt_f64(v: f64) -> String {
    // 17 significant digits
    format!("{v:.16e}")
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new())
}

fn finish(mut w: csv::Writer<Vec<u8>>, header: &str) -> String {
    w.flush().expect("in-memory writer");
    let body = String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf8 fields");
    format!("{header}\n{body}")
}

pub fn write_table(rows: &[TableRow]) -> String {
    let mut w = csv_writer();
    for r in rows {
        let mut rec: Vec<String> =
            [r.np, r.nodes, r.ppn, r.tpn, r.n_global, r.n_trials].iter().map(ToString::to_string).collect();
        rec.extend(Kernel::ALL.iter().map(|&k| fmt_f64(r.bw.get(k))));
        rec.extend(Kernel::ALL.iter().map(|&k| fmt_f64(r.bw_cons.get(k))));
        rec.push(r.validated.to_string());
        w.write_record(&rec).expect("in-memory writer");
    }
    finish(w, TABLE_HEADER)
}

/// Reads CSV with a fixed header and hands each record to `row`.
fn read_csv<T>(text: &str, header: &str, mut row: impl FnMut(&mut Fields<'_>) -> Result<T, ParseError>) -> Result<Vec<T>, ParseError> {
    let mut lines = text.lines();
    let got = lines.next().unwrap_or("").trim_end_matches('\r');
    if got != header {
        return Err(ParseError { line: 1, field: "header".into(), message: format!("expected '{header}', got '{got}'") });
    }
    let names: Vec<&str> = header.split(',').collect();
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| ParseError {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            field: "record".into(),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != names.len() {
            return Err(ParseError { line, field: "record".into(), message: format!("{} fields, expected {}", rec.len(), names.len()) });
        }
        out.push(row(&mut Fields { rec: &rec, names: &names, line, next: 0 })?);
    }
    Ok(out)
}

struct Fields<'a> {
    rec: &'a csv::StringRecord,
    names: &'a [&'a str],
    line: usize,
    next: usize,
}

impl Fields<'_> {
    fn take<T: FromStr>(&mut self) -> Result<T, ParseError>
    where
        T::Err: fmt::Display,
    {
        let i = self.next;
        self.next += 1;
        let raw = &self.rec[i];
        raw.parse().map_err(|e: T::Err| ParseError {
            line: self.line,
            field: self.names[i].to_string(),
            message: format!("cannot parse '{raw}': {e}"),
        })
    }

    fn bandwidths(&mut self) -> Result<Bandwidths, ParseError> {
        Ok(Bandwidths { bw_copy: self.take()?, bw_scale: self.take()?, bw_add: self.take()?, bw_triad: self.take()? })
    }
}

pub fn parse_table(text: &str) -> Result<Vec<TableRow>, ParseError> {
    read_csv(text, TABLE_HEADER, |f| {
        Ok(TableRow {
            np: f.take()?,
            nodes: f.take()?,
            ppn: f.take()?,
            tpn: f.take()?,
            n_global: f.take()?,
            n_trials: f.take()?,
            bw: f.bandwidths()?,
            bw_cons: f.bandwidths()?,
            validated: f.take()?,
        })
    })
}

pub fn write_ranks(ranks: &[RankResult]) -> String {
    let mut w = csv_writer();
    for r in ranks {
        let mut rec = vec![
            r.run_id.clone(),
            r.pid.to_string(),
            r.host.clone(),
            r.local_elements.to_string(),
            r.threads.to_string(),
            r.n_trials.to_string(),
        ];
        rec.extend(Kernel::ALL.iter().map(|&k| fmt_f64(r.times.get(k))));
        rec.extend(Kernel::ALL.iter().map(|&k| fmt_f64(r.bandwidths.get(k))));
        let v = &r.validation;
        rec.extend([v.max_rel_err_a, v.max_rel_err_b, v.max_rel_err_c, v.tolerance].map(fmt_f64));
        rec.push(v.pass.to_string());
        rec.push(fmt_f64(r.checksum));
        rec.push(r.checksum_partials.iter().map(|&p| fmt_f64(p)).collect::<Vec<_>>().join(";"));
        rec.extend([r.wall_start, r.wall_end].map(fmt_f64));
        rec.push(r.pinning.clone());
        w.write_record(&rec).expect("in-memory writer");
    }
    finish(w, RANKS_HEADER)
}

struct Partials(Vec<f64>);

impl FromStr for Partials {
    type Err = std::num::ParseFloatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split(';').filter(|p| !p.is_empty()).map(str::parse).collect::<Result<_, _>>().map(Partials)
    }
}

pub fn parse_ranks(text: &str) -> Result<Vec<RankResult>, ParseError> {
    read_csv(text, RANKS_HEADER, |f| {
        let run_id = f.take()?;
        let pid = f.take()?;
        let host = f.take()?;
        let local_elements = f.take()?;
        let threads = f.take()?;
        let n_trials = f.take()?;
        let times = StreamTimes { t_copy: f.take()?, t_scale: f.take()?, t_add: f.take()?, t_triad: f.take()? };
        let bandwidths = f.bandwidths()?;
        let (max_rel_err_a, max_rel_err_b, max_rel_err_c, tolerance) = (f.take()?, f.take()?, f.take()?, f.take()?);
        let pass = f.take()?;
        Ok(RankResult {
            run_id,
            pid,
            host,
            local_elements,
            threads,
            n_trials,
            times,
            bandwidths,
            validation: ValidationRecord { pass, max_rel_err_a, max_rel_err_b, max_rel_err_c, tolerance },
            checksum: f.take()?,
            checksum_partials: f.take::<Partials>()?.0,
            wall_start: f.take()?,
            wall_end: f.take()?,
            pinning: f.take()?,
        })
    })
}

fn json_error(e: serde_path_to_error::Error<serde_json::Error>) -> ParseError {
    let path = e.path().to_string();
    let inner = e.into_inner();
    ParseError { line: inner.line(), field: path, message: inner.to_string() }
}

pub fn report_to_json(report: &AggregateReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes")
}

pub fn report_from_json(text: &str) -> Result<AggregateReport, ParseError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(json_error)
}

pub fn ranks_to_json(ranks: &[RankResult]) -> String {
    serde_json::to_string_pretty(ranks).expect("ranks serialize")
}

pub fn ranks_from_json(text: &str) -> Result<Vec<RankResult>, ParseError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(json_error)
}

/// A report in `format`. The CSV form is the report's scaling-table row.
pub fn serialize(report: &AggregateReport, format: Format) -> Vec<u8> {
    match format {
        Format::Json => report_to_json(report).into_bytes(),
        Format::Csv => write_table(&[report.table_row()]).into_bytes(),
    }
}

/// What a serialized report file contains.
#[derive(Debug, Clone, PartialEq)]
pub enum Document {
    Report(Box<AggregateReport>),
    Table(Vec<TableRow>),
}

pub fn deserialize(bytes: &[u8], format: Format) -> Result<Document, ParseError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| ParseError { line: 0, field: "document".into(), message: e.to_string() })?;
    match format {
        Format::Json => report_from_json(text).map(|r| Document::Report(Box::new(r))),
        Format::Csv => parse_table(text).map(Document::Table),
    }
}
