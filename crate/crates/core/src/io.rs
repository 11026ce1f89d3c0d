//! Tabular readers and writers for the CLI artifacts, price ingestion and
//! the flat `key = value` configuration format.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::sampler::{PosteriorDraws, PosteriorSummary};
use crate::spectral::TvSpectrum;

fn parse_err(location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        location: location.into(),
        message: message.into(),
    }
}

/// Percent log-returns of a cleaned price column.
#[derive(Clone, Debug, PartialEq)]
pub struct ReturnsSeries {
    /// ISO-8601 date of each return (the later of the two prices); empty
    /// when no date column was given.
    pub dates: Vec<String>,
    pub returns: Vec<f64>,
    pub squared: Option<Vec<f64>>,
    /// Prices that survived cleaning; `returns.len() == prices.len() - 1`.
    pub prices: Vec<f64>,
    /// 1-based file line numbers of dropped rows (the header is line 1).
    pub dropped_rows: Vec<usize>,
}

impl ReturnsSeries {
    /// The returns, or the squared returns when `squared` is set.
    pub fn series(&self, squared: bool) -> Vec<f64> {
        if squared {
            self.returns.iter().map(|r| r * r).collect()
        } else {
            self.returns.clone()
        }
    }
}

fn parse_date(s: &str) -> Option<String> {
    let s = s.trim();
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Some(d.format("%Y-%m-%d").to_string());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S%.f"] {
        if let Ok(d) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(d.format("%Y-%m-%dT%H:%M:%S").to_string());
        }
    }
    chrono::DateTime::parse_from_rfc3339(s)
        .ok()
        .map(|d| d.naive_utc().format("%Y-%m-%dT%H:%M:%S").to_string())
}

/// Read prices from CSV and convert to `r_t = 100 (ln p_t - ln p_{t-1})`.
///
/// Rows with a missing, unparseable or nonpositive price are dropped with a
/// warning naming the line. A missing column, an unparseable date or fewer
/// than `min_rows` usable prices is an error.
pub fn ingest_reader<R: Read>(
    input: R,
    price_col: &str,
    date_col: Option<&str>,
    min_rows: usize,
    with_squared: bool,
) -> Result<ReturnsSeries> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::InvalidInput(format!("column '{name}' not found in header")))
    };
    let p_idx = find(price_col)?;
    let d_idx = date_col.map(find).transpose()?;

    let mut prices = Vec::new();
    let mut dates = Vec::new();
    let mut dropped = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(format!("line {line}"), e.to_string()))?;
        let date = match d_idx {
            Some(j) => {
                let raw = rec.get(j).unwrap_or("").trim();
                match parse_date(raw) {
                    Some(d) => Some(d),
                    None => {
                        return Err(parse_err(
                            format!("line {line}"),
                            format!("unparseable date '{raw}'"),
                        ))
                    }
                }
            }
            None => None,
        };
        let raw = rec.get(p_idx).unwrap_or("").trim();
        match raw.parse::<f64>() {
            Ok(p) if p.is_finite() && p > 0.0 => {
                prices.push(p);
                if let Some(d) = date {
                    dates.push(d);
                }
            }
            _ => {
                log::warn!("line {line}: dropping row with price '{raw}'");
                dropped.push(line);
            }
        }
    }
    if !dropped.is_empty() {
        log::warn!(
            "dropped {} of {} rows; returns across each gap span two periods",
            dropped.len(),
            prices.len() + dropped.len()
        );
    }
    if prices.len() < min_rows.max(2) {
        return invalid(format!(
            "{} usable prices, need at least {}",
            prices.len(),
            min_rows.max(2)
        ));
    }
    let returns: Vec<f64> = prices
        .windows(2)
        .map(|w| 100.0 * (w[1].ln() - w[0].ln()))
        .collect();
    let squared = with_squared.then(|| returns.iter().map(|r| r * r).collect());
    if !dates.is_empty() {
        dates.remove(0);
    }
    Ok(ReturnsSeries {
        dates,
        returns,
        squared,
        prices,
        dropped_rows: dropped,
    })
}

pub fn ingest_csv(
    path: &Path,
    price_col: &str,
    date_col: Option<&str>,
    min_rows: usize,
    with_squared: bool,
) -> Result<ReturnsSeries> {
    let file = File::open(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    ingest_reader(BufReader::new(file), price_col, date_col, min_rows, with_squared)
}

/// Column names of a CSV file's header row.
pub fn csv_headers(path: &Path) -> Result<Vec<String>> {
    let mut rdr = csv::Reader::from_path(path)?;
    Ok(rdr.headers()?.iter().map(|h| h.trim().to_string()).collect())
}

#[derive(Serialize, Deserialize)]
struct SeriesRow {
    t: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    date: Option<String>,
    value: f64,
}

/// Series as `t,value` (or `t,date,value` when dates are given), t 1-based.
pub fn write_series<W: Write>(values: &[f64], dates: Option<&[String]>, out: W) -> Result<()> {
    if let Some(d) = dates {
        if d.len() != values.len() {
            return invalid("dates and values differ in length");
        }
    }
    let mut w = csv::Writer::from_writer(out);
    for (i, &value) in values.iter().enumerate() {
        w.serialize(SeriesRow {
            t: i + 1,
            date: dates.map(|d| d[i].clone()),
            value,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Values of a series file, checked to be in order `t = 1, 2, ...`.
pub fn read_series<R: Read>(input: R) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<SeriesRow>().enumerate() {
        let row = row.map_err(|e| parse_err(format!("line {}", i + 2), e.to_string()))?;
        if row.t != i + 1 || !row.value.is_finite() {
            return Err(parse_err(format!("line {}", i + 2), "expected consecutive t and a finite value"));
        }
        out.push(row.value);
    }
    if out.is_empty() {
        return invalid("series file has no rows");
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct PowerRow {
    t: usize,
    nu: f64,
    power: f64,
}

/// Time-varying spectrum as `t,nu,power`, time-major.
pub fn write_tvspectrum<W: Write>(spec: &TvSpectrum, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (ti, &t) in spec.time_grid().iter().enumerate() {
        for (&nu, &power) in spec.freq_grid().iter().zip(spec.row(ti)) {
            w.serialize(PowerRow { t, nu, power })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Rebuild grids from long-format rows. Frequencies must repeat in the same
/// order for every time.
fn grid_from_rows(rows: Vec<(usize, f64, f64)>) -> Result<(Vec<usize>, Vec<f64>, Vec<f64>)> {
    let Some(&(t0, _, _)) = rows.first() else {
        return invalid("spectrum file has no rows");
    };
    let freqs: Vec<f64> = rows.iter().take_while(|r| r.0 == t0).map(|r| r.1).collect();
    let nf = freqs.len();
    if !rows.len().is_multiple_of(nf) {
        return invalid("spectrum file is not a full time x frequency grid");
    }
    let mut times = Vec::with_capacity(rows.len() / nf);
    for (b, block) in rows.chunks(nf).enumerate() {
        let t = block[0].0;
        if block.iter().zip(&freqs).any(|(r, &f)| r.0 != t || r.1 != f) {
            return Err(parse_err(
                format!("line {}", b * nf + 2),
                "frequencies must repeat identically for every time",
            ));
        }
        times.push(t);
    }
    let values = rows.into_iter().map(|r| r.2).collect();
    Ok((times, freqs, values))
}

pub fn read_tvspectrum<R: Read>(input: R) -> Result<TvSpectrum> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for (i, row) in rdr.deserialize::<PowerRow>().enumerate() {
        let r = row.map_err(|e| parse_err(format!("line {}", i + 2), e.to_string()))?;
        rows.push((r.t, r.nu, r.power));
    }
    let (times, freqs, power) = grid_from_rows(rows)?;
    TvSpectrum::new(times, freqs, power)
}

#[derive(Serialize, Deserialize)]
struct SpectrogramRow {
    t: usize,
    nu: f64,
    log_f: f64,
    lower90: Option<f64>,
    upper90: Option<f64>,
}

/// Posterior spectrogram with optional 90% band, all on the log scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub mean: TvSpectrum,
    pub lower90: Option<Vec<f64>>,
    pub upper90: Option<Vec<f64>>,
}

impl Spectrogram {
    pub fn from_summary(s: &PosteriorSummary) -> Self {
        Self {
            mean: s.mean.clone(),
            lower90: s.lower90.clone(),
            upper90: s.upper90.clone(),
        }
    }
}

/// Spectrogram as `t,nu,log_f,lower90,upper90`; the band columns are the
/// natural log of the band limits and are empty when no band was computed.
pub fn write_spectrogram<W: Write>(s: &Spectrogram, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let nf = s.mean.n_freqs();
    for (ti, &t) in s.mean.time_grid().iter().enumerate() {
        for (fi, (&nu, &p)) in s.mean.freq_grid().iter().zip(s.mean.row(ti)).enumerate() {
            let idx = ti * nf + fi;
            w.serialize(SpectrogramRow {
                t,
                nu,
                log_f: p.ln(),
                lower90: s.lower90.as_ref().map(|v| v[idx].ln()),
                upper90: s.upper90.as_ref().map(|v| v[idx].ln()),
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_spectrogram<R: Read>(input: R) -> Result<Spectrogram> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for (i, row) in rdr.deserialize::<SpectrogramRow>().enumerate() {
        let r = row.map_err(|e| parse_err(format!("line {}", i + 2), e.to_string()))?;
        rows.push((r.t, r.nu, r.log_f.exp()));
        lower.push(r.lower90.map(f64::exp));
        upper.push(r.upper90.map(f64::exp));
    }
    let band = |v: Vec<Option<f64>>| -> Result<Option<Vec<f64>>> {
        match v.iter().filter(|x| x.is_some()).count() {
            0 => Ok(None),
            n if n == v.len() => Ok(Some(v.into_iter().flatten().collect())),
            _ => invalid("band columns are partially filled"),
        }
    };
    let (lower90, upper90) = (band(lower)?, band(upper)?);
    let (times, freqs, power) = grid_from_rows(rows)?;
    Ok(Spectrogram {
        mean: TvSpectrum::new(times, freqs, power)?,
        lower90,
        upper90,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KHistRow {
    pub k: usize,
    pub count: usize,
    pub probability: f64,
}

/// Posterior histogram of the segment count, `k,count,probability`.
pub fn write_k_hist<W: Write>(draws: &PosteriorDraws, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let probs = draws.k_probabilities();
    for (k, (&count, &probability)) in draws.k_counts.iter().zip(&probs).enumerate().skip(1) {
        w.serialize(KHistRow { k, count, probability })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_k_hist<R: Read>(input: R) -> Result<Vec<KHistRow>> {
    read_rows(input)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutpointRow {
    pub iteration: usize,
    pub k: usize,
    /// 1-based index of the interior cutpoint.
    pub index: usize,
    /// Last time index of the segment to the left.
    pub cutpoint: usize,
}

/// Interior cutpoints of every retained state, one row per cutpoint.
pub fn write_cutpoints<W: Write>(draws: &PosteriorDraws, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if draws.states.is_empty() {
        w.write_record(["iteration", "k", "index", "cutpoint"])?;
    }
    for r in &draws.states {
        for (i, &c) in r.state.partition.interior().iter().enumerate() {
            w.serialize(CutpointRow {
                iteration: r.iteration,
                k: r.state.n_segments(),
                index: i + 1,
                cutpoint: c,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_cutpoints<R: Read>(input: R) -> Result<Vec<CutpointRow>> {
    read_rows(input)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub k: usize,
    /// 1-based segment number.
    pub segment: usize,
    pub start: usize,
    pub end: usize,
    pub alpha0: f64,
    pub tau2: f64,
}

/// Per-segment `alpha0` and `tau2` of every retained state. `start` and
/// `end` are the segment's 1-based first and last time index.
pub fn write_traces<W: Write>(draws: &PosteriorDraws, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if draws.states.is_empty() {
        w.write_record(["iteration", "k", "segment", "start", "end", "alpha0", "tau2"])?;
    }
    for r in &draws.states {
        let k = r.state.n_segments();
        for (s, p) in r.state.segments.iter().enumerate() {
            let range = r.state.partition.segment(s);
            w.serialize(TraceRow {
                iteration: r.iteration,
                k,
                segment: s + 1,
                start: range.start + 1,
                end: range.end,
                alpha0: p.alpha0,
                tau2: p.tau2,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_traces<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    read_rows(input)
}

fn read_rows<R: Read, T: for<'de> Deserialize<'de>>(input: R) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_reader(input);
    rdr.deserialize::<T>()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| parse_err(format!("line {}", i + 2), e.to_string())))
        .collect()
}

/// Flat `key = value` settings. Blank lines and lines starting with `#`
/// are ignored; keys may appear once.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues(pub BTreeMap<String, String>);

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(parse_err(format!("line {}", i + 1), "expected key = value"));
            };
            let k = k.trim();
            if k.is_empty() {
                return Err(parse_err(format!("line {}", i + 1), "empty key"));
            }
            if map.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(parse_err(format!("line {}", i + 1), format!("duplicate key '{k}'")));
            }
        }
        Ok(Self(map))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.0.insert(key.to_string(), value.to_string());
    }

    /// Sorted `key = value` lines.
    pub fn render(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
