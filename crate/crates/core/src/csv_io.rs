//! CSV ingestion and serialization for panels, loadings, and fit output.
//!
//! Schemas (all files carry a header row, ISO-8601 dates, UTF-8):
//! - `prices.csv`: `date,security_id,close,volume,shares_outstanding`
//! - `fundamentals.csv`: `date,security_id,field,value`
//! - `memberships.csv`: `security_id,dimension,label,weight`
//! - `benchmark.csv`: `date,return`
//! - `loadings.csv`: `date,security_id,factor,raw,normalized`
//! - `factor_returns.csv`: `date,factor_type,factor_name,value`
//! - `residuals.csv`: `date,security_id,residual`
//!
//! Floats are written with the shortest representation that parses back
//! to the same value, so writing and reloading round-trips exactly.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use csv::StringRecord;

use crate::cross_section::CrossSectionFit;
use crate::error::{Error, Result};
use crate::loadings::{LoadingMatrix, LoadingStore, StyleFactor};
use crate::panel::{FundamentalField, PanelDataset, SecurityInput};

/// One parsed `factor_returns.csv` row.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorReturnRecord {
    pub date: NaiveDate,
    pub factor_type: String,
    pub factor_name: String,
    pub value: f64,
}

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A CSV reader that checks the header and tracks line numbers.
struct TableReader {
    path: PathBuf,
    reader: csv::Reader<fs::File>,
}

impl TableReader {
    fn open(path: &Path, expected_header: &[&str]) -> Result<TableReader> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(false)
            .from_path(path)
            .map_err(|e| match e.into_kind() {
                csv::ErrorKind::Io(io) => io_error(path, io),
                other => parse_error(path, 1, format!("{other:?}")),
            })?;
        let headers = reader
            .headers()
            .map_err(|e| parse_error(path, 1, e.to_string()))?;
        let got: Vec<&str> = headers.iter().map(str::trim).collect();
        if got != expected_header {
            return Err(parse_error(
                path,
                1,
                format!(
                    "header is '{}', expected '{}'",
                    got.join(","),
                    expected_header.join(",")
                ),
            ));
        }
        Ok(TableReader {
            path: path.to_path_buf(),
            reader,
        })
    }

    /// Applies `row` to every record, passing the 1-based line number.
    fn for_each(mut self, mut row: impl FnMut(u64, &StringRecord) -> Result<()>) -> Result<()> {
        let mut record = StringRecord::new();
        loop {
            let more = self
                .reader
                .read_record(&mut record)
                .map_err(|e| match e.position() {
                    Some(pos) => parse_error(&self.path, pos.line(), e.to_string()),
                    None => parse_error(&self.path, 0, e.to_string()),
                })?;
            if !more {
                return Ok(());
            }
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            row(line, &record)?;
        }
    }
}

fn field<'r>(
    path: &Path,
    line: u64,
    record: &'r StringRecord,
    idx: usize,
    name: &str,
) -> Result<&'r str> {
    record
        .get(idx)
        .map(str::trim)
        .ok_or_else(|| parse_error(path, line, format!("missing field '{name}'")))
}

fn parse_date(path: &Path, line: u64, name: &str, s: &str) -> Result<NaiveDate> {
    s.parse()
        .map_err(|_| parse_error(path, line, format!("field '{name}': invalid date '{s}'")))
}

fn parse_f64(path: &Path, line: u64, name: &str, s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| parse_error(path, line, format!("field '{name}': invalid number '{s}'")))
}

/// Empty cells mean "missing" for price-style columns.
fn parse_opt_f64(path: &Path, line: u64, name: &str, s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    parse_f64(path, line, name, s).map(Some)
}

#[derive(Default)]
struct PriceCell {
    close: Option<f64>,
    volume: Option<f64>,
    shares: Option<f64>,
}

/// Loads and validates a panel from the four input files.
pub fn load_panel(
    prices_path: &Path,
    fundamentals_path: &Path,
    memberships_path: &Path,
    benchmark_path: &Path,
) -> Result<PanelDataset> {
    // Securities keyed by id, cells keyed by date; the trading calendar
    // is the union of price and benchmark dates.
    let mut cells: HashMap<String, BTreeMap<NaiveDate, PriceCell>> = HashMap::new();
    let mut all_dates: BTreeSet<NaiveDate> = BTreeSet::new();

    TableReader::open(
        prices_path,
        &["date", "security_id", "close", "volume", "shares_outstanding"],
    )?
    .for_each(|line, record| {
        let p = prices_path;
        let date = parse_date(p, line, "date", field(p, line, record, 0, "date")?)?;
        let id = field(p, line, record, 1, "security_id")?;
        if id.is_empty() {
            return Err(parse_error(p, line, "field 'security_id': empty id"));
        }
        let close = parse_opt_f64(p, line, "close", field(p, line, record, 2, "close")?)?;
        let volume = parse_opt_f64(p, line, "volume", field(p, line, record, 3, "volume")?)?;
        let shares = parse_opt_f64(
            p,
            line,
            "shares_outstanding",
            field(p, line, record, 4, "shares_outstanding")?,
        )?;
        let by_date = cells.entry(id.to_owned()).or_default();
        if by_date.contains_key(&date) {
            return Err(parse_error(
                p,
                line,
                format!("duplicate row for security '{id}' on {date}"),
            ));
        }
        by_date.insert(
            date,
            PriceCell {
                close,
                volume,
                shares,
            },
        );
        all_dates.insert(date);
        Ok(())
    })?;

    let mut fundamentals: HashMap<String, HashMap<FundamentalField, Vec<(NaiveDate, f64)>>> =
        HashMap::new();
    TableReader::open(fundamentals_path, &["date", "security_id", "field", "value"])?.for_each(
        |line, record| {
            let p = fundamentals_path;
            let date = parse_date(p, line, "date", field(p, line, record, 0, "date")?)?;
            let id = field(p, line, record, 1, "security_id")?.to_owned();
            let field_name = field(p, line, record, 2, "field")?;
            let fund_field = FundamentalField::parse(field_name).ok_or_else(|| {
                parse_error(p, line, format!("field 'field': unknown '{field_name}'"))
            })?;
            let value = parse_f64(p, line, "value", field(p, line, record, 3, "value")?)?;
            let series = fundamentals.entry(id).or_default().entry(fund_field).or_default();
            if series.iter().any(|(d, _)| *d == date) {
                return Err(parse_error(
                    p,
                    line,
                    format!("duplicate observation of '{field_name}' on {date}"),
                ));
            }
            series.push((date, value));
            Ok(())
        },
    )?;

    let mut country: HashMap<String, Vec<(String, f64)>> = HashMap::new();
    let mut industry: HashMap<String, Vec<(String, f64)>> = HashMap::new();
    TableReader::open(memberships_path, &["security_id", "dimension", "label", "weight"])?
        .for_each(|line, record| {
            let p = memberships_path;
            let id = field(p, line, record, 0, "security_id")?.to_owned();
            let dimension = field(p, line, record, 1, "dimension")?;
            let label = field(p, line, record, 2, "label")?.to_owned();
            let weight = parse_f64(p, line, "weight", field(p, line, record, 3, "weight")?)?;
            let map = match dimension {
                "country" => &mut country,
                "industry" => &mut industry,
                other => {
                    return Err(parse_error(
                        p,
                        line,
                        format!("field 'dimension': unknown '{other}'"),
                    ))
                }
            };
            let memberships = map.entry(id).or_default();
            if memberships.iter().any(|(l, _)| *l == label) {
                return Err(parse_error(
                    p,
                    line,
                    format!("duplicate {dimension} label '{label}'"),
                ));
            }
            memberships.push((label, weight));
            Ok(())
        })?;

    let mut benchmark_by_date: BTreeMap<NaiveDate, f64> = BTreeMap::new();
    TableReader::open(benchmark_path, &["date", "return"])?.for_each(|line, record| {
        let p = benchmark_path;
        let date = parse_date(p, line, "date", field(p, line, record, 0, "date")?)?;
        let value = parse_f64(p, line, "return", field(p, line, record, 1, "return")?)?;
        if benchmark_by_date.insert(date, value).is_some() {
            return Err(parse_error(p, line, format!("duplicate benchmark row for {date}")));
        }
        all_dates.insert(date);
        Ok(())
    })?;

    let dates: Vec<NaiveDate> = all_dates.into_iter().collect();
    if dates.is_empty() {
        return Err(Error::Validation(
            "no dates found in prices or benchmark".into(),
        ));
    }
    let date_index: HashMap<NaiveDate, usize> =
        dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();

    let mut ids: BTreeSet<String> = BTreeSet::new();
    ids.extend(cells.keys().cloned());
    ids.extend(fundamentals.keys().cloned());
    ids.extend(country.keys().cloned());
    ids.extend(industry.keys().cloned());

    let mut securities = Vec::with_capacity(ids.len());
    for id in ids {
        let mut input = SecurityInput {
            id: id.clone(),
            prices: vec![None; dates.len()],
            volume: vec![None; dates.len()],
            shares_outstanding: vec![None; dates.len()],
            fundamentals: fundamentals.remove(&id).unwrap_or_default(),
            country: country.remove(&id).unwrap_or_default(),
            industry: industry.remove(&id).unwrap_or_default(),
        };
        if let Some(by_date) = cells.remove(&id) {
            for (date, cell) in by_date {
                let idx = date_index[&date];
                input.prices[idx] = cell.close;
                input.volume[idx] = cell.volume;
                input.shares_outstanding[idx] = cell.shares;
            }
        }
        securities.push(input);
    }

    let benchmark: Vec<Option<f64>> = dates
        .iter()
        .map(|d| benchmark_by_date.get(d).copied())
        .collect();
    PanelDataset::from_parts(dates, securities, benchmark)
}

/// Formats a float with the shortest round-tripping representation.
fn fmt(x: f64) -> String {
    format!("{x}")
}

/// Writes the four panel input files into `dir`, naming them
/// `prices.csv`, `fundamentals.csv`, `memberships.csv`, `benchmark.csv`.
pub fn write_panel(panel: &PanelDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;

    let mut prices = String::from("date,security_id,close,volume,shares_outstanding\n");
    for (idx, date) in panel.dates().iter().enumerate() {
        for sec in 0..panel.n_securities() {
            let close = panel.price_at(sec, idx);
            let volume = panel.volume_at(sec, idx);
            let shares = panel.shares_raw_at(sec, idx);
            if close.is_none() && volume.is_none() && shares.is_none() {
                continue;
            }
            let opt = |v: Option<f64>| v.map(fmt).unwrap_or_default();
            prices.push_str(&format!(
                "{date},{},{},{},{}\n",
                panel.id(sec).as_str(),
                opt(close),
                opt(volume),
                opt(shares),
            ));
        }
    }
    write_atomic(&dir.join("prices.csv"), &prices)?;

    let mut fundamentals = String::from("date,security_id,field,value\n");
    for sec in 0..panel.n_securities() {
        for fund_field in FundamentalField::ALL {
            for (date, value) in panel.fundamental_observations(sec, fund_field) {
                fundamentals.push_str(&format!(
                    "{date},{},{},{}\n",
                    panel.id(sec).as_str(),
                    fund_field.as_str(),
                    fmt(*value),
                ));
            }
        }
    }
    write_atomic(&dir.join("fundamentals.csv"), &fundamentals)?;

    let mut memberships = String::from("security_id,dimension,label,weight\n");
    for sec in 0..panel.n_securities() {
        let id = panel.id(sec).as_str();
        for (label, weight) in panel.security(sec).country() {
            memberships.push_str(&format!("{id},country,{label},{}\n", fmt(*weight)));
        }
        for (label, weight) in panel.security(sec).industry() {
            memberships.push_str(&format!("{id},industry,{label},{}\n", fmt(*weight)));
        }
    }
    write_atomic(&dir.join("memberships.csv"), &memberships)?;

    let mut benchmark = String::from("date,return\n");
    for (idx, date) in panel.dates().iter().enumerate() {
        if let Some(r) = panel.benchmark_return(idx) {
            benchmark.push_str(&format!("{date},{}\n", fmt(r)));
        }
    }
    write_atomic(&dir.join("benchmark.csv"), &benchmark)?;
    Ok(())
}

/// Renders every matrix in the store as `date,security_id,factor,raw,normalized`.
pub fn loadings_to_csv_string(store: &LoadingStore, panel: &PanelDataset) -> String {
    let mut out = String::from("date,security_id,factor,raw,normalized\n");
    for matrix in store.matrices() {
        let date = matrix.date();
        for &sec in matrix.security_indices() {
            for factor in StyleFactor::ALL {
                let raw = matrix.raw_loading(sec, factor).unwrap();
                let normalized = matrix.loading(sec, factor).unwrap();
                out.push_str(&format!(
                    "{date},{},{},{},{}\n",
                    panel.id(sec).as_str(),
                    factor.name(),
                    fmt(raw),
                    fmt(normalized),
                ));
            }
        }
    }
    out
}

/// Reads a loadings CSV back into a store.
///
/// Stored normalized values are authoritative; the raw column is
/// informational and reconstructed matrices carry it unchanged only when
/// raw equals normalized (as with planted loadings).
pub fn read_loadings(path: &Path, panel: &PanelDataset) -> Result<LoadingStore> {
    let mut by_date: BTreeMap<NaiveDate, BTreeMap<String, Vec<Option<f64>>>> = BTreeMap::new();
    TableReader::open(path, &["date", "security_id", "factor", "raw", "normalized"])?.for_each(
        |line, record| {
            let date = parse_date(path, line, "date", field(path, line, record, 0, "date")?)?;
            let id = field(path, line, record, 1, "security_id")?.to_owned();
            let factor_name = field(path, line, record, 2, "factor")?;
            let factor = StyleFactor::parse(factor_name).ok_or_else(|| {
                parse_error(path, line, format!("field 'factor': unknown '{factor_name}'"))
            })?;
            let normalized = parse_f64(
                path,
                line,
                "normalized",
                field(path, line, record, 4, "normalized")?,
            )?;
            let row = by_date
                .entry(date)
                .or_default()
                .entry(id)
                .or_insert_with(|| vec![None; StyleFactor::ALL.len()]);
            if row[factor.index()].is_some() {
                return Err(parse_error(
                    path,
                    line,
                    format!("duplicate loading for factor '{factor_name}'"),
                ));
            }
            row[factor.index()] = Some(normalized);
            Ok(())
        },
    )?;

    let mut matrices = Vec::with_capacity(by_date.len());
    for (date, rows) in by_date {
        let mut ids = Vec::with_capacity(rows.len());
        let mut values = Vec::with_capacity(rows.len());
        for (id, row) in rows {
            let complete: Option<Vec<f64>> = row.into_iter().collect();
            let complete = complete.ok_or_else(|| {
                Error::Validation(format!("security '{id}' on {date} is missing factors"))
            })?;
            ids.push(id);
            values.push(complete);
        }
        matrices.push(LoadingMatrix::from_values(panel, date, &ids, &values)?);
    }
    Ok(LoadingStore::from_matrices(matrices))
}

/// Renders fits as `date,factor_type,factor_name,value` rows.
pub fn factor_returns_to_csv_string(fits: &[CrossSectionFit]) -> String {
    let mut out = String::from("date,factor_type,factor_name,value\n");
    for fit in fits {
        let date = fit.date;
        let f = &fit.factor_returns;
        out.push_str(&format!("{date},market,market,{}\n", fmt(f.market)));
        for (factor, value) in &f.styles {
            out.push_str(&format!("{date},style,{},{}\n", factor.name(), fmt(*value)));
        }
        for (label, value) in &f.countries {
            out.push_str(&format!("{date},country,{label},{}\n", fmt(*value)));
        }
        for (label, value) in &f.industries {
            out.push_str(&format!("{date},industry,{label},{}\n", fmt(*value)));
        }
    }
    out
}

/// Reads `factor_returns.csv` rows (as written by this crate or the
/// synthetic truth writer).
pub fn read_factor_returns(path: &Path) -> Result<Vec<FactorReturnRecord>> {
    let mut records = Vec::new();
    TableReader::open(path, &["date", "factor_type", "factor_name", "value"])?.for_each(
        |line, record| {
            records.push(FactorReturnRecord {
                date: parse_date(path, line, "date", field(path, line, record, 0, "date")?)?,
                factor_type: field(path, line, record, 1, "factor_type")?.to_owned(),
                factor_name: field(path, line, record, 2, "factor_name")?.to_owned(),
                value: parse_f64(path, line, "value", field(path, line, record, 3, "value")?)?,
            });
            Ok(())
        },
    )?;
    Ok(records)
}

/// Renders per-security residuals as `date,security_id,residual` rows.
pub fn residuals_to_csv_string(fits: &[CrossSectionFit]) -> String {
    let mut out = String::from("date,security_id,residual\n");
    for fit in fits {
        for (id, residual) in fit.ids.iter().zip(fit.residuals.iter()) {
            out.push_str(&format!("{},{},{}\n", fit.date, id.as_str(), fmt(*residual)));
        }
    }
    out
}

/// Writes `content` to `path` atomically: a sibling temp file is written
/// and fsynced, then renamed over the target.
pub fn write_atomic(path: &Path, content: &str) -> Result<()> {
    let mut temp = path.as_os_str().to_owned();
    temp.push(".tmp");
    let temp = PathBuf::from(temp);
    fs::write(&temp, content).map_err(|e| io_error(&temp, e))?;
    let file = fs::File::open(&temp).map_err(|e| io_error(&temp, e))?;
    file.sync_all().map_err(|e| io_error(&temp, e))?;
    fs::rename(&temp, path).map_err(|e| io_error(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate, GenerationMode, SyntheticConfig};
    use tempfile::TempDir;

    fn write(dir: &Path, name: &str, content: &str) -> PathBuf {
        let path = dir.join(name);
        fs::write(&path, content).unwrap();
        path
    }

    fn load_from(dir: &Path) -> Result<PanelDataset> {
        load_panel(
            &dir.join("prices.csv"),
            &dir.join("fundamentals.csv"),
            &dir.join("memberships.csv"),
            &dir.join("benchmark.csv"),
        )
    }

    fn minimal_files(dir: &Path) {
        write(
            dir,
            "prices.csv",
            "date,security_id,close,volume,shares_outstanding\n\
             2020-01-01,A,100,10,5\n\
             2020-01-02,A,110,12,5\n",
        );
        write(dir, "fundamentals.csv", "date,security_id,field,value\n");
        write(
            dir,
            "memberships.csv",
            "security_id,dimension,label,weight\n\
             A,country,US,1.0\n\
             A,industry,Tech,1.0\n",
        );
        write(dir, "benchmark.csv", "date,return\n2020-01-02,0.01\n");
    }

    // ==== loading ====

    #[test]
    fn loads_prices_and_derives_returns() {
        let dir = TempDir::new().unwrap();
        minimal_files(dir.path());
        let panel = load_from(dir.path()).unwrap();
        assert_eq!(panel.n_securities(), 1);
        assert_eq!(panel.dates().len(), 2);
        let r = panel.return_at(0, 1).unwrap();
        assert!((r - 0.10).abs() < 1e-12);
        assert_eq!(panel.benchmark_return(1), Some(0.01));
    }

    #[test]
    fn empty_fundamentals_file_is_fine() {
        let dir = TempDir::new().unwrap();
        minimal_files(dir.path());
        let panel = load_from(dir.path()).unwrap();
        assert!(panel
            .fundamental_at(0, FundamentalField::SalesTtm, 1)
            .is_none());
    }

    #[test]
    fn wrong_header_is_a_parse_error_at_line_one() {
        let dir = TempDir::new().unwrap();
        minimal_files(dir.path());
        write(dir.path(), "prices.csv", "date,id,close\n2020-01-01,A,1\n");
        let err = load_from(dir.path()).unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 1);
                assert!(message.contains("header"), "{message}");
            }
            other => panic!("unexpected error {other}"),
        }
        assert!(load_from(dir.path()).unwrap_err().is_user_error());
    }

    #[test]
    fn bad_number_reports_file_line_and_field() {
        let dir = TempDir::new().unwrap();
        minimal_files(dir.path());
        write(
            dir.path(),
            "prices.csv",
            "date,security_id,close,volume,shares_outstanding\n\
             2020-01-01,A,100,10,5\n\
             2020-01-02,A,oops,12,5\n",
        );
        match load_from(dir.path()).unwrap_err() {
            Error::Parse {
                path,
                line,
                message,
            } => {
                assert!(path.ends_with("prices.csv"));
                assert_eq!(line, 3);
                assert!(message.contains("close"), "{message}");
                assert!(message.contains("oops"), "{message}");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn duplicate_price_row_is_rejected() {
        let dir = TempDir::new().unwrap();
        minimal_files(dir.path());
        write(
            dir.path(),
            "prices.csv",
            "date,security_id,close,volume,shares_outstanding\n\
             2020-01-01,A,100,10,5\n\
             2020-01-01,A,101,10,5\n",
        );
        match load_from(dir.path()).unwrap_err() {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("duplicate"), "{message}");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn membership_weights_must_sum_to_one() {
        let dir = TempDir::new().unwrap();
        minimal_files(dir.path());
        write(
            dir.path(),
            "memberships.csv",
            "security_id,dimension,label,weight\n\
             A,country,US,0.6\n\
             A,country,GB,0.5\n\
             A,industry,Tech,1.0\n",
        );
        let err = load_from(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
        assert!(err.to_string().contains("weights sum"), "{err}");
    }

    #[test]
    fn empty_close_cell_means_missing() {
        let dir = TempDir::new().unwrap();
        minimal_files(dir.path());
        write(
            dir.path(),
            "prices.csv",
            "date,security_id,close,volume,shares_outstanding\n\
             2020-01-01,A,100,10,5\n\
             2020-01-02,A,,12,5\n\
             2020-01-03,A,120,12,5\n",
        );
        let panel = load_from(dir.path()).unwrap();
        assert_eq!(panel.price_at(0, 1), None);
        assert_eq!(panel.volume_at(0, 1), Some(12.0));
        // No consecutive-day prices around the hole, so no returns there.
        assert_eq!(panel.return_at(0, 1), None);
        assert_eq!(panel.return_at(0, 2), None);
    }

    // ==== round trip ====

    #[test]
    fn synthetic_panel_round_trips_exactly() {
        let config = SyntheticConfig {
            n_securities: 30,
            n_countries: 2,
            n_industries: 3,
            n_days: 10,
            mode: GenerationMode::RawFundamentals,
            seed: 9,
            ..SyntheticConfig::default()
        };
        let (panel, _) = generate(&config).unwrap();
        let dir = TempDir::new().unwrap();
        write_panel(&panel, dir.path()).unwrap();
        let reloaded = load_from(dir.path()).unwrap();
        assert_eq!(panel, reloaded);

        // A second write of the reloaded panel is byte-identical.
        let dir2 = TempDir::new().unwrap();
        write_panel(&reloaded, dir2.path()).unwrap();
        for name in [
            "prices.csv",
            "fundamentals.csv",
            "memberships.csv",
            "benchmark.csv",
        ] {
            let a = fs::read(dir.path().join(name)).unwrap();
            let b = fs::read(dir2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs");
        }
    }

    #[test]
    fn loadings_csv_round_trips_planted_values() {
        let config = SyntheticConfig {
            n_securities: 25,
            n_countries: 2,
            n_industries: 3,
            n_days: 5,
            seed: 4,
            ..SyntheticConfig::default()
        };
        let (panel, truth) = generate(&config).unwrap();
        let store = truth.loading_store(&panel).unwrap();
        let text = loadings_to_csv_string(&store, &panel);
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("loadings.csv");
        fs::write(&path, &text).unwrap();
        let reloaded = read_loadings(&path, &panel).unwrap();
        assert_eq!(loadings_to_csv_string(&reloaded, &panel), text);
    }

    #[test]
    fn factor_returns_csv_round_trips() {
        let config = SyntheticConfig {
            n_securities: 40,
            idio_vol_scale: 0.0,
            n_days: 3,
            seed: 2,
            ..SyntheticConfig::default()
        };
        let (panel, truth) = generate(&config).unwrap();
        let store = truth.loading_store(&panel).unwrap();
        let matrix = store.for_date(truth.fit_dates[0]).unwrap();
        let mut fits = Vec::new();
        for &date in &truth.fit_dates {
            let universe = crate::panel::effective_universe(&panel, matrix, date).unwrap();
            let design = crate::cross_section::DesignMatrix::build(
                &panel,
                &universe,
                matrix,
                &crate::evaluation::FactorSubset::full(),
            )
            .unwrap();
            let cons = crate::cross_section::ConstraintSet::for_design(&design);
            fits.push(
                crate::cross_section::solve_cross_section(
                    &design,
                    &universe.returns(&panel),
                    &cons,
                )
                .unwrap(),
            );
        }
        let text = factor_returns_to_csv_string(&fits);
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("factor_returns.csv");
        fs::write(&path, &text).unwrap();
        let records = read_factor_returns(&path).unwrap();
        let expected_rows = truth.fit_dates.len()
            * (1 + StyleFactor::ALL.len() + config.n_countries + config.n_industries);
        assert_eq!(records.len(), expected_rows);
        let first = &records[0];
        assert_eq!(first.factor_type, "market");
        assert_eq!(first.value, fits[0].factor_returns.market);
    }

    // ==== atomic writes ====

    #[test]
    fn write_atomic_replaces_and_leaves_no_temp() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("out.csv");
        write_atomic(&path, "first\n").unwrap();
        write_atomic(&path, "second\n").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "second\n");
        let entries: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(entries.len(), 1);
    }
}
