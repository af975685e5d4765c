//! Daily OHLCV panel: a dense date × asset grid of optional bars.
//!
//! The on-disk format is a single CSV per market with the header
//! `date,ticker,open,high,low,close,volume`. Rows for one ticker must appear
//! in strictly increasing date order; the loader never re-sorts.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use thiserror::Error;

pub const CSV_HEADER: [&str; 7] = ["date", "ticker", "open", "high", "low", "close", "volume"];

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("header must be exactly `date,ticker,open,high,low,close,volume`; missing or misplaced column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: duplicate bar for ({date}, {ticker})")]
    DuplicateRow {
        row: usize,
        date: NaiveDate,
        ticker: String,
    },
    #[error("row {row}: invalid bar: {reason}")]
    NonPositivePrice { row: usize, reason: String },
    #[error("row {row}: ticker {ticker} is not in increasing date order ({date} after {previous})")]
    UnsortedWithinAsset {
        row: usize,
        ticker: String,
        date: NaiveDate,
        previous: NaiveDate,
    },
    #[error("row {row}: cannot parse field `{field}`: {value:?}")]
    Parse {
        row: usize,
        field: &'static str,
        value: String,
    },
    #[error("date {0} is not in the panel calendar")]
    DateNotInCalendar(NaiveDate),
    #[error("invalid panel: {0}")]
    Invalid(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = PanelError> = std::result::Result<T, E>;

/// One daily bar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OhlcvBar {
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

impl OhlcvBar {
    /// Checks positivity and `low <= min(open, close) <= max(open, close) <= high`.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let prices = [
            ("open", self.open),
            ("high", self.high),
            ("low", self.low),
            ("close", self.close),
        ];
        for (name, p) in prices {
            if !(p.is_finite() && p > 0.0) {
                return Err(format!("{name} = {p} is not a positive finite price"));
            }
        }
        if !(self.volume.is_finite() && self.volume >= 0.0) {
            return Err(format!("volume = {} is negative or non-finite", self.volume));
        }
        if self.low > self.open.min(self.close) {
            return Err(format!(
                "low {} exceeds min(open, close) {}",
                self.low,
                self.open.min(self.close)
            ));
        }
        if self.high < self.open.max(self.close) {
            return Err(format!(
                "high {} is below max(open, close) {}",
                self.high,
                self.open.max(self.close)
            ));
        }
        Ok(())
    }
}

/// Price fields addressable by name in feature schemas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Field {
    Open,
    High,
    Low,
    Close,
    Volume,
}

impl Field {
    pub fn parse(name: &str) -> Option<Field> {
        match name {
            "open" => Some(Field::Open),
            "high" => Some(Field::High),
            "low" => Some(Field::Low),
            "close" => Some(Field::Close),
            "volume" => Some(Field::Volume),
            _ => None,
        }
    }

    #[inline]
    pub fn of(self, bar: &OhlcvBar) -> f64 {
        match self {
            Field::Open => bar.open,
            Field::High => bar.high,
            Field::Low => bar.low,
            Field::Close => bar.close,
            Field::Volume => bar.volume,
        }
    }
}

/// Immutable aligned panel. Bars are stored date-major: index `t * n_assets + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct OhlcvPanel {
    calendar: Vec<NaiveDate>,
    assets: Vec<String>,
    bars: Vec<Option<OhlcvBar>>,
}

impl OhlcvPanel {
    /// Builds a panel from parts, enforcing every structural invariant.
    pub fn new(
        calendar: Vec<NaiveDate>,
        assets: Vec<String>,
        bars: Vec<Option<OhlcvBar>>,
    ) -> Result<Self> {
        if calendar.windows(2).any(|w| w[0] >= w[1]) {
            return Err(PanelError::Invalid(
                "calendar must be strictly increasing".into(),
            ));
        }
        let unique: BTreeSet<&String> = assets.iter().collect();
        if unique.len() != assets.len() {
            return Err(PanelError::Invalid("asset identifiers must be unique".into()));
        }
        if bars.len() != calendar.len() * assets.len() {
            return Err(PanelError::Invalid(format!(
                "grid has {} cells, expected {} x {}",
                bars.len(),
                calendar.len(),
                assets.len()
            )));
        }
        let n = assets.len();
        for (i, id) in assets.iter().enumerate() {
            if !(0..calendar.len()).any(|t| bars[t * n + i].is_some()) {
                return Err(PanelError::Invalid(format!("asset {id} has no bars")));
            }
        }
        for (k, bar) in bars.iter().enumerate() {
            if let Some(b) = bar {
                b.validate().map_err(|reason| {
                    PanelError::Invalid(format!(
                        "bar ({}, {}): {reason}",
                        calendar[k / n],
                        assets[k % n]
                    ))
                })?;
            }
        }
        Ok(Self {
            calendar,
            assets,
            bars,
        })
    }

    pub fn calendar(&self) -> &[NaiveDate] {
        &self.calendar
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn n_dates(&self) -> usize {
        self.calendar.len()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    #[inline]
    pub fn bar(&self, t: usize, i: usize) -> Option<&OhlcvBar> {
        self.bars[t * self.assets.len() + i].as_ref()
    }

    pub fn bars(&self) -> &[Option<OhlcvBar>] {
        &self.bars
    }

    /// Consumes the panel, returning `(calendar, assets, bars)`.
    pub fn into_parts(self) -> (Vec<NaiveDate>, Vec<String>, Vec<Option<OhlcvBar>>) {
        (self.calendar, self.assets, self.bars)
    }

    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        self.calendar.binary_search(&date).ok()
    }

    /// One field of one asset across the calendar, `None` where the bar is missing.
    pub fn series(&self, i: usize, field: Field) -> Vec<Option<f64>> {
        (0..self.n_dates())
            .map(|t| self.bar(t, i).map(|b| field.of(b)))
            .collect()
    }

    pub fn n_present(&self) -> usize {
        self.bars.iter().filter(|b| b.is_some()).count()
    }

    /// Asset ids with a bar on `date` (the evaluable cross-section U_t).
    pub fn cross_section(&self, date: NaiveDate) -> Result<Vec<&str>> {
        let t = self
            .date_index(date)
            .ok_or(PanelError::DateNotInCalendar(date))?;
        Ok(self
            .present_assets(t)
            .map(|i| self.assets[i].as_str())
            .collect())
    }

    pub fn present_assets(&self, t: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_assets()).filter(move |&i| self.bar(t, i).is_some())
    }

    /// Writes the panel in canonical order (date-major, then asset id).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut order: Vec<usize> = (0..self.n_assets()).collect();
        order.sort_by(|&a, &b| self.assets[a].cmp(&self.assets[b]));
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        w.write_record(CSV_HEADER)?;
        for (t, date) in self.calendar.iter().enumerate() {
            let date = date.format("%Y-%m-%d").to_string();
            for &i in &order {
                if let Some(b) = self.bar(t, i) {
                    w.write_record([
                        date.as_str(),
                        self.assets[i].as_str(),
                        &b.open.to_string(),
                        &b.high.to_string(),
                        &b.low.to_string(),
                        &b.close.to_string(),
                        &b.volume.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Cheap content fingerprint used in pairing hashes.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for d in &self.calendar {
            h.update(d.to_string().as_bytes());
        }
        for a in &self.assets {
            h.update(a.as_bytes());
            h.update([0u8]);
        }
        for b in &self.bars {
            match b {
                Some(b) => {
                    h.update([1u8]);
                    for v in [b.open, b.high, b.low, b.close, b.volume] {
                        h.update(v.to_bits().to_le_bytes());
                    }
                }
                None => h.update([0u8]),
            }
        }
        hex::encode(&h.finalize()[..8])
    }
}

/// Parses a panel from any reader. Row numbers in errors are 1-based file
/// lines (the header is line 1).
pub fn read_panel<R: Read>(reader: R) -> Result<OhlcvPanel> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::None)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    for (k, expected) in CSV_HEADER.iter().enumerate() {
        if header.get(k) != Some(*expected) {
            return Err(PanelError::MissingColumn((*expected).to_string()));
        }
    }
    if header.len() != CSV_HEADER.len() {
        return Err(PanelError::MissingColumn(
            header.get(CSV_HEADER.len()).unwrap_or("").to_string(),
        ));
    }

    let mut last_date: HashMap<String, NaiveDate> = HashMap::new();
    let mut rows: BTreeMap<(String, NaiveDate), OhlcvBar> = BTreeMap::new();
    let mut dates = BTreeSet::new();

    for (k, record) in rdr.records().enumerate() {
        let row = k + 2;
        let record = record?;
        let field = |idx: usize| record.get(idx).unwrap_or("");
        let date = NaiveDate::parse_from_str(field(0), "%Y-%m-%d").map_err(|_| {
            PanelError::Parse {
                row,
                field: "date",
                value: field(0).to_string(),
            }
        })?;
        let ticker = field(1).to_string();
        if ticker.is_empty() {
            return Err(PanelError::Parse {
                row,
                field: "ticker",
                value: ticker,
            });
        }
        let num = |idx: usize, name: &'static str| -> Result<f64> {
            field(idx).parse::<f64>().map_err(|_| PanelError::Parse {
                row,
                field: name,
                value: field(idx).to_string(),
            })
        };
        let bar = OhlcvBar {
            open: num(2, "open")?,
            high: num(3, "high")?,
            low: num(4, "low")?,
            close: num(5, "close")?,
            volume: num(6, "volume")?,
        };
        if rows.contains_key(&(ticker.clone(), date)) {
            return Err(PanelError::DuplicateRow { row, date, ticker });
        }
        if let Some(&previous) = last_date.get(&ticker) {
            if date <= previous {
                return Err(PanelError::UnsortedWithinAsset {
                    row,
                    ticker,
                    date,
                    previous,
                });
            }
        }
        bar.validate()
            .map_err(|reason| PanelError::NonPositivePrice { row, reason })?;
        last_date.insert(ticker.clone(), date);
        dates.insert(date);
        rows.insert((ticker, date), bar);
    }

    let calendar: Vec<NaiveDate> = dates.into_iter().collect();
    let assets: Vec<String> = last_date.keys().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let asset_idx: HashMap<&str, usize> = assets
        .iter()
        .enumerate()
        .map(|(i, a)| (a.as_str(), i))
        .collect();
    let mut bars = vec![None; calendar.len() * assets.len()];
    for ((ticker, date), bar) in rows {
        let t = calendar.binary_search(&date).expect("date collected above");
        bars[t * assets.len() + asset_idx[ticker.as_str()]] = Some(bar);
    }
    OhlcvPanel::new(calendar, assets, bars)
}

pub fn load_panel(path: impl AsRef<Path>) -> Result<OhlcvPanel> {
    let file = std::fs::File::open(path)?;
    read_panel(std::io::BufReader::new(file))
}

pub fn save_panel(panel: &OhlcvPanel, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    panel.write_csv(std::io::BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "date,ticker,open,high,low,close,volume
2024-01-02,A,10,11,9,10.5,100
2024-01-02,B,20,21,19,20.5,200
2024-01-03,A,10.5,11,10,10.8,150
2024-01-03,B,20.5,22,20,21,250
2024-01-04,A,10.8,11.2,10.1,11,120
2024-01-04,B,21,21.5,20.2,20.8,180
";

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    #[test]
    fn loads_well_formed_file() {
        let p = read_panel(GOOD.as_bytes()).unwrap();
        assert_eq!(p.n_dates(), 3);
        assert_eq!(p.n_assets(), 2);
        assert_eq!(p.n_present(), 6);
        assert_eq!(p.bar(1, 1).unwrap().close, 21.0);
    }

    #[test]
    fn missing_day_becomes_missing_bar() {
        let text = GOOD.replace("2024-01-03,B,20.5,22,20,21,250\n", "");
        let p = read_panel(text.as_bytes()).unwrap();
        assert_eq!(p.n_dates(), 3);
        assert!(p.bar(1, 1).is_none());
        assert_eq!(p.cross_section(d("2024-01-03")).unwrap(), vec!["A"]);
        assert_eq!(p.cross_section(d("2024-01-02")).unwrap(), vec!["A", "B"]);
    }

    #[test]
    fn bar_shape_violation_names_row() {
        let text = GOOD.replace("2024-01-03,A,10.5,11,10,10.8,150", "2024-01-03,A,10.5,10.6,10,10.8,150");
        match read_panel(text.as_bytes()) {
            Err(PanelError::NonPositivePrice { row, .. }) => assert_eq!(row, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_positive_price_rejected() {
        let text = GOOD.replace("2024-01-02,B,20,21,19,20.5,200", "2024-01-02,B,0,21,19,20.5,200");
        assert!(matches!(
            read_panel(text.as_bytes()),
            Err(PanelError::NonPositivePrice { row: 3, .. })
        ));
    }

    #[test]
    fn duplicate_and_unsorted_rows() {
        let dup = format!("{GOOD}2024-01-04,A,10.8,11.2,10.1,11,120\n");
        assert!(matches!(
            read_panel(dup.as_bytes()),
            Err(PanelError::DuplicateRow { row: 8, .. })
        ));
        let unsorted = format!("{GOOD}2024-01-01,A,10,11,9,10.5,100\n");
        assert!(matches!(
            read_panel(unsorted.as_bytes()),
            Err(PanelError::UnsortedWithinAsset { row: 8, .. })
        ));
    }

    #[test]
    fn header_must_match() {
        let text = GOOD.replace("volume", "vol");
        assert!(matches!(
            read_panel(text.as_bytes()),
            Err(PanelError::MissingColumn(c)) if c == "volume"
        ));
    }

    #[test]
    fn cross_section_outside_calendar() {
        let p = read_panel(GOOD.as_bytes()).unwrap();
        assert!(matches!(
            p.cross_section(d("2023-12-29")),
            Err(PanelError::DateNotInCalendar(_))
        ));
    }

    #[test]
    fn canonical_write_round_trips() {
        let p = read_panel(GOOD.as_bytes()).unwrap();
        let mut out = Vec::new();
        p.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), GOOD);
    }
}
