//! Logged click data: parsing, candidate synthesis and rejection-sampling
//! replay.
//!
//! Replay walks the log in order and asks the policy to pick among the
//! record's candidates. Records where the pick differs from the logged item
//! are dropped without telling the policy anything; the rest reveal the
//! click and advance the retained-round counter.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::str::FromStr;

use flate2::read::MultiGzDecoder;
use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::environment::SyntheticWorld;
use crate::error::{domain, Error, Result};
use crate::model::{ItemUniverse, RoundContext};
use crate::policy::Policy;
use crate::rng::{self, tags};

/// Fraction of malformed rows above which a log is rejected.
pub const MAX_MALFORMED_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogFormat {
    /// `timestamp,user,served,click[,cand1,...,candk]` with a header row.
    GenericCsv,
    /// Whitespace separated `timestamp served click |user feats... |cand feats... ...`;
    /// the user is identified by its feature tokens.
    YahooLike,
    /// CSV with `impression_timestamp,user_id,action,ad_type,order_item_id,click_timestamp`;
    /// a click is a nonempty click timestamp.
    TelefonicaLike,
    /// CSV with at least `hour`, `click`, `device_id` and `ad_id` (or `C14`).
    AvazuLike,
}

impl LogFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            LogFormat::GenericCsv => "generic_csv",
            LogFormat::YahooLike => "yahoo_like",
            LogFormat::TelefonicaLike => "telefonica_like",
            LogFormat::AvazuLike => "avazu_like",
        }
    }
}

impl fmt::Display for LogFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LogFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            LogFormat::GenericCsv,
            LogFormat::YahooLike,
            LogFormat::TelefonicaLike,
            LogFormat::AvazuLike,
        ]
        .into_iter()
        .find(|f| f.as_str() == s.trim())
        .ok_or_else(|| Error::Domain(format!("unknown log format {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoggedRecord {
    pub timestamp: i64,
    pub user: usize,
    pub served: usize,
    pub click: bool,
    pub candidates: Option<Vec<usize>>,
}

/// External string ids mapped to dense indices in order of first sight.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdTable {
    index: HashMap<String, usize>,
    names: Vec<String>,
}

impl IdTable {
    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.names.len();
        self.index.insert(name.to_string(), i);
        self.names.push(name.to_string());
        i
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, i: usize) -> Option<&str> {
        self.names.get(i).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseStats {
    /// Data rows seen (header and blank lines excluded).
    pub rows: u64,
    pub malformed: u64,
    /// Well-formed rows left out on purpose, e.g. without a user id.
    pub filtered: u64,
}

impl ParseStats {
    pub fn malformed_fraction(&self) -> f64 {
        if self.rows == 0 {
            0.0
        } else {
            self.malformed as f64 / self.rows as f64
        }
    }
}

/// Column positions located from a CSV header.
#[derive(Debug, Clone, Copy)]
struct Columns {
    timestamp: usize,
    user: usize,
    item: usize,
    click: usize,
}

/// Streaming reader: yields one record per valid row and keeps the id
/// tables and counters. Memory is bounded by the id tables.
pub struct LogReader<R: BufRead> {
    source: R,
    format: LogFormat,
    columns: Option<Columns>,
    line: String,
    pub users: IdTable,
    pub items: IdTable,
    pub stats: ParseStats,
}

enum Row {
    Record(LoggedRecord),
    Skip,
    Malformed,
    Filtered,
}

impl<R: BufRead> LogReader<R> {
    pub fn new(source: R, format: LogFormat) -> Self {
        Self {
            source,
            format,
            columns: None,
            line: String::new(),
            users: IdTable::default(),
            items: IdTable::default(),
            stats: ParseStats::default(),
        }
    }

    /// Errors if too many rows were malformed.
    pub fn check(&self) -> Result<()> {
        if self.stats.malformed_fraction() > MAX_MALFORMED_FRACTION {
            return Err(Error::Format(format!(
                "{} of {} rows malformed",
                self.stats.malformed, self.stats.rows
            )));
        }
        Ok(())
    }

    fn parse_line(&mut self, line: &str) -> Result<Row> {
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            return Ok(Row::Skip);
        }
        match self.format {
            LogFormat::GenericCsv => Ok(self.generic(line)),
            LogFormat::YahooLike => Ok(self.yahoo(line)),
            LogFormat::TelefonicaLike | LogFormat::AvazuLike => self.headed_csv(line),
        }
    }

    fn generic(&mut self, line: &str) -> Row {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields[0] == "timestamp" {
            return Row::Skip;
        }
        if fields.len() < 4 || fields[1].is_empty() || fields[2].is_empty() {
            return Row::Malformed;
        }
        let (Ok(timestamp), Some(click)) = (fields[0].parse::<i64>(), parse_click(fields[3])) else {
            return Row::Malformed;
        };
        let cands = &fields[4..];
        if cands.iter().any(|c| c.is_empty()) || (!cands.is_empty() && !cands.contains(&fields[2])) {
            return Row::Malformed;
        }
        let user = self.users.intern(fields[1]);
        let served = self.items.intern(fields[2]);
        let candidates = (!cands.is_empty()).then(|| cands.iter().map(|c| self.items.intern(c)).collect());
        Row::Record(LoggedRecord {
            timestamp,
            user,
            served,
            click,
            candidates,
        })
    }

    fn yahoo(&mut self, line: &str) -> Row {
        let mut blocks = line.split('|');
        let head: Vec<&str> = blocks.next().unwrap_or("").split_whitespace().collect();
        if head.len() != 3 {
            return Row::Malformed;
        }
        let (Ok(timestamp), Some(click)) = (head[0].parse::<i64>(), parse_click(head[2])) else {
            return Row::Malformed;
        };
        let mut user_key = None;
        let mut cands = Vec::new();
        for block in blocks {
            let mut tokens = block.split_whitespace();
            match tokens.next() {
                Some("user") => user_key = Some(tokens.collect::<Vec<_>>().join(" ")),
                Some(id) => cands.push(id),
                None => return Row::Malformed,
            }
        }
        let Some(user_key) = user_key else {
            return Row::Malformed;
        };
        if !cands.is_empty() && !cands.contains(&head[1]) {
            return Row::Malformed;
        }
        let user = self.users.intern(&user_key);
        let served = self.items.intern(head[1]);
        let candidates = (!cands.is_empty()).then(|| cands.iter().map(|c| self.items.intern(c)).collect());
        Row::Record(LoggedRecord {
            timestamp,
            user,
            served,
            click,
            candidates,
        })
    }

    fn headed_csv(&mut self, line: &str) -> Result<Row> {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let Some(cols) = self.columns else {
            self.columns = Some(self.locate(&fields)?);
            return Ok(Row::Skip);
        };
        let needed = cols.timestamp.max(cols.user).max(cols.item).max(cols.click);
        if fields.len() <= needed {
            return Ok(Row::Malformed);
        }
        let Ok(timestamp) = fields[cols.timestamp].parse::<i64>() else {
            return Ok(Row::Malformed);
        };
        let click = match self.format {
            LogFormat::TelefonicaLike => !fields[cols.click].is_empty(),
            _ => match parse_click(fields[cols.click]) {
                Some(c) => c,
                None => return Ok(Row::Malformed),
            },
        };
        if fields[cols.item].is_empty() {
            return Ok(Row::Malformed);
        }
        if fields[cols.user].is_empty() {
            return Ok(if self.format == LogFormat::AvazuLike {
                Row::Filtered
            } else {
                Row::Malformed
            });
        }
        let user = self.users.intern(fields[cols.user]);
        let served = self.items.intern(fields[cols.item]);
        Ok(Row::Record(LoggedRecord {
            timestamp,
            user,
            served,
            click,
            candidates: None,
        }))
    }

    fn locate(&self, header: &[&str]) -> Result<Columns> {
        let find = |name: &str| header.iter().position(|h| *h == name);
        let need = |name: &str| find(name).ok_or_else(|| Error::Format(format!("{} header lacks column {name:?}", self.format)));
        Ok(match self.format {
            LogFormat::TelefonicaLike => Columns {
                timestamp: need("impression_timestamp")?,
                user: need("user_id")?,
                item: need("order_item_id")?,
                click: need("click_timestamp")?,
            },
            _ => Columns {
                timestamp: need("hour")?,
                user: need("device_id")?,
                item: find("ad_id").map_or_else(|| need("C14"), Ok)?,
                click: need("click")?,
            },
        })
    }
}

fn parse_click(s: &str) -> Option<bool> {
    match s {
        "0" => Some(false),
        "1" => Some(true),
        _ => None,
    }
}

impl<R: BufRead> Iterator for LogReader<R> {
    type Item = Result<LoggedRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.line.clear();
            match self.source.read_line(&mut self.line) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(e.into())),
            }
            let line = std::mem::take(&mut self.line);
            let row = self.parse_line(&line);
            self.line = line;
            match row {
                Err(e) => return Some(Err(e)),
                Ok(Row::Skip) => {}
                Ok(Row::Malformed) => {
                    self.stats.rows += 1;
                    self.stats.malformed += 1;
                }
                Ok(Row::Filtered) => {
                    self.stats.rows += 1;
                    self.stats.filtered += 1;
                }
                Ok(Row::Record(r)) => {
                    self.stats.rows += 1;
                    return Some(Ok(r));
                }
            }
        }
    }
}

/// A fully parsed log.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedLog {
    pub records: Vec<LoggedRecord>,
    pub users: IdTable,
    pub items: IdTable,
    pub stats: ParseStats,
}

impl ParsedLog {
    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    /// One-hot universe over every item seen in the log.
    pub fn item_universe(&self) -> Result<ItemUniverse> {
        ItemUniverse::one_hot(self.items.len())
    }

    /// Fraction of records with a click.
    pub fn ctr(&self) -> Option<f64> {
        if self.records.is_empty() {
            return None;
        }
        Some(self.records.iter().filter(|r| r.click).count() as f64 / self.records.len() as f64)
    }
}

/// Reads a whole log, counting and skipping malformed rows.
pub fn parse_log<R: BufRead>(source: R, format: LogFormat) -> Result<ParsedLog> {
    let mut reader = LogReader::new(source, format);
    let mut records = Vec::new();
    for r in reader.by_ref() {
        records.push(r?);
    }
    reader.check()?;
    if reader.stats.malformed > 0 {
        log::warn!("skipped {} malformed rows of {}", reader.stats.malformed, reader.stats.rows);
    }
    Ok(ParsedLog {
        records,
        users: reader.users,
        items: reader.items,
        stats: reader.stats,
    })
}

/// Opens a log file, transparently decompressing gzip.
pub fn open_log(path: &Path) -> Result<Box<dyn BufRead>> {
    let mut file = File::open(path)?;
    let mut magic = [0u8; 2];
    let n = file.read(&mut magic)?;
    let file = File::open(path)?;
    if n == 2 && magic == [0x1f, 0x8b] {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}

/// Gives every record a candidate list: the served item plus `c − 1` other
/// items drawn uniformly without replacement from `0..n_items`, in random
/// order. Existing lists are replaced. Deterministic given `seed`.
pub fn synthesize_candidates(records: &mut [LoggedRecord], n_items: usize, c: usize, seed: u64) -> Result<()> {
    if c < 2 {
        return domain(format!("candidate lists need at least 2 items, got {c}"));
    }
    if n_items < c {
        return domain(format!("item universe of {n_items} is smaller than c={c}"));
    }
    let mut rng = rng::stream(seed, tags::CANDIDATES);
    for r in records.iter_mut() {
        if r.served >= n_items {
            return domain(format!("served item {} outside 0..{n_items}", r.served));
        }
        let mut cands: Vec<usize> = sample(&mut rng, n_items - 1, c - 1)
            .into_iter()
            .map(|h| if h >= r.served { h + 1 } else { h })
            .collect();
        let at = rng.random_range(0..c);
        cands.insert(at, r.served);
        r.candidates = Some(cands);
    }
    Ok(())
}

/// A uniformly logged click log from a synthetic world: each record draws
/// a user and `c` candidates as in the online setting, serves a uniformly
/// random candidate and clicks with probability `(1 + E[payoff]) / 2`.
/// Ids are the world's dense indices.
pub fn simulate_log(world: &SyntheticWorld, records: usize, c: usize, seed: u64) -> Result<Vec<LoggedRecord>> {
    let mut rng = rng::stream(seed, tags::LOG);
    let mut out = Vec::with_capacity(records);
    for t in 0..records {
        let round = world.draw_round(t as u64 + 1, c, &mut rng)?;
        let served = round.candidates[rng.random_range(0..c)];
        let p = (1.0 + world.expected_payoff(round.user, served)) / 2.0;
        out.push(LoggedRecord {
            timestamp: t as i64,
            user: round.user,
            served,
            click: rng.random_bool(p.clamp(0.0, 1.0)),
            candidates: Some(round.candidates),
        });
    }
    Ok(out)
}

/// Writes records in the generic CSV layout, candidates included.
pub fn write_generic_csv<W: std::io::Write>(records: &[LoggedRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "timestamp,user,served,click")?;
    for r in records {
        write!(w, "{},u{},i{},{}", r.timestamp, r.user, r.served, u8::from(r.click))?;
        for h in r.candidates.iter().flatten() {
            write!(w, ",i{h}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub records: usize,
    /// Records reserved for tuning and skipped.
    pub tuning_prefix: usize,
    pub retained: u64,
    pub clicks: u64,
    /// `(retained round, cumulative CTR)` after every retained record.
    pub ctr_curve: Vec<(u64, f64)>,
    pub params: String,
}

impl ReplayReport {
    pub fn ctr(&self) -> Option<f64> {
        (self.retained > 0).then(|| self.clicks as f64 / self.retained as f64)
    }
}

/// Replays `records[tuning_prefix..]` against `policy`.
///
/// Only matched records reach [`Policy::update`]; the payoff is 1 for a
/// click and 0 otherwise. Rounds are numbered by retained records.
pub fn replay_evaluate(
    policy: &mut dyn Policy,
    records: &[LoggedRecord],
    items: &ItemUniverse,
    tuning_prefix: usize,
) -> Result<ReplayReport> {
    let start = tuning_prefix.min(records.len());
    let mut retained = 0u64;
    let mut clicks = 0u64;
    let mut ctr_curve = Vec::new();
    for (i, r) in records[start..].iter().enumerate() {
        let Some(cands) = &r.candidates else {
            return domain(format!("record {} has no candidate list", start + i));
        };
        let round = RoundContext::new(retained + 1, r.user, cands.clone(), items)?;
        let k = policy.select(&round)?;
        if cands[k] != r.served {
            continue;
        }
        let payoff = if r.click { 1.0 } else { 0.0 };
        policy.update(&round, k, payoff)?;
        retained += 1;
        clicks += u64::from(r.click);
        ctr_curve.push((retained, clicks as f64 / retained as f64));
    }
    Ok(ReplayReport {
        records: records.len(),
        tuning_prefix: start,
        retained,
        clicks,
        ctr_curve,
        params: String::new(),
    })
}
