//! Forum-post ingestion, the on-disk corpus store, corpus statistics and
//! gold-record loading.
//!
//! The store is a directory holding an append-only log of posts
//! (`posts.jsonl`) and a side index of every `(forum, post_id)` key already
//! seen (`seen.idx`). Ingestion is incremental: re-reading a dump that was
//! already ingested adds nothing and leaves both files untouched.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textprep::{normalize, TokenSequence};

const POSTS_FILE: &str = "posts.jsonl";
const INDEX_FILE: &str = "seen.idx";

/// The five organization-type bins of the curated gold set, in descending
/// gold-count order.
pub const DEFAULT_BINS: [&str; 5] = ["Databases", "Software", "Open Source", "Mobile", "Video Games"];

pub fn default_bins() -> Vec<String> {
    DEFAULT_BINS.iter().map(|s| s.to_string()).collect()
}

/// One forum posting: the seven metadata fields a crawler captures, plus
/// provenance (`post_id`, `forum`, `language`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForumPost {
    pub post_id: String,
    pub forum: String,
    pub language: String,
    pub title: String,
    pub date: NaiveDate,
    pub author: String,
    /// Free-form, e.g. "3/5 stars". No scale is assumed.
    pub author_reputation: String,
    pub description: String,
    pub source_code: String,
    pub discussion: String,
}

impl ForumPost {
    pub fn key(&self) -> (String, String) {
        (self.forum.clone(), self.post_id.clone())
    }

    /// Prose fields searched for organization mentions. Source code is
    /// excluded because it is the classifier input.
    pub fn mention_text(&self) -> String {
        format!("{}\n{}\n{}", self.title, self.description, self.discussion)
    }
}

/// Wire form of a post in a dump file. The date is still a string here.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DumpRecord {
    post_id: String,
    forum: String,
    language: String,
    title: String,
    date: String,
    author: String,
    author_reputation: String,
    description: String,
    source_code: String,
    discussion: String,
}

impl DumpRecord {
    fn into_post(self) -> std::result::Result<ForumPost, String> {
        if self.post_id.trim().is_empty() {
            return Err("empty post_id".into());
        }
        if self.forum.trim().is_empty() {
            return Err("empty forum".into());
        }
        let date = parse_post_date(&self.date).ok_or_else(|| format!("unparseable date {:?}", self.date))?;
        Ok(ForumPost {
            post_id: self.post_id,
            forum: self.forum,
            language: self.language,
            title: self.title,
            date,
            author: self.author,
            author_reputation: self.author_reputation,
            description: self.description,
            source_code: self.source_code,
            discussion: self.discussion,
        })
    }
}

const MONTHS: [&str; 12] = [
    "jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov", "dec",
];

/// Parses `DD-MMM-YY` (e.g. `26-Sep-19`) or ISO `YYYY-MM-DD`.
///
/// Two-digit years below 70 land in 2000-2069, the rest in 1970-1999.
pub fn parse_post_date(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Some(d);
    }
    let mut parts = s.split('-');
    let (day, month, year) = (parts.next()?, parts.next()?, parts.next()?);
    if parts.next().is_some() || day.is_empty() || day.len() > 2 || year.len() != 2 {
        return None;
    }
    if !day.bytes().all(|b| b.is_ascii_digit()) || !year.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let month = month.to_ascii_lowercase();
    let month = MONTHS.iter().position(|m| *m == month)? as u32 + 1;
    let yy: i32 = year.parse().ok()?;
    let year = if yy < 70 { 2000 + yy } else { 1900 + yy };
    NaiveDate::from_ymd_opt(year, month, day.parse().ok()?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub files_read: usize,
    pub posts_added: usize,
    pub posts_skipped_duplicate: usize,
    pub posts_rejected: usize,
    pub rejection_reasons: Vec<Rejection>,
}

impl IngestReport {
    pub fn records_seen(&self) -> usize {
        self.posts_added + self.posts_skipped_duplicate + self.posts_rejected
    }
}

/// Directory-backed post store with a persistent seen-key index.
///
/// One writer at a time; readers may open the same directory once writes
/// have completed.
#[derive(Debug)]
pub struct CorpusStore {
    dir: PathBuf,
    seen: HashSet<(String, String)>,
}

impl CorpusStore {
    /// Opens the store at `dir`, creating an empty one if needed.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let index = dir.join(INDEX_FILE);
        let mut seen = HashSet::new();
        if index.exists() {
            let file = File::open(&index).map_err(|e| Error::io(&index, e))?;
            for (n, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(&index, e))?;
                if line.is_empty() {
                    continue;
                }
                let key = decode_key(&line).ok_or_else(|| Error::Parse {
                    path: index.clone(),
                    line: n + 1,
                    reason: "malformed index entry".into(),
                })?;
                seen.insert(key);
            }
        }
        Ok(CorpusStore { dir, seen })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }

    pub fn contains(&self, forum: &str, post_id: &str) -> bool {
        self.seen.contains(&(forum.to_string(), post_id.to_string()))
    }

    /// Reads a line-delimited dump and persists every well-formed post whose
    /// `(forum, post_id)` has not been seen before.
    ///
    /// Malformed lines are recorded in the report and never abort the run;
    /// only an unreadable input file is fatal.
    pub fn ingest_posts(&mut self, input: impl AsRef<Path>) -> Result<IngestReport> {
        let input = input.as_ref();
        let file = File::open(input).map_err(|e| Error::io(input, e))?;
        let mut report = IngestReport {
            files_read: 1,
            ..Default::default()
        };

        // Content of posts added in this run, for duplicate-with-different-content warnings.
        let mut fresh: Vec<ForumPost> = Vec::new();
        let mut fresh_index: HashMap<(String, String), usize> = HashMap::new();

        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line_no = n + 1;
            let line = line.map_err(|e| Error::io(input, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let post = match serde_json::from_str::<DumpRecord>(&line) {
                Ok(rec) => rec.into_post(),
                Err(e) => Err(e.to_string()),
            };
            let post = match post {
                Ok(p) => p,
                Err(reason) => {
                    report.posts_rejected += 1;
                    report.rejection_reasons.push(Rejection { line: line_no, reason });
                    continue;
                }
            };
            let key = post.key();
            if let Some(&i) = fresh_index.get(&key) {
                if fresh[i] != post {
                    warn!("{}:{}: duplicate key {:?} with different content, keeping first", input.display(), line_no, key);
                }
                report.posts_skipped_duplicate += 1;
            } else if self.seen.contains(&key) {
                report.posts_skipped_duplicate += 1;
            } else {
                fresh_index.insert(key, fresh.len());
                fresh.push(post);
            }
        }

        if !fresh.is_empty() {
            self.append(&fresh)?;
        }
        report.posts_added = fresh.len();
        Ok(report)
    }

    fn append(&mut self, posts: &[ForumPost]) -> Result<()> {
        let log_path = self.dir.join(POSTS_FILE);
        let index_path = self.dir.join(INDEX_FILE);
        let open = |p: &Path| {
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map(BufWriter::new)
                .map_err(|e| Error::io(p, e))
        };
        let mut log = open(&log_path)?;
        for post in posts {
            serde_json::to_writer(&mut log, post)?;
            log.write_all(b"\n").map_err(|e| Error::io(&log_path, e))?;
        }
        log.flush().map_err(|e| Error::io(&log_path, e))?;

        let mut index = open(&index_path)?;
        for post in posts {
            writeln!(index, "{}", encode_key(&post.forum, &post.post_id)).map_err(|e| Error::io(&index_path, e))?;
            self.seen.insert(post.key());
        }
        index.flush().map_err(|e| Error::io(&index_path, e))
    }

    /// All stored posts in insertion order.
    pub fn posts(&self) -> Result<Vec<ForumPost>> {
        let path = self.dir.join(POSTS_FILE);
        if !path.exists() {
            return Ok(Vec::new());
        }
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.is_empty() {
                continue;
            }
            let post = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.clone(),
                line: n + 1,
                reason: e.to_string(),
            })?;
            out.push(post);
        }
        Ok(out)
    }
}

// Index entries are JSON arrays so that tabs or newlines inside ids survive.
fn encode_key(forum: &str, post_id: &str) -> String {
    serde_json::to_string(&(forum, post_id)).expect("strings always serialize")
}

fn decode_key(line: &str) -> Option<(String, String)> {
    serde_json::from_str(line).ok()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForumStats {
    pub name: String,
    pub language: String,
    pub post_count: usize,
    pub source_code_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusTotals {
    pub languages: usize,
    pub post_count: usize,
    pub source_code_count: usize,
}

/// Per-forum post and snippet counts with a totals row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub rows: Vec<ForumStats>,
    pub totals: CorpusTotals,
}

impl CorpusStats {
    pub fn from_posts<'a>(posts: impl IntoIterator<Item = &'a ForumPost>) -> Self {
        let mut by_forum: BTreeMap<&str, ForumStats> = BTreeMap::new();
        for post in posts {
            let row = by_forum.entry(post.forum.as_str()).or_insert_with(|| ForumStats {
                name: post.forum.clone(),
                language: post.language.clone(),
                post_count: 0,
                source_code_count: 0,
            });
            row.post_count += 1;
            if !post.source_code.trim().is_empty() {
                row.source_code_count += 1;
            }
        }
        let rows: Vec<ForumStats> = by_forum.into_values().collect();
        let languages = rows.iter().map(|r| r.language.as_str()).collect::<HashSet<_>>().len();
        let totals = CorpusTotals {
            languages,
            post_count: rows.iter().map(|r| r.post_count).sum(),
            source_code_count: rows.iter().map(|r| r.source_code_count).sum(),
        };
        CorpusStats { rows, totals }
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str("| Name | Language | Posts | Source Code |\n");
        out.push_str("|---|---|---:|---:|\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} |",
                r.name,
                r.language,
                group_thousands(r.post_count),
                group_thousands(r.source_code_count)
            );
        }
        let langs = if self.totals.languages == 1 { "Language" } else { "Languages" };
        let _ = writeln!(
            out,
            "| Total | {} {} | {} | {} |",
            self.totals.languages,
            langs,
            group_thousands(self.totals.post_count),
            group_thousands(self.totals.source_code_count)
        );
        out
    }
}

pub fn corpus_stats(store: &CorpusStore) -> Result<CorpusStats> {
    let posts = store.posts()?;
    Ok(CorpusStats::from_posts(&posts))
}

fn group_thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

/// A preprocessed snippet paired with its bin label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub record_id: String,
    pub tokens: TokenSequence,
    pub bin: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forum: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_id: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GoldLine {
    record_id: String,
    #[serde(default)]
    tokens: Option<Vec<String>>,
    #[serde(default)]
    raw_text: Option<String>,
    bin: String,
    #[serde(default)]
    forum: Option<String>,
    #[serde(default)]
    post_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinShare {
    pub bin: String,
    pub count: usize,
    /// Share of the dataset in percent, rounded to two decimals.
    pub percent: f64,
}

/// Labeled records with a fixed class-index order.
///
/// Class indices follow descending record count; ties keep the order of the
/// declared bin list. Only bins that actually occur become classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldDataset {
    classes: Vec<String>,
    records: Vec<GoldRecord>,
    labels: Vec<usize>,
}

impl GoldDataset {
    pub fn new(records: Vec<GoldRecord>, declared_bins: &[String]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Data("gold dataset is empty".into()));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for r in &records {
            if !declared_bins.contains(&r.bin) {
                return Err(Error::Data(format!("record {:?} has undeclared bin {:?}", r.record_id, r.bin)));
            }
            *counts.entry(r.bin.as_str()).or_default() += 1;
        }
        let mut classes: Vec<(usize, &String)> = declared_bins
            .iter()
            .enumerate()
            .filter(|(_, b)| counts.contains_key(b.as_str()))
            .collect();
        classes.sort_by(|(ia, a), (ib, b)| counts[b.as_str()].cmp(&counts[a.as_str()]).then(ia.cmp(ib)));
        let classes: Vec<String> = classes.into_iter().map(|(_, b)| b.clone()).collect();
        let labels = records
            .iter()
            .map(|r| classes.iter().position(|c| *c == r.bin).expect("bin is a class"))
            .collect();
        Ok(GoldDataset { classes, records, labels })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn records(&self) -> &[GoldRecord] {
        &self.records
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Per-class counts and percentages, in class-index order.
    pub fn shares(&self) -> Vec<BinShare> {
        let total = self.len() as f64;
        self.classes
            .iter()
            .zip(self.class_counts())
            .map(|(bin, count)| BinShare {
                bin: bin.clone(),
                count,
                percent: (count as f64 * 10_000.0 / total).round() / 100.0,
            })
            .collect()
    }

    /// Writes one JSON object per record (token form).
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct GoldLoad {
    pub dataset: GoldDataset,
    pub rejected: Vec<Rejection>,
}

/// Loads a gold-record file, rejecting records whose bin is outside
/// `declared_bins` or whose token sequence is empty.
pub fn load_gold(path: impl AsRef<Path>, declared_bins: &[String]) -> Result<GoldLoad> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_gold_line(&line, declared_bins) {
            Ok(r) => records.push(r),
            Err(reason) => rejected.push(Rejection { line: line_no, reason }),
        }
    }
    if records.is_empty() {
        return Err(Error::Data(format!("{}: no usable gold records", path.display())));
    }
    let dataset = GoldDataset::new(records, declared_bins)?;
    Ok(GoldLoad { dataset, rejected })
}

fn parse_gold_line(line: &str, declared_bins: &[String]) -> std::result::Result<GoldRecord, String> {
    let g: GoldLine = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if !declared_bins.contains(&g.bin) {
        return Err(format!("unknown bin {:?}", g.bin));
    }
    // Supplied tokens are re-normalized so every record satisfies the same
    // token invariants as raw text.
    let tokens = match (g.tokens, g.raw_text) {
        (Some(tokens), _) => normalize(&tokens.join(" ")),
        (None, Some(raw)) => normalize(&raw),
        (None, None) => return Err("record has neither tokens nor raw_text".into()),
    };
    if tokens.is_empty() {
        return Err("empty token sequence".into());
    }
    Ok(GoldRecord {
        record_id: g.record_id,
        tokens,
        bin: g.bin,
        forum: g.forum,
        post_id: g.post_id,
    })
}
