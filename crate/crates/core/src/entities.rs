//! Organization mention extraction, bin assignment, bin pruning and gold
//! dataset construction.
//!
//! Recognition sits behind the [`Recognizer`] trait. The shipped
//! implementation is a [`Gazetteer`]: case-insensitive, word-bounded,
//! longest-match-first dictionary lookup.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusStore, ForumPost, GoldDataset, GoldRecord};
use crate::error::{Error, Result};
use crate::textprep::normalize;

/// The starter gazetteer, covering the organizations named for each bin.
pub const STARTER_GAZETTEER: &str = include_str!("../data/gazetteer.csv");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GazetteerEntry {
    pub canonical_name: String,
    pub aliases: Vec<String>,
    pub bin: String,
}

/// A found organization. `span` is a byte range into the searched text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrgMention {
    pub canonical_name: String,
    pub surface: String,
    pub span: (usize, usize),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forum: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_id: Option<String>,
}

/// Anything that turns text into organization mentions.
pub trait Recognizer {
    fn recognize(&self, text: &str) -> Vec<OrgMention>;

    /// Bin of a canonical organization name, if known.
    fn bin_of(&self, canonical_name: &str) -> Option<&str>;
}

/// Mention counts per bin.
pub type BinCounts = BTreeMap<String, usize>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Sym {
    Char(char),
    /// One or more whitespace characters.
    Space,
}

#[derive(Debug, Default, Clone)]
struct TrieNode {
    children: HashMap<Sym, usize>,
    /// Entry index when an alias ends here.
    terminal: Option<usize>,
}

fn fold(c: char) -> char {
    let mut lower = c.to_lowercase();
    match (lower.next(), lower.next()) {
        (Some(l), None) => l,
        _ => c,
    }
}

fn alias_symbols(alias: &str) -> Vec<Sym> {
    let mut out = Vec::new();
    for c in alias.trim().chars() {
        if c.is_whitespace() {
            if out.last() != Some(&Sym::Space) {
                out.push(Sym::Space);
            }
        } else {
            out.push(Sym::Char(fold(c)));
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct Gazetteer {
    entries: Vec<GazetteerEntry>,
    by_name: HashMap<String, usize>,
    trie: Vec<TrieNode>,
}

impl Gazetteer {
    /// Builds the matcher. Canonical names must be unique after
    /// case-folding and no alias may point at two different organizations.
    /// The canonical name is always an alias of itself.
    pub fn new(entries: Vec<GazetteerEntry>) -> Result<Self> {
        let mut by_name = HashMap::new();
        let mut folded_names: HashMap<String, usize> = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            if e.canonical_name.trim().is_empty() || e.bin.trim().is_empty() {
                return Err(Error::Data(format!("gazetteer entry {} has an empty name or bin", i + 1)));
            }
            let folded: String = e.canonical_name.chars().map(fold).collect();
            if folded_names.insert(folded, i).is_some() {
                return Err(Error::Data(format!("duplicate canonical name {:?}", e.canonical_name)));
            }
            by_name.insert(e.canonical_name.clone(), i);
        }

        let mut trie = vec![TrieNode::default()];
        for (i, e) in entries.iter().enumerate() {
            for alias in std::iter::once(&e.canonical_name).chain(e.aliases.iter()) {
                let syms = alias_symbols(alias);
                if syms.is_empty() {
                    continue;
                }
                let mut node = 0;
                for s in syms {
                    node = match trie[node].children.get(&s) {
                        Some(&next) => next,
                        None => {
                            trie.push(TrieNode::default());
                            let next = trie.len() - 1;
                            trie[node].children.insert(s, next);
                            next
                        }
                    };
                }
                match trie[node].terminal {
                    Some(j) if j != i => {
                        return Err(Error::Data(format!(
                            "alias {alias:?} maps to both {:?} and {:?}",
                            entries[j].canonical_name, e.canonical_name
                        )))
                    }
                    _ => trie[node].terminal = Some(i),
                }
            }
        }
        Ok(Gazetteer { entries, by_name, trie })
    }

    /// Parses CSV with header `canonical_name,aliases,bin`; aliases are
    /// separated by `;`.
    pub fn from_csv_reader(reader: impl Read) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            canonical_name: String,
            aliases: String,
            bin: String,
        }
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut entries = Vec::new();
        for (n, row) in rdr.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| Error::Data(format!("gazetteer row {}: {e}", n + 2)))?;
            entries.push(GazetteerEntry {
                canonical_name: row.canonical_name,
                aliases: row
                    .aliases
                    .split(';')
                    .map(str::trim)
                    .filter(|a| !a.is_empty())
                    .map(str::to_string)
                    .collect(),
                bin: row.bin,
            });
        }
        Self::new(entries)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file)
    }

    pub fn starter() -> Self {
        Self::from_csv_reader(STARTER_GAZETTEER.as_bytes()).expect("bundled gazetteer is valid")
    }

    pub fn entries(&self) -> &[GazetteerEntry] {
        &self.entries
    }

    /// Distinct bins in first-appearance order.
    pub fn bins(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in &self.entries {
            if !out.contains(&e.bin) {
                out.push(e.bin.clone());
            }
        }
        out
    }

    /// Longest alias match starting at byte `start`; returns (end, entry).
    fn longest_at(&self, text: &str, start: usize) -> Option<(usize, usize)> {
        let mut node = 0;
        let mut best = None;
        let mut chars = text[start..].char_indices().peekable();
        while let Some((off, c)) = chars.next() {
            let (sym, mut end) = if c.is_whitespace() {
                (Sym::Space, start + off + c.len_utf8())
            } else {
                (Sym::Char(fold(c)), start + off + c.len_utf8())
            };
            if sym == Sym::Space {
                // an alias space absorbs a whole whitespace run
                while let Some(&(o, w)) = chars.peek() {
                    if !w.is_whitespace() {
                        break;
                    }
                    end = start + o + w.len_utf8();
                    chars.next();
                }
            }
            match self.trie[node].children.get(&sym) {
                Some(&next) => node = next,
                None => break,
            }
            if let Some(entry) = self.trie[node].terminal {
                if sym != Sym::Space && is_boundary(text, end) {
                    best = Some((end, entry));
                }
            }
        }
        best
    }
}

/// True when positions `pos-1` and `pos` are not both alphanumeric.
fn is_boundary(text: &str, pos: usize) -> bool {
    let before = text[..pos].chars().next_back();
    let after = text[pos..].chars().next();
    match (before, after) {
        (Some(b), Some(a)) => !(b.is_alphanumeric() && a.is_alphanumeric()),
        _ => true,
    }
}

impl Recognizer for Gazetteer {
    fn recognize(&self, text: &str) -> Vec<OrgMention> {
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < text.len() {
            if is_boundary(text, pos) {
                if let Some((end, entry)) = self.longest_at(text, pos) {
                    out.push(OrgMention {
                        canonical_name: self.entries[entry].canonical_name.clone(),
                        surface: text[pos..end].to_string(),
                        span: (pos, end),
                        forum: None,
                        post_id: None,
                    });
                    pos = end;
                    continue;
                }
            }
            pos += text[pos..].chars().next().map_or(1, char::len_utf8);
        }
        out
    }

    fn bin_of(&self, canonical_name: &str) -> Option<&str> {
        self.by_name.get(canonical_name).map(|&i| self.entries[i].bin.as_str())
    }
}

/// Every non-overlapping, longest-first, case-insensitive, word-bounded
/// alias match, ordered by span start.
pub fn extract_orgs(text: &str, recognizer: &impl Recognizer) -> Vec<OrgMention> {
    recognizer.recognize(text)
}

/// Mentions found in one post's prose, tagged with the post reference.
pub fn extract_from_post(post: &ForumPost, recognizer: &impl Recognizer) -> Vec<OrgMention> {
    recognizer
        .recognize(&post.mention_text())
        .into_iter()
        .map(|m| OrgMention {
            forum: Some(post.forum.clone()),
            post_id: Some(post.post_id.clone()),
            ..m
        })
        .collect()
}

/// Counts mentions per bin. Every bin the recognizer knows appears in the
/// result, with zero when unmentioned.
pub fn assign_bins(mentions: &[OrgMention], gazetteer: &Gazetteer) -> Result<BinCounts> {
    let mut counts: BinCounts = gazetteer.bins().into_iter().map(|b| (b, 0)).collect();
    for m in mentions {
        let bin = gazetteer
            .bin_of(&m.canonical_name)
            .ok_or_else(|| Error::UnknownOrganization(m.canonical_name.clone()))?;
        *counts.entry(bin.to_string()).or_default() += 1;
    }
    Ok(counts)
}

/// Keeps the bins with at least `min_mentions` mentions.
pub fn prune_bins(counts: &BinCounts, min_mentions: usize) -> BinCounts {
    counts
        .iter()
        .filter(|(_, &n)| n >= min_mentions)
        .map(|(b, &n)| (b.clone(), n))
        .collect()
}

pub const DEFAULT_MIN_MENTIONS: usize = 100;

/// Majority bin among mentions restricted to `retained`; ties go to the bin
/// whose first mention comes earliest.
fn majority_bin<'a>(mentions: &[OrgMention], recognizer: &'a impl Recognizer, retained: &[String]) -> Option<&'a str> {
    let mut tally: Vec<(&str, usize, usize)> = Vec::new(); // (bin, count, first position)
    for (pos, m) in mentions.iter().enumerate() {
        let Some(bin) = recognizer.bin_of(&m.canonical_name) else { continue };
        if !retained.iter().any(|r| r == bin) {
            continue;
        }
        match tally.iter_mut().find(|t| t.0 == bin) {
            Some(t) => t.1 += 1,
            None => tally.push((bin, 1, pos)),
        }
    }
    tally
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2)))
        .map(|t| t.0)
}

/// One gold record per post that has source code and at least one mention
/// in a retained bin, labeled by [`majority_bin`]. Records come out sorted
/// by `(forum, post_id)`.
pub fn build_gold_from_posts(
    posts: &[ForumPost],
    recognizer: &impl Recognizer,
    retained_bins: &[String],
) -> Result<Option<GoldDataset>> {
    if retained_bins.is_empty() {
        return Err(Error::Config("retained bin set is empty".into()));
    }
    let mut sorted: Vec<&ForumPost> = posts.iter().collect();
    sorted.sort_by(|a, b| (&a.forum, &a.post_id).cmp(&(&b.forum, &b.post_id)));

    let mut records = Vec::new();
    for post in sorted {
        if post.source_code.trim().is_empty() {
            continue;
        }
        let mentions = recognizer.recognize(&post.mention_text());
        let Some(bin) = majority_bin(&mentions, recognizer, retained_bins) else { continue };
        let tokens = normalize(&post.source_code);
        if tokens.is_empty() {
            continue;
        }
        records.push(GoldRecord {
            record_id: format!("{}:{}", post.forum, post.post_id),
            tokens,
            bin: bin.to_string(),
            forum: Some(post.forum.clone()),
            post_id: Some(post.post_id.clone()),
        });
    }
    if records.is_empty() {
        warn!("no post produced a gold record for bins {retained_bins:?}");
        return Ok(None);
    }
    GoldDataset::new(records, retained_bins).map(Some)
}

pub fn build_gold(store: &CorpusStore, recognizer: &impl Recognizer, retained_bins: &[String]) -> Result<Option<GoldDataset>> {
    build_gold_from_posts(&store.posts()?, recognizer, retained_bins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn names(ms: &[OrgMention]) -> Vec<&str> {
        ms.iter().map(|m| m.canonical_name.as_str()).collect()
    }

    fn gaz(rows: &[(&str, &[&str], &str)]) -> Gazetteer {
        Gazetteer::new(
            rows.iter()
                .map(|(n, a, b)| GazetteerEntry {
                    canonical_name: n.to_string(),
                    aliases: a.iter().map(|s| s.to_string()).collect(),
                    bin: b.to_string(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn post(id: &str, title: &str, code: &str) -> ForumPost {
        ForumPost {
            post_id: id.into(),
            forum: "f".into(),
            language: "English".into(),
            title: title.into(),
            date: NaiveDate::from_ymd_opt(2019, 9, 26).unwrap(),
            author: "a".into(),
            author_reputation: "3/5 stars".into(),
            description: String::new(),
            source_code: code.into(),
            discussion: String::new(),
        }
    }

    #[test]
    fn netflix_in_example_sentence() {
        let g = Gazetteer::starter();
        let ms = extract_orgs("This SQL injection gives a free login to a Netflix account.", &g);
        assert_eq!(names(&ms), vec!["Netflix"]);
        assert_eq!(ms[0].surface, "Netflix");
        assert_eq!(ms[0].span, (43, 50));
    }

    #[test]
    fn empty_text_and_case_insensitivity() {
        let g = Gazetteer::starter();
        assert!(extract_orgs("", &g).is_empty());
        let ms = extract_orgs("MySQL rocks; mysql forever", &g);
        assert_eq!(names(&ms), vec!["MySQL", "MySQL"]);
        assert_eq!(ms[1].surface, "mysql");
    }

    #[test]
    fn word_boundaries_and_longest_match() {
        let g = gaz(&[
            ("Oracle", &[], "Software"),
            ("Oracle Cloud", &["oracle  cloud"], "Cloud"),
            ("Go", &[], "Lang"),
        ]);
        assert!(extract_orgs("Oracles and mongo", &g).is_empty());
        let ms = extract_orgs("hit Oracle   Cloud, then oracle.", &g);
        assert_eq!(names(&ms), vec!["Oracle Cloud", "Oracle"]);
        assert_eq!(ms[0].surface, "Oracle   Cloud");
        // trailing whitespace is not part of a match
        let ms = extract_orgs("Oracle ", &g);
        assert_eq!(ms[0].span, (0, 6));
    }

    #[test]
    fn gazetteer_rejects_conflicts() {
        let dup = Gazetteer::new(vec![
            GazetteerEntry { canonical_name: "Acme".into(), aliases: vec![], bin: "A".into() },
            GazetteerEntry { canonical_name: "ACME".into(), aliases: vec![], bin: "B".into() },
        ]);
        assert!(dup.is_err());
        let shared = Gazetteer::new(vec![
            GazetteerEntry { canonical_name: "Acme".into(), aliases: vec!["ac".into()], bin: "A".into() },
            GazetteerEntry { canonical_name: "Beta".into(), aliases: vec!["AC".into()], bin: "B".into() },
        ]);
        assert!(shared.is_err());
    }

    #[test]
    fn starter_gazetteer_bins() {
        let g = Gazetteer::starter();
        for (org, bin) in [
            ("MySQL", "Databases"),
            ("RethinkDB", "Databases"),
            ("GenieDB", "Databases"),
            ("Google", "Software"),
            ("Oracle", "Software"),
            ("Mozilla", "Open Source"),
            ("Mapbox", "Open Source"),
            ("RockYou", "Mobile"),
            ("Showbucks", "Mobile"),
            ("Verizon", "Mobile"),
            ("Twitch", "Video Games"),
            ("Oculus", "Video Games"),
            ("Zynga", "Video Games"),
        ] {
            assert_eq!(g.bin_of(org), Some(bin), "{org}");
        }
    }

    #[test]
    fn bin_assignment() {
        let g = Gazetteer::starter();
        let ms = extract_orgs("Mozilla", &g);
        let c = assign_bins(&ms, &g).unwrap();
        assert_eq!(c["Open Source"], 1);
        assert_eq!(c.values().sum::<usize>(), 1);

        let ms = extract_orgs("Twitch, Oculus and Zynga", &g);
        assert_eq!(assign_bins(&ms, &g).unwrap()["Video Games"], 3);

        let zero = assign_bins(&[], &g).unwrap();
        assert_eq!(zero.len(), 5);
        assert!(zero.values().all(|&n| n == 0));

        let bogus = OrgMention { canonical_name: "Initech".into(), surface: "Initech".into(), span: (0, 7), forum: None, post_id: None };
        assert!(matches!(assign_bins(&[bogus], &g), Err(Error::UnknownOrganization(n)) if n == "Initech"));
    }

    #[test]
    fn pruning_boundaries() {
        let counts: BinCounts = [("Open Source".to_string(), 961), ("X".to_string(), 99)].into_iter().collect();
        assert_eq!(prune_bins(&counts, 100).keys().collect::<Vec<_>>(), vec!["Open Source"]);
        let y: BinCounts = [("Y".to_string(), 100)].into_iter().collect();
        assert_eq!(prune_bins(&y, 100), y);
        assert!(prune_bins(&BinCounts::new(), 100).is_empty());
    }

    #[test]
    fn gold_labels_follow_majority_then_earliest() {
        let g = Gazetteer::starter();
        let bins = crate::corpus::default_bins();
        let posts = vec![
            post("1", "Netflix login bypass", "curl netflix"),
            post("2", "Mozilla Mozilla MySQL", "exploit code"),
            post("3", "nothing to see", "code"),
            post("4", "MySQL vs Mozilla", "code"),
            post("5", "Netflix", ""),
        ];
        let ds = build_gold_from_posts(&posts, &g, &bins).unwrap().unwrap();
        let got: Vec<(&str, &str)> = ds.records().iter().map(|r| (r.record_id.as_str(), r.bin.as_str())).collect();
        assert_eq!(got, vec![("f:1", "Software"), ("f:2", "Open Source"), ("f:4", "Databases")]);

        // Restricting the retained set changes the label to what is left.
        let only_os = vec!["Open Source".to_string()];
        let ds = build_gold_from_posts(&posts, &g, &only_os).unwrap().unwrap();
        assert!(ds.records().iter().all(|r| r.bin == "Open Source"));
        assert_eq!(ds.len(), 2);

        assert!(build_gold_from_posts(&posts, &g, &[]).is_err());
        assert!(build_gold_from_posts(&posts[2..3], &g, &bins).unwrap().is_none());
    }

    fn flip_case(s: &str, mask: &[bool]) -> String {
        s.chars()
            .zip(mask.iter().cycle())
            .map(|(c, &up)| if up { c.to_ascii_uppercase() } else { c.to_ascii_lowercase() })
            .collect()
    }

    proptest! {
        #[test]
        fn spans_are_ordered_disjoint_and_exact(words in proptest::collection::vec(
            prop_oneof![
                Just("MySQL"), Just("mozilla"), Just("Google"), Just("googles"), Just("the"),
                Just("x"), Just("Video"), Just("Zynga!"), Just("rock"), Just("RockYou"), Just(",")
            ], 0..25),
            sep in prop_oneof![Just(" "), Just("  "), Just("\n"), Just("-")],
        ) {
            let text = words.join(sep);
            let g = Gazetteer::starter();
            let ms = extract_orgs(&text, &g);
            let mut last_end = 0;
            for m in &ms {
                prop_assert!(m.span.0 >= last_end && m.span.0 < m.span.1 && m.span.1 <= text.len());
                prop_assert_eq!(&text[m.span.0..m.span.1], m.surface.as_str());
                last_end = m.span.1;
            }
        }

        #[test]
        fn extraction_ignores_case(
            words in proptest::collection::vec(prop_oneof![Just("mysql"), Just("oculus"), Just("filler"), Just("verizon"), Just("mapbox")], 0..15),
            mask in proptest::collection::vec(any::<bool>(), 1..8),
        ) {
            let g = Gazetteer::starter();
            let text = words.join(" ");
            let flipped = flip_case(&text, &mask);
            let (a, b) = (extract_orgs(&text, &g), extract_orgs(&flipped, &g));
            prop_assert_eq!(names(&a), names(&b));
        }

        #[test]
        fn pruning_is_an_idempotent_subset(counts in proptest::collection::btree_map("[A-E]", 0usize..300, 0..5), t in 0usize..300) {
            let once = prune_bins(&counts, t);
            prop_assert!(once.iter().all(|(k, v)| counts.get(k) == Some(v) && *v >= t));
            prop_assert_eq!(prune_bins(&once, t), once);
        }
    }
}
