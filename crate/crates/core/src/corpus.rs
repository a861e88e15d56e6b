//! Nested text corpora: sites containing pages containing word tokens.
//!
//! Pages arrive as line-delimited JSON records
//! `{"site_id": .., "page_id": .., "tokens": [..]}` and optional site
//! covariates as a CSV file keyed by `site_id`. Sites, pages and vocabulary
//! entries are indexed in order of first appearance, which makes a
//! write/read cycle reproduce identical indices.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::RngStream;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("covariates: {0}")]
    Csv(#[from] csv::Error),
    #[error("covariates reference unknown site `{0}`")]
    UnknownSite(String),
    #[error("no covariates for site `{0}`")]
    MissingCovariates(String),
    #[error("duplicate covariate row for site `{0}`")]
    DuplicateCovariates(String),
    #[error("covariate `{column}` for site `{site}` is not a number: `{value}`")]
    BadCovariate {
        site: String,
        column: String,
        value: String,
    },
    #[error("duplicate page `{page}` in site `{site}`")]
    DuplicatePage { site: String, page: String },
    #[error("page `{page}` in site `{site}` has no tokens")]
    EmptyPage { site: String, page: String },
    #[error("site `{0}` has no pages")]
    EmptySite(String),
    #[error("vocabulary entry {0} is empty or duplicated")]
    BadVocabulary(usize),
    #[error("token index {index} out of range for vocabulary of size {size}")]
    TokenOutOfRange { index: u32, size: usize },
    #[error("corpus is empty")]
    Empty,
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page {
    pub id: String,
    /// Vocabulary indices, zero-based.
    pub tokens: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Site {
    pub id: String,
    pub pages: Vec<Page>,
}

/// Site-level covariates: an `M × Q` row-major design matrix.
///
/// When built from a categorical `region` column, `regions` keeps each
/// site's label and the matrix is the cell-means expansion: one indicator
/// column per level, no shared intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariates {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub regions: Option<Vec<String>>,
}

impl Covariates {
    pub fn from_regions(labels: Vec<String>) -> Self {
        let mut levels: Vec<String> = Vec::new();
        for l in &labels {
            if !levels.contains(l) {
                levels.push(l.clone());
            }
        }
        let q = levels.len();
        let mut values = vec![0.0; labels.len() * q];
        for (i, l) in labels.iter().enumerate() {
            let col = levels.iter().position(|x| x == l).expect("level present");
            values[i * q + col] = 1.0;
        }
        Self {
            names: levels,
            values,
            regions: Some(labels),
        }
    }

    pub fn n_columns(&self) -> usize {
        self.names.len()
    }

    pub fn n_rows(&self) -> usize {
        if self.names.is_empty() {
            0
        } else {
            self.values.len() / self.names.len()
        }
    }

    pub fn row(&self, site: usize) -> &[f64] {
        let q = self.n_columns();
        &self.values[site * q..(site + 1) * q]
    }

    fn select_rows(&self, keep: &[usize]) -> Self {
        match &self.regions {
            Some(labels) => Self::from_regions(keep.iter().map(|&i| labels[i].clone()).collect()),
            None => {
                let mut values = Vec::with_capacity(keep.len() * self.n_columns());
                for &i in keep {
                    values.extend_from_slice(self.row(i));
                }
                Self {
                    names: self.names.clone(),
                    values,
                    regions: None,
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    sites: Vec<Site>,
    vocabulary: Vec<String>,
    covariates: Option<Covariates>,
}

/// Counts printed by `ingest`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub sites: usize,
    pub pages: usize,
    pub vocabulary: usize,
    pub tokens: usize,
}

impl std::fmt::Display for CorpusSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} sites, {} pages, V={}, {} tokens",
            group_thousands(self.sites),
            group_thousands(self.pages),
            group_thousands(self.vocabulary),
            group_thousands(self.tokens)
        )
    }
}

fn group_thousands(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::with_capacity(s.len() + s.len() / 3);
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

impl Corpus {
    pub fn new(sites: Vec<Site>, vocabulary: Vec<String>, covariates: Option<Covariates>) -> Result<Self, CorpusError> {
        if sites.is_empty() {
            return Err(CorpusError::Empty);
        }
        let mut seen = HashSet::new();
        for (i, w) in vocabulary.iter().enumerate() {
            if w.is_empty() || !seen.insert(w.as_str()) {
                return Err(CorpusError::BadVocabulary(i));
            }
        }
        let mut site_ids = HashSet::new();
        for site in &sites {
            if !site_ids.insert(site.id.as_str()) {
                return Err(CorpusError::Invalid(format!("duplicate site `{}`", site.id)));
            }
            if site.pages.is_empty() {
                return Err(CorpusError::EmptySite(site.id.clone()));
            }
            let mut page_ids = HashSet::new();
            for page in &site.pages {
                if !page_ids.insert(page.id.as_str()) {
                    return Err(CorpusError::DuplicatePage {
                        site: site.id.clone(),
                        page: page.id.clone(),
                    });
                }
                if page.tokens.is_empty() {
                    return Err(CorpusError::EmptyPage {
                        site: site.id.clone(),
                        page: page.id.clone(),
                    });
                }
                if let Some(&bad) = page.tokens.iter().find(|&&t| t as usize >= vocabulary.len()) {
                    return Err(CorpusError::TokenOutOfRange {
                        index: bad,
                        size: vocabulary.len(),
                    });
                }
            }
        }
        if let Some(cov) = &covariates {
            if cov.n_columns() == 0 {
                return Err(CorpusError::Invalid("covariates need at least one column".into()));
            }
            if cov.values.len() != sites.len() * cov.n_columns() {
                return Err(CorpusError::Invalid(format!(
                    "covariate matrix has {} rows, expected {}",
                    cov.n_rows(),
                    sites.len()
                )));
            }
        }
        Ok(Self {
            sites,
            vocabulary,
            covariates,
        })
    }

    /// Builds a corpus from string-token pages, assigning vocabulary indices in
    /// order of first appearance.
    pub fn from_token_strings<I>(records: I, covariates: Option<Covariates>) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = PageRecord>,
    {
        let mut vocab: Vec<String> = Vec::new();
        let mut lookup: HashMap<String, u32> = HashMap::new();
        let mut sites: Vec<Site> = Vec::new();
        let mut site_lookup: HashMap<String, usize> = HashMap::new();
        for rec in records {
            let tokens = rec
                .tokens
                .into_iter()
                .map(|w| {
                    *lookup.entry(w.clone()).or_insert_with(|| {
                        vocab.push(w);
                        (vocab.len() - 1) as u32
                    })
                })
                .collect();
            let idx = *site_lookup.entry(rec.site_id.clone()).or_insert_with(|| {
                sites.push(Site {
                    id: rec.site_id.clone(),
                    pages: Vec::new(),
                });
                sites.len() - 1
            });
            sites[idx].pages.push(Page {
                id: rec.page_id,
                tokens,
            });
        }
        Self::new(sites, vocab, covariates)
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn covariates(&self) -> Option<&Covariates> {
        self.covariates.as_ref()
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn n_pages(&self) -> usize {
        self.sites.iter().map(|s| s.pages.len()).sum()
    }

    pub fn total_tokens(&self) -> usize {
        self.pages().map(|(_, p)| p.tokens.len()).sum()
    }

    /// Pages in flattened order, each with its site index.
    pub fn pages(&self) -> impl Iterator<Item = (usize, &Page)> + '_ {
        self.sites
            .iter()
            .enumerate()
            .flat_map(|(i, s)| s.pages.iter().map(move |p| (i, p)))
    }

    /// Flattened index of each site's first page; has `M + 1` entries.
    pub fn site_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.sites.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for s in &self.sites {
            acc += s.pages.len();
            offsets.push(acc);
        }
        offsets
    }

    pub fn summary(&self) -> CorpusSummary {
        CorpusSummary {
            sites: self.n_sites(),
            pages: self.n_pages(),
            vocabulary: self.vocab_size(),
            tokens: self.total_tokens(),
        }
    }

    pub fn word_index(&self, word: &str) -> Option<u32> {
        self.vocabulary.iter().position(|w| w == word).map(|i| i as u32)
    }

    /// Same pages and vocabulary with new token lists (one per flattened
    /// page). Used to carve training sets out of a corpus.
    pub fn with_page_tokens(&self, tokens: Vec<Vec<u32>>) -> Result<Self, CorpusError> {
        let c = self.with_page_tokens_unchecked(tokens)?;
        Self::new(c.sites, c.vocabulary, c.covariates)
    }

    /// Like [`Corpus::with_page_tokens`] but allows empty pages. Only the
    /// joint-distribution test needs such corpora.
    pub(crate) fn with_page_tokens_unchecked(&self, tokens: Vec<Vec<u32>>) -> Result<Self, CorpusError> {
        if tokens.len() != self.n_pages() {
            return Err(CorpusError::Invalid("token lists do not match page count".into()));
        }
        let mut it = tokens.into_iter();
        let sites = self
            .sites
            .iter()
            .map(|s| Site {
                id: s.id.clone(),
                pages: s
                    .pages
                    .iter()
                    .map(|p| Page {
                        id: p.id.clone(),
                        tokens: it.next().expect("length checked"),
                    })
                    .collect(),
            })
            .collect();
        Ok(Self {
            sites,
            vocabulary: self.vocabulary.clone(),
            covariates: self.covariates.clone(),
        })
    }

    pub fn with_covariates(mut self, covariates: Option<Covariates>) -> Result<Self, CorpusError> {
        self.covariates = covariates;
        Self::new(self.sites, self.vocabulary, self.covariates)
    }

    /// Writes pages as line-delimited JSON records with string tokens.
    pub fn write_pages<W: Write>(&self, mut out: W) -> Result<(), CorpusError> {
        for site in &self.sites {
            for page in &site.pages {
                let rec = PageRecordRef {
                    site_id: &site.id,
                    page_id: &page.id,
                    tokens: page.tokens.iter().map(|&t| self.vocabulary[t as usize].as_str()).collect(),
                };
                serde_json::to_writer(&mut out, &rec).map_err(|e| CorpusError::Json { line: 0, source: e })?;
                out.write_all(b"\n")?;
            }
        }
        Ok(())
    }

    /// Writes covariates as CSV: `site_id,region` for categorical covariates,
    /// otherwise `site_id` followed by the numeric columns.
    pub fn write_covariates<W: Write>(&self, out: W) -> Result<(), CorpusError> {
        let Some(cov) = &self.covariates else {
            return Ok(());
        };
        let mut w = csv::Writer::from_writer(out);
        match &cov.regions {
            Some(labels) => {
                w.write_record(["site_id", "region"])?;
                for (site, label) in self.sites.iter().zip(labels) {
                    w.write_record([site.id.as_str(), label.as_str()])?;
                }
            }
            None => {
                let mut header = vec!["site_id".to_string()];
                header.extend(cov.names.iter().cloned());
                w.write_record(&header)?;
                for (i, site) in self.sites.iter().enumerate() {
                    let mut row = vec![site.id.clone()];
                    row.extend(cov.row(i).iter().map(|v| v.to_string()));
                    w.write_record(&row)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, pages_path: &Path, covariates_path: Option<&Path>) -> Result<(), CorpusError> {
        let mut w = BufWriter::new(File::create(pages_path)?);
        self.write_pages(&mut w)?;
        w.flush()?;
        if let Some(p) = covariates_path {
            if self.covariates.is_some() {
                self.write_covariates(BufWriter::new(File::create(p)?))?;
            }
        }
        Ok(())
    }
}

/// One input line of the pages file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageRecord {
    pub site_id: String,
    pub page_id: String,
    pub tokens: Vec<String>,
}

#[derive(Serialize)]
struct PageRecordRef<'a> {
    site_id: &'a str,
    page_id: &'a str,
    tokens: Vec<&'a str>,
}

pub fn read_page_records<R: Read>(input: R) -> Result<Vec<PageRecord>, CorpusError> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PageRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Json {
            line: n + 1,
            source: e,
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Parses a covariates CSV against the given site order.
pub fn read_covariates<R: Read>(input: R, site_ids: &[&str]) -> Result<Covariates, CorpusError> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.len() < 2 || header[0] != "site_id" {
        return Err(CorpusError::Invalid(
            "covariates header must start with `site_id` and name at least one column".into(),
        ));
    }
    let categorical = header.len() == 2 && header[1] == "region";
    let position: HashMap<&str, usize> = site_ids.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let mut rows: Vec<Option<Vec<String>>> = vec![None; site_ids.len()];
    for rec in rdr.records() {
        let rec = rec?;
        let site = rec.get(0).unwrap_or("").trim().to_string();
        let &i = position.get(site.as_str()).ok_or_else(|| CorpusError::UnknownSite(site.clone()))?;
        if rows[i].is_some() {
            return Err(CorpusError::DuplicateCovariates(site));
        }
        rows[i] = Some(rec.iter().skip(1).map(|s| s.trim().to_string()).collect());
    }
    let mut filled = Vec::with_capacity(rows.len());
    for (i, row) in rows.into_iter().enumerate() {
        filled.push(row.ok_or_else(|| CorpusError::MissingCovariates(site_ids[i].to_string()))?);
    }
    if categorical {
        return Ok(Covariates::from_regions(filled.into_iter().map(|mut r| r.remove(0)).collect()));
    }
    let names: Vec<String> = header[1..].to_vec();
    let mut values = Vec::with_capacity(filled.len() * names.len());
    for (i, row) in filled.iter().enumerate() {
        for (col, raw) in names.iter().zip(row) {
            let v: f64 = raw.parse().map_err(|_| CorpusError::BadCovariate {
                site: site_ids[i].to_string(),
                column: col.clone(),
                value: raw.clone(),
            })?;
            values.push(v);
        }
    }
    Ok(Covariates {
        names,
        values,
        regions: None,
    })
}

/// Reads a pages file and an optional covariates file.
pub fn load_corpus(pages_path: &Path, covariates_path: Option<&Path>) -> Result<Corpus, CorpusError> {
    let records = read_page_records(File::open(pages_path)?)?;
    let corpus = Corpus::from_token_strings(records, None)?;
    match covariates_path {
        None => Ok(corpus),
        Some(p) => {
            let ids: Vec<&str> = corpus.sites().iter().map(|s| s.id.as_str()).collect();
            let cov = read_covariates(File::open(p)?, &ids)?;
            corpus.with_covariates(Some(cov))
        }
    }
}

/// Thresholds for [`filter_corpus`]. `usize::MAX` disables an upper bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterThresholds {
    pub min_pages_per_word: usize,
    pub min_words_per_page: usize,
    pub max_words_per_page: usize,
    pub max_pages_per_site: usize,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        Self {
            min_pages_per_word: 20,
            min_words_per_page: 50,
            max_words_per_page: 1000,
            max_pages_per_site: 100,
        }
    }
}

impl FilterThresholds {
    pub fn none() -> Self {
        Self {
            min_pages_per_word: 0,
            min_words_per_page: 1,
            max_words_per_page: usize::MAX,
            max_pages_per_site: usize::MAX,
        }
    }
}

/// Drops rare words, then out-of-range pages, then oversized sites, and
/// reindexes the vocabulary densely. The three steps repeat until nothing
/// changes, so the result is a fixed point of the filter.
pub fn filter_corpus(corpus: &Corpus, t: &FilterThresholds) -> Result<Corpus, CorpusError> {
    let mut current = corpus.clone();
    loop {
        let next = filter_pass(&current, t)?;
        if next == current {
            return Ok(next);
        }
        current = next;
    }
}

fn filter_pass(corpus: &Corpus, t: &FilterThresholds) -> Result<Corpus, CorpusError> {
    let v = corpus.vocab_size();
    let mut doc_freq = vec![0usize; v];
    let mut seen = vec![usize::MAX; v];
    for (n, (_, page)) in corpus.pages().enumerate() {
        for &w in &page.tokens {
            if seen[w as usize] != n {
                seen[w as usize] = n;
                doc_freq[w as usize] += 1;
            }
        }
    }
    let keep_word: Vec<bool> = doc_freq.iter().map(|&d| d >= t.min_pages_per_word).collect();

    let mut kept_sites = Vec::new();
    let mut kept_rows = Vec::new();
    for (i, site) in corpus.sites().iter().enumerate() {
        let pages: Vec<Page> = site
            .pages
            .iter()
            .filter_map(|p| {
                let tokens: Vec<u32> = p.tokens.iter().copied().filter(|&w| keep_word[w as usize]).collect();
                let n = tokens.len();
                (n >= t.min_words_per_page.max(1) && n <= t.max_words_per_page).then(|| Page {
                    id: p.id.clone(),
                    tokens,
                })
            })
            .collect();
        if !pages.is_empty() && pages.len() <= t.max_pages_per_site {
            kept_sites.push(Site {
                id: site.id.clone(),
                pages,
            });
            kept_rows.push(i);
        }
    }
    if kept_sites.is_empty() {
        return Err(CorpusError::Empty);
    }

    let mut remap = vec![u32::MAX; v];
    let mut vocab = Vec::new();
    for site in &mut kept_sites {
        for page in &mut site.pages {
            for w in &mut page.tokens {
                let slot = &mut remap[*w as usize];
                if *slot == u32::MAX {
                    *slot = vocab.len() as u32;
                    vocab.push(corpus.vocabulary[*w as usize].clone());
                }
                *w = *slot;
            }
        }
    }
    let cov = corpus.covariates.as_ref().map(|c| c.select_rows(&kept_rows));
    Corpus::new(kept_sites, vocab, cov)
}

/// One random train/held-out partition of every page's tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoldoutSplit {
    pub fold: usize,
    /// Sorted held-out token positions for each flattened page.
    pub heldout: Vec<Vec<u32>>,
    /// Flattened pages that ended up with nothing held out.
    pub flagged: Vec<usize>,
}

impl HoldoutSplit {
    pub fn total_heldout(&self) -> usize {
        self.heldout.iter().map(|h| h.len()).sum()
    }

    /// The corpus restricted to training tokens.
    pub fn training_corpus(&self, corpus: &Corpus) -> Result<Corpus, CorpusError> {
        let tokens = corpus
            .pages()
            .zip(&self.heldout)
            .map(|((_, page), held)| {
                let mut h = held.iter().peekable();
                page.tokens
                    .iter()
                    .enumerate()
                    .filter_map(|(pos, &w)| {
                        if h.peek().is_some_and(|&&p| p as usize == pos) {
                            h.next();
                            None
                        } else {
                            Some(w)
                        }
                    })
                    .collect()
            })
            .collect();
        corpus.with_page_tokens(tokens)
    }

    /// Held-out words per flattened page as sorted `(word, count)` pairs.
    pub fn heldout_counts(&self, corpus: &Corpus) -> Vec<Vec<(u32, u32)>> {
        corpus
            .pages()
            .zip(&self.heldout)
            .map(|((_, page), held)| {
                let mut words: Vec<u32> = held.iter().map(|&p| page.tokens[p as usize]).collect();
                words.sort_unstable();
                let mut out: Vec<(u32, u32)> = Vec::new();
                for w in words {
                    match out.last_mut() {
                        Some((last, c)) if *last == w => *c += 1,
                        _ => out.push((w, 1)),
                    }
                }
                out
            })
            .collect()
    }
}

/// `folds` independent random splits, each holding out
/// `round(heldout_frac · len)` tokens of every page (at most `len - 1`).
pub fn make_splits(
    corpus: &Corpus,
    folds: usize,
    heldout_frac: f64,
    seed: u64,
) -> Result<Vec<HoldoutSplit>, CorpusError> {
    if folds == 0 {
        return Err(CorpusError::Invalid("need at least one fold".into()));
    }
    if !(heldout_frac > 0.0 && heldout_frac < 1.0) {
        return Err(CorpusError::Invalid(format!(
            "held-out fraction must lie in (0, 1), got {heldout_frac}"
        )));
    }
    Ok((0..folds)
        .map(|fold| {
            let mut rng = RngStream::new(seed, fold as u64);
            let mut flagged = Vec::new();
            let heldout = corpus
                .pages()
                .enumerate()
                .map(|(n, (_, page))| {
                    let len = page.tokens.len();
                    let k = ((heldout_frac * len as f64).round() as usize).min(len.saturating_sub(1));
                    if k == 0 {
                        flagged.push(n);
                        return Vec::new();
                    }
                    let mut pos: Vec<u32> = index::sample(&mut rng, len, k).into_iter().map(|p| p as u32).collect();
                    pos.sort_unstable();
                    pos
                })
                .collect();
            HoldoutSplit { fold, heldout, flagged }
        })
        .collect())
}

#[derive(Serialize, Deserialize)]
struct SplitRecord {
    fold: usize,
    site_id: String,
    page_id: String,
    heldout_positions: Vec<u32>,
}

/// One JSON line per (fold, page).
pub fn write_splits<W: Write>(mut out: W, splits: &[HoldoutSplit], corpus: &Corpus) -> Result<(), CorpusError> {
    for split in splits {
        for ((site, page), held) in corpus.pages().zip(&split.heldout) {
            let rec = SplitRecord {
                fold: split.fold,
                site_id: corpus.sites()[site].id.clone(),
                page_id: page.id.clone(),
                heldout_positions: held.clone(),
            };
            serde_json::to_writer(&mut out, &rec).map_err(|e| CorpusError::Json { line: 0, source: e })?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn read_splits<R: Read>(input: R, corpus: &Corpus) -> Result<Vec<HoldoutSplit>, CorpusError> {
    let mut index_of: HashMap<(&str, &str), usize> = HashMap::new();
    let mut lens = Vec::new();
    for (n, (i, page)) in corpus.pages().enumerate() {
        index_of.insert((corpus.sites()[i].id.as_str(), page.id.as_str()), n);
        lens.push(page.tokens.len());
    }
    let mut folds: Vec<HoldoutSplit> = Vec::new();
    for (n, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SplitRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Json {
            line: n + 1,
            source: e,
        })?;
        let &page = index_of
            .get(&(rec.site_id.as_str(), rec.page_id.as_str()))
            .ok_or_else(|| CorpusError::UnknownSite(format!("{}/{}", rec.site_id, rec.page_id)))?;
        if rec.heldout_positions.iter().any(|&p| p as usize >= lens[page]) {
            return Err(CorpusError::Invalid(format!(
                "held-out position out of range on page {}/{}",
                rec.site_id, rec.page_id
            )));
        }
        let split = match folds.iter_mut().find(|s| s.fold == rec.fold) {
            Some(s) => s,
            None => {
                folds.push(HoldoutSplit {
                    fold: rec.fold,
                    heldout: vec![Vec::new(); lens.len()],
                    flagged: Vec::new(),
                });
                folds.last_mut().expect("just pushed")
            }
        };
        let mut pos = rec.heldout_positions;
        pos.sort_unstable();
        split.heldout[page] = pos;
    }
    for s in &mut folds {
        s.flagged = s
            .heldout
            .iter()
            .enumerate()
            .filter(|(_, h)| h.is_empty())
            .map(|(n, _)| n)
            .collect();
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(site: &str, page: &str, tokens: &[&str]) -> PageRecord {
        PageRecord {
            site_id: site.into(),
            page_id: page.into(),
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn single_page_counts() {
        let c = Corpus::from_token_strings(vec![rec("s", "p", &["a", "a", "b"])], None).unwrap();
        assert_eq!(c.vocab_size(), 2);
        assert_eq!(c.total_tokens(), 3);
        assert_eq!(c.sites()[0].pages[0].tokens, vec![0, 0, 1]);
    }

    #[test]
    fn rejects_bad_input() {
        let err = Corpus::from_token_strings(vec![rec("s", "p", &[])], None).unwrap_err();
        assert!(matches!(err, CorpusError::EmptyPage { .. }));
        let err = Corpus::from_token_strings(vec![rec("s", "p", &["a"]), rec("s", "p", &["b"])], None).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicatePage { .. }));
        assert!(matches!(
            Corpus::from_token_strings(Vec::new(), None),
            Err(CorpusError::Empty)
        ));
    }

    #[test]
    fn region_cell_means() {
        let csv = "site_id,region\na,Midwest\nb,South\nc,West\nd,Midwest\n";
        let cov = read_covariates(csv.as_bytes(), &["a", "b", "c", "d"]).unwrap();
        assert_eq!(cov.names, vec!["Midwest", "South", "West"]);
        assert_eq!(cov.row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(cov.row(1), &[0.0, 1.0, 0.0]);
        assert_eq!(cov.row(2), &[0.0, 0.0, 1.0]);
        assert_eq!(cov.row(3), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn covariate_errors() {
        let csv = "site_id,x\na,1.0\n";
        assert!(matches!(
            read_covariates(csv.as_bytes(), &["a", "b"]),
            Err(CorpusError::MissingCovariates(s)) if s == "b"
        ));
        let csv = "site_id,x\na,1.0\nz,2.0\n";
        assert!(matches!(
            read_covariates(csv.as_bytes(), &["a"]),
            Err(CorpusError::UnknownSite(s)) if s == "z"
        ));
        let csv = "site_id,x\na,one\n";
        assert!(matches!(
            read_covariates(csv.as_bytes(), &["a"]),
            Err(CorpusError::BadCovariate { .. })
        ));
        let csv = "site_id,x,y\na,1,2\nb,3,4\n";
        let cov = read_covariates(csv.as_bytes(), &["b", "a"]).unwrap();
        assert_eq!(cov.row(0), &[3.0, 4.0]);
        assert!(cov.regions.is_none());
    }

    #[test]
    fn filter_drops_rare_word() {
        // "z" appears on one page only
        let c = Corpus::from_token_strings(
            vec![rec("s", "p1", &["a", "b", "z"]), rec("s", "p2", &["a", "b", "b"])],
            None,
        )
        .unwrap();
        let t = FilterThresholds {
            min_pages_per_word: 2,
            ..FilterThresholds::none()
        };
        let f = filter_corpus(&c, &t).unwrap();
        assert_eq!(f.vocabulary(), &["a".to_string(), "b".to_string()]);
        assert_eq!(f.sites()[0].pages[0].tokens, vec![0, 1]);
        assert_eq!(f.sites()[0].pages[1].tokens, vec![0, 1, 1]);
    }

    #[test]
    fn filter_noop_bounds() {
        let c = Corpus::from_token_strings(
            vec![rec("s", "p1", &["a", "b"]), rec("t", "p1", &["c"])],
            Some(Covariates::from_regions(vec!["x".into(), "y".into()])),
        )
        .unwrap();
        assert_eq!(filter_corpus(&c, &FilterThresholds::none()).unwrap(), c);
    }

    #[test]
    fn filter_page_and_site_bounds() {
        let c = Corpus::from_token_strings(
            vec![
                rec("s", "p1", &["a", "b", "c"]),
                rec("s", "p2", &["a"]),
                rec("t", "p1", &["a", "b"]),
                rec("t", "p2", &["a", "b"]),
                rec("t", "p3", &["a", "b"]),
            ],
            Some(Covariates::from_regions(vec!["x".into(), "y".into()])),
        )
        .unwrap();
        let t = FilterThresholds {
            min_pages_per_word: 0,
            min_words_per_page: 2,
            max_words_per_page: 3,
            max_pages_per_site: 2,
        };
        let f = filter_corpus(&c, &t).unwrap();
        assert_eq!(f.n_sites(), 1);
        assert_eq!(f.n_pages(), 1);
        let cov = f.covariates().unwrap();
        assert_eq!(cov.names, vec!["x"]);
        assert_eq!(cov.values, vec![1.0]);

        let t = FilterThresholds {
            min_words_per_page: 10,
            ..FilterThresholds::none()
        };
        assert!(matches!(filter_corpus(&c, &t), Err(CorpusError::Empty)));
    }

    #[test]
    fn splits_fraction_and_determinism() {
        let words: Vec<String> = (0..10).map(|i| format!("w{i}")).collect();
        let refs: Vec<&str> = words.iter().map(|s| s.as_str()).collect();
        let c = Corpus::from_token_strings(
            vec![rec("s", "p1", &refs), rec("s", "p2", &refs[..3]), rec("s", "p3", &refs[..1])],
            None,
        )
        .unwrap();
        let a = make_splits(&c, 5, 0.2, 9).unwrap();
        let b = make_splits(&c, 5, 0.2, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        for s in &a {
            assert_eq!(s.heldout[0].len(), 2);
            assert_eq!(s.heldout[1].len(), 1);
            assert!(s.heldout[2].is_empty());
            assert_eq!(s.flagged, vec![2]);
        }
        assert_ne!(a[0].heldout, a[1].heldout);

        let tiny = make_splits(&c, 1, 0.01, 9).unwrap();
        assert_eq!(tiny[0].total_heldout(), 0);
        assert_eq!(tiny[0].flagged, vec![0, 1, 2]);
        assert!(make_splits(&c, 1, 0.0, 9).is_err());
        assert!(make_splits(&c, 0, 0.2, 9).is_err());
    }

    #[test]
    fn split_serialization_round_trip() {
        let c = Corpus::from_token_strings(
            vec![rec("s", "p1", &["a", "b", "c", "d", "e"]), rec("t", "p1", &["a", "b", "c"])],
            None,
        )
        .unwrap();
        let splits = make_splits(&c, 3, 0.4, 1).unwrap();
        let mut buf = Vec::new();
        write_splits(&mut buf, &splits, &c).unwrap();
        let back = read_splits(buf.as_slice(), &c).unwrap();
        assert_eq!(back, splits);
    }

    #[test]
    fn summary_format() {
        let s = CorpusSummary {
            sites: 108,
            pages: 5863,
            vocabulary: 3544,
            tokens: 1_061_926,
        };
        assert_eq!(s.to_string(), "108 sites, 5,863 pages, V=3,544, 1,061,926 tokens");
    }
}
