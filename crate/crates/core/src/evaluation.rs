//! Held-out perplexity, cross-validation and posterior summaries.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{make_splits, Corpus, CorpusError, HoldoutSplit};
use crate::distributions::RngStream;
use crate::model::{ModelConfig, SiteParams, StorageMode};
use crate::sampler::{run_chain, PosteriorSamples, PredictiveAccumulator, SamplerError};

/// Share of each page's tokens held out per fold.
pub const HELDOUT_FRACTION: f64 = 0.2;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("samples do not match the corpus or split: {0}")]
    Mismatch(String),
    #[error("samples carry neither full draws nor predictive sums for this split")]
    MissingPredictive,
    #[error("report needs a structured site prior, samples are {0}")]
    NotStructured(String),
    #[error("covariate pair ({0}, {1}) out of range for {2} covariates")]
    PairOutOfRange(usize, usize, usize),
    #[error("topic {topic} out of range for {n} topics")]
    TopicOutOfRange { topic: usize, n: usize },
    #[error("zero predictive probability for a held-out token")]
    ZeroPredictive,
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// How predictive probabilities combine retained samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PredictiveMode {
    /// `Σ_s numerator / Σ_s denominator`.
    #[default]
    Pooled,
    /// Mean over samples of the per-sample normalised probability.
    PerSample,
}

/// `exp(-Σ count · ln f / Σ count)`.
pub fn perplexity_from_probs<I: IntoIterator<Item = (f64, u32)>>(items: I) -> Result<f64, EvalError> {
    let mut log_sum = 0.0;
    let mut total = 0u64;
    for (f, count) in items {
        if !(f > 0.0) {
            return Err(EvalError::ZeroPredictive);
        }
        log_sum += count as f64 * f.ln();
        total += count as u64;
    }
    if total == 0 {
        return Err(EvalError::Mismatch("no held-out tokens".into()));
    }
    Ok((-log_sum / total as f64).exp())
}

/// Perplexity from accumulated predictive sums.
pub fn perplexity_from_accumulator(acc: &PredictiveAccumulator, mode: PredictiveMode) -> Result<f64, EvalError> {
    let n = acc.n_samples.max(1) as f64;
    let items = acc.heldout.iter().enumerate().flat_map(|(page, held)| {
        held.iter().enumerate().map(move |(slot, &(_, count))| {
            let f = match mode {
                PredictiveMode::Pooled => acc.numer[page][slot] / acc.denom[page],
                PredictiveMode::PerSample => acc.ratio_sum[page][slot] / n,
            };
            (f, count)
        })
    });
    perplexity_from_probs(items)
}

/// Predictive sums of `samples` for the held-out tokens of `split`,
/// taken from the sums gathered during sampling when available and from
/// full draws otherwise. Chains are pooled.
pub fn predictive_sums(
    samples: &[PosteriorSamples],
    corpus: &Corpus,
    split: &HoldoutSplit,
) -> Result<PredictiveAccumulator, EvalError> {
    let heldout = split.heldout_counts(corpus);
    let mut total: Option<PredictiveAccumulator> = None;
    for s in samples {
        let acc = match &s.predictive {
            Some(acc) if acc.heldout == heldout => acc.clone(),
            Some(_) => return Err(EvalError::Mismatch("predictive sums cover a different split".into())),
            None => {
                let shape = s.last_state.as_ref().ok_or(EvalError::MissingPredictive)?;
                if shape.n_pages() != heldout.len() {
                    return Err(EvalError::Mismatch("page count differs".into()));
                }
                let mut acc = PredictiveAccumulator::new(heldout.clone());
                for d in &s.draws {
                    let full = d.full.as_ref().ok_or(EvalError::MissingPredictive)?;
                    acc.add_arrays(shape, &full.phi, &full.psi, &full.theta);
                }
                acc
            }
        };
        match &mut total {
            Some(t) => t.merge(&acc),
            None => total = Some(acc),
        }
    }
    total.ok_or(EvalError::MissingPredictive)
}

/// Held-out perplexity of `samples` (pooled over chains) on `split`.
pub fn perplexity(
    samples: &[PosteriorSamples],
    corpus: &Corpus,
    split: &HoldoutSplit,
    mode: PredictiveMode,
) -> Result<f64, EvalError> {
    perplexity_from_accumulator(&predictive_sums(samples, corpus, split)?, mode)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityResult {
    pub k: usize,
    pub variant: String,
    pub fold_seeds: Vec<u64>,
    pub per_fold: Vec<f64>,
    pub mean: f64,
}

/// Seed of fold `fold`'s chains, derived from the run seed.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(fold as u64 + 1))
}

/// Cross-validated perplexity: `folds` random splits holding out 20% of each
/// page, a fit on each training part and perplexity on the held-out part.
/// Folds run in parallel; results do not depend on the thread count.
pub fn run_cv(cfg: &ModelConfig, corpus: &Corpus, folds: usize, mode: PredictiveMode) -> Result<PerplexityResult, EvalError> {
    let seed = cfg.sampler.seed;
    let splits = make_splits(corpus, folds, HELDOUT_FRACTION, seed)?;
    let per_fold: Vec<f64> = splits
        .par_iter()
        .map(|split| cv_fold(cfg, corpus, split, fold_seed(seed, split.fold), mode))
        .collect::<Result<_, _>>()?;
    let mean = per_fold.iter().sum::<f64>() / per_fold.len().max(1) as f64;
    Ok(PerplexityResult {
        k: cfg.k,
        variant: cfg.variant.to_string(),
        fold_seeds: (0..folds).map(|f| fold_seed(seed, f)).collect(),
        per_fold,
        mean,
    })
}

fn cv_fold(
    cfg: &ModelConfig,
    corpus: &Corpus,
    split: &HoldoutSplit,
    seed: u64,
    mode: PredictiveMode,
) -> Result<f64, EvalError> {
    let train = split.training_corpus(corpus)?;
    let heldout = split.heldout_counts(corpus);
    let mut fold_cfg = cfg.clone();
    fold_cfg.sampler.storage = StorageMode::Summary;
    let chains: Vec<PosteriorSamples> = (0..cfg.sampler.chains.max(1) as u64)
        .into_par_iter()
        .map(|c| run_chain(&fold_cfg, &train, RngStream::new(seed, c), Some(heldout.clone())))
        .collect::<Result<_, _>>()?;
    perplexity(&chains, corpus, split, mode)
}

/// One line of a perplexity-vs-K grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityRow {
    pub k: usize,
    pub variant: String,
    pub fold: usize,
    pub perplexity: f64,
}

impl PerplexityResult {
    pub fn rows(&self) -> Vec<PerplexityRow> {
        self.per_fold
            .iter()
            .enumerate()
            .map(|(fold, &p)| PerplexityRow { k: self.k, variant: self.variant.clone(), fold, perplexity: p })
            .collect()
    }
}

/// Nearest-rank percentile of sorted data: the `⌈p·n⌉`-th smallest value.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty data");
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Mean and equal-tailed 95% interval of a set of draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub low: f64,
    pub high: f64,
}

impl Interval {
    pub fn from_draws(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Interval {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            low: nearest_rank(&sorted, 0.025),
            high: nearest_rank(&sorted, 0.975),
        }
    }

    /// Whether the interval lies entirely on one side of zero.
    pub fn excludes_zero(&self) -> bool {
        self.low > 0.0 || self.high < 0.0
    }
}

fn check_topic(samples: &PosteriorSamples, topic: usize) -> Result<(), EvalError> {
    if topic < samples.n_topics {
        Ok(())
    } else {
        Err(EvalError::TopicOutOfRange { topic, n: samples.n_topics })
    }
}

/// The `n` most probable words of a topic by posterior-mean probability,
/// descending. `site` selects the local topic's site.
pub fn top_words(
    samples: &PosteriorSamples,
    vocabulary: &[String],
    topic: usize,
    site: usize,
    n: usize,
) -> Result<Vec<(String, f64)>, EvalError> {
    check_topic(samples, topic)?;
    let probs = samples.topic_word_mean(topic, site);
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    Ok(idx.into_iter().take(n).map(|v| (vocabulary[v].clone(), probs[v])).collect())
}

/// Posterior summary of the number of sites with a topic present.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PresenceSummary {
    pub interval: Interval,
    /// Presence is not modelled at the site level, so the count is always M.
    pub degenerate: bool,
}

impl fmt::Display for PresenceSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let i = self.interval;
        write!(f, "{:.0}({:.0},{:.0})", i.mean, i.low, i.high)
    }
}

pub fn presence_summary(samples: &PosteriorSamples, topic: usize) -> Result<PresenceSummary, EvalError> {
    check_topic(samples, topic)?;
    let counts: Vec<f64> =
        samples.draws.iter().map(|d| d.sites_with_topic(samples.n_topics, topic) as f64).collect();
    if counts.is_empty() {
        return Err(EvalError::Mismatch("no retained draws".into()));
    }
    let degenerate = samples.draws.iter().all(|d| matches!(d.site_params, SiteParams::Always)) || topic >= samples.k;
    Ok(PresenceSummary { interval: Interval::from_draws(&counts), degenerate })
}

/// Posterior summary of `β_kq - β_kq'`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contrast {
    pub first: usize,
    pub second: usize,
    pub interval: Interval,
    /// The 95% interval excludes zero (one-sided test at level 0.025).
    pub significant: bool,
}

impl fmt::Display for Contrast {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let i = self.interval;
        write!(f, "{:.2}({:.2},{:.2}){}", i.mean, i.low, i.high, if self.significant { "*" } else { "" })
    }
}

/// All ordered pairs `(q, q')` with `q < q'`.
pub fn all_pairs(q: usize) -> Vec<(usize, usize)> {
    (0..q).flat_map(|a| (a + 1..q).map(move |b| (a, b))).collect()
}

fn coefficient_draws(samples: &PosteriorSamples, topic: usize) -> Result<(usize, Vec<&[f64]>), EvalError> {
    if topic >= samples.k {
        return Err(EvalError::TopicOutOfRange { topic, n: samples.k });
    }
    let mut q = 0;
    let mut rows = Vec::with_capacity(samples.draws.len());
    for d in &samples.draws {
        match &d.site_params {
            SiteParams::Structured(p) => {
                q = p.q;
                rows.push(p.coef_row(topic));
            }
            _ => return Err(EvalError::NotStructured(samples.variant.clone())),
        }
    }
    if rows.is_empty() {
        return Err(EvalError::Mismatch("no retained draws".into()));
    }
    Ok((q, rows))
}

pub fn effect_contrasts(
    samples: &PosteriorSamples,
    topic: usize,
    pairs: &[(usize, usize)],
) -> Result<Vec<Contrast>, EvalError> {
    let (q, rows) = coefficient_draws(samples, topic)?;
    pairs
        .iter()
        .map(|&(a, b)| {
            if a >= q || b >= q {
                return Err(EvalError::PairOutOfRange(a, b, q));
            }
            let diffs: Vec<f64> = rows.iter().map(|r| r[a] - r[b]).collect();
            let interval = Interval::from_draws(&diffs);
            Ok(Contrast { first: a, second: b, interval, significant: interval.excludes_zero() })
        })
        .collect()
}

/// Filters for [`select_topics`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionCriteria {
    pub min_sites: f64,
    /// Upper bound on mean presence as a fraction of M, rounded down to a
    /// whole number of sites.
    pub max_fraction: f64,
    /// Keep only topics with at least one significant contrast among `pairs`
    /// (all pairs when empty).
    pub require_significance: bool,
    pub pairs: Vec<(usize, usize)>,
}

impl Default for SelectionCriteria {
    fn default() -> Self {
        SelectionCriteria { min_sites: 20.0, max_fraction: 0.815, require_significance: true, pairs: Vec::new() }
    }
}

impl SelectionCriteria {
    pub fn max_sites(&self, m: usize) -> f64 {
        (self.max_fraction * m as f64 + 1e-9).floor()
    }
}

/// Global topics whose mean site presence lies within the criteria bounds
/// and, if required, with a significant covariate contrast.
pub fn select_topics(samples: &PosteriorSamples, criteria: &SelectionCriteria) -> Result<Vec<usize>, EvalError> {
    let max_sites = criteria.max_sites(samples.n_sites);
    let mut out = Vec::new();
    for k in 0..samples.k {
        let mean = presence_summary(samples, k)?.interval.mean;
        if mean < criteria.min_sites || mean > max_sites {
            continue;
        }
        if criteria.require_significance {
            let (q, _) = coefficient_draws(samples, k)?;
            let pairs = if criteria.pairs.is_empty() { all_pairs(q) } else { criteria.pairs.clone() };
            if !effect_contrasts(samples, k, &pairs)?.iter().any(|c| c.significant) {
                continue;
            }
        }
        out.push(k);
    }
    Ok(out)
}

/// Sites with a given label among all sites with that label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionCount {
    pub region: String,
    pub count: usize,
    pub total: usize,
}

impl fmt::Display for RegionCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = if self.total == 0 { 0.0 } else { 100.0 * self.count as f64 / self.total as f64 };
        write!(f, "{}({:.1}%) of {}", self.count, pct, self.total)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoCheck {
    pub topic: usize,
    /// The `V*` words: posterior-mean probability above the threshold, or the
    /// single most probable word if none is.
    pub words: Vec<u32>,
    pub regions: Vec<RegionCount>,
}

/// Counts, per region, the sites with at least one page containing every
/// one of the topic's `V*` high-probability words.
pub fn auto_presence_check(
    corpus: &Corpus,
    samples: &PosteriorSamples,
    topic: usize,
    prob_threshold: f64,
) -> Result<AutoCheck, EvalError> {
    if topic >= samples.k {
        return Err(EvalError::TopicOutOfRange { topic, n: samples.k });
    }
    if corpus.vocab_size() != samples.vocab {
        return Err(EvalError::Mismatch("vocabulary size differs".into()));
    }
    let probs = samples.topic_word_mean(topic, 0);
    let mut words: Vec<u32> = (0..probs.len()).filter(|&v| probs[v] > prob_threshold).map(|v| v as u32).collect();
    if words.is_empty() {
        let best = (0..probs.len()).max_by(|&a, &b| probs[a].total_cmp(&probs[b]).then(b.cmp(&a))).unwrap_or(0);
        words.push(best as u32);
    }

    let labels: Vec<String> = match corpus.covariates().and_then(|c| c.regions.clone()) {
        Some(r) => r,
        None => vec!["all".to_string(); corpus.n_sites()],
    };
    let mut regions: Vec<RegionCount> = Vec::new();
    for (site, label) in corpus.sites().iter().zip(&labels) {
        let hit = site.pages.iter().any(|p| words.iter().all(|w| p.tokens.contains(w)));
        let slot = match regions.iter().position(|r| &r.region == label) {
            Some(i) => i,
            None => {
                regions.push(RegionCount { region: label.clone(), count: 0, total: 0 });
                regions.len() - 1
            }
        };
        regions[slot].total += 1;
        regions[slot].count += hit as usize;
    }
    Ok(AutoCheck { topic, words, regions })
}

/// Sites where topic `topic` is absent in at least `threshold` of the draws.
pub fn missing_topic_sites(samples: &PosteriorSamples, topic: usize, threshold: f64) -> Result<Vec<usize>, EvalError> {
    check_topic(samples, topic)?;
    let n = samples.draws.len();
    if n == 0 {
        return Err(EvalError::Mismatch("no retained draws".into()));
    }
    let t = samples.n_topics;
    Ok((0..samples.n_sites)
        .filter(|&i| {
            let absent = samples.draws.iter().filter(|d| !d.site_present.get(i * t + topic)).count();
            absent as f64 / n as f64 >= threshold
        })
        .collect())
}

/// Full report on one topic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicReport {
    pub topic: usize,
    pub top_words: Vec<(String, f64)>,
    pub presence: PresenceSummary,
    pub contrasts: Vec<Contrast>,
}

pub fn topic_report(
    samples: &PosteriorSamples,
    vocabulary: &[String],
    topic: usize,
    n_words: usize,
    pairs: &[(usize, usize)],
) -> Result<TopicReport, EvalError> {
    let contrasts = match samples.draws.first().map(|d| &d.site_params) {
        Some(SiteParams::Structured(_)) if topic < samples.k => effect_contrasts(samples, topic, pairs)?,
        _ => Vec::new(),
    };
    Ok(TopicReport {
        topic,
        top_words: top_words(samples, vocabulary, topic, 0, n_words)?,
        presence: presence_summary(samples, topic)?,
        contrasts,
    })
}

/// Left-aligned plain-text table with columns padded to their widest cell.
pub fn format_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, &w)| format!("{c:<w$}")).collect();
        padded.join("  ").trim_end().to_string()
    };
    let mut out = line(headers.to_vec());
    out.push('\n');
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    out.push_str(&rule.join("  "));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

/// Writes rows as CSV with a header line.
pub fn write_csv<W: std::io::Write>(out: W, headers: &[&str], rows: &[Vec<String>]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(headers)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BetaParams, StructuredParams};
    use crate::sampler::{BitString, Draw};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn uniform_predictive_gives_vocabulary_size() {
        let v = 37.0;
        let p = perplexity_from_probs((0..100).map(|i| (1.0 / v, 1 + i % 3))).unwrap();
        assert_abs_diff_eq!(p, v, epsilon = 1e-10);
    }

    #[test]
    fn perfect_and_hand_values() {
        assert_eq!(perplexity_from_probs([(1.0, 1)]).unwrap(), 1.0);
        assert_abs_diff_eq!(perplexity_from_probs([(0.5, 1), (0.125, 1)]).unwrap(), 4.0, epsilon = 1e-12);
        assert!(matches!(perplexity_from_probs([(0.0, 1)]), Err(EvalError::ZeroPredictive)));
    }

    #[test]
    fn nearest_rank_uses_order_statistics() {
        let xs: Vec<f64> = (1..=40).map(f64::from).collect();
        // ⌈0.025·40⌉ = 1, ⌈0.975·40⌉ = 39
        assert_eq!(nearest_rank(&xs, 0.025), 1.0);
        assert_eq!(nearest_rank(&xs, 0.975), 39.0);
        let one = [7.0];
        assert_eq!(nearest_rank(&one, 0.025), 7.0);
        assert_eq!(nearest_rank(&one, 0.975), 7.0);
    }

    fn structured_samples(coefs: Vec<Vec<f64>>, presence: Vec<Vec<bool>>) -> PosteriorSamples {
        let q = coefs[0].len();
        let draws = coefs
            .into_iter()
            .zip(presence)
            .enumerate()
            .map(|(s, (coef, b))| Draw {
                iteration: s,
                r: vec![1.0],
                r0: 1.0,
                site_present: BitString(b),
                site_params: SiteParams::Structured(StructuredParams {
                    q,
                    coef,
                    prior_mean: vec![0.0; q],
                    prior_var: vec![1.0; q],
                    omega: Vec::new(),
                }),
                page_params: crate::model::PageParams::Always,
                log_lik: 0.0,
                full: None,
            })
            .collect::<Vec<_>>();
        let m = draws[0].site_present.len();
        PosteriorSamples {
            variant: "SA-PFA".into(),
            k: 1,
            n_topics: 1,
            n_sites: m,
            vocab: 3,
            seed: 0,
            stream_id: 0,
            storage: StorageMode::Summary,
            burn_in: 0,
            thin: 1,
            draws,
            phi_mean: vec![0.6, 0.3, 0.1],
            psi_mean: Vec::new(),
            theta_mean: Vec::new(),
            acceptance: Default::default(),
            predictive: None,
            last_state: None,
        }
    }

    #[test]
    fn contrast_format_and_significance() {
        let coefs: Vec<Vec<f64>> = (0..40).map(|s| vec![1.0 + 0.1 * s as f64, 0.0]).collect();
        let s = structured_samples(coefs, vec![vec![true, false]; 40]);
        let c = effect_contrasts(&s, 0, &[(0, 1)]).unwrap();
        assert!(c[0].significant);
        assert_eq!(c[0].to_string(), "2.95(1.00,4.80)*");
        let same = effect_contrasts(&s, 0, &[(0, 0)]).unwrap();
        assert!(!same[0].significant);
        assert_eq!(same[0].to_string(), "0.00(0.00,0.00)");
        assert!(matches!(effect_contrasts(&s, 0, &[(0, 2)]), Err(EvalError::PairOutOfRange(0, 2, 2))));
    }

    #[test]
    fn presence_summary_constant_counts() {
        let s = structured_samples(vec![vec![0.0]; 10], vec![vec![true, true, false]; 10]);
        let p = presence_summary(&s, 0).unwrap();
        assert_eq!(p.to_string(), "2(2,2)");
        assert!(!p.degenerate);
    }

    #[test]
    fn missing_sites_threshold_is_inclusive() {
        // site 0 absent in 39 of 40 draws (97.5%), site 1 in 38 (95%)
        let presence: Vec<Vec<bool>> = (0..40).map(|s| vec![s == 0, s < 2]).collect();
        let s = structured_samples(vec![vec![0.0]; 40], presence);
        assert_eq!(missing_topic_sites(&s, 0, 0.975).unwrap(), vec![0]);
        assert_eq!(missing_topic_sites(&s, 0, 0.95).unwrap(), vec![0, 1]);
    }

    #[test]
    fn selection_bounds_and_significance() {
        let coefs: Vec<Vec<f64>> = (0..20).map(|_| vec![0.0, 0.0]).collect();
        let s = structured_samples(coefs, vec![vec![true; 4]; 20]);
        let open = SelectionCriteria { min_sites: 0.0, max_fraction: 1.0, require_significance: false, pairs: vec![] };
        assert_eq!(select_topics(&s, &open).unwrap(), vec![0]);
        let strict = SelectionCriteria { require_significance: true, ..open.clone() };
        assert!(select_topics(&s, &strict).unwrap().is_empty());
        assert_eq!(SelectionCriteria::default().max_sites(108), 88.0);
    }

    #[test]
    fn region_count_format() {
        let r = RegionCount { region: "MW".into(), count: 35, total: 70 };
        assert_eq!(r.to_string(), "35(50.0%) of 70");
    }

    #[test]
    fn table_alignment() {
        let t = format_table(&["k", "words"], &[vec!["10".into(), "tick lyme".into()]]);
        assert_eq!(t, "k   words\n--  ---------\n10  tick lyme\n");
    }

    #[test]
    fn beta_interval_of_uniform_draws() {
        let _ = BetaParams::new(1.0, 1.0);
        let xs: Vec<f64> = (0..1000).map(|i| i as f64 / 999.0).collect();
        let i = Interval::from_draws(&xs);
        assert_abs_diff_eq!(i.mean, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(i.low, 24.0 / 999.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn contrast_significance_shift_invariant(
            base in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 5..60),
            shift in proptest::collection::vec(-10.0f64..10.0, 60),
        ) {
            let coefs: Vec<Vec<f64>> = base.iter().map(|&(a, b)| vec![a, b]).collect();
            let shifted: Vec<Vec<f64>> =
                base.iter().zip(&shift).map(|(&(a, b), &c)| vec![a + c, b + c]).collect();
            let n = base.len();
            let s1 = structured_samples(coefs, vec![vec![true]; n]);
            let s2 = structured_samples(shifted, vec![vec![true]; n]);
            let c1 = effect_contrasts(&s1, 0, &[(0, 1)]).unwrap()[0];
            let c2 = effect_contrasts(&s2, 0, &[(0, 1)]).unwrap()[0];
            prop_assert_eq!(c1.significant, c2.significant);
            prop_assert!((c1.interval.mean - c2.interval.mean).abs() < 1e-9);
        }

        #[test]
        fn perplexity_at_least_one(probs in proptest::collection::vec((1e-6f64..=1.0, 1u32..5), 1..50)) {
            prop_assert!(perplexity_from_probs(probs).unwrap() >= 1.0 - 1e-12);
        }
    }
}
