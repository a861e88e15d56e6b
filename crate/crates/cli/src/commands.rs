use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use hpfa::corpus::{filter_corpus, load_corpus, make_splits, write_splits, Corpus, FilterThresholds};
use hpfa::distributions::RngStream;
use hpfa::evaluation::{
    auto_presence_check, format_table, missing_topic_sites, presence_summary, run_cv, select_topics, top_words,
    topic_report, write_csv, PerplexityResult, PredictiveMode, SelectionCriteria, TopicReport,
};
use hpfa::model::{SitePrior, Variant};
use hpfa::sampler::{run_chains, PosteriorSamples};
use hpfa::synthetic::Overrides;
use log::info;
use serde::Serialize;

use crate::args::{CorpusArgs, FitArgs, IngestArgs, ModelArgs, PerplexityArgs, ReportArgs, SimulateArgs};
use crate::config::{model_config, ConfigFile, ModelFlags};
use crate::error::{CliError, CliResult};
use crate::manifest::{hash_files, RunManifest};

pub const PAGES_FILE: &str = "pages.jsonl";
pub const COVARIATES_FILE: &str = "covariates.csv";

pub fn samples_file(chain: usize) -> String {
    format!("samples-chain{chain}.json")
}

fn runtime(e: anyhow::Error) -> CliError {
    CliError::Runtime(e)
}

fn prepare_out(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(anyhow::anyhow!("creating {}: {e}", dir.display())))
}

fn corpus_hash(args: &CorpusArgs) -> CliResult<String> {
    hash_files(&[Some(args.pages.as_path()), args.covariates.as_deref()]).map_err(CliError::Validation)
}

fn load(args: &CorpusArgs) -> CliResult<Corpus> {
    let corpus = load_corpus(&args.pages, args.covariates.as_deref())?;
    info!("loaded {}", corpus.summary());
    Ok(corpus)
}

fn write_text(dir: &Path, name: &str, text: &str, outputs: &mut Vec<PathBuf>) -> CliResult<()> {
    fs::write(dir.join(name), text)?;
    outputs.push(PathBuf::from(name));
    Ok(())
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T, outputs: &mut Vec<PathBuf>) -> CliResult<()> {
    let mut w = BufWriter::new(File::create(dir.join(name))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.flush()?;
    outputs.push(PathBuf::from(name));
    Ok(())
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

pub fn ingest(args: &IngestArgs) -> CliResult<()> {
    let mut file = ConfigFile::load(args.config.as_deref())?;
    let d = FilterThresholds::default();
    let thresholds = FilterThresholds {
        min_pages_per_word: pick(args.min_pages_per_word, file.take("min_pages_per_word")?, d.min_pages_per_word),
        min_words_per_page: pick(args.min_words_per_page, file.take("min_words_per_page")?, d.min_words_per_page),
        max_words_per_page: pick(args.max_words_per_page, file.take("max_words_per_page")?, d.max_words_per_page),
        max_pages_per_site: pick(args.max_pages_per_site, file.take("max_pages_per_site")?, d.max_pages_per_site),
    };
    let folds = pick(args.folds, file.take("folds")?, 0);
    let seed = pick(args.seed, file.take("seed")?, 0);
    file.finish()?;

    let raw = load(&args.corpus)?;
    let corpus = filter_corpus(&raw, &thresholds)?;
    let summary = corpus.summary();

    let out = &args.out;
    prepare_out(out)?;
    let mut manifest = RunManifest::new(
        "ingest",
        serde_json::json!({ "thresholds": thresholds, "folds": folds }),
        vec![seed],
    );
    manifest.corpus_sha256 = Some(corpus_hash(&args.corpus)?);
    let cov_path = corpus.covariates().map(|_| out.join(COVARIATES_FILE));
    corpus.save(&out.join(PAGES_FILE), cov_path.as_deref())?;
    manifest.outputs.push(PAGES_FILE.into());
    if cov_path.is_some() {
        manifest.outputs.push(COVARIATES_FILE.into());
    }
    let mut vocab = corpus.vocabulary().join("\n");
    vocab.push('\n');
    write_text(out, "vocabulary.txt", &vocab, &mut manifest.outputs)?;
    write_text(out, "summary.txt", &format!("{summary}\n"), &mut manifest.outputs)?;
    if folds > 0 {
        let splits = make_splits(&corpus, folds, hpfa::evaluation::HELDOUT_FRACTION, seed)?;
        let mut w = BufWriter::new(File::create(out.join("splits.jsonl"))?);
        write_splits(&mut w, &splits, &corpus)?;
        w.flush()?;
        manifest.outputs.push("splits.jsonl".into());
    }
    manifest.write(out).map_err(runtime)?;
    println!("{summary}");
    Ok(())
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

pub fn fit(args: &FitArgs) -> CliResult<()> {
    let file = ConfigFile::load(args.model.config.as_deref())?;
    let model = ModelFlags {
        k: args.k,
        variant: args.variant.as_deref(),
        local_topics: args.local_topics,
        ..ModelFlags::default()
    };
    let cfg = model_config(file, &args.model, model)?;
    let corpus = load(&args.corpus)?;
    cfg.validate(&corpus)?;
    info!("fitting {} with K={} on {} chain(s)", cfg.variant, cfg.k, cfg.sampler.chains);

    let chains = run_chains(&cfg, &corpus, None)?;

    let out = &args.out;
    prepare_out(out)?;
    let mut manifest = RunManifest::new("fit", to_value(&cfg), vec![cfg.sampler.seed]);
    manifest.corpus_sha256 = Some(corpus_hash(&args.corpus)?);
    for (c, samples) in chains.iter().enumerate() {
        let name = samples_file(c);
        let mut w = BufWriter::new(File::create(out.join(&name))?);
        samples.write_json(&mut w)?;
        w.flush()?;
        manifest.outputs.push(name.into());
        let rates = samples.acceptance.rates();
        info!(
            "chain {c}: {} draws, MH acceptance pi ({:.2}, {:.2}) eta ({:.2}, {:.2})",
            samples.n_draws(),
            rates[0],
            rates[1],
            rates[2],
            rates[3]
        );
    }
    manifest.write(out).map_err(runtime)?;
    println!("{} chain(s) written to {}", chains.len(), out.display());
    Ok(())
}

pub const DEFAULT_K_GRID: [usize; 8] = [25, 50, 100, 200, 300, 400, 500, 600];

pub fn perplexity(args: &PerplexityArgs) -> CliResult<()> {
    let mut file = ConfigFile::load(args.model.config.as_deref())?;
    let k_grid = match (&args.k_grid, file.take_list::<usize>("k_grid")?) {
        (Some(g), _) => g.clone(),
        (None, Some(g)) => g,
        (None, None) => DEFAULT_K_GRID.to_vec(),
    };
    let variant_codes = match (&args.variants, file.take_list::<String>("variants")?) {
        (Some(v), _) => v.clone(),
        (None, Some(v)) => v,
        (None, None) => vec!["sa-lt".to_string()],
    };
    let folds = pick(args.folds, file.take("folds")?, 5);
    let per_sample = args.per_sample || file.take("per_sample")?.unwrap_or(false);
    let base = model_config(file, &args.model, ModelFlags::default())?;
    if k_grid.is_empty() || variant_codes.is_empty() || folds == 0 {
        return Err(CliError::validation("k-grid, variants and folds must be non-empty"));
    }
    let variants: Vec<Variant> = variant_codes.iter().map(|v| v.parse()).collect::<Result<_, _>>()?;
    let mode = if per_sample { PredictiveMode::PerSample } else { PredictiveMode::Pooled };
    let corpus = load(&args.corpus)?;

    let mut cells = Vec::new();
    for variant in &variants {
        for &k in &k_grid {
            let mut cfg = base.clone();
            cfg.k = k;
            cfg.variant = *variant;
            cfg.validate(&corpus)?;
            cells.push(cfg);
        }
    }
    let mut results = Vec::with_capacity(cells.len());
    for cfg in &cells {
        info!("cross-validating {} K={}", cfg.variant, cfg.k);
        results.push(run_cv(cfg, &corpus, folds, mode)?);
    }

    let out = &args.out;
    prepare_out(out)?;
    let mut manifest = RunManifest::new(
        "perplexity",
        serde_json::json!({ "base": to_value(&base), "k_grid": k_grid, "variants": variant_codes, "folds": folds, "mode": mode }),
        results.first().map(|r| r.fold_seeds.clone()).unwrap_or_default(),
    );
    manifest.corpus_sha256 = Some(corpus_hash(&args.corpus)?);

    let rows: Vec<Vec<String>> = results
        .iter()
        .flat_map(|r| r.rows())
        .map(|r| vec![r.k.to_string(), r.variant, r.fold.to_string(), format!("{:.6}", r.perplexity)])
        .collect();
    let mut w = BufWriter::new(File::create(out.join("perplexity.csv"))?);
    write_csv(&mut w, &["K", "variant", "fold", "perplexity"], &rows)?;
    w.flush()?;
    manifest.outputs.push("perplexity.csv".into());

    let table = perplexity_table(&results);
    write_text(out, "perplexity.txt", &table, &mut manifest.outputs)?;
    write_json(out, "perplexity.json", &results, &mut manifest.outputs)?;
    manifest.write(out).map_err(runtime)?;
    print!("{table}");
    Ok(())
}

/// Mean perplexity per cell with the drop from the next smaller K of the
/// same variant.
pub fn perplexity_table(results: &[PerplexityResult]) -> String {
    let mut sorted: Vec<&PerplexityResult> = results.iter().collect();
    sorted.sort_by(|a, b| a.variant.cmp(&b.variant).then(a.k.cmp(&b.k)));
    let mut rows = Vec::with_capacity(sorted.len());
    for (i, r) in sorted.iter().enumerate() {
        let improvement = match i.checked_sub(1).map(|j| sorted[j]) {
            Some(prev) if prev.variant == r.variant => format!("{:.2}", prev.mean - r.mean),
            _ => "-".to_string(),
        };
        rows.push(vec![r.variant.clone(), r.k.to_string(), format!("{:.2}", r.mean), improvement]);
    }
    format_table(&["variant", "K", "mean perplexity", "improvement"], &rows)
}

fn read_samples(path: &Path) -> CliResult<PosteriorSamples> {
    let f = File::open(path).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    PosteriorSamples::read_json(std::io::BufReader::new(f))
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

#[derive(Debug, Serialize)]
struct ReportFile {
    variant: String,
    topics: Vec<TopicReport>,
    auto_checks: Vec<hpfa::evaluation::AutoCheck>,
    missing_sites: Vec<(usize, Vec<String>)>,
}

pub fn report(args: &ReportArgs) -> CliResult<()> {
    let samples = read_samples(&args.samples)?;
    let corpus = load(&args.corpus)?;
    if corpus.n_sites() != samples.n_sites || corpus.vocab_size() != samples.vocab {
        return Err(CliError::validation("samples were fitted to a different corpus"));
    }
    let variant: Variant = samples.variant.parse()?;
    let structured = variant.site == SitePrior::Structured;
    if args.contrasts && !structured {
        return Err(CliError::validation(format!("contrasts need a structured site prior, samples are {variant}")));
    }
    let q = corpus.covariates().map_or(0, |c| c.n_columns());
    let pairs = hpfa::evaluation::all_pairs(q);

    let topics: Vec<usize> = match (args.topic, args.select) {
        (Some(t), _) => {
            if t >= samples.n_topics {
                return Err(CliError::validation(format!("topic {t} out of range for {} topics", samples.n_topics)));
            }
            vec![t]
        }
        (None, true) => {
            let criteria = SelectionCriteria {
                min_sites: args.min_sites,
                max_fraction: args.max_site_fraction,
                require_significance: true,
                pairs: Vec::new(),
            };
            select_topics(&samples, &criteria)?
        }
        (None, false) => (0..samples.k).collect(),
    };

    let mut reports = Vec::with_capacity(topics.len());
    for &t in &topics {
        reports.push(topic_report(&samples, corpus.vocabulary(), t, args.top_words, &pairs)?);
    }
    let global: Vec<usize> = topics.iter().copied().filter(|&t| t < samples.k).collect();
    let mut checks = Vec::with_capacity(global.len());
    let mut missing = Vec::with_capacity(global.len());
    for &t in &global {
        checks.push(auto_presence_check(&corpus, &samples, t, args.word_threshold)?);
        let sites = missing_topic_sites(&samples, t, args.missing_threshold)?;
        missing.push((t, sites.iter().map(|&i| corpus.sites()[i].id.clone()).collect::<Vec<_>>()));
    }

    let out = &args.out;
    prepare_out(out)?;
    let mut manifest = RunManifest::new(
        "report",
        serde_json::json!({
            "samples": args.samples, "topic": args.topic, "select": args.select,
            "top_words": args.top_words, "word_threshold": args.word_threshold,
            "missing_threshold": args.missing_threshold, "min_sites": args.min_sites,
            "max_site_fraction": args.max_site_fraction,
        }),
        vec![samples.seed],
    );
    manifest.corpus_sha256 = Some(corpus_hash(&args.corpus)?);

    let names = corpus.covariates().map(|c| c.names.clone()).unwrap_or_default();
    let mut headers = vec!["topic".to_string(), "top words".to_string(), "sites".to_string()];
    if structured {
        headers.extend(pairs.iter().map(|&(a, b)| format!("{}-{}", names[a], names[b])));
    }
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let words: Vec<&str> = r.top_words.iter().map(|(w, _)| w.as_str()).collect();
            let presence = if r.presence.degenerate { "-".to_string() } else { r.presence.to_string() };
            let mut row = vec![r.topic.to_string(), words.join(", "), presence];
            row.extend(r.contrasts.iter().map(|c| c.to_string()));
            row.resize(headers.len(), String::new());
            row
        })
        .collect();
    let header_refs: Vec<&str> = headers.iter().map(String::as_str).collect();
    let topics_table = format_table(&header_refs, &rows);
    write_text(out, "topics.txt", &topics_table, &mut manifest.outputs)?;

    let check_rows: Vec<Vec<String>> = checks
        .iter()
        .map(|c| {
            let words: Vec<&str> = c.words.iter().map(|&w| corpus.vocabulary()[w as usize].as_str()).collect();
            let regions: Vec<String> = c.regions.iter().map(|r| format!("{}: {r}", r.region)).collect();
            vec![c.topic.to_string(), words.join(", "), regions.join("; ")]
        })
        .collect();
    write_text(
        out,
        "auto_check.txt",
        &format_table(&["topic", "words", "sites with all words"], &check_rows),
        &mut manifest.outputs,
    )?;

    let missing_rows: Vec<Vec<String>> =
        missing.iter().map(|(t, s)| vec![t.to_string(), s.len().to_string(), s.join(", ")]).collect();
    write_text(
        out,
        "missing_sites.txt",
        &format_table(&["topic", "count", "sites"], &missing_rows),
        &mut manifest.outputs,
    )?;

    if !args.local_sites.is_empty() {
        let Some(local) = samples.n_topics.checked_sub(1).filter(|&t| t >= samples.k) else {
            return Err(CliError::validation("samples have no local topics"));
        };
        let mut local_rows = Vec::new();
        for id in &args.local_sites {
            let site = corpus
                .sites()
                .iter()
                .position(|s| &s.id == id)
                .ok_or_else(|| CliError::validation(format!("unknown site `{id}`")))?;
            let words = top_words(&samples, corpus.vocabulary(), local, site, args.top_words)?;
            let words: Vec<&str> = words.iter().map(|(w, _)| w.as_str()).collect();
            local_rows.push(vec![id.clone(), words.join(", ")]);
        }
        write_text(out, "local_topics.txt", &format_table(&["site", "top words"], &local_rows), &mut manifest.outputs)?;
    }

    let file = ReportFile { variant: samples.variant.clone(), topics: reports, auto_checks: checks, missing_sites: missing };
    write_json(out, "report.json", &file, &mut manifest.outputs)?;
    manifest.write(out).map_err(runtime)?;
    print!("{topics_table}");
    if let Some(&t) = global.first() {
        if global.len() == 1 {
            println!("{} sites with topic {t}", presence_summary(&samples, t)?);
        }
    }
    Ok(())
}

pub fn simulate(args: &SimulateArgs) -> CliResult<()> {
    let mut file = ConfigFile::load(args.config.as_deref())?;
    let sites = pick(args.sites, file.take("sites")?, 20);
    let pages = pick(args.pages, file.take("pages")?, 10);
    let tokens = pick(args.tokens, file.take("tokens")?, 100.0);
    let vocab = pick(args.vocab, file.take("vocab")?, 50);
    let r_flag = args.r.or(file.take("r")?);
    let draw_r = args.draw_r || file.take("draw_r")?.unwrap_or(false);
    let flags = ModelArgs { seed: args.seed, ..ModelArgs::default() };
    let model = ModelFlags {
        k: args.k,
        variant: args.variant.as_deref(),
        local_topics: args.local_topics,
        default_k: 5,
        default_variant: "sa-lt",
    };
    let cfg = model_config(file, &flags, model)?;
    if sites == 0 || pages == 0 || vocab == 0 || !(tokens > 0.0) {
        return Err(CliError::validation("sites, pages, vocab and tokens must be positive"));
    }
    let r = match (r_flag, draw_r) {
        (Some(x), _) => Some(x),
        (None, true) => None,
        (None, false) => Some(1.0 / cfg.n_topics() as f64),
    };
    if r.is_some_and(|x| !(x > 0.0 && x.is_finite())) {
        return Err(CliError::validation("--r must be positive"));
    }
    let overrides = Overrides { r: r.map(|x| vec![x; cfg.n_topics()]), ..Overrides::default() };
    let mut rng = RngStream::new(cfg.sampler.seed, 0);
    let truth = hpfa::synthetic::simulate(&cfg, sites, pages, tokens, vocab, &overrides, &mut rng)?;

    let out = &args.out;
    prepare_out(out)?;
    let mut manifest = RunManifest::new(
        "simulate",
        serde_json::json!({ "model": to_value(&cfg), "sites": sites, "pages": pages, "tokens": tokens, "vocab": vocab, "r": r }),
        vec![cfg.sampler.seed],
    );
    let cov_path = truth.corpus.covariates().map(|_| out.join(COVARIATES_FILE));
    truth.corpus.save(&out.join(PAGES_FILE), cov_path.as_deref())?;
    manifest.outputs.push(PAGES_FILE.into());
    if cov_path.is_some() {
        manifest.outputs.push(COVARIATES_FILE.into());
    }
    manifest.corpus_sha256 =
        Some(hash_files(&[Some(out.join(PAGES_FILE).as_path()), cov_path.as_deref()]).map_err(runtime)?);
    let mut w = BufWriter::new(File::create(out.join("truth.json"))?);
    truth.write_sidecar(&mut w)?;
    w.flush()?;
    manifest.outputs.push("truth.json".into());
    manifest.write(out).map_err(runtime)?;
    println!("{}", truth.corpus.summary());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(variant: &str, k: usize, mean: f64) -> PerplexityResult {
        PerplexityResult { k, variant: variant.into(), fold_seeds: vec![], per_fold: vec![mean], mean }
    }

    #[test]
    fn improvement_column_compares_adjacent_k_within_variant() {
        let t = perplexity_table(&[result("B", 10, 90.0), result("A", 2, 50.0), result("A", 1, 60.5), result("B", 5, 100.0)]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 6);
        assert!(lines[2].starts_with("A") && lines[2].ends_with('-'));
        assert!(lines[3].ends_with("10.50"));
        assert!(lines[4].ends_with('-'));
        assert!(lines[5].ends_with("10.00"));
    }

    #[test]
    fn samples_file_names() {
        assert_eq!(samples_file(0), "samples-chain0.json");
        assert_eq!(samples_file(12), "samples-chain12.json");
    }
}
