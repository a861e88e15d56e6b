use hpfa::corpus::{load_corpus, Covariates};
use hpfa::distributions::RngStream;
use hpfa::evaluation::{run_cv, PredictiveMode};
use hpfa::model::{ModelConfig, Variant};
use hpfa::sampler::run_chains;
use hpfa::synthetic::{simulate, GroundTruth, Overrides};

fn small_truth(code: &str, seed: u64) -> GroundTruth {
    let mut cfg = ModelConfig::new(3, code.parse::<Variant>().unwrap());
    cfg.sampler.log_every = 0;
    let covariates = Covariates::from_regions((0..6).map(|i| ["A", "B"][i % 2].to_string()).collect());
    let overrides = Overrides { r: Some(vec![0.3; cfg.n_topics()]), covariates: Some(covariates), ..Overrides::default() };
    simulate(&cfg, 6, 4, 60.0, 30, &overrides, &mut RngStream::new(seed, 0)).unwrap()
}

fn config(code: &str, k: usize, seed: u64) -> ModelConfig {
    let mut cfg = ModelConfig::new(k, code.parse::<Variant>().unwrap());
    cfg.sampler.burn_in = 20;
    cfg.sampler.n_samples = 10;
    cfg.sampler.seed = seed;
    cfg.sampler.log_every = 0;
    cfg
}

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
}

#[test]
fn simulated_corpus_survives_save_and_load() {
    let truth = small_truth("SA-LT", 1);
    let dir = tempfile::tempdir().unwrap();
    let (pages, cov) = (dir.path().join("pages.jsonl"), dir.path().join("covariates.csv"));
    truth.corpus.save(&pages, Some(&cov)).unwrap();
    let loaded = load_corpus(&pages, Some(&cov)).unwrap();
    assert_eq!(loaded.n_sites(), 6);
    assert_eq!(loaded.n_pages(), 24);
    assert_eq!(loaded.total_tokens(), truth.corpus.total_tokens());
    let words = |c: &hpfa::corpus::Corpus| -> Vec<Vec<String>> {
        c.pages().map(|(_, p)| p.tokens.iter().map(|&w| c.vocabulary()[w as usize].clone()).collect()).collect()
    };
    assert_eq!(words(&loaded), words(&truth.corpus));
    assert_eq!(loaded.covariates().unwrap().row(1), truth.corpus.covariates().unwrap().row(1));
}

#[test]
fn fit_is_unchanged_by_a_save_and_load_round_trip() {
    let truth = small_truth("EE", 2);
    let dir = tempfile::tempdir().unwrap();
    let (first, second) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    // loading numbers words by first appearance, after which saving is a fixed point
    truth.corpus.save(&first, None).unwrap();
    let loaded = load_corpus(&first, None).unwrap();
    loaded.save(&second, None).unwrap();
    let reloaded = load_corpus(&second, None).unwrap();
    assert_eq!(loaded, reloaded);
    let cfg = config("EE", 3, 5);
    assert_eq!(run_chains(&cfg, &loaded, None).unwrap(), run_chains(&cfg, &reloaded, None).unwrap());
}

#[test]
fn chains_do_not_depend_on_thread_count() {
    let truth = small_truth("SE-LT", 3);
    let mut cfg = config("SE-LT", 2, 11);
    cfg.sampler.chains = 3;
    let one = pool(1).install(|| run_chains(&cfg, &truth.corpus, None).unwrap());
    let four = pool(4).install(|| run_chains(&cfg, &truth.corpus, None).unwrap());
    assert_eq!(one, four);
    assert_ne!(one[0], one[1]);
}

#[test]
fn cross_validation_is_reproducible_and_finite() {
    let truth = small_truth("AE-LT", 4);
    let cfg = config("AE-LT", 2, 13);
    let one = pool(1).install(|| run_cv(&cfg, &truth.corpus, 3, PredictiveMode::Pooled).unwrap());
    let four = pool(4).install(|| run_cv(&cfg, &truth.corpus, 3, PredictiveMode::Pooled).unwrap());
    assert_eq!(one.per_fold, four.per_fold);
    assert_eq!(one.per_fold.len(), 3);
    assert!(one.per_fold.iter().all(|p| p.is_finite() && *p > 1.0 && *p < 30.0), "{:?}", one.per_fold);
    let per_sample = run_cv(&cfg, &truth.corpus, 3, PredictiveMode::PerSample).unwrap();
    assert!(per_sample.per_fold.iter().all(|p| p.is_finite()));
}

#[test]
fn every_variant_fits_a_simulated_corpus() {
    let truth = small_truth("SA-LT", 5);
    for variant in Variant::all() {
        let cfg = config(&variant.to_string(), 2, 17);
        let samples = run_chains(&cfg, &truth.corpus, None).unwrap();
        assert_eq!(samples[0].n_draws(), 10, "{variant}");
    }
}
