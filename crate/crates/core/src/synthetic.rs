//! Forward simulation from the generative model.
//!
//! Page lengths appear in the prior of θ, so forward sampling fixes an
//! exposure per page (`target_tokens`) in their place.

use log::info;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, Covariates, Page, Site};
use crate::distributions::{
    sample_beta, sample_beta_logit, sample_dirichlet_into, sample_gamma, sample_normal, sample_poisson, DistError,
};
use crate::model::{
    blank_state, logistic, logit, mean_variance_to_beta_params, BetaParams, ModelConfig, ModelError, ModelState, PageParams,
    SiteParams,
};

/// Redraw budget for a page that came out empty.
pub const MAX_REDRAWS: usize = 100;

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("invalid simulation setting: {0}")]
    Config(String),
    #[error("site {site} page {page} still empty after {MAX_REDRAWS} redraws")]
    EmptyPage { site: usize, page: usize },
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Parameters fixed by the caller instead of drawn from their priors.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub r0: Option<f64>,
    /// One rate per topic, local topic included.
    pub r: Option<Vec<f64>>,
    /// `K × V` global topics.
    pub phi: Option<Vec<f64>>,
    /// `M × V` local topics.
    pub psi: Option<Vec<f64>>,
    /// `K × Q` logistic coefficients for the structured site prior.
    pub beta: Option<Vec<f64>>,
    /// Exchangeable site presence probabilities, one per global topic.
    pub site_probs: Option<Vec<f64>>,
    /// Exchangeable page presence probabilities, one per topic.
    pub page_probs: Option<Vec<f64>>,
    /// Site covariates; structured fits default to two alternating regions.
    pub covariates: Option<Covariates>,
}

/// Every generative quantity behind a simulated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthParameters {
    pub variant: String,
    pub k: usize,
    pub n_topics: usize,
    pub vocab: usize,
    pub target_tokens: f64,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub r: Vec<f64>,
    pub r0: f64,
    pub site_present: Vec<bool>,
    pub page_present: Vec<bool>,
    pub theta: Vec<f64>,
    pub site_params: SiteParams,
    pub page_params: PageParams,
    /// Generating topic of every token.
    pub assignments: Vec<Vec<u32>>,
    pub redraws: usize,
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub corpus: Corpus,
    pub params: TruthParameters,
}

impl GroundTruth {
    /// Writes the parameter sidecar as JSON.
    pub fn write_sidecar<W: std::io::Write>(&self, out: W) -> serde_json::Result<()> {
        serde_json::to_writer(out, &self.params)
    }
}

/// A corpus with the requested shape whose pages each hold one placeholder
/// token; vocabulary `w0..w{V-1}`.
pub fn shell_corpus(
    n_sites: usize,
    pages_per_site: usize,
    vocab: usize,
    covariates: Option<Covariates>,
) -> Result<Corpus, SyntheticError> {
    if n_sites == 0 || pages_per_site == 0 || vocab == 0 {
        return Err(SyntheticError::Config("sites, pages and vocabulary must be non-empty".into()));
    }
    let sites = (0..n_sites)
        .map(|i| Site {
            id: format!("site{i}"),
            pages: (0..pages_per_site)
                .map(|j| Page { id: format!("page{j}"), tokens: vec![0] })
                .collect(),
        })
        .collect();
    let vocabulary = (0..vocab).map(|v| format!("w{v}")).collect();
    Ok(Corpus::new(sites, vocabulary, covariates)?)
}

/// Draws `(μ, σ²)` from their Beta hyperpriors, rejecting pairs outside
/// `σ² < μ(1-μ)`.
pub fn sample_mean_var<R: Rng + ?Sized>(
    mean_prior: BetaParams,
    var_prior: BetaParams,
    rng: &mut R,
) -> Result<(f64, f64), SyntheticError> {
    for _ in 0..1_000_000 {
        let mean = sample_beta(mean_prior.d, mean_prior.e, rng)?;
        let var = sample_beta(var_prior.d, var_prior.e, rng)?;
        if mean_variance_to_beta_params(mean, var).is_ok() {
            return Ok((mean, var));
        }
    }
    Err(SyntheticError::Config("presence hyperpriors put almost no mass on feasible pairs".into()))
}

fn check_len(name: &str, v: &[f64], len: usize) -> Result<(), SyntheticError> {
    if v.len() == len {
        Ok(())
    } else {
        Err(SyntheticError::Config(format!("{name} has {} entries, expected {len}", v.len())))
    }
}

/// Draws every parameter of `cfg`'s model from its prior (or takes it from
/// `overrides`), with the shape of `shell` and exposure `exposure` in place of
/// page lengths. Assignments and counts are left empty.
pub fn sample_prior_state<R: Rng + ?Sized>(
    cfg: &ModelConfig,
    shell: &Corpus,
    exposure: f64,
    overrides: &Overrides,
    rng: &mut R,
) -> Result<ModelState, SyntheticError> {
    if !(exposure > 0.0 && exposure.is_finite()) {
        return Err(SyntheticError::Config(format!("exposure must be positive, got {exposure}")));
    }
    let mut state = blank_state(cfg, shell)?;
    let h = &cfg.hyper;
    let (k, t, v, m) = (state.k, state.n_topics, state.vocab, state.n_sites);
    state.page_scale.iter_mut().for_each(|x| *x = exposure);

    state.r0 = match overrides.r0 {
        Some(r0) => r0,
        None => sample_gamma(h.r0_shape, h.r0_scale, rng)?,
    };
    match &overrides.r {
        Some(r) => {
            check_len("r", r, t)?;
            state.r.copy_from_slice(r);
        }
        None => {
            for r in &mut state.r {
                *r = sample_gamma(state.r0, h.r_scale, rng)?;
            }
        }
    }
    match &overrides.phi {
        Some(phi) => {
            check_len("phi", phi, k * v)?;
            state.phi.copy_from_slice(phi);
        }
        None => {
            for row in state.phi.chunks_mut(v) {
                sample_dirichlet_into(std::iter::repeat_n(h.alpha_phi, v), row, rng)?;
            }
        }
    }
    match &overrides.psi {
        Some(psi) if state.local_topics => {
            check_len("psi", psi, m * v)?;
            state.psi.copy_from_slice(psi);
        }
        _ => {
            for row in state.psi.chunks_mut(v) {
                sample_dirichlet_into(std::iter::repeat_n(h.alpha_psi, v), row, rng)?;
            }
        }
    }

    match &mut state.site_params {
        SiteParams::Always => {}
        SiteParams::Exchangeable(p) => {
            let (mean, var) = sample_mean_var(h.pi_mean_prior, h.pi_var_prior, rng)?;
            p.mean = mean;
            p.var = var;
            match &overrides.site_probs {
                Some(probs) => {
                    check_len("site_probs", probs, k)?;
                    p.logits = probs.iter().map(|&x| logit(x)).collect();
                }
                None => {
                    let b = p.beta()?;
                    for x in &mut p.logits {
                        *x = sample_beta_logit(b.d, b.e, rng)?;
                    }
                }
            }
        }
        SiteParams::Structured(p) => {
            let mu0 = h.beta0_mean(p.q);
            for q in 0..p.q {
                p.prior_mean[q] = sample_normal(mu0[q], h.beta0_sd, rng)?;
                p.prior_var[q] = 1.0 / sample_gamma(h.sigma_shape, h.sigma_scale, rng)?;
            }
            match &overrides.beta {
                Some(beta) => {
                    check_len("beta", beta, k * p.q)?;
                    p.coef.copy_from_slice(beta);
                }
                None => {
                    for kk in 0..k {
                        for q in 0..p.q {
                            p.coef[kk * p.q + q] = sample_normal(p.prior_mean[q], p.prior_var[q].sqrt(), rng)?;
                        }
                    }
                }
            }
        }
    }
    match &mut state.page_params {
        PageParams::Always => {}
        PageParams::Exchangeable(p) => {
            let (mean, var) = sample_mean_var(h.eta_mean_prior(k), h.eta_var_prior(k), rng)?;
            p.mean = mean;
            p.var = var;
            match &overrides.page_probs {
                Some(probs) => {
                    check_len("page_probs", probs, t)?;
                    p.logits = probs.iter().map(|&x| logit(x)).collect();
                }
                None => {
                    let b = p.beta()?;
                    for x in &mut p.logits {
                        *x = sample_beta_logit(b.d, b.e, rng)?;
                    }
                }
            }
        }
    }

    let covariates = shell.covariates();
    for i in 0..m {
        let x = covariates.map(|c| c.row(i));
        for kk in 0..t {
            let pi = state.site_presence_prob(kk, x);
            let idx = state.st(i, kk);
            state.site_present[idx] = pi >= 1.0 || rng.random::<f64>() < pi;
        }
    }
    for n in 0..state.n_pages() {
        draw_page_weights(&mut state, n, rng)?;
    }
    Ok(state)
}

/// Draws `c_ijk` and `θ_ijk ~ Gamma(r_k b_ik c_ijk L, 1)` for one page.
fn draw_page_weights<R: Rng + ?Sized>(state: &mut ModelState, n: usize, rng: &mut R) -> Result<(), SyntheticError> {
    let site = state.site_of_page[n];
    for k in 0..state.n_topics {
        let eta = state.page_presence_prob(k);
        let idx = state.pt(n, k);
        state.page_present[idx] = eta >= 1.0 || rng.random::<f64>() < eta;
        let on = state.page_present[idx] && state.site_present[state.st(site, k)];
        state.theta[idx] = if on {
            sample_gamma(state.r[k] * state.page_scale[n], 1.0, rng)?
        } else {
            0.0
        };
    }
    Ok(())
}

/// Cumulative word distributions, one per global topic then one per site.
struct WordTables {
    vocab: usize,
    k: usize,
    phi: Vec<f64>,
    psi: Vec<f64>,
}

impl WordTables {
    fn new(state: &ModelState) -> Self {
        let cum = |rows: &[f64]| {
            let mut out = rows.to_vec();
            for row in out.chunks_mut(state.vocab) {
                let mut acc = 0.0;
                for x in row.iter_mut() {
                    acc += *x;
                    *x = acc;
                }
            }
            out
        };
        WordTables { vocab: state.vocab, k: state.k, phi: cum(&state.phi), psi: cum(&state.psi) }
    }

    fn draw<R: Rng + ?Sized>(&self, site: usize, topic: usize, rng: &mut R) -> u32 {
        let v = self.vocab;
        let row = if topic < self.k {
            &self.phi[topic * v..(topic + 1) * v]
        } else {
            &self.psi[site * v..(site + 1) * v]
        };
        let u = rng.random::<f64>() * row[v - 1];
        row.partition_point(|&c| c <= u).min(v - 1) as u32
    }
}

/// Draws `z_ijk ~ Poisson(θ_ijk)` tokens of each topic for one page and
/// returns `(tokens, topics)`.
fn draw_page_tokens<R: Rng + ?Sized>(
    state: &ModelState,
    tables: &WordTables,
    n: usize,
    rng: &mut R,
) -> Result<(Vec<u32>, Vec<u32>), SyntheticError> {
    let site = state.site_of_page[n];
    let mut tokens = Vec::new();
    let mut topics = Vec::new();
    for k in 0..state.n_topics {
        let theta = state.theta[state.pt(n, k)];
        let count = sample_poisson(theta, rng)?;
        for _ in 0..count {
            tokens.push(tables.draw(site, k, rng));
            topics.push(k as u32);
        }
    }
    Ok((tokens, topics))
}

/// Draws fresh tokens given the parameters in `state`, installs their true
/// topics as the assignments and retallies. Pages may come out empty; the
/// returned corpus keeps them, which only the sampler's own joint-distribution
/// checks rely on.
pub fn regenerate_tokens<R: Rng + ?Sized>(
    state: &mut ModelState,
    shell: &Corpus,
    rng: &mut R,
) -> Result<Corpus, SyntheticError> {
    let tables = WordTables::new(state);
    let mut all_tokens = Vec::with_capacity(state.n_pages());
    let mut all_topics = Vec::with_capacity(state.n_pages());
    for n in 0..state.n_pages() {
        let (tokens, topics) = draw_page_tokens(state, &tables, n, rng)?;
        all_tokens.push(tokens);
        all_topics.push(topics);
    }
    let corpus = shell.with_page_tokens_unchecked(all_tokens)?;
    state.assignments = all_topics;
    state.retally(&corpus);
    Ok(corpus)
}

/// Simulates a corpus of `n_sites` sites with `pages_per_site` pages over a
/// vocabulary of `vocab` words. Pages that come out empty get fresh page
/// presence, weights and tokens, up to [`MAX_REDRAWS`] times each.
pub fn simulate<R: Rng + ?Sized>(
    cfg: &ModelConfig,
    n_sites: usize,
    pages_per_site: usize,
    target_tokens: f64,
    vocab: usize,
    overrides: &Overrides,
    rng: &mut R,
) -> Result<GroundTruth, SyntheticError> {
    let covariates = match (&overrides.covariates, cfg.variant.site) {
        (Some(c), _) => Some(c.clone()),
        (None, crate::model::SitePrior::Structured) => Some(Covariates::from_regions(
            (0..n_sites).map(|i| if i % 2 == 0 { "A" } else { "B" }.to_string()).collect(),
        )),
        (None, _) => None,
    };
    let shell = shell_corpus(n_sites, pages_per_site, vocab, covariates)?;
    let mut state = sample_prior_state(cfg, &shell, target_tokens, overrides, rng)?;
    let tables = WordTables::new(&state);
    let mut redraws = 0;
    let mut all_tokens = Vec::with_capacity(state.n_pages());
    let mut all_topics = Vec::with_capacity(state.n_pages());
    for n in 0..state.n_pages() {
        let mut attempt = 0;
        let (tokens, topics) = loop {
            let drawn = draw_page_tokens(&state, &tables, n, rng)?;
            if !drawn.0.is_empty() {
                break drawn;
            }
            attempt += 1;
            if attempt > MAX_REDRAWS {
                let site = state.site_of_page[n];
                return Err(SyntheticError::EmptyPage { site, page: n - state.site_offsets[site] });
            }
            redraws += 1;
            draw_page_weights(&mut state, n, rng)?;
        };
        all_tokens.push(tokens);
        all_topics.push(topics);
    }
    if redraws > 0 {
        info!("simulate: redrew {redraws} empty pages");
    }
    let corpus = shell.with_page_tokens(all_tokens)?;
    state.assignments = all_topics;
    state.retally(&corpus);
    let params = TruthParameters {
        variant: cfg.variant.to_string(),
        k: state.k,
        n_topics: state.n_topics,
        vocab,
        target_tokens,
        phi: state.phi,
        psi: state.psi,
        r: state.r,
        r0: state.r0,
        site_present: state.site_present,
        page_present: state.page_present,
        theta: state.theta,
        site_params: state.site_params,
        page_params: state.page_params,
        assignments: state.assignments,
        redraws,
    };
    Ok(GroundTruth { corpus, params })
}

/// Site presence probability `π_ik` under the true parameters.
pub fn true_site_prob(truth: &TruthParameters, covariates: Option<&Covariates>, site: usize, k: usize) -> f64 {
    match &truth.site_params {
        SiteParams::Always => 1.0,
        SiteParams::Exchangeable(p) => p.prob(k),
        SiteParams::Structured(p) => {
            let x = covariates.expect("structured truth needs covariates").row(site);
            logistic(x.iter().zip(p.coef_row(k)).map(|(a, b)| a * b).sum())
        }
    }
}
