//! Model configuration and the Gibbs state.
//!
//! Topics are indexed `0..K` for the global topics; when local topics are on,
//! index `K` is the owning site's local topic. All per-page and per-site
//! tables are flat row-major vectors with `n_topics` columns.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::distributions::{sample_dirichlet_into, sample_gamma, DistError, DEFAULT_PG_TRUNCATION};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{0}")]
    Config(String),
    #[error("structured site prior needs site covariates")]
    MissingCovariates,
    #[error("infeasible Beta mean/variance: mean {mean}, variance {var}")]
    InfeasibleBeta { mean: f64, var: f64 },
    #[error(transparent)]
    Dist(#[from] DistError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SitePrior {
    Always,
    Exchangeable,
    Structured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PagePrior {
    Always,
    Exchangeable,
}

/// Presence-prior combination plus the local-topic switch, written as a
/// two-letter code: `SA-PFA-LT` has a structured site prior, pages always
/// present, and local topics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Variant {
    pub site: SitePrior,
    pub page: PagePrior,
    pub local_topics: bool,
}

impl Variant {
    pub fn new(site: SitePrior, page: PagePrior, local_topics: bool) -> Self {
        Self {
            site,
            page,
            local_topics,
        }
    }

    /// All twelve combinations, local-topic variants first.
    pub fn all() -> Vec<Variant> {
        let mut out = Vec::with_capacity(12);
        for lt in [true, false] {
            for page in [PagePrior::Always, PagePrior::Exchangeable] {
                for site in [SitePrior::Always, SitePrior::Exchangeable, SitePrior::Structured] {
                    out.push(Variant::new(site, page, lt));
                }
            }
        }
        out
    }

    pub fn code(&self) -> String {
        let s = match self.site {
            SitePrior::Always => 'A',
            SitePrior::Exchangeable => 'E',
            SitePrior::Structured => 'S',
        };
        let p = match self.page {
            PagePrior::Always => 'A',
            PagePrior::Exchangeable => 'E',
        };
        format!("{s}{p}")
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-PFA{}", self.code(), if self.local_topics { "-LT" } else { "" })
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    /// Accepts `sa`, `SA-LT`, `sa-pfa-lt`, `SE-PFA` and similar.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        let mut parts = upper.split('-');
        let code = parts.next().unwrap_or("");
        let mut local_topics = false;
        for p in parts {
            match p {
                "PFA" => {}
                "LT" => local_topics = true,
                _ => return Err(ModelError::Config(format!("unknown variant `{s}`"))),
            }
        }
        let chars: Vec<char> = code.chars().collect();
        if chars.len() != 2 {
            return Err(ModelError::Config(format!("unknown variant `{s}`")));
        }
        let site = match chars[0] {
            'A' => SitePrior::Always,
            'E' => SitePrior::Exchangeable,
            'S' => SitePrior::Structured,
            _ => return Err(ModelError::Config(format!("unknown site prior in `{s}`"))),
        };
        let page = match chars[1] {
            'A' => PagePrior::Always,
            'E' => PagePrior::Exchangeable,
            _ => return Err(ModelError::Config(format!("unknown page prior in `{s}`"))),
        };
        Ok(Variant::new(site, page, local_topics))
    }
}

/// Parameters `(d, e)` of a Beta distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub d: f64,
    pub e: f64,
}

impl BetaParams {
    pub fn new(d: f64, e: f64) -> Self {
        Self { d, e }
    }

    pub fn mean(&self) -> f64 {
        self.d / (self.d + self.e)
    }

    pub fn variance(&self) -> f64 {
        let s = self.d + self.e;
        self.d * self.e / (s * s * (s + 1.0))
    }
}

/// Converts a Beta mean and variance into its shape parameters,
/// `d = μ(μ(1-μ)/σ² - 1)` and `e = (1-μ)(μ(1-μ)/σ² - 1)`.
pub fn mean_variance_to_beta_params(mean: f64, var: f64) -> Result<BetaParams, ModelError> {
    if !(mean > 0.0 && mean < 1.0) || !(var > 0.0) || var >= mean * (1.0 - mean) {
        return Err(ModelError::InfeasibleBeta { mean, var });
    }
    let common = mean * (1.0 - mean) / var - 1.0;
    let p = BetaParams::new(mean * common, (1.0 - mean) * common);
    if p.d > 0.0 && p.e > 0.0 {
        Ok(p)
    } else {
        Err(ModelError::InfeasibleBeta { mean, var })
    }
}

/// Fixed prior hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Dirichlet concentration of the global topics.
    pub alpha_phi: f64,
    /// Dirichlet concentration of the local topics.
    pub alpha_psi: f64,
    /// `r0 ~ Gamma(r0_shape, r0_scale)`.
    pub r0_shape: f64,
    pub r0_scale: f64,
    /// Scale of `r_k | r0 ~ Gamma(r0, r_scale)`.
    pub r_scale: f64,
    /// Hyperpriors on the mean and variance of the site presence probabilities.
    pub pi_mean_prior: BetaParams,
    pub pi_var_prior: BetaParams,
    /// Same for page presence; `None` means `Beta(1, K - 1)`.
    pub eta_mean_prior: Option<BetaParams>,
    pub eta_var_prior: Option<BetaParams>,
    /// Mean of the coefficient prior mean `β0`; empty means all zeros.
    pub beta0_mean: Vec<f64>,
    /// Standard deviation of `β0` around `beta0_mean`.
    pub beta0_sd: f64,
    /// `1/σ_q² ~ Gamma(sigma_shape, sigma_scale)`.
    pub sigma_shape: f64,
    pub sigma_scale: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            alpha_phi: 0.05,
            alpha_psi: 0.05,
            r0_shape: 0.01,
            r0_scale: 100.0,
            r_scale: 1.0,
            pi_mean_prior: BetaParams::new(10.0, 10.0),
            pi_var_prior: BetaParams::new(1.0, 5.0),
            eta_mean_prior: None,
            eta_var_prior: None,
            beta0_mean: Vec::new(),
            beta0_sd: 0.5,
            sigma_shape: 1.0,
            sigma_scale: 1.0,
        }
    }
}

impl Hyperparameters {
    fn k_default(k: usize) -> BetaParams {
        // Beta(1, 0) is improper, so K = 1 falls back to Beta(1, 1)
        BetaParams::new(1.0, (k.saturating_sub(1)).max(1) as f64)
    }

    pub fn eta_mean_prior(&self, k: usize) -> BetaParams {
        self.eta_mean_prior.unwrap_or_else(|| Self::k_default(k))
    }

    pub fn eta_var_prior(&self, k: usize) -> BetaParams {
        self.eta_var_prior.unwrap_or_else(|| Self::k_default(k))
    }

    pub fn beta0_mean(&self, q: usize) -> Vec<f64> {
        if self.beta0_mean.is_empty() {
            vec![0.0; q]
        } else {
            self.beta0_mean.clone()
        }
    }

    fn validate(&self, k: usize) -> Result<(), ModelError> {
        let mut checks = vec![
            ("alpha_phi", self.alpha_phi),
            ("alpha_psi", self.alpha_psi),
            ("d_r0", self.r0_shape),
            ("e_r0", self.r0_scale),
            ("e_r", self.r_scale),
            ("sigma0", self.beta0_sd),
            ("d_sigma", self.sigma_shape),
            ("e_sigma", self.sigma_scale),
        ];
        for (name, p) in [
            ("mu_pi", self.pi_mean_prior),
            ("sigma_pi", self.pi_var_prior),
            ("mu_eta", self.eta_mean_prior(k)),
            ("sigma_eta", self.eta_var_prior(k)),
        ] {
            checks.push((name, p.d));
            checks.push((name, p.e));
        }
        for (name, v) in checks {
            if !(v.is_finite() && v > 0.0) {
                return Err(ModelError::Config(format!("hyperparameter {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// How retained draws of the large tables are kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StorageMode {
    /// Every retained draw keeps Φ, Ψ, θ and page presence.
    Full,
    /// Only running posterior means of Φ, Ψ, θ; perplexity then needs the
    /// predictive accumulator filled during the run.
    Summary,
}

impl FromStr for StorageMode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" => Ok(StorageMode::Full),
            "summary" => Ok(StorageMode::Summary),
            _ => Err(ModelError::Config(format!("unknown storage mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerSettings {
    pub burn_in: usize,
    pub n_samples: usize,
    pub thin: usize,
    pub chains: usize,
    pub pg_truncation: usize,
    /// Random-walk step on `logit(μ)`.
    pub mh_step_mean: f64,
    /// Random-walk step on `logit(σ² / (μ(1-μ)))`.
    pub mh_step_var: f64,
    pub seed: u64,
    pub storage: StorageMode,
    /// Progress log period in sweeps; 0 disables.
    pub log_every: usize,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self {
            burn_in: 10_000,
            n_samples: 1_000,
            thin: 1,
            chains: 1,
            pg_truncation: DEFAULT_PG_TRUNCATION,
            mh_step_mean: 0.25,
            mh_step_var: 0.25,
            seed: 0,
            storage: StorageMode::Full,
            log_every: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of global topics.
    pub k: usize,
    pub variant: Variant,
    pub hyper: Hyperparameters,
    pub sampler: SamplerSettings,
}

impl ModelConfig {
    pub fn new(k: usize, variant: Variant) -> Self {
        Self {
            k,
            variant,
            hyper: Hyperparameters::default(),
            sampler: SamplerSettings::default(),
        }
    }

    pub fn n_topics(&self) -> usize {
        self.k + usize::from(self.variant.local_topics)
    }

    pub fn validate(&self, corpus: &Corpus) -> Result<(), ModelError> {
        if self.k == 0 {
            return Err(ModelError::Config("K must be at least 1".into()));
        }
        self.hyper.validate(self.k)?;
        let s = &self.sampler;
        if s.thin == 0 || s.chains == 0 {
            return Err(ModelError::Config("thin and chains must be at least 1".into()));
        }
        if s.pg_truncation == 0 {
            return Err(ModelError::Config("pg_truncation must be at least 1".into()));
        }
        if !(s.mh_step_mean > 0.0 && s.mh_step_var > 0.0) {
            return Err(ModelError::Config("MH step sizes must be positive".into()));
        }
        if self.variant.site == SitePrior::Structured {
            let cov = corpus.covariates().ok_or(ModelError::MissingCovariates)?;
            let q = cov.n_columns();
            if !self.hyper.beta0_mean.is_empty() && self.hyper.beta0_mean.len() != q {
                return Err(ModelError::Config(format!(
                    "mu0 has {} entries but there are {q} covariates",
                    self.hyper.beta0_mean.len()
                )));
            }
        }
        Ok(())
    }

    /// Sets one `key=value` setting. Returns `Ok(false)` for keys this
    /// config does not know, so callers can layer their own keys on top.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, ModelError> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T, ModelError> {
            v.trim()
                .parse()
                .map_err(|_| ModelError::Config(format!("bad value for {key}: `{v}`")))
        }
        let h = &mut self.hyper;
        let s = &mut self.sampler;
        match key.trim() {
            "k" => self.k = num(key, value)?,
            "variant" => self.variant = value.parse()?,
            "local_topics" => self.variant.local_topics = num(key, value)?,
            "alpha_phi" => h.alpha_phi = num(key, value)?,
            "alpha_psi" => h.alpha_psi = num(key, value)?,
            "d_r0" => h.r0_shape = num(key, value)?,
            "e_r0" => h.r0_scale = num(key, value)?,
            "e_r" => h.r_scale = num(key, value)?,
            "d_mu_pi" => h.pi_mean_prior.d = num(key, value)?,
            "e_mu_pi" => h.pi_mean_prior.e = num(key, value)?,
            "d_sigma_pi" => h.pi_var_prior.d = num(key, value)?,
            "e_sigma_pi" => h.pi_var_prior.e = num(key, value)?,
            "d_mu_eta" => h.eta_mean_prior.get_or_insert(Hyperparameters::k_default(self.k)).d = num(key, value)?,
            "e_mu_eta" => h.eta_mean_prior.get_or_insert(Hyperparameters::k_default(self.k)).e = num(key, value)?,
            "d_sigma_eta" => h.eta_var_prior.get_or_insert(Hyperparameters::k_default(self.k)).d = num(key, value)?,
            "e_sigma_eta" => h.eta_var_prior.get_or_insert(Hyperparameters::k_default(self.k)).e = num(key, value)?,
            "mu0" => {
                h.beta0_mean = value
                    .split(',')
                    .filter(|x| !x.trim().is_empty())
                    .map(|x| num(key, x))
                    .collect::<Result<_, _>>()?
            }
            "sigma0" => h.beta0_sd = num(key, value)?,
            "d_sigma" => h.sigma_shape = num(key, value)?,
            "e_sigma" => h.sigma_scale = num(key, value)?,
            "burn_in" | "burnin" => s.burn_in = num(key, value)?,
            "samples" | "n_samples" => s.n_samples = num(key, value)?,
            "thin" => s.thin = num(key, value)?,
            "chains" => s.chains = num(key, value)?,
            "pg_truncation" => s.pg_truncation = num(key, value)?,
            "mh_step_mean" => s.mh_step_mean = num(key, value)?,
            "mh_step_var" => s.mh_step_var = num(key, value)?,
            "seed" => s.seed = num(key, value)?,
            "storage" => s.storage = value.parse()?,
            "log_every" => s.log_every = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Parses flat `key = value` text. Blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>, ModelError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ModelError::Config(format!("line {}: expected key=value", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Mean/variance hyperparameters of an exchangeable presence prior together
/// with the per-topic presence probabilities they govern.
///
/// The probabilities are kept on the logit scale. When the variance is close
/// to `μ(1-μ)` the Beta draws pile up within 1e-16 of 0 or 1, where a plain
/// `f64` probability can no longer tell them apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeableParams {
    pub logits: Vec<f64>,
    pub mean: f64,
    pub var: f64,
}

impl ExchangeableParams {
    pub fn from_probs(probs: &[f64], mean: f64, var: f64) -> Self {
        ExchangeableParams { logits: probs.iter().map(|&p| logit(p)).collect(), mean, var }
    }

    pub fn beta(&self) -> Result<BetaParams, ModelError> {
        mean_variance_to_beta_params(self.mean, self.var)
    }

    pub fn prob(&self, k: usize) -> f64 {
        logistic(self.logits[k])
    }

    pub fn probs(&self) -> Vec<f64> {
        self.logits.iter().map(|&x| logistic(x)).collect()
    }
}

/// Logistic-regression presence prior `π_ik = g(X_i'β_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredParams {
    pub q: usize,
    /// `K × Q` coefficients, one row per global topic.
    pub coef: Vec<f64>,
    /// Prior mean `β0`.
    pub prior_mean: Vec<f64>,
    /// Diagonal prior variances `σ_q²`.
    pub prior_var: Vec<f64>,
    /// Pólya-Gamma auxiliaries, `M × K`.
    pub omega: Vec<f64>,
}

impl StructuredParams {
    pub fn coef_row(&self, k: usize) -> &[f64] {
        &self.coef[k * self.q..(k + 1) * self.q]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SiteParams {
    Always,
    /// One logit per global topic.
    Exchangeable(ExchangeableParams),
    Structured(StructuredParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PageParams {
    Always,
    /// One logit per topic, local topic included.
    Exchangeable(ExchangeableParams),
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(p / (1 - p))`; 0 and 1 map to the infinities.
pub fn logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

/// `ln logistic(x)`, accurate in both tails.
pub fn ln_logistic(x: f64) -> f64 {
    -((-x).max(0.0) + (-x.abs()).exp().ln_1p())
}

/// One Gibbs state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub k: usize,
    pub n_topics: usize,
    pub local_topics: bool,
    pub n_sites: usize,
    pub vocab: usize,
    pub site_of_page: Vec<usize>,
    /// `M + 1` offsets into the flattened page list.
    pub site_offsets: Vec<usize>,
    /// Topic index of every token, per flattened page.
    pub assignments: Vec<Vec<u32>>,
    /// `z_ijk·`, pages × topics.
    pub page_topic_counts: Vec<u32>,
    /// `z_··kv`, global topics × V.
    pub topic_word_counts: Vec<u32>,
    /// `z_i·(K+1)v`, sites × V; empty without local topics.
    pub local_word_counts: Vec<u32>,
    /// Page length `z_ij··` that scales the topic-weight prior.
    pub page_scale: Vec<f64>,
    /// Global topic-word probabilities, K × V.
    pub phi: Vec<f64>,
    /// Local topic-word probabilities, sites × V; empty without local topics.
    pub psi: Vec<f64>,
    /// Topic weights, pages × topics.
    pub theta: Vec<f64>,
    pub r: Vec<f64>,
    pub r0: f64,
    /// Site presence `b`, sites × topics.
    pub site_present: Vec<bool>,
    /// Page presence `c`, pages × topics.
    pub page_present: Vec<bool>,
    pub site_params: SiteParams,
    pub page_params: PageParams,
    /// CRT table counts `l_ijk`, pages × topics.
    pub page_tables: Vec<u32>,
    /// Second-level table counts `ℓ_k`.
    pub topic_tables: Vec<u64>,
}

impl ModelState {
    pub fn n_pages(&self) -> usize {
        self.site_of_page.len()
    }

    pub fn pages_of_site(&self, site: usize) -> std::ops::Range<usize> {
        self.site_offsets[site]..self.site_offsets[site + 1]
    }

    /// Topic index of the local topic, if any.
    pub fn local_topic(&self) -> Option<usize> {
        self.local_topics.then_some(self.k)
    }

    #[inline]
    pub fn pt(&self, page: usize, topic: usize) -> usize {
        page * self.n_topics + topic
    }

    #[inline]
    pub fn st(&self, site: usize, topic: usize) -> usize {
        site * self.n_topics + topic
    }

    /// Word probability of `topic` at `site`, reading Ψ for the local topic.
    #[inline]
    pub fn word_prob(&self, site: usize, topic: usize, word: usize) -> f64 {
        if topic < self.k {
            self.phi[topic * self.vocab + word]
        } else {
            self.psi[site * self.vocab + word]
        }
    }

    pub fn page_total(&self, page: usize) -> u32 {
        self.page_topic_counts[page * self.n_topics..(page + 1) * self.n_topics]
            .iter()
            .sum()
    }

    /// Presence probability `π_ik` of a global topic at a site.
    /// Logit of `π_ik`; `+∞` where the topic is always present.
    pub fn site_presence_logit(&self, topic: usize, covariates: Option<&[f64]>) -> f64 {
        if Some(topic) == self.local_topic() {
            return f64::INFINITY;
        }
        match &self.site_params {
            SiteParams::Always => f64::INFINITY,
            SiteParams::Exchangeable(p) => p.logits[topic],
            SiteParams::Structured(p) => {
                let x = covariates.expect("structured prior needs covariates");
                x.iter().zip(p.coef_row(topic)).map(|(a, b)| a * b).sum()
            }
        }
    }

    pub fn site_presence_prob(&self, topic: usize, covariates: Option<&[f64]>) -> f64 {
        logistic(self.site_presence_logit(topic, covariates))
    }

    /// Logit of `η_k`; `+∞` where pages always carry the topic.
    pub fn page_presence_logit(&self, topic: usize) -> f64 {
        match &self.page_params {
            PageParams::Always => f64::INFINITY,
            PageParams::Exchangeable(p) => p.logits[topic],
        }
    }

    pub fn page_presence_prob(&self, topic: usize) -> f64 {
        logistic(self.page_presence_logit(topic))
    }

    /// Recomputes every count table from the assignments and `corpus` tokens.
    pub fn retally(&mut self, corpus: &Corpus) {
        self.page_topic_counts.iter_mut().for_each(|x| *x = 0);
        self.topic_word_counts.iter_mut().for_each(|x| *x = 0);
        self.local_word_counts.iter_mut().for_each(|x| *x = 0);
        let (t, v, k) = (self.n_topics, self.vocab, self.k);
        for (n, (site, page)) in corpus.pages().enumerate() {
            for (&w, &topic) in page.tokens.iter().zip(&self.assignments[n]) {
                let topic = topic as usize;
                self.page_topic_counts[n * t + topic] += 1;
                if topic < k {
                    self.topic_word_counts[topic * v + w as usize] += 1;
                } else {
                    self.local_word_counts[site * v + w as usize] += 1;
                }
            }
        }
    }

    /// Checks the structural invariants of a state against its corpus.
    pub fn check_invariants(&self, corpus: &Corpus) -> Result<(), String> {
        let mut fresh = self.clone();
        fresh.retally(corpus);
        if fresh.page_topic_counts != self.page_topic_counts
            || fresh.topic_word_counts != self.topic_word_counts
            || fresh.local_word_counts != self.local_word_counts
        {
            return Err("count tables differ from a fresh tally".into());
        }
        for (n, (_, page)) in corpus.pages().enumerate() {
            if self.page_total(n) as usize != page.tokens.len() {
                return Err(format!("page {n}: topic counts do not sum to page length"));
            }
        }
        for (row, name) in [(&self.phi, "phi"), (&self.psi, "psi")] {
            for (i, chunk) in row.chunks(self.vocab.max(1)).enumerate() {
                let s: f64 = chunk.iter().sum();
                if (s - 1.0).abs() > 1e-9 {
                    return Err(format!("{name} row {i} sums to {s}"));
                }
            }
        }
        for n in 0..self.n_pages() {
            let site = self.site_of_page[n];
            for k in 0..self.n_topics {
                let idx = self.pt(n, k);
                let present = self.site_present[self.st(site, k)] && self.page_present[idx];
                if self.theta[idx] > 0.0 && !present {
                    return Err(format!("page {n} topic {k}: positive weight while absent"));
                }
                if self.page_topic_counts[idx] > 0 && !present {
                    return Err(format!("page {n} topic {k}: tokens assigned while absent"));
                }
                if self.page_tables[idx] > self.page_topic_counts[idx] {
                    return Err(format!("page {n} topic {k}: more tables than customers"));
                }
            }
        }
        if let Some(lt) = self.local_topic() {
            for i in 0..self.n_sites {
                if !self.site_present[self.st(i, lt)] {
                    return Err(format!("site {i}: local topic marked absent"));
                }
            }
        }
        Ok(())
    }
}

/// Prior-mean variance, pulled inside the feasible region `σ² < μ(1-μ)`.
pub(crate) fn feasible_variance(mean: f64, prior: BetaParams) -> f64 {
    prior.mean().min(0.5 * mean * (1.0 - mean))
}

/// Empty state shell with shapes taken from `corpus`; every table is zeroed,
/// presence flags are all on and variant parameters sit at prior means.
pub(crate) fn blank_state(cfg: &ModelConfig, corpus: &Corpus) -> Result<ModelState, ModelError> {
    cfg.validate(corpus)?;
    let k = cfg.k;
    let t = cfg.n_topics();
    let m = corpus.n_sites();
    let v = corpus.vocab_size();
    let n_pages = corpus.n_pages();
    let local = cfg.variant.local_topics;
    let h = &cfg.hyper;

    let site_params = match cfg.variant.site {
        SitePrior::Always => SiteParams::Always,
        SitePrior::Exchangeable => {
            let mean = h.pi_mean_prior.mean();
            SiteParams::Exchangeable(ExchangeableParams {
                logits: vec![logit(mean); k],
                mean,
                var: feasible_variance(mean, h.pi_var_prior),
            })
        }
        SitePrior::Structured => {
            let q = corpus.covariates().ok_or(ModelError::MissingCovariates)?.n_columns();
            let prior_mean = h.beta0_mean(q);
            let coef = (0..k).flat_map(|_| prior_mean.iter().copied()).collect();
            SiteParams::Structured(StructuredParams {
                q,
                coef,
                prior_mean,
                // precision prior mean is d·e
                prior_var: vec![1.0 / (h.sigma_shape * h.sigma_scale); q],
                omega: vec![0.25; m * k],
            })
        }
    };
    let page_params = match cfg.variant.page {
        PagePrior::Always => PageParams::Always,
        PagePrior::Exchangeable => {
            let mean = h.eta_mean_prior(k).mean();
            PageParams::Exchangeable(ExchangeableParams {
                logits: vec![logit(mean); t],
                mean,
                var: feasible_variance(mean, h.eta_var_prior(k)),
            })
        }
    };

    let mut site_of_page = Vec::with_capacity(n_pages);
    for (i, site) in corpus.sites().iter().enumerate() {
        site_of_page.extend(std::iter::repeat_n(i, site.pages.len()));
    }
    Ok(ModelState {
        k,
        n_topics: t,
        local_topics: local,
        n_sites: m,
        vocab: v,
        site_of_page,
        site_offsets: corpus.site_offsets(),
        assignments: corpus.pages().map(|(_, p)| vec![0; p.tokens.len()]).collect(),
        page_topic_counts: vec![0; n_pages * t],
        topic_word_counts: vec![0; k * v],
        local_word_counts: if local { vec![0; m * v] } else { Vec::new() },
        page_scale: corpus.pages().map(|(_, p)| p.tokens.len() as f64).collect(),
        phi: vec![1.0 / v as f64; k * v],
        psi: if local { vec![1.0 / v as f64; m * v] } else { Vec::new() },
        theta: vec![0.0; n_pages * t],
        r: vec![1.0; t],
        r0: h.r0_shape * h.r0_scale,
        site_present: vec![true; m * t],
        page_present: vec![true; n_pages * t],
        site_params,
        page_params,
        page_tables: vec![0; n_pages * t],
        topic_tables: vec![0; t],
    })
}

/// Starting state: every topic present everywhere, tokens assigned uniformly
/// at random, Φ/Ψ and `r_k` drawn from their priors, `r0` at its prior mean
/// and θ drawn from its conditional given the initial counts.
pub fn init_state<R: rand::Rng + ?Sized>(
    cfg: &ModelConfig,
    corpus: &Corpus,
    rng: &mut R,
) -> Result<ModelState, ModelError> {
    let mut state = blank_state(cfg, corpus)?;
    let t = state.n_topics as u32;
    for a in &mut state.assignments {
        for x in a.iter_mut() {
            *x = rng.random_range(0..t);
        }
    }
    state.retally(corpus);

    let v = state.vocab;
    let h = &cfg.hyper;
    for row in state.phi.chunks_mut(v) {
        sample_dirichlet_into(std::iter::repeat_n(h.alpha_phi, v), row, rng)?;
    }
    for row in state.psi.chunks_mut(v) {
        sample_dirichlet_into(std::iter::repeat_n(h.alpha_psi, v), row, rng)?;
    }
    for r in &mut state.r {
        *r = sample_gamma(state.r0, h.r_scale, rng)?;
    }
    for n in 0..state.n_pages() {
        for k in 0..state.n_topics {
            let idx = state.pt(n, k);
            let shape = state.r[k] * state.page_scale[n] + state.page_topic_counts[idx] as f64;
            state.theta[idx] = sample_gamma(shape, 0.5, rng)?;
        }
    }
    Ok(state)
}
