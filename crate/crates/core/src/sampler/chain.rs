//! Chains, retained draws and checkpoints.

use std::fmt;
use std::io::{Read, Write};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::Corpus;
use crate::distributions::RngStream;
use crate::model::{init_state, ModelConfig, ModelState, PageParams, SiteParams, StorageMode};

use super::{gibbs_sweep, SamplerError, SweepReport};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Packed 0/1 flags, serialised as a string of `'0'` and `'1'` characters.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BitString(pub Vec<bool>);

impl BitString {
    pub fn from_bools(b: &[bool]) -> Self {
        BitString(b.to_vec())
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl Serialize for BitString {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for BitString {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(serde::de::Error::custom(format!("bad flag character {other:?}"))),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(BitString)
    }
}

/// Large per-draw arrays kept only under [`StorageMode::Full`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullDraw {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub theta: Vec<f64>,
    pub page_present: BitString,
}

/// One retained state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub iteration: usize,
    pub r: Vec<f64>,
    pub r0: f64,
    /// Site presence `b`, sites × topics.
    pub site_present: BitString,
    /// Variant parameters; Pólya-Gamma auxiliaries are dropped.
    pub site_params: SiteParams,
    pub page_params: PageParams,
    pub log_lik: f64,
    pub full: Option<FullDraw>,
}

impl Draw {
    fn capture(state: &ModelState, iteration: usize, log_lik: f64, storage: StorageMode) -> Self {
        let mut site_params = state.site_params.clone();
        if let SiteParams::Structured(p) = &mut site_params {
            p.omega.clear();
        }
        Draw {
            iteration,
            r: state.r.clone(),
            r0: state.r0,
            site_present: BitString::from_bools(&state.site_present),
            site_params,
            page_params: state.page_params.clone(),
            log_lik,
            full: (storage == StorageMode::Full).then(|| FullDraw {
                phi: state.phi.clone(),
                psi: state.psi.clone(),
                theta: state.theta.clone(),
                page_present: BitString::from_bools(&state.page_present),
            }),
        }
    }

    /// Number of sites where topic `k` is present.
    pub fn sites_with_topic(&self, n_topics: usize, k: usize) -> usize {
        self.site_present.0.iter().skip(k).step_by(n_topics).filter(|&&b| b).count()
    }
}

/// Running sums for held-out predictive probabilities
/// `f_ijv = Σ_s Σ_k Φ_ikv θ_ijk / Σ_s Σ_k θ_ijk`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveAccumulator {
    /// Held-out `(word, count)` pairs per flattened page.
    pub heldout: Vec<Vec<(u32, u32)>>,
    /// Pooled numerators, aligned with `heldout`.
    pub numer: Vec<Vec<f64>>,
    /// Pooled denominators per page.
    pub denom: Vec<f64>,
    /// Sums of per-sample ratios, aligned with `heldout`.
    pub ratio_sum: Vec<Vec<f64>>,
    pub n_samples: usize,
}

impl PredictiveAccumulator {
    pub fn new(heldout: Vec<Vec<(u32, u32)>>) -> Self {
        let numer = heldout.iter().map(|h| vec![0.0; h.len()]).collect::<Vec<_>>();
        PredictiveAccumulator {
            denom: vec![0.0; heldout.len()],
            ratio_sum: numer.clone(),
            numer,
            heldout,
            n_samples: 0,
        }
    }

    /// Adds one state's contribution.
    pub fn add(&mut self, state: &ModelState) {
        self.add_arrays(state, &state.phi, &state.psi, &state.theta);
    }

    /// Adds a contribution from explicit Φ, Ψ and θ arrays shaped like `shape`.
    pub fn add_arrays(&mut self, shape: &ModelState, phi: &[f64], psi: &[f64], theta: &[f64]) {
        let t = shape.n_topics;
        let v = shape.vocab;
        let k_global = shape.k;
        for (n, held) in self.heldout.iter().enumerate() {
            let site = shape.site_of_page[n];
            let th = &theta[n * t..(n + 1) * t];
            let total: f64 = th.iter().sum();
            self.denom[n] += total;
            for (slot, &(w, _)) in held.iter().enumerate() {
                let w = w as usize;
                let mut num = 0.0;
                for (k, &x) in th.iter().enumerate() {
                    if x > 0.0 {
                        let p = if k < k_global { phi[k * v + w] } else { psi[site * v + w] };
                        num += p * x;
                    }
                }
                self.numer[n][slot] += num;
                if total > 0.0 {
                    self.ratio_sum[n][slot] += num / total;
                }
            }
        }
        self.n_samples += 1;
    }

    /// Combines the sums of another accumulator over the same held-out set.
    pub fn merge(&mut self, other: &PredictiveAccumulator) {
        assert_eq!(self.heldout, other.heldout, "accumulators cover different held-out sets");
        for (a, b) in self.numer.iter_mut().zip(&other.numer) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.ratio_sum.iter_mut().zip(&other.ratio_sum) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.denom.iter_mut().zip(&other.denom).for_each(|(x, y)| *x += y);
        self.n_samples += other.n_samples;
    }
}

/// Running MH acceptance counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRates {
    pub steps: usize,
    pub pi_mean: usize,
    pub pi_var: usize,
    pub eta_mean: usize,
    pub eta_var: usize,
}

impl AcceptanceRates {
    fn record(&mut self, r: &SweepReport) {
        self.steps += 1;
        let a = r.acceptance;
        self.pi_mean += a.pi_mean.unwrap_or(false) as usize;
        self.pi_var += a.pi_var.unwrap_or(false) as usize;
        self.eta_mean += a.eta_mean.unwrap_or(false) as usize;
        self.eta_var += a.eta_var.unwrap_or(false) as usize;
    }

    /// Acceptance fractions `(μ_π, σ²_π, μ_η, σ²_η)`.
    pub fn rates(&self) -> [f64; 4] {
        let n = self.steps.max(1) as f64;
        [self.pi_mean, self.pi_var, self.eta_mean, self.eta_var].map(|c| c as f64 / n)
    }
}

/// Retained output of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples {
    pub variant: String,
    pub k: usize,
    pub n_topics: usize,
    pub n_sites: usize,
    pub vocab: usize,
    pub seed: u64,
    pub stream_id: u64,
    pub storage: StorageMode,
    pub burn_in: usize,
    pub thin: usize,
    pub draws: Vec<Draw>,
    /// Posterior means of Φ (K × V), Ψ (sites × V) and θ (pages × topics).
    pub phi_mean: Vec<f64>,
    pub psi_mean: Vec<f64>,
    pub theta_mean: Vec<f64>,
    pub acceptance: AcceptanceRates,
    pub predictive: Option<PredictiveAccumulator>,
    /// Final state, kept so a run can be extended.
    pub last_state: Option<ModelState>,
}

impl PosteriorSamples {
    pub fn n_draws(&self) -> usize {
        self.draws.len()
    }

    /// Posterior-mean word distribution of a topic; `site` picks Ψ for the
    /// local topic.
    pub fn topic_word_mean(&self, topic: usize, site: usize) -> &[f64] {
        if topic < self.k {
            &self.phi_mean[topic * self.vocab..(topic + 1) * self.vocab]
        } else {
            &self.psi_mean[site * self.vocab..(site + 1) * self.vocab]
        }
    }

    pub fn write_json<W: Write>(&self, out: W) -> serde_json::Result<()> {
        serde_json::to_writer(out, self)
    }

    pub fn read_json<R: Read>(input: R) -> serde_json::Result<Self> {
        serde_json::from_reader(input)
    }
}

/// A serialisable snapshot from which a chain resumes bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub iteration: usize,
    pub state: ModelState,
    pub rng: RngStream,
    pub acceptance: AcceptanceRates,
}

impl Checkpoint {
    pub fn save<W: Write>(&self, out: W) -> Result<(), SamplerError> {
        serde_json::to_writer(out, self).map_err(|e| SamplerError::Checkpoint(e.to_string()))
    }

    pub fn load<R: Read>(input: R) -> Result<Self, SamplerError> {
        let c: Checkpoint = serde_json::from_reader(input).map_err(|e| SamplerError::Checkpoint(e.to_string()))?;
        if c.version != CHECKPOINT_VERSION {
            return Err(SamplerError::Checkpoint(format!("unsupported version {}", c.version)));
        }
        Ok(c)
    }
}

/// A running chain.
pub struct Chain<'a> {
    cfg: &'a ModelConfig,
    corpus: &'a Corpus,
    pub state: ModelState,
    rng: RngStream,
    iteration: usize,
    acceptance: AcceptanceRates,
}

impl<'a> Chain<'a> {
    /// Initialises a chain from `rng`.
    pub fn new(cfg: &'a ModelConfig, corpus: &'a Corpus, mut rng: RngStream) -> Result<Self, SamplerError> {
        let state = init_state(cfg, corpus, &mut rng)?;
        Ok(Chain { cfg, corpus, state, rng, iteration: 0, acceptance: AcceptanceRates::default() })
    }

    /// Starts from a given state.
    pub fn from_state(cfg: &'a ModelConfig, corpus: &'a Corpus, state: ModelState, rng: RngStream) -> Self {
        Chain { cfg, corpus, state, rng, iteration: 0, acceptance: AcceptanceRates::default() }
    }

    pub fn restore(cfg: &'a ModelConfig, corpus: &'a Corpus, checkpoint: Checkpoint) -> Result<Self, SamplerError> {
        if checkpoint.state.n_pages() != corpus.n_pages() || checkpoint.state.vocab != corpus.vocab_size() {
            return Err(SamplerError::Checkpoint("state does not match corpus".into()));
        }
        Ok(Chain {
            cfg,
            corpus,
            state: checkpoint.state,
            rng: checkpoint.rng,
            iteration: checkpoint.iteration,
            acceptance: checkpoint.acceptance,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            iteration: self.iteration,
            state: self.state.clone(),
            rng: self.rng.clone(),
            acceptance: self.acceptance,
        }
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn acceptance(&self) -> AcceptanceRates {
        self.acceptance
    }

    pub fn rng_mut(&mut self) -> &mut RngStream {
        &mut self.rng
    }

    /// Runs one sweep and logs progress every `log_every` sweeps.
    pub fn step(&mut self) -> Result<SweepReport, SamplerError> {
        self.iteration += 1;
        let report = gibbs_sweep(&mut self.state, self.corpus, self.cfg, &mut self.rng, self.iteration)?;
        self.acceptance.record(&report);
        let every = self.cfg.sampler.log_every;
        if every > 0 && self.iteration.is_multiple_of(every) {
            let [a, b, c, d] = self.acceptance.rates();
            info!(
                "chain {} iter {}: loglik {:.2}, accept mu_pi {:.2} s2_pi {:.2} mu_eta {:.2} s2_eta {:.2}",
                self.rng.stream_id(),
                self.iteration,
                report.log_lik,
                a,
                b,
                c,
                d
            );
        }
        Ok(report)
    }
}

/// Runs burn-in then retains `n_samples` states, one every `thin` sweeps.
/// With `heldout` set, predictive sums for those tokens are accumulated
/// from every retained state.
pub fn run_chain(
    cfg: &ModelConfig,
    corpus: &Corpus,
    rng: RngStream,
    heldout: Option<Vec<Vec<(u32, u32)>>>,
) -> Result<PosteriorSamples, SamplerError> {
    let chain = Chain::new(cfg, corpus, rng)?;
    continue_chain(chain, heldout)
}

/// Burn-in and retention from an existing chain.
pub(crate) fn continue_chain(
    mut chain: Chain<'_>,
    heldout: Option<Vec<Vec<(u32, u32)>>>,
) -> Result<PosteriorSamples, SamplerError> {
    let cfg = chain.cfg;
    let s = &cfg.sampler;
    let thin = s.thin.max(1);
    for _ in 0..s.burn_in {
        chain.step()?;
    }
    let st = &chain.state;
    let mut samples = PosteriorSamples {
        variant: cfg.variant.to_string(),
        k: cfg.k,
        n_topics: st.n_topics,
        n_sites: st.n_sites,
        vocab: st.vocab,
        seed: chain.rng.seed(),
        stream_id: chain.rng.stream_id(),
        storage: s.storage,
        burn_in: s.burn_in,
        thin,
        draws: Vec::with_capacity(s.n_samples),
        phi_mean: vec![0.0; st.phi.len()],
        psi_mean: vec![0.0; st.psi.len()],
        theta_mean: vec![0.0; st.theta.len()],
        acceptance: AcceptanceRates::default(),
        predictive: heldout.map(PredictiveAccumulator::new),
        last_state: None,
    };
    for _ in 0..s.n_samples {
        let mut report = chain.step()?;
        for _ in 1..thin {
            report = chain.step()?;
        }
        let st = &chain.state;
        add_into(&mut samples.phi_mean, &st.phi);
        add_into(&mut samples.psi_mean, &st.psi);
        add_into(&mut samples.theta_mean, &st.theta);
        if let Some(acc) = &mut samples.predictive {
            acc.add(st);
        }
        samples.draws.push(Draw::capture(st, report.iteration, report.log_lik, s.storage));
    }
    let n = samples.draws.len().max(1) as f64;
    for x in samples.phi_mean.iter_mut().chain(&mut samples.psi_mean).chain(&mut samples.theta_mean) {
        *x /= n;
    }
    samples.acceptance = chain.acceptance;
    samples.last_state = Some(chain.state);
    Ok(samples)
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    acc.iter_mut().zip(x).for_each(|(a, b)| *a += b);
}

/// Runs `cfg.sampler.chains` chains in parallel on streams
/// `(seed, 0..chains)`.
pub fn run_chains(
    cfg: &ModelConfig,
    corpus: &Corpus,
    heldout: Option<Vec<Vec<(u32, u32)>>>,
) -> Result<Vec<PosteriorSamples>, SamplerError> {
    (0..cfg.sampler.chains.max(1) as u64)
        .into_par_iter()
        .map(|c| run_chain(cfg, corpus, RngStream::new(cfg.sampler.seed, c), heldout.clone()))
        .collect()
}
