//! Gibbs sweeps and chain orchestration.

mod blocks;
mod chain;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::distributions::{DistError, RngStream};
use crate::model::{ModelConfig, ModelError, ModelState};

pub use blocks::{
    active_exposure, beta0_conditional, beta_posterior, mh_accept, precision_conditional, mh_update_exchangeable, mh_update_presence_hyper, presence_hyper_log_target,
    presence_on_probability, resample_assignments, resample_beta, resample_beta0_sigma, resample_phi_psi,
    resample_pi_or_eta, resample_presence, resample_r, resample_r0, resample_r_given_tables, resample_theta,
    sample_page_tables, table_success_prob, MhAcceptance, RATE_FLOOR,
};
pub use chain::{
    run_chain, run_chains, AcceptanceRates, BitString, Chain, Checkpoint, Draw, FullDraw, PosteriorSamples,
    PredictiveAccumulator, CHECKPOINT_VERSION,
};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("page {page} has no topic with positive weight")]
    NoLiveTopic { page: usize },
    #[error("structured site prior needs covariates")]
    MissingCovariates,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Diagnostics of one sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub iteration: usize,
    pub acceptance: MhAcceptance,
    /// Pages on which no topic is present after the presence block.
    pub empty_pages: usize,
    /// Token log-likelihood under the θ, Φ and Ψ used for the assignments.
    pub log_lik: f64,
    pub timings: Vec<(String, Duration)>,
}

/// Number of pages with `b_ik c_ijk = 0` for every topic.
pub fn count_empty_pages(state: &ModelState) -> usize {
    (0..state.n_pages())
        .filter(|&n| {
            let site = state.site_of_page[n];
            (0..state.n_topics).all(|k| !(state.site_present[state.st(site, k)] && state.page_present[state.pt(n, k)]))
        })
        .count()
}

struct Timer {
    last: Instant,
    out: Vec<(String, Duration)>,
}

impl Timer {
    fn new() -> Self {
        Timer { last: Instant::now(), out: Vec::with_capacity(8) }
    }

    fn lap(&mut self, name: &str) {
        let now = Instant::now();
        self.out.push((name.to_string(), now - self.last));
        self.last = now;
    }
}

/// One full sweep.
///
/// Block order: assignments, Φ/Ψ, presence (c then b), table counts, `r0`,
/// `r`, θ, then the variant's presence parameters (π/η, their MH hypers, or
/// the Pólya-Gamma β update with β0 and σ²).
///
/// The presence, `r0` and `r` blocks are drawn with θ integrated out, and
/// `r0` additionally with `r` integrated out, so θ is redrawn last among
/// them and `r0` precedes `r`.
pub fn gibbs_sweep(
    state: &mut ModelState,
    corpus: &Corpus,
    cfg: &ModelConfig,
    rng: &mut RngStream,
    iteration: usize,
) -> Result<SweepReport, SamplerError> {
    let h = &cfg.hyper;
    let s = &cfg.sampler;
    let mut timer = Timer::new();

    let log_lik = resample_assignments(state, corpus, rng)?;
    timer.lap("assignments");
    resample_phi_psi(state, h, rng)?;
    timer.lap("phi_psi");
    resample_presence(state, corpus, rng)?;
    timer.lap("presence");
    sample_page_tables(state, rng);
    resample_r0(state, h, rng)?;
    resample_r_given_tables(state, h, rng)?;
    timer.lap("r");
    resample_theta(state, rng)?;
    timer.lap("theta");
    resample_pi_or_eta(state, rng)?;
    let acceptance = mh_update_presence_hyper(state, h, s.mh_step_mean, s.mh_step_var, rng)?;
    resample_beta(state, corpus, s.pg_truncation, rng)?;
    resample_beta0_sigma(state, h, rng)?;
    timer.lap("presence_params");

    Ok(SweepReport {
        iteration,
        acceptance,
        empty_pages: count_empty_pages(state),
        log_lik,
        timings: timer.out,
    })
}
