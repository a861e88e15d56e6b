//! Full-conditional updates, one function per block.
//!
//! The presence, table-count and `r` blocks integrate the topic weights θ
//! out of the Poisson likelihood: given `b_ik = c_ijk = 1`, the page's topic
//! count `z_ijk·` is negative binomial with shape `r_k z_ij··` and success
//! probability 1/2. θ is redrawn from its own conditional after those blocks.

use std::f64::consts::LN_2;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rayon::prelude::*;

use crate::corpus::Corpus;
use crate::distributions::{
    categorical_with_total, crt_bernoulli_sum, sample_beta_logit, sample_dirichlet_into, sample_gamma,
    sample_mvn_canonical, sample_normal, sample_polya_gamma, RngStream,
};
use crate::model::{
    ln_logistic, logistic, logit, mean_variance_to_beta_params, BetaParams, ExchangeableParams, Hyperparameters, ModelState, PageParams,
    SiteParams,
};

use super::SamplerError;

/// Smallest value `r_k` and `r0` may take; keeps CRT and Gamma shapes
/// strictly positive when a draw underflows.
pub const RATE_FLOOR: f64 = 1e-300;

/// Probability that a presence indicator is on when every token count it
/// governs is zero: `p·2^{-x} / (1 - p + p·2^{-x})`, whose logit is
/// `logit p - x ln 2`. `exponent` is `x`, the summed `r_k z_ij··` of the
/// affected pages.
#[inline]
pub fn presence_on_probability(prior_logit: f64, exponent: f64) -> f64 {
    if prior_logit == f64::INFINITY {
        return 1.0;
    }
    logistic(prior_logit - exponent * LN_2)
}

/// Draws every token's topic from `Φ_ikv θ_ijk` (normalised over k) and
/// retallies the count tables. Pages are processed in parallel, each with its
/// own RNG stream keyed off one draw from `rng`, so the outcome does not
/// depend on the thread count.
///
/// Returns the token log-likelihood `Σ ln(Σ_k Φ_ikv θ_ijk / Σ_k θ_ijk)`.
pub fn resample_assignments<R: RngCore + ?Sized>(
    state: &mut ModelState,
    corpus: &Corpus,
    rng: &mut R,
) -> Result<f64, SamplerError> {
    let key = rng.next_u64();
    let mut assignments = std::mem::take(&mut state.assignments);
    let view = &*state;
    let results: Vec<Result<f64, SamplerError>> = assignments
        .par_iter_mut()
        .zip(corpus.pages().collect::<Vec<_>>().into_par_iter())
        .enumerate()
        .map(|(n, (topics, (site, page)))| {
            let mut prng = RngStream::new(key, n as u64);
            let t = view.n_topics;
            let theta = &view.theta[n * t..(n + 1) * t];
            let theta_total: f64 = theta.iter().sum();
            if page.tokens.is_empty() {
                return Ok(0.0);
            }
            if !(theta_total > 0.0) {
                return Err(SamplerError::NoLiveTopic { page: n });
            }
            let live: Vec<usize> = (0..t).filter(|&k| theta[k] > 0.0).collect();
            let mut weights = vec![0.0; live.len()];
            let mut loglik = 0.0;
            for (slot, &w) in topics.iter_mut().zip(&page.tokens) {
                let mut total = 0.0;
                for (wt, &k) in weights.iter_mut().zip(&live) {
                    *wt = view.word_prob(site, k, w as usize) * theta[k];
                    total += *wt;
                }
                if !(total > 0.0) {
                    return Err(SamplerError::NoLiveTopic { page: n });
                }
                loglik += total.ln();
                *slot = live[categorical_with_total(&weights, total, &mut prng)] as u32;
            }
            Ok(loglik - page.tokens.len() as f64 * theta_total.ln())
        })
        .collect();
    state.assignments = assignments;
    let mut loglik = 0.0;
    for r in results {
        loglik += r?;
    }
    state.retally(corpus);
    Ok(loglik)
}

/// `φ_k ~ Dirichlet(α_φ + z_··k·)` and `ψ_i ~ Dirichlet(α_ψ + z_i·(K+1)·)`.
pub fn resample_phi_psi<R: RngCore + ?Sized>(
    state: &mut ModelState,
    hyper: &Hyperparameters,
    rng: &mut R,
) -> Result<(), SamplerError> {
    let v = state.vocab;
    let key = rng.next_u64();
    let draw_rows = |rows: &mut [f64], counts: &[u32], alpha: f64, stream_base: u64| -> Result<(), SamplerError> {
        rows.par_chunks_mut(v)
            .zip(counts.par_chunks(v))
            .enumerate()
            .try_for_each(|(row, (out, z))| {
                let mut prng = RngStream::new(key, stream_base + row as u64);
                sample_dirichlet_into(z.iter().map(|&c| alpha + c as f64), out, &mut prng)?;
                Ok(())
            })
    };
    draw_rows(&mut state.phi, &state.topic_word_counts, hyper.alpha_phi, 0)?;
    if state.local_topics {
        draw_rows(&mut state.psi, &state.local_word_counts, hyper.alpha_psi, 1 << 32)?;
    }
    Ok(())
}

/// Marginal presence updates, page level first, then site level.
///
/// A topic with tokens on a page is present on that page and its site. For
/// the rest, θ is integrated out: each zero count contributes `2^{-r_k z_ij··}`
/// to the likelihood of the topic being present.
pub fn resample_presence<R: Rng + ?Sized>(
    state: &mut ModelState,
    corpus: &Corpus,
    rng: &mut R,
) -> Result<(), SamplerError> {
    let site_modeled = !matches!(state.site_params, SiteParams::Always);
    let page_modeled = !matches!(state.page_params, PageParams::Always);
    if !site_modeled && !page_modeled {
        return Ok(());
    }
    let covariates = corpus.covariates();
    let local = state.local_topic();
    for i in 0..state.n_sites {
        let pages = state.pages_of_site(i);
        let x = covariates.map(|c| c.row(i));
        for k in 0..state.n_topics {
            let b_idx = state.st(i, k);
            let r = state.r[k];
            if page_modeled {
                let eta = state.page_presence_logit(k);
                let b = state.site_present[b_idx];
                for j in pages.clone() {
                    let idx = state.pt(j, k);
                    state.page_present[idx] = if state.page_topic_counts[idx] > 0 {
                        true
                    } else {
                        let exponent = if b { r * state.page_scale[j] } else { 0.0 };
                        rng.random::<f64>() < presence_on_probability(eta, exponent)
                    };
                }
            }
            if site_modeled && Some(k) != local {
                let used = pages.clone().any(|j| state.page_topic_counts[state.pt(j, k)] > 0);
                state.site_present[b_idx] = if used {
                    true
                } else {
                    let pi = state.site_presence_logit(k, x);
                    let exponent: f64 = pages
                        .clone()
                        .filter(|&j| state.page_present[state.pt(j, k)])
                        .map(|j| r * state.page_scale[j])
                        .sum();
                    rng.random::<f64>() < presence_on_probability(pi, exponent)
                };
            }
        }
    }
    Ok(())
}

/// `θ_ijk ~ Gamma(r_k z_ij·· + z_ijk·, 0.5)` where the topic is present on
/// the page and its site, and exactly zero elsewhere.
pub fn resample_theta<R: Rng + ?Sized>(state: &mut ModelState, rng: &mut R) -> Result<(), SamplerError> {
    for n in 0..state.n_pages() {
        let site = state.site_of_page[n];
        for k in 0..state.n_topics {
            let idx = state.pt(n, k);
            let present = state.site_present[state.st(site, k)] && state.page_present[idx];
            state.theta[idx] = if present {
                let shape = state.r[k] * state.page_scale[n] + state.page_topic_counts[idx] as f64;
                if shape > 0.0 {
                    sample_gamma(shape, 0.5, rng)?
                } else {
                    0.0
                }
            } else {
                0.0
            };
        }
    }
    Ok(())
}

/// `λ_k = -ln(1/2) Σ_ij b_ik c_ijk z_ij··`, the Poisson rate multiplier of
/// the table counts of topic k.
pub fn active_exposure(state: &ModelState, k: usize) -> f64 {
    let mut total = 0.0;
    for n in 0..state.n_pages() {
        let site = state.site_of_page[n];
        if state.site_present[state.st(site, k)] && state.page_present[state.pt(n, k)] {
            total += state.page_scale[n];
        }
    }
    total * LN_2
}

/// Draws the table counts `l_ijk ~ CRT(z_ijk·, r_k z_ij··)`. Zero counts
/// give zero tables and are skipped.
pub fn sample_page_tables<R: Rng + ?Sized>(state: &mut ModelState, rng: &mut R) {
    for n in 0..state.n_pages() {
        for k in 0..state.n_topics {
            let idx = state.pt(n, k);
            let z = state.page_topic_counts[idx];
            state.page_tables[idx] = if z == 0 {
                0
            } else {
                crt_bernoulli_sum(z as u64, state.r[k] * state.page_scale[n], rng) as u32
            };
        }
    }
}

/// `r_k ~ Gamma(r0 + l_··k, 1 / (1/e_r + λ_k))` given the current tables.
pub fn resample_r_given_tables<R: Rng + ?Sized>(
    state: &mut ModelState,
    hyper: &Hyperparameters,
    rng: &mut R,
) -> Result<(), SamplerError> {
    for k in 0..state.n_topics {
        let tables: u64 = (0..state.n_pages()).map(|n| state.page_tables[state.pt(n, k)] as u64).sum();
        let scale = 1.0 / (1.0 / hyper.r_scale + active_exposure(state, k));
        state.r[k] = sample_gamma(state.r0 + tables as f64, scale, rng)?.max(RATE_FLOOR);
    }
    Ok(())
}

/// Table counts followed by the `r_k` update.
pub fn resample_r<R: Rng + ?Sized>(
    state: &mut ModelState,
    hyper: &Hyperparameters,
    rng: &mut R,
) -> Result<(), SamplerError> {
    sample_page_tables(state, rng);
    resample_r_given_tables(state, hyper, rng)
}

/// `u_k = λ_k / (1/e_r + λ_k)`.
pub fn table_success_prob(lambda: f64, r_scale: f64) -> f64 {
    lambda / (1.0 / r_scale + lambda)
}

/// `ℓ_k ~ CRT(l_··k, r0)` then
/// `r0 ~ Gamma(d_r0 + Σ ℓ_k, 1 / (1/e_r0 - Σ ln(1 - u_k)))`.
///
/// This update integrates `r_k` out, so it must run between drawing the
/// table counts and redrawing `r_k`.
pub fn resample_r0<R: Rng + ?Sized>(
    state: &mut ModelState,
    hyper: &Hyperparameters,
    rng: &mut R,
) -> Result<(), SamplerError> {
    let mut ell_total = 0u64;
    let mut log_term = 0.0;
    for k in 0..state.n_topics {
        let tables: u64 = (0..state.n_pages()).map(|n| state.page_tables[state.pt(n, k)] as u64).sum();
        let ell = crt_bernoulli_sum(tables, state.r0, rng);
        state.topic_tables[k] = ell;
        ell_total += ell;
        // -ln(1 - u_k) = ln(1 + e_r λ_k)
        log_term += (hyper.r_scale * active_exposure(state, k)).ln_1p();
    }
    let scale = 1.0 / (1.0 / hyper.r0_scale + log_term);
    state.r0 = sample_gamma(hyper.r0_shape + ell_total as f64, scale, rng)?.max(RATE_FLOOR);
    Ok(())
}

/// Conjugate Beta updates of the exchangeable presence probabilities:
/// `η_k ~ Beta(d_η + c_··k, e_η + N - c_··k)` and the site analogue for `π_k`.
pub fn resample_pi_or_eta<R: Rng + ?Sized>(state: &mut ModelState, rng: &mut R) -> Result<(), SamplerError> {
    let n_pages = state.n_pages();
    let m = state.n_sites;
    let t = state.n_topics;
    if let PageParams::Exchangeable(p) = &state.page_params {
        let prior = p.beta()?;
        let mut logits = Vec::with_capacity(t);
        for k in 0..t {
            let on = (0..n_pages).filter(|&n| state.page_present[n * t + k]).count() as f64;
            logits.push(sample_beta_logit(prior.d + on, prior.e + n_pages as f64 - on, rng)?);
        }
        if let PageParams::Exchangeable(p) = &mut state.page_params {
            p.logits = logits;
        }
    }
    if let SiteParams::Exchangeable(p) = &state.site_params {
        let prior = p.beta()?;
        let mut logits = Vec::with_capacity(state.k);
        for k in 0..state.k {
            let on = (0..m).filter(|&i| state.site_present[i * t + k]).count() as f64;
            logits.push(sample_beta_logit(prior.d + on, prior.e + m as f64 - on, rng)?);
        }
        if let SiteParams::Exchangeable(p) = &mut state.site_params {
            p.logits = logits;
        }
    }
    Ok(())
}

fn ln_beta_fn(a: f64, b: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Beta log density at `x = logistic(logit)`.
fn ln_beta_pdf_logit(logit: f64, p: BetaParams) -> f64 {
    (p.d - 1.0) * ln_logistic(logit) + (p.e - 1.0) * ln_logistic(-logit) - ln_beta_fn(p.d, p.e)
}

fn ln_beta_pdf(x: f64, p: BetaParams) -> f64 {
    (p.d - 1.0) * x.ln() + (p.e - 1.0) * (-x).ln_1p() - ln_beta_fn(p.d, p.e)
}

/// Log posterior of the mean/variance pair `(μ, σ²)` of an exchangeable
/// presence prior: Beta hyperpriors on each, times the Beta likelihood of the
/// current probabilities, given as logits. `-∞` outside `0 < σ² < μ(1-μ)`.
pub fn presence_hyper_log_target(
    mean: f64,
    var: f64,
    logits: &[f64],
    mean_prior: BetaParams,
    var_prior: BetaParams,
) -> f64 {
    let Ok(beta) = mean_variance_to_beta_params(mean, var) else {
        return f64::NEG_INFINITY;
    };
    if !(var < 1.0) {
        return f64::NEG_INFINITY;
    }
    let lik: f64 = logits.iter().map(|&x| ln_beta_pdf_logit(x, beta)).sum();
    let t = ln_beta_pdf(mean, mean_prior) + ln_beta_pdf(var, var_prior) + lik;
    if t.is_nan() {
        f64::NEG_INFINITY
    } else {
        t
    }
}

/// Log target in the sampling coordinates `a = logit μ`,
/// `s = logit(σ² / (μ(1-μ)))`, Jacobian included.
fn transformed_log_target(
    a: f64,
    s: f64,
    logits: &[f64],
    mean_prior: BetaParams,
    var_prior: BetaParams,
) -> (f64, f64, f64) {
    let mean = logistic(a);
    let frac = logistic(s);
    let spread = mean * (1.0 - mean);
    let var = frac * spread;
    let jac = 2.0 * spread.ln() + (frac * (1.0 - frac)).ln();
    let t = presence_hyper_log_target(mean, var, logits, mean_prior, var_prior) + jac;
    (if t.is_finite() { t } else { f64::NEG_INFINITY }, mean, var)
}

/// One Metropolis-Hastings move from `(mean, var)` to the proposal
/// `(new_mean, new_var)` under a symmetric proposal. Returns whether it was
/// accepted; proposals outside the support are always rejected.
pub fn mh_accept<R: Rng + ?Sized>(current_log_target: f64, proposed_log_target: f64, rng: &mut R) -> bool {
    if proposed_log_target == f64::NEG_INFINITY || proposed_log_target.is_nan() {
        return false;
    }
    let log_ratio = proposed_log_target - current_log_target;
    log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
}

/// Two random-walk MH steps on the mean and then the relative variance of an
/// exchangeable presence prior. Returns the acceptance indicators.
pub fn mh_update_exchangeable<R: Rng + ?Sized>(
    params: &mut ExchangeableParams,
    mean_prior: BetaParams,
    var_prior: BetaParams,
    step_mean: f64,
    step_var: f64,
    rng: &mut R,
) -> Result<(bool, bool), SamplerError> {
    let spread = params.mean * (1.0 - params.mean);
    let mut a = logit(params.mean);
    let mut s = logit(params.var / spread);
    let (mut current, _, _) = transformed_log_target(a, s, &params.logits, mean_prior, var_prior);

    let a_new = a + step_mean * sample_normal(0.0, 1.0, rng)?;
    let (proposed, m, v) = transformed_log_target(a_new, s, &params.logits, mean_prior, var_prior);
    let accept_mean = mh_accept(current, proposed, rng);
    if accept_mean {
        a = a_new;
        current = proposed;
        params.mean = m;
        params.var = v;
    }

    let s_new = s + step_var * sample_normal(0.0, 1.0, rng)?;
    let (proposed, m, v) = transformed_log_target(a, s_new, &params.logits, mean_prior, var_prior);
    let accept_var = mh_accept(current, proposed, rng);
    if accept_var {
        s = s_new;
        params.mean = m;
        params.var = v;
    }
    let _ = s;
    Ok((accept_mean, accept_var))
}

/// Acceptance indicators of the four MH moves; `None` when the move does not
/// exist for the variant.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct MhAcceptance {
    pub pi_mean: Option<bool>,
    pub pi_var: Option<bool>,
    pub eta_mean: Option<bool>,
    pub eta_var: Option<bool>,
}

pub fn mh_update_presence_hyper<R: Rng + ?Sized>(
    state: &mut ModelState,
    hyper: &Hyperparameters,
    step_mean: f64,
    step_var: f64,
    rng: &mut R,
) -> Result<MhAcceptance, SamplerError> {
    let mut acc = MhAcceptance::default();
    if let SiteParams::Exchangeable(p) = &mut state.site_params {
        let (m, v) = mh_update_exchangeable(p, hyper.pi_mean_prior, hyper.pi_var_prior, step_mean, step_var, rng)?;
        acc.pi_mean = Some(m);
        acc.pi_var = Some(v);
    }
    if let PageParams::Exchangeable(p) = &mut state.page_params {
        let (m, v) = mh_update_exchangeable(
            p,
            hyper.eta_mean_prior(state.k),
            hyper.eta_var_prior(state.k),
            step_mean,
            step_var,
            rng,
        )?;
        acc.eta_mean = Some(m);
        acc.eta_var = Some(v);
    }
    Ok(acc)
}

/// Pólya-Gamma augmented logistic-regression update of every global topic's
/// coefficients: `ω_ik ~ PG(1, X_i'β_k)`, then
/// `β_k ~ N(Σ*(X'κ_k + Σ⁻¹β0), Σ*)` with `Σ* = (X'ΩX + Σ⁻¹)⁻¹` and
/// `κ_ik = b_ik - 1/2`. The local topic has no coefficients.
pub fn resample_beta<R: Rng + ?Sized>(
    state: &mut ModelState,
    corpus: &Corpus,
    truncation: usize,
    rng: &mut R,
) -> Result<(), SamplerError> {
    let t = state.n_topics;
    let m = state.n_sites;
    let k_global = state.k;
    let present = state.site_present.clone();
    let SiteParams::Structured(p) = &mut state.site_params else {
        return Ok(());
    };
    let cov = corpus.covariates().ok_or(SamplerError::MissingCovariates)?;
    let q = p.q;
    let x = DMatrix::from_row_slice(m, q, &cov.values);
    let mut omega = vec![0.0; m];
    let mut kappa = vec![0.0; m];
    for k in 0..k_global {
        let coef = DVector::from_column_slice(p.coef_row(k));
        let lin = &x * &coef;
        for i in 0..m {
            omega[i] = sample_polya_gamma(1.0, lin[i], truncation, rng)?;
            p.omega[i * k_global + k] = omega[i];
            kappa[i] = if present[i * t + k] { 0.5 } else { -0.5 };
        }
        let (precision, linear) = beta_posterior(&x, &omega, &kappa, &p.prior_mean, &p.prior_var);
        let (draw, _) = sample_mvn_canonical(&precision, &linear, rng)?;
        p.coef[k * q..(k + 1) * q].copy_from_slice(draw.as_slice());
    }
    Ok(())
}

/// Canonical parameters of `β_k | ω, b`: precision `X'ΩX + Σ⁻¹` and linear
/// term `X'κ + Σ⁻¹β0`, for diagonal `Σ = diag(prior_var)`.
pub fn beta_posterior(
    x: &DMatrix<f64>,
    omega: &[f64],
    kappa: &[f64],
    prior_mean: &[f64],
    prior_var: &[f64],
) -> (DMatrix<f64>, DVector<f64>) {
    let q = x.ncols();
    let mut precision = DMatrix::from_fn(q, q, |a, b| if a == b { 1.0 / prior_var[a] } else { 0.0 });
    let mut linear = DVector::from_fn(q, |a, _| prior_mean[a] / prior_var[a]);
    for (i, row) in x.row_iter().enumerate() {
        for a in 0..q {
            linear[a] += row[a] * kappa[i];
            for b in 0..q {
                precision[(a, b)] += omega[i] * row[a] * row[b];
            }
        }
    }
    (precision, linear)
}

/// Conjugate updates of the coefficient prior: for each covariate q,
/// `β0_q ~ N((μ0_q/σ0² + Σ_k β_kq/σ_q²)/P, 1/P)` with `P = 1/σ0² + K/σ_q²`,
/// then the precision `1/σ_q² ~ Gamma(d_σ + K/2, (1/e_σ + Σ_k (β_kq - β0_q)²/2)⁻¹)`.
pub fn resample_beta0_sigma<R: Rng + ?Sized>(
    state: &mut ModelState,
    hyper: &Hyperparameters,
    rng: &mut R,
) -> Result<(), SamplerError> {
    let k = state.k;
    let SiteParams::Structured(p) = &mut state.site_params else {
        return Ok(());
    };
    let q = p.q;
    let mu0 = hyper.beta0_mean(q);
    for j in 0..q {
        let column: Vec<f64> = (0..k).map(|kk| p.coef[kk * q + j]).collect();
        let (mean, var) = beta0_conditional(mu0[j], hyper.beta0_sd, &column, p.prior_var[j]);
        p.prior_mean[j] = sample_normal(mean, var.sqrt(), rng)?;
        let (shape, scale) = precision_conditional(hyper.sigma_shape, hyper.sigma_scale, &column, p.prior_mean[j]);
        p.prior_var[j] = 1.0 / sample_gamma(shape, scale, rng)?;
    }
    Ok(())
}

/// Mean and variance of `β0_q | {β_kq}, σ_q²`.
pub fn beta0_conditional(mu0: f64, sd0: f64, column: &[f64], var: f64) -> (f64, f64) {
    let prec0 = 1.0 / (sd0 * sd0);
    let prec = prec0 + column.len() as f64 / var;
    let mean = (mu0 * prec0 + column.iter().sum::<f64>() / var) / prec;
    (mean, 1.0 / prec)
}

/// Shape and scale of `1/σ_q² | {β_kq}, β0_q`.
pub fn precision_conditional(shape: f64, scale: f64, column: &[f64], beta0: f64) -> (f64, f64) {
    let ss: f64 = column.iter().map(|b| (b - beta0) * (b - beta0)).sum();
    (shape + column.len() as f64 / 2.0, 1.0 / (1.0 / scale + ss / 2.0))
}
