//! Sum-rate WMMSE with per-AP power constraints.
//!
//! Each iteration refreshes the MMSE receivers `r_u` and weights `w_u`, then
//! decreases the weighted-MSE cost over the beams. The beam step runs block
//! coordinate descent over APs: with the other APs fixed, AP `m` solves
//! `f_mu = (A_mm + mu_m I)^-1 c_mu` exactly, `mu_m >= 0` found by bisection so
//! that `sum_u ||f_mu||^2 <= P_m` with complementary slackness. Every block
//! step starts from the previous beams and never increases the cost, so the
//! sum rate is non-decreasing across iterations.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::baselines::cb_comm;
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::system::{BeamformingSolution, ChannelSample};

type CMat = DMatrix<Complex64>;

/// Eigenvalues below this fraction of the largest are treated as exact zeros.
const RANK_TOL: f64 = 1e-12;
/// Block-coordinate sweeps per beam step.
const MAX_SWEEPS: usize = 200;
const SWEEP_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WmmseOptions {
    pub max_iters: usize,
    /// Stop when the relative sum-rate change falls below this.
    pub rel_tol: f64,
    /// Relative width at which a multiplier bisection stops.
    pub bisection_tol: f64,
    pub bisection_max: usize,
}

impl Default for WmmseOptions {
    fn default() -> Self {
        WmmseOptions {
            max_iters: 200,
            rel_tol: 1e-6,
            bisection_tol: 1e-9,
            bisection_max: 100,
        }
    }
}

impl WmmseOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::config("max_iters", "must be at least 1"));
        }
        if self.rel_tol.is_nan() || self.rel_tol <= 0.0 {
            return Err(Error::config("rel_tol", "must be positive"));
        }
        if self.bisection_tol.is_nan() || self.bisection_tol <= 0.0 {
            return Err(Error::config("bisection_tol", "must be positive"));
        }
        if self.bisection_max == 0 {
            return Err(Error::config("bisection_max", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WmmseTrace {
    /// Sum rate of the initial point followed by one entry per iteration.
    pub objective_per_iter: Vec<f64>,
    pub converged: bool,
    pub iters_used: usize,
    /// Set when a rank-deficient AP block with a slack power cap was solved
    /// in the least-norm sense.
    pub regularized: bool,
}

/// Channels as one `N_t x U` matrix per AP.
struct Channels {
    per_ap: Vec<CMat>,
}

impl Channels {
    fn new(config: &SystemConfig, sample: &ChannelSample) -> Self {
        let n = config.tx_antennas;
        let per_ap = (0..config.ap_count)
            .map(|m| CMat::from_fn(n, config.ue_count, |k, u| sample.h(m, u)[k]))
            .collect();
        Channels { per_ap }
    }

    /// `g[u, s] = sum_m h_mu^H f_ms`.
    fn gains(&self, beams: &[CMat]) -> CMat {
        let u = beams[0].ncols();
        let mut g = CMat::zeros(u, u);
        for (h, f) in self.per_ap.iter().zip(beams) {
            g += h.adjoint() * f;
        }
        g
    }
}

fn frob2(x: &CMat) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum()
}

fn sum_rate(gains: &CMat, noise: f64) -> f64 {
    (0..gains.nrows())
        .map(|u| {
            let signal = gains[(u, u)].norm_sqr();
            let total: f64 = gains.row(u).iter().map(|z| z.norm_sqr()).sum();
            (1.0 + signal / (total - signal + noise)).log2()
        })
        .sum()
}

/// Exact minimiser of `sum_u f_u^H A f_u - 2 Re(c_u^H f_u)` subject to
/// `sum_u ||f_u||^2 <= cap`, for `A = V diag(lambda) V^H`.
struct BlockSolver<'a> {
    eigvecs: &'a CMat,
    eigvals: &'a DVector<f64>,
    cap: f64,
    options: &'a WmmseOptions,
}

impl BlockSolver<'_> {
    fn power(&self, z: &CMat, mu: f64, keep: &[bool]) -> f64 {
        let mut p = 0.0;
        for (i, lam) in self.eigvals.iter().enumerate() {
            if keep[i] {
                let row: f64 = z.row(i).iter().map(|c| c.norm_sqr()).sum();
                p += row / (lam + mu).powi(2);
            }
        }
        p
    }

    /// Returns the new block and whether a least-norm solve was needed.
    fn solve(&self, rhs: &CMat) -> (CMat, bool) {
        let z = self.eigvecs.adjoint() * rhs;
        let lam_max = self.eigvals.iter().cloned().fold(0.0, f64::max);
        let nonzero: Vec<bool> = self
            .eigvals
            .iter()
            .map(|l| *l > RANK_TOL * lam_max)
            .collect();
        let all = vec![true; nonzero.len()];
        let total = frob2(&z);
        let mut least_norm = false;

        let mu = if self.power(&z, 0.0, &nonzero) <= self.cap {
            least_norm = nonzero.iter().any(|k| !k);
            0.0
        } else {
            // power(mu) <= ||z||^2 / mu^2, so this upper end is feasible
            let mut hi = (total / self.cap).sqrt();
            let mut lo = 0.0;
            let (mut p_lo, mut p_hi) = (f64::INFINITY, self.power(&z, hi, &all));
            for _ in 0..self.options.bisection_max {
                if hi - lo <= self.options.bisection_tol * hi {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                let p = self.power(&z, mid, &all);
                if p > self.cap {
                    lo = mid;
                    p_lo = p;
                } else {
                    hi = mid;
                    p_hi = p;
                }
            }
            // the bracket is feasible at `hi`; one secant step lands closer to the cap
            let mut mu = hi;
            if p_lo.is_finite() && p_lo > p_hi {
                let guess = lo + (p_lo - self.cap) / (p_lo - p_hi) * (hi - lo);
                if guess > lo && guess < hi && self.power(&z, guess, &all) <= self.cap {
                    mu = guess;
                }
            }
            mu
        };

        let keep = if mu == 0.0 { &nonzero } else { &all };
        let mut scaled = z;
        for (i, lam) in self.eigvals.iter().enumerate() {
            let k = if keep[i] { 1.0 / (lam + mu) } else { 0.0 };
            for c in scaled.row_mut(i).iter_mut() {
                *c *= k;
            }
        }
        (self.eigvecs * scaled, least_norm)
    }
}

/// Sum-rate WMMSE initialised from conjugate beamforming. Sensing beams are
/// zero and the sensing weight is ignored.
pub fn wmmse(
    config: &SystemConfig,
    sample: &ChannelSample,
    options: &WmmseOptions,
) -> Result<(BeamformingSolution, WmmseTrace)> {
    options.validate()?;
    let init = cb_comm(config, sample)?;
    let ch = Channels::new(config, sample);
    let (m_count, u_count, n) = (config.ap_count, config.ue_count, config.tx_antennas);
    let noise = config.ue_noise_var;
    let cap = config.ap_power;

    let mut beams: Vec<CMat> = (0..m_count)
        .map(|m| CMat::from_fn(n, u_count, |k, u| init.beam(m, u)[k]))
        .collect();

    let mut trace = WmmseTrace {
        objective_per_iter: vec![sum_rate(&ch.gains(&beams), noise)],
        converged: false,
        iters_used: 0,
        regularized: false,
    };
    let mut best = (trace.objective_per_iter[0], beams.clone());

    for _ in 0..options.max_iters {
        let g = ch.gains(&beams);
        // receivers r_u, MSE weights w_u, then d_u = w_u |r_u|^2 and c_u = w_u r_u
        let mut d = vec![0.0; u_count];
        let mut coef = vec![Complex64::default(); u_count];
        for u in 0..u_count {
            let total: f64 = g.row(u).iter().map(|z| z.norm_sqr()).sum::<f64>() + noise;
            let r = g[(u, u)] / total;
            let w = 1.0 / (1.0 - (r.conj() * g[(u, u)]).re);
            d[u] = w * r.norm_sqr();
            coef[u] = r * w;
        }
        let dmat = DMatrix::from_fn(u_count, u_count, |i, j| {
            if i == j {
                Complex64::new(d[i], 0.0)
            } else {
                Complex64::default()
            }
        });
        let cmat = DMatrix::from_fn(u_count, u_count, |i, j| {
            if i == j {
                coef[i]
            } else {
                Complex64::default()
            }
        });

        let eigs: Vec<_> = ch
            .per_ap
            .iter()
            .map(|h| (h * &dmat * h.adjoint()).symmetric_eigen())
            .collect();

        // t[u, s] = h_u^H f_s, kept in sync as blocks change
        let mut t = ch.gains(&beams);
        let cost = |t: &CMat| -> f64 {
            // sum_s f_s^H A f_s - 2 Re(c_s h_s^H f_s), with A = H D H^H
            let mut c = 0.0;
            for s in 0..u_count {
                for u in 0..u_count {
                    c += d[u] * t[(u, s)].norm_sqr();
                }
                c -= 2.0 * (coef[s].conj() * t[(s, s)]).re;
            }
            c
        };
        let mut prev_cost = cost(&t);
        for _ in 0..MAX_SWEEPS {
            for m in 0..m_count {
                let h = &ch.per_ap[m];
                let rest = &t - h.adjoint() * &beams[m];
                let rhs = h * &cmat - h * &dmat * &rest;
                let solver = BlockSolver {
                    eigvecs: &eigs[m].eigenvectors,
                    eigvals: &eigs[m].eigenvalues,
                    cap,
                    options,
                };
                let (block, least_norm) = solver.solve(&rhs);
                trace.regularized |= least_norm;
                t = rest + h.adjoint() * &block;
                beams[m] = block;
            }
            let c = cost(&t);
            let done = prev_cost - c <= SWEEP_TOL * prev_cost.abs().max(1.0);
            prev_cost = c;
            if done {
                break;
            }
        }
        for block in beams.iter_mut() {
            let p = frob2(block);
            if p > cap {
                *block *= Complex64::new((cap / p).sqrt(), 0.0);
            }
        }

        let obj = sum_rate(&ch.gains(&beams), noise);
        let prev = *trace.objective_per_iter.last().unwrap();
        trace.objective_per_iter.push(obj);
        trace.iters_used += 1;
        if obj > best.0 {
            best = (obj, beams.clone());
        }
        if (obj - prev).abs() <= options.rel_tol * prev.abs().max(f64::MIN_POSITIVE) {
            trace.converged = true;
            break;
        }
    }

    let mut sol = BeamformingSolution::zeros(config);
    for (m, block) in best.1.iter().enumerate() {
        for u in 0..u_count {
            for (k, dst) in sol.beam_mut(m, u).iter_mut().enumerate() {
                *dst = block[(k, u)];
            }
        }
    }
    Ok((sol, trace))
}
