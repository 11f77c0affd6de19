//! Filtered-x normalized LMS engine.
//!
//! One sample is processed in two halves so a caller-owned plant can sit in
//! between: [`FxNlms::output`] consumes `x(n)` and returns `y(n) = wᵀx(n)`,
//! then [`FxNlms::adapt`] consumes the measured `e(n)` and applies
//! `w ← w + μ(n)·e(n)·x'(n)` with `μ(n) = μ₀ / (ε + ‖x'(n)‖²)`.
//! [`FxNlms::step`] runs both halves against an internal secondary path.

use crate::error::{AncError, Result};
use crate::paths::PathSet;
use crate::signal::{dot, DelayLine, FirFilter};

pub const DEFAULT_MU0: f64 = 0.002;
pub const DEFAULT_EPS: f64 = 1e-6;
/// `‖w‖∞` beyond which the run is declared divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone)]
pub struct FxNlms {
    w: Vec<f64>,
    mu0: f64,
    eps: f64,
    secondary_estimate: FirFilter,
    x_line: DelayLine,
    xf_line: DelayLine,
    shat_line: DelayLine,
    // self-contained mode only: loudspeaker history through S
    y_line: Option<DelayLine>,
    samples_seen: usize,
    reinit_count: usize,
}

impl FxNlms {
    /// Engine with control filter `w0` and filtered reference built from Ŝ.
    pub fn new(w0: FirFilter, mu0: f64, eps: f64, secondary_estimate: &FirFilter) -> Result<Self> {
        if !(mu0 > 0.0 && mu0.is_finite()) {
            return Err(AncError::config(format!("mu0 must be positive, got {mu0}")));
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(AncError::config(format!("eps must be positive, got {eps}")));
        }
        let len = w0.len();
        Ok(Self {
            w: w0.into_taps(),
            mu0,
            eps,
            secondary_estimate: secondary_estimate.clone(),
            x_line: DelayLine::new(len),
            xf_line: DelayLine::new(len),
            shat_line: DelayLine::new(secondary_estimate.len()),
            y_line: None,
            samples_seen: 0,
            reinit_count: 0,
        })
    }

    /// Like [`FxNlms::new`] but rejects a `w0` whose length is not `filter_len`.
    pub fn with_len(
        w0: FirFilter,
        filter_len: usize,
        mu0: f64,
        eps: f64,
        secondary_estimate: &FirFilter,
    ) -> Result<Self> {
        if w0.len() != filter_len {
            return Err(AncError::config(format!(
                "initial filter has {} taps, engine is configured for {filter_len}",
                w0.len()
            )));
        }
        Self::new(w0, mu0, eps, secondary_estimate)
    }

    pub fn filter_len(&self) -> usize {
        self.w.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn filter(&self) -> FirFilter {
        FirFilter::new(self.w.clone()).expect("engine taps stay finite")
    }

    pub fn mu0(&self) -> f64 {
        self.mu0
    }

    pub fn reinit_count(&self) -> usize {
        self.reinit_count
    }

    pub fn samples_seen(&self) -> usize {
        self.samples_seen
    }

    /// Filtered-reference history x'(n), newest first.
    pub fn filtered_reference(&self) -> &[f64] {
        self.xf_line.contents()
    }

    /// Pushes `x(n)`, refreshes the filtered reference and returns `y(n)`.
    pub fn output(&mut self, x_n: f64) -> f64 {
        self.x_line.push(x_n);
        self.shat_line.push(x_n);
        let xf = dot(self.secondary_estimate.taps(), self.shat_line.contents());
        self.xf_line.push(xf);
        self.samples_seen += 1;
        dot(&self.w, self.x_line.contents())
    }

    /// Normalized gradient step driven by the measured error `e(n)`.
    pub fn adapt(&mut self, e_n: f64) -> Result<()> {
        let xf = self.xf_line.contents();
        let mu = self.mu0 / (self.eps + dot(xf, xf));
        let g = mu * e_n;
        // per-lane running max of |w| and sum of w; a NaN tap poisons the sum
        let mut peak = [0.0f64; 4];
        let mut total = [0.0f64; 4];
        let mut wc = self.w.chunks_exact_mut(4);
        let mut xc = xf.chunks_exact(4);
        for (w, x) in (&mut wc).zip(&mut xc) {
            for k in 0..4 {
                w[k] += g * x[k];
                let a = w[k].abs();
                peak[k] = if a > peak[k] { a } else { peak[k] };
                total[k] += w[k];
            }
        }
        for (w, x) in wc.into_remainder().iter_mut().zip(xc.remainder()) {
            *w += g * x;
            let a = w.abs();
            peak[0] = if a > peak[0] { a } else { peak[0] };
            total[0] += *w;
        }
        let peak = peak[0].max(peak[1]).max(peak[2]).max(peak[3]);
        let total = total.iter().sum::<f64>();
        if !(peak <= DIVERGENCE_LIMIT) || total.is_nan() {
            return Err(AncError::Divergence {
                sample: self.samples_seen.saturating_sub(1),
                detail: format!("max |w| = {peak:e} (limit {DIVERGENCE_LIMIT:e}), e(n) = {e_n:e}"),
            });
        }
        Ok(())
    }

    /// Self-contained step: `e(n) = d(n) - (S * y)(n)` with the secondary
    /// path from `paths`, then adapt. Returns `(e(n), y(n))`.
    pub fn step(&mut self, x_n: f64, d_n: f64, paths: &PathSet) -> Result<(f64, f64)> {
        let y = self.output(x_n);
        let s = paths.secondary.taps();
        let line = self.y_line.get_or_insert_with(|| DelayLine::new(s.len()));
        if line.capacity() != s.len() {
            return Err(AncError::config("secondary path length changed between steps"));
        }
        line.push(y);
        let e = d_n - dot(s, line.contents());
        self.adapt(e)?;
        Ok((e, y))
    }

    /// Swaps in a new control filter. Signal history is kept.
    pub fn reinitialize(&mut self, w_new: &FirFilter) -> Result<()> {
        if w_new.len() != self.w.len() {
            return Err(AncError::config(format!(
                "replacement filter has {} taps, engine uses {}",
                w_new.len(),
                self.w.len()
            )));
        }
        self.w.copy_from_slice(w_new.taps());
        self.reinit_count += 1;
        Ok(())
    }
}
