//! Curvature ground truth: finite-difference Hessian traces, the Hutchinson
//! estimator, and the MoPe-vs-trace comparison.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{mope_batch, Membership, MopeConfig};
use crate::diffcore::rng::{fill_rademacher, fill_standard_normal, stream, Domain};
use crate::diffcore::Parametric;
use crate::metrics::fmt_f64;
use crate::{Error, Result};

pub const DEFAULT_PARAM_CAP: usize = 10_000;
/// Second-difference step for unit-scale parameters.
pub const DEFAULT_SECOND_DIFF_STEP: f64 = 1e-3;

/// `H_ii ~ (l(theta + h e_i) - 2 l(theta) + l(theta - h e_i)) / h^2` for every i.
pub fn hessian_diagonal<M>(model: &M, x: &M::Example, h: f64, cap: usize) -> Result<Vec<f64>>
where
    M: Parametric + Sync,
    M::Example: Sync,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!(
            "second-difference step must be positive, got {h}"
        )));
    }
    let theta = model.params().values();
    if theta.len() > cap {
        return Err(Error::ParamCapExceeded {
            count: theta.len(),
            cap,
        });
    }
    let center = model.loss_at(theta, x)?;
    if !center.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    (0..theta.len())
        .into_par_iter()
        .map_init(
            || theta.to_vec(),
            |buf, i| {
                let orig = buf[i];
                buf[i] = orig + h;
                let up = model.loss_at(buf, x);
                buf[i] = orig - h;
                let down = model.loss_at(buf, x);
                buf[i] = orig;
                let (up, down) = (up?, down?);
                if !up.is_finite() || !down.is_finite() {
                    return Err(Error::NonFiniteLoss);
                }
                Ok((up - 2.0 * center + down) / (h * h))
            },
        )
        .collect()
}

/// Sum of the finite-difference Hessian diagonal.
pub fn exact_hessian_trace<M>(model: &M, x: &M::Example, h: f64) -> Result<f64>
where
    M: Parametric + Sync,
    M::Example: Sync,
{
    exact_hessian_trace_capped(model, x, h, DEFAULT_PARAM_CAP)
}

pub fn exact_hessian_trace_capped<M>(model: &M, x: &M::Example, h: f64, cap: usize) -> Result<f64>
where
    M: Parametric + Sync,
    M::Example: Sync,
{
    Ok(hessian_diagonal(model, x, h, cap)?.iter().sum())
}

/// Something that evaluates `v^T H v`.
pub trait CurvatureProbe: Sync {
    fn dim(&self) -> usize;
    fn quadratic_form(&self, v: &[f64]) -> Result<f64>;
}

/// Dense symmetric matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitMatrix {
    n: usize,
    data: Vec<f64>,
}

impl ExplicitMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::invalid(format!(
                "{n}x{n} matrix needs {} entries",
                n * n
            )));
        }
        Ok(Self { n, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { n, data }
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.data[i * self.n + i]).sum()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

impl CurvatureProbe for ExplicitMatrix {
    fn dim(&self) -> usize {
        self.n
    }

    fn quadratic_form(&self, v: &[f64]) -> Result<f64> {
        if v.len() != self.n {
            return Err(Error::invalid("probe has the wrong dimension"));
        }
        Ok((0..self.n)
            .map(|i| {
                v[i] * self.data[i * self.n..(i + 1) * self.n]
                    .iter()
                    .zip(v)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            })
            .sum())
    }
}

/// `v^T H v ~ v^T (g(theta + h v) - g(theta - h v)) / 2h` from exact gradients.
pub struct FdGradientProbe<'a, M: Parametric> {
    pub model: &'a M,
    pub example: &'a M::Example,
    pub step: f64,
}

impl<M> CurvatureProbe for FdGradientProbe<'_, M>
where
    M: Parametric + Sync,
    M::Example: Sync,
{
    fn dim(&self) -> usize {
        self.model.params().len()
    }

    fn quadratic_form(&self, v: &[f64]) -> Result<f64> {
        let theta = self.model.params().values();
        let plus: Vec<f64> = theta
            .iter()
            .zip(v)
            .map(|(t, d)| t + self.step * d)
            .collect();
        let minus: Vec<f64> = theta
            .iter()
            .zip(v)
            .map(|(t, d)| t - self.step * d)
            .collect();
        let (_, gp) = self.model.loss_and_grad_at(&plus, self.example)?;
        let (_, gm) = self.model.loss_and_grad_at(&minus, self.example)?;
        Ok(v.iter()
            .zip(gp.iter().zip(&gm))
            .map(|(d, (a, b))| d * (a - b))
            .sum::<f64>()
            / (2.0 * self.step))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeKind {
    Gaussian,
    Rademacher,
}

/// Per-probe values `v_i^T H v_i`, indexed by probe number.
pub fn hutchinson_samples<P>(
    probe: &P,
    n_probes: usize,
    seed: u64,
    kind: ProbeKind,
) -> Result<Vec<f64>>
where
    P: CurvatureProbe + ?Sized,
{
    if n_probes == 0 {
        return Err(Error::invalid("at least one probe is required"));
    }
    let dim = probe.dim();
    (0..n_probes)
        .into_par_iter()
        .map(|i| {
            let mut v = vec![0.0; dim];
            let mut rng = stream(seed, Domain::Probe, i as u64);
            match kind {
                ProbeKind::Gaussian => fill_standard_normal(&mut rng, &mut v),
                ProbeKind::Rademacher => fill_rademacher(&mut rng, &mut v),
            }
            probe.quadratic_form(&v)
        })
        .collect()
}

/// Mean of `v^T H v` over isotropic unit-variance probes; unbiased for `Tr(H)`.
pub fn hutchinson_trace<P>(probe: &P, n_probes: usize, seed: u64, kind: ProbeKind) -> Result<f64>
where
    P: CurvatureProbe + ?Sized,
{
    let samples = hutchinson_samples(probe, n_probes, seed, kind)?;
    Ok(samples.iter().sum::<f64>() / n_probes as f64)
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub example_id: u64,
    pub label: Membership,
    pub exact_trace: f64,
    /// `mope * 2 / sigma^2`
    pub scaled_mope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    pub sigma: f64,
    pub n_perturbations: u64,
    pub rows: Vec<TraceRow>,
    /// `None` when undefined (a side with zero variance).
    pub correlation: Option<f64>,
    pub mean_exact_trace: f64,
    pub mean_scaled_mope: f64,
    /// Mean of `|scaled - exact| / (|exact| + 1e-9)`.
    pub mean_relative_error: f64,
}

impl TraceReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("example_id,label,exact_trace,scaled_mope\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.example_id,
                r.label,
                fmt_f64(r.exact_trace),
                fmt_f64(r.scaled_mope)
            ));
        }
        out
    }

    pub fn summary(&self) -> String {
        let corr = self
            .correlation
            .map(fmt_f64)
            .unwrap_or_else(|| "undefined".to_string());
        format!(
            "sigma = {}\nn_perturbations = {}\nexamples = {}\ncorrelation = {corr}\nmean_exact_trace = {}\nmean_scaled_mope = {}\nmean_relative_error = {}\n",
            fmt_f64(self.sigma),
            self.n_perturbations,
            self.rows.len(),
            fmt_f64(self.mean_exact_trace),
            fmt_f64(self.mean_scaled_mope),
            fmt_f64(self.mean_relative_error),
        )
    }
}

/// Exact trace and `2/sigma^2`-scaled MoPe for every example.
pub fn mope_trace_experiment<M>(
    model: &M,
    examples: &[(u64, Membership, M::Example)],
    cfg: &MopeConfig,
    h: f64,
) -> Result<TraceReport>
where
    M: Parametric + Sync,
    M::Example: Sync + Clone,
{
    if examples.is_empty() {
        return Err(Error::invalid("no examples"));
    }
    let xs: Vec<M::Example> = examples.iter().map(|(_, _, x)| x.clone()).collect();
    let batch = mope_batch(model, &xs, cfg)?;
    let scale = 2.0 / (cfg.sigma * cfg.sigma);
    let mut rows = Vec::with_capacity(xs.len());
    for ((id, label, x), outcome) in examples.iter().zip(batch.outcomes) {
        rows.push(TraceRow {
            example_id: *id,
            label: *label,
            exact_trace: exact_hessian_trace(model, x, h)?,
            scaled_mope: outcome?.score * scale,
        });
    }
    let exact: Vec<f64> = rows.iter().map(|r| r.exact_trace).collect();
    let scaled: Vec<f64> = rows.iter().map(|r| r.scaled_mope).collect();
    let n = rows.len() as f64;
    Ok(TraceReport {
        sigma: cfg.sigma,
        n_perturbations: cfg.n_perturbations,
        correlation: pearson(&exact, &scaled),
        mean_exact_trace: exact.iter().sum::<f64>() / n,
        mean_scaled_mope: scaled.iter().sum::<f64>() / n,
        mean_relative_error: rows
            .iter()
            .map(|r| (r.scaled_mope - r.exact_trace).abs() / (r.exact_trace.abs() + 1e-9))
            .sum::<f64>()
            / n,
        rows,
    })
}
