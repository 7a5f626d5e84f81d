//! Spectral statistics on entanglement spectra: unfolding, level-spacing
//! and gap-ratio diagnostics against random-matrix references, the
//! Bhattacharyya distance between Schmidt spectra, and the self-similar
//! scaling fit with its likelihood analysis.

use crate::ent::EntanglementSpectrum;
use ndarray::{Array1, Array2};
use ndarray_linalg::LeastSquaresSvd;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("need at least {0} levels for a degree-{1} unfolding, got {2}")]
    TooFewLevels(usize, usize, usize),
    #[error("levels must be sorted ascending")]
    NotSorted,
    #[error("density argument {0} is negative")]
    NegativeArgument(f64),
    #[error("spectrum is not normalized: sums to {0}")]
    NotNormalized(f64),
    #[error("scaling grid for {0} is degenerate")]
    DegenerateGrid(&'static str),
    #[error("no overlap between rescaled reference and test spectra")]
    NoOverlap,
    #[error("linear algebra backend error: {0}")]
    Linalg(String),
}

impl From<ndarray_linalg::error::LinalgError> for StatsError {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        StatsError::Linalg(e.to_string())
    }
}

/// A single-sector spectrum mapped to unit mean level density.
#[derive(Debug, Clone)]
pub struct UnfoldedSpectrum {
    pub raw: Vec<f64>,
    pub unfolded: Vec<f64>,
    pub fit_degree: usize,
}

impl UnfoldedSpectrum {
    /// Consecutive spacings of the unfolded levels.
    pub fn spacings(&self) -> Vec<f64> {
        self.unfolded.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// Map a sorted spectrum to unit mean level density by fitting the
/// cumulative counting function with a polynomial of the given degree and
/// evaluating the fit at each level.
pub fn unfold(levels: &[f64], degree: usize) -> Result<UnfoldedSpectrum, StatsError> {
    let n = levels.len();
    if n < degree + 5 {
        return Err(StatsError::TooFewLevels(degree + 5, degree, n));
    }
    if levels.windows(2).any(|w| w[1] < w[0]) {
        return Err(StatsError::NotSorted);
    }
    let lo = levels[0];
    let hi = levels[n - 1];
    let span = (hi - lo).max(1e-300);
    // Chebyshev-style rescaling of the abscissa keeps the Vandermonde
    // system well conditioned.
    let scale = |x: f64| (2.0 * x - lo - hi) / span;
    let mut vander = Array2::<f64>::zeros((n, degree + 1));
    let mut count = Array1::<f64>::zeros(n);
    for (i, xi) in levels.iter().enumerate() {
        let t = scale(*xi);
        let mut p = 1.0;
        for d in 0..=degree {
            vander[[i, d]] = p;
            p *= t;
        }
        count[i] = i as f64 + 0.5;
    }
    let coeffs = vander.least_squares(&count)?.solution;
    let mut unfolded: Vec<f64> = levels
        .iter()
        .map(|xi| {
            let t = scale(*xi);
            let mut p = 1.0;
            let mut acc = 0.0;
            for d in 0..=degree {
                acc += coeffs[d] * p;
                p *= t;
            }
            acc
        })
        .collect();
    // The fitted polynomial can dip where the data is sparse; clamp to keep
    // the unfolded levels nondecreasing.
    for i in 1..n {
        if unfolded[i] < unfolded[i - 1] {
            unfolded[i] = unfolded[i - 1];
        }
    }
    Ok(UnfoldedSpectrum { raw: levels.to_vec(), unfolded, fit_degree: degree })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ensemble {
    Poisson,
    Goe,
    Gue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observable {
    /// Unfolded level spacing `s`.
    Spacing,
    /// Consecutive-gap ratio `r` in `[0, 1]`.
    Ratio,
}

/// Closed-form reference density of the given ensemble and observable.
pub fn rmt_reference(ensemble: Ensemble, observable: Observable, x: f64) -> Result<f64, StatsError> {
    if x < 0.0 {
        return Err(StatsError::NegativeArgument(x));
    }
    use std::f64::consts::PI;
    Ok(match (ensemble, observable) {
        (Ensemble::Poisson, Observable::Ratio) => 2.0 / ((1.0 + x) * (1.0 + x)),
        (Ensemble::Goe, Observable::Ratio) => {
            27.0 / 4.0 * (x + x * x) / (1.0 + x + x * x).powf(2.5)
        }
        (Ensemble::Gue, Observable::Ratio) => {
            81.0 / 2.0 * 3.0f64.sqrt() / PI * (x + x * x).powi(2) / (1.0 + x + x * x).powi(4)
        }
        (Ensemble::Poisson, Observable::Spacing) => (-x).exp(),
        (Ensemble::Goe, Observable::Spacing) => PI / 2.0 * x * (-PI / 4.0 * x * x).exp(),
        (Ensemble::Gue, Observable::Spacing) => {
            32.0 / (PI * PI) * x * x * (-4.0 / PI * x * x).exp()
        }
    })
}

/// Mean of the closed-form ratio density on `[0, 1]`, by quadrature.
pub fn rmt_mean_ratio(ensemble: Ensemble) -> f64 {
    let steps = 20_000;
    let h = 1.0 / steps as f64;
    let mut acc = 0.0;
    for i in 0..steps {
        let a = i as f64 * h;
        let b = a + h;
        let fa = a * rmt_reference(ensemble, Observable::Ratio, a).unwrap();
        let fb = b * rmt_reference(ensemble, Observable::Ratio, b).unwrap();
        acc += 0.5 * (fa + fb) * h;
    }
    acc
}

/// Pooled consecutive-gap ratios of a sector-resolved spectrum.
#[derive(Debug, Clone)]
pub struct RatioStats {
    pub ratios: Vec<f64>,
    pub mean: f64,
    /// `(bin center, density)` over `[0, 1]`.
    pub histogram: Vec<(f64, f64)>,
}

const RATIO_HIST_BINS: usize = 25;

/// Ratios `min(d_n, d_{n-1}) / max(d_n, d_{n-1})` of consecutive gaps of an
/// ascending level list. Non-finite ratios from exact degeneracies are
/// dropped.
pub fn gap_ratios(levels: &[f64]) -> Vec<f64> {
    let deltas: Vec<f64> = levels.windows(2).map(|w| w[1] - w[0]).collect();
    deltas
        .windows(2)
        .map(|d| d[0].min(d[1]) / d[0].max(d[1]))
        .filter(|r| r.is_finite())
        .collect()
}

/// Gap-ratio statistics computed within each symmetry sector and pooled.
/// Sectors with fewer than three levels carry no ratio and are skipped.
pub fn gap_ratio_stats(spectrum: &EntanglementSpectrum) -> RatioStats {
    let mut ratios = Vec::new();
    for sector in 0..spectrum.sector_labels.len() {
        let xis = spectrum.sector_xis(sector);
        if xis.len() < 3 {
            continue;
        }
        ratios.extend(gap_ratios(&xis));
    }
    ratio_stats_of(ratios)
}

fn ratio_stats_of(ratios: Vec<f64>) -> RatioStats {
    let mean = if ratios.is_empty() {
        f64::NAN
    } else {
        ratios.iter().sum::<f64>() / ratios.len() as f64
    };
    let width = 1.0 / RATIO_HIST_BINS as f64;
    let mut counts = vec![0usize; RATIO_HIST_BINS];
    for r in &ratios {
        let bin = ((r / width) as usize).min(RATIO_HIST_BINS - 1);
        counts[bin] += 1;
    }
    let norm = (ratios.len().max(1)) as f64 * width;
    let histogram = counts
        .iter()
        .enumerate()
        .map(|(i, c)| ((i as f64 + 0.5) * width, *c as f64 / norm))
        .collect();
    RatioStats { ratios, mean, histogram }
}

/// Unfolded level spacings, sector by sector, pooled. Sectors too small for
/// the polynomial fit are skipped.
pub fn unfolded_spacings(
    spectrum: &EntanglementSpectrum,
    degree: usize,
) -> Result<Vec<f64>, StatsError> {
    let mut out = Vec::new();
    for sector in 0..spectrum.sector_labels.len() {
        let xis = spectrum.sector_xis(sector);
        match unfold(&xis, degree) {
            Ok(u) => out.extend(u.spacings()),
            Err(StatsError::TooFewLevels(..)) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Kolmogorov-Smirnov statistic of sorted samples against a reference CDF.
pub fn ks_statistic<F: Fn(f64) -> f64>(sorted_samples: &[f64], cdf: F) -> f64 {
    let n = sorted_samples.len() as f64;
    let mut d = 0.0f64;
    for (i, x) in sorted_samples.iter().enumerate() {
        let c = cdf(*x);
        d = d.max((c - i as f64 / n).abs());
        d = d.max(((i as f64 + 1.0) / n - c).abs());
    }
    d
}

/// Bhattacharyya distance `-log sum sqrt(p q)` between two Schmidt
/// probability spectra. Both are sorted descending before pairing and the
/// shorter is padded with zeros; disjoint supports give `+inf`.
pub fn bhattacharyya(p: &[f64], q: &[f64]) -> Result<f64, StatsError> {
    for spec in [p, q] {
        let sum: f64 = spec.iter().sum();
        if (sum - 1.0).abs() > 1e-8 {
            return Err(StatsError::NotNormalized(sum));
        }
    }
    let mut ps = p.to_vec();
    let mut qs = q.to_vec();
    ps.sort_by(|a, b| b.partial_cmp(a).unwrap());
    qs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let len = ps.len().max(qs.len());
    ps.resize(len, 0.0);
    qs.resize(len, 0.0);
    let bc: f64 = ps.iter().zip(&qs).map(|(a, b)| (a * b).max(0.0).sqrt()).sum();
    if bc <= 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok((-bc.ln()).max(0.0))
    }
}

/// An inclusive uniform grid over one fit parameter.
#[derive(Debug, Clone, Copy)]
pub struct GridRange {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl GridRange {
    pub fn new(min: f64, max: f64, step: f64) -> Self {
        GridRange { min, max, step }
    }

    fn values(&self, name: &'static str) -> Result<Vec<f64>, StatsError> {
        if !(self.step > 0.0) || self.max < self.min {
            return Err(StatsError::DegenerateGrid(name));
        }
        let count = ((self.max - self.min) / self.step).round() as usize + 1;
        Ok((0..count).map(|i| self.min + i as f64 * self.step).collect())
    }
}

/// Parameters of the self-similarity fit `P(n, t) = tau^-alpha P(tau^beta n)`
/// with `tau = eps (t - t0)`.
#[derive(Debug, Clone)]
pub struct ScalingOptions {
    pub alpha: GridRange,
    /// Grid over `eps * t0`, the dimensionless onset time.
    pub beta: GridRange,
    pub eps_t0: GridRange,
    pub eps: f64,
    /// Schmidt index window `[min, max]`, 1-based inclusive.
    pub window: (usize, usize),
    /// Sample count of the log-spaced comparison grid.
    pub samples: usize,
}

impl Default for ScalingOptions {
    fn default() -> Self {
        ScalingOptions {
            alpha: GridRange::new(0.0, 1.6, 0.02),
            beta: GridRange::new(-0.4, 0.4, 0.02),
            eps_t0: GridRange::new(0.0, 4.0, 0.1),
            eps: 1.0,
            window: (130, 1300),
            samples: 64,
        }
    }
}

/// One marginal likelihood `W(x)` with its Gaussian summary.
#[derive(Debug, Clone)]
pub struct Marginal {
    pub values: Vec<f64>,
    pub density: Vec<f64>,
    pub mean: f64,
    pub sigma: f64,
}

/// Result of the grid scan: best-fit exponents, the chi-square landscape
/// and the integrated likelihood marginals.
#[derive(Debug, Clone)]
pub struct ScalingFit {
    pub alpha: f64,
    pub alpha_err: f64,
    pub beta: f64,
    pub beta_err: f64,
    /// `eps * t0` and its error.
    pub eps_t0: f64,
    pub eps_t0_err: f64,
    pub chi2_min: f64,
    /// Grid argmin `(alpha, beta, eps * t0)`.
    pub best: (f64, f64, f64),
    pub marginal_alpha: Marginal,
    pub marginal_beta: Marginal,
    pub marginal_eps_t0: Marginal,
    /// Set when the requested window exceeded some spectrum's rank.
    pub window_clipped: bool,
}

/// One spectrum prepared for rescaling: log index and log probability over
/// the analysis window.
struct LogCurve {
    log_n: Vec<f64>,
    log_p: Vec<f64>,
    tau_time: f64,
}

impl LogCurve {
    /// Linear interpolation of `log P` at shifted abscissa `x`, where the
    /// curve lives on `log_n + shift`.
    fn interpolate(&self, x: f64, shift: f64) -> f64 {
        let xs = &self.log_n;
        let t = x - shift;
        let hi = xs.partition_point(|v| *v < t).min(xs.len() - 1).max(1);
        let lo = hi - 1;
        let frac = (t - xs[lo]) / (xs[hi] - xs[lo]);
        self.log_p[lo] + frac * (self.log_p[hi] - self.log_p[lo])
    }
}

/// Fit the self-similar scaling form to a set of Schmidt spectra.
///
/// `spectra` holds `(t, P(n))` with probabilities sorted descending;
/// `t_ref` selects the reference curve and `t_tests` the comparison curves.
/// The deviation per grid point is the time-averaged, reference-normalized
/// squared difference of log-spectra over the common rescaled index range,
/// integrated with the logarithmic measure `d n / n`.
pub fn scaling_fit(
    spectra: &[(f64, Vec<f64>)],
    t_ref: f64,
    t_tests: &[f64],
    options: &ScalingOptions,
) -> Result<ScalingFit, StatsError> {
    let alphas = options.alpha.values("alpha")?;
    let betas = options.beta.values("beta")?;
    let t0s = options.eps_t0.values("eps_t0")?;
    let mut window_clipped = false;
    let mut curve_of = |t: f64| -> Result<LogCurve, StatsError> {
        let (_, p) = spectra
            .iter()
            .find(|(tt, _)| (tt - t).abs() < 1e-12)
            .ok_or(StatsError::NoOverlap)?;
        let (nmin, nmax) = options.window;
        let nmax_eff = nmax.min(p.len());
        if nmax_eff < nmax {
            window_clipped = true;
        }
        let mut log_n = Vec::new();
        let mut log_p = Vec::new();
        for n in nmin.max(1)..=nmax_eff {
            let prob = p[n - 1];
            if prob > 0.0 {
                log_n.push((n as f64).ln());
                log_p.push(prob.ln());
            }
        }
        if log_n.len() < 2 {
            return Err(StatsError::NoOverlap);
        }
        Ok(LogCurve { log_n, log_p, tau_time: t })
    };
    let reference = curve_of(t_ref)?;
    let tests: Vec<LogCurve> = t_tests.iter().map(|t| curve_of(*t)).collect::<Result<_, _>>()?;
    let samples = options.samples.max(8);
    let eps = options.eps;

    let chi2_at = |alpha: f64, beta: f64, eps_t0: f64| -> f64 {
        let tau_of = |t: f64| eps * t - eps_t0;
        let tau_ref = tau_of(reference.tau_time);
        if tau_ref <= 0.0 {
            return f64::INFINITY;
        }
        let ref_shift = beta * tau_ref.ln();
        let ref_offset = alpha * tau_ref.ln();
        let ref_lo = reference.log_n[0] + ref_shift;
        let ref_hi = reference.log_n[reference.log_n.len() - 1] + ref_shift;
        let mut total = 0.0;
        for test in &tests {
            let tau = tau_of(test.tau_time);
            if tau <= 0.0 {
                return f64::INFINITY;
            }
            let shift = beta * tau.ln();
            let offset = alpha * tau.ln();
            let lo = ref_lo.max(test.log_n[0] + shift);
            let hi = ref_hi.min(test.log_n[test.log_n.len() - 1] + shift);
            if hi <= lo {
                return f64::INFINITY;
            }
            let dx = (hi - lo) / (samples - 1) as f64;
            let mut num = 0.0;
            let mut den = 0.0;
            for j in 0..samples {
                let x = lo + j as f64 * dx;
                let fr = reference.interpolate(x, ref_shift) + ref_offset;
                let ft = test.interpolate(x, shift) + offset;
                num += (fr - ft) * (fr - ft);
                den += fr * fr;
            }
            total += num / den.max(1e-300);
        }
        total / tests.len() as f64
    };

    // Chi-square landscape, flattened over (alpha, beta, eps_t0).
    let grid: Vec<f64> = alphas
        .par_iter()
        .flat_map_iter(|a| {
            let mut row = Vec::with_capacity(betas.len() * t0s.len());
            for b in &betas {
                for t0 in &t0s {
                    row.push(chi2_at(*a, *b, *t0));
                }
            }
            row
        })
        .collect();
    let (best_idx, chi2_min) = grid
        .iter()
        .enumerate()
        .filter(|(_, c)| c.is_finite())
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .ok_or(StatsError::NoOverlap)?;
    let chi2_min = *chi2_min;
    let nb = betas.len();
    let nt = t0s.len();
    let best = (
        alphas[best_idx / (nb * nt)],
        betas[(best_idx / nt) % nb],
        t0s[best_idx % nt],
    );

    // Likelihood W = exp(-chi^2 / chi^2_min), integrated down to marginals.
    let floor = chi2_min.max(1e-30);
    let weight = |c: f64| if c.is_finite() { (-c / floor).exp() } else { 0.0 };
    let mut wa = vec![0.0; alphas.len()];
    let mut wb = vec![0.0; betas.len()];
    let mut wt = vec![0.0; t0s.len()];
    for (idx, c) in grid.iter().enumerate() {
        let w = weight(*c);
        wa[idx / (nb * nt)] += w;
        wb[(idx / nt) % nb] += w;
        wt[idx % nt] += w;
    }
    let marginal_alpha = summarize(alphas.clone(), wa, options.alpha.step);
    let marginal_beta = summarize(betas.clone(), wb, options.beta.step);
    let marginal_eps_t0 = summarize(t0s.clone(), wt, options.eps_t0.step);
    Ok(ScalingFit {
        alpha: marginal_alpha.mean,
        alpha_err: marginal_alpha.sigma,
        beta: marginal_beta.mean,
        beta_err: marginal_beta.sigma,
        eps_t0: marginal_eps_t0.mean,
        eps_t0_err: marginal_eps_t0.sigma,
        chi2_min,
        best,
        marginal_alpha,
        marginal_beta,
        marginal_eps_t0,
        window_clipped,
    })
}

/// Normalize an integrated likelihood to a density and take its Gaussian
/// moments.
fn summarize(values: Vec<f64>, weights: Vec<f64>, step: f64) -> Marginal {
    let total: f64 = weights.iter().sum();
    let density: Vec<f64> = if total > 0.0 {
        weights.iter().map(|w| w / (total * step)).collect()
    } else {
        weights.clone()
    };
    let norm = total.max(1e-300);
    let mean: f64 = values.iter().zip(&weights).map(|(x, w)| x * w).sum::<f64>() / norm;
    let var: f64 = values
        .iter()
        .zip(&weights)
        .map(|(x, w)| (x - mean) * (x - mean) * w)
        .sum::<f64>()
        / norm;
    Marginal { values, density, mean, sigma: var.max(0.0).sqrt() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ent::EntLevel;
    use approx::assert_abs_diff_eq;
    use ndarray_linalg::Eigh;
    use ndarray_linalg::UPLO;
    use num_complex::Complex64;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unfold_preserves_equal_spacing() {
        let levels: Vec<f64> = (0..60).map(|i| 0.3 + 0.25 * i as f64).collect();
        let u = unfold(&levels, 3).unwrap();
        let spacings = u.spacings();
        for s in &spacings {
            assert_abs_diff_eq!(s, &1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn unfold_flattens_exponentially_dense_levels() {
        // Density growing like e^xi over a few decades.
        let n = 800;
        let levels: Vec<f64> = (1..=n).map(|i| (i as f64 / 10.0).ln() * 1.7 + 4.0).collect();
        let u = unfold(&levels, 3).unwrap();
        let spacings = u.spacings();
        let bulk = &spacings[n / 10..9 * n / 10];
        let mean = bulk.iter().sum::<f64>() / bulk.len() as f64;
        assert!((mean - 1.0).abs() < 0.05, "bulk mean spacing {mean:.4}");
    }

    #[test]
    fn poisson_levels_give_exponential_spacings() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut levels: Vec<f64> = (0..2000).map(|_| rng.gen::<f64>() * 100.0).collect();
        levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let u = unfold(&levels, 3).unwrap();
        let mut s = u.spacings();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let ks = ks_statistic(&s, |x| 1.0 - (-x).exp());
        assert!(ks < 0.05, "KS statistic {ks:.4}");
    }

    #[test]
    fn reference_densities_at_zero_and_their_means() {
        assert_abs_diff_eq!(
            rmt_reference(Ensemble::Poisson, Observable::Ratio, 0.0).unwrap(),
            2.0
        );
        assert_eq!(rmt_reference(Ensemble::Gue, Observable::Ratio, 0.0).unwrap(), 0.0);
        assert!((rmt_mean_ratio(Ensemble::Poisson) - 0.38).abs() < 0.02);
        assert!((rmt_mean_ratio(Ensemble::Goe) - 0.52).abs() < 0.02);
        assert!((rmt_mean_ratio(Ensemble::Gue) - 0.60).abs() < 0.02);
        assert!(rmt_reference(Ensemble::Goe, Observable::Spacing, -0.1).is_err());
    }

    #[test]
    fn spacing_densities_are_normalized() {
        for ensemble in [Ensemble::Poisson, Ensemble::Goe, Ensemble::Gue] {
            let steps = 40_000;
            let h = 10.0 / steps as f64;
            let mut acc = 0.0;
            for i in 0..steps {
                let a = i as f64 * h;
                let fa = rmt_reference(ensemble, Observable::Spacing, a).unwrap();
                let fb = rmt_reference(ensemble, Observable::Spacing, a + h).unwrap();
                acc += 0.5 * (fa + fb) * h;
            }
            assert_abs_diff_eq!(acc, 1.0, epsilon = 1e-4);
        }
    }

    #[test]
    fn equal_gaps_give_unit_ratio() {
        let ratios = gap_ratios(&[0.0, 1.0, 2.0]);
        assert_eq!(ratios, vec![1.0]);
    }

    #[test]
    fn ratios_are_affine_invariant() {
        let levels = vec![0.1, 0.7, 1.1, 2.4, 2.9, 4.0];
        let mapped: Vec<f64> = levels.iter().map(|x| 3.2 * x + 7.0).collect();
        let a = gap_ratios(&levels);
        let b = gap_ratios(&mapped);
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    fn spectrum_of_sectors(sectors: Vec<Vec<f64>>) -> EntanglementSpectrum {
        let mut levels = Vec::new();
        for (s, xs) in sectors.iter().enumerate() {
            for x in xs {
                levels.push(EntLevel { xi: *x, lambda: (-x).exp(), sector: s });
            }
        }
        levels.sort_by(|a, b| a.xi.partial_cmp(&b.xi).unwrap());
        EntanglementSpectrum {
            levels,
            sector_labels: (0..sectors.len()).map(|s| vec![if s == 0 { 1 } else { -1 }]).collect(),
        }
    }

    #[test]
    fn small_sectors_are_skipped_in_ratio_stats() {
        let spec = spectrum_of_sectors(vec![vec![0.0, 1.0, 2.0, 4.0], vec![0.5, 1.5]]);
        let stats = gap_ratio_stats(&spec);
        // Only the four-level sector contributes: ratios (1, 1/2).
        assert_eq!(stats.ratios.len(), 2);
        assert_abs_diff_eq!(stats.mean, 0.75, epsilon = 1e-12);
    }

    /// Monte-Carlo ensembles reproduce the known asymptotic mean ratios
    /// (0.5307 for GOE, 0.5996 for GUE).
    #[test]
    fn random_matrix_mean_ratios_match_known_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dim = 160;
        let mut goe = Vec::new();
        let mut gue = Vec::new();
        for _ in 0..40 {
            let mut a = Array2::<f64>::zeros((dim, dim));
            let mut h = Array2::<Complex64>::zeros((dim, dim));
            for i in 0..dim {
                for j in 0..dim {
                    let g: f64 = rng.gen::<f64>() - 0.5;
                    a[[i, j]] = g;
                    let im: f64 = rng.gen::<f64>() - 0.5;
                    h[[i, j]] = Complex64::new(g, im);
                }
            }
            let sym = 0.5 * (&a + &a.t());
            let (vals, _) = sym.eigh(UPLO::Lower).unwrap();
            let herm = (&h + &h.t().mapv(|z| z.conj())).mapv(|z| 0.5 * z);
            let (hvals, _) = herm.eigh(UPLO::Lower).unwrap();
            // Keep the central half of each spectrum to stay in the bulk.
            goe.extend(gap_ratios(&vals.as_slice().unwrap()[dim / 4..3 * dim / 4]));
            gue.extend(gap_ratios(&hvals.as_slice().unwrap()[dim / 4..3 * dim / 4]));
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean(&goe) - 0.5307).abs() < 0.01, "GOE mean {}", mean(&goe));
        assert!((mean(&gue) - 0.5996).abs() < 0.01, "GUE mean {}", mean(&gue));
    }

    #[test]
    fn bhattacharyya_basics() {
        let p = vec![0.5, 0.3, 0.2];
        assert_abs_diff_eq!(bhattacharyya(&p, &p).unwrap(), 0.0, epsilon = 1e-12);
        let q = vec![0.2, 0.5, 0.3];
        // Sorting makes permutations equivalent.
        assert_abs_diff_eq!(bhattacharyya(&p, &q).unwrap(), 0.0, epsilon = 1e-12);
        let r = vec![0.6, 0.4, 0.0];
        let d1 = bhattacharyya(&p, &r).unwrap();
        let d2 = bhattacharyya(&r, &p).unwrap();
        assert!(d1 > 0.0);
        assert_abs_diff_eq!(d1, d2, epsilon = 1e-12);
        assert!(bhattacharyya(&vec![0.9, 0.2], &p).is_err());
        // Sorted pairing of two normalized spectra always overlaps at the
        // top slot, so zero overlap (the +inf sentinel) can only arise for
        // degenerate all-zero input, which normalization already rejects.
        assert!(bhattacharyya(&[0.0, 0.0], &p).is_err());
    }

    #[test]
    fn scaling_fit_recovers_synthetic_exponents() {
        // P(n, t) = tau^{-0.8} g(n) with tau = t - 1.8 and a curved g, so
        // the exponents are non-degenerate.
        let g = |n: f64| n.powf(-2.0) / (1.0 + n / 300.0);
        let times = [6.0, 8.0, 12.0, 16.0, 24.0];
        let spectra: Vec<(f64, Vec<f64>)> = times
            .iter()
            .map(|t| {
                let tau: f64 = t - 1.8;
                (*t, (1..=2000).map(|n| tau.powf(-0.8) * g(n as f64)).collect())
            })
            .collect();
        let options = ScalingOptions {
            alpha: GridRange::new(0.5, 1.1, 0.05),
            beta: GridRange::new(-0.2, 0.2, 0.05),
            eps_t0: GridRange::new(1.0, 3.0, 0.2),
            eps: 1.0,
            window: (32, 1300),
            samples: 48,
        };
        let fit = scaling_fit(&spectra, 6.0, &times[1..], &options).unwrap();
        assert!(fit.chi2_min < 1e-8, "chi2_min = {:.3e}", fit.chi2_min);
        assert_abs_diff_eq!(fit.best.0, 0.8, epsilon = 0.051);
        assert_abs_diff_eq!(fit.best.1, 0.0, epsilon = 0.051);
        assert_abs_diff_eq!(fit.best.2, 1.8, epsilon = 0.21);
        assert!(!fit.window_clipped);
    }

    #[test]
    fn scaling_fit_flags_clipped_window() {
        let g = |n: f64| n.powf(-2.0) / (1.0 + n / 50.0);
        let times = [6.0, 10.0];
        let spectra: Vec<(f64, Vec<f64>)> = times
            .iter()
            .map(|t| {
                let tau: f64 = t - 1.0;
                (*t, (1..=200).map(|n| tau.powf(-0.5) * g(n as f64)).collect())
            })
            .collect();
        let options = ScalingOptions {
            alpha: GridRange::new(0.3, 0.7, 0.1),
            beta: GridRange::new(-0.1, 0.1, 0.1),
            eps_t0: GridRange::new(0.5, 1.5, 0.25),
            eps: 1.0,
            window: (10, 1300),
            samples: 32,
        };
        let fit = scaling_fit(&spectra, 6.0, &times[1..], &options).unwrap();
        assert!(fit.window_clipped);
        assert!(fit.chi2_min < 1e-8);
    }

    #[test]
    fn degenerate_grid_is_rejected() {
        let spectra = vec![(1.0, vec![0.5, 0.5])];
        let options = ScalingOptions {
            alpha: GridRange::new(0.5, 0.4, 0.1),
            ..Default::default()
        };
        assert!(matches!(
            scaling_fit(&spectra, 1.0, &[1.0], &options),
            Err(StatsError::DegenerateGrid("alpha"))
        ));
    }
}
