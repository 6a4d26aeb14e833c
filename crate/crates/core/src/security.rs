//! Security bounds on Eve's inference, derived from measured Alice–Bob
//! statistics alone, and numerical checks of the inequalities behind them.

use std::collections::BTreeMap;
use std::f64::consts::LN_2;

use nalgebra::DVector;
use statrs::function::gamma::{gamma_lr, ln_gamma};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::epr::{EprStatistics, Setting};
use crate::error::{ensure_finite, Error, Result};
use crate::eve::{eve_conditional_quality, EveMeasurement, ModeMap};
use crate::gaussian::{GaussianState, Quadrature, QuadratureSampler};
use crate::normal::{bonferroni_sigmas, two_sided_tail, upper_tail_inverse};
use crate::rng::{stream, Domain};
use crate::stats::{bootstrap, mean_var, std_dev};

/// Per-bin variances at or below this count as exact correlation.
pub const PERFECT_TOL: f64 = 1e-9;

/// Lower bound on the spread of Eve's conditional distribution.
///
/// Perfect Alice–Bob correlation leaves Eve with no information at all;
/// that case is an explicit marker instead of `f64::INFINITY` so that
/// reports never carry infinities or NaNs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EveBound {
    Finite(f64),
    Unbounded,
}

impl EveBound {
    pub fn value(self) -> Option<f64> {
        match self {
            EveBound::Finite(v) => Some(v),
            EveBound::Unbounded => None,
        }
    }

    pub fn is_unbounded(self) -> bool {
        matches!(self, EveBound::Unbounded)
    }

    /// Whether an actual Eve spread `std` respects the bound.
    pub fn admits(self, std: f64, tolerance: f64) -> bool {
        match self {
            EveBound::Finite(b) => std >= b - tolerance,
            EveBound::Unbounded => false,
        }
    }
}

impl Serialize for EveBound {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            EveBound::Finite(v) => s.serialize_f64(*v),
            EveBound::Unbounded => s.serialize_str("unbounded"),
        }
    }
}

impl<'de> Deserialize<'de> for EveBound {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Finite(f64),
            Marker(String),
        }
        match Repr::deserialize(d)? {
            Repr::Finite(v) => Ok(EveBound::Finite(v)),
            Repr::Marker(m) if m == "unbounded" => Ok(EveBound::Unbounded),
            Repr::Marker(m) => Err(serde::de::Error::custom(format!("unknown bound marker {m:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerfectCorrelation {
    pub perfect: bool,
    /// Largest per-bin conditional variance over both settings.
    pub max_bin_variance: f64,
}

/// Exact correlation in every populated bin of both settings.
pub fn perfect_correlation_verdict(stats: &EprStatistics) -> PerfectCorrelation {
    let bins = stats.per_bin_x.iter().chain(&stats.per_bin_p);
    let max_bin_variance = bins.clone().map(|b| b.variance).fold(0.0, f64::max);
    let populated = !stats.per_bin_x.is_empty() && !stats.per_bin_p.is_empty();
    PerfectCorrelation {
        perfect: populated && max_bin_variance <= PERFECT_TOL,
        max_bin_variance,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NarrownessBound {
    pub delta: f64,
    /// Minimum standard deviation of Eve's conditional for every outcome.
    pub eve_min_std: f64,
    /// False for `δ ≥ 1`, where the bound no longer exceeds vacuum noise.
    pub demonstrative: bool,
}

/// Per-outcome bound `1/δ` on Eve when every Alice–Bob conditional
/// vanishes outside a half-width `δ`.
pub fn narrowness_bound(delta: f64) -> Result<NarrownessBound> {
    ensure_finite(delta, "delta")?;
    if delta <= 0.0 {
        return Err(Error::OutOfRange {
            name: "delta",
            value: delta,
            range: "(0, ∞)",
        });
    }
    Ok(NarrownessBound {
        delta,
        eve_min_std: 1.0 / delta,
        demonstrative: delta < 1.0,
    })
}

/// Bound `Δ_inf^E p ≥ 1/Δ_inf x` (and the same with x, p swapped). A zero
/// input is the perfect-correlation limit.
pub fn average_inference_bound(delta_inf: f64) -> Result<EveBound> {
    ensure_finite(delta_inf, "inference deviation")?;
    if delta_inf < 0.0 {
        return Err(Error::OutOfRange {
            name: "inference deviation",
            value: delta_inf,
            range: "[0, ∞)",
        });
    }
    Ok(if delta_inf == 0.0 {
        EveBound::Unbounded
    } else {
        EveBound::Finite(1.0 / delta_inf)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRates {
    pub bob_rate: f64,
    pub eve_rate: f64,
}

/// Symbol error rates on a grid of spacing `6Aσ` (decision threshold
/// `3Aσ`) for Gaussian key errors: Bob's with std `σ`, Eve's with
/// `eve_std`.
pub fn gaussian_error_rates(sigma: f64, eve_std: f64) -> Result<ErrorRates> {
    ensure_finite(sigma, "sigma")?;
    ensure_finite(eve_std, "eve std")?;
    if sigma <= 0.0 || eve_std <= 0.0 {
        return Err(Error::OutOfRange {
            name: if sigma <= 0.0 { "sigma" } else { "eve std" },
            value: sigma.min(eve_std),
            range: "(0, ∞)",
        });
    }
    Ok(ErrorRates {
        bob_rate: two_sided_tail(3.0),
        eve_rate: two_sided_tail(3.0 * sigma / eve_std),
    })
}

fn eve_rate_for(sigma: f64, bound: EveBound) -> Result<f64> {
    match bound {
        EveBound::Finite(b) => Ok(gaussian_error_rates(sigma, b)?.eve_rate),
        // The limit of 2Q(3σ/s) as s grows.
        EveBound::Unbounded => Ok(1.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `σ < 1/3`: conditionals narrow enough for the per-outcome bound.
    Narrow,
    /// `1/3 ≤ σ < 1/√3`: the average bound `1/σ` still exceeds `3σ`.
    Weak,
    Indeterminate,
}

pub fn sigma_regime_classifier(sigma: f64) -> Regime {
    if sigma < 1.0 / 3.0 {
        Regime::Narrow
    } else if sigma < 1.0 / 3f64.sqrt() {
        Regime::Weak
    } else {
        Regime::Indeterminate
    }
}

/// Which assumption a bound or verdict rests on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypothesis {
    PerfectCorrelation,
    /// Every Alice–Bob conditional vanishes outside `±δ`; constrains each
    /// of Eve's outcomes.
    Narrowness,
    /// Only the average of Eve's conditional variances is constrained; Eve
    /// may still do well on a fraction of her outcomes.
    AverageInference,
}

impl Hypothesis {
    pub fn statement(self) -> &'static str {
        match self {
            Hypothesis::PerfectCorrelation => {
                "all per-bin conditional variances vanish; Eve's inference variance is unbounded"
            }
            Hypothesis::Narrowness => {
                "every Alice-Bob conditional lies within ±delta; the bound holds for each of Eve's outcomes"
            }
            Hypothesis::AverageInference => {
                "average bound only; Eve may have narrow conditionals on a fraction of her outcomes"
            }
        }
    }
}

/// Rounds a positive value down to two significant figures.
pub fn floor_two_significant(x: f64) -> f64 {
    if !(x.is_finite() && x > 0.0) {
        return x;
    }
    // Multiplying by 0.1 is inexact, so negative exponents divide instead.
    let e = x.log10().floor() as i32 - 1;
    if e < 0 {
        let k = 10f64.powi(-e);
        (x * k * (1.0 + 1e-12)).floor() / k
    } else {
        let k = 10f64.powi(e);
        (x / k * (1.0 + 1e-12)).floor() * k
    }
}

/// Eve bounds and predicted error rates for a given agreed `σ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundsSummary {
    pub sigma: f64,
    pub regime: Regime,
    pub hypothesis: Hypothesis,
    pub delta: Option<f64>,
    pub eve_min_std: EveBound,
    /// The bound rounded down to two significant figures; the error rate
    /// below is computed from it and is therefore a conservative floor.
    pub eve_min_std_conservative: EveBound,
    pub demonstrative: bool,
    pub bob_error_rate: f64,
    pub eve_error_rate: f64,
    /// Rate from the unrounded bound.
    pub eve_error_rate_exact: f64,
    pub eve_to_bob_ratio: f64,
}

impl BoundsSummary {
    fn build(sigma: f64, hypothesis: Hypothesis, delta: Option<f64>, bound: EveBound) -> Result<Self> {
        let conservative = match bound {
            EveBound::Finite(b) => EveBound::Finite(floor_two_significant(b)),
            EveBound::Unbounded => EveBound::Unbounded,
        };
        let bob_error_rate = two_sided_tail(3.0);
        let eve_error_rate = eve_rate_for(sigma, conservative)?;
        Ok(Self {
            sigma,
            regime: sigma_regime_classifier(sigma),
            hypothesis,
            delta,
            eve_min_std: bound,
            eve_min_std_conservative: conservative,
            demonstrative: bound.value().is_none_or(|b| b > 1.0),
            bob_error_rate,
            eve_error_rate,
            eve_error_rate_exact: eve_rate_for(sigma, bound)?,
            eve_to_bob_ratio: eve_error_rate / bob_error_rate,
        })
    }

    /// Uses the per-outcome bound with `δ = 3σ` in the narrow regime and
    /// the average bound `1/σ` otherwise.
    pub fn for_sigma(sigma: f64) -> Result<Self> {
        ensure_finite(sigma, "sigma")?;
        if sigma <= 0.0 {
            return Err(Error::OutOfRange {
                name: "sigma",
                value: sigma,
                range: "(0, ∞)",
            });
        }
        match sigma_regime_classifier(sigma) {
            Regime::Narrow => {
                let nb = narrowness_bound(3.0 * sigma)?;
                Self::build(sigma, Hypothesis::Narrowness, Some(nb.delta), EveBound::Finite(nb.eve_min_std))
            }
            _ => Self::build(sigma, Hypothesis::AverageInference, None, average_inference_bound(sigma)?),
        }
    }

    /// Per-outcome bound for a measured narrowness `δ`; rates assume the
    /// widest compatible Gaussian, `σ = δ/3`.
    pub fn for_delta(delta: f64) -> Result<Self> {
        let nb = narrowness_bound(delta)?;
        let mut summary = Self::build(
            delta / 3.0,
            Hypothesis::Narrowness,
            Some(delta),
            EveBound::Finite(nb.eve_min_std),
        )?;
        summary.demonstrative = nb.demonstrative;
        Ok(summary)
    }

    /// Average bound `1/Δ_inf` with `σ = Δ_inf`.
    pub fn for_inference_deviation(delta_inf: f64) -> Result<Self> {
        let bound = average_inference_bound(delta_inf)?;
        if bound.is_unbounded() {
            return Self::build(0.0, Hypothesis::PerfectCorrelation, None, bound).map(|mut s| {
                s.eve_error_rate = 1.0;
                s.eve_error_rate_exact = 1.0;
                s
            });
        }
        Self::build(delta_inf, Hypothesis::AverageInference, None, bound)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    PerfectSecure,
    BoundedSecure,
    InsecureIndeterminate,
}

/// Security assessment of one session from its subensemble statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecurityReport {
    pub measured: EprStatistics,
    /// `Δ_inf^E x ≥ 1/Δ_inf p`.
    pub eve_bound_x: EveBound,
    /// `Δ_inf^E p ≥ 1/Δ_inf x`.
    pub eve_bound_p: EveBound,
    pub delta: Option<f64>,
    /// Per-outcome bound `1/δ` from the measured narrowness, if any.
    pub narrowness: Option<NarrownessBound>,
    pub bounds: BoundsSummary,
    pub bob_error_rate_pred: f64,
    pub eve_error_rate_lower_bound_gaussian: f64,
    pub criterion_satisfied: bool,
    pub hypothesis: Hypothesis,
    pub hypothesis_statement: String,
    pub verdict: Verdict,
}

impl SecurityReport {
    /// Verdict rules, in order: perfect correlation in every bin gives
    /// `perfect_secure`; a satisfied criterion with σ in the narrow or weak
    /// regime gives `bounded_secure`; anything else is
    /// `insecure_indeterminate`.
    pub fn assess(stats: &EprStatistics) -> Result<Self> {
        let perfect = perfect_correlation_verdict(stats);
        let criterion = stats.verdict();
        let narrowness = stats.delta_narrow.filter(|&d| d > 0.0).map(narrowness_bound).transpose()?;
        if perfect.perfect {
            let bounds = BoundsSummary::for_inference_deviation(0.0)?;
            return Ok(Self {
                measured: stats.clone(),
                eve_bound_x: EveBound::Unbounded,
                eve_bound_p: EveBound::Unbounded,
                delta: stats.delta_narrow,
                narrowness,
                bob_error_rate_pred: bounds.bob_error_rate,
                eve_error_rate_lower_bound_gaussian: bounds.eve_error_rate,
                bounds,
                criterion_satisfied: true,
                hypothesis: Hypothesis::PerfectCorrelation,
                hypothesis_statement: Hypothesis::PerfectCorrelation.statement().into(),
                verdict: Verdict::PerfectSecure,
            });
        }
        let sigma = stats.sigma();
        let bounds = if sigma > 0.0 {
            BoundsSummary::for_sigma(sigma)?
        } else {
            BoundsSummary::for_inference_deviation(0.0)?
        };
        let hypothesis = if narrowness.is_some_and(|n| n.demonstrative) {
            Hypothesis::Narrowness
        } else {
            bounds.hypothesis
        };
        // With a bootstrap interval, the violation must be significant.
        let satisfied = criterion.satisfied && criterion.confidence_interval.is_none_or(|(_, hi)| hi < 1.0);
        let verdict = if satisfied && matches!(bounds.regime, Regime::Narrow | Regime::Weak) {
            Verdict::BoundedSecure
        } else {
            Verdict::InsecureIndeterminate
        };
        Ok(Self {
            measured: stats.clone(),
            eve_bound_x: average_inference_bound(stats.delta_inf_p)?,
            eve_bound_p: average_inference_bound(stats.delta_inf_x)?,
            delta: stats.delta_narrow,
            narrowness,
            bob_error_rate_pred: bounds.bob_error_rate,
            eve_error_rate_lower_bound_gaussian: bounds.eve_error_rate,
            bounds,
            criterion_satisfied: satisfied,
            hypothesis,
            hypothesis_statement: hypothesis.statement().into(),
            verdict,
        })
    }
}

/// Bin widths and population threshold for a [`JointConditionalTable`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableOptions {
    pub bob_width: f64,
    pub eve_width: f64,
    /// Cells with fewer samples in either dataset are dropped.
    pub min_count: usize,
}

impl Default for TableOptions {
    fn default() -> Self {
        Self {
            bob_width: 0.5,
            eve_width: 0.5,
            min_count: 50,
        }
    }
}

/// One `(Bob bin i, Eve bin q)` cell with Alice's conditional moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableCell {
    pub bob_bin: i64,
    pub eve_bin: i64,
    pub probability: f64,
    pub var_x: f64,
    pub var_p: f64,
    /// Samples behind `var_x` and `var_p`; zero for analytic tables.
    pub count_x: usize,
    pub count_p: usize,
}

impl TableCell {
    /// `Δ_{i,q}x · Δ_{i,q}p`.
    pub fn product(&self) -> f64 {
        (self.var_x * self.var_p).sqrt()
    }

    /// Delta-method standard error of [`product`](Self::product) for
    /// Gaussian data.
    pub fn product_standard_error(&self) -> f64 {
        if self.count_x == 0 || self.count_p == 0 {
            return 0.0;
        }
        self.product() * (0.5 / self.count_x as f64 + 0.5 / self.count_p as f64).sqrt()
    }
}

/// Alice's conditional variances given joint Bob-X and Eve outcome bins.
///
/// Alice's X and P cannot be measured in the same slot, so `var_x` and
/// `var_p` come from two datasets sharing Bob's and Eve's measurements;
/// cell probabilities pool both. The two averaged lines of the chain, Bob's
/// inference variance of X and Eve's of P, are stored alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointConditionalTable {
    pub cells: Vec<TableCell>,
    pub bob_marginal: BTreeMap<i64, f64>,
    pub eve_marginal: BTreeMap<i64, f64>,
    /// `Δ²_inf x`: Alice's X variance given Bob's bin alone.
    pub bob_inference_var_x: f64,
    /// `Δ^E²_inf p`: Alice's P variance given Eve's bin alone.
    pub eve_inference_var_p: f64,
    /// Probability mass lost to underpopulated cells.
    pub excluded_fraction: f64,
    pub analytic: bool,
}

/// `(alice, bob_x, eve_statistic)` triples.
pub type TableSample = [f64; 3];

fn bin_of(value: f64, width: f64) -> i64 {
    (value / width).floor() as i64
}

fn grouped_variance(groups: &BTreeMap<i64, Vec<f64>>, total: usize) -> f64 {
    groups
        .values()
        .map(|vals| {
            let (_, v) = mean_var(vals);
            v * vals.len() as f64
        })
        .sum::<f64>()
        / total.max(1) as f64
}

impl JointConditionalTable {
    /// Builds a table from Alice-X samples and Alice-P samples.
    pub fn from_samples(x_set: &[TableSample], p_set: &[TableSample], opts: &TableOptions) -> Result<Self> {
        if x_set.is_empty() || p_set.is_empty() {
            return Err(Error::EmptyRecord);
        }
        let mut cells_x: BTreeMap<(i64, i64), Vec<f64>> = BTreeMap::new();
        let mut cells_p: BTreeMap<(i64, i64), Vec<f64>> = BTreeMap::new();
        let mut by_bob: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
        let mut by_eve: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
        for s in x_set {
            let (i, q) = (bin_of(s[1], opts.bob_width), bin_of(s[2], opts.eve_width));
            cells_x.entry((i, q)).or_default().push(s[0]);
            by_bob.entry(i).or_default().push(s[0]);
        }
        for s in p_set {
            let (i, q) = (bin_of(s[1], opts.bob_width), bin_of(s[2], opts.eve_width));
            cells_p.entry((i, q)).or_default().push(s[0]);
            by_eve.entry(q).or_default().push(s[0]);
        }
        let total = (x_set.len() + p_set.len()) as f64;
        let mut cells = Vec::new();
        let mut kept = 0usize;
        for (&(i, q), xs) in &cells_x {
            let Some(ps) = cells_p.get(&(i, q)) else { continue };
            if xs.len() < opts.min_count.max(2) || ps.len() < opts.min_count.max(2) {
                continue;
            }
            kept += xs.len() + ps.len();
            cells.push(TableCell {
                bob_bin: i,
                eve_bin: q,
                probability: (xs.len() + ps.len()) as f64,
                var_x: mean_var(xs).1,
                var_p: mean_var(ps).1,
                count_x: xs.len(),
                count_p: ps.len(),
            });
        }
        if cells.is_empty() {
            return Err(Error::AllBinsUnderpopulated {
                min_count: opts.min_count,
            });
        }
        for c in &mut cells {
            c.probability /= kept as f64;
        }
        let mut table = Self {
            cells,
            bob_marginal: BTreeMap::new(),
            eve_marginal: BTreeMap::new(),
            bob_inference_var_x: grouped_variance(&by_bob, x_set.len()),
            eve_inference_var_p: grouped_variance(&by_eve, p_set.len()),
            excluded_fraction: 1.0 - kept as f64 / total,
            analytic: false,
        };
        table.fill_marginals();
        Ok(table)
    }

    /// Builds a table from explicit cells, normalizing probabilities.
    pub fn from_cells(mut cells: Vec<TableCell>, bob_inference_var_x: f64, eve_inference_var_p: f64) -> Result<Self> {
        let total: f64 = cells.iter().map(|c| c.probability).sum();
        if cells.is_empty() || total.is_nan() || total <= 0.0 {
            return Err(Error::EmptyRecord);
        }
        for c in &mut cells {
            if c.var_x < 0.0 || c.var_p < 0.0 || c.probability < 0.0 {
                return Err(Error::InvalidRecord(format!(
                    "cell ({}, {}) has a negative entry",
                    c.bob_bin, c.eve_bin
                )));
            }
            c.probability /= total;
        }
        let mut table = Self {
            cells,
            bob_marginal: BTreeMap::new(),
            eve_marginal: BTreeMap::new(),
            bob_inference_var_x,
            eve_inference_var_p,
            excluded_fraction: 0.0,
            analytic: true,
        };
        table.fill_marginals();
        Ok(table)
    }

    /// Exact table for a Gaussian state. Eve's statistic is her estimate
    /// of Alice's P; Alice's variances in every cell are the Schur
    /// complements given Bob's X and that estimate, and cell weights are
    /// the bivariate normal density on the bin grid.
    pub fn analytic(state: &GaussianState, map: &ModeMap, opts: &TableOptions) -> Result<Self> {
        let eve = eve_conditional_quality(state, map, Setting::P)?;
        let n = state.n_modes();
        let cov = state.cov();
        let f_ax = Quadrature::x(map.alice).functional(n);
        let f_ap = Quadrature::p(map.alice).functional(n);
        let f_b = Quadrature::x(map.bob).functional(n);
        let f_e = eve_functional(&eve, n);
        let c = |f: &DVector<f64>, g: &DVector<f64>| (f.transpose() * cov * g)[0];
        let given = [f_b.clone(), f_e.clone()];
        let schur = |target: &DVector<f64>| {
            let g = nalgebra::Matrix2::from_fn(|i, j| c(&given[i], &given[j]));
            let v = nalgebra::Vector2::new(c(target, &given[0]), c(target, &given[1]));
            let pinv = g
                .pseudo_inverse(1e-12 * g.amax().max(1.0))
                .unwrap_or_else(|_| nalgebra::Matrix2::zeros());
            (c(target, target) - (v.transpose() * pinv * v)[0]).max(0.0)
        };
        let var_x = schur(&f_ax);
        let var_p = schur(&f_ap);
        let single = |target: &DVector<f64>, g: &DVector<f64>| {
            let vg = c(g, g);
            let cross = c(target, g);
            let explained = if vg > 1e-12 { cross * cross / vg } else { 0.0 };
            (c(target, target) - explained).max(0.0)
        };
        let bob_inference_var_x = single(&f_ax, &f_b);
        let eve_inference_var_p = single(&f_ap, &f_e);

        // Grid weights over ±8 standard deviations of (Bob X, Eve estimate).
        let (mb, me) = (
            (f_b.transpose() * state.mean())[0],
            (f_e.transpose() * state.mean())[0],
        );
        let (vb, ve, cbe) = (c(&f_b, &f_b), c(&f_e, &f_e), c(&f_b, &f_e));
        let mut cells = Vec::new();
        let bob_bins = grid_bins(mb, vb, opts.bob_width);
        let eve_degenerate = ve < 1e-12;
        let eve_bins = if eve_degenerate {
            vec![bin_of(me, opts.eve_width)]
        } else {
            grid_bins(me, ve, opts.eve_width)
        };
        for &i in &bob_bins {
            let xb = (i as f64 + 0.5) * opts.bob_width - mb;
            for &q in &eve_bins {
                let weight = if eve_degenerate {
                    (-0.5 * xb * xb / vb).exp()
                } else {
                    let xe = (q as f64 + 0.5) * opts.eve_width - me;
                    let det = vb * ve - cbe * cbe;
                    if det <= 1e-12 * vb * ve {
                        // Eve's estimate is a multiple of Bob's outcome.
                        let k = cbe / vb;
                        let predicted = k * xb;
                        if (predicted - xe).abs() > 0.5 * opts.eve_width {
                            continue;
                        }
                        (-0.5 * xb * xb / vb).exp()
                    } else {
                        let quad = (ve * xb * xb - 2.0 * cbe * xb * xe + vb * xe * xe) / det;
                        (-0.5 * quad).exp()
                    }
                };
                if weight > 1e-300 {
                    cells.push(TableCell {
                        bob_bin: i,
                        eve_bin: q,
                        probability: weight,
                        var_x,
                        var_p,
                        count_x: 0,
                        count_p: 0,
                    });
                }
            }
        }
        Self::from_cells(cells, bob_inference_var_x, eve_inference_var_p)
    }

    fn fill_marginals(&mut self) {
        self.bob_marginal.clear();
        self.eve_marginal.clear();
        for c in &self.cells {
            *self.bob_marginal.entry(c.bob_bin).or_default() += c.probability;
            *self.eve_marginal.entry(c.eve_bin).or_default() += c.probability;
        }
    }

    pub fn total_probability(&self) -> f64 {
        self.cells.iter().map(|c| c.probability).sum()
    }

    /// `Σ P_{i,q} Δ²_{i,q}x` and `Σ P_{i,q} Δ²_{i,q}p`.
    pub fn average_variances(&self) -> (f64, f64) {
        self.cells.iter().fold((0.0, 0.0), |(ax, ap), c| {
            (ax + c.probability * c.var_x, ap + c.probability * c.var_p)
        })
    }

    /// `Σ P_{i,q} Δ_{i,q}x Δ_{i,q}p`.
    pub fn average_product(&self) -> f64 {
        self.cells.iter().map(|c| c.probability * c.product()).sum()
    }
}

fn grid_bins(mean: f64, var: f64, width: f64) -> Vec<i64> {
    let half = 8.0 * var.max(0.0).sqrt() + width;
    (bin_of(mean - half, width)..=bin_of(mean + half, width)).collect()
}

fn eve_functional(eve: &EveMeasurement, n_modes: usize) -> DVector<f64> {
    eve.quadratures
        .iter()
        .zip(&eve.stats.slopes)
        .fold(DVector::zeros(2 * n_modes), |acc, (q, &s)| acc + q.functional(n_modes) * s)
}

/// Monte Carlo samples for [`JointConditionalTable::from_samples`]: Bob
/// measures X, Eve makes her optimal measurement for Alice's P and reports
/// her estimate, Alice measures X (first set) or P (second set).
pub fn sample_table_data(
    state: &GaussianState,
    map: &ModeMap,
    n: usize,
    seed: u64,
) -> Result<(Vec<TableSample>, Vec<TableSample>)> {
    let eve = eve_conditional_quality(state, map, Setting::P)?;
    let mut sets = Vec::with_capacity(2);
    for (k, setting) in Setting::BOTH.into_iter().enumerate() {
        let mut quads = vec![setting.quadrature(map.alice), Quadrature::x(map.bob)];
        quads.extend_from_slice(&eve.quadratures);
        let sampler = QuadratureSampler::new(state, &quads)?;
        let mut rng = stream(seed, Domain::Sampling, k as u64);
        let mut buf = vec![0.0; quads.len()];
        let set: Vec<TableSample> = (0..n)
            .map(|_| {
                sampler.sample_into(&mut rng, &mut buf);
                [buf[0], buf[1], eve.estimate(&buf[2..])]
            })
            .collect();
        sets.push(set);
    }
    let p_set = sets.pop().expect("two settings");
    let x_set = sets.pop().expect("two settings");
    Ok((x_set, p_set))
}

/// Worst cell of an uncertainty check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellProduct {
    pub bob_bin: i64,
    pub eve_bin: i64,
    pub product: f64,
    pub standard_error: f64,
    /// Normal score of the lower-tail probability of `product` when the
    /// true product is exactly 1. Analytic cells use `(product − 1)/tol`,
    /// clamped to ±1e300.
    pub z_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyCheck {
    pub passed: bool,
    pub cells_checked: usize,
    pub worst: CellProduct,
}

/// `P(V_x V_p ≤ var_x·var_p)` for the (divide-by-n) sample variances of
/// two independent Gaussian samples whose standard deviations multiply to
/// exactly 1. Then `n V/σ²` is chi-square with `n − 1` degrees of freedom,
/// and the tail is integrated over the log of the P factor.
pub fn product_lower_tail(cell: &TableCell) -> f64 {
    let (a, b) = ((cell.count_x - 1) as f64, (cell.count_p - 1) as f64);
    let target = cell.var_x * cell.var_p * cell.count_x as f64 * cell.count_p as f64;
    let cdf = |k: f64, x: f64| if x <= 0.0 { 0.0 } else { gamma_lr(k / 2.0, x / 2.0) };
    let ln_norm = (b / 2.0) * LN_2 + ln_gamma(b / 2.0);
    let spread = 20.0 * (2.0 / b).sqrt();
    let (lo, hi) = (b.ln() - spread, b.ln() + spread);
    const STEPS: usize = 2000;
    let h = (hi - lo) / STEPS as f64;
    let integral: f64 = (0..=STEPS)
        .map(|i| {
            let u = lo + i as f64 * h;
            let y = u.exp();
            let weight = if i == 0 || i == STEPS { 0.5 } else { 1.0 };
            // Density of Y in log space: f(y)·y.
            let density = ((b / 2.0) * u - y / 2.0 - ln_norm).exp();
            weight * density * cdf(a, target / y)
        })
        .sum();
    // Below `lo` the X factor's cdf is at most 1.
    (integral * h + cdf(b, lo.exp())).clamp(0.0, 1.0)
}

/// Checks `Δ_{i,q}x · Δ_{i,q}p ≥ 1` in every cell. An empirical cell fails
/// when its product is below 1 by more than `sigmas` in the normal score
/// of [`product_lower_tail`]; exact cells allow `analytic_tol`. With many
/// cells, pass [`family_sigmas`] to hold the false-alarm rate of the whole
/// table at that of one test.
pub fn conditional_uncertainty_check(table: &JointConditionalTable, sigmas: f64, analytic_tol: f64) -> UncertaintyCheck {
    let mut worst: Option<CellProduct> = None;
    let mut passed = true;
    for c in &table.cells {
        let product = c.product();
        let se = c.product_standard_error();
        let z = if se > 0.0 {
            let p = product_lower_tail(c).clamp(1e-300, 1.0 - 1e-16);
            let z = -upper_tail_inverse(p);
            passed &= z >= -sigmas;
            z
        } else {
            passed &= product >= 1.0 - analytic_tol;
            ((product - 1.0) / analytic_tol.max(f64::MIN_POSITIVE)).clamp(-1e300, 1e300)
        };
        let cell = CellProduct {
            bob_bin: c.bob_bin,
            eve_bin: c.eve_bin,
            product,
            standard_error: se,
            z_score: z,
        };
        if worst.is_none_or(|w| z < w.z_score) {
            worst = Some(cell);
        }
    }
    UncertaintyCheck {
        passed,
        cells_checked: table.cells.len(),
        worst: worst.expect("tables are never empty"),
    }
}

/// Per-cell tolerance in standard errors for a table-wide check at
/// `sigmas`.
pub fn family_sigmas(table: &JointConditionalTable, sigmas: f64) -> f64 {
    let empirical = table.cells.iter().filter(|c| c.product_standard_error() > 0.0).count();
    bonferroni_sigmas(sigmas, empirical)
}

/// One inequality `lhs ≥ rhs` of the chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStep {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// Bootstrap standard error of `lhs − rhs`; zero when not estimated.
    pub standard_error: f64,
    pub holds: bool,
}

/// The chain
/// `Δ²_inf x · Δ^E²_inf p ≥ ⟨Δ²x⟩⟨Δ²p⟩ ≥ ⟨Δx Δp⟩² ≥ 1`
/// evaluated on a table, and what it implies for the hypothesis that
/// Eve's inferences are as good as Bob's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    pub bob_inference_var_x: f64,
    pub eve_inference_var_p: f64,
    pub average_var_x: f64,
    pub average_var_p: f64,
    pub average_product: f64,
    /// `Δ²_inf x · Δ^E²_inf p`.
    pub final_product: f64,
    pub steps: Vec<ChainStep>,
    pub chain_holds: bool,
    /// Alice–Bob `Δ_inf x · Δ_inf p` from the subensemble.
    pub measured_alice_bob_product: f64,
    /// True when the measured product is below 1 (with its confidence
    /// interval, if any, excluding 1): Eve cannot then match Bob.
    pub eve_equals_bob_refuted: bool,
}

impl ChainReport {
    pub fn step(&self, name: &str) -> Option<&ChainStep> {
        self.steps.iter().find(|s| s.name == name)
    }
}

/// Chain quantities in order: line 1 gap, line 2 gap, Cauchy–Schwarz gap,
/// uncertainty gap.
fn chain_gaps(table: &JointConditionalTable) -> [f64; 4] {
    let (ax, ap) = table.average_variances();
    let avg = table.average_product();
    [
        table.bob_inference_var_x - ax,
        table.eve_inference_var_p - ap,
        ax * ap - avg * avg,
        avg * avg - 1.0,
    ]
}

/// Evaluates the chain with the given standard errors (`sigmas` of slack
/// each) or, with `errors = None`, exactly up to `analytic_tol`.
fn build_chain(
    alice_bob: &EprStatistics,
    table: &JointConditionalTable,
    errors: Option<[f64; 4]>,
    sigmas: f64,
    analytic_tol: f64,
) -> ChainReport {
    let (ax, ap) = table.average_variances();
    let avg = table.average_product();
    let se = errors.unwrap_or([0.0; 4]);
    let names = ["bob_line_x", "eve_line_p", "cauchy_schwarz", "uncertainty"];
    let sides = [
        (table.bob_inference_var_x, ax),
        (table.eve_inference_var_p, ap),
        (ax * ap, avg * avg),
        (avg * avg, 1.0),
    ];
    let steps: Vec<ChainStep> = names
        .iter()
        .zip(sides)
        .zip(se)
        .map(|((name, (lhs, rhs)), se)| {
            let slack = if errors.is_some() { sigmas * se } else { analytic_tol };
            ChainStep {
                name: (*name).into(),
                lhs,
                rhs,
                standard_error: se,
                holds: lhs - rhs >= -slack,
            }
        })
        .collect();
    let verdict = alice_bob.verdict();
    let refuted = verdict.satisfied && verdict.confidence_interval.is_none_or(|(_, hi)| hi < 1.0);
    ChainReport {
        bob_inference_var_x: table.bob_inference_var_x,
        eve_inference_var_p: table.eve_inference_var_p,
        average_var_x: ax,
        average_var_p: ap,
        average_product: avg,
        final_product: table.bob_inference_var_x * table.eve_inference_var_p,
        chain_holds: steps.iter().all(|s| s.holds),
        steps,
        measured_alice_bob_product: verdict.product,
        eve_equals_bob_refuted: refuted,
    }
}

/// Chain on an exact table, tolerance `1e-9`.
pub fn identical_stats_contradiction(alice_bob: &EprStatistics, table: &JointConditionalTable) -> ChainReport {
    build_chain(alice_bob, table, None, 0.0, 1e-9)
}

/// Chain on samples, with `sigmas` bootstrap standard errors of slack for
/// each step.
pub fn identical_stats_contradiction_sampled(
    alice_bob: &EprStatistics,
    x_set: &[TableSample],
    p_set: &[TableSample],
    opts: &TableOptions,
    resamples: usize,
    sigmas: f64,
    seed: u64,
) -> Result<(JointConditionalTable, ChainReport)> {
    let table = JointConditionalTable::from_samples(x_set, p_set, opts)?;
    let draws: Vec<Option<[f64; 4]>> = bootstrap(&[x_set.len(), p_set.len()], resamples, seed, |groups| {
        let xs: Vec<TableSample> = groups[0].iter().map(|&i| x_set[i]).collect();
        let ps: Vec<TableSample> = groups[1].iter().map(|&i| p_set[i]).collect();
        JointConditionalTable::from_samples(&xs, &ps, opts)
            .ok()
            .map(|t| chain_gaps(&t))
    });
    let draws: Vec<[f64; 4]> = draws.into_iter().flatten().collect();
    let mut errors = [0.0; 4];
    for (k, e) in errors.iter_mut().enumerate() {
        *e = std_dev(&draws.iter().map(|d| d[k]).collect::<Vec<_>>());
    }
    let report = build_chain(alice_bob, &table, Some(errors), sigmas, 1e-9);
    Ok((table, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::epr::{BinStats, EprOptions, MeasurementRecord, Slot};
    use crate::eve::{apply_attack, AttackSpec, TapChannel};
    use crate::gaussian::SymplecticOp;
    use proptest::prelude::*;

    fn tmsv(r: f64) -> GaussianState {
        GaussianState::vacuum(2)
            .unwrap()
            .apply(&SymplecticOp::two_mode_squeezer(2, r, 0, 1).unwrap())
            .unwrap()
    }

    fn tapped(r: f64, t: f64) -> (GaussianState, ModeMap) {
        let spec = AttackSpec::BeamsplitterTap {
            channel: TapChannel::Bob { transmissivity: t },
        };
        apply_attack(&tmsv(r), &spec).unwrap()
    }

    fn stats_from(r: f64, n: usize, seed: u64) -> EprStatistics {
        let s = tmsv(r);
        let mut slots = Vec::new();
        for (k, setting) in Setting::BOTH.into_iter().enumerate() {
            let sampler = QuadratureSampler::new(&s, &[setting.quadrature(0), setting.quadrature(1)]).unwrap();
            let mut rng = stream(seed, Domain::Sampling, k as u64);
            for _ in 0..n {
                let v = sampler.sample(&mut rng);
                slots.push(Slot {
                    alice: setting,
                    bob: setting,
                    alice_value: v[0],
                    bob_value: v[1],
                    eve: None,
                });
            }
        }
        let opts = EprOptions {
            bootstrap_resamples: 100,
            ..Default::default()
        };
        EprStatistics::from_record(&MeasurementRecord::new(slots).unwrap(), &opts).unwrap()
    }

    fn perfectly_correlated_stats() -> EprStatistics {
        let mut slots = Vec::new();
        for i in 0..400 {
            // Discrete outcomes, one per bin, so every bin variance is exactly zero.
            let v = (i % 10) as f64;
            slots.push(Slot {
                alice: Setting::X,
                bob: Setting::X,
                alice_value: v,
                bob_value: v,
                eve: None,
            });
            slots.push(Slot {
                alice: Setting::P,
                bob: Setting::P,
                alice_value: v,
                bob_value: -v,
                eve: None,
            });
        }
        let opts = EprOptions {
            bootstrap_resamples: 0,
            binning: crate::epr::BinningOptions {
                width: 0.2,
                min_count: 1,
            },
            ..Default::default()
        };
        EprStatistics::from_record(&MeasurementRecord::new(slots).unwrap(), &opts).unwrap()
    }

    #[test]
    fn perfect_limit_gives_unbounded_eve() {
        let stats = perfectly_correlated_stats();
        assert!(perfect_correlation_verdict(&stats).perfect);
        let report = SecurityReport::assess(&stats).unwrap();
        assert_eq!(report.verdict, Verdict::PerfectSecure);
        assert!(report.eve_bound_x.is_unbounded() && report.eve_bound_p.is_unbounded());
        let json = serde_json::to_value(&report).unwrap();
        assert_eq!(json["eve_bound_p"], "unbounded");
        let back: SecurityReport = serde_json::from_value(json).unwrap();
        assert_eq!(back.eve_bound_p, EveBound::Unbounded);
    }

    #[test]
    fn one_noisy_bin_is_not_perfect() {
        let mut stats = perfectly_correlated_stats();
        stats.per_bin_x[3] = BinStats {
            variance: 0.01,
            ..stats.per_bin_x[3]
        };
        assert!(!perfect_correlation_verdict(&stats).perfect);
    }

    #[test]
    fn squeezed_session_takes_bounded_path() {
        let stats = stats_from(1.0, 20_000, 4);
        assert!(!perfect_correlation_verdict(&stats).perfect);
        let report = SecurityReport::assess(&stats).unwrap();
        // σ ≈ 0.515 lies in the weak regime.
        assert_eq!(report.bounds.regime, Regime::Weak);
        assert_eq!(report.verdict, Verdict::BoundedSecure);
        assert_eq!(report.hypothesis, Hypothesis::AverageInference);
        let bx = report.eve_bound_x.value().unwrap();
        assert!((bx - 1.0 / stats.delta_inf_p).abs() < 1e-12);
    }

    #[test]
    fn vacuum_session_is_indeterminate() {
        let stats = stats_from(0.0, 20_000, 5);
        let report = SecurityReport::assess(&stats).unwrap();
        assert_eq!(report.verdict, Verdict::InsecureIndeterminate);
        assert!(!report.criterion_satisfied);
        // A point estimate just below 1 whose interval straddles 1 is not
        // a demonstrated violation.
        let mut marginal = stats.clone();
        marginal.product = 0.99;
        marginal.delta_inf_x = 0.99f64.sqrt();
        marginal.delta_inf_p = 0.99f64.sqrt();
        marginal.confidence_interval = Some((0.97, 1.01));
        assert!(marginal.verdict().satisfied);
        assert!(!SecurityReport::assess(&marginal).unwrap().criterion_satisfied);
    }

    #[test]
    fn narrowness_examples() {
        let b = narrowness_bound(1.0).unwrap();
        assert_eq!(b.eve_min_std, 1.0);
        assert!(!b.demonstrative);
        let b = narrowness_bound(0.5).unwrap();
        assert_eq!(b.eve_min_std, 2.0);
        assert!(b.demonstrative);
        assert!(narrowness_bound(0.0).is_err());
        // δ = 1 with σ = 1/3: Eve's std is at least 3σ.
        assert!((narrowness_bound(1.0).unwrap().eve_min_std - 3.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn average_bound_examples() {
        let b = average_inference_bound(0.7).unwrap().value().unwrap();
        assert!((b - 1.428_571_428_571_428_5).abs() < 1e-12);
        assert_eq!(average_inference_bound(1.0).unwrap(), EveBound::Finite(1.0));
        assert_eq!(average_inference_bound(0.0).unwrap(), EveBound::Unbounded);
        assert!(average_inference_bound(-0.1).is_err());
    }

    #[test]
    fn error_rate_examples() {
        let r = gaussian_error_rates(1.0 / 3.0, 1.0).unwrap();
        assert!((r.bob_rate - 0.002_699_796_063_260_2).abs() < 1e-12);
        assert!((r.eve_rate - 0.317_310_507_862_914_1).abs() < 1e-12);
        let r = gaussian_error_rates(0.7, 1.4).unwrap();
        assert!((r.eve_rate - 0.133_614_402_537_716_13).abs() < 1e-12);
        assert!((r.eve_rate - 0.136).abs() < 0.003);
    }

    #[test]
    fn regime_examples() {
        assert_eq!(sigma_regime_classifier(0.3), Regime::Narrow);
        assert_eq!(sigma_regime_classifier(0.5), Regime::Weak);
        assert_eq!(sigma_regime_classifier(0.6), Regime::Indeterminate);
        assert_eq!(sigma_regime_classifier(0.577), Regime::Weak);
        assert_eq!(sigma_regime_classifier(0.578), Regime::Indeterminate);
    }

    #[test]
    fn two_significant_floor() {
        assert_eq!(floor_two_significant(1.428_571), 1.4);
        assert_eq!(floor_two_significant(1.4), 1.4);
        assert_eq!(floor_two_significant(2.0), 2.0);
        assert!((floor_two_significant(1.000_01) - 1.0).abs() < 1e-15);
        assert!((floor_two_significant(0.0371) - 0.037).abs() < 1e-15);
    }

    #[test]
    fn worked_sigma_cases() {
        let s = BoundsSummary::for_sigma(0.7).unwrap();
        assert_eq!(s.regime, Regime::Indeterminate);
        assert!((s.eve_min_std.value().unwrap() - 1.0 / 0.7).abs() < 1e-12);
        assert!((s.eve_error_rate - 0.133_614_402_537_716_13).abs() < 1e-12);
        assert!((s.eve_error_rate_exact - 0.141_561_753_983_371_07).abs() < 1e-9);
        assert!((s.eve_to_bob_ratio / 50.0 - 1.0).abs() < 0.1);

        let s = BoundsSummary::for_sigma(0.33333).unwrap();
        assert_eq!(s.regime, Regime::Narrow);
        assert_eq!(s.hypothesis, Hypothesis::Narrowness);
        assert!((s.eve_error_rate - 0.3173).abs() < 5e-5);

        let s = BoundsSummary::for_delta(0.5).unwrap();
        assert_eq!(s.eve_min_std, EveBound::Finite(2.0));
    }

    #[test]
    fn synthetic_violation_is_reported() {
        let mut cells = Vec::new();
        for i in 0..4 {
            cells.push(TableCell {
                bob_bin: i,
                eve_bin: 0,
                probability: 1.0,
                var_x: 2.0,
                var_p: 1.0,
                count_x: 0,
                count_p: 0,
            });
        }
        cells[2].var_x = 0.25;
        let table = JointConditionalTable::from_cells(cells, 3.0, 3.0).unwrap();
        let check = conditional_uncertainty_check(&table, 3.0, 1e-9);
        assert!(!check.passed);
        assert_eq!(check.worst.bob_bin, 2);
        assert!((check.worst.product - 0.5).abs() < 1e-12);
    }

    #[test]
    fn vacuum_table_products_are_marginal() {
        let (state, map) = apply_attack(&GaussianState::vacuum(2).unwrap(), &AttackSpec::BeamsplitterTap {
            channel: TapChannel::Bob { transmissivity: 0.5 },
        })
        .unwrap();
        let table = JointConditionalTable::analytic(&state, &map, &TableOptions::default()).unwrap();
        assert!((table.total_probability() - 1.0).abs() < 1e-9);
        for c in &table.cells {
            assert!((c.product() - 1.0).abs() < 1e-12);
        }
        assert!(conditional_uncertainty_check(&table, 3.0, 1e-9).passed);
    }

    #[test]
    fn analytic_tables_satisfy_uncertainty_and_chain() {
        let stats = stats_from(1.0, 5_000, 6);
        for t in [0.1, 0.5, 0.9] {
            let (state, map) = tapped(1.0, t);
            let table = JointConditionalTable::analytic(&state, &map, &TableOptions::default()).unwrap();
            assert!((table.total_probability() - 1.0).abs() < 1e-9);
            let m_sum: f64 = table.bob_marginal.values().sum();
            assert!((m_sum - 1.0).abs() < 1e-9);
            assert!(conditional_uncertainty_check(&table, 3.0, 1e-9).passed);
            let chain = identical_stats_contradiction(&stats, &table);
            assert!(chain.chain_holds, "{chain:?}");
            assert!(chain.final_product >= 1.0 - 1e-9);
        }
    }

    #[test]
    fn honest_session_refutes_eve_equals_bob() {
        let stats = stats_from(1.0, 20_000, 7);
        // Eve holds only vacuum here; the chain bounds any Eve.
        let (state, map) = tapped(1.0, 1.0);
        let table = JointConditionalTable::analytic(&state, &map, &TableOptions::default()).unwrap();
        let chain = identical_stats_contradiction(&stats, &table);
        assert!(chain.final_product >= 1.0 - 1e-9);
        assert!((chain.measured_alice_bob_product - 1.0 / 2f64.cosh()).abs() < 0.02);
        assert!(chain.eve_equals_bob_refuted);
    }

    #[test]
    fn vacuum_session_does_not_refute() {
        let stats = stats_from(0.0, 20_000, 8);
        let (state, map) = tapped(0.0, 0.5);
        let table = JointConditionalTable::analytic(&state, &map, &TableOptions::default()).unwrap();
        let chain = identical_stats_contradiction(&stats, &table);
        assert!(!chain.eve_equals_bob_refuted);
    }

    #[test]
    fn sampled_chain_within_errors() {
        let stats = stats_from(1.0, 5_000, 9);
        let (state, map) = tapped(1.0, 0.5);
        let (xs, ps) = sample_table_data(&state, &map, 40_000, 10).unwrap();
        let (table, chain) =
            identical_stats_contradiction_sampled(&stats, &xs, &ps, &TableOptions::default(), 40, 3.0, 11).unwrap();
        assert!((table.total_probability() - 1.0).abs() < 1e-9);
        assert!(chain.chain_holds, "{chain:?}");
        let check = conditional_uncertainty_check(&table, family_sigmas(&table, 3.0), 1e-9);
        assert!(check.passed, "{check:?}");
        // A real deficit of 15% in every cell is still caught.
        let mut shrunk = table.clone();
        for c in &mut shrunk.cells {
            c.var_p *= 0.85 * 0.85;
        }
        assert!(!conditional_uncertainty_check(&shrunk, family_sigmas(&shrunk, 3.0), 1e-9).passed);
        assert!(chain.step("uncertainty").unwrap().standard_error > 0.0);
    }

    #[test]
    fn product_tail_matches_chi_square_sampling() {
        use rand_distr::{ChiSquared, Distribution};
        let (nx, np) = (71usize, 60usize);
        let mut rng = stream(12, Domain::Sampling, 0);
        let (cx, cp) = (ChiSquared::new((nx - 1) as f64).unwrap(), ChiSquared::new((np - 1) as f64).unwrap());
        let draws: Vec<f64> = (0..200_000)
            .map(|_| {
                let vx: f64 = cx.sample(&mut rng) / nx as f64;
                let vp: f64 = cp.sample(&mut rng) / np as f64;
                (vx * vp).sqrt()
            })
            .collect();
        for product in [0.75, 0.9, 0.98, 1.05] {
            let cell = TableCell {
                bob_bin: 0,
                eve_bin: 0,
                probability: 1.0,
                var_x: product * 0.5,
                var_p: product * 2.0,
                count_x: nx,
                count_p: np,
            };
            let empirical = draws.iter().filter(|&&d| d <= product).count() as f64 / draws.len() as f64;
            let se = (empirical * (1.0 - empirical) / draws.len() as f64).sqrt().max(1e-6);
            let exact = product_lower_tail(&cell);
            assert!((exact - empirical).abs() < 4.0 * se, "{product}: {exact} vs {empirical}");
        }
    }

    fn arb_cells() -> impl Strategy<Value = Vec<TableCell>> {
        prop::collection::vec((0.01f64..1.0, 0.0f64..5.0, 0.0f64..5.0), 1..30).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(k, (p, vx, vp))| TableCell {
                    bob_bin: k as i64,
                    eve_bin: 0,
                    probability: p,
                    var_x: vx,
                    var_p: vp,
                    count_x: 0,
                    count_p: 0,
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn reciprocity(v in 1e-6f64..1e6) {
            let once = average_inference_bound(v).unwrap().value().unwrap();
            let twice = average_inference_bound(once).unwrap().value().unwrap();
            prop_assert!((twice - v).abs() <= 1e-12 * v);
        }

        #[test]
        fn eve_rate_decreases_in_std(sigma in 0.05f64..2.0, s in 0.05f64..5.0, ds in 1e-3f64..1.0) {
            let a = gaussian_error_rates(sigma, s).unwrap().eve_rate;
            let b = gaussian_error_rates(sigma, s + ds).unwrap().eve_rate;
            prop_assert!(b > a);
        }

        #[test]
        fn cauchy_schwarz_on_random_tables(cells in arb_cells()) {
            let table = JointConditionalTable::from_cells(cells, 0.0, 0.0).unwrap();
            let (ax, ap) = table.average_variances();
            let avg = table.average_product();
            prop_assert!(ax * ap >= avg * avg * (1.0 - 1e-12) - 1e-15);
            prop_assert!((table.total_probability() - 1.0).abs() < 1e-9);
        }
    }
}
