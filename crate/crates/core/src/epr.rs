//! Measurement records and EPR inference-variance estimators.
//!
//! Alice's outcome is inferred from Bob's correlated outcome measured at the
//! same setting. Two estimators are provided:
//!
//! - the linear estimator, `min over (g, d) of ⟨(a − g·b − d)²⟩`, solved by
//!   least squares;
//! - the binned estimator, the probability-weighted average of Alice's
//!   conditional variance across bins of Bob's outcome.
//!
//! The EPR criterion is `Δ_inf x · Δ_inf p < 1` on the standard deviations.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::Quadrature;
use crate::stats::{bootstrap, mean_var, quantile};

/// Measurement setting: the angle 0 reads X, π/2 reads P.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    X,
    P,
}

impl Setting {
    pub const BOTH: [Setting; 2] = [Setting::X, Setting::P];

    pub fn angle(self) -> f64 {
        match self {
            Setting::X => 0.0,
            Setting::P => FRAC_PI_2,
        }
    }

    /// Accepts angles within 1e-6 of 0 or π/2.
    pub fn from_angle(angle: f64) -> Option<Self> {
        if angle.abs() < 1e-6 {
            Some(Setting::X)
        } else if (angle - FRAC_PI_2).abs() < 1e-6 {
            Some(Setting::P)
        } else {
            None
        }
    }

    pub fn quadrature(self, mode: usize) -> Quadrature {
        Quadrature::new(mode, self.angle())
    }

    pub fn name(self) -> &'static str {
        match self {
            Setting::X => "x",
            Setting::P => "p",
        }
    }

    pub fn other(self) -> Self {
        match self {
            Setting::X => Setting::P,
            Setting::P => Setting::X,
        }
    }
}

/// Eve's reading for a slot: her local-oscillator angle on her first mode
/// and her estimate of Alice's value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EveReading {
    pub angle: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub alice: Setting,
    pub bob: Setting,
    pub alice_value: f64,
    pub bob_value: f64,
    pub eve: Option<EveReading>,
}

impl Slot {
    pub fn is_matched(&self) -> bool {
        self.alice == self.bob
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub slots: Vec<Slot>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    alice_angle: f64,
    bob_angle: f64,
    alice_value: f64,
    bob_value: f64,
    #[serde(default)]
    eve_angle: Option<f64>,
    #[serde(default)]
    eve_value: Option<f64>,
}

#[derive(Serialize)]
struct CsvRowNoEve {
    alice_angle: f64,
    bob_angle: f64,
    alice_value: f64,
    bob_value: f64,
}

impl MeasurementRecord {
    pub fn new(slots: Vec<Slot>) -> Result<Self> {
        for (i, s) in slots.iter().enumerate() {
            let eve_ok = s.eve.is_none_or(|e| e.angle.is_finite() && e.value.is_finite());
            if !(s.alice_value.is_finite() && s.bob_value.is_finite() && eve_ok) {
                return Err(Error::InvalidRecord(format!("slot {i} holds a non-finite value")));
            }
        }
        Ok(Self { slots })
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn has_eve(&self) -> bool {
        self.slots.iter().any(|s| s.eve.is_some())
    }

    /// Alice and Bob values for slots where both used `setting`.
    pub fn matched(&self, setting: Setting) -> (Vec<f64>, Vec<f64>) {
        self.slots
            .iter()
            .filter(|s| s.alice == setting && s.bob == setting)
            .map(|s| (s.alice_value, s.bob_value))
            .unzip()
    }

    /// Alice values and Eve estimates for slots where Alice used `setting`.
    pub fn alice_eve(&self, setting: Setting) -> (Vec<f64>, Vec<f64>) {
        self.slots
            .iter()
            .filter(|s| s.alice == setting)
            .filter_map(|s| s.eve.map(|e| (s.alice_value, e.value)))
            .unzip()
    }

    /// Reads the CSV layout `alice_angle,bob_angle,alice_value,bob_value`
    /// with optional trailing `eve_angle,eve_value` columns.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut slots = Vec::new();
        for (i, row) in rdr.deserialize::<CsvRow>().enumerate() {
            let row = row?;
            let setting = |angle: f64, who: &str| {
                Setting::from_angle(angle).ok_or_else(|| {
                    Error::InvalidRecord(format!("row {}: {who} angle {angle} is neither 0 nor π/2", i + 1))
                })
            };
            let eve = match (row.eve_angle, row.eve_value) {
                (Some(angle), Some(value)) => Some(EveReading { angle, value }),
                (None, None) => None,
                _ => {
                    return Err(Error::InvalidRecord(format!(
                        "row {}: eve_angle and eve_value must both be present or both empty",
                        i + 1
                    )))
                }
            };
            slots.push(Slot {
                alice: setting(row.alice_angle, "alice")?,
                bob: setting(row.bob_angle, "bob")?,
                alice_value: row.alice_value,
                bob_value: row.bob_value,
                eve,
            });
        }
        Self::new(slots)
    }

    /// Writes the CSV layout; Eve columns appear only when some slot has Eve.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        if self.has_eve() {
            for s in &self.slots {
                wtr.serialize(CsvRow {
                    alice_angle: s.alice.angle(),
                    bob_angle: s.bob.angle(),
                    alice_value: s.alice_value,
                    bob_value: s.bob_value,
                    eve_angle: s.eve.map(|e| e.angle),
                    eve_value: s.eve.map(|e| e.value),
                })?;
            }
        } else {
            for s in &self.slots {
                wtr.serialize(CsvRowNoEve {
                    alice_angle: s.alice.angle(),
                    bob_angle: s.bob.angle(),
                    alice_value: s.alice_value,
                    bob_value: s.bob_value,
                })?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Least-squares regression of `a` on `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub offset: f64,
    /// `⟨(a − slope·b − offset)²⟩` with divisor `n`.
    pub residual_variance: f64,
    pub n: usize,
    /// `b` had zero variance; the slope was forced to 0.
    pub degenerate: bool,
}

pub fn linear_fit(a: &[f64], b: &[f64]) -> Result<LinearFit> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let n = a.len();
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let cov = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / n.max(1) as f64;
    let scale = va.max(vb).max(f64::MIN_POSITIVE);
    let degenerate = vb <= 1e-300 || vb < 1e-15 * scale;
    let slope = if degenerate { 0.0 } else { cov / vb };
    let offset = ma - slope * mb;
    let residual_variance = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - slope * y - offset).powi(2))
        .sum::<f64>()
        / n.max(1) as f64;
    Ok(LinearFit {
        slope,
        offset,
        residual_variance,
        n,
        degenerate,
    })
}

/// Linear inference variance for one setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearInference {
    pub setting: Setting,
    /// `Δ²_inf,L`.
    pub variance: f64,
    /// `g` for X (`X_a − g X_b`), `h` for P (`P_a + h P_b`).
    pub gain: f64,
    /// Intercept `d` of the best linear estimate `slope·b + d`.
    pub offset: f64,
    pub n: usize,
    /// Bob's outcomes had zero variance, gain forced to 0.
    pub gain_warning: bool,
}

impl LinearInference {
    /// Regression slope of Alice on Bob (`g` for X, `−h` for P).
    pub fn slope(&self) -> f64 {
        match self.setting {
            Setting::X => self.gain,
            Setting::P => -self.gain,
        }
    }

    /// Bob's best estimate of Alice's value.
    pub fn estimate(&self, bob_value: f64) -> f64 {
        self.slope() * bob_value + self.offset
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

fn require_pairs(a: &[f64], setting: Setting, needed: usize) -> Result<()> {
    if a.len() < needed {
        return Err(Error::InsufficientSlots {
            setting: setting.name(),
            needed,
            found: a.len(),
        });
    }
    Ok(())
}

pub fn linear_inference_pairs(a: &[f64], b: &[f64], setting: Setting) -> Result<LinearInference> {
    require_pairs(a, setting, 2)?;
    let fit = linear_fit(a, b)?;
    let gain = match setting {
        Setting::X => fit.slope,
        Setting::P => -fit.slope,
    };
    Ok(LinearInference {
        setting,
        variance: fit.residual_variance,
        gain,
        offset: fit.offset,
        n: fit.n,
        gain_warning: fit.degenerate,
    })
}

pub fn linear_inference_variance(record: &MeasurementRecord, setting: Setting) -> Result<LinearInference> {
    if record.is_empty() {
        return Err(Error::EmptyRecord);
    }
    let (a, b) = record.matched(setting);
    linear_inference_pairs(&a, &b, setting)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinningOptions {
    pub width: f64,
    /// Bins with fewer samples are excluded and reported.
    pub min_count: usize,
}

impl Default for BinningOptions {
    fn default() -> Self {
        Self {
            width: 0.2,
            min_count: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    pub index: i64,
    pub lower_edge: f64,
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedInference {
    /// `Σ_i P(b_i) Δ_i²`, weights renormalized over included bins.
    pub variance: f64,
    pub bins: Vec<BinStats>,
    pub excluded_bins: usize,
    pub excluded_samples: usize,
    pub excluded_fraction: f64,
    pub bin_width: f64,
    /// Bins are anchored at the smallest conditioning value.
    pub origin: f64,
}

/// Groups `a` by bins of `b` and returns the included bins with their raw
/// member values in bin order.
fn group_by_bins(a: &[f64], b: &[f64], opts: &BinningOptions) -> Result<(f64, BTreeMap<i64, Vec<f64>>)> {
    if !(opts.width > 0.0 && opts.width.is_finite()) {
        return Err(Error::OutOfRange {
            name: "bin width",
            value: opts.width,
            range: "(0, ∞)",
        });
    }
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let origin = b.iter().copied().fold(f64::INFINITY, f64::min);
    let mut groups: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        let idx = ((y - origin) / opts.width).floor() as i64;
        groups.entry(idx).or_default().push(x);
    }
    Ok((origin, groups))
}

pub fn binned_inference_pairs(a: &[f64], b: &[f64], opts: &BinningOptions) -> Result<BinnedInference> {
    let (origin, groups) = group_by_bins(a, b, opts)?;
    let total = a.len();
    let mut bins = Vec::new();
    let mut excluded_bins = 0;
    let mut excluded_samples = 0;
    for (idx, members) in groups {
        if members.len() < opts.min_count.max(1) {
            excluded_bins += 1;
            excluded_samples += members.len();
            continue;
        }
        let (mean, variance) = mean_var(&members);
        bins.push(BinStats {
            index: idx,
            lower_edge: origin + idx as f64 * opts.width,
            count: members.len(),
            mean,
            variance,
        });
    }
    if bins.is_empty() {
        return Err(Error::AllBinsUnderpopulated {
            min_count: opts.min_count,
        });
    }
    let included: usize = bins.iter().map(|b| b.count).sum();
    let variance = bins
        .iter()
        .map(|b| b.count as f64 * b.variance)
        .sum::<f64>()
        / included as f64;
    Ok(BinnedInference {
        variance,
        bins,
        excluded_bins,
        excluded_samples,
        excluded_fraction: excluded_samples as f64 / total as f64,
        bin_width: opts.width,
        origin,
    })
}

pub fn binned_inference_variance(
    record: &MeasurementRecord,
    setting: Setting,
    opts: &BinningOptions,
) -> Result<BinnedInference> {
    if record.is_empty() {
        return Err(Error::EmptyRecord);
    }
    let (a, b) = record.matched(setting);
    require_pairs(&a, setting, 1)?;
    binned_inference_pairs(&a, &b, opts)
}

/// How to turn finite samples into a conditional half-width δ.
///
/// Gaussian tails never vanish, so a convention is needed:
/// `Coverage(c)` takes the `c`-quantile of observed `|a − μ_i|` (1.0 is the
/// largest deviation), `GaussianSigmas(k)` takes `k` times the largest
/// per-bin standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NarrownessConvention {
    Coverage(f64),
    GaussianSigmas(f64),
}

impl Default for NarrownessConvention {
    fn default() -> Self {
        NarrownessConvention::Coverage(1.0)
    }
}

/// Raw half-width of Alice's conditionals, before the `δ < 1` cut.
pub fn narrowness_width_pairs(
    a: &[f64],
    b: &[f64],
    opts: &BinningOptions,
    convention: NarrownessConvention,
) -> Result<f64> {
    let (_, groups) = group_by_bins(a, b, opts)?;
    let populated: Vec<Vec<f64>> = groups
        .into_values()
        .filter(|m| m.len() >= opts.min_count.max(1))
        .collect();
    if populated.is_empty() {
        return Err(Error::AllBinsUnderpopulated {
            min_count: opts.min_count,
        });
    }
    Ok(match convention {
        NarrownessConvention::Coverage(c) => {
            let deviations: Vec<f64> = populated
                .iter()
                .flat_map(|m| {
                    let (mu, _) = mean_var(m);
                    m.iter().map(move |x| (x - mu).abs())
                })
                .collect();
            if c >= 1.0 {
                deviations.iter().copied().fold(0.0, f64::max)
            } else {
                quantile(&deviations, c.max(0.0))
            }
        }
        NarrownessConvention::GaussianSigmas(k) => {
            k * populated
                .iter()
                .map(|m| mean_var(m).1.sqrt())
                .fold(0.0, f64::max)
        }
    })
}

/// Narrowness parameter δ for one setting, `None` when `δ ≥ 1`.
pub fn narrowness_delta(
    record: &MeasurementRecord,
    setting: Setting,
    opts: &BinningOptions,
    convention: NarrownessConvention,
) -> Result<Option<f64>> {
    let (a, b) = record.matched(setting);
    require_pairs(&a, setting, 1)?;
    let delta = narrowness_width_pairs(&a, &b, opts, convention)?;
    Ok((delta < 1.0).then_some(delta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriterionVerdict {
    /// `Δ_inf x · Δ_inf p`.
    pub product: f64,
    pub satisfied: bool,
    /// Bootstrap percentile interval for the product, when computed.
    pub confidence_interval: Option<(f64, f64)>,
}

/// EPR criterion on inference standard deviations; strictly `< 1`.
pub fn epr_criterion(delta_inf_x: f64, delta_inf_p: f64) -> CriterionVerdict {
    let product = delta_inf_x * delta_inf_p;
    CriterionVerdict {
        product,
        satisfied: product < 1.0,
        confidence_interval: None,
    }
}

/// Percentile bootstrap interval for the linear criterion product,
/// resampling the X and P pair sets independently.
pub fn bootstrap_product_ci(
    record: &MeasurementRecord,
    resamples: usize,
    confidence: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    let (ax, bx) = record.matched(Setting::X);
    let (ap, bp) = record.matched(Setting::P);
    require_pairs(&ax, Setting::X, 2)?;
    require_pairs(&ap, Setting::P, 2)?;
    let products = bootstrap(&[ax.len(), ap.len()], resamples, seed, |groups| {
        let resampled_var = |src_a: &[f64], src_b: &[f64], ids: &[usize]| -> f64 {
            let a: Vec<f64> = ids.iter().map(|&i| src_a[i]).collect();
            let b: Vec<f64> = ids.iter().map(|&i| src_b[i]).collect();
            linear_fit(&a, &b).map(|f| f.residual_variance).unwrap_or(f64::NAN)
        };
        (resampled_var(&ax, &bx, &groups[0]) * resampled_var(&ap, &bp, &groups[1])).sqrt()
    });
    let alpha = (1.0 - confidence).clamp(0.0, 1.0) / 2.0;
    Ok((quantile(&products, alpha), quantile(&products, 1.0 - alpha)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EprOptions {
    pub binning: BinningOptions,
    pub narrowness: NarrownessConvention,
    /// Zero disables the bootstrap interval.
    pub bootstrap_resamples: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for EprOptions {
    fn default() -> Self {
        Self {
            binning: BinningOptions::default(),
            narrowness: NarrownessConvention::default(),
            bootstrap_resamples: 200,
            confidence: 0.95,
            seed: 0,
        }
    }
}

/// Everything Alice and Bob learn from their check subensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EprStatistics {
    /// Linear inference standard deviations `Δ_inf,L`.
    pub delta_inf_x: f64,
    pub delta_inf_p: f64,
    pub var_inf_x: f64,
    pub var_inf_p: f64,
    pub gain_g: f64,
    pub gain_h: f64,
    pub offset_d: f64,
    pub offset_p: f64,
    pub gain_warning: bool,
    pub product: f64,
    pub confidence_interval: Option<(f64, f64)>,
    pub binned_var_x: f64,
    pub binned_var_p: f64,
    pub per_bin_x: Vec<BinStats>,
    pub per_bin_p: Vec<BinStats>,
    pub excluded_fraction_x: f64,
    pub excluded_fraction_p: f64,
    /// `max(δ_x, δ_p)` when below 1.
    pub delta_narrow: Option<f64>,
    pub sample_count_x: usize,
    pub sample_count_p: usize,
}

impl EprStatistics {
    pub fn from_record(record: &MeasurementRecord, opts: &EprOptions) -> Result<Self> {
        if record.is_empty() {
            return Err(Error::EmptyRecord);
        }
        let (ax, bx) = record.matched(Setting::X);
        let (ap, bp) = record.matched(Setting::P);
        let lx = linear_inference_pairs(&ax, &bx, Setting::X)?;
        let lp = linear_inference_pairs(&ap, &bp, Setting::P)?;
        let binned_x = binned_inference_pairs(&ax, &bx, &opts.binning)?;
        let binned_p = binned_inference_pairs(&ap, &bp, &opts.binning)?;
        let wx = narrowness_width_pairs(&ax, &bx, &opts.binning, opts.narrowness)?;
        let wp = narrowness_width_pairs(&ap, &bp, &opts.binning, opts.narrowness)?;
        let delta = wx.max(wp);
        let verdict = epr_criterion(lx.std_dev(), lp.std_dev());
        let confidence_interval = if opts.bootstrap_resamples > 0 {
            Some(bootstrap_product_ci(
                record,
                opts.bootstrap_resamples,
                opts.confidence,
                opts.seed,
            )?)
        } else {
            None
        };
        Ok(Self {
            delta_inf_x: lx.std_dev(),
            delta_inf_p: lp.std_dev(),
            var_inf_x: lx.variance,
            var_inf_p: lp.variance,
            gain_g: lx.gain,
            gain_h: lp.gain,
            offset_d: lx.offset,
            offset_p: lp.offset,
            gain_warning: lx.gain_warning || lp.gain_warning,
            product: verdict.product,
            confidence_interval,
            binned_var_x: binned_x.variance,
            binned_var_p: binned_p.variance,
            per_bin_x: binned_x.bins,
            per_bin_p: binned_p.bins,
            excluded_fraction_x: binned_x.excluded_fraction,
            excluded_fraction_p: binned_p.excluded_fraction,
            delta_narrow: (delta < 1.0).then_some(delta),
            sample_count_x: lx.n,
            sample_count_p: lp.n,
        })
    }

    pub fn verdict(&self) -> CriterionVerdict {
        CriterionVerdict {
            confidence_interval: self.confidence_interval,
            ..epr_criterion(self.delta_inf_x, self.delta_inf_p)
        }
    }

    pub fn linear(&self, setting: Setting) -> LinearInference {
        match setting {
            Setting::X => LinearInference {
                setting,
                variance: self.var_inf_x,
                gain: self.gain_g,
                offset: self.offset_d,
                n: self.sample_count_x,
                gain_warning: self.gain_warning,
            },
            Setting::P => LinearInference {
                setting,
                variance: self.var_inf_p,
                gain: self.gain_h,
                offset: self.offset_p,
                n: self.sample_count_p,
                gain_warning: self.gain_warning,
            },
        }
    }

    /// Largest of the two inference standard deviations.
    pub fn sigma(&self) -> f64 {
        self.delta_inf_x.max(self.delta_inf_p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn record_from_pairs(setting: Setting, pairs: &[(f64, f64)]) -> MeasurementRecord {
        MeasurementRecord::new(
            pairs
                .iter()
                .map(|&(a, b)| Slot {
                    alice: setting,
                    bob: setting,
                    alice_value: a,
                    bob_value: b,
                    eve: None,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn perfect_correlation_linear() {
        let pairs: Vec<(f64, f64)> = (0..50).map(|i| (i as f64 * 0.1, i as f64 * 0.1)).collect();
        let rec = record_from_pairs(Setting::X, &pairs);
        let li = linear_inference_variance(&rec, Setting::X).unwrap();
        assert!(li.variance < 1e-24);
        assert!((li.gain - 1.0).abs() < 1e-12);
    }

    #[test]
    fn p_setting_reports_positive_h_for_anticorrelation() {
        let pairs: Vec<(f64, f64)> = (0..50).map(|i| (-(i as f64), i as f64)).collect();
        let rec = record_from_pairs(Setting::P, &pairs);
        let li = linear_inference_variance(&rec, Setting::P).unwrap();
        assert!((li.gain - 1.0).abs() < 1e-12);
        assert!((li.estimate(3.0) + 3.0).abs() < 1e-9);
    }

    #[test]
    fn independent_noise_gives_zero_gain() {
        let mut rng = stream(2, Domain::Sampling, 0);
        let pairs: Vec<(f64, f64)> = (0..100_000)
            .map(|_| (2.0 * rng.sample::<f64, _>(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        let rec = record_from_pairs(Setting::X, &pairs);
        let li = linear_inference_variance(&rec, Setting::X).unwrap();
        assert!(li.gain.abs() < 0.02, "g = {}", li.gain);
        assert!((li.variance - 4.0).abs() < 0.08, "var = {}", li.variance);
    }

    #[test]
    fn linear_errors() {
        assert!(matches!(
            linear_inference_variance(&MeasurementRecord::default(), Setting::X),
            Err(Error::EmptyRecord)
        ));
        let rec = record_from_pairs(Setting::X, &[(1.0, 1.0)]);
        assert!(matches!(
            linear_inference_variance(&rec, Setting::X),
            Err(Error::InsufficientSlots { .. })
        ));
        assert!(matches!(
            linear_inference_variance(&rec, Setting::P),
            Err(Error::InsufficientSlots { found: 0, .. })
        ));
        let flat = record_from_pairs(Setting::X, &[(1.0, 2.0), (3.0, 2.0)]);
        let li = linear_inference_variance(&flat, Setting::X).unwrap();
        assert!(li.gain_warning);
        assert_eq!(li.gain, 0.0);
        assert!((li.variance - 1.0).abs() < 1e-12);
    }

    #[test]
    fn binned_of_identical_record_is_within_discretization() {
        let mut rng = stream(4, Domain::Sampling, 0);
        let pairs: Vec<(f64, f64)> = (0..20_000)
            .map(|_| {
                let v: f64 = rng.sample(StandardNormal);
                (v, v)
            })
            .collect();
        let rec = record_from_pairs(Setting::X, &pairs);
        let opts = BinningOptions::default();
        let bi = binned_inference_variance(&rec, Setting::X, &opts).unwrap();
        assert!(bi.variance <= opts.width.powi(2) / 12.0 * 1.05, "{}", bi.variance);
        assert!(bi.excluded_fraction > 0.0 && bi.excluded_fraction < 0.01);
    }

    #[test]
    fn binned_underpopulated() {
        let rec = record_from_pairs(Setting::X, &[(0.0, 0.0), (1.0, 5.0), (2.0, 10.0)]);
        assert!(matches!(
            binned_inference_variance(&rec, Setting::X, &BinningOptions::default()),
            Err(Error::AllBinsUnderpopulated { min_count: 20 })
        ));
        assert!(binned_inference_variance(
            &rec,
            Setting::X,
            &BinningOptions {
                width: 0.0,
                min_count: 1
            }
        )
        .is_err());
    }

    #[test]
    fn narrowness_examples() {
        let opts = BinningOptions {
            width: 0.5,
            min_count: 1,
        };
        // Alice exactly at the bin mean.
        let pairs: Vec<(f64, f64)> = (0..200)
            .map(|i| {
                let b = (i % 10) as f64;
                (3.0 * b, b + 0.1)
            })
            .collect();
        let rec = record_from_pairs(Setting::X, &pairs);
        let d = narrowness_delta(&rec, Setting::X, &opts, NarrownessConvention::default()).unwrap();
        assert_eq!(d, Some(0.0));

        // Uniform conditional of half-width 0.4 around μ = b.
        let mut rng = stream(9, Domain::Sampling, 0);
        let pairs: Vec<(f64, f64)> = (0..50_000)
            .map(|i| {
                let b = (i % 5) as f64;
                (b + rng.random_range(-0.4..0.4), b)
            })
            .collect();
        let rec = record_from_pairs(Setting::X, &pairs);
        let d = narrowness_delta(&rec, Setting::X, &opts, NarrownessConvention::default())
            .unwrap()
            .unwrap();
        assert!((d - 0.4).abs() < 0.01, "δ = {d}");

        // Wide conditionals: δ ≥ 1 is reported as unusable.
        let pairs: Vec<(f64, f64)> = (0..1000).map(|i| (((i * 7919) % 1000) as f64 / 100.0, 0.0)).collect();
        let rec = record_from_pairs(Setting::X, &pairs);
        assert_eq!(
            narrowness_delta(&rec, Setting::X, &opts, NarrownessConvention::default()).unwrap(),
            None
        );
    }

    #[test]
    fn gaussian_three_sigma_convention() {
        let mut rng = stream(10, Domain::Sampling, 0);
        let sigma = 1.0 / 3.0;
        let pairs: Vec<(f64, f64)> = (0..100_000)
            .map(|_| {
                let b: f64 = rng.sample(StandardNormal);
                (0.9 * b + sigma * rng.sample::<f64, _>(StandardNormal), b)
            })
            .collect();
        let opts = BinningOptions {
            width: 0.2,
            min_count: 2000,
        };
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let w = narrowness_width_pairs(&a, &b, &opts, NarrownessConvention::GaussianSigmas(3.0)).unwrap();
        // Largest per-bin std, inflated by the in-bin spread 0.9·0.2/√12.
        assert!((w - 1.0).abs() < 0.08, "δ = {w}");
    }

    #[test]
    fn criterion_examples() {
        let r = 1.0f64;
        let d = 1.0 / (2.0 * r).cosh().sqrt();
        let v = epr_criterion(d, d);
        assert!(v.satisfied);
        assert!((v.product - 0.2658).abs() < 1e-4);
        let v = epr_criterion(1.0, 1.0);
        assert_eq!(v.product, 1.0);
        assert!(!v.satisfied);
        let v = epr_criterion(0.5, 3.0);
        assert_eq!(v.product, 1.5);
        assert!(!v.satisfied);
    }

    #[test]
    fn csv_round_trip_and_validation() {
        let rec = MeasurementRecord::new(vec![
            Slot {
                alice: Setting::X,
                bob: Setting::P,
                alice_value: 0.25,
                bob_value: -1.5,
                eve: None,
            },
            Slot {
                alice: Setting::P,
                bob: Setting::P,
                alice_value: 1.0,
                bob_value: 2.0,
                eve: Some(EveReading {
                    angle: 0.3,
                    value: -0.75,
                }),
            },
        ])
        .unwrap();
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("alice_angle,bob_angle,alice_value,bob_value,eve_angle,eve_value\n"));
        let back = MeasurementRecord::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, rec);

        let plain = "alice_angle,bob_angle,alice_value,bob_value\n0,0,1.0,2.0\n";
        let rec = MeasurementRecord::read_csv(plain.as_bytes()).unwrap();
        assert_eq!(rec.len(), 1);
        assert!(rec.slots[0].eve.is_none());

        let bad = "alice_angle,bob_angle,alice_value,bob_value\n0.5,0,1.0,2.0\n";
        assert!(MeasurementRecord::read_csv(bad.as_bytes()).is_err());
        assert!(MeasurementRecord::new(vec![Slot {
            alice: Setting::X,
            bob: Setting::X,
            alice_value: f64::NAN,
            bob_value: 0.0,
            eve: None
        }])
        .is_err());
    }
}
