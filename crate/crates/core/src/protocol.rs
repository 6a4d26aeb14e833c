//! One protocol session end to end.
//!
//! A session emits squeezed pairs, lets Alice and Bob pick their settings
//! only after transmission, keeps the slots where the settings agree, spends
//! a random part of those on the EPR check and turns the rest into keys.
//! The keys then encrypt a message on a grid of spacing `6Aσ`.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::epr::{BinningOptions, EprOptions, EprStatistics, EveReading, MeasurementRecord, Setting, Slot};
use crate::error::{ensure_finite, Error, Result};
use crate::eve::{apply_attack, eve_conditional_quality, AttackSpec, EveMeasurement, ModeMap};
use crate::gaussian::{GaussianState, QuadratureSampler, SymplecticOp};
use crate::rng::{stream, Domain};

/// Slots per RNG stream. Fixed so results do not depend on thread count.
pub const CHUNK_SLOTS: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub n_slots: usize,
    pub squeeze_r: f64,
    pub attack: AttackSpec,
    /// Share of sifted slots diverted to the EPR check.
    pub subensemble_fraction: f64,
    pub seed: u64,
    #[serde(alias = "amplification_A")]
    pub amplification_a: f64,
    pub message_length: usize,
    /// The message alphabet is the `2K + 1` grid points `k·6Aσ`, `|k| ≤ K`.
    pub alphabet_half_width: u32,
    pub bin_width: f64,
    pub min_bin_count: usize,
    pub bootstrap_resamples: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            n_slots: 100_000,
            squeeze_r: 1.0,
            attack: AttackSpec::None,
            subensemble_fraction: 0.5,
            seed: 0,
            amplification_a: 1.0,
            message_length: 10_000,
            alphabet_half_width: 4,
            bin_width: 0.2,
            min_bin_count: 20,
            bootstrap_resamples: 200,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_finite(self.squeeze_r, "squeeze_r")?;
        ensure_finite(self.subensemble_fraction, "subensemble_fraction")?;
        ensure_finite(self.amplification_a, "amplification_a")?;
        ensure_finite(self.bin_width, "bin_width")?;
        let out_of_range = |name, value, range| Err(Error::OutOfRange { name, value, range });
        if self.squeeze_r < 0.0 {
            return out_of_range("squeeze_r", self.squeeze_r, "[0, ∞)");
        }
        if !(self.subensemble_fraction > 0.0 && self.subensemble_fraction < 1.0) {
            return out_of_range("subensemble_fraction", self.subensemble_fraction, "(0, 1)");
        }
        if self.amplification_a <= 0.0 {
            return out_of_range("amplification_a", self.amplification_a, "(0, ∞)");
        }
        if self.bin_width <= 0.0 {
            return out_of_range("bin_width", self.bin_width, "(0, ∞)");
        }
        if self.n_slots == 0 {
            return out_of_range("n_slots", 0.0, "[1, ∞)");
        }
        if self.message_length == 0 {
            return out_of_range("message_length", 0.0, "[1, ∞)");
        }
        if self.alphabet_half_width == 0 {
            return out_of_range("alphabet_half_width", 0.0, "[1, ∞)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Party {
    Alice,
    Bob,
    Eve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeySequence {
    pub owner: Party,
    pub values: Vec<f64>,
}

/// Message grid: points `origin + k·spacing` with `spacing = 6Aσ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinningScheme {
    pub sigma: f64,
    pub amplification_a: f64,
    pub spacing: f64,
    pub grid_origin: f64,
    pub alphabet_half_width: u32,
}

impl BinningScheme {
    pub fn new(sigma: f64, amplification_a: f64, alphabet_half_width: u32) -> Result<Self> {
        ensure_finite(sigma, "sigma")?;
        ensure_finite(amplification_a, "amplification_a")?;
        if sigma <= 0.0 || amplification_a <= 0.0 {
            return Err(Error::OutOfRange {
                name: if sigma <= 0.0 { "sigma" } else { "amplification_a" },
                value: sigma.min(amplification_a),
                range: "(0, ∞)",
            });
        }
        Ok(Self {
            sigma,
            amplification_a,
            spacing: 6.0 * amplification_a * sigma,
            grid_origin: 0.0,
            alphabet_half_width,
        })
    }

    pub fn point(&self, k: i64) -> f64 {
        self.grid_origin + k as f64 * self.spacing
    }

    /// Grid index of `z`, if `z` lies on the lattice.
    pub fn index_of(&self, z: f64) -> Option<i64> {
        let t = (z - self.grid_origin) / self.spacing;
        let k = t.round();
        ((t - k).abs() <= 1e-9 * k.abs().max(1.0)).then_some(k as i64)
    }

    /// Nearest lattice index, ties toward −∞.
    pub fn nearest_index(&self, value: f64) -> i64 {
        ((value - self.grid_origin) / self.spacing - 0.5).ceil() as i64
    }

    pub fn in_alphabet(&self, k: i64) -> bool {
        k.unsigned_abs() <= u64::from(self.alphabet_half_width)
    }
}

/// `y_m = z_m + A·η_m`. Every `z_m` must be a grid point of the alphabet.
pub fn encode_message(z: &[f64], key: &KeySequence, scheme: &BinningScheme) -> Result<Vec<f64>> {
    if z.len() > key.values.len() {
        return Err(Error::LengthMismatch {
            left: z.len(),
            right: key.values.len(),
        });
    }
    z.iter()
        .zip(&key.values)
        .map(|(&z, &eta)| match scheme.index_of(z) {
            Some(k) if scheme.in_alphabet(k) => Ok(z + scheme.amplification_a * eta),
            _ => Err(Error::OffGrid {
                value: z,
                spacing: scheme.spacing,
            }),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoded {
    /// `y_m − A·η_m`.
    pub raw: Vec<f64>,
    /// Nearest lattice point to each raw value. Points outside the
    /// alphabet are kept; they can only be errors.
    pub z_estimates: Vec<f64>,
    pub indices: Vec<i64>,
}

pub fn decode_message(y: &[f64], key: &KeySequence, scheme: &BinningScheme) -> Result<Decoded> {
    if y.len() > key.values.len() {
        return Err(Error::LengthMismatch {
            left: y.len(),
            right: key.values.len(),
        });
    }
    let raw: Vec<f64> = y
        .iter()
        .zip(&key.values)
        .map(|(&y, &eta)| y - scheme.amplification_a * eta)
        .collect();
    let indices: Vec<i64> = raw.iter().map(|&r| scheme.nearest_index(r)).collect();
    Ok(Decoded {
        z_estimates: indices.iter().map(|&k| scheme.point(k)).collect(),
        raw,
        indices,
    })
}

/// Decoding quality for one receiver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeReport {
    pub error_rate: f64,
    /// `√⟨(z − z_raw)²⟩`.
    pub rms: f64,
    /// `√⟨(η − η_receiver)²⟩` over the message slots.
    pub key_rms: f64,
    /// `z_raw − z` per symbol; equals `A·(η − η_receiver)`.
    pub deviations: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredRates {
    pub bob_error_rate: f64,
    pub eve_error_rate: Option<f64>,
    pub bob_rms: f64,
    pub eve_rms: Option<f64>,
    /// `⟨(z − z_Bob)²⟩ = A²⟨(η − η_Bob)²⟩` held to rounding.
    pub identity_holds: bool,
}

fn decode_report(message: &[f64], alice: &KeySequence, other: &KeySequence, scheme: &BinningScheme) -> Result<DecodeReport> {
    let y = encode_message(message, alice, scheme)?;
    let decoded = decode_message(&y, other, scheme)?;
    let m = message.len().max(1) as f64;
    let mut errors = 0usize;
    let (mut sq, mut key_sq) = (0.0, 0.0);
    let mut deviations = Vec::with_capacity(message.len());
    for (i, &z) in message.iter().enumerate() {
        let k_true = scheme.index_of(z).expect("encode checked grid membership");
        if decoded.indices[i] != k_true {
            errors += 1;
        }
        let d = decoded.raw[i] - z;
        sq += d * d;
        key_sq += (alice.values[i] - other.values[i]).powi(2);
        deviations.push(d);
    }
    Ok(DecodeReport {
        error_rate: errors as f64 / m,
        rms: (sq / m).sqrt(),
        key_rms: (key_sq / m).sqrt(),
        deviations,
    })
}

/// Error rates and rms deviations of Bob's and Eve's decodings of
/// `true_message`.
pub fn measure_error_rates(transcript: &SessionTranscript, true_message: &[f64]) -> Result<MeasuredRates> {
    let scheme = &transcript.scheme;
    let bob = decode_report(true_message, &transcript.keys.alice, &transcript.keys.bob, scheme)?;
    let eve = transcript
        .keys
        .eve
        .as_ref()
        .map(|k| decode_report(true_message, &transcript.keys.alice, k, scheme))
        .transpose()?;
    let a = scheme.amplification_a;
    let identity_holds = (bob.rms - a * bob.key_rms).abs() <= 1e-9 * bob.rms.max(1.0);
    Ok(MeasuredRates {
        bob_error_rate: bob.error_rate,
        eve_error_rate: eve.as_ref().map(|e| e.error_rate),
        bob_rms: bob.rms,
        eve_rms: eve.as_ref().map(|e| e.rms),
        identity_holds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keys {
    pub alice: KeySequence,
    pub bob: KeySequence,
    pub eve: Option<KeySequence>,
    /// Setting of each key slot.
    pub settings: Vec<Setting>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncryptionResults {
    pub message: Vec<f64>,
    pub sent: Vec<f64>,
    pub bob: DecodeReport,
    pub eve: Option<DecodeReport>,
    pub bob_error_rate: f64,
    pub eve_error_rate: Option<f64>,
    pub identity_holds: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiftCounts {
    pub n_slots: usize,
    pub n_sifted: usize,
    pub n_subensemble: usize,
    pub n_key: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTranscript {
    pub config: SessionConfig,
    pub counts: SiftCounts,
    pub mode_map: ModeMap,
    /// Eve's chosen measurement for each announced setting (X then P).
    pub eve_measurements: Vec<EveMeasurement>,
    /// The check subensemble.
    pub record: MeasurementRecord,
    pub epr_stats: EprStatistics,
    pub scheme: BinningScheme,
    pub keys: Keys,
    pub encryption_results: EncryptionResults,
}

pub fn two_mode_squeezed_vacuum(r: f64) -> Result<GaussianState> {
    GaussianState::vacuum(2)?.apply(&SymplecticOp::two_mode_squeezer(2, r, 0, 1)?)
}

/// Joint sampler for one `(Alice setting, Bob setting)` pair; Eve's
/// quadratures are chosen for Alice's setting.
struct SettingSampler {
    sampler: QuadratureSampler,
    eve: Option<EveMeasurement>,
}

struct EmittedSlot {
    slot: Slot,
    /// Eve's estimate of Alice's value; `None` without Eve.
    eve_estimate: Option<f64>,
}

fn setting_index(alice: Setting, bob: Setting) -> usize {
    2 * (alice == Setting::P) as usize + (bob == Setting::P) as usize
}

fn build_samplers(state: &GaussianState, map: &ModeMap) -> Result<(Vec<SettingSampler>, Vec<EveMeasurement>)> {
    let eve: Vec<EveMeasurement> = if map.has_eve() {
        Setting::BOTH
            .into_iter()
            .map(|s| eve_conditional_quality(state, map, s))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let mut samplers = Vec::with_capacity(4);
    for alice in Setting::BOTH {
        for bob in Setting::BOTH {
            let eve_m = eve.get((alice == Setting::P) as usize).cloned();
            let mut quads = vec![alice.quadrature(map.alice), bob.quadrature(map.bob)];
            if let Some(e) = &eve_m {
                quads.extend_from_slice(&e.quadratures);
            }
            samplers.push(SettingSampler {
                sampler: QuadratureSampler::new(state, &quads)?,
                eve: eve_m,
            });
        }
    }
    Ok((samplers, eve))
}

fn emit_chunk(seed: u64, chunk: usize, len: usize, samplers: &[SettingSampler]) -> Vec<EmittedSlot> {
    let mut rng = stream(seed, Domain::Slots, chunk as u64);
    let mut buf = vec![0.0; samplers[0].sampler.len()];
    (0..len)
        .map(|_| {
            let alice = if rng.random_bool(0.5) { Setting::P } else { Setting::X };
            let bob = if rng.random_bool(0.5) { Setting::P } else { Setting::X };
            let s = &samplers[setting_index(alice, bob)];
            s.sampler.sample_into(&mut rng, &mut buf);
            let (eve, eve_estimate) = match &s.eve {
                Some(e) => (
                    Some(EveReading {
                        angle: e.quadratures[0].angle,
                        value: buf[2],
                    }),
                    Some(e.estimate(&buf[2..])),
                ),
                None => (None, None),
            };
            EmittedSlot {
                slot: Slot {
                    alice,
                    bob,
                    alice_value: buf[0],
                    bob_value: buf[1],
                    eve,
                },
                eve_estimate,
            }
        })
        .collect()
}

/// Runs a full session. Fails, without panicking, when sifting leaves too
/// few slots for the check and the key.
pub fn run_session(config: &SessionConfig) -> Result<SessionTranscript> {
    config.validate()?;
    let source = two_mode_squeezed_vacuum(config.squeeze_r)?;
    // The attack is fixed before any setting is drawn.
    let (state, map) = apply_attack(&source, &config.attack)?;
    let (samplers, eve_measurements) = build_samplers(&state, &map)?;

    let n_chunks = config.n_slots.div_ceil(CHUNK_SLOTS);
    let emitted: Vec<EmittedSlot> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let len = CHUNK_SLOTS.min(config.n_slots - c * CHUNK_SLOTS);
            emit_chunk(config.seed, c, len, &samplers)
        })
        .flatten_iter()
        .collect();

    let sifted: Vec<&EmittedSlot> = emitted.iter().filter(|e| e.slot.is_matched()).collect();
    let n_sifted = sifted.len();
    if n_sifted < 2 {
        return Err(Error::SessionFailed(format!("only {n_sifted} slots survived sifting")));
    }
    let n_sub = ((config.subensemble_fraction * n_sifted as f64).round() as usize).clamp(1, n_sifted - 1);
    let mut rng = stream(config.seed, Domain::Subensemble, 0);
    let mut in_sub = vec![false; n_sifted];
    for i in index::sample(&mut rng, n_sifted, n_sub) {
        in_sub[i] = true;
    }
    let (sub, key): (Vec<_>, Vec<_>) =
        sifted.iter().enumerate().partition(|(i, _)| in_sub[*i]);

    let record = MeasurementRecord::new(sub.iter().map(|(_, e)| e.slot).collect())?;
    let opts = EprOptions {
        binning: BinningOptions {
            width: config.bin_width,
            min_count: config.min_bin_count,
        },
        bootstrap_resamples: config.bootstrap_resamples,
        seed: config.seed,
        ..Default::default()
    };
    let epr_stats = EprStatistics::from_record(&record, &opts)
        .map_err(|e| Error::SessionFailed(format!("subensemble statistics unavailable: {e}")))?;

    let settings: Vec<Setting> = key.iter().map(|(_, e)| e.slot.alice).collect();
    let alice = KeySequence {
        owner: Party::Alice,
        values: key.iter().map(|(_, e)| e.slot.alice_value).collect(),
    };
    let bob = KeySequence {
        owner: Party::Bob,
        values: key
            .iter()
            .map(|(_, e)| epr_stats.linear(e.slot.bob).estimate(e.slot.bob_value))
            .collect(),
    };
    let eve = map.has_eve().then(|| KeySequence {
        owner: Party::Eve,
        values: key.iter().map(|(_, e)| e.eve_estimate.expect("Eve present")).collect(),
    });
    let keys = Keys {
        alice,
        bob,
        eve,
        settings,
    };

    let sigma = epr_stats.sigma();
    let scheme = BinningScheme::new(
        if sigma > 0.0 { sigma } else { f64::MIN_POSITIVE },
        config.amplification_a,
        config.alphabet_half_width,
    )?;
    let m = config.message_length.min(key.len());
    let k = i64::from(config.alphabet_half_width);
    let mut rng = stream(config.seed, Domain::Message, 0);
    let message: Vec<f64> = (0..m).map(|_| scheme.point(rng.random_range(-k..=k))).collect();

    let sent = encode_message(&message, &keys.alice, &scheme)?;
    let bob_report = decode_report(&message, &keys.alice, &keys.bob, &scheme)?;
    let eve_report = keys
        .eve
        .as_ref()
        .map(|e| decode_report(&message, &keys.alice, e, &scheme))
        .transpose()?;
    let a = scheme.amplification_a;
    let encryption_results = EncryptionResults {
        bob_error_rate: bob_report.error_rate,
        eve_error_rate: eve_report.as_ref().map(|r| r.error_rate),
        identity_holds: (bob_report.rms - a * bob_report.key_rms).abs() <= 1e-9 * bob_report.rms.max(1.0),
        message,
        sent,
        bob: bob_report,
        eve: eve_report,
    };

    Ok(SessionTranscript {
        config: config.clone(),
        counts: SiftCounts {
            n_slots: config.n_slots,
            n_sifted,
            n_subensemble: sub.len(),
            n_key: key.len(),
        },
        mode_map: map,
        eve_measurements,
        record,
        epr_stats,
        scheme,
        keys,
        encryption_results,
    })
}
