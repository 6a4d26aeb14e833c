//! Eavesdropping attacks on the honest two-mode source and Eve's best
//! Gaussian inference of Alice's results.
//!
//! Every attack is fixed before any measurement setting is drawn. Eve keeps
//! her modes until Alice announces her setting and then homodynes each of
//! them at the angle that minimizes her conditional variance of Alice's
//! announced quadrature.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::epr::Setting;
use crate::error::{Error, Result};
use crate::gaussian::{
    conditional_stats, pseudo_inverse, quadrature_block, ConditionalStats, GaussianState, Quadrature, StateDump,
    SymplecticOp,
};

/// Honest source layout: Alice on mode 0, Bob on mode 1.
pub const ALICE_MODE: usize = 0;
pub const BOB_MODE: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Alice,
    Bob,
}

/// Which beam a lossy tap sits on. `Both` uses two independent vacuum
/// ancillas; correlated ancillas need [`AttackSpec::SourceSubstitution`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "snake_case", deny_unknown_fields)]
pub enum TapChannel {
    Alice {
        transmissivity: f64,
    },
    Bob {
        transmissivity: f64,
    },
    Both {
        transmissivity_alice: f64,
        transmissivity_bob: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackSpec {
    #[default]
    None,
    /// Eve splits off part of a beam with a beamsplitter and keeps the
    /// reflected port; its other input is vacuum.
    BeamsplitterTap { channel: TapChannel },
    /// Eve couples a vacuum mode to a beam through the amplifying
    /// interaction `κ(a_E† b† + a_E b)`.
    ParametricTap { channel: Channel, kappa_t: f64 },
    /// Eve replaces the source with her own state; the listed modes go to
    /// Alice, Bob and Eve.
    SourceSubstitution {
        state: StateDump,
        alice_mode: usize,
        bob_mode: usize,
        eve_modes: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeMap {
    pub alice: usize,
    pub bob: usize,
    pub eve: Vec<usize>,
}

impl ModeMap {
    pub fn honest() -> Self {
        Self {
            alice: ALICE_MODE,
            bob: BOB_MODE,
            eve: Vec::new(),
        }
    }

    pub fn has_eve(&self) -> bool {
        !self.eve.is_empty()
    }

    fn validate(&self, n_modes: usize) -> Result<()> {
        let mut seen = vec![false; n_modes];
        for &m in std::iter::once(&self.alice)
            .chain(std::iter::once(&self.bob))
            .chain(&self.eve)
        {
            if m >= n_modes {
                return Err(Error::InvalidModeAssignment(format!(
                    "mode {m} does not exist in a {n_modes}-mode state"
                )));
            }
            if std::mem::replace(&mut seen[m], true) {
                return Err(Error::InvalidModeAssignment(format!("mode {m} assigned twice")));
            }
        }
        if let Some(m) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidModeAssignment(format!("mode {m} is not assigned to anyone")));
        }
        Ok(())
    }
}

fn channel_mode(channel: Channel) -> usize {
    match channel {
        Channel::Alice => ALICE_MODE,
        Channel::Bob => BOB_MODE,
    }
}

fn with_vacuum_ancillas(source: &GaussianState, count: usize) -> Result<GaussianState> {
    Ok(source.tensor(&GaussianState::vacuum(count)?))
}

/// Builds the joint Alice/Bob/Eve state produced by `spec`.
pub fn apply_attack(source: &GaussianState, spec: &AttackSpec) -> Result<(GaussianState, ModeMap)> {
    let require_honest_layout = || {
        if source.n_modes() == 2 {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: 2,
                actual: source.n_modes(),
            })
        }
    };
    match spec {
        AttackSpec::None => {
            require_honest_layout()?;
            Ok((source.clone(), ModeMap::honest()))
        }
        AttackSpec::BeamsplitterTap { channel } => {
            require_honest_layout()?;
            let taps: Vec<(usize, f64)> = match *channel {
                TapChannel::Alice { transmissivity } => vec![(ALICE_MODE, transmissivity)],
                TapChannel::Bob { transmissivity } => vec![(BOB_MODE, transmissivity)],
                TapChannel::Both {
                    transmissivity_alice,
                    transmissivity_bob,
                } => vec![(ALICE_MODE, transmissivity_alice), (BOB_MODE, transmissivity_bob)],
            };
            let mut state = with_vacuum_ancillas(source, taps.len())?;
            let n = state.n_modes();
            let mut eve = Vec::new();
            for (k, &(mode, t)) in taps.iter().enumerate() {
                let ancilla = 2 + k;
                state = state.apply(&SymplecticOp::beamsplitter(n, t, mode, ancilla)?)?;
                eve.push(ancilla);
            }
            Ok((
                state,
                ModeMap {
                    alice: ALICE_MODE,
                    bob: BOB_MODE,
                    eve,
                },
            ))
        }
        AttackSpec::ParametricTap { channel, kappa_t } => {
            require_honest_layout()?;
            let state = with_vacuum_ancillas(source, 1)?;
            let op = SymplecticOp::parametric_coupling(3, *kappa_t, 2, channel_mode(*channel))?;
            Ok((
                state.apply(&op)?,
                ModeMap {
                    alice: ALICE_MODE,
                    bob: BOB_MODE,
                    eve: vec![2],
                },
            ))
        }
        AttackSpec::SourceSubstitution {
            state,
            alice_mode,
            bob_mode,
            eve_modes,
        } => {
            let state = GaussianState::from_dump(state)?;
            if state.n_modes() < 3 {
                return Err(Error::InvalidModeAssignment(format!(
                    "a substituted source needs at least 3 modes, got {}",
                    state.n_modes()
                )));
            }
            let map = ModeMap {
                alice: *alice_mode,
                bob: *bob_mode,
                eve: eve_modes.clone(),
            };
            map.validate(state.n_modes())?;
            Ok((state, map))
        }
    }
}

/// Eve's optimized homodyne measurement for one announced setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EveMeasurement {
    /// Alice's announced setting Eve is inferring.
    pub target: Setting,
    /// One quadrature per Eve mode, angles in `[0, π)`.
    pub quadratures: Vec<Quadrature>,
    /// Regression of Alice's quadrature on Eve's outcomes.
    pub stats: ConditionalStats,
}

impl EveMeasurement {
    /// `(Δ^E)²`, Eve's conditional variance of Alice's value.
    pub fn residual_variance(&self) -> f64 {
        self.stats.residual_variance
    }

    /// Eve's estimate of Alice's value: the conditional mean.
    pub fn estimate(&self, outcomes: &[f64]) -> f64 {
        self.stats.predict(outcomes)
    }
}

/// Best angle for `candidate_mode` given Eve's other, already fixed
/// quadratures. Returns `None` when the mode carries no information.
fn best_angle_given(
    state: &GaussianState,
    target: Quadrature,
    candidate_mode: usize,
    fixed: &[Quadrature],
) -> Option<f64> {
    let mut quads = vec![target, Quadrature::x(candidate_mode), Quadrature::p(candidate_mode)];
    quads.extend_from_slice(fixed);
    let block = quadrature_block(state, &quads);
    let k = fixed.len();
    // Schur complement of the fixed quadratures.
    let head = block.view((0, 0), (3, 3)).into_owned();
    let conditioned = if k == 0 {
        head
    } else {
        let cross = block.view((0, 3), (3, k)).into_owned();
        let fixed_block = block.view((3, 3), (k, k)).into_owned();
        head - &cross * pseudo_inverse(&fixed_block) * cross.transpose()
    };
    let c = nalgebra::Vector2::new(conditioned[(1, 0)], conditioned[(2, 0)]);
    let g = nalgebra::Matrix2::new(
        conditioned[(1, 1)],
        conditioned[(1, 2)],
        conditioned[(2, 1)],
        conditioned[(2, 2)],
    );
    if c.norm() < 1e-14 * conditioned[(0, 0)].abs().max(1.0) {
        return None;
    }
    // max over u of (cᵀu)²/(uᵀGu) is attained at u ∝ G⁻¹c.
    let u = g.try_inverse().map(|gi| gi * c).unwrap_or(c);
    Some(u[1].atan2(u[0]).rem_euclid(PI))
}

/// Eve's optimal commuting homodyne measurement on all her modes.
///
/// A single Eve mode is solved in closed form (a generalized Rayleigh
/// quotient over the rotation angle). Several modes are optimized by
/// coordinate ascent, each step solving one mode exactly given the others,
/// which never increases the residual.
pub fn eve_conditional_quality(state: &GaussianState, map: &ModeMap, announced: Setting) -> Result<EveMeasurement> {
    if map.eve.is_empty() {
        return Err(Error::NoEveModes);
    }
    let target = announced.quadrature(map.alice);
    let mut quads: Vec<Quadrature> = map.eve.iter().map(|&m| Quadrature::x(m)).collect();
    let mut best = conditional_stats(state, target, &quads)?;
    let sweeps = if quads.len() == 1 { 1 } else { 200 };
    for _ in 0..sweeps {
        let before = best.residual_variance;
        for k in 0..quads.len() {
            let others: Vec<Quadrature> = quads
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != k)
                .map(|(_, q)| *q)
                .collect();
            if let Some(angle) = best_angle_given(state, target, quads[k].mode, &others) {
                let mut trial = quads.clone();
                trial[k].angle = angle;
                let stats = conditional_stats(state, target, &trial)?;
                if stats.residual_variance <= best.residual_variance {
                    quads = trial;
                    best = stats;
                }
            }
        }
        if before - best.residual_variance <= 1e-15 * before.max(1.0) {
            break;
        }
    }
    Ok(EveMeasurement {
        target: announced,
        quadratures: quads,
        stats: best,
    })
}

/// Grid search over a single Eve mode's angle on `[0, π)`; with 360 points
/// the resolution is 0.5°. Returns the best angle and residual variance.
pub fn eve_angle_grid(state: &GaussianState, map: &ModeMap, announced: Setting, points: usize) -> Result<(f64, f64)> {
    let &[mode] = map.eve.as_slice() else {
        return Err(if map.eve.is_empty() {
            Error::NoEveModes
        } else {
            Error::InvalidModeAssignment("grid search handles exactly one Eve mode".into())
        });
    };
    let target = announced.quadrature(map.alice);
    let mut best = (0.0, f64::INFINITY);
    for i in 0..points.max(1) {
        let angle = PI * i as f64 / points.max(1) as f64;
        let v = conditional_stats(state, target, &[Quadrature::new(mode, angle)])?.residual_variance;
        if v < best.1 {
            best = (angle, v);
        }
    }
    Ok(best)
}

/// Alice's quadrature regressed on Bob's at the same setting.
pub fn alice_bob_conditional(state: &GaussianState, map: &ModeMap, setting: Setting) -> Result<ConditionalStats> {
    conditional_stats(
        state,
        setting.quadrature(map.alice),
        &[setting.quadrature(map.bob)],
    )
}

/// Analytic inference variances of Bob and Eve for both settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InformationTradeoff {
    pub bob_var_x: f64,
    pub bob_var_p: f64,
    pub eve_var_x: f64,
    pub eve_var_p: f64,
}

impl InformationTradeoff {
    pub fn evaluate(state: &GaussianState, map: &ModeMap) -> Result<Self> {
        Ok(Self {
            bob_var_x: alice_bob_conditional(state, map, Setting::X)?.residual_variance,
            bob_var_p: alice_bob_conditional(state, map, Setting::P)?.residual_variance,
            eve_var_x: eve_conditional_quality(state, map, Setting::X)?.residual_variance(),
            eve_var_p: eve_conditional_quality(state, map, Setting::P)?.residual_variance(),
        })
    }

    /// `Δ_inf x · Δ^E_inf p`; at least 1 for every physical state.
    pub fn product_xp(&self) -> f64 {
        (self.bob_var_x * self.eve_var_p).sqrt()
    }

    /// `Δ_inf p · Δ^E_inf x`.
    pub fn product_px(&self) -> f64 {
        (self.bob_var_p * self.eve_var_x).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmsv(r: f64) -> GaussianState {
        GaussianState::vacuum(2)
            .unwrap()
            .apply(&SymplecticOp::two_mode_squeezer(2, r, 0, 1).unwrap())
            .unwrap()
    }

    fn bob_tap(t: f64) -> AttackSpec {
        AttackSpec::BeamsplitterTap {
            channel: TapChannel::Bob { transmissivity: t },
        }
    }

    #[test]
    fn no_attack_is_identity() {
        let s = tmsv(0.7);
        let (out, map) = apply_attack(&s, &AttackSpec::None).unwrap();
        assert_eq!(out, s);
        assert_eq!(map, ModeMap::honest());
        assert!(eve_conditional_quality(&out, &map, Setting::X).is_err());
    }

    #[test]
    fn full_transmission_tap_leaves_eve_in_vacuum() {
        let r = 1.0;
        let s = tmsv(r);
        let (out, map) = apply_attack(&s, &bob_tap(1.0)).unwrap();
        assert_eq!(out.reduced(&[2]).unwrap(), GaussianState::vacuum(1).unwrap());
        assert!((out.reduced(&[0, 1]).unwrap().cov() - s.cov()).amax() < 1e-12);
        let eve = eve_conditional_quality(&out, &map, Setting::P).unwrap();
        assert!((eve.residual_variance() - (2.0 * r).cosh()).abs() < 1e-12);
    }

    #[test]
    fn zero_transmission_gives_eve_bobs_beam() {
        let r = 0.8;
        let (out, map) = apply_attack(&tmsv(r), &bob_tap(0.0)).unwrap();
        for setting in Setting::BOTH {
            let eve = eve_conditional_quality(&out, &map, setting).unwrap();
            assert!((eve.residual_variance() - 1.0 / (2.0 * r).cosh()).abs() < 1e-12);
        }
    }

    #[test]
    fn half_tap_example() {
        let (out, map) = apply_attack(&tmsv(1.0), &bob_tap(0.5)).unwrap();
        let ab = alice_bob_conditional(&out, &map, Setting::X).unwrap();
        assert!((ab.residual_variance - 1.0).abs() < 1e-12);
    }

    // cosh 2r − T sinh² 2r / (T cosh 2r + 1 − T), worked by hand from the
    // 3-mode covariance.
    #[test]
    fn tap_residual_formula() {
        let r = 0.6f64;
        let (c, s) = ((2.0 * r).cosh(), (2.0 * r).sinh());
        for t in [0.1, 0.35, 0.8] {
            let (out, map) = apply_attack(&tmsv(r), &bob_tap(t)).unwrap();
            let ab = alice_bob_conditional(&out, &map, Setting::X).unwrap();
            let want = c - t * s * s / (t * c + 1.0 - t);
            assert!((ab.residual_variance - want).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_form_angle_matches_grid() {
        for spec in [
            bob_tap(0.3),
            AttackSpec::ParametricTap {
                channel: Channel::Bob,
                kappa_t: 0.6,
            },
        ] {
            let (out, map) = apply_attack(&tmsv(1.0), &spec).unwrap();
            for setting in Setting::BOTH {
                let eve = eve_conditional_quality(&out, &map, setting).unwrap();
                let (_, grid) = eve_angle_grid(&out, &map, setting, 360).unwrap();
                assert!(eve.residual_variance() <= grid + 1e-12);
                assert!(grid - eve.residual_variance() < 1e-3);
            }
        }
    }

    #[test]
    fn rotated_eve_mode_is_found() {
        // Rotate Eve's mode by an odd angle: the optimizer must undo it.
        let (out, map) = apply_attack(&tmsv(1.0), &bob_tap(0.2)).unwrap();
        let rotated = out
            .apply(&SymplecticOp::phase_rotation(3, 0.37, 2).unwrap())
            .unwrap();
        for setting in Setting::BOTH {
            let a = eve_conditional_quality(&out, &map, setting).unwrap();
            let b = eve_conditional_quality(&rotated, &map, setting).unwrap();
            assert!((a.residual_variance() - b.residual_variance()).abs() < 1e-12);
        }
    }

    #[test]
    fn both_channel_tap_uses_two_ancillas() {
        let spec = AttackSpec::BeamsplitterTap {
            channel: TapChannel::Both {
                transmissivity_alice: 0.7,
                transmissivity_bob: 0.6,
            },
        };
        let (out, map) = apply_attack(&tmsv(1.0), &spec).unwrap();
        assert_eq!(out.n_modes(), 4);
        assert_eq!(map.eve, vec![2, 3]);
        assert!(out.is_physical());
        let tr = InformationTradeoff::evaluate(&out, &map).unwrap();
        assert!(tr.product_xp() >= 1.0 - 1e-9);
        assert!(tr.product_px() >= 1.0 - 1e-9);
        // Two modes beat either one alone.
        let single = ModeMap {
            eve: vec![3],
            ..map.clone()
        };
        let joint = eve_conditional_quality(&out, &map, Setting::P).unwrap();
        let one = eve_conditional_quality(&out, &single, Setting::P).unwrap();
        assert!(joint.residual_variance() <= one.residual_variance() + 1e-12);
    }

    #[test]
    fn tradeoff_on_attack_grid() {
        for r in [0.5, 1.0] {
            for i in 1..=9 {
                let (out, map) = apply_attack(&tmsv(r), &bob_tap(i as f64 / 10.0)).unwrap();
                let tr = InformationTradeoff::evaluate(&out, &map).unwrap();
                assert!(tr.product_xp() >= 1.0 - 1e-9, "T = {}, {}", i, tr.product_xp());
                assert!(tr.product_px() >= 1.0 - 1e-9);
            }
        }
    }

    #[test]
    fn substitution_with_vacuum_eve_matches_honest() {
        let s = tmsv(0.9);
        let spec = AttackSpec::SourceSubstitution {
            state: s.tensor(&GaussianState::vacuum(1).unwrap()).to_dump(),
            alice_mode: 0,
            bob_mode: 1,
            eve_modes: vec![2],
        };
        let (out, map) = apply_attack(&s, &spec).unwrap();
        let (honest, honest_map) = apply_attack(&s, &AttackSpec::None).unwrap();
        for setting in Setting::BOTH {
            let a = alice_bob_conditional(&out, &map, setting).unwrap();
            let b = alice_bob_conditional(&honest, &honest_map, setting).unwrap();
            assert!((a.residual_variance - b.residual_variance).abs() < 1e-12);
        }
    }

    #[test]
    fn malformed_substitutions_rejected() {
        let s3 = GaussianState::vacuum(3).unwrap().to_dump();
        let bad = [
            (s3.clone(), 0, 0, vec![2]),
            (s3.clone(), 0, 1, vec![3]),
            (s3.clone(), 0, 1, vec![]),
            (GaussianState::vacuum(2).unwrap().to_dump(), 0, 1, vec![]),
        ];
        for (state, alice_mode, bob_mode, eve_modes) in bad {
            let spec = AttackSpec::SourceSubstitution {
                state,
                alice_mode,
                bob_mode,
                eve_modes,
            };
            assert!(matches!(
                apply_attack(&tmsv(0.5), &spec),
                Err(Error::InvalidModeAssignment(_))
            ));
        }
    }

    #[test]
    fn attack_spec_json_shape() {
        let spec = bob_tap(0.5);
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(
            json,
            r#"{"kind":"beamsplitter_tap","channel":{"target":"bob","transmissivity":0.5}}"#
        );
        let unknown = r#"{"kind":"parametric_tap","channel":"bob","kappa_t":0.3,"extra":1}"#;
        assert!(serde_json::from_str::<AttackSpec>(unknown).is_err());
        let none: AttackSpec = serde_json::from_str(r#"{"kind":"none"}"#).unwrap();
        assert_eq!(none, AttackSpec::None);
    }
}
