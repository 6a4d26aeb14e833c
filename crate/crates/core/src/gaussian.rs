//! Gaussian-state kernel.
//!
//! Quadratures follow `X = a + a†`, `P = (a − a†)/i`, so `[X, P] = 2i` and the
//! vacuum has unit variance in both. The phase-space vector is ordered
//! `(X₁, P₁, X₂, P₂, …)`. With `Ω = ⊕ [[0, 1], [−1, 0]]` a covariance matrix
//! `V` is physical iff `V + iΩ ⪰ 0`, which the vacuum (`V = I`) saturates.
//!
//! Symplectic maps act in the Heisenberg picture: `r ↦ S r + d`, so states
//! transform as `V ↦ S V Sᵀ`, `μ ↦ S μ + d`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, TAU};

use crate::error::{ensure_finite, Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative tolerance for covariance symmetry.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Lowest eigenvalue of `cov + iΩ` still accepted as physical.
pub const PHYSICALITY_TOL: f64 = 1e-9;
/// Singular values below `PINV_CUTOFF · max(1, σ_max)` are treated as zero.
pub const PINV_CUTOFF: f64 = 1e-12;
/// Tolerance for `SᵀΩS = Ω`.
pub const SYMPLECTIC_TOL: f64 = 1e-9;

/// Symplectic form for `n_modes` modes.
pub fn symplectic_form(n_modes: usize) -> Matrix {
    let mut omega = Matrix::zeros(2 * n_modes, 2 * n_modes);
    for m in 0..n_modes {
        omega[(2 * m, 2 * m + 1)] = 1.0;
        omega[(2 * m + 1, 2 * m)] = -1.0;
    }
    omega
}

/// A rotated quadrature `cos θ · X + sin θ · P` on one mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quadrature {
    pub mode: usize,
    pub angle: f64,
}

impl Quadrature {
    pub fn new(mode: usize, angle: f64) -> Self {
        Self { mode, angle }
    }

    pub fn x(mode: usize) -> Self {
        Self::new(mode, 0.0)
    }

    pub fn p(mode: usize) -> Self {
        Self::new(mode, FRAC_PI_2)
    }

    /// Linear functional on phase space picking out this quadrature.
    pub fn functional(&self, n_modes: usize) -> Vector {
        let mut u = Vector::zeros(2 * n_modes);
        u[2 * self.mode] = self.angle.cos();
        u[2 * self.mode + 1] = self.angle.sin();
        u
    }

    /// Two quadratures commute iff they live on different modes or are the
    /// same observable up to sign.
    pub fn commutes_with(&self, other: &Quadrature) -> bool {
        self.mode != other.mode || (self.angle - other.angle).sin().abs() < 1e-12
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomodyneOutcome {
    pub value: f64,
    pub mode: usize,
    /// Local-oscillator phase in `[0, 2π)`; 0 reads X, π/2 reads P.
    pub angle: f64,
}

/// JSON-friendly form of a state: covariance flattened row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateDump {
    pub n_modes: usize,
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    mean: Vector,
    cov: Matrix,
}

impl GaussianState {
    /// Validates dimensions, symmetry and the uncertainty principle.
    pub fn new(mean: Vector, cov: Matrix) -> Result<Self> {
        let dim = mean.len();
        if dim == 0 {
            return Err(Error::ZeroModes);
        }
        if !dim.is_multiple_of(2) {
            return Err(Error::DimensionMismatch {
                expected: dim + 1,
                actual: dim,
            });
        }
        if cov.nrows() != dim || cov.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: cov.nrows().max(cov.ncols()),
            });
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("state entries"));
        }
        let scale = cov.amax().max(1.0);
        let asym = (&cov - cov.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::NotSymmetric(asym));
        }
        let state = Self {
            mean,
            cov: symmetrize(cov),
        };
        let margin = state.physicality_margin();
        if margin < -PHYSICALITY_TOL * scale {
            return Err(Error::Unphysical(margin));
        }
        Ok(state)
    }

    pub fn vacuum(n_modes: usize) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::ZeroModes);
        }
        Ok(Self {
            mean: Vector::zeros(2 * n_modes),
            cov: Matrix::identity(2 * n_modes, 2 * n_modes),
        })
    }

    pub fn n_modes(&self) -> usize {
        self.mean.len() / 2
    }

    pub fn mean(&self) -> &Vector {
        &self.mean
    }

    pub fn cov(&self) -> &Matrix {
        &self.cov
    }

    /// Smallest eigenvalue of `cov + iΩ`, via the real embedding
    /// `[[V, −Ω], [Ω, V]]` whose spectrum is that of the Hermitian matrix
    /// with each eigenvalue doubled.
    pub fn physicality_margin(&self) -> f64 {
        let n = self.cov.nrows();
        let omega = symplectic_form(self.n_modes());
        let mut real = Matrix::zeros(2 * n, 2 * n);
        real.view_mut((0, 0), (n, n)).copy_from(&self.cov);
        real.view_mut((n, n), (n, n)).copy_from(&self.cov);
        real.view_mut((0, n), (n, n)).copy_from(&(-&omega));
        real.view_mut((n, 0), (n, n)).copy_from(&omega);
        SymmetricEigen::new(real).eigenvalues.min()
    }

    pub fn is_physical(&self) -> bool {
        self.physicality_margin() >= -PHYSICALITY_TOL * self.cov.amax().max(1.0)
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode < self.n_modes() {
            Ok(())
        } else {
            Err(Error::InvalidMode {
                mode,
                n_modes: self.n_modes(),
            })
        }
    }

    pub fn apply(&self, op: &SymplecticOp) -> Result<Self> {
        if op.n_modes() != self.n_modes() {
            return Err(Error::DimensionMismatch {
                expected: self.n_modes(),
                actual: op.n_modes(),
            });
        }
        let s = &op.matrix;
        Ok(Self {
            mean: s * &self.mean + &op.displacement,
            cov: symmetrize(s * &self.cov * s.transpose()),
        })
    }

    /// Direct sum: `self`'s modes first, then `other`'s.
    pub fn tensor(&self, other: &GaussianState) -> Self {
        let (n, m) = (self.mean.len(), other.mean.len());
        let mut mean = Vector::zeros(n + m);
        mean.rows_mut(0, n).copy_from(&self.mean);
        mean.rows_mut(n, m).copy_from(&other.mean);
        let mut cov = Matrix::zeros(n + m, n + m);
        cov.view_mut((0, 0), (n, n)).copy_from(&self.cov);
        cov.view_mut((n, n), (m, m)).copy_from(&other.cov);
        Self { mean, cov }
    }

    /// Marginal state of the listed modes, in the listed order.
    pub fn reduced(&self, modes: &[usize]) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::ZeroModes);
        }
        let mut idx = Vec::with_capacity(2 * modes.len());
        for (k, &m) in modes.iter().enumerate() {
            self.check_mode(m)?;
            if modes[..k].contains(&m) {
                return Err(Error::DuplicateMode(m));
            }
            idx.push(2 * m);
            idx.push(2 * m + 1);
        }
        Ok(Self {
            mean: Vector::from_iterator(idx.len(), idx.iter().map(|&i| self.mean[i])),
            cov: Matrix::from_fn(idx.len(), idx.len(), |r, c| self.cov[(idx[r], idx[c])]),
        })
    }

    pub fn quadrature_mean(&self, q: &Quadrature) -> f64 {
        q.functional(self.n_modes()).dot(&self.mean)
    }

    pub fn quadrature_covariance(&self, a: &Quadrature, b: &Quadrature) -> f64 {
        let n = self.n_modes();
        (q_row(a, n) * &self.cov * b.functional(n))[0]
    }

    pub fn quadrature_variance(&self, q: &Quadrature) -> f64 {
        self.quadrature_covariance(q, q)
    }

    /// Conditions on `quad = value` and discards the measured mode.
    ///
    /// Returns `None` when the measured mode was the only one.
    pub fn condition_on(&self, quad: &Quadrature, value: f64) -> Result<Option<Self>> {
        self.check_mode(quad.mode)?;
        ensure_finite(quad.angle, "homodyne angle")?;
        ensure_finite(value, "homodyne outcome")?;
        let n = self.n_modes();
        if n == 1 {
            return Ok(None);
        }
        let u = quad.functional(n);
        let var = u.dot(&(&self.cov * &u));
        let cross = &self.cov * &u;
        let mean_q = u.dot(&self.mean);
        let keep: Vec<usize> = (0..2 * n).filter(|&i| i / 2 != quad.mode).collect();
        let k = keep.len();
        let mut mean = Vector::from_iterator(k, keep.iter().map(|&i| self.mean[i]));
        let mut cov = Matrix::from_fn(k, k, |r, c| self.cov[(keep[r], keep[c])]);
        // Zero marginal variance: the outcome is deterministic and carries no
        // information beyond the mean.
        if var > PINV_CUTOFF * self.cov.amax().max(1.0) {
            let c = Vector::from_iterator(k, keep.iter().map(|&i| cross[i]));
            mean += &c * ((value - mean_q) / var);
            cov -= &c * c.transpose() / var;
        }
        Ok(Some(Self {
            mean,
            cov: symmetrize(cov),
        }))
    }

    /// Destructive homodyne detection of `mode` at local-oscillator `angle`.
    pub fn homodyne_measure<R: Rng + ?Sized>(
        &self,
        mode: usize,
        angle: f64,
        rng: &mut R,
    ) -> Result<(HomodyneOutcome, Option<Self>)> {
        self.check_mode(mode)?;
        ensure_finite(angle, "homodyne angle")?;
        let quad = Quadrature::new(mode, angle);
        let mu = self.quadrature_mean(&quad);
        let var = self.quadrature_variance(&quad).max(0.0);
        let z: f64 = rng.sample(StandardNormal);
        let value = mu + var.sqrt() * z;
        let rest = self.condition_on(&quad, value)?;
        Ok((
            HomodyneOutcome {
                value,
                mode,
                angle: angle.rem_euclid(TAU),
            },
            rest,
        ))
    }

    pub fn to_dump(&self) -> StateDump {
        let dim = self.cov.nrows();
        StateDump {
            n_modes: self.n_modes(),
            mean: self.mean.iter().copied().collect(),
            cov: (0..dim)
                .flat_map(|r| (0..dim).map(move |c| (r, c)))
                .map(|rc| self.cov[rc])
                .collect(),
        }
    }

    pub fn from_dump(dump: &StateDump) -> Result<Self> {
        let dim = 2 * dump.n_modes;
        if dump.mean.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: dump.mean.len(),
            });
        }
        if dump.cov.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                actual: dump.cov.len(),
            });
        }
        Self::new(
            Vector::from_column_slice(&dump.mean),
            Matrix::from_row_slice(dim, dim, &dump.cov),
        )
    }
}

impl Serialize for GaussianState {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_dump().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for GaussianState {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let dump = StateDump::deserialize(deserializer)?;
        Self::from_dump(&dump).map_err(serde::de::Error::custom)
    }
}

fn q_row(q: &Quadrature, n_modes: usize) -> nalgebra::RowDVector<f64> {
    q.functional(n_modes).transpose()
}

fn symmetrize(m: Matrix) -> Matrix {
    (&m + m.transpose()) * 0.5
}

/// Linear symplectic map `r ↦ S r + d` on phase space.
#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticOp {
    pub matrix: Matrix,
    pub displacement: Vector,
}

impl SymplecticOp {
    pub fn identity(n_modes: usize) -> Self {
        Self {
            matrix: Matrix::identity(2 * n_modes, 2 * n_modes),
            displacement: Vector::zeros(2 * n_modes),
        }
    }

    pub fn n_modes(&self) -> usize {
        self.matrix.nrows() / 2
    }

    /// `self` applied after `first`.
    pub fn after(&self, first: &SymplecticOp) -> Self {
        Self {
            matrix: &self.matrix * &first.matrix,
            displacement: &self.matrix * &first.displacement + &self.displacement,
        }
    }

    /// Largest entry of `SᵀΩS − Ω`.
    pub fn symplectic_defect(&self) -> f64 {
        let omega = symplectic_form(self.n_modes());
        (self.matrix.transpose() * &omega * &self.matrix - omega).amax()
    }

    pub fn is_symplectic(&self) -> bool {
        self.symplectic_defect() <= SYMPLECTIC_TOL
    }

    fn embed_two_mode(n_modes: usize, a: usize, b: usize, block: [[f64; 4]; 4]) -> Result<Self> {
        check_pair(n_modes, a, b)?;
        let mut op = Self::identity(n_modes);
        let idx = [2 * a, 2 * a + 1, 2 * b, 2 * b + 1];
        for (r, row) in block.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                op.matrix[(idx[r], idx[c])] = v;
            }
        }
        Ok(op)
    }

    /// Two-mode squeezer generated by `iκ(a†b† − ab)` for time `t`, `r = κt`.
    ///
    /// Heisenberg evolution `a ↦ a cosh r + b† sinh r`, which gives
    /// `X_a ↦ X_a cosh r + X_b sinh r` and `P_a ↦ P_a cosh r − P_b sinh r`.
    /// On vacuum: `Var X = cosh 2r`, `Cov(X_a, X_b) = sinh 2r`,
    /// `Cov(P_a, P_b) = −sinh 2r`.
    pub fn two_mode_squeezer(n_modes: usize, r: f64, mode_a: usize, mode_b: usize) -> Result<Self> {
        ensure_finite(r, "squeeze parameter")?;
        let (c, s) = (r.cosh(), r.sinh());
        Self::embed_two_mode(
            n_modes,
            mode_a,
            mode_b,
            [
                [c, 0.0, s, 0.0],
                [0.0, c, 0.0, -s],
                [s, 0.0, c, 0.0],
                [0.0, -s, 0.0, c],
            ],
        )
    }

    /// Lossless beamsplitter with intensity transmissivity `T`:
    /// `a ↦ √T a + √(1−T) b`, `b ↦ √T b − √(1−T) a`.
    ///
    /// `T = 0` swaps the modes with a sign flip on the second: `a ↦ b`,
    /// `b ↦ −a`.
    pub fn beamsplitter(n_modes: usize, transmissivity: f64, mode_a: usize, mode_b: usize) -> Result<Self> {
        ensure_finite(transmissivity, "transmissivity")?;
        if !(0.0..=1.0).contains(&transmissivity) {
            return Err(Error::OutOfRange {
                name: "transmissivity",
                value: transmissivity,
                range: "[0, 1]",
            });
        }
        let t = transmissivity.sqrt();
        let rho = (1.0 - transmissivity).sqrt();
        Self::embed_two_mode(
            n_modes,
            mode_a,
            mode_b,
            [
                [t, 0.0, rho, 0.0],
                [0.0, t, 0.0, rho],
                [-rho, 0.0, t, 0.0],
                [0.0, -rho, 0.0, t],
            ],
        )
    }

    /// Amplifying coupling `κ(a_E† b† + a_E b)` between Eve's mode and Bob's.
    ///
    /// Literally integrated, this Hamiltonian gives `X_E ↦ X_E cosh r − P_b
    /// sinh r`: the squeezer of [`SymplecticOp::two_mode_squeezer`] with
    /// Eve's mode phase-shifted by π/2 (`ã_E = i a_E`). That phase is a
    /// relabeling of Eve's local oscillator, so we report Eve's mode in the
    /// rotated frame, where X–X correlate with `+sinh 2r` and P–P with
    /// `−sinh 2r`, `r = κt`.
    pub fn parametric_coupling(n_modes: usize, kappa_t: f64, mode_e: usize, mode_b: usize) -> Result<Self> {
        Self::two_mode_squeezer(n_modes, kappa_t, mode_e, mode_b)
    }

    /// Phase rotation `a ↦ a e^{−iθ}`: `X ↦ X cos θ + P sin θ`.
    pub fn phase_rotation(n_modes: usize, theta: f64, mode: usize) -> Result<Self> {
        ensure_finite(theta, "rotation angle")?;
        if mode >= n_modes {
            return Err(Error::InvalidMode { mode, n_modes });
        }
        let mut op = Self::identity(n_modes);
        let (c, s) = (theta.cos(), theta.sin());
        let (x, p) = (2 * mode, 2 * mode + 1);
        op.matrix[(x, x)] = c;
        op.matrix[(x, p)] = s;
        op.matrix[(p, x)] = -s;
        op.matrix[(p, p)] = c;
        Ok(op)
    }

    /// Single-mode squeezer `X ↦ e^{−r} X`, `P ↦ e^{r} P`.
    pub fn single_mode_squeezer(n_modes: usize, r: f64, mode: usize) -> Result<Self> {
        ensure_finite(r, "squeeze parameter")?;
        if mode >= n_modes {
            return Err(Error::InvalidMode { mode, n_modes });
        }
        let mut op = Self::identity(n_modes);
        op.matrix[(2 * mode, 2 * mode)] = (-r).exp();
        op.matrix[(2 * mode + 1, 2 * mode + 1)] = r.exp();
        Ok(op)
    }
}

fn check_pair(n_modes: usize, a: usize, b: usize) -> Result<()> {
    for m in [a, b] {
        if m >= n_modes {
            return Err(Error::InvalidMode { mode: m, n_modes });
        }
    }
    if a == b {
        return Err(Error::DuplicateMode(a));
    }
    Ok(())
}

/// Gaussian regression of one quadrature on a commuting set of others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalStats {
    /// Regression coefficients, one per given quadrature.
    pub slopes: Vec<f64>,
    /// Schur-complement variance; independent of the observed values.
    pub residual_variance: f64,
    pub target_mean: f64,
    pub given_means: Vec<f64>,
}

impl ConditionalStats {
    /// Conditional mean of the target given observed values.
    pub fn predict(&self, observed: &[f64]) -> f64 {
        self.target_mean
            + self
                .slopes
                .iter()
                .zip(observed.iter().zip(&self.given_means))
                .map(|(s, (v, m))| s * (v - m))
                .sum::<f64>()
    }
}

fn validate_commuting(state: &GaussianState, quads: &[Quadrature]) -> Result<()> {
    for (k, q) in quads.iter().enumerate() {
        state.check_mode(q.mode)?;
        ensure_finite(q.angle, "quadrature angle")?;
        if let Some(other) = quads[..k].iter().find(|o| !o.commutes_with(q)) {
            return Err(Error::NonCommuting(other.mode));
        }
    }
    Ok(())
}

/// Covariance matrix of a list of quadratures.
pub fn quadrature_block(state: &GaussianState, quads: &[Quadrature]) -> Matrix {
    let n = state.n_modes();
    let us: Vec<Vector> = quads.iter().map(|q| q.functional(n)).collect();
    let cu: Vec<Vector> = us.iter().map(|u| state.cov() * u).collect();
    Matrix::from_fn(quads.len(), quads.len(), |r, c| us[r].dot(&cu[c]))
}

/// Moore–Penrose inverse with the crate's singular-value cutoff.
pub fn pseudo_inverse(m: &Matrix) -> Matrix {
    if m.is_empty() {
        return m.clone();
    }
    let svd = m.clone().svd(true, true);
    let cutoff = PINV_CUTOFF * svd.singular_values.max().max(1.0);
    svd.pseudo_inverse(cutoff)
        .expect("svd computed with both factors")
}

/// Exact conditional statistics of `target` given `given`.
///
/// The given quadratures must commute among themselves, and none may share
/// the target's mode. A singular given block is handled by pseudo-inverse.
pub fn conditional_stats(
    state: &GaussianState,
    target: Quadrature,
    given: &[Quadrature],
) -> Result<ConditionalStats> {
    validate_commuting(state, given)?;
    state.check_mode(target.mode)?;
    ensure_finite(target.angle, "quadrature angle")?;
    if given.iter().any(|g| g.mode == target.mode) {
        return Err(Error::NonCommuting(target.mode));
    }
    let mut all = Vec::with_capacity(given.len() + 1);
    all.push(target);
    all.extend_from_slice(given);
    let block = quadrature_block(state, &all);
    let k = given.len();
    let g = block.view((1, 1), (k, k)).into_owned();
    let c = block.view((1, 0), (k, 1)).into_owned();
    let slopes = pseudo_inverse(&g) * &c;
    let explained = (c.transpose() * &slopes)[0];
    Ok(ConditionalStats {
        slopes: slopes.iter().copied().collect(),
        residual_variance: (block[(0, 0)] - explained).max(0.0),
        target_mean: state.quadrature_mean(&target),
        given_means: given.iter().map(|q| state.quadrature_mean(q)).collect(),
    })
}

/// Draws joint outcomes of a fixed commuting set of quadratures.
///
/// The covariance factor comes from an eigendecomposition so that rank
/// deficient blocks (perfect correlations) sample correctly.
#[derive(Debug, Clone)]
pub struct QuadratureSampler {
    mean: Vec<f64>,
    factor: Matrix,
}

impl QuadratureSampler {
    pub fn new(state: &GaussianState, quads: &[Quadrature]) -> Result<Self> {
        validate_commuting(state, quads)?;
        if quads.is_empty() {
            return Err(Error::ZeroModes);
        }
        let block = quadrature_block(state, quads);
        let eig = SymmetricEigen::new(block);
        let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        let factor = &eig.eigenvectors * Matrix::from_diagonal(&roots);
        Ok(Self {
            mean: quads.iter().map(|q| state.quadrature_mean(q)).collect(),
            factor,
        })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let k = self.mean.len();
        let mut z = [0.0f64; 8];
        let mut heap;
        let z: &mut [f64] = if k <= z.len() {
            &mut z[..k]
        } else {
            heap = vec![0.0; k];
            &mut heap
        };
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        for (r, o) in out.iter_mut().enumerate().take(k) {
            let mut v = self.mean[r];
            for (c, zc) in z.iter().enumerate() {
                v += self.factor[(r, c)] * zc;
            }
            *o = v;
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.mean.len()];
        self.sample_into(rng, &mut out);
        out
    }
}
