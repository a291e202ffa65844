//! Incremental regularized least squares.
//!
//! Each [`LsqState`] holds `M = I + Σ x xᵀ`, `b = Σ a x` and a maintained
//! inverse of `M`. Rank-one updates refresh the inverse with the
//! Sherman–Morrison identity in `O(d²)`; a full Cholesky re-inversion runs
//! every [`REFRESH_INTERVAL`] updates to bound floating-point drift.
//!
//! Matrices are dense and row-major. Vector arguments are scanned for zero
//! entries, so one-hot features cost `O(d)` instead of `O(d²)` in the
//! quadratic forms.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Number of rank-one updates between full re-inversions.
pub const REFRESH_INTERVAL: u64 = 5_000;

static NEGATIVE_QUAD_FORMS: AtomicU64 = AtomicU64::new(0);

/// How many quadratic forms came out negative (numerically) and were
/// clamped to zero by [`confidence_width`].
pub fn negative_quad_form_count() -> u64 {
    NEGATIVE_QUAD_FORMS.load(Ordering::Relaxed)
}

/// Per-user (or pooled) least-squares statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsqState {
    dim: usize,
    m: Vec<f64>,
    m_inv: Vec<f64>,
    b: Vec<f64>,
    updates: u64,
    since_refresh: u64,
}

/// Pooled statistics of a set of users, with its weight vector solved.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateState {
    pub state: LsqState,
    pub w: Vec<f64>,
}

impl AggregateState {
    pub fn into_state(self) -> LsqState {
        self.state
    }
}

fn identity(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    m
}

impl LsqState {
    /// `M = I`, `b = 0`.
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            m: identity(dim),
            m_inv: identity(dim),
            b: vec![0.0; dim],
            updates: 0,
            since_refresh: 0,
        }
    }

    /// Builds a state from an explicit `M` and `b`, inverting `M` directly.
    pub fn from_parts(dim: usize, m: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if m.len() != dim * dim || b.len() != dim {
            return domain("matrix or vector has the wrong size");
        }
        let m_inv = spd_inverse(&m, dim)?;
        Ok(Self {
            dim,
            m,
            m_inv,
            b,
            updates: 0,
            since_refresh: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &[f64] {
        &self.m
    }

    pub fn inverse(&self) -> &[f64] {
        &self.m_inv
    }

    pub fn bias(&self) -> &[f64] {
        &self.b
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return domain(format!(
                "vector has dimension {} (expected {})",
                x.len(),
                self.dim
            ));
        }
        Ok(())
    }

    /// `M += x xᵀ`, `b += a x`, inverse kept in step.
    pub fn rank_one_update(&mut self, x: &[f64], a: f64) -> Result<()> {
        self.check_dim(x)?;
        let d = self.dim;
        self.updates += 1;
        if x.iter().all(|&v| v == 0.0) {
            return Ok(());
        }

        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            self.b[i] += a * xi;
            let row = &mut self.m[i * d..(i + 1) * d];
            for (j, &xj) in x.iter().enumerate() {
                if xj != 0.0 {
                    row[j] += xi * xj;
                }
            }
        }

        self.since_refresh += 1;
        if self.since_refresh >= REFRESH_INTERVAL {
            self.refresh()?;
            return Ok(());
        }

        // Sherman–Morrison: (M + x xᵀ)⁻¹ = M⁻¹ − (M⁻¹x)(M⁻¹x)ᵀ / (1 + xᵀM⁻¹x)
        let u = mat_vec_sparse(&self.m_inv, d, x);
        let denom = 1.0 + dot_sparse(x, &u);
        for i in 0..d {
            if u[i] == 0.0 {
                continue;
            }
            let row = &mut self.m_inv[i * d..(i + 1) * d];
            for j in 0..d {
                row[j] -= u[i] * u[j] / denom;
            }
        }
        Ok(())
    }

    /// Recomputes the inverse from `M` from scratch.
    pub fn refresh(&mut self) -> Result<()> {
        self.m_inv = spd_inverse(&self.m, self.dim)?;
        self.since_refresh = 0;
        Ok(())
    }

    /// `w = M⁻¹ b`.
    pub fn solve_weights(&self) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|i| {
                self.m_inv[i * d..(i + 1) * d]
                    .iter()
                    .zip(&self.b)
                    .map(|(m, b)| m * b)
                    .sum()
            })
            .collect()
    }

    /// `wᵀx` without materializing `w`.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let d = self.dim;
        let mut acc = 0.0;
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let wi: f64 = self.m_inv[i * d..(i + 1) * d]
                .iter()
                .zip(&self.b)
                .map(|(m, b)| m * b)
                .sum();
            acc += xi * wi;
        }
        acc
    }

    /// `xᵀ M⁻¹ x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        quad_form(&self.m_inv, self.dim, x)
    }

    /// `α·sqrt(xᵀM⁻¹x·ln(t+1))` for this state's inverse.
    pub fn width(&self, x: &[f64], t: u64, alpha: f64) -> f64 {
        width_from_quad(self.quad_form(x), t, alpha)
    }

    /// `‖M·M⁻¹ − I‖_max`.
    pub fn inverse_drift(&self) -> f64 {
        let d = self.dim;
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                let mut s = 0.0;
                for k in 0..d {
                    s += self.m[i * d + k] * self.m_inv[k * d + j];
                }
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((s - target).abs());
            }
        }
        worst
    }

    /// Adds another state's data (`M − I` and `b`) into this one. The
    /// inverse is stale afterwards.
    fn absorb(&mut self, other: &LsqState) {
        let d = self.dim;
        for i in 0..d {
            for j in 0..d {
                let delta = if i == j { 1.0 } else { 0.0 };
                self.m[i * d + j] += other.m[i * d + j] - delta;
            }
            self.b[i] += other.b[i];
        }
        self.updates += other.updates;
    }
}

fn mat_vec_sparse(m: &[f64], d: usize, x: &[f64]) -> Vec<f64> {
    (0..d)
        .map(|i| {
            let row = &m[i * d..(i + 1) * d];
            x.iter()
                .zip(row)
                .filter(|(xj, _)| **xj != 0.0)
                .map(|(xj, mij)| mij * xj)
                .sum()
        })
        .collect()
}

fn dot_sparse(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .filter(|(a, _)| **a != 0.0)
        .map(|(a, b)| a * b)
        .sum()
}

/// `xᵀ A x` for a dense symmetric `A`, skipping zero coordinates of `x`.
pub fn quad_form(a: &[f64], d: usize, x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &a[i * d..(i + 1) * d];
        let mut s = 0.0;
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                s += row[j] * xj;
            }
        }
        acc += xi * s;
    }
    acc
}

fn width_from_quad(q: f64, t: u64, alpha: f64) -> f64 {
    let q = if q < 0.0 {
        NEGATIVE_QUAD_FORMS.fetch_add(1, Ordering::Relaxed);
        0.0
    } else {
        q
    };
    if q == 0.0 || alpha == 0.0 {
        return 0.0;
    }
    alpha * (q * ((t + 1) as f64).ln()).sqrt()
}

/// Upper-confidence width `α·sqrt(xᵀ·inv·x·ln(t+1))` (natural log).
///
/// A negative quadratic form can only come from round-off; it is clamped to
/// zero and counted (see [`negative_quad_form_count`]).
pub fn confidence_width(inv: &[f64], x: &[f64], t: u64, alpha: f64) -> Result<f64> {
    let d = x.len();
    if inv.len() != d * d {
        return domain("matrix and vector dimensions disagree");
    }
    if t == 0 {
        return domain("round index must be at least 1");
    }
    if alpha.is_nan() || alpha < 0.0 {
        return domain(format!("exploration parameter {alpha} must be nonnegative"));
    }
    Ok(width_from_quad(quad_form(inv, d, x), t, alpha))
}

/// Pools states: `M̄ = I + Σ(Mᵢ − I)`, `b̄ = Σ bᵢ`, `w̄ = M̄⁻¹ b̄`.
///
/// A single state is returned as-is (bit for bit), which keeps singleton
/// clusters in exact agreement with an independent per-user learner.
pub fn aggregate(states: &[&LsqState]) -> Result<AggregateState> {
    let state = aggregate_state(states)?;
    let w = state.solve_weights();
    Ok(AggregateState { state, w })
}

/// As [`aggregate`], without solving for the weights.
pub fn aggregate_state(states: &[&LsqState]) -> Result<LsqState> {
    let Some(first) = states.first() else {
        return domain("cannot aggregate an empty set of states");
    };
    let d = first.dim;
    if states.iter().any(|s| s.dim != d) {
        return domain("aggregated states disagree on dimension");
    }
    if states.len() == 1 {
        return Ok((*first).clone());
    }
    let mut acc = LsqState::new(d);
    for s in states {
        acc.absorb(s);
    }
    acc.refresh()?;
    Ok(acc)
}

/// Inverse of a symmetric positive-definite matrix through its Cholesky
/// factor. The result is exactly symmetric.
pub fn spd_inverse(m: &[f64], d: usize) -> Result<Vec<f64>> {
    if m.len() != d * d {
        return domain("matrix has the wrong size");
    }
    // M = L Lᵀ
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = m[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::Domain("matrix is not positive definite".into()));
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    // L⁻¹ by forward substitution, column by column.
    let mut linv = vec![0.0; d * d];
    for c in 0..d {
        linv[c * d + c] = 1.0 / l[c * d + c];
        for i in c + 1..d {
            let mut s = 0.0;
            for k in c..i {
                s -= l[i * d + k] * linv[k * d + c];
            }
            linv[i * d + c] = s / l[i * d + i];
        }
    }
    // M⁻¹ = L⁻ᵀ L⁻¹
    let mut inv = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = 0.0;
            for k in i..d {
                s += linv[k * d + i] * linv[k * d + j];
            }
            inv[i * d + j] = s;
            inv[j * d + i] = s;
        }
    }
    Ok(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::one_hot;

    #[test]
    fn update_from_identity() {
        let mut s = LsqState::new(2);
        s.rank_one_update(&[1.0, 0.0], 1.0).unwrap();
        assert_eq!(s.matrix(), &[2.0, 0.0, 0.0, 1.0]);
        assert_eq!(s.bias(), &[1.0, 0.0]);
        assert_eq!(s.updates(), 1);
        assert_eq!(s.solve_weights(), vec![0.5, 0.0]);
    }

    #[test]
    fn zero_vector_only_counts() {
        let mut s = LsqState::new(2);
        let before = s.clone();
        s.rank_one_update(&[0.0, 0.0], 1.0).unwrap();
        assert_eq!(s.matrix(), before.matrix());
        assert_eq!(s.inverse(), before.inverse());
        assert_eq!(s.bias(), before.bias());
        assert_eq!(s.updates(), 1);
    }

    #[test]
    fn dimension_mismatch() {
        let mut s = LsqState::new(2);
        assert!(s.rank_one_update(&[1.0], 0.0).is_err());
    }

    #[test]
    fn identity_solve() {
        let s = LsqState::from_parts(2, identity(2), vec![3.0, 4.0]).unwrap();
        assert_eq!(s.solve_weights(), vec![3.0, 4.0]);
    }

    #[test]
    fn width_examples() {
        let i2 = identity(2);
        let w = confidence_width(&i2, &[1.0, 0.0], 1, 1.0).unwrap();
        assert!((w - 0.832_554_611_157_697_6).abs() < 1e-12);
        assert_eq!(confidence_width(&i2, &[0.0, 0.0], 5, 1.0).unwrap(), 0.0);
        let half = [0.5, 0.0, 0.0, 1.0];
        let w = confidence_width(&half, &[1.0, 0.0], 2, 0.5).unwrap();
        // 0.5·sqrt(0.5·ln 3)
        assert!((w - 0.370_575_951_841_877_8).abs() < 1e-12, "{w}");
    }

    #[test]
    fn negative_quadratic_form_is_clamped() {
        let before = negative_quad_form_count();
        let w = confidence_width(&[-1.0], &[1.0], 3, 1.0).unwrap();
        assert_eq!(w, 0.0);
        assert!(negative_quad_form_count() > before);
    }

    #[test]
    fn infinite_alpha() {
        let i2 = identity(2);
        assert_eq!(confidence_width(&i2, &[1.0, 0.0], 1, f64::INFINITY).unwrap(), f64::INFINITY);
        assert_eq!(confidence_width(&i2, &[0.0, 0.0], 1, f64::INFINITY).unwrap(), 0.0);
    }

    #[test]
    fn aggregate_examples() {
        assert!(aggregate(&[]).is_err());

        let a = LsqState::new(2);
        let b = LsqState::new(2);
        let agg = aggregate(&[&a, &b]).unwrap();
        assert_eq!(agg.state.matrix(), identity(2).as_slice());
        assert_eq!(agg.w, vec![0.0, 0.0]);

        let mut s = LsqState::new(2);
        s.rank_one_update(&[1.0, 0.0], 0.7).unwrap();
        let single = aggregate(&[&s]).unwrap();
        assert_eq!(single.state, s);
        assert_eq!(single.w, s.solve_weights());

        let mut m1 = LsqState::new(2);
        m1.rank_one_update(&one_hot(0, 2).unwrap(), 0.0).unwrap();
        let mut m2 = LsqState::new(2);
        m2.rank_one_update(&one_hot(1, 2).unwrap(), 0.0).unwrap();
        let agg = aggregate(&[&m1, &m2]).unwrap();
        assert_eq!(agg.state.matrix(), &[2.0, 0.0, 0.0, 2.0]);
        assert_eq!(agg.state.updates(), 2);
    }

    #[test]
    fn periodic_refresh_resets_drift() {
        let mut s = LsqState::new(3);
        for k in 0..(REFRESH_INTERVAL + 10) {
            let x = [((k % 7) as f64 - 3.0) / 3.0, 0.5, ((k % 3) as f64) / 2.0];
            s.rank_one_update(&x, 0.1).unwrap();
        }
        assert_eq!(s.since_refresh, 10);
        assert!(s.inverse_drift() < 1e-9);
    }

    #[test]
    fn spd_inverse_rejects_indefinite() {
        assert!(spd_inverse(&[1.0, 2.0, 2.0, 1.0], 2).is_err());
    }
}
