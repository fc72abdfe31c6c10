//! Truncated cylindrical Brownian drivers on a uniform two-sided grid.
//!
//! A path is stored as its increments; node values are the cumulative sums
//! taken outward from the anchor node 0. Reversal and shifts act on the
//! increments alone, so composing them is exact in floating point.

pub mod driver;
pub mod rng;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use rng::{StreamKey, StreamKind};

pub use driver::ForwardDriver;

/// Tolerance, in grid steps, for deciding that a time is grid-aligned.
const ALIGN_TOL: f64 = 1e-9;

/// Converts a time to a node index, rejecting off-grid times.
pub fn grid_index(t: f64, dt: f64) -> Result<i64> {
    let k = (t / dt).round();
    if !k.is_finite() || (t / dt - k).abs() > ALIGN_TOL * (1.0 + k.abs()) {
        return Err(LabError::Range(format!("time {t} is not a multiple of dt = {dt}")));
    }
    Ok(k as i64)
}

/// Mode count, eigenvalues `λ_j` and forward-driver dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    eigenvalues: Vec<f64>,
    forward_dim: usize,
}

impl NoiseModel {
    pub fn new(eigenvalues: Vec<f64>, forward_dim: usize) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(LabError::Config("noise model needs at least one mode".into()));
        }
        if let Some(l) = eigenvalues.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return Err(LabError::Config(format!("eigenvalue {l} must be finite and nonnegative")));
        }
        if forward_dim == 0 {
            return Err(LabError::Config("forward driver dimension must be positive".into()));
        }
        Ok(Self { eigenvalues, forward_dim })
    }

    pub fn modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn forward_dim(&self) -> usize {
        self.forward_dim
    }

    /// Factor turning a `B̂_j` increment into a unit-variance `β̂_j` increment
    /// (zero for a silent mode).
    pub fn unit_scale(&self, j: usize) -> f64 {
        let l = self.eigenvalues[j];
        if l > 0.0 {
            1.0 / l.sqrt()
        } else {
            0.0
        }
    }
}

/// Uniform grid `{k·dt : lo ≤ k ≤ hi}` with `lo ≤ 0 ≤ hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathGrid {
    pub dt: f64,
    pub lo: i64,
    pub hi: i64,
}

impl PathGrid {
    pub fn new(dt: f64, lo: i64, hi: i64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(LabError::Config(format!("time step {dt} must be positive")));
        }
        if lo > 0 || hi < 0 || lo == hi {
            return Err(LabError::Config(format!("node range [{lo}, {hi}] must straddle 0")));
        }
        Ok(Self { dt, lo, hi })
    }

    /// Symmetric grid on `[-span, span]`.
    pub fn symmetric(dt: f64, span: f64) -> Result<Self> {
        let s = (span / dt).ceil() as i64;
        Self::new(dt, -s, s)
    }

    pub fn time(&self, k: i64) -> f64 {
        k as f64 * self.dt
    }

    pub fn contains(&self, k: i64) -> bool {
        self.lo <= k && k <= self.hi
    }
}

/// Offset of a measure-preserving shift, stored as an exact step count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftOp {
    steps: i64,
}

impl ShiftOp {
    pub fn new(offset: f64, dt: f64) -> Result<Self> {
        Ok(Self { steps: grid_index(offset, dt)? })
    }

    pub fn from_steps(steps: i64) -> Self {
        Self { steps }
    }

    pub fn steps(&self) -> i64 {
        self.steps
    }

    pub fn offset(&self, dt: f64) -> f64 {
        self.steps as f64 * dt
    }

    pub fn compose(self, other: ShiftOp) -> ShiftOp {
        ShiftOp { steps: self.steps + other.steps }
    }

    pub fn inverse(self) -> ShiftOp {
        ShiftOp { steps: -self.steps }
    }
}

/// Multi-channel path on a two-sided grid, anchored at 0 at node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoSidedPath {
    grid: PathGrid,
    /// `increments[c][i - lo]` is the increment over `[t_i, t_{i+1}]`.
    increments: Vec<Vec<f64>>,
    /// `values[c][k - lo]` is the value at node `k`.
    values: Vec<Vec<f64>>,
    seed: u64,
}

impl TwoSidedPath {
    pub fn from_increments(grid: PathGrid, increments: Vec<Vec<f64>>, seed: u64) -> Result<Self> {
        let n = (grid.hi - grid.lo) as usize;
        if increments.iter().any(|c| c.len() != n) {
            return Err(LabError::Argument(format!("each channel needs {n} increments")));
        }
        let zero = (-grid.lo) as usize;
        let values = increments
            .iter()
            .map(|inc| {
                let mut v = vec![0.0; n + 1];
                for i in zero..n {
                    v[i + 1] = v[i] + inc[i];
                }
                for i in (0..zero).rev() {
                    v[i] = v[i + 1] - inc[i];
                }
                v
            })
            .collect();
        Ok(Self { grid, increments, values, seed })
    }

    pub fn grid(&self) -> PathGrid {
        self.grid
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt
    }

    pub fn channels(&self) -> usize {
        self.increments.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn check_node(&self, k: i64) -> Result<usize> {
        if !self.grid.contains(k) {
            return Err(LabError::Range(format!(
                "node {k} outside path span [{}, {}]",
                self.grid.lo, self.grid.hi
            )));
        }
        Ok((k - self.grid.lo) as usize)
    }

    /// Value at node `k`.
    pub fn value(&self, channel: usize, k: i64) -> Result<f64> {
        Ok(self.values[channel][self.check_node(k)?])
    }

    /// Value at a grid-aligned time.
    pub fn value_at(&self, channel: usize, t: f64) -> Result<f64> {
        self.value(channel, grid_index(t, self.grid.dt)?)
    }

    /// Increment over `[t_i, t_{i+1}]`.
    pub fn increment(&self, channel: usize, i: i64) -> Result<f64> {
        if i < self.grid.lo || i >= self.grid.hi {
            return Err(LabError::Range(format!("interval {i} outside path span")));
        }
        Ok(self.increments[channel][(i - self.grid.lo) as usize])
    }

    /// Increments over intervals `first .. first + len`.
    pub fn increments_from(&self, channel: usize, first: i64, len: usize) -> Result<&[f64]> {
        if first < self.grid.lo || first + len as i64 > self.grid.hi {
            return Err(LabError::Range(format!(
                "intervals {first}..{} outside path span",
                first + len as i64
            )));
        }
        let a = (first - self.grid.lo) as usize;
        Ok(&self.increments[channel][a..a + len])
    }

    pub fn raw_increments(&self, channel: usize) -> &[f64] {
        &self.increments[channel]
    }
}

/// `B̂_s = B_{T′−s} − B_{T′}`, by re-indexing increments.
pub fn time_reverse(path: &TwoSidedPath, tprime: f64) -> Result<TwoSidedPath> {
    let a = grid_index(tprime, path.dt())?;
    reverse_at_node(path, a)
}

pub fn reverse_at_node(path: &TwoSidedPath, a: i64) -> Result<TwoSidedPath> {
    let g = path.grid();
    if !g.contains(a) {
        return Err(LabError::Range(format!(
            "reversal anchor {} outside path span [{}, {}]",
            g.time(a),
            g.time(g.lo),
            g.time(g.hi)
        )));
    }
    let new = PathGrid { dt: g.dt, lo: a - g.hi, hi: a - g.lo };
    let incs = path
        .increments
        .iter()
        .map(|inc| inc.iter().rev().map(|v| -v).collect())
        .collect();
    TwoSidedPath::from_increments(new, incs, path.seed)
}

/// `(θ̂_r B̂)_s = B̂_{s+r} − B̂_r`.
pub fn shift(path: &TwoSidedPath, op: ShiftOp) -> Result<TwoSidedPath> {
    let g = path.grid();
    let r = op.steps();
    if !g.contains(r) {
        return Err(LabError::Range(format!(
            "shift by {} leaves path span [{}, {}]",
            g.time(r),
            g.time(g.lo),
            g.time(g.hi)
        )));
    }
    let new = PathGrid { dt: g.dt, lo: g.lo - r, hi: g.hi - r };
    TwoSidedPath::from_increments(new, path.increments.clone(), path.seed)
}

/// Right-endpoint sum `Σ_i h(t_{i+1})(B̂_{t_{i+1}} − B̂_{t_i})` over `[s, T]`;
/// `h[k]` is the value at node `s/dt + k`.
pub fn backward_integral(h: &[f64], path: &TwoSidedPath, channel: usize, s: f64, t: f64) -> Result<f64> {
    let (a, b) = window(h, path, s, t)?;
    let inc = path.increments_from(channel, a, (b - a) as usize)?;
    Ok(inc.iter().zip(&h[1..]).map(|(d, v)| v * d).sum())
}

/// Left-endpoint (forward Itô) sum `Σ_i h(t_i)(B_{t_{i+1}} − B_{t_i})`.
pub fn forward_integral(h: &[f64], path: &TwoSidedPath, channel: usize, s: f64, t: f64) -> Result<f64> {
    let (a, b) = window(h, path, s, t)?;
    let inc = path.increments_from(channel, a, (b - a) as usize)?;
    Ok(inc.iter().zip(h).map(|(d, v)| v * d).sum())
}

fn window(h: &[f64], path: &TwoSidedPath, s: f64, t: f64) -> Result<(i64, i64)> {
    let a = grid_index(s, path.dt())?;
    let b = grid_index(t, path.dt())?;
    if b < a {
        return Err(LabError::Argument(format!("integration window [{s}, {t}] is reversed")));
    }
    if h.len() != (b - a + 1) as usize {
        return Err(LabError::Argument(format!(
            "integrand has {} nodes, window has {}",
            h.len(),
            b - a + 1
        )));
    }
    Ok((a, b))
}

/// A forward path in `R^d` and the `n` backward modes for one replica.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledPaths {
    pub forward: TwoSidedPath,
    pub backward: TwoSidedPath,
}

/// Two-sided backward driver: mode `j` has increments of variance `λ_j·dt`.
pub fn sample_backward(model: &NoiseModel, grid: PathGrid, seed: u64, path_id: u64) -> Result<TwoSidedPath> {
    let n = (grid.hi - grid.lo) as usize;
    let incs = (0..model.modes())
        .map(|j| {
            let scale = (model.eigenvalues()[j] * grid.dt).sqrt();
            let mut v = vec![0.0; n];
            if scale > 0.0 {
                StreamKey::new(seed, StreamKind::Backward, path_id, j as u64).fill_normals(grid.lo, &mut v);
                v.iter_mut().for_each(|x| *x *= scale);
            }
            v
        })
        .collect();
    TwoSidedPath::from_increments(grid, incs, seed)
}

/// Standard `R^d` Brownian path on the grid from the forward stream family.
pub fn sample_forward(dim: usize, grid: PathGrid, seed: u64, path_id: u64) -> Result<TwoSidedPath> {
    let n = (grid.hi - grid.lo) as usize;
    let scale = grid.dt.sqrt();
    let incs = (0..dim)
        .map(|c| {
            let mut v = vec![0.0; n];
            StreamKey::new(seed, StreamKind::Forward, path_id, c as u64).fill_normals(grid.lo, &mut v);
            v.iter_mut().for_each(|x| *x *= scale);
            v
        })
        .collect();
    TwoSidedPath::from_increments(grid, incs, seed)
}

/// Independent forward and backward drivers for replica `path_id`.
pub fn sample_paths(model: &NoiseModel, grid: PathGrid, seed: u64, path_id: u64) -> Result<SampledPaths> {
    Ok(SampledPaths {
        forward: sample_forward(model.forward_dim(), grid, seed, path_id)?,
        backward: sample_backward(model, grid, seed, path_id)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_mode(seed: u64) -> TwoSidedPath {
        let m = NoiseModel::new(vec![0.7], 1).unwrap();
        sample_backward(&m, PathGrid::symmetric(0.01, 6.0).unwrap(), seed, 0).unwrap()
    }

    #[test]
    fn anchored_at_zero() {
        let p = one_mode(1);
        assert_eq!(p.value(0, 0).unwrap(), 0.0);
        assert_eq!(p.value(0, 1).unwrap(), p.increment(0, 0).unwrap());
        assert_eq!(p.value(0, -1).unwrap(), -p.increment(0, -1).unwrap());
    }

    #[test]
    fn silent_modes_are_zero() {
        let m = NoiseModel::new(vec![0.0, 0.0], 1).unwrap();
        let p = sample_backward(&m, PathGrid::symmetric(0.1, 2.0).unwrap(), 3, 0).unwrap();
        for c in 0..2 {
            assert!(p.raw_increments(c).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn reversal_endpoints() {
        let b = one_mode(2);
        let tp = 3.0;
        let r = time_reverse(&b, tp).unwrap();
        assert_eq!(r.value(0, 0).unwrap(), 0.0);
        let bt = b.value_at(0, tp).unwrap();
        assert!((r.value_at(0, tp).unwrap() + bt).abs() <= 1e-12 * (1.0 + bt.abs()));
        for s in [0.5, 1.0, 2.7, 4.0] {
            let want = b.value_at(0, tp - s).unwrap() - bt;
            let got = r.value_at(0, s).unwrap();
            assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn double_reversal_is_exact() {
        let b = one_mode(4);
        let rr = time_reverse(&time_reverse(&b, 2.5).unwrap(), 2.5).unwrap();
        assert_eq!(rr, b);
    }

    #[test]
    fn out_of_span_is_rejected() {
        let b = one_mode(4);
        assert!(matches!(time_reverse(&b, 7.0), Err(LabError::Range(_))));
        assert!(matches!(time_reverse(&b, 0.005), Err(LabError::Range(_))));
        assert!(matches!(shift(&b, ShiftOp::from_steps(601)), Err(LabError::Range(_))));
    }

    #[test]
    fn shift_identity_semigroup_and_inverse() {
        let b = one_mode(5);
        assert_eq!(shift(&b, ShiftOp::from_steps(0)).unwrap(), b);
        let s = ShiftOp::new(0.5, 0.01).unwrap();
        let t = ShiftOp::new(1.25, 0.01).unwrap();
        let two = shift(&shift(&b, t).unwrap(), s).unwrap();
        let one = shift(&b, s.compose(t)).unwrap();
        assert_eq!(two.raw_increments(0), one.raw_increments(0));
        assert_eq!(two.grid(), one.grid());
        let back = shift(&shift(&b, t).unwrap(), t.inverse()).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn shifted_reversal_is_forward_difference() {
        let b = one_mode(6);
        let tp = 4.0;
        let t = 1.5;
        let w = shift(&time_reverse(&b, tp).unwrap(), ShiftOp::new(tp - t, 0.01).unwrap()).unwrap();
        let bt = b.value_at(0, t).unwrap();
        for s in [0.0, 0.3, 1.0, 3.2] {
            let want = b.value_at(0, t - s).unwrap() - bt;
            let got = w.value_at(0, s).unwrap();
            assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()), "{got} {want}");
        }
    }

    #[test]
    fn backward_sum_matches_reversed_forward_sum() {
        let b = one_mode(7);
        let tp = 5.0;
        let bh = time_reverse(&b, tp).unwrap();
        let (s, t) = (1.0, 3.5);
        let n = 250;
        let h: Vec<f64> = (0..=n).map(|k| (1.0 + k as f64 * 0.01).sin()).collect();
        let back = backward_integral(&h, &bh, 0, s, t).unwrap();
        // h(T' - u) on u in [T' - T, T' - s]
        let hr: Vec<f64> = h.iter().rev().copied().collect();
        let fwd = forward_integral(&hr, &b, 0, tp - t, tp - s).unwrap();
        assert!((back + fwd).abs() <= 1e-12 * back.abs().max(1.0));
    }

    #[test]
    fn constant_integrand_telescopes() {
        let b = one_mode(8);
        let c = 2.5;
        let h = vec![c; 101];
        let v = backward_integral(&h, &b, 0, 0.0, 1.0).unwrap();
        let want = c * (b.value_at(0, 1.0).unwrap() - b.value_at(0, 0.0).unwrap());
        assert!((v - want).abs() <= 1e-12 * want.abs().max(1.0));
        assert_eq!(backward_integral(&vec![0.0; 101], &b, 0, 0.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn increment_variance_and_mode_independence() {
        let m = NoiseModel::new(vec![0.5, 2.0], 1).unwrap();
        let g = PathGrid::new(0.1, -2, 20).unwrap();
        let n = 10_000;
        let (mut a, mut bb) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for p in 0..n as u64 {
            let path = sample_backward(&m, g, 77, p).unwrap();
            a.push(path.value_at(0, 1.5).unwrap() - path.value_at(0, 0.3).unwrap());
            bb.push(path.value_at(1, 1.5).unwrap() - path.value_at(1, 0.3).unwrap());
        }
        for (xs, l) in [(&a, 0.5), (&bb, 2.0)] {
            let want = l * 1.2;
            let var = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
            let se = want * (2.0 / n as f64).sqrt();
            assert!((var - want).abs() < 3.0 * se, "var {var} want {want}");
        }
        let cross = a.iter().zip(&bb).map(|(x, y)| x * y).sum::<f64>() / n as f64;
        let se = (0.5f64 * 1.2 * 2.0 * 1.2).sqrt() / (n as f64).sqrt();
        assert!(cross.abs() < 3.0 * se);
    }

    #[test]
    fn forward_and_backward_streams_differ() {
        let m = NoiseModel::new(vec![1.0], 1).unwrap();
        let p = sample_paths(&m, PathGrid::symmetric(0.1, 1.0).unwrap(), 9, 0).unwrap();
        assert_ne!(p.forward.raw_increments(0), p.backward.raw_increments(0));
    }

    #[test]
    fn model_validation() {
        assert!(NoiseModel::new(vec![], 1).is_err());
        assert!(NoiseModel::new(vec![-0.1], 1).is_err());
        assert!(NoiseModel::new(vec![1.0], 0).is_err());
        let m = NoiseModel::new(vec![4.0, 0.0], 2).unwrap();
        assert_eq!(m.unit_scale(0), 0.5);
        assert_eq!(m.unit_scale(1), 0.0);
    }

    proptest::proptest! {
        #[test]
        fn reversal_and_shift_compose_exactly(a in -300i64..300, r in -200i64..200, s in -200i64..200) {
            let b = one_mode(11);
            let rr = reverse_at_node(&reverse_at_node(&b, a).unwrap(), a).unwrap();
            proptest::prop_assert_eq!(&rr, &b);
            let lhs = shift(&shift(&b, ShiftOp::from_steps(r)).unwrap(), ShiftOp::from_steps(s));
            let rhs = shift(&b, ShiftOp::from_steps(r + s));
            if let (Ok(l), Ok(rh)) = (lhs, rhs) {
                proptest::prop_assert_eq!(l.raw_increments(0), rh.raw_increments(0));
            }
        }
    }
}
