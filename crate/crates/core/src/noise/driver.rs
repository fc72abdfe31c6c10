//! Lazily generated per-particle forward Brownian increments.
//!
//! Each particle owns `d` independent channels. A driver maps the local
//! interval index `k` of an ensemble grid to a physical interval
//! `offset + dir·k` of the underlying counter stream and multiplies by
//! `sign`, so shifted and time-reversed drivers regenerate exactly the same
//! draws as the original.

use serde::{Deserialize, Serialize};

use super::rng::{StreamKey, StreamKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForwardDriver {
    seed: u64,
    path: u64,
    dim: usize,
    sign: i8,
    offset: i64,
    dir: i8,
}

impl ForwardDriver {
    pub fn new(seed: u64, path: u64, dim: usize) -> Self {
        Self { seed, path, dim, sign: 1, offset: 0, dir: 1 }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> u64 {
        self.path
    }

    /// Physical interval backing local interval `k`.
    pub fn physical_interval(&self, k: i64) -> i64 {
        self.offset + self.dir as i64 * k
    }

    fn key(&self, particle: usize, component: usize) -> StreamKey {
        StreamKey::new(
            self.seed,
            StreamKind::Forward,
            self.path,
            (particle * self.dim + component) as u64,
        )
    }

    /// Standard normal attached to local interval `k` (not yet scaled by `sqrt(dt)`).
    pub fn normal(&self, particle: usize, component: usize, k: i64) -> f64 {
        let z = self.key(particle, component).normal_at(self.physical_interval(k));
        if self.sign < 0 {
            -z
        } else {
            z
        }
    }

    /// `ΔW` over the local intervals `first .. first + out.len()`.
    pub fn fill_increments(&self, particle: usize, component: usize, first: i64, dt: f64, out: &mut [f64]) {
        let scale = dt.sqrt();
        if self.dir > 0 {
            let mut buf = vec![0.0; out.len()];
            self.key(particle, component).fill_normals(self.physical_interval(first), &mut buf);
            for (o, z) in out.iter_mut().zip(buf) {
                *o = self.sign as f64 * z * scale;
            }
        } else {
            for (i, o) in out.iter_mut().enumerate() {
                *o = self.normal(particle, component, first + i as i64) * scale;
            }
        }
    }

    /// Driver of `Ŵ_s = W_{a·dt − s} − W_{a·dt}` on the same streams.
    pub fn reverse_about(&self, a: i64) -> Self {
        Self {
            sign: -self.sign,
            offset: self.offset + self.dir as i64 * (a - 1),
            dir: -self.dir,
            ..*self
        }
    }

    /// Driver of `W_{s + r·dt} − W_{r·dt}`.
    pub fn shift(&self, r: i64) -> Self {
        Self { offset: self.offset + self.dir as i64 * r, ..*self }
    }
}
