//! The power weight `ρ(x) = (1+|x|)^q`, the space `L²_ρ` and discounted
//! process norms, all realised by importance sampling from `ρ^{-1}/Z_ρ`.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::noise::rng::{StreamKey, StreamKind};
use crate::quadrature;

/// Relative tolerance used for the normaliser quadrature.
pub const NORMALIZER_TOL: f64 = 1e-10;

/// Weight exponent `q`, moment exponent `p` and the normaliser
/// `Z_ρ = ∫ρ^{-1}(x)dx`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedSpace {
    dim: usize,
    q: f64,
    p: f64,
    z_rho: f64,
}

impl WeightedSpace {
    pub fn new(dim: usize, q: f64, p: f64) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(LabError::Config(format!("dimension {dim} not in {{1, 2}}")));
        }
        if !(q > 3.0) {
            return Err(LabError::Config(format!("weight exponent q = {q} must exceed 3")));
        }
        if !(p > 2.0 && p < q - 1.0) {
            return Err(LabError::Config(format!(
                "moment exponent p = {p} must lie in (2, q-1) = (2, {})",
                q - 1.0
            )));
        }
        let radial = quadrature::integrate_to_infinity(
            |r| r.powi(dim as i32 - 1) * (1.0 + r).powf(-q),
            0.0,
            NORMALIZER_TOL,
        );
        let z_rho = sphere_area(dim) * radial;
        if !(z_rho.is_finite() && z_rho > 0.0) {
            return Err(LabError::Config(format!("normaliser Z_rho = {z_rho} is not finite")));
        }
        Ok(Self { dim, q, p, z_rho })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn normalizer(&self) -> f64 {
        self.z_rho
    }

    pub fn weight(&self, x: &[f64]) -> f64 {
        (1.0 + euclid(x)).powf(self.q)
    }

    pub fn inverse_weight(&self, x: &[f64]) -> f64 {
        (1.0 + euclid(x)).powf(-self.q)
    }

    /// `∫ g(|x|) ρ^{-1}(x) dx` for a radial integrand, by quadrature.
    pub fn radial_integral<F: Fn(f64) -> f64>(&self, g: F, rel_tol: f64) -> f64 {
        let d = self.dim as i32;
        let q = self.q;
        sphere_area(self.dim)
            * quadrature::integrate_to_infinity(|r| g(r) * r.powi(d - 1) * (1.0 + r).powf(-q), 0.0, rel_tol)
    }
}

fn sphere_area(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        _ => unreachable!("dimension validated at construction"),
    }
}

pub(crate) fn euclid(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `(1+|x|)^q`.
pub fn eval_weight(x: &[f64], space: &WeightedSpace) -> f64 {
    space.weight(x)
}

/// Particles drawn from `ρ^{-1}/Z_ρ` with their quadrature weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCloud {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
    seed: u64,
}

impl ReferenceCloud {
    /// Builds a cloud from explicit points with uniform weights.
    pub fn from_points(dim: usize, points: Vec<f64>, seed: u64) -> Result<Self> {
        if dim == 0 || points.is_empty() || !points.len().is_multiple_of(dim) {
            return Err(LabError::Argument("cloud needs at least one point of matching dimension".into()));
        }
        let m = points.len() / dim;
        Ok(Self { dim, points, weights: vec![1.0 / m as f64; m], seed })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `Z_ρ Σ_i w_i F(x_i)`: the Monte Carlo estimate of `∫F ρ^{-1} dx`.
    pub fn integrate_weighted<F: Fn(usize, &[f64]) -> f64>(&self, space: &WeightedSpace, f: F) -> f64 {
        let s: f64 = (0..self.len()).map(|i| self.weights[i] * f(i, self.point(i))).sum();
        space.normalizer() * s
    }

    /// `Z_ρ Σ_i w_i ρ(x_i) F(x_i)`: the Monte Carlo estimate of `∫F dx`.
    pub fn integrate_lebesgue<F: Fn(usize, &[f64]) -> f64>(&self, space: &WeightedSpace, f: F) -> f64 {
        let s: f64 = (0..self.len())
            .map(|i| {
                let x = self.point(i);
                let v = f(i, x);
                if v == 0.0 {
                    0.0
                } else {
                    self.weights[i] * space.weight(x) * v
                }
            })
            .sum();
        space.normalizer() * s
    }
}

/// Draws `m` i.i.d. points from `ρ^{-1}/Z_ρ`: inverse CDF of the radius in
/// one dimension, rejection from a heavier radial tail in two.
pub fn sample_reference_cloud(m: usize, space: &WeightedSpace, seed: u64) -> Result<ReferenceCloud> {
    if m == 0 {
        return Err(LabError::Argument("cloud needs M >= 1 particles".into()));
    }
    if !space.normalizer().is_finite() {
        return Err(LabError::Config("weight normaliser is not finite".into()));
    }
    let q = space.q();
    let dim = space.dim();
    let mut points = Vec::with_capacity(m * dim);
    for i in 0..m {
        let mut s = StreamKey::new(seed, StreamKind::Cloud, dim as u64, i as u64).at(0);
        match dim {
            1 => {
                // P(|x| > r) = (1+r)^{-(q-1)}
                let r = s.next_uniform().powf(-1.0 / (q - 1.0)) - 1.0;
                let sign = if s.next_uniform() < 0.5 { -1.0 } else { 1.0 };
                points.push(sign * r);
            }
            _ => {
                // proposal density ∝ (1+r)^{-(q-1)}, acceptance r/(1+r)
                let r = loop {
                    let r = s.next_uniform().powf(-1.0 / (q - 2.0)) - 1.0;
                    if s.next_uniform() <= r / (1.0 + r) {
                        break r;
                    }
                };
                let angle = 2.0 * std::f64::consts::PI * s.next_uniform();
                points.push(r * angle.cos());
                points.push(r * angle.sin());
            }
        }
    }
    ReferenceCloud::from_points(dim, points, seed)
}

/// `sqrt(Z_ρ Σ_i w_i field_i²)`.
pub fn weighted_l2_norm(field: &[f64], cloud: &ReferenceCloud, space: &WeightedSpace) -> Result<f64> {
    weighted_l2_norm_vector(field, 1, cloud, space)
}

/// L²_ρ norm of an `R^k`-valued field stored particle-major.
pub fn weighted_l2_norm_vector(
    field: &[f64],
    components: usize,
    cloud: &ReferenceCloud,
    space: &WeightedSpace,
) -> Result<f64> {
    Ok(weighted_sq_norm(field, components, cloud, space)?.sqrt())
}

pub(crate) fn weighted_sq_norm(
    field: &[f64],
    components: usize,
    cloud: &ReferenceCloud,
    space: &WeightedSpace,
) -> Result<f64> {
    if field.len() != cloud.len() * components {
        return Err(LabError::Argument(format!(
            "field has {} values, cloud expects {}",
            field.len(),
            cloud.len() * components
        )));
    }
    let s: f64 = field
        .chunks(components)
        .zip(cloud.weights())
        .map(|(v, w)| w * v.iter().map(|c| c * c).sum::<f64>())
        .sum();
    Ok(space.normalizer() * s)
}

/// Discount rate and the time nodes at which a process is sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscountedNormSpec {
    discount: f64,
    times: Vec<f64>,
}

impl DiscountedNormSpec {
    pub fn new(discount: f64, times: Vec<f64>) -> Result<Self> {
        if !(discount > 0.0) {
            return Err(LabError::Argument(format!("discount K = {discount} must be positive")));
        }
        if times.is_empty() || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(LabError::Argument("time grid must be strictly increasing".into()));
        }
        Ok(Self { discount, times })
    }

    /// Uniform grid `start, start+dt, ..., start+steps·dt`.
    pub fn uniform(discount: f64, start: f64, dt: f64, steps: usize) -> Result<Self> {
        Self::new(discount, (0..=steps).map(|k| start + k as f64 * dt).collect())
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }
}

/// Trapezoid integral of `e^{-Ks}‖φ(s)‖²` together with its per-unit-time
/// increments; `divergent` is raised when the increments stop decreasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscountedProfile {
    pub value: f64,
    pub unit_increments: Vec<f64>,
    pub divergent: bool,
}

fn node_sq_norms(process: &[Vec<f64>], cloud: &ReferenceCloud, space: &WeightedSpace) -> Result<Vec<f64>> {
    let comps = process.first().map(|f| f.len() / cloud.len().max(1)).unwrap_or(1).max(1);
    process.iter().map(|f| weighted_sq_norm(f, comps, cloud, space)).collect()
}

pub fn discounted_l2_profile(
    process: &[Vec<f64>],
    spec: &DiscountedNormSpec,
    cloud: &ReferenceCloud,
    space: &WeightedSpace,
) -> Result<DiscountedProfile> {
    let t = spec.times();
    if process.len() != t.len() {
        return Err(LabError::Argument(format!(
            "process has {} nodes, grid has {}",
            process.len(),
            t.len()
        )));
    }
    let sq = node_sq_norms(process, cloud, space)?;
    let k = spec.discount();
    let integrand: Vec<f64> = sq.iter().zip(t).map(|(v, s)| (-k * s).exp() * v).collect();
    let mut value = 0.0;
    let mut unit_increments = Vec::new();
    let mut window_end = t[0] + 1.0;
    let mut acc = 0.0;
    for i in 1..t.len() {
        let piece = 0.5 * (t[i] - t[i - 1]) * (integrand[i] + integrand[i - 1]);
        value += piece;
        acc += piece;
        if t[i] >= window_end - 1e-12 {
            unit_increments.push(acc);
            acc = 0.0;
            window_end += 1.0;
        }
    }
    let divergent = unit_increments.len() >= 2 && {
        let n = unit_increments.len();
        unit_increments[n - 1] >= (1.0 - 1e-9) * unit_increments[n - 2]
    };
    Ok(DiscountedProfile { value, unit_increments, divergent })
}

/// Finite-grid surrogate of the `M^{2,-K}` seminorm (squared).
pub fn discounted_l2_process_norm(
    process: &[Vec<f64>],
    spec: &DiscountedNormSpec,
    cloud: &ReferenceCloud,
    space: &WeightedSpace,
) -> Result<f64> {
    Ok(discounted_l2_profile(process, spec, cloud, space)?.value)
}

/// `max_s e^{-Ks}‖ψ(s)‖²` over the grid nodes.
pub fn discounted_sup_norm(
    process: &[Vec<f64>],
    spec: &DiscountedNormSpec,
    cloud: &ReferenceCloud,
    space: &WeightedSpace,
) -> Result<f64> {
    if process.len() != spec.times().len() {
        return Err(LabError::Argument("process and grid lengths differ".into()));
    }
    let sq = node_sq_norms(process, cloud, space)?;
    Ok(sq
        .iter()
        .zip(spec.times())
        .map(|(v, s)| (-spec.discount() * s).exp() * v)
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space1(q: f64) -> WeightedSpace {
        WeightedSpace::new(1, q, 2.5f64.min(q - 1.5)).unwrap()
    }

    #[test]
    fn weight_at_origin_and_unit_point() {
        let s = WeightedSpace::new(1, 4.0, 2.5).unwrap();
        assert_eq!(eval_weight(&[0.0], &s), 1.0);
        assert_eq!(eval_weight(&[1.0], &s), 16.0);
        assert!(eval_weight(&[-7.3], &s) >= 1.0);
    }

    #[test]
    fn normalizer_matches_closed_forms() {
        let s1 = WeightedSpace::new(1, 4.0, 2.5).unwrap();
        assert!((s1.normalizer() - 2.0 / 3.0).abs() < 1e-9);
        let s2 = WeightedSpace::new(2, 5.0, 2.5).unwrap();
        let exact = 2.0 * std::f64::consts::PI / (4.0 * 3.0);
        assert!((s2.normalizer() - exact).abs() < 1e-9);
    }

    #[test]
    fn invalid_exponents_rejected() {
        assert!(WeightedSpace::new(1, 3.0, 2.5).is_err());
        assert!(WeightedSpace::new(1, 4.0, 3.0).is_err());
        assert!(WeightedSpace::new(1, 4.0, 2.0).is_err());
        assert!(WeightedSpace::new(3, 5.0, 2.5).is_err());
    }

    #[test]
    fn cubic_moment_quadrature_is_stable_under_refinement() {
        let s = WeightedSpace::new(1, 5.0, 2.5).unwrap();
        let f = |x: f64| x.abs().powi(3) * s.inverse_weight(&[x]);
        let coarse = quadrature::integrate(f, -200.0, 200.0, 1e-5);
        let fine = quadrature::integrate(f, -200.0, 200.0, 1e-10);
        assert!(coarse.is_finite() && fine.is_finite());
        assert!(((coarse - fine) / fine).abs() < 1e-4);
    }

    #[test]
    fn cloud_is_reproducible() {
        let s = space1(4.0);
        let a = sample_reference_cloud(500, &s, 9).unwrap();
        let b = sample_reference_cloud(500, &s, 9).unwrap();
        assert_eq!(a, b);
        let c = sample_reference_cloud(500, &s, 10).unwrap();
        assert_ne!(a.points(), c.points());
        assert!((a.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cloud_mean_and_tail_fraction() {
        let s = WeightedSpace::new(1, 4.0, 2.5).unwrap();
        let m = 100_000;
        let cloud = sample_reference_cloud(m, &s, 3).unwrap();
        let xs = cloud.points();
        let n = m as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 3.0 * (var / n).sqrt());

        let tail = 2.0 * quadrature::integrate_to_infinity(|x| (1.0 + x).powf(-4.0), 2.0, 1e-12) / s.normalizer();
        let frac = xs.iter().filter(|x| x.abs() > 2.0).count() as f64 / n;
        let se = (tail * (1.0 - tail) / n).sqrt();
        assert!((frac - tail).abs() < 3.0 * se, "frac {frac} tail {tail}");
    }

    #[test]
    fn two_dimensional_cloud_radius_law() {
        let s = WeightedSpace::new(2, 5.0, 2.5).unwrap();
        let m = 40_000;
        let cloud = sample_reference_cloud(m, &s, 21).unwrap();
        let inside = (0..m).filter(|&i| euclid(cloud.point(i)) < 1.0).count() as f64 / m as f64;
        let exact = s.radial_integral(|r| if r < 1.0 { 1.0 } else { 0.0 }, 1e-10) / s.normalizer();
        let se = (exact * (1.0 - exact) / m as f64).sqrt();
        assert!((inside - exact).abs() < 3.0 * se, "{inside} vs {exact}");
    }

    #[test]
    fn norm_of_zero_and_constant_fields() {
        let s = space1(4.0);
        let cloud = sample_reference_cloud(300, &s, 1).unwrap();
        assert_eq!(weighted_l2_norm(&vec![0.0; 300], &cloud, &s).unwrap(), 0.0);
        let c = -2.5;
        let v = weighted_l2_norm(&vec![c; 300], &cloud, &s).unwrap();
        assert!((v - c.abs() * s.normalizer().sqrt()).abs() < 1e-12);
        assert!(weighted_l2_norm(&[1.0, 2.0], &cloud, &s).is_err());
    }

    #[test]
    fn linear_field_norm_matches_quadrature() {
        let s = WeightedSpace::new(1, 5.0, 2.5).unwrap();
        let m = 100_000;
        let cloud = sample_reference_cloud(m, &s, 17).unwrap();
        let est = weighted_l2_norm(cloud.points(), &cloud, &s).unwrap();
        let exact_sq = s.radial_integral(|r| r * r, 1e-12);
        // delta-method standard error of sqrt(Z mean x²)
        let z = s.normalizer();
        let x2: Vec<f64> = cloud.points().iter().map(|x| x * x).collect();
        let mean = x2.iter().sum::<f64>() / m as f64;
        let var = x2.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m as f64 - 1.0);
        let se = z * (var / m as f64).sqrt() / (2.0 * est);
        assert!((est - exact_sq.sqrt()).abs() < 3.0 * se, "{est} vs {}", exact_sq.sqrt());
    }

    #[test]
    fn monte_carlo_rate_is_root_m() {
        let s = WeightedSpace::new(1, 5.0, 2.5).unwrap();
        let field = |x: f64| (-x * x).exp();
        let exact = s.radial_integral(|r| field(r).powi(2), 1e-12).sqrt();
        let ms = [1_000usize, 10_000, 100_000];
        let mut logs = Vec::new();
        for &m in &ms {
            // RMS error over independent clouds
            let reps = 24;
            let mut sq = 0.0;
            for r in 0..reps {
                let cloud = sample_reference_cloud(m, &s, 1000 + r).unwrap();
                let f: Vec<f64> = cloud.points().iter().map(|&x| field(x)).collect();
                let e = weighted_l2_norm(&f, &cloud, &s).unwrap() - exact;
                sq += e * e;
            }
            logs.push(((m as f64).ln(), (sq / reps as f64).sqrt().ln()));
        }
        let n = logs.len() as f64;
        let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
        let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
        let slope = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / logs.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        assert!((-0.65..=-0.35).contains(&slope), "slope {slope}");
    }

    #[test]
    fn discounted_norms_of_simple_processes() {
        let s = space1(4.0);
        let cloud = sample_reference_cloud(50, &s, 2).unwrap();
        let dt = 0.01;
        let steps = 300;
        let k = 0.7;
        let spec = DiscountedNormSpec::uniform(k, 0.0, dt, steps).unwrap();
        let zero = vec![vec![0.0; 50]; steps + 1];
        assert_eq!(discounted_l2_process_norm(&zero, &spec, &cloud, &s).unwrap(), 0.0);
        assert_eq!(discounted_sup_norm(&zero, &spec, &cloud, &s).unwrap(), 0.0);

        let c = 1.5;
        let constant = vec![vec![c; 50]; steps + 1];
        let c2 = c * c * s.normalizer();
        let t = steps as f64 * dt;
        let v = discounted_l2_process_norm(&constant, &spec, &cloud, &s).unwrap();
        let exact = c2 * (1.0 - (-k * t).exp()) / k;
        // trapezoid error bound: T·dt²·max|f''|/12
        assert!((v - exact).abs() <= t * dt * dt * k * k * c2 / 12.0 + 1e-12);
        let sup = discounted_sup_norm(&constant, &spec, &cloud, &s).unwrap();
        assert!((sup - c2).abs() < 1e-12);
    }

    #[test]
    fn growing_process_is_flagged_divergent() {
        let s = space1(4.0);
        let cloud = sample_reference_cloud(20, &s, 2).unwrap();
        let dt = 0.05;
        let steps = 100;
        let k = 0.5;
        let spec = DiscountedNormSpec::uniform(k, 0.0, dt, steps).unwrap();
        let growing: Vec<Vec<f64>> = (0..=steps).map(|i| vec![(0.5 * k * i as f64 * dt).exp(); 20]).collect();
        let prof = discounted_l2_profile(&growing, &spec, &cloud, &s).unwrap();
        assert!(prof.divergent);
        assert!((prof.value - s.normalizer() * 5.0).abs() < 1e-9);
        let sup = discounted_sup_norm(&growing, &spec, &cloud, &s).unwrap();
        assert!((sup - s.normalizer()).abs() < 1e-9);

        let decaying: Vec<Vec<f64>> = (0..=steps).map(|_| vec![1.0; 20]).collect();
        assert!(!discounted_l2_profile(&decaying, &spec, &cloud, &s).unwrap().divergent);
    }

    proptest::proptest! {
        #[test]
        fn norm_is_homogeneous_and_subadditive(
            a in proptest::collection::vec(-10.0f64..10.0, 40),
            b in proptest::collection::vec(-10.0f64..10.0, 40),
            c in -5.0f64..5.0,
        ) {
            let s = WeightedSpace::new(1, 4.0, 2.5).unwrap();
            let cloud = sample_reference_cloud(40, &s, 4).unwrap();
            let na = weighted_l2_norm(&a, &cloud, &s).unwrap();
            let nb = weighted_l2_norm(&b, &cloud, &s).unwrap();
            let scaled: Vec<f64> = a.iter().map(|v| c * v).collect();
            let ns = weighted_l2_norm(&scaled, &cloud, &s).unwrap();
            proptest::prop_assert!((ns - c.abs() * na).abs() <= 1e-12 * (1.0 + ns));
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let nsum = weighted_l2_norm(&sum, &cloud, &s).unwrap();
            proptest::prop_assert!(nsum <= na + nb + 1e-12);
        }
    }
}
