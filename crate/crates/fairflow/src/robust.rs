//! Worst-case safety and fairness margins over every demand composition
//! consistent with the aggregate observations.
//!
//! The observable pair `(z, d)` under the applied price pins the composition
//! `w` only up to the polytope `{w >= 0, sum w = 1, sum_i f_i(p_applied) w_i
//! = d / z}`. Both margins are affine in `w` at the current state, so their
//! minima over the polytope are attained at vertices; every vertex has at
//! most two nonzero components, which makes enumeration a handful of 2x2
//! solves.

use thiserror::Error;

use crate::cbf::{self, ExtendedState};
use crate::metrics::FairnessWindow;
use crate::model::{ClassParams, Control, Observation, SystemParams};
use crate::scalar::Real;

/// Feasibility slack allowed when deciding whether an observation admits any
/// composition at all.
pub const EMPTY_TOL: f64 = 1e-9;
/// `|f_i - d/z|` below which a unit vector is itself a vertex.
const UNIT_VERTEX_TOL: f64 = 1e-10;
/// Pairs of classes with dropout rates closer than this are indistinguishable
/// at the applied price and are skipped during pair enumeration.
const PAIR_TOL: f64 = 1e-9;
/// Slack on vertex components outside `[0, 1]` before a candidate is dropped.
const COMPONENT_TOL: f64 = 1e-10;
/// L-infinity distance below which two vertices are considered duplicates.
const DEDUP_TOL: f64 = 1e-8;

/// No type distribution is compatible with the observed aggregates.
#[derive(Debug, Clone, Error)]
#[error("no demand composition is consistent with the observation: z = {z}, d = {d}, attainable dropout range [{d_lo}, {d_hi}]")]
pub struct EmptyConsistencySet {
    pub z: f64,
    pub d: f64,
    pub d_lo: f64,
    pub d_hi: f64,
}

/// The set of type-proportion vectors consistent with one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencySet<R> {
    /// Aggregate demand queue length.
    pub z: R,
    /// Observed aggregate dropout rate.
    pub d: R,
    /// Price in force when `d` was measured.
    pub p_applied: R,
    /// Per-class dropout rates at the applied price.
    pub f: Vec<R>,
}

impl<R: Real> ConsistencySet<R> {
    pub fn new(z: R, d: R, p_applied: R, classes: &[ClassParams<R>]) -> Self {
        let f = classes.iter().map(|c| c.dropout_rate(p_applied)).collect();
        Self { z, d, p_applied, f }
    }

    pub fn from_observation(obs: &Observation<R>, classes: &[ClassParams<R>]) -> Self {
        Self::new(obs.z, obs.d, obs.p_applied, classes)
    }

    fn empty_error(&self) -> EmptyConsistencySet {
        let (lo, hi) = self.dropout_range();
        EmptyConsistencySet {
            z: self.z.as_f64(),
            d: self.d.as_f64(),
            d_lo: lo.as_f64(),
            d_hi: hi.as_f64(),
        }
    }

    /// Attainable aggregate dropout range `[z * min f, z * max f]`.
    fn dropout_range(&self) -> (R, R) {
        let mut lo = R::infinity();
        let mut hi = R::neg_infinity();
        for &fi in &self.f {
            lo = lo.min(fi);
            hi = hi.max(fi);
        }
        (self.z * lo, self.z * hi)
    }

    /// Whether the invariant `z min f <= d <= z max f` (with tolerance) holds;
    /// for `z = 0` the set is the whole simplex provided `d = 0`.
    pub fn is_consistent(&self) -> bool {
        if self.f.is_empty() {
            return false;
        }
        let tol = R::of(EMPTY_TOL);
        if self.z <= R::zero() {
            return self.d.abs() <= tol;
        }
        let (lo, hi) = self.dropout_range();
        self.d >= lo - tol * self.z.max(R::one()) && self.d <= hi + tol * self.z.max(R::one())
    }

    /// Enumerate the vertices of the consistency polytope.
    ///
    /// Every vertex has support of size at most two: unit vectors `e_i` with
    /// `f_i = d/z`, and solutions of the 2x2 system over pairs with
    /// `f_i != f_j`. For `z = 0` the polytope is the whole simplex and the
    /// vertices are the `n` unit vectors.
    pub fn vertices(&self) -> Result<Vec<Vec<R>>, EmptyConsistencySet> {
        if !self.is_consistent() {
            return Err(self.empty_error());
        }
        let n = self.f.len();
        if self.z <= R::zero() {
            return Ok(unit_vectors(n));
        }

        let (lo, hi) = self.dropout_range();
        // Keep the target inside the attainable range so a value within the
        // feasibility slack still produces its boundary vertex.
        let c = (self.d.clamp_to(lo, hi)) / self.z;

        let unit_tol = R::of(UNIT_VERTEX_TOL);
        let pair_tol = R::of(PAIR_TOL);
        let comp_lo = -R::of(COMPONENT_TOL);
        let comp_hi = R::one() + R::of(COMPONENT_TOL);

        let mut verts: Vec<Vec<R>> = Vec::new();
        let mut push = |w: Vec<R>| {
            let dup = verts.iter().any(|v| {
                v.iter()
                    .zip(&w)
                    .all(|(&a, &b)| (a - b).abs() <= R::of(DEDUP_TOL))
            });
            if !dup {
                verts.push(w);
            }
        };

        for i in 0..n {
            if (self.f[i] - c).abs() <= unit_tol {
                let mut w = vec![R::zero(); n];
                w[i] = R::one();
                push(w);
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let denom = self.f[i] - self.f[j];
                if denom.abs() <= pair_tol {
                    continue;
                }
                let wi = (c - self.f[j]) / denom;
                let wj = R::one() - wi;
                if wi >= comp_lo && wi <= comp_hi && wj >= comp_lo && wj <= comp_hi {
                    let mut w = vec![R::zero(); n];
                    w[i] = wi.clamp01();
                    w[j] = wj.clamp01();
                    push(w);
                }
            }
        }

        debug_assert!(!verts.is_empty(), "consistent set must expose a vertex");
        Ok(verts)
    }

    /// Componentwise mean of the vertex set: the nominal composition used for
    /// revenue prediction and the reported queue-length estimate.
    pub fn vertex_mean(vertices: &[Vec<R>]) -> Vec<R> {
        let n = vertices.first().map_or(0, Vec::len);
        let count = R::of(vertices.len() as f64);
        let mut mean = vec![R::zero(); n];
        for v in vertices {
            for (m, &vi) in mean.iter_mut().zip(v) {
                *m = *m + vi;
            }
        }
        for m in &mut mean {
            *m = *m / count;
        }
        mean
    }
}

fn unit_vectors<R: Real>(n: usize) -> Vec<Vec<R>> {
    (0..n)
        .map(|i| {
            let mut w = vec![R::zero(); n];
            w[i] = R::one();
            w
        })
        .collect()
}

/// Interval estimate for one class's demand queue length.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StateBounds<R> {
    pub lo: R,
    /// Vertex-mean estimate, the dashed "estimated average" in reports.
    pub mean: R,
    pub hi: R,
}

/// Per-class worst-case queue-length intervals `z * [min_w w_i, max_w w_i]`
/// over the vertex set, with the vertex-mean as the point estimate.
pub fn state_bounds<R: Real>(
    cs: &ConsistencySet<R>,
) -> Result<Vec<StateBounds<R>>, EmptyConsistencySet> {
    let verts = cs.vertices()?;
    let mean = ConsistencySet::vertex_mean(&verts);
    let n = mean.len();
    Ok((0..n)
        .map(|i| {
            let mut lo = R::infinity();
            let mut hi = R::neg_infinity();
            for v in &verts {
                lo = lo.min(v[i]);
                hi = hi.max(v[i]);
            }
            StateBounds {
                lo: cs.z * lo,
                mean: cs.z * mean[i],
                hi: cs.z * hi,
            }
        })
        .collect())
}

/// Both worst-case margins for one candidate control, sharing the per-vertex
/// state prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorstCaseMargins<R> {
    pub capacity: R,
    pub fairness: R,
}

/// Evaluate the worst case of both margins over an explicit vertex list.
///
/// For each vertex the state is propagated over `horizon` under the candidate
/// control with that composition held fixed; the capacity margin is evaluated
/// at the predicted state and the fairness margin at the index predicted from
/// the mean dropout ratio. `index_coeffs` are the window's prediction
/// coefficients at the decision time (see
/// [`FairnessWindow::prediction_coeffs`]).
#[allow(clippy::too_many_arguments)]
pub fn worst_case_margins<R: Real>(
    state: &ExtendedState<R>,
    ctrl: Control<R>,
    vertices: &[Vec<R>],
    index_coeffs: (R, R),
    k: R,
    sp: &SystemParams<R>,
    classes: &[ClassParams<R>],
    horizon: R,
) -> WorstCaseMargins<R> {
    let mut capacity = R::infinity();
    let mut fairness = R::infinity();
    for w in vertices {
        let pred = cbf::predict_state(state, ctrl, w, k, sp, classes, horizon);
        let m1 = cbf::capacity_margin(&pred.state, ctrl, w, k, sp, classes);
        let index = index_coeffs.0 + index_coeffs.1 * pred.mean_ratio;
        let m2 = cbf::fairness_margin(index, sp.theta_d);
        capacity = capacity.min(m1);
        fairness = fairness.min(m2);
    }
    WorstCaseMargins { capacity, fairness }
}

/// Worst-case capacity margin over the consistency set (going through the
/// one-window state prediction for each vertex).
pub fn worst_case_capacity_margin<R: Real>(
    state: &ExtendedState<R>,
    ctrl: Control<R>,
    cs: &ConsistencySet<R>,
    k: R,
    sp: &SystemParams<R>,
    classes: &[ClassParams<R>],
    horizon: R,
) -> Result<R, EmptyConsistencySet> {
    let verts = cs.vertices()?;
    Ok(worst_case_margins(
        state,
        ctrl,
        &verts,
        (R::zero(), R::zero()),
        k,
        sp,
        classes,
        horizon,
    )
    .capacity)
}

/// Worst-case fairness margin over the consistency set at decision time
/// `t_now`, predicting one window of length `sp.t_d` ahead.
#[allow(clippy::too_many_arguments)]
pub fn worst_case_fairness_margin<R: Real>(
    window: &FairnessWindow<R>,
    state: &ExtendedState<R>,
    ctrl: Control<R>,
    cs: &ConsistencySet<R>,
    k: R,
    sp: &SystemParams<R>,
    classes: &[ClassParams<R>],
    t_now: R,
    horizon: R,
) -> Result<R, EmptyConsistencySet> {
    let verts = cs.vertices()?;
    let coeffs = window.prediction_coeffs(t_now, sp.t_d);
    Ok(worst_case_margins(state, ctrl, &verts, coeffs, k, sp, classes, horizon).fairness)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sp() -> SystemParams<f64> {
        SystemParams::default()
    }

    fn classes_from_f(f: &[f64]) -> Vec<ClassParams<f64>> {
        // r1 = 0 and r2 = f makes the dropout rate price-independent, so a
        // test can pin arbitrary per-class rates directly.
        f.iter()
            .map(|&fi| ClassParams { r1: 0.0, r2: fi })
            .collect()
    }

    #[test]
    fn two_group_set_is_singleton() {
        let classes: Vec<ClassParams<f64>> = vec![
            ClassParams { r1: 0.05, r2: 0.0 },
            ClassParams { r1: 0.0, r2: 0.0 },
        ];
        let cs = ConsistencySet::new(20.0, 5.0, 10.0, &classes);
        let verts = cs.vertices().unwrap();
        assert_eq!(verts.len(), 1);
        assert!((verts[0][0] - 0.5).abs() < 1e-12);
        assert!((verts[0][1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn three_group_worked_example() {
        let classes: Vec<ClassParams<f64>> = vec![
            ClassParams { r1: 0.05, r2: 0.0 },
            ClassParams { r1: 0.02, r2: 0.0 },
            ClassParams { r1: 0.0, r2: 0.0 },
        ];
        let cs = ConsistencySet::new(10.0, 2.0, 10.0, &classes);
        let mut verts = cs.vertices().unwrap();
        verts.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        assert_eq!(verts.len(), 2);
        assert!(verts[0]
            .iter()
            .zip(&[0.0, 1.0, 0.0])
            .all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(verts[1]
            .iter()
            .zip(&[0.4, 0.0, 0.6])
            .all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn inconsistent_observation_is_empty() {
        let classes: Vec<ClassParams<f64>> = vec![
            ClassParams { r1: 0.05, r2: 0.0 },
            ClassParams { r1: 0.0, r2: 0.0 },
        ];
        // max f = 0.5 at p = 10, so d = 6 > z * 0.5 = 5 is unattainable
        let cs = ConsistencySet::new(10.0, 6.0, 10.0, &classes);
        assert!(!cs.is_consistent());
        let err = cs.vertices().unwrap_err();
        assert!(err.d_hi < err.d);
    }

    #[test]
    fn zero_demand_queue_gives_whole_simplex() {
        let classes = classes_from_f(&[0.3, 0.1, 0.0]);
        let cs = ConsistencySet::new(0.0, 0.0, 2.0, &classes);
        let verts = cs.vertices().unwrap();
        assert_eq!(
            verts,
            vec![
                vec![1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
            ]
        );

        let bad = ConsistencySet::new(0.0, 0.5, 2.0, &classes);
        assert!(bad.vertices().is_err());
    }

    #[test]
    fn identical_classes_collapse_to_unit_vertices() {
        let classes = classes_from_f(&[0.2, 0.2, 0.2]);
        let cs = ConsistencySet::new(5.0, 1.0, 1.0, &classes);
        let verts = cs.vertices().unwrap();
        assert_eq!(verts.len(), 3);
        let off = ConsistencySet::new(5.0, 2.0, 1.0, &classes_from_f(&[0.2, 0.2, 0.2]));
        assert!(off.vertices().is_err());
    }

    proptest::proptest! {
        /// Every returned vertex lies on the simplex and on the dropout
        /// consistency hyperplane, and the count never exceeds
        /// n(n-1)/2 + n.
        #[test]
        fn vertices_are_feasible(
            f in proptest::collection::vec(0.0f64..1.0, 1..6),
            lambda in 0.0f64..1.0,
            z in 0.01f64..50.0,
        ) {
            let n = f.len();
            let classes = classes_from_f(&f);
            let fmin = f.iter().cloned().fold(f64::INFINITY, f64::min);
            let fmax = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let c = fmin + lambda * (fmax - fmin);
            let cs = ConsistencySet::new(z, c * z, 1.0, &classes);
            let verts = cs.vertices().unwrap();
            proptest::prop_assert!(!verts.is_empty());
            proptest::prop_assert!(verts.len() <= n * (n - 1) / 2 + n);
            for w in &verts {
                let sum: f64 = w.iter().sum();
                proptest::prop_assert!((sum - 1.0).abs() <= 1e-10);
                proptest::prop_assert!(w.iter().all(|&wi| (0.0..=1.0 + 1e-10).contains(&wi)));
                let dot: f64 = w.iter().zip(&f).map(|(wi, fi)| wi * fi).sum();
                proptest::prop_assert!((dot - c).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn state_bounds_three_group_example() {
        let classes: Vec<ClassParams<f64>> = vec![
            ClassParams { r1: 0.05, r2: 0.0 },
            ClassParams { r1: 0.02, r2: 0.0 },
            ClassParams { r1: 0.0, r2: 0.0 },
        ];
        let cs = ConsistencySet::new(10.0, 2.0, 10.0, &classes);
        let bounds = state_bounds(&cs).unwrap();
        assert!((bounds[0].lo - 0.0).abs() < 1e-9 && (bounds[0].hi - 4.0).abs() < 1e-9);
        assert!((bounds[1].lo - 0.0).abs() < 1e-9 && (bounds[1].hi - 10.0).abs() < 1e-9);
        assert!((bounds[2].lo - 0.0).abs() < 1e-9 && (bounds[2].hi - 6.0).abs() < 1e-9);
        // vertex mean of {(0.4,0,0.6),(0,1,0)} scaled by z
        assert!((bounds[0].mean - 2.0).abs() < 1e-9);

        let singleton = ConsistencySet::<f64>::new(
            20.0,
            5.0,
            10.0,
            &[
                ClassParams { r1: 0.05, r2: 0.0 },
                ClassParams { r1: 0.0, r2: 0.0 },
            ],
        );
        for b in state_bounds(&singleton).unwrap() {
            assert!((b.hi - b.lo).abs() < 1e-12);
        }

        let empty_queue = ConsistencySet::new(0.0, 0.0, 10.0, &classes);
        for b in state_bounds(&empty_queue).unwrap() {
            assert_eq!((b.lo, b.hi), (0.0, 0.0));
        }
    }

    #[test]
    fn singleton_worst_case_equals_plain_margins() {
        let classes: Vec<ClassParams<f64>> = vec![
            ClassParams { r1: 0.05, r2: 0.0 },
            ClassParams { r1: 0.0, r2: 0.0 },
        ];
        let cs = ConsistencySet::new(20.0, 5.0, 10.0, &classes);
        let state = ExtendedState::new(5.0, 20.0, 0.5);
        let ctrl = Control { p: 4.0, nu: 0.5 };
        let wc = worst_case_capacity_margin(&state, ctrl, &cs, 6.0, &sp(), &classes, 0.0).unwrap();
        let direct = cbf::capacity_margin(&state, ctrl, &[0.5, 0.5], 6.0, &sp(), &classes);
        assert!((wc - direct).abs() < 1e-12);
    }

    #[test]
    fn singleton_worst_case_fairness_equals_plain_margin() {
        let classes: Vec<ClassParams<f64>> = vec![
            ClassParams { r1: 0.05, r2: 0.0 },
            ClassParams { r1: 0.0, r2: 0.0 },
        ];
        let cs = ConsistencySet::new(20.0, 5.0, 10.0, &classes);
        let state = ExtendedState::new(5.0, 20.0, 0.5);
        let ctrl = Control { p: 4.0, nu: 0.5 };
        let spx = sp();
        let mut window = FairnessWindow::new(spx.t_i);
        for i in 1..=40 {
            window.record_sample(0.1 * i as f64, 0.8, 4.0).unwrap();
        }
        let t_now = 4.0;
        let wc = worst_case_fairness_margin(
            &window, &state, ctrl, &cs, 6.0, &spx, &classes, t_now, spx.t_d,
        )
        .unwrap();
        let pred = cbf::predict_state(&state, ctrl, &[0.5, 0.5], 6.0, &spx, &classes, spx.t_d);
        let direct = spx.theta_d - window.predict_index(t_now, spx.t_d, pred.mean_ratio);
        assert!((wc - direct).abs() < 1e-12);
    }

    /// With every dropout rate zero at the candidate price, the fairness
    /// margin does not depend on the composition at all.
    #[test]
    fn zero_dropout_fairness_margin_is_composition_free() {
        let classes: Vec<ClassParams<f64>> = vec![
            ClassParams { r1: 0.05, r2: 0.0 },
            ClassParams { r1: 0.02, r2: 0.0 },
            ClassParams { r1: 0.0, r2: 0.0 },
        ];
        let cs = ConsistencySet::new(10.0, 2.0, 10.0, &classes);
        let state = ExtendedState::new(3.0, 10.0, 0.6);
        let ctrl = Control { p: 0.0, nu: 0.0 }; // f_i(0) = 0 for every class
        let spx = sp();
        let mut window = FairnessWindow::new(spx.t_i);
        window.record_sample(1.0, 1.0, 2.0).unwrap();
        let wc = worst_case_fairness_margin(
            &window, &state, ctrl, &cs, 4.0, &spx, &classes, 1.0, spx.t_d,
        )
        .unwrap();
        let expected = spx.theta_d - window.predict_index(1.0, spx.t_d, 0.0);
        assert!((wc - expected).abs() < 1e-15);
        // and the same value comes out at any particular feasible composition
        for w in cs.vertices().unwrap() {
            let pred = cbf::predict_state(&state, ctrl, &w, 4.0, &spx, &classes, spx.t_d);
            assert_eq!(pred.mean_ratio, 0.0);
        }
    }

    #[test]
    fn full_simplex_worst_case_is_min_over_unit_vectors() {
        let classes = classes_from_f(&[0.4, 0.1, 0.0]);
        let cs = ConsistencySet::new(0.0, 0.0, 1.0, &classes);
        let state = ExtendedState::new(3.0, 0.0, 0.5);
        let ctrl = Control { p: 2.0, nu: 0.1 };
        let wc = worst_case_capacity_margin(&state, ctrl, &cs, 4.0, &sp(), &classes, 0.0).unwrap();
        let direct = (0..3)
            .map(|i| {
                let mut w = vec![0.0; 3];
                w[i] = 1.0;
                cbf::capacity_margin(&state, ctrl, &w, 4.0, &sp(), &classes)
            })
            .fold(f64::INFINITY, f64::min);
        assert!((wc - direct).abs() < 1e-12);
    }

    /// Dense feasible sample of the polytope: lattice points of the simplex
    /// that straddle the hyperplane, connected along lattice edges, yield
    /// crossing points that cover the polytope and hit its vertices exactly.
    fn dense_polytope_sample(f: &[f64], c: f64, per_axis: usize) -> Vec<Vec<f64>> {
        let n = f.len();
        let mut lattice: Vec<Vec<usize>> = Vec::new();
        fn compositions(
            n: usize,
            total: usize,
            prefix: &mut Vec<usize>,
            out: &mut Vec<Vec<usize>>,
        ) {
            if n == 1 {
                let mut v = prefix.clone();
                v.push(total);
                out.push(v);
                return;
            }
            for k in 0..=total {
                prefix.push(k);
                compositions(n - 1, total - k, prefix, out);
                prefix.pop();
            }
        }
        compositions(n, per_axis, &mut Vec::new(), &mut lattice);
        let m = per_axis as f64;
        let value = |w: &[f64]| w.iter().zip(f).map(|(wi, fi)| wi * fi).sum::<f64>();
        let mut points = Vec::new();
        for comp in &lattice {
            let u: Vec<f64> = comp.iter().map(|&k| k as f64 / m).collect();
            let vu = value(&u);
            if (vu - c).abs() < 1e-12 {
                points.push(u.clone());
            }
            // neighbors along each (i -> j) edge direction
            for i in 0..n {
                if comp[i] == 0 {
                    continue;
                }
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let mut vcomp = comp.clone();
                    vcomp[i] -= 1;
                    vcomp[j] += 1;
                    let v: Vec<f64> = vcomp.iter().map(|&k| k as f64 / m).collect();
                    let vv = value(&v);
                    if (vu - c) * (vv - c) < 0.0 {
                        let theta = (c - vv) / (vu - vv);
                        let w: Vec<f64> = u
                            .iter()
                            .zip(&v)
                            .map(|(a, b)| theta * a + (1.0 - theta) * b)
                            .collect();
                        points.push(w);
                    }
                }
            }
        }
        points
    }

    #[test]
    fn vertex_minimum_matches_dense_grid_for_affine_objectives() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..40 {
            let n = rng.gen_range(2..=5);
            let f: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let fmin = f.iter().cloned().fold(f64::INFINITY, f64::min);
            let fmax = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let c = rng.gen_range(fmin..=fmax.max(fmin + f64::EPSILON));
            let classes = classes_from_f(&f);
            let z = rng.gen_range(0.5..30.0);
            let cs = ConsistencySet::new(z, c * z, 1.0, &classes);
            let verts = cs.vertices().unwrap();
            let sample = dense_polytope_sample(&f, c, 18);
            if sample.is_empty() {
                continue;
            }
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let objective = |w: &[f64]| w.iter().zip(&a).map(|(wi, ai)| wi * ai).sum::<f64>();
            let vmin = verts
                .iter()
                .map(|w| objective(w))
                .fold(f64::INFINITY, f64::min);
            let gmin = sample
                .iter()
                .map(|w| objective(w))
                .fold(f64::INFINITY, f64::min);
            assert!(
                (vmin - gmin).abs() < 1e-6,
                "vertex min {vmin} vs grid min {gmin} (n={n})"
            );
        }
    }

    /// Soundness at horizon zero: both margins are affine in w there, so the
    /// vertex minimum must lower-bound the margin at every feasible point.
    #[test]
    fn worst_case_is_sound_against_dense_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let spx = sp();
        for _ in 0..25 {
            let n = rng.gen_range(2..=4);
            let classes: Vec<ClassParams<f64>> = (0..n)
                .map(|_| ClassParams {
                    r1: rng.gen_range(0.0..0.08),
                    r2: rng.gen_range(0.0..0.2),
                })
                .collect();
            let p_applied = rng.gen_range(0.5..10.0);
            let f: Vec<f64> = classes.iter().map(|c| c.dropout_rate(p_applied)).collect();
            let fmin = f.iter().cloned().fold(f64::INFINITY, f64::min);
            let fmax = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if fmax - fmin < 1e-6 {
                continue;
            }
            let c = rng.gen_range(fmin..fmax);
            let z = rng.gen_range(1.0..30.0);
            let cs = ConsistencySet::new(z, c * z, p_applied, &classes);
            let state = ExtendedState::new(rng.gen_range(0.0..14.0), z, rng.gen_range(0.0..1.0));
            let ctrl = Control {
                p: rng.gen_range(0.0..10.0),
                nu: rng.gen_range(-5.0..5.0),
            };
            let k = rng.gen_range(0.5..12.0);
            let mut window = FairnessWindow::new(spx.t_i);
            let mut t = 0.0;
            for _ in 0..rng.gen_range(1..100) {
                t += 0.1;
                window
                    .record_sample(t, rng.gen_range(0.0..2.0), 1.0)
                    .unwrap();
            }
            let wc_cap =
                worst_case_capacity_margin(&state, ctrl, &cs, k, &spx, &classes, 0.0).unwrap();
            let wc_fair =
                worst_case_fairness_margin(&window, &state, ctrl, &cs, k, &spx, &classes, t, 0.0)
                    .unwrap();
            let coeffs = window.prediction_coeffs(t, spx.t_d);
            for w in dense_polytope_sample(&f, c, 14) {
                let cap = cbf::capacity_margin(&state, ctrl, &w, k, &spx, &classes);
                assert!(
                    cap >= wc_cap - 1e-6,
                    "capacity {cap} below worst case {wc_cap}"
                );
                let phi: f64 = w
                    .iter()
                    .zip(&classes)
                    .map(|(wi, cl)| wi * cl.dropout_rate(ctrl.p))
                    .sum();
                let ratio = if k > 0.0 { phi * z / k } else { 0.0 };
                let fair = spx.theta_d - (coeffs.0 + coeffs.1 * ratio);
                assert!(
                    fair >= wc_fair - 1e-6,
                    "fairness {fair} below worst case {wc_fair}"
                );
            }
        }
    }
}
