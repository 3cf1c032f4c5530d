//! Comparator score fields and Monte Carlo estimators for the integrated
//! score risk, its mixture version, and comparator approximation error.
//!
//! Ground-truth scores always come from the analytic module, never from
//! denoising targets, so Monte Carlo variance is confined to the outer
//! expectation over X_t.

// Monte Carlo inner loops index several row-aligned buffers at once.
#![allow(clippy::needless_range_loop)]

use nalgebra::DMatrix;
use serde::Serialize;

use crate::datamodel::{sample_data_with, sample_mixture_with, MixtureModel, NoisyLowDimModel};
use crate::error::{Error, Result};
use crate::geometry::{pseudo_inverse, subspace_report, Frame, RANK_REL_TOL};
use crate::mc::{run_time_averaged, McBudget, WorkerBlock};
use crate::rng;
use crate::schedule::DiffusionSchedule;
use crate::score::{
    AnalyticMixtureScore, AnalyticScore, CoreMap, LatentLaw, ProjectedMixtureLaw, ProjectedScore,
    ScoreField, TimeSlice,
};

/// A Monte Carlo risk value with its batch-mean standard error.
#[derive(Debug, Clone, Serialize)]
pub struct RiskEstimate {
    pub value: f64,
    pub stderr: f64,
    pub per_node: Vec<f64>,
    pub n_samples: usize,
    pub seed: u64,
}

/// The reference law an estimator draws from and regresses against.
#[derive(Clone, Copy)]
pub enum Reference<'a> {
    Single(&'a NoisyLowDimModel),
    Mixture(&'a MixtureModel),
}

impl<'a> Reference<'a> {
    pub fn ambient_dim(&self) -> usize {
        match self {
            Reference::Single(m) => m.ambient_dim(),
            Reference::Mixture(m) => m.ambient_dim(),
        }
    }

    fn sample_x0(&self, n: usize, rng: &mut rng::Stream) -> DMatrix<f64> {
        match self {
            Reference::Single(m) => sample_data_with(m, n, rng),
            Reference::Mixture(m) => sample_mixture_with(m, n, rng).0,
        }
    }

    fn score_slice(&self, t: f64) -> Result<TimeSlice<'a>> {
        match self {
            Reference::Single(m) => AnalyticScore { model: m }.at_owned(t),
            Reference::Mixture(m) => AnalyticMixtureScore { mix: m }.at_owned(t),
        }
    }
}

impl<'a> AnalyticScore<'a> {
    fn at_owned(&self, t: f64) -> Result<TimeSlice<'a>> {
        let law = crate::score::AmbientLaw::new(self.model, t)?;
        Ok(Box::new(move |x| law.score(x)))
    }
}

impl<'a> AnalyticMixtureScore<'a> {
    fn at_owned(&self, t: f64) -> Result<TimeSlice<'a>> {
        let law = crate::score::MixtureLaw::new(self.mix, t)?;
        Ok(Box::new(move |x| law.score_and_posterior(x).0))
    }
}

/// f_comp(z, t) = B g(B^+ z, t) with B = V1' A2: reconstructs the target
/// latent coordinate from the frozen coordinate, applies the target latent
/// map, and returns to frozen coordinates.
#[derive(Clone)]
pub struct FrozenComparatorCore {
    target: NoisyLowDimModel,
    b: DMatrix<f64>,
    b_pinv: DMatrix<f64>,
    dim: usize,
}

impl FrozenComparatorCore {
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn b_pinv(&self) -> &DMatrix<f64> {
        &self.b_pinv
    }
}

impl CoreMap for FrozenComparatorCore {
    fn dim(&self) -> usize {
        self.dim
    }

    fn at(&self, t: f64) -> Result<TimeSlice<'_>> {
        let law = LatentLaw::new(&self.target, t)?;
        Ok(Box::new(move |z| &self.b * law.g(&(&self.b_pinv * z))))
    }
}

/// Frozen-coordinate comparator and its wrapped score field
/// s_comp(x, t) = (1/h) V1 f_comp(V1'x, t) - (1/h) x.
pub fn frozen_comparator(
    target: &NoisyLowDimModel,
    v1: &Frame,
) -> Result<ProjectedScore<FrozenComparatorCore>> {
    let rep = subspace_report(v1, target.frame())?;
    let core = FrozenComparatorCore {
        target: target.clone(),
        b: rep.b,
        b_pinv: rep.b_pinv,
        dim: v1.latent_dim(),
    };
    Ok(ProjectedScore::new(v1.clone(), core))
}

/// psi_{i,U}(z, t) = H_i g_i(H_i^+ z, t) with H_i = U' A_i.
#[derive(Clone)]
pub struct ComponentComparatorCore {
    model: NoisyLowDimModel,
    h: DMatrix<f64>,
    h_pinv: DMatrix<f64>,
    dim: usize,
}

impl ComponentComparatorCore {
    pub fn new(model: &NoisyLowDimModel, u: &Frame) -> Result<Self> {
        if u.ambient_dim() != model.ambient_dim() {
            return Err(Error::DimensionMismatch {
                left: u.ambient_dim(),
                right: model.ambient_dim(),
            });
        }
        let h = u.matrix().transpose() * model.frame().matrix();
        let (h_pinv, _, _) = pseudo_inverse(&h, RANK_REL_TOL);
        Ok(ComponentComparatorCore {
            model: model.clone(),
            h,
            h_pinv,
            dim: u.latent_dim(),
        })
    }

    pub fn cross_gram(&self) -> &DMatrix<f64> {
        &self.h
    }
}

impl CoreMap for ComponentComparatorCore {
    fn dim(&self) -> usize {
        self.dim
    }

    fn at(&self, t: f64) -> Result<TimeSlice<'_>> {
        let law = LatentLaw::new(&self.model, t)?;
        Ok(Box::new(move |z| &self.h * law.g(&(&self.h_pinv * z))))
    }
}

/// f_mix(z, t) = pi_1^U(z, t) psi_1(z, t) + pi_2^U(z, t) psi_2(z, t).
pub struct MixedComparatorCore {
    mix: MixtureModel,
    u: Frame,
    psi: [ComponentComparatorCore; 2],
}

impl MixedComparatorCore {
    pub fn psi(&self, i: usize) -> &ComponentComparatorCore {
        &self.psi[i]
    }
}

impl CoreMap for MixedComparatorCore {
    fn dim(&self) -> usize {
        self.u.latent_dim()
    }

    fn at(&self, t: f64) -> Result<TimeSlice<'_>> {
        let posterior = ProjectedMixtureLaw::new(&self.mix, &self.u, t)?;
        let psi1 = self.psi[0].at(t)?;
        let psi2 = self.psi[1].at(t)?;
        Ok(Box::new(move |z| {
            let pi = posterior.posterior(z);
            psi1(z) * pi[0] + psi2(z) * pi[1]
        }))
    }
}

/// Mixed comparator wrapped as (1/h) U f_mix(U'x, t) - (1/h) x.
pub fn mixed_comparator(
    mix: &MixtureModel,
    u: &Frame,
) -> Result<ProjectedScore<MixedComparatorCore>> {
    let core = MixedComparatorCore {
        mix: mix.clone(),
        u: u.clone(),
        psi: [
            ComponentComparatorCore::new(mix.component(0), u)?,
            ComponentComparatorCore::new(mix.component(1), u)?,
        ],
    };
    Ok(ProjectedScore::new(u.clone(), core))
}

/// Time-averaged E || s(X_t, t) - grad log p_t(X_t) ||^2 by Monte Carlo.
///
/// One X_0 batch per worker is renoised at every quadrature node with fresh
/// noise, which reduces variance across the time grid while keeping nodes
/// conditionally independent given X_0.
pub fn estimate_risk(
    s: &dyn ScoreField,
    reference: Reference<'_>,
    sched: &DiffusionSchedule,
    budget: &McBudget,
) -> Result<RiskEstimate> {
    let nodes = sched.nodes();
    let weights = sched.weights();
    let window = sched.window();
    // Surface preparation errors before entering the parallel section.
    let _ = s.at(nodes[0])?;
    let _ = reference.score_slice(nodes[0])?;

    let out = run_time_averaged(budget, nodes.len(), |w, n_w| {
        let mut x0_rng = rng::stream(budget.seed, "risk-x0", w as u64);
        let mut noise_rng = rng::stream(budget.seed, "risk-noise", w as u64);
        let x0 = reference.sample_x0(n_w, &mut x0_rng);
        let mut per_sample = vec![0.0; n_w];
        let mut node_sums = vec![0.0; nodes.len()];
        for (i, (&t, &qw)) in nodes.iter().zip(weights.iter()).enumerate() {
            let sv = crate::schedule::schedule_eval(t, 0.0).expect("node time");
            let s_slice = s.at(t).expect("score slice");
            let ref_slice = reference.score_slice(t).expect("reference slice");
            let xt = crate::datamodel::renoise_rows(&x0, sv.alpha, sv.h, &mut noise_rng);
            for j in 0..n_w {
                let x = xt.row(j).transpose();
                let err = (s_slice(&x) - ref_slice(&x)).norm_squared();
                per_sample[j] += qw * err / window;
                node_sums[i] += err;
            }
        }
        WorkerBlock {
            per_sample,
            node_sums,
        }
    });

    Ok(RiskEstimate {
        value: out.value,
        stderr: out.stderr,
        per_node: out.per_node,
        n_samples: out.n,
        seed: budget.seed,
    })
}

/// Time-averaged (1/h^2) E || f_a(U'X_t, t) - f_b(U'X_t, t) ||^2:
/// the approximation error of one core map against another on the
/// projected time-t distribution of the reference.
pub fn estimate_comparator_approx(
    f_a: &dyn CoreMap,
    f_b: &dyn CoreMap,
    u: &Frame,
    reference: Reference<'_>,
    sched: &DiffusionSchedule,
    budget: &McBudget,
) -> Result<RiskEstimate> {
    if f_a.dim() != u.latent_dim() || f_b.dim() != u.latent_dim() {
        return Err(Error::DimensionMismatch {
            left: f_a.dim(),
            right: u.latent_dim(),
        });
    }
    let nodes = sched.nodes();
    let weights = sched.weights();
    let window = sched.window();
    let _ = f_a.at(nodes[0])?;
    let _ = f_b.at(nodes[0])?;

    let out = run_time_averaged(budget, nodes.len(), |w, n_w| {
        let mut x0_rng = rng::stream(budget.seed, "approx-x0", w as u64);
        let mut noise_rng = rng::stream(budget.seed, "approx-noise", w as u64);
        let x0 = reference.sample_x0(n_w, &mut x0_rng);
        let mut per_sample = vec![0.0; n_w];
        let mut node_sums = vec![0.0; nodes.len()];
        for (i, (&t, &qw)) in nodes.iter().zip(weights.iter()).enumerate() {
            let sv = crate::schedule::schedule_eval(t, 0.0).expect("node time");
            let a_slice = f_a.at(t).expect("core a");
            let b_slice = f_b.at(t).expect("core b");
            let xt = crate::datamodel::renoise_rows(&x0, sv.alpha, sv.h, &mut noise_rng);
            let inv_h2 = 1.0 / (sv.h * sv.h);
            for j in 0..n_w {
                let z = u.project(&xt.row(j).transpose());
                let err = (a_slice(&z) - b_slice(&z)).norm_squared() * inv_h2;
                per_sample[j] += qw * err / window;
                node_sums[i] += err;
            }
        }
        WorkerBlock {
            per_sample,
            node_sums,
        }
    });

    Ok(RiskEstimate {
        value: out.value,
        stderr: out.stderr,
        per_node: out.per_node,
        n_samples: out.n,
        seed: budget.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{GaussianLatent, LatentDistribution};
    use crate::geometry;
    use crate::schedule::schedule_eval;
    use crate::score::ZeroCore;
    use nalgebra::DVector;

    fn std1() -> NoisyLowDimModel {
        NoisyLowDimModel::new(
            Frame::first_axes(2, 1),
            LatentDistribution::Gaussian(GaussianLatent::standard(1)),
            0.0,
        )
        .unwrap()
    }

    fn sched() -> DiffusionSchedule {
        DiffusionSchedule::new(0.1, 1.0, 16).unwrap()
    }

    fn budget(n: usize, seed: u64) -> McBudget {
        McBudget::new(seed).with_n(n)
    }

    #[test]
    fn analytic_score_has_zero_risk() {
        let model = std1();
        let s = AnalyticScore { model: &model };
        let est = estimate_risk(&s, Reference::Single(&model), &sched(), &budget(2000, 1)).unwrap();
        assert!(est.value.abs() < 1e-20, "value {}", est.value);
        assert!(est.stderr < 1e-20);
    }

    #[test]
    fn null_score_risk_matches_moment_formula() {
        let model = std1();
        let null = ProjectedScore::new(Frame::first_axes(2, 1), ZeroCore { dim: 1 });
        let est = estimate_risk(
            &null,
            Reference::Single(&model),
            &sched(),
            &budget(40_000, 2),
        )
        .unwrap();
        // E||G||^2 / h^2 = alpha^4 (alpha^2 + h) / h^2 = alpha^4 / h^2.
        let expect = sched()
            .time_average(|t| {
                let sv = schedule_eval(t, 0.0).unwrap();
                sv.alpha.powi(4) / (sv.h * sv.h)
            })
            .unwrap()
            .value;
        assert!(
            (est.value - expect).abs() < 3.0 * est.stderr,
            "{} vs {} pm {}",
            est.value,
            expect,
            est.stderr
        );
    }

    #[test]
    fn aligned_comparator_is_exact() {
        let model = std1();
        let comp = frozen_comparator(&model, &Frame::first_axes(2, 1)).unwrap();
        let est =
            estimate_risk(&comp, Reference::Single(&model), &sched(), &budget(2000, 3)).unwrap();
        assert!(est.value < 1e-20, "value {}", est.value);
    }

    #[test]
    fn orthogonal_projector_collapses_comparator() {
        // theta = pi/2: B = 0, so f_comp is zero and s_comp = -x/h.
        let model = std1();
        let v1 = geometry::make_frame(&DMatrix::from_row_slice(2, 1, &[0.0, 1.0])).unwrap();
        let comp = frozen_comparator(&model, &v1).unwrap();
        let t = 0.4;
        let h = schedule_eval(t, 0.0).unwrap().h;
        for xv in [[0.3, -0.8], [1.2, 0.4]] {
            let x = DVector::from_vec(xv.to_vec());
            let s = comp.eval(&x, t).unwrap();
            assert!((s + &x / h).norm() < 1e-12);
        }
    }

    #[test]
    fn comparator_zero_at_origin_for_centered_latent() {
        let model = std1();
        let v1 = geometry::rotate_frame(&Frame::first_axes(2, 1), &[0.5], 3).unwrap();
        let comp = frozen_comparator(&model, &v1).unwrap();
        let f0 = comp.core.eval(&DVector::zeros(1), 0.3).unwrap();
        assert!(f0.norm() < 1e-14);
    }

    #[test]
    fn approx_error_of_a_map_against_itself_is_zero() {
        let model = std1();
        let v1 = Frame::first_axes(2, 1);
        let comp = frozen_comparator(&model, &v1).unwrap();
        let est = estimate_comparator_approx(
            &comp.core,
            &comp.core,
            &v1,
            Reference::Single(&model),
            &sched(),
            &budget(2000, 4),
        )
        .unwrap();
        assert_eq!(est.value, 0.0);
    }

    struct OffsetCore<C> {
        inner: C,
        delta: DVector<f64>,
    }

    impl<C: CoreMap> CoreMap for OffsetCore<C> {
        fn dim(&self) -> usize {
            self.inner.dim()
        }
        fn at(&self, t: f64) -> Result<TimeSlice<'_>> {
            let inner = self.inner.at(t)?;
            Ok(Box::new(move |z| inner(z) + &self.delta))
        }
    }

    #[test]
    fn constant_offset_gives_closed_form_approx_error() {
        let model = std1();
        let v1 = Frame::first_axes(2, 1);
        let comp = frozen_comparator(&model, &v1).unwrap();
        let delta = DVector::from_vec(vec![0.37]);
        let shifted = OffsetCore {
            inner: comp.core.clone(),
            delta: delta.clone(),
        };
        let est = estimate_comparator_approx(
            &comp.core,
            &shifted,
            &v1,
            Reference::Single(&model),
            &sched(),
            &budget(5000, 5),
        )
        .unwrap();
        let expect = delta.norm_squared()
            * sched()
                .time_average(|t| {
                    let h = schedule_eval(t, 0.0).unwrap().h;
                    1.0 / (h * h)
                })
                .unwrap()
                .value;
        // Deterministic offset: zero MC variance, equality to rounding.
        assert!(
            (est.value - expect).abs() < 1e-10 * expect,
            "{} vs {}",
            est.value,
            expect
        );
    }

    #[test]
    fn mixed_comparator_reduces_to_component_map() {
        // Degenerate weight on component 1: f_mix = psi_1; with U = A_1 and
        // sigma = 0 the wrapped field equals the analytic component score.
        let model = std1();
        let mix = MixtureModel::new([1.0, 0.0], [model.clone(), model.clone()]).unwrap();
        let u = Frame::first_axes(2, 1);
        let comp = mixed_comparator(&mix, &u).unwrap();
        let est =
            estimate_risk(&comp, Reference::Mixture(&mix), &sched(), &budget(2000, 6)).unwrap();
        assert!(est.value < 1e-18, "value {}", est.value);
    }

    #[test]
    fn risk_estimates_are_bit_reproducible() {
        let model = std1();
        let null = ProjectedScore::new(Frame::first_axes(2, 1), ZeroCore { dim: 1 });
        let a =
            estimate_risk(&null, Reference::Single(&model), &sched(), &budget(4000, 7)).unwrap();
        let b =
            estimate_risk(&null, Reference::Single(&model), &sched(), &budget(4000, 7)).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
        let c =
            estimate_risk(&null, Reference::Single(&model), &sched(), &budget(4000, 8)).unwrap();
        assert_ne!(a.value.to_bits(), c.value.to_bits());
    }

    use crate::datamodel::MixtureModel;
}
