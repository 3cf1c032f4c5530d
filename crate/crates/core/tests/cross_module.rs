//! Cross-module properties: the comparator-to-network transfer
//! inequality, comparator risk versus the exact oracle, and the
//! frozen-reuse sampling deficit.

use std::f64::consts::{FRAC_PI_3, FRAC_PI_4};

use nalgebra::{DMatrix, DVector};

use latent_reuse::bounds::exact_structural_oracle;
use latent_reuse::datamodel::{sample_data, GaussianLatent, LatentDistribution, NoisyLowDimModel};
use latent_reuse::geometry::{self, Frame};
use latent_reuse::mc::McBudget;
use latent_reuse::risk::{estimate_comparator_approx, estimate_risk, frozen_comparator, Reference};
use latent_reuse::sampler::{reverse_sample, SamplerConfig};
use latent_reuse::schedule::DiffusionSchedule;
use latent_reuse::score::{AnalyticScore, ProjectedScore};
use latent_reuse::trainer::{train, TrainConfig};

fn std1() -> NoisyLowDimModel {
    NoisyLowDimModel::new(
        Frame::first_axes(2, 1),
        LatentDistribution::Gaussian(GaussianLatent::standard(1)),
        0.0,
    )
    .unwrap()
}

fn sched() -> DiffusionSchedule {
    DiffusionSchedule::new(0.1, 1.0, 32).unwrap()
}

fn quick_trainer(seed: u64) -> TrainConfig {
    TrainConfig {
        n_epochs: 40,
        batch_size: 128,
        step_size: 2e-3,
        momentum: 0.9,
        seed,
        n_time_samples: 4,
        hidden_widths: vec![32, 32],
        output_bound: 10.0,
        kappa: 50.0,
        truncate: false,
    }
}

#[test]
fn comparator_transfer_inequality_holds_numerically() {
    let target = std1();
    let v1 = geometry::rotate_frame(target.frame(), &[FRAC_PI_4], 3).unwrap();
    let sched = sched();
    let samples = sample_data(&target, 1024, 5).unwrap();
    let outcome = train(&samples, &v1, &sched, &quick_trainer(7), None).unwrap();

    let budget = McBudget::new(11).with_n(20_000);
    let comp = frozen_comparator(&target, &v1).unwrap();
    let trained = ProjectedScore::new(v1.clone(), outcome.core);

    let l2_net = estimate_risk(&trained, Reference::Single(&target), &sched, &budget).unwrap();
    let u_comp = estimate_risk(&comp, Reference::Single(&target), &sched, &budget).unwrap();
    let a_comp = estimate_comparator_approx(
        &trained.core,
        &comp.core,
        &v1,
        Reference::Single(&target),
        &sched,
        &budget,
    )
    .unwrap();

    for eta in [0.5, 1.0, 2.0] {
        let rhs = (1.0 + eta) * u_comp.value + (1.0 + 1.0 / eta) * a_comp.value;
        let slack = 4.0
            * (l2_net.stderr.powi(2)
                + ((1.0 + eta) * u_comp.stderr).powi(2)
                + ((1.0 + 1.0 / eta) * a_comp.stderr).powi(2))
            .sqrt();
        assert!(
            l2_net.value <= rhs + slack,
            "eta = {eta}: {} > {rhs} + {slack}",
            l2_net.value
        );
    }
}

#[test]
fn comparator_risk_dominates_exact_oracle() {
    let target = std1();
    let sched = sched();
    for (i, theta) in [0.3, FRAC_PI_4, 1.2].iter().enumerate() {
        let v1 = geometry::rotate_frame(target.frame(), &[*theta], 40 + i as u64).unwrap();
        let oracle = exact_structural_oracle(&target, &v1, &sched).unwrap();
        let comp = frozen_comparator(&target, &v1).unwrap();
        let est = estimate_risk(
            &comp,
            Reference::Single(&target),
            &sched,
            &McBudget::new(21 + i as u64).with_n(20_000),
        )
        .unwrap();
        assert!(
            est.value >= oracle.average - 3.0 * est.stderr,
            "theta {theta}: comparator {} below oracle {}",
            est.value,
            oracle.average
        );
    }
}

#[test]
fn frozen_sampling_loses_perpendicular_target_energy() {
    // Samples drawn through a misaligned frozen projector cannot carry the
    // target's signal energy outside col(V1): the analytic-score samples
    // dominate the quadratic form x' P_V1_perp P_A2 x at 3 standard errors.
    let target = std1();
    let v1 = geometry::rotate_frame(target.frame(), &[FRAC_PI_3], 9).unwrap();
    let sched = DiffusionSchedule::new(0.15, 1.5, 16).unwrap();
    let samples = sample_data(&target, 2048, 31).unwrap();
    let outcome = train(&samples, &v1, &sched, &quick_trainer(33), None).unwrap();
    let frozen = ProjectedScore::new(v1.clone(), outcome.core);
    let analytic = AnalyticScore { model: &target };

    let config = SamplerConfig {
        ambient_dim: 2,
        n_steps: 200,
        sched,
        seed: 17,
    };
    let n = 4000;
    let from_analytic = reverse_sample(&analytic, &config, n).unwrap();
    let from_frozen = reverse_sample(&frozen, &config, n).unwrap();

    let q = v1.perp_projector() * target.frame().projector();
    let stats = |rows: &DMatrix<f64>| {
        let vals: Vec<f64> = (0..rows.nrows())
            .map(|i| {
                let x: DVector<f64> = rows.row(i).transpose();
                (x.transpose() * &q * &x)[(0, 0)]
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var =
            vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (vals.len() as f64 - 1.0);
        (mean, (var / vals.len() as f64).sqrt())
    };
    let (qa, se_a) = stats(&from_analytic);
    let (qf, se_f) = stats(&from_frozen);
    let se = (se_a * se_a + se_f * se_f).sqrt();
    assert!(
        qa - qf > 3.0 * se,
        "expected a deficit: analytic {qa} vs frozen {qf} (se {se})"
    );
}

#[test]
fn containment_comparator_risk_reduces_to_compression_residual() {
    // Shared projector containing both frames, zero ambient noise: the
    // componentwise reconstruction is exact, so the mixed comparator's
    // risk equals the posterior-compression residual (here both vanish).
    let a1 = Frame::first_axes(4, 1);
    let a2 = geometry::rotate_frame(&a1, &[FRAC_PI_3], 5).unwrap();
    let mk = |frame: Frame| {
        NoisyLowDimModel::new(
            frame,
            LatentDistribution::Gaussian(GaussianLatent::standard(1)),
            0.0,
        )
        .unwrap()
    };
    let mix =
        latent_reuse::datamodel::MixtureModel::new([0.5, 0.5], [mk(a1.clone()), mk(a2)]).unwrap();
    let sol = latent_reuse::bounds::solve_mixed_projector(
        [mix.component(0).frame(), mix.component(1).frame()],
        [0.5, 0.5],
        2,
    )
    .unwrap();
    let sched = sched();
    let budget = McBudget::new(3).with_n(8000);
    let comp = latent_reuse::risk::mixed_comparator(&mix, &sol.w_k).unwrap();
    let risk = estimate_risk(&comp, Reference::Mixture(&mix), &sched, &budget).unwrap();
    let penalties =
        latent_reuse::bounds::mixed_penalty_terms(&mix, &sol.w_k, &sched, &budget).unwrap();
    let se = (risk.stderr.powi(2) + penalties.compression.stderr.powi(2)).sqrt();
    assert!(
        (risk.value - penalties.compression.value).abs() <= 3.0 * se + 1e-12,
        "comparator risk {} vs compression residual {}",
        risk.value,
        penalties.compression.value
    );
    assert!(risk.value <= 3.0 * risk.stderr + 1e-12);
}

#[test]
fn trained_core_respects_output_bound_everywhere() {
    let target = std1();
    let samples = sample_data(&target, 512, 3).unwrap();
    let mut config = quick_trainer(5);
    config.n_epochs = 10;
    config.output_bound = 2.0;
    let outcome = train(&samples, &Frame::first_axes(2, 1), &sched(), &config, None).unwrap();
    let mut rng = latent_reuse::rng::stream(1, "bound-probe", 0);
    for _ in 0..100_000 {
        let z = DVector::from_vec(vec![30.0 * latent_reuse::rng::standard_normal(&mut rng)]);
        let t = 0.1 + 0.9 * latent_reuse::rng::uniform_01(&mut rng);
        assert!(outcome.core.forward(&z, t).norm() <= 2.0 + 1e-12);
    }
}
