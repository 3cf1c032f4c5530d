//! Shipped experiment presets. Each preset consumes an ExperimentConfig,
//! runs deterministically from the root seed, and emits scalars plus CSV
//! tables through the shared report schema.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_6, PI};

use nalgebra::{DMatrix, DVector};

use latent_reuse::bounds::{
    self, closed_form_mixed_spectrum, exact_structural_oracle, frozen_bound_report, gamma_residual,
    mixed_oracle_upper_bound, mixed_weights, solve_mixed_projector, MixedBoundConfig,
};
use latent_reuse::datamodel::{sample_data, sample_mixture, NoisyLowDimModel};
use latent_reuse::geometry::{self, haar_frame, subspace_report, Frame};
use latent_reuse::mc::McBudget;
use latent_reuse::report::{Cell, Table};
use latent_reuse::risk::{estimate_risk, frozen_comparator, mixed_comparator, Reference};
use latent_reuse::rng;
use latent_reuse::sampler::{reverse_sample, SamplerConfig};
use latent_reuse::schedule::{schedule_eval, DiffusionSchedule};
use latent_reuse::score::{AnalyticScore, ProjectedScore};
use latent_reuse::trainer::{self, train, ReluCore};

use crate::config::{
    build_fixture, CMode, ExperimentConfig, Fixture, FrameSpec, LatentSpec, McSpec, MixedSpec,
    ModelSpec, ProjectorSpec, SamplerSpec, ScheduleSpec, SweepSpec, TrainerSpec,
};
use crate::report::ExperimentReport;

pub const PRESET_NAMES: [&str; 7] = [
    "angle-sweep",
    "dimension-sweep",
    "noise-sweep",
    "mixed-vs-frozen",
    "containment-demo",
    "sampler-demo",
    "invariant-suite",
];

fn base_schedule() -> ScheduleSpec {
    ScheduleSpec {
        t0: 0.1,
        t_end: 1.0,
        n_time_nodes: 64,
    }
}

fn base_mc() -> McSpec {
    McSpec {
        n_samples: 20_000,
        n_workers: 8,
        n_batches: 32,
    }
}

fn std_model(latent_dim: usize, sigma: f64) -> ModelSpec {
    ModelSpec {
        latent_dim,
        sigma,
        latent: LatentSpec::Standard,
        frame: FrameSpec::FirstAxes,
    }
}

fn base_trainer() -> TrainerSpec {
    TrainerSpec {
        n_train_samples: 2000,
        n_epochs: 120,
        batch_size: 128,
        step_size: 2e-3,
        momentum: 0.9,
        n_time_samples: 4,
        hidden_widths: vec![64, 64],
        output_bound: 10.0,
        kappa: 50.0,
        truncate: false,
        truncation: None,
    }
}

/// Built-in default configuration for a preset.
pub fn default_config(preset: &str) -> anyhow::Result<ExperimentConfig> {
    let mut config = ExperimentConfig {
        preset: preset.to_string(),
        seed: 42,
        out_dir: None,
        ambient_dim: 4,
        schedule: base_schedule(),
        target: std_model(1, 0.0),
        source: None,
        projector: ProjectorSpec::Aligned,
        mixed: None,
        mc: base_mc(),
        trainer: None,
        sampler: None,
        sweep: SweepSpec::default(),
    };
    match preset {
        "angle-sweep" => {
            config.projector = ProjectorSpec::Angled {
                angles: vec![0.0],
                seed: 7,
            };
            config.sweep.angles = (0..=6).map(|i| i as f64 * PI / 12.0).collect();
            // Training demo runs on the truncated objective; with a
            // noiseless target the region keeps every sample.
            config.trainer = Some(TrainerSpec {
                truncate: true,
                truncation: Some(crate::config::TruncationSpec {
                    delta: 0.05,
                    c_z: 2.0,
                    c_perp: 2.0,
                }),
                ..base_trainer()
            });
        }
        "dimension-sweep" => {
            config.ambient_dim = 6;
            config.target = std_model(2, 0.1);
            config.projector = ProjectorSpec::Angled {
                angles: vec![FRAC_PI_6, FRAC_PI_6],
                seed: 7,
            };
            config.sweep.dims = vec![[1, 2], [2, 2], [3, 2]];
            config.sweep.angles = vec![FRAC_PI_6];
        }
        "noise-sweep" => {
            config.projector = ProjectorSpec::Angled {
                angles: vec![FRAC_PI_6],
                seed: 7,
            };
            config.sweep.sigmas = vec![0.0, 0.05, 0.1, 0.2, 0.5];
        }
        "mixed-vs-frozen" => {
            config.source = Some(std_model(1, 0.1));
            // A shifted, wider target latent keeps the two component
            // comparators distinct, so the posterior-compression term is
            // actually exercised.
            config.target = ModelSpec {
                latent_dim: 1,
                sigma: 0.1,
                latent: LatentSpec::Gaussian {
                    mean: vec![0.6],
                    cov: vec![vec![1.69]],
                },
                frame: FrameSpec::RotatedFromSource {
                    angles: vec![FRAC_PI_3],
                    seed: 11,
                },
            };
            config.projector = ProjectorSpec::Source;
            config.mixed = Some(MixedSpec {
                k: 2,
                omega: [0.5, 0.5],
                c_mode: CMode::CBar,
                eta: 1.0,
            });
            config.trainer = Some(TrainerSpec {
                n_train_samples: 4000,
                ..base_trainer()
            });
        }
        "containment-demo" => {
            config.source = Some(std_model(1, 0.1));
            config.target = ModelSpec {
                latent_dim: 1,
                sigma: 0.1,
                latent: LatentSpec::Standard,
                frame: FrameSpec::RotatedFromSource {
                    angles: vec![FRAC_PI_3],
                    seed: 11,
                },
            };
            config.projector = ProjectorSpec::Source;
            config.mixed = Some(MixedSpec {
                k: 2,
                omega: [0.5, 0.5],
                c_mode: CMode::CBar,
                eta: 1.0,
            });
            config.sweep.ks = vec![1, 2, 3, 4];
        }
        "sampler-demo" => {
            config.ambient_dim = 2;
            // Euler-Maruyama bias at 200 steps stays well inside the
            // Monte Carlo band on this window.
            config.schedule = ScheduleSpec {
                t0: 0.3,
                t_end: 2.0,
                n_time_nodes: 64,
            };
            config.projector = ProjectorSpec::Angled {
                angles: vec![FRAC_PI_3],
                seed: 7,
            };
            config.sampler = Some(SamplerSpec {
                n_chains: 10_000,
                n_steps: 200,
            });
            config.trainer = Some(TrainerSpec {
                n_epochs: 80,
                ..base_trainer()
            });
        }
        "invariant-suite" => {
            config.mc.n_samples = 4000;
        }
        other => anyhow::bail!("unknown preset `{other}`; known presets: {PRESET_NAMES:?}"),
    }
    Ok(config)
}

/// Executes the preset named in the config.
pub fn run(config: &ExperimentConfig) -> anyhow::Result<ExperimentReport> {
    match config.preset.as_str() {
        "angle-sweep" => angle_sweep(config),
        "dimension-sweep" => dimension_sweep(config),
        "noise-sweep" => noise_sweep(config),
        "mixed-vs-frozen" => mixed_vs_frozen(config),
        "containment-demo" => containment_demo(config),
        "sampler-demo" => sampler_demo(config),
        "invariant-suite" => invariant_suite(config),
        other => anyhow::bail!("unknown preset `{other}`; known presets: {PRESET_NAMES:?}"),
    }
}

fn train_projected_risk(
    fixture: &Fixture,
    spec: &TrainerSpec,
    projector: &Frame,
    reference: Reference<'_>,
    seed: u64,
) -> anyhow::Result<(f64, f64, Vec<f64>)> {
    let samples = match reference {
        Reference::Single(model) => sample_data(model, spec.n_train_samples, seed)?,
        Reference::Mixture(mix) => sample_mixture(mix, spec.n_train_samples, seed)?.0,
    };
    let region = match (&spec.truncation, spec.truncate) {
        (Some(tr), true) => Some(trainer::truncation_radii(
            &fixture.target,
            spec.n_train_samples,
            tr.delta,
            tr.c_z,
            tr.c_perp,
        )?),
        _ => None,
    };
    let outcome = train(
        &samples,
        projector,
        &fixture.sched,
        &spec.to_core_config(seed),
        region.as_ref(),
    )?;
    let field = ProjectedScore::new(projector.clone(), outcome.core);
    let est = estimate_risk(&field, reference, &fixture.sched, &fixture.budget)?;
    Ok((est.value, est.stderr, outcome.loss_trace))
}

fn angle_sweep(config: &ExperimentConfig) -> anyhow::Result<ExperimentReport> {
    let fixture = build_fixture(config)?;
    let mut report = ExperimentReport::default();
    let mut table = Table::new(
        "angle_sweep",
        &[
            "theta",
            "lower",
            "oracle",
            "upper",
            "ub_status",
            "comp_risk",
            "comp_stderr",
            "trained_risk",
            "trained_stderr",
            "note",
        ],
    );
    let projector_seed = match &config.projector {
        ProjectorSpec::Angled { seed, .. } => *seed,
        _ => 7,
    };
    let mut nodes_table: Option<Table> = None;
    for (i, &theta) in fixture_angles(config).iter().enumerate() {
        let v1 = geometry::rotate_frame(fixture.target.frame(), &[theta], projector_seed)?;
        let bounds_report =
            frozen_bound_report(&fixture.target, &v1, &fixture.sched, &fixture.budget)?;
        let comp = frozen_comparator(&fixture.target, &v1)?;
        let comp_risk = estimate_risk(
            &comp,
            Reference::Single(&fixture.target),
            &fixture.sched,
            &fixture.budget,
        )?;
        let outside = theta.cos() < 1e-4;
        let trained = match &config.trainer {
            Some(spec) => {
                let (v, se, _) = train_projected_risk(
                    &fixture,
                    spec,
                    &v1,
                    Reference::Single(&fixture.target),
                    config.seed.wrapping_add(i as u64),
                )?;
                (Cell::Float(v), Cell::Float(se))
            }
            None => (Cell::Empty, Cell::Empty),
        };
        let upper_cell = bounds_report
            .upper
            .as_ref()
            .map_or(Cell::Empty, |ub| Cell::Float(ub.part.average));
        let status = bounds_report.upper_status.clone();
        table.push(vec![
            Cell::Float(theta),
            Cell::Float(bounds_report.lower.average),
            bounds_report
                .oracle
                .as_ref()
                .map_or(Cell::Empty, |o| Cell::Float(o.average)),
            upper_cell,
            Cell::Text(status),
            Cell::Float(comp_risk.value),
            Cell::Float(comp_risk.stderr),
            trained.0,
            trained.1,
            Cell::Text(if outside {
                "outside the comparator bound's rank hypotheses".to_string()
            } else {
                String::new()
            }),
        ]);
        // Per-node long-format dump for one interior angle.
        if nodes_table.is_none() && (theta - FRAC_PI_3).abs() < 1e-12 {
            let mut t = Table::new("bound_nodes", &["t", "term", "value", "stderr"]);
            t.extend_bound_part(&bounds_report.nodes, "lower", &bounds_report.lower);
            if let Some(oracle) = &bounds_report.oracle {
                t.extend_bound_part(&bounds_report.nodes, "oracle", oracle);
            }
            if let Some(ub) = &bounds_report.upper {
                t.extend_bound_part(&bounds_report.nodes, "upper", &ub.part);
            }
            nodes_table = Some(t);
        }
    }
    report.tables.push(table);
    if let Some(t) = nodes_table {
        report.tables.push(t);
    }
    report.note("projector", "V1 at the sweep angle to the target frame");
    Ok(report)
}

fn fixture_angles(config: &ExperimentConfig) -> Vec<f64> {
    if config.sweep.angles.is_empty() {
        vec![FRAC_PI_3]
    } else {
        config.sweep.angles.clone()
    }
}

/// Builds (A2, V1) with d2 and d1 columns on canonical axes such that all
/// r = min(d1, d2) principal angles equal theta.
fn axis_pair(ambient: usize, d1: usize, d2: usize, theta: f64) -> anyhow::Result<(Frame, Frame)> {
    let r = d1.min(d2);
    anyhow::ensure!(
        d2 + r + d1.saturating_sub(r) <= ambient,
        "not enough ambient room for the requested dimensions"
    );
    let a2 = Frame::first_axes(ambient, d2);
    let mut v1 = DMatrix::zeros(ambient, d1);
    for j in 0..r {
        v1[(j, j)] = theta.cos();
        v1[(d2 + j, j)] = theta.sin();
    }
    for j in r..d1 {
        v1[(d2 + r + (j - r), j)] = 1.0;
    }
    Ok((a2, Frame::from_orthonormal(v1)?))
}

fn dimension_sweep(config: &ExperimentConfig) -> anyhow::Result<ExperimentReport> {
    let fixture = build_fixture(config)?;
    let theta = *fixture_angles(config).first().unwrap_or(&FRAC_PI_6);
    let mut report = ExperimentReport::default();
    let mut table = Table::new(
        "dimension_sweep",
        &[
            "d1",
            "d2",
            "branch",
            "lower",
            "oracle",
            "upper",
            "signal",
            "instability",
            "info_loss",
            "ambient_noise",
        ],
    );
    for &[d1, d2] in &config.sweep.dims {
        let (a2, v1) = axis_pair(config.ambient_dim, d1, d2, theta)?;
        let target = NoisyLowDimModel::new(
            a2,
            latent_reuse::datamodel::LatentDistribution::Gaussian(
                latent_reuse::datamodel::GaussianLatent::standard(d2),
            ),
            config.target.sigma,
        )?;
        let rep = frozen_bound_report(&target, &v1, &fixture.sched, &fixture.budget)?;
        let ub = rep
            .upper
            .as_ref()
            .ok_or_else(|| anyhow::anyhow!("upper bound unavailable: {}", rep.upper_status))?;
        let term = |name: &str| {
            ub.part
                .terms
                .iter()
                .find(|t| t.name == name)
                .map(|t| t.average)
                .unwrap_or(0.0)
        };
        table.push(vec![
            Cell::Int(d1 as i64),
            Cell::Int(d2 as i64),
            Cell::Text(format!("{:?}", ub.branch)),
            Cell::Float(rep.lower.average),
            rep.oracle
                .as_ref()
                .map_or(Cell::Empty, |o| Cell::Float(o.average)),
            Cell::Float(ub.part.average),
            Cell::Float(term("signal")),
            Cell::Float(term("instability")),
            Cell::Float(term("info_loss")),
            Cell::Float(term("ambient_noise")),
        ]);
    }
    report.tables.push(table);
    report.note("theta", "all principal angles set to sweep.angles[0]");
    Ok(report)
}

fn noise_sweep(config: &ExperimentConfig) -> anyhow::Result<ExperimentReport> {
    let fixture = build_fixture(config)?;
    let mut report = ExperimentReport::default();
    let mut table = Table::new(
        "noise_sweep",
        &[
            "sigma",
            "lower",
            "lower_signal",
            "lower_noise",
            "oracle",
            "upper",
            "n_bar",
        ],
    );
    for &sigma in &config.sweep.sigmas {
        let target = NoisyLowDimModel::new(
            fixture.target.frame().clone(),
            fixture.target.latent().clone(),
            sigma,
        )?;
        let rep =
            frozen_bound_report(&target, &fixture.projector, &fixture.sched, &fixture.budget)?;
        let lterm = |name: &str| {
            rep.lower
                .terms
                .iter()
                .find(|t| t.name == name)
                .map(|t| t.average)
                .unwrap_or(0.0)
        };
        let weights = mixed_weights(&target, &fixture.sched, &fixture.budget)?;
        table.push(vec![
            Cell::Float(sigma),
            Cell::Float(rep.lower.average),
            Cell::Float(lterm("signal")),
            Cell::Float(lterm("ambient_noise")),
            rep.oracle
                .as_ref()
                .map_or(Cell::Empty, |o| Cell::Float(o.average)),
            rep.upper
                .as_ref()
                .map_or(Cell::Empty, |ub| Cell::Float(ub.part.average)),
            Cell::Float(weights.n_bar),
        ]);
    }
    report.tables.push(table);
    Ok(report)
}

struct MixedSide {
    label: &'static str,
    frame: Frame,
}

fn mixed_vs_frozen(config: &ExperimentConfig) -> anyhow::Result<ExperimentReport> {
    let fixture = build_fixture(config)?;
    let mixed_spec = config
        .mixed
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("mixed-vs-frozen requires a mixed spec"))?;
    let mix = fixture.mixture(mixed_spec.omega)?;
    let mut report = ExperimentReport::default();

    let w0 = mixed_weights(mix.component(0), &fixture.sched, &fixture.budget)?;
    let w1 = mixed_weights(mix.component(1), &fixture.sched, &fixture.budget)?;
    let c = match &mixed_spec.c_mode {
        CMode::CBar => [w0.c_bar, w1.c_bar],
        CMode::Fixed { c } => *c,
    };
    report.put_analytic("c_bar_1", w0.c_bar);
    report.put_analytic("c_bar_2", w1.c_bar);
    report.put_analytic("n_bar_1", w0.n_bar);
    report.put_analytic("n_bar_2", w1.n_bar);

    let sol = solve_mixed_projector(
        [mix.component(0).frame(), mix.component(1).frame()],
        [mixed_spec.omega[0] * c[0], mixed_spec.omega[1] * c[1]],
        mixed_spec.k,
    )?;
    report.put_analytic("gamma_residual_wk", sol.residual);

    let sides = [
        MixedSide {
            label: "v1",
            frame: fixture.projector.clone(),
        },
        MixedSide {
            label: "wk",
            frame: sol.w_k.clone(),
        },
    ];

    let mut table = Table::new(
        "mixed_terms",
        &[
            "projector",
            "gamma",
            "noise_1",
            "noise_2",
            "recon_1",
            "recon_1_stderr",
            "recon_2",
            "recon_2_stderr",
            "compression",
            "compression_stderr",
            "bound",
            "bound_stderr",
            "comp_risk",
            "comp_risk_stderr",
            "trained_risk",
            "trained_stderr",
        ],
    );
    let cfg = MixedBoundConfig {
        eta: mixed_spec.eta,
        approx_term: 0.0,
        c_override: Some(c),
        mc: fixture.budget,
    };
    for (i, side) in sides.iter().enumerate() {
        let bound = mixed_oracle_upper_bound(&mix, &side.frame, &fixture.sched, &cfg)?;
        let comp = mixed_comparator(&mix, &side.frame)?;
        let comp_risk = estimate_risk(
            &comp,
            Reference::Mixture(&mix),
            &fixture.sched,
            &fixture.budget,
        )?;
        let trained = match &config.trainer {
            Some(spec) => {
                let (v, se, _) = train_projected_risk(
                    &fixture,
                    spec,
                    &side.frame,
                    Reference::Mixture(&mix),
                    config.seed.wrapping_add(100 + i as u64),
                )?;
                (Cell::Float(v), Cell::Float(se))
            }
            None => (Cell::Empty, Cell::Empty),
        };
        report.put_mc(&format!("bound_{}", side.label), bound.value, bound.stderr);
        report.put_mc(
            &format!("comp_risk_{}", side.label),
            comp_risk.value,
            comp_risk.stderr,
        );
        table.push(vec![
            Cell::Text(side.label.to_string()),
            Cell::Float(bound.gamma),
            Cell::Float(bound.noise[0]),
            Cell::Float(bound.noise[1]),
            Cell::Float(bound.reconstruction[0].value),
            Cell::Float(bound.reconstruction[0].stderr),
            Cell::Float(bound.reconstruction[1].value),
            Cell::Float(bound.reconstruction[1].stderr),
            Cell::Float(bound.compression.value),
            Cell::Float(bound.compression.stderr),
            Cell::Float(bound.value),
            Cell::Float(bound.stderr),
            Cell::Float(comp_risk.value),
            Cell::Float(comp_risk.stderr),
            trained.0,
            trained.1,
        ]);
    }
    let gamma_v1 = gamma_residual(
        &fixture.projector,
        [mix.component(0).frame(), mix.component(1).frame()],
        [mixed_spec.omega[0] * c[0], mixed_spec.omega[1] * c[1]],
    )?;
    report.put_analytic("gamma_v1", gamma_v1);
    report.put_analytic("gamma_reduction", gamma_v1 - sol.residual);
    report.tables.push(table);
    Ok(report)
}

fn containment_demo(config: &ExperimentConfig) -> anyhow::Result<ExperimentReport> {
    let fixture = build_fixture(config)?;
    let mixed_spec = config
        .mixed
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("containment-demo requires a mixed spec"))?;
    let mix = fixture.mixture(mixed_spec.omega)?;
    let mut report = ExperimentReport::default();

    let w0 = mixed_weights(mix.component(0), &fixture.sched, &fixture.budget)?;
    let w1 = mixed_weights(mix.component(1), &fixture.sched, &fixture.budget)?;
    let weights = [
        mixed_spec.omega[0] * w0.c_bar,
        mixed_spec.omega[1] * w1.c_bar,
    ];

    let d1 = mix.component(0).latent_dim();
    let d2 = mix.component(1).latent_dim();
    let span_sum = {
        let rep = subspace_report(mix.component(0).frame(), mix.component(1).frame())?;
        d1 + d2 - rep.angles.iter().filter(|&&a| a < 1e-9).count()
    };
    report.put_analytic("span_sum_dim", span_sum as f64);

    let mut table = Table::new("residual_vs_k", &["k", "residual", "gamma_wk", "contained"]);
    let ks = if config.sweep.ks.is_empty() {
        (d1.max(d2)..=config.ambient_dim).collect()
    } else {
        config.sweep.ks.clone()
    };
    for &k in &ks {
        let sol = solve_mixed_projector(
            [mix.component(0).frame(), mix.component(1).frame()],
            weights,
            k,
        )?;
        let gamma = sol.gamma(&sol.w_k)?;
        table.push(vec![
            Cell::Int(k as i64),
            Cell::Float(sol.residual),
            Cell::Float(gamma),
            Cell::Text((k >= span_sum).to_string()),
        ]);
    }
    report.tables.push(table);

    // Containment point: k = mixed_spec.k, bound comparison and the
    // closed-form noise identities.
    let sol = solve_mixed_projector(
        [mix.component(0).frame(), mix.component(1).frame()],
        weights,
        mixed_spec.k,
    )?;
    let cfg = MixedBoundConfig {
        eta: mixed_spec.eta,
        approx_term: 0.0,
        c_override: Some([w0.c_bar, w1.c_bar]),
        mc: fixture.budget,
    };
    let bound_wk = mixed_oracle_upper_bound(&mix, &sol.w_k, &fixture.sched, &cfg)?;
    let bound_v1 = mixed_oracle_upper_bound(&mix, &fixture.projector, &fixture.sched, &cfg)?;
    report.put_analytic("gamma_wk", bound_wk.gamma);
    report.put_analytic("gamma_v1", bound_v1.gamma);
    report.put_mc("bound_wk", bound_wk.value, bound_wk.stderr);
    report.put_mc("bound_v1", bound_v1.value, bound_v1.stderr);

    let mut noise_table = Table::new(
        "containment_noise_identities",
        &[
            "component",
            "recon_measured",
            "recon_stderr",
            "recon_closed_form",
            "noise_trace",
            "noise_closed_form",
        ],
    );
    let k = mixed_spec.k as f64;
    let big_d = config.ambient_dim as f64;
    for i in 0..2 {
        let n_bar = if i == 0 { w0.n_bar } else { w1.n_bar };
        let d_i = mix.component(i).latent_dim() as f64;
        noise_table.push(vec![
            Cell::Int(i as i64 + 1),
            Cell::Float(bound_wk.reconstruction[i].value),
            Cell::Float(bound_wk.reconstruction[i].stderr),
            Cell::Float(n_bar * (k - d_i)),
            Cell::Float(bound_wk.noise[i]),
            Cell::Float(mixed_spec.omega[i] * n_bar * (big_d - k)),
        ]);
    }
    report.tables.push(noise_table);
    report.put_mc(
        "compression_wk",
        bound_wk.compression.value,
        bound_wk.compression.stderr,
    );
    Ok(report)
}

fn sampler_demo(config: &ExperimentConfig) -> anyhow::Result<ExperimentReport> {
    let fixture = build_fixture(config)?;
    let sampler_spec = config
        .sampler
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("sampler-demo requires a sampler spec"))?;
    let mut report = ExperimentReport::default();
    let sampler_config = SamplerConfig {
        ambient_dim: config.ambient_dim,
        n_steps: sampler_spec.n_steps,
        sched: fixture.sched.clone(),
        seed: config.seed,
    };

    let analytic = AnalyticScore {
        model: &fixture.target,
    };
    let samples = reverse_sample(&analytic, &sampler_config, sampler_spec.n_chains)?;
    let expected = expected_terminal_cov(&fixture.target, fixture.sched.t0)?;
    let mut cov_table = Table::new(
        "terminal_covariance",
        &["row", "col", "measured", "stderr", "expected"],
    );
    let n = samples.nrows() as f64;
    let cov = sample_cov(&samples);
    for i in 0..config.ambient_dim {
        for j in 0..config.ambient_dim {
            let se = ((cov[(i, i)] * cov[(j, j)] + cov[(i, j)] * cov[(i, j)]) / n).sqrt();
            cov_table.push(vec![
                Cell::Int(i as i64),
                Cell::Int(j as i64),
                Cell::Float(cov[(i, j)]),
                Cell::Float(se),
                Cell::Float(expected[(i, j)]),
            ]);
        }
    }
    report.tables.push(cov_table);

    let mut sample_table = Table::new(
        "samples",
        &(0..config.ambient_dim)
            .map(|i| format!("x{i}"))
            .collect::<Vec<_>>()
            .iter()
            .map(String::as_str)
            .collect::<Vec<_>>(),
    );
    for i in 0..samples.nrows() {
        sample_table.push(
            (0..config.ambient_dim)
                .map(|j| Cell::Float(samples[(i, j)]))
                .collect(),
        );
    }
    report.csv_tables.push(sample_table);

    // Frozen-reuse demonstration: a net trained through a misaligned
    // projector cannot reproduce the target energy outside col(V1).
    if let Some(spec) = &config.trainer {
        let v1 = &fixture.projector;
        let train_samples = sample_data(&fixture.target, spec.n_train_samples, config.seed)?;
        let outcome = train(
            &train_samples,
            v1,
            &fixture.sched,
            &spec.to_core_config(config.seed.wrapping_add(7)),
            None,
        )?;
        // Persist the trained core alongside the report.
        let mut trained_json = serde_json::to_value(&outcome.core)?;
        trained_json["seed"] = serde_json::json!(config.seed.wrapping_add(7));
        trained_json["config"] =
            serde_json::to_value(spec.to_core_config(config.seed.wrapping_add(7)))?;
        report
            .artifacts
            .push(("trained_core".to_string(), trained_json));

        let frozen_field = ProjectedScore::new(v1.clone(), outcome.core);
        let frozen_samples = reverse_sample(&frozen_field, &sampler_config, sampler_spec.n_chains)?;
        let q = v1.perp_projector() * fixture.target.frame().projector();
        let (qa, qa_se) = quadratic_form_stats(&samples, &q);
        let (qf, qf_se) = quadratic_form_stats(&frozen_samples, &q);
        report.put_mc("quadratic_form_analytic", qa, qa_se);
        report.put_mc("quadratic_form_frozen", qf, qf_se);
        report.put_analytic("quadratic_form_deficit", qa - qf);
        report.note(
            "frozen_energy",
            "frozen-projector sampling loses target energy along P_V1_perp A2; \
             the deficit (analytic minus frozen) is positive under misalignment",
        );
    }
    Ok(report)
}

/// Covariance of the noised target law at time t0.
fn expected_terminal_cov(model: &NoisyLowDimModel, t0: f64) -> anyhow::Result<DMatrix<f64>> {
    let params = latent_reuse::datamodel::ambient_gaussian_params(model, t0)?;
    let d = model.ambient_dim();
    let mut second = DMatrix::zeros(d, d);
    let mut mean = DVector::zeros(d);
    for p in &params {
        second += (&p.cov + &p.mean * p.mean.transpose()) * p.weight;
        mean += &p.mean * p.weight;
    }
    Ok(second - &mean * mean.transpose())
}

fn sample_cov(samples: &DMatrix<f64>) -> DMatrix<f64> {
    let n = samples.nrows();
    let d = samples.ncols();
    let mut mean = DVector::zeros(d);
    for i in 0..n {
        mean += samples.row(i).transpose();
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..n {
        let c = samples.row(i).transpose() - &mean;
        cov += &c * c.transpose();
    }
    cov / n as f64
}

fn quadratic_form_stats(samples: &DMatrix<f64>, q: &DMatrix<f64>) -> (f64, f64) {
    let n = samples.nrows();
    let vals: Vec<f64> = (0..n)
        .map(|i| {
            let x = samples.row(i).transpose();
            (x.transpose() * q * &x)[(0, 0)]
        })
        .collect();
    let mean = vals.iter().sum::<f64>() / n as f64;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

struct Check {
    name: &'static str,
    observed: f64,
    tolerance: f64,
}

impl Check {
    fn passed(&self) -> bool {
        self.observed <= self.tolerance
    }
}

fn invariant_suite(config: &ExperimentConfig) -> anyhow::Result<ExperimentReport> {
    let fixture = build_fixture(config)?;
    let sched = &fixture.sched;
    let mut checks: Vec<Check> = Vec::new();
    let seed = config.seed;

    // Geometry: projector idempotence, pseudoinverse identities, angle sums.
    {
        let mut worst_idem = 0.0f64;
        let mut worst_pinv = 0.0f64;
        let mut worst_cos2 = 0.0f64;
        for i in 0..20 {
            let v = haar_frame(6, 3, seed.wrapping_add(i));
            let a = haar_frame(6, 2, seed.wrapping_add(100 + i));
            let p = v.projector();
            worst_idem = worst_idem.max((&p * &p - &p).iter().fold(0.0f64, |m, x| m.max(x.abs())));
            let rep = subspace_report(&v, &a)?;
            worst_pinv = worst_pinv
                .max((&rep.b * &rep.b_pinv * &rep.b - &rep.b).norm())
                .max((&rep.b_pinv * &rep.b * &rep.b_pinv - &rep.b_pinv).norm());
            let fro = (v.matrix().transpose() * a.matrix()).norm_squared();
            worst_cos2 = worst_cos2.max((rep.cos2_sum - fro).abs());
        }
        checks.push(Check {
            name: "projector_idempotence",
            observed: worst_idem,
            tolerance: 1e-10,
        });
        checks.push(Check {
            name: "pseudoinverse_identities",
            observed: worst_pinv,
            tolerance: 1e-10,
        });
        checks.push(Check {
            name: "cos2_sum_vs_frobenius",
            observed: worst_cos2,
            tolerance: 1e-10,
        });
    }

    // Schedule: rho identity and quadrature refinement.
    {
        let mut worst = 0.0f64;
        for i in 0..100 {
            let t = 0.01 + i as f64 * 0.02;
            let sv = schedule_eval(t, 0.7)?;
            worst = worst.max((sv.rho - (1.0 - sv.h / sv.h_tilde)).abs());
        }
        checks.push(Check {
            name: "rho_identity",
            observed: worst,
            tolerance: 1e-14,
        });
        let integrand = |t: f64| {
            let sv = schedule_eval(t, 0.0).unwrap();
            sv.alpha.powi(4) / (sv.h * sv.h)
        };
        let avg = |n: usize| {
            DiffusionSchedule::new(sched.t0, sched.t_end, n)
                .unwrap()
                .time_average(integrand)
                .unwrap()
                .value
        };
        let (a, b, c) = (avg(64), avg(128), avg(256));
        let ratio = (c - b).abs() / (b - a).abs().max(1e-300);
        checks.push(Check {
            name: "quadrature_second_order",
            observed: ratio,
            tolerance: 0.27,
        });
    }

    // Score: orthogonal decomposition and the G-field identity.
    {
        let model = &fixture.target;
        let mut worst_dot = 0.0f64;
        let mut worst_ident = 0.0f64;
        let mut rng = rng::stream(seed, "invariant-score", 0);
        for i in 0..1000 {
            let t = sched.t0 + (i as f64 / 999.0) * sched.window();
            let mut x = DVector::zeros(model.ambient_dim());
            rng::fill_standard_normal(&mut rng, x.as_mut_slice());
            let dec = latent_reuse::score::ambient_score(model, &x, t)?;
            worst_dot = worst_dot.max(dec.on_support.dot(&dec.orthogonal).abs());
            let sv = schedule_eval(t, model.sigma())?;
            let g = latent_reuse::score::g_field(model, &x, t)?;
            worst_ident = worst_ident.max(((g - &x) / sv.h - &dec.total).norm());
        }
        checks.push(Check {
            name: "orthogonal_decomposition",
            observed: worst_dot,
            tolerance: 1e-10,
        });
        checks.push(Check {
            name: "g_field_identity",
            observed: worst_ident,
            tolerance: 1e-8,
        });
    }

    // Bounds: spectrum identity, closed-form agreement, monotone residual.
    {
        let mut worst_sum = 0.0f64;
        let mut worst_closed = 0.0f64;
        for i in 0..100 {
            let mut rng = rng::stream(seed, "invariant-spectrum", i);
            let a_w = 0.05 + 0.95 * rng::uniform_01(&mut rng);
            let b_w = 0.05 + 0.95 * rng::uniform_01(&mut rng);
            let phi = FRAC_PI_2 * rng::uniform_01(&mut rng);
            let a1 = haar_frame(5, 1, seed.wrapping_add(2000 + i));
            let a2 = geometry::rotate_frame(&a1, &[phi], seed.wrapping_add(3000 + i))?;
            let sol = solve_mixed_projector([&a1, &a2], [a_w, b_w], 2)?;
            let total: f64 = sol.spectrum.iter().sum();
            worst_sum = worst_sum.max((total - (a_w + b_w)).abs());
            let closed = closed_form_mixed_spectrum(a_w, b_w, &[phi.cos()], 1, 1, 5);
            for (x, y) in sol.spectrum.iter().zip(closed.iter()) {
                worst_closed = worst_closed.max((x - y).abs());
            }
        }
        checks.push(Check {
            name: "spectrum_trace_identity",
            observed: worst_sum,
            tolerance: 1e-10,
        });
        checks.push(Check {
            name: "principal_angle_spectrum",
            observed: worst_closed,
            tolerance: 1e-10,
        });
        let a1 = haar_frame(6, 2, seed.wrapping_add(1));
        let a2 = haar_frame(6, 2, seed.wrapping_add(2));
        let mut prev = f64::INFINITY;
        let mut worst_mono = 0.0f64;
        for k in 2..=6 {
            let sol = solve_mixed_projector([&a1, &a2], [1.0, 1.0], k)?;
            worst_mono = worst_mono.max(sol.residual - prev);
            prev = sol.residual;
        }
        checks.push(Check {
            name: "monotone_residual",
            observed: worst_mono.max(0.0),
            tolerance: 1e-12,
        });
    }

    // Sandwich on the fixture when the oracle applies.
    if fixture.target.latent().is_gaussian() {
        let v1 = geometry::rotate_frame(fixture.target.frame(), &[FRAC_PI_6], seed)?;
        let lower = bounds::frozen_lower_bound(&fixture.target, &v1, sched, &fixture.budget)?;
        let oracle = exact_structural_oracle(&fixture.target, &v1, sched)?;
        let upper = bounds::frozen_upper_bound(&fixture.target, &v1, sched, &fixture.budget)?;
        let mut worst = 0.0f64;
        for i in 0..sched.n_nodes {
            worst = worst.max(lower.per_node[i] - oracle.per_node[i]);
            worst = worst.max(oracle.per_node[i] - upper.part.per_node[i]);
        }
        checks.push(Check {
            name: "sandwich_per_node",
            observed: worst.max(0.0),
            tolerance: 1e-8,
        });
    }

    // Risk: bitwise seed reproducibility of an estimator.
    {
        let comp = frozen_comparator(
            &fixture.target,
            &geometry::rotate_frame(fixture.target.frame(), &[FRAC_PI_3], seed)?,
        )?;
        let b = McBudget::new(seed).with_n(config.mc.n_samples);
        let r1 = estimate_risk(&comp, Reference::Single(&fixture.target), sched, &b)?;
        let r2 = estimate_risk(&comp, Reference::Single(&fixture.target), sched, &b)?;
        checks.push(Check {
            name: "risk_seed_reproducible",
            observed: (r1.value.to_bits() != r2.value.to_bits()) as u8 as f64,
            tolerance: 0.0,
        });
    }

    // Trainer: gradient check and the output bound.
    {
        let core = ReluCore::init(2, &[16, 16], 4.0, 10.0, seed);
        let mut rng = rng::stream(seed, "invariant-trainer", 0);
        let batch: Vec<(DVector<f64>, f64, DVector<f64>, f64)> = (0..8)
            .map(|_| {
                let mut z = DVector::zeros(2);
                rng::fill_standard_normal(&mut rng, z.as_mut_slice());
                let mut tgt = DVector::zeros(2);
                rng::fill_standard_normal(&mut rng, tgt.as_mut_slice());
                (z, 0.1 + 0.8 * rng::uniform_01(&mut rng), tgt, 1.0)
            })
            .collect();
        let worst_rel = trainer::gradient_check_worst_rel(&core, &batch, 20, seed);
        checks.push(Check {
            name: "trainer_gradient_check",
            observed: worst_rel,
            tolerance: 1e-4,
        });

        let mut worst_norm = 0.0f64;
        let mut rng = rng::stream(seed, "invariant-bound", 0);
        for _ in 0..100_000 {
            let mut z = DVector::zeros(2);
            rng::fill_standard_normal(&mut rng, z.as_mut_slice());
            z *= 30.0;
            worst_norm = worst_norm.max(core.forward(&z, 0.5).norm());
        }
        checks.push(Check {
            name: "relu_output_bound",
            observed: (worst_norm - core.output_bound()).max(0.0),
            tolerance: 1e-12,
        });
    }

    let mut report = ExperimentReport::default();
    let mut table = Table::new(
        "invariants",
        &["property", "status", "observed", "tolerance"],
    );
    let mut failures = 0usize;
    for check in &checks {
        if !check.passed() {
            failures += 1;
        }
        table.push(vec![
            Cell::Text(check.name.to_string()),
            Cell::Text(if check.passed() { "pass" } else { "fail" }.to_string()),
            Cell::Float(check.observed),
            Cell::Float(check.tolerance),
        ]);
    }
    report.tables.push(table);
    report.put_analytic("failures", failures as f64);
    Ok(report)
}
