//! ReLU score cores in projected coordinates, the denoising objective,
//! stochastic-gradient training for frozen and shared projectors, and the
//! truncation region of the finite-sample analysis.
//!
//! The trained object is the core map f(z, t); the induced score is
//! (1/h) U f(U'x, t) - (1/h) x. Because U has orthonormal columns, the
//! denoising regression target for f reduces to alpha U'x0 with weight
//! 1/h^2, plus a parameter-free orthogonal offset that is reported in the
//! loss but generates no gradient.

// Monte Carlo inner loops index several row-aligned buffers at once.
#![allow(clippy::needless_range_loop)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::NoisyLowDimModel;
use crate::error::{Error, Result};
use crate::geometry::Frame;
use crate::mc::{run_time_averaged, McBudget, WorkerBlock};
use crate::risk::{Reference, RiskEstimate};
use crate::rng;
use crate::schedule::{schedule_eval, DiffusionSchedule};
use crate::score::{CoreMap, ScoreField, TimeSlice};

/// Bounded-output ReLU network on the concatenated input (z, t).
#[derive(Debug, Clone, PartialEq)]
pub struct ReluCore {
    /// Layer sizes: [m + 1, hidden..., m].
    sizes: Vec<usize>,
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
    /// Output norm bound K, enforced by a final norm clip.
    output_bound: f64,
    /// Parameter magnitude cap kappa, enforced by projection after steps.
    param_cap: f64,
}

impl ReluCore {
    /// Random initialization with He-style scaling, parameters clipped
    /// to the cap.
    pub fn init(
        input_dim: usize,
        hidden: &[usize],
        output_bound: f64,
        param_cap: f64,
        seed: u64,
    ) -> Self {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input_dim + 1);
        sizes.extend_from_slice(hidden);
        sizes.push(input_dim);
        let mut rng = rng::stream(seed, "relu-init", 0);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let scale = (2.0 / fan_in as f64).sqrt();
            let mut w = DMatrix::zeros(fan_out, fan_in);
            for v in w.iter_mut() {
                *v = (scale * rng::standard_normal(&mut rng)).clamp(-param_cap, param_cap);
            }
            weights.push(w);
            biases.push(DVector::zeros(fan_out));
        }
        ReluCore {
            sizes,
            weights,
            biases,
            output_bound,
            param_cap,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0] - 1
    }

    pub fn output_bound(&self) -> f64 {
        self.output_bound
    }

    pub fn param_cap(&self) -> f64 {
        self.param_cap
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn max_abs_param(&self) -> f64 {
        let w = self
            .weights
            .iter()
            .flat_map(|w| w.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        self.biases
            .iter()
            .flat_map(|b| b.iter())
            .fold(w, |m, v| m.max(v.abs()))
    }

    fn raw_forward(&self, z: &DVector<f64>, t: f64) -> DVector<f64> {
        let mut a = DVector::zeros(self.sizes[0]);
        a.rows_mut(0, z.len()).copy_from(z);
        a[z.len()] = t;
        let last = self.weights.len() - 1;
        for l in 0..=last {
            a = &self.weights[l] * a + &self.biases[l];
            if l < last {
                for v in a.iter_mut() {
                    *v = v.max(0.0);
                }
            }
        }
        a
    }

    /// ReLU MLP on (z, t) with the output clipped to norm K.
    pub fn forward(&self, z: &DVector<f64>, t: f64) -> DVector<f64> {
        clip_to_ball(self.raw_forward(z, t), self.output_bound)
    }

    fn project_params(&mut self) {
        for w in &mut self.weights {
            for v in w.iter_mut() {
                *v = v.clamp(-self.param_cap, self.param_cap);
            }
        }
        for b in &mut self.biases {
            for v in b.iter_mut() {
                *v = v.clamp(-self.param_cap, self.param_cap);
            }
        }
    }
}

fn clip_to_ball(y: DVector<f64>, bound: f64) -> DVector<f64> {
    let norm = y.norm();
    if norm > bound {
        y * (bound / norm)
    } else {
        y
    }
}

impl CoreMap for ReluCore {
    fn dim(&self) -> usize {
        self.input_dim()
    }

    fn at(&self, t: f64) -> Result<TimeSlice<'_>> {
        Ok(Box::new(move |z| self.forward(z, t)))
    }
}

#[derive(Serialize, Deserialize)]
struct ReluCoreJson {
    widths: Vec<usize>,
    #[serde(rename = "K")]
    output_bound: f64,
    kappa: f64,
    /// One row-major block per layer.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl Serialize for ReluCore {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let weights = self
            .weights
            .iter()
            .map(|w| {
                let mut flat = Vec::with_capacity(w.len());
                for i in 0..w.nrows() {
                    for j in 0..w.ncols() {
                        flat.push(w[(i, j)]);
                    }
                }
                flat
            })
            .collect();
        ReluCoreJson {
            widths: self.sizes.clone(),
            output_bound: self.output_bound,
            kappa: self.param_cap,
            weights,
            biases: self
                .biases
                .iter()
                .map(|b| b.iter().cloned().collect())
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ReluCore {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = ReluCoreJson::deserialize(d)?;
        if raw.widths.len() < 2 || raw.weights.len() != raw.widths.len() - 1 {
            return Err(serde::de::Error::custom("inconsistent layer shape"));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..raw.widths.len() - 1 {
            let (rows, cols) = (raw.widths[l + 1], raw.widths[l]);
            if raw.weights[l].len() != rows * cols || raw.biases[l].len() != rows {
                return Err(serde::de::Error::custom("layer size mismatch"));
            }
            weights.push(DMatrix::from_row_slice(rows, cols, &raw.weights[l]));
            biases.push(DVector::from_vec(raw.biases[l].clone()));
        }
        if !(raw.kappa.is_finite() && raw.kappa > 0.0)
            || !(raw.output_bound.is_finite() && raw.output_bound > 0.0)
        {
            return Err(serde::de::Error::custom("K and kappa must be positive"));
        }
        Ok(ReluCore {
            sizes: raw.widths,
            weights,
            biases,
            output_bound: raw.output_bound,
            param_cap: raw.kappa,
        })
    }
}

/// Training hyperparameters. All randomness flows from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n_epochs: usize,
    pub batch_size: usize,
    pub step_size: f64,
    /// Momentum coefficient; 0 disables momentum.
    pub momentum: f64,
    pub seed: u64,
    /// Diffusion times sampled per example per visit.
    pub n_time_samples: usize,
    pub hidden_widths: Vec<usize>,
    /// Output bound K.
    #[serde(rename = "K")]
    pub output_bound: f64,
    /// Parameter cap kappa.
    pub kappa: f64,
    /// Filter samples through a truncation region before training.
    pub truncate: bool,
}

impl TrainConfig {
    /// Defaults for a projected dimension m: 3 hidden layers of width 64,
    /// K = 10 sqrt(m).
    pub fn default_for_dim(m: usize, seed: u64) -> Self {
        TrainConfig {
            n_epochs: 200,
            batch_size: 128,
            step_size: 2e-3,
            momentum: 0.9,
            seed,
            n_time_samples: 4,
            hidden_widths: vec![64, 64, 64],
            output_bound: 10.0 * (m as f64).sqrt(),
            kappa: 50.0,
            truncate: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_epochs > 0 && (self.batch_size == 0 || self.n_time_samples == 0) {
            return Err(Error::InvalidArgument(
                "batch_size and n_time_samples must be positive".into(),
            ));
        }
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.step_size) || !positive(self.output_bound) || !positive(self.kappa) {
            return Err(Error::InvalidArgument(
                "step_size, K and kappa must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Truncation region: a product of a latent-coordinate ball and an
/// orthogonal-slab constraint around the target frame.
#[derive(Debug, Clone, Serialize)]
pub struct TruncationRegion {
    pub r_z: f64,
    pub r_perp: f64,
    pub c_z: f64,
    pub c_perp: f64,
    pub delta: f64,
    frame: Frame,
}

impl TruncationRegion {
    pub fn contains(&self, x: &DVector<f64>) -> bool {
        // Tolerate rounding for exactly-on-subspace samples.
        let eps = 1e-9 * (1.0 + x.norm());
        let z_norm = self.frame.project(x).norm();
        let perp_norm = self.frame.perp_norm_sq(x).sqrt();
        z_norm <= self.r_z + eps && perp_norm <= self.r_perp + eps
    }
}

/// R_z = C_z (1 + sigma)(sqrt(d2) + sqrt(log(8 N2 / delta))),
/// R_perp = C_perp sigma (sqrt(D - d2) + sqrt(log(8 N2 / delta))).
pub fn truncation_radii(
    target: &NoisyLowDimModel,
    n2: usize,
    delta: f64,
    c_z: f64,
    c_perp: f64,
) -> Result<TruncationRegion> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "delta must be in (0, 1), got {delta}"
        )));
    }
    let log_term = (8.0 * n2 as f64 / delta).ln().max(0.0).sqrt();
    let d2 = target.latent_dim() as f64;
    let perp_dim = (target.ambient_dim() - target.latent_dim()) as f64;
    Ok(TruncationRegion {
        r_z: c_z * (1.0 + target.sigma()) * (d2.sqrt() + log_term),
        r_perp: c_perp * target.sigma() * (perp_dim.sqrt() + log_term),
        c_z,
        c_perp,
        delta,
        frame: target.frame().clone(),
    })
}

/// Closed-form bound on the denoising-vs-score risk offset:
/// E2 <= D/(T - t0) * log((e^T - 1)/(e^{t0} - 1)).
pub fn e2_upper_bound(ambient_dim: usize, sched: &DiffusionSchedule) -> f64 {
    let ratio = (sched.t_end.exp() - 1.0) / (sched.t0.exp() - 1.0);
    ambient_dim as f64 / sched.window() * ratio.ln()
}

/// Unbiased single-point estimate of the denoising loss ell(x0; s):
/// times are sampled uniformly from [t0, T] and x_t is renoised fresh.
pub fn denoising_loss(
    x0: &DVector<f64>,
    s: &dyn ScoreField,
    sched: &DiffusionSchedule,
    n_t: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = rng::stream(seed, "denoising-loss", 0);
    let mut total = 0.0;
    for _ in 0..n_t.max(1) {
        let t = sched.t0 + rng.gen::<f64>() * sched.window();
        let sv = schedule_eval(t, 0.0)?;
        let sqrt_h = sv.h.sqrt();
        let mut xt = x0 * sv.alpha;
        for v in xt.iter_mut() {
            *v += sqrt_h * rng::standard_normal(&mut rng);
        }
        let target = (x0 * sv.alpha - &xt) / sv.h;
        total += (target - s.eval(&xt, t)?).norm_squared();
    }
    Ok(total / n_t.max(1) as f64)
}

/// Population denoising risk over the quadrature grid.
///
/// Uses the same sample streams as `estimate_risk`, so for a fixed budget
/// the difference of the two estimates (the Vincent offset E2) is computed
/// on coupled draws.
pub fn denoising_risk(
    s: &dyn ScoreField,
    reference: Reference<'_>,
    sched: &DiffusionSchedule,
    budget: &McBudget,
) -> Result<RiskEstimate> {
    let nodes = sched.nodes();
    let weights = sched.weights();
    let window = sched.window();
    let _ = s.at(nodes[0])?;

    let out = run_time_averaged(budget, nodes.len(), |w, n_w| {
        let mut x0_rng = rng::stream(budget.seed, "risk-x0", w as u64);
        let mut noise_rng = rng::stream(budget.seed, "risk-noise", w as u64);
        let x0 = match reference {
            Reference::Single(m) => crate::datamodel::sample_data_with(m, n_w, &mut x0_rng),
            Reference::Mixture(m) => crate::datamodel::sample_mixture_with(m, n_w, &mut x0_rng).0,
        };
        let mut per_sample = vec![0.0; n_w];
        let mut node_sums = vec![0.0; nodes.len()];
        for (i, (&t, &qw)) in nodes.iter().zip(weights.iter()).enumerate() {
            let sv = schedule_eval(t, 0.0).expect("node time");
            let s_slice = s.at(t).expect("score slice");
            let xt = crate::datamodel::renoise_rows(&x0, sv.alpha, sv.h, &mut noise_rng);
            for j in 0..n_w {
                let x = xt.row(j).transpose();
                let target = (x0.row(j).transpose() * sv.alpha - &x) / sv.h;
                let err = (target - s_slice(&x)).norm_squared();
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

struct Gradients {
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
}

impl Gradients {
    fn zeros_like(core: &ReluCore) -> Self {
        Gradients {
            weights: core
                .weights
                .iter()
                .map(|w| DMatrix::zeros(w.nrows(), w.ncols()))
                .collect(),
            biases: core
                .biases
                .iter()
                .map(|b| DVector::zeros(b.len()))
                .collect(),
        }
    }

    fn fill_zero(&mut self) {
        for w in &mut self.weights {
            w.fill(0.0);
        }
        for b in &mut self.biases {
            b.fill(0.0);
        }
    }
}

/// One regression example for the core map: minimize
/// weight * || f(z, t) - target ||^2.
struct CoreExample {
    z: DVector<f64>,
    t: f64,
    target: DVector<f64>,
    weight: f64,
}

/// Forward pass with cached activations, squared-error loss and backprop
/// through the norm clip. Accumulates into `grads`, returns the loss.
fn accumulate_example(core: &ReluCore, ex: &CoreExample, scale: f64, grads: &mut Gradients) -> f64 {
    let n_layers = core.weights.len();
    let mut activations = Vec::with_capacity(n_layers + 1);
    let mut a = DVector::zeros(core.sizes[0]);
    a.rows_mut(0, ex.z.len()).copy_from(&ex.z);
    a[ex.z.len()] = ex.t;
    activations.push(a.clone());
    for l in 0..n_layers {
        a = &core.weights[l] * &a + &core.biases[l];
        if l < n_layers - 1 {
            for v in a.iter_mut() {
                *v = v.max(0.0);
            }
        }
        activations.push(a.clone());
    }
    let raw = activations[n_layers].clone();
    let raw_norm = raw.norm();
    let clipped = raw_norm > core.output_bound;
    let y = if clipped {
        &raw * (core.output_bound / raw_norm)
    } else {
        raw.clone()
    };

    let resid = &y - &ex.target;
    let loss = ex.weight * resid.norm_squared();
    let mut delta = resid * (2.0 * ex.weight * scale);
    if clipped {
        // Jacobian of y = K raw / |raw| is (K/|raw|) (I - uu') with
        // u = raw/|raw|.
        let u = &raw / raw_norm;
        let coef = core.output_bound / raw_norm;
        let along = u.dot(&delta);
        delta = (delta - &u * along) * coef;
    }
    for l in (0..n_layers).rev() {
        grads.weights[l] += &delta * activations[l].transpose();
        grads.biases[l] += &delta;
        if l > 0 {
            let mut back = core.weights[l].transpose() * delta;
            // ReLU gate from the stored post-activation.
            for (v, &act) in back.iter_mut().zip(activations[l].iter()) {
                if act <= 0.0 {
                    *v = 0.0;
                }
            }
            delta = back;
        }
    }
    loss
}

/// Mean loss and parameter gradient over a batch; exposed for the
/// finite-difference gradient check.
pub fn core_loss(core: &ReluCore, batch: &[(DVector<f64>, f64, DVector<f64>, f64)]) -> f64 {
    let mut total = 0.0;
    for (z, t, target, weight) in batch {
        let y = core.forward(z, *t);
        total += weight * (y - target).norm_squared();
    }
    total / batch.len() as f64
}

/// Analytic gradient of `core_loss` in (weights, biases) order.
pub fn core_loss_gradient(
    core: &ReluCore,
    batch: &[(DVector<f64>, f64, DVector<f64>, f64)],
) -> (f64, Vec<DMatrix<f64>>, Vec<DVector<f64>>) {
    let mut grads = Gradients::zeros_like(core);
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for (z, t, target, weight) in batch {
        let ex = CoreExample {
            z: z.clone(),
            t: *t,
            target: target.clone(),
            weight: *weight,
        };
        loss += accumulate_example(core, &ex, scale, &mut grads);
    }
    (loss * scale, grads.weights, grads.biases)
}

/// Trained core, its loss trace and the samples that survived truncation.
#[derive(Debug)]
pub struct TrainOutcome {
    pub core: ReluCore,
    /// Mean minibatch denoising loss per epoch.
    pub loss_trace: Vec<f64>,
    pub n_used: usize,
}

/// Empirical denoising-risk minimization over minibatches.
///
/// Samples are rows of `samples`; the projector U fixes the coordinates.
/// Parameters are projected to [-kappa, kappa] after every step. The
/// reported loss is the full denoising objective including the
/// parameter-free orthogonal term.
pub fn train(
    samples: &DMatrix<f64>,
    u: &Frame,
    sched: &DiffusionSchedule,
    config: &TrainConfig,
    truncation: Option<&TruncationRegion>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if samples.ncols() != u.ambient_dim() {
        return Err(Error::DimensionMismatch {
            left: samples.ncols(),
            right: u.ambient_dim(),
        });
    }
    if config.truncate && truncation.is_none() {
        return Err(Error::InvalidArgument(
            "truncation enabled but no region supplied".into(),
        ));
    }

    let keep: Vec<usize> = (0..samples.nrows())
        .filter(|&i| match (config.truncate, truncation) {
            (true, Some(region)) => region.contains(&samples.row(i).transpose()),
            _ => true,
        })
        .collect();
    if keep.is_empty() {
        return Err(Error::InvalidArgument(
            "no samples survived truncation".into(),
        ));
    }

    let m = u.latent_dim();
    let mut core = ReluCore::init(
        m,
        &config.hidden_widths,
        config.output_bound,
        config.kappa,
        config.seed,
    );
    let mut trace = Vec::with_capacity(config.n_epochs);
    let mut rng = rng::stream(config.seed, "train", 0);
    let mut grads = Gradients::zeros_like(&core);
    let mut vel = Gradients::zeros_like(&core);
    let mut order: Vec<usize> = keep.clone();

    for _epoch in 0..config.n_epochs {
        // Fisher-Yates with the run stream.
        for i in (1..order.len()).rev() {
            let j = (rng.gen::<u64>() % (i as u64 + 1)) as usize;
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        let mut epoch_terms = 0usize;
        for chunk in order.chunks(config.batch_size) {
            grads.fill_zero();
            let n_terms = chunk.len() * config.n_time_samples;
            let scale = 1.0 / n_terms as f64;
            let mut batch_loss = 0.0;
            for &idx in chunk {
                let x0 = samples.row(idx).transpose();
                let z0 = u.project(&x0);
                let perp0 = u.perp_norm_sq(&x0);
                for _ in 0..config.n_time_samples {
                    let t = sched.t0 + rng.gen::<f64>() * sched.window();
                    let sv = schedule_eval(t, 0.0)?;
                    let sqrt_h = sv.h.sqrt();
                    let mut zt = &z0 * sv.alpha;
                    for v in zt.iter_mut() {
                        *v += sqrt_h * rng::standard_normal(&mut rng);
                    }
                    // Perp noise does not enter the projected input.
                    for _ in 0..(u.ambient_dim() - m) {
                        rng::standard_normal(&mut rng);
                    }
                    let weight = 1.0 / (sv.h * sv.h);
                    let ex = CoreExample {
                        z: zt,
                        t,
                        target: &z0 * sv.alpha,
                        weight,
                    };
                    batch_loss += accumulate_example(&core, &ex, scale, &mut grads);
                    batch_loss += weight * sv.alpha * sv.alpha * perp0;
                }
            }
            batch_loss *= scale;
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    context: format!("minibatch loss became {batch_loss}"),
                });
            }
            for l in 0..core.weights.len() {
                if config.momentum > 0.0 {
                    vel.weights[l] = &vel.weights[l] * config.momentum - &grads.weights[l];
                    vel.biases[l] = &vel.biases[l] * config.momentum - &grads.biases[l];
                    core.weights[l] += &vel.weights[l] * config.step_size;
                    core.biases[l] += &vel.biases[l] * config.step_size;
                } else {
                    core.weights[l] -= &grads.weights[l] * config.step_size;
                    core.biases[l] -= &grads.biases[l] * config.step_size;
                }
            }
            core.project_params();
            epoch_loss += batch_loss;
            epoch_terms += 1;
        }
        trace.push(epoch_loss / epoch_terms as f64);
    }

    Ok(TrainOutcome {
        core,
        loss_trace: trace,
        n_used: keep.len(),
    })
}

/// Worst relative deviation between backprop and central finite
/// differences over `n_picks` randomly chosen parameters.
pub fn gradient_check_worst_rel(
    core: &ReluCore,
    batch: &[(DVector<f64>, f64, DVector<f64>, f64)],
    n_picks: usize,
    seed: u64,
) -> f64 {
    let (_, gw, gb) = core_loss_gradient(core, batch);
    let mut rng = rng::stream(seed, "gradient-check", 0);
    let eps = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..n_picks {
        let layer = (rng.gen::<u64>() % core.weights.len() as u64) as usize;
        let pick_bias = rng.gen::<f64>() < 0.25;
        let (fd, analytic) = if pick_bias {
            let i = (rng.gen::<u64>() % core.biases[layer].len() as u64) as usize;
            let mut plus = core.clone();
            let mut minus = core.clone();
            plus.biases[layer][i] += eps;
            minus.biases[layer][i] -= eps;
            (
                (core_loss(&plus, batch) - core_loss(&minus, batch)) / (2.0 * eps),
                gb[layer][i],
            )
        } else {
            let i = (rng.gen::<u64>() % core.weights[layer].nrows() as u64) as usize;
            let j = (rng.gen::<u64>() % core.weights[layer].ncols() as u64) as usize;
            let mut plus = core.clone();
            let mut minus = core.clone();
            plus.weights[layer][(i, j)] += eps;
            minus.weights[layer][(i, j)] -= eps;
            (
                (core_loss(&plus, batch) - core_loss(&minus, batch)) / (2.0 * eps),
                gw[layer][(i, j)],
            )
        };
        worst = worst.max((fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-6));
    }
    worst
}

/// Post-hoc regularity measurements of a trained core: sampled spatial
/// and temporal Lipschitz estimates plus parameter statistics. The class
/// constants are measured, not enforced.
#[derive(Debug, Clone, Serialize)]
pub struct RegularityReport {
    pub gamma_z: f64,
    pub gamma_t: f64,
    pub param_count: usize,
    pub max_abs_param: f64,
}

pub fn measure_regularity(
    core: &ReluCore,
    sched: &DiffusionSchedule,
    probes: usize,
    probe_scale: f64,
    seed: u64,
) -> RegularityReport {
    let m = core.input_dim();
    let mut rng = rng::stream(seed, "regularity", 0);
    let eps = 1e-5;
    let mut gamma_z = 0.0f64;
    let mut gamma_t = 0.0f64;
    for _ in 0..probes {
        let mut z = DVector::zeros(m);
        rng::fill_standard_normal(&mut rng, z.as_mut_slice());
        z *= probe_scale;
        let t = sched.t0 + rng.gen::<f64>() * sched.window();
        let mut jac = DMatrix::zeros(m, m);
        for j in 0..m {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[j] += eps;
            zm[j] -= eps;
            jac.set_column(
                j,
                &((core.forward(&zp, t) - core.forward(&zm, t)) / (2.0 * eps)),
            );
        }
        gamma_z = gamma_z.max(jac.svd(false, false).singular_values[0]);
        let dt = (core.forward(&z, t + eps) - core.forward(&z, t - eps)) / (2.0 * eps);
        gamma_t = gamma_t.max(dt.norm());
    }
    RegularityReport {
        gamma_z,
        gamma_t,
        param_count: core.param_count(),
        max_abs_param: core.max_abs_param(),
    }
}
