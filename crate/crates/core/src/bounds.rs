//! Bound evaluators: the frozen-reuse lower bound, the comparator upper
//! bound (both dimension branches), the exact structural oracle for
//! Gaussian targets, the optimal shared projector, and the mixed-oracle
//! terms.

// Monte Carlo inner loops index several row-aligned buffers at once.
#![allow(clippy::needless_range_loop)]

use nalgebra::DMatrix;
use serde::Serialize;

use crate::datamodel::{ambient_gaussian_params, MixtureModel, NoisyLowDimModel};
use crate::error::{Error, Result};
use crate::geometry::{subspace_report, Frame};
use crate::mc::{batch_mean_stderr, McBudget};
use crate::risk::{ComponentComparatorCore, RiskEstimate};
use crate::rng;
use crate::schedule::{schedule_eval, DiffusionSchedule};
use crate::score::{
    gaussian_g_affine, lipschitz_g, AmbientLaw, CoreMap, LatentLaw, MixtureLaw, ProjectedMixtureLaw,
};

/// Second moments of g(Y_t, t) and Y_t at one time.
#[derive(Debug, Clone)]
pub struct GMoments {
    /// E[g g'], d x d.
    pub m_g: DMatrix<f64>,
    /// Smallest eigenvalue of m_g, clamped at zero.
    pub mu_min: f64,
    /// Largest eigenvalue of m_g.
    pub lambda_max: f64,
    /// E[Y Y'], d x d.
    pub m_y: DMatrix<f64>,
    /// Lipschitz constant of g(., t).
    pub l_g: f64,
    /// True when l_g is a sampled estimate (mixture latents).
    pub l_g_is_estimate: bool,
    /// Batch-mean standard error of the eigenvalue estimates (mixtures).
    pub stderr: Option<f64>,
}

fn symmetric_eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = m.clone().symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &l in eig.eigenvalues.iter() {
        lo = lo.min(l);
        hi = hi.max(l);
    }
    (lo, hi)
}

/// Moments of g under the latent time-t law. Closed form for Gaussian
/// latents; Monte Carlo with reported standard error for mixtures.
pub fn g_moments(
    model: &NoisyLowDimModel,
    t: f64,
    n_mc: usize,
    seed: u64,
    stream_index: u64,
) -> Result<GMoments> {
    let sv = schedule_eval(t, model.sigma())?;
    let d = model.latent_dim();
    if model.latent().is_gaussian() {
        let map = gaussian_g_affine(model, t)?;
        let (mean, cov) = match model.latent() {
            crate::datamodel::LatentDistribution::Gaussian(g) => (g.mean(), g.cov()),
            _ => unreachable!(),
        };
        let mut sigma_y = cov * (sv.alpha * sv.alpha);
        for i in 0..d {
            sigma_y[(i, i)] += sv.h_tilde;
        }
        let mean_y = mean * sv.alpha;
        let g_mean = map.eval(&mean_y);
        let m_g = &map.c * &sigma_y * map.c.transpose() + &g_mean * g_mean.transpose();
        let m_y = sigma_y + &mean_y * mean_y.transpose();
        let (mu_raw, lambda_max) = symmetric_eigen_range(&m_g);
        return Ok(GMoments {
            mu_min: mu_raw.max(0.0),
            lambda_max,
            m_g,
            m_y,
            l_g: map.op_norm(),
            l_g_is_estimate: false,
            stderr: None,
        });
    }

    // Mixture latent: sample Y_t = alpha z + sqrt(h_tilde) xi.
    let law = LatentLaw::new(model, t)?;
    let mut rng = rng::stream(seed, "g-moments", stream_index);
    let n = n_mc.max(2);
    let n_batches = 32.min(n);
    let mut m_g = DMatrix::zeros(d, d);
    let mut m_y = DMatrix::zeros(d, d);
    let mut batch_mu = Vec::with_capacity(n_batches);
    let mut batch_lambda = Vec::with_capacity(n_batches);
    let mut batch_acc = DMatrix::zeros(d, d);
    let mut batch_len = 0usize;
    let per_batch = n.div_ceil(n_batches);
    let sqrt_ht = sv.h_tilde.sqrt();
    for i in 0..n {
        let z = model.latent().sample(&mut rng);
        let mut y = z * sv.alpha;
        for v in y.iter_mut() {
            *v += sqrt_ht * rng::standard_normal(&mut rng);
        }
        let g = law.g(&y);
        let gg = &g * g.transpose();
        m_g += &gg;
        m_y += &y * y.transpose();
        batch_acc += &gg;
        batch_len += 1;
        if batch_len == per_batch || i + 1 == n {
            let scaled = &batch_acc / batch_len as f64;
            let (lo, hi) = symmetric_eigen_range(&scaled);
            batch_mu.push(lo);
            batch_lambda.push(hi);
            batch_acc.fill(0.0);
            batch_len = 0;
        }
    }
    m_g /= n as f64;
    m_y /= n as f64;
    let (mu_raw, lambda_max) = symmetric_eigen_range(&m_g);
    let se = batch_mean_stderr(&batch_mu, batch_mu.len())
        .max(batch_mean_stderr(&batch_lambda, batch_lambda.len()));
    let (l_g, l_g_is_estimate) = lipschitz_g(model, t, 128, seed ^ 0x9e37)?;
    Ok(GMoments {
        mu_min: mu_raw.max(0.0),
        lambda_max,
        m_g,
        m_y,
        l_g,
        l_g_is_estimate,
        stderr: Some(se),
    })
}

/// One named integrand contribution to a bound.
#[derive(Debug, Clone, Serialize)]
pub struct BoundTerm {
    pub name: &'static str,
    pub per_node: Vec<f64>,
    pub average: f64,
}

/// A time-averaged bound with its per-node integrand and term breakdown.
#[derive(Debug, Clone, Serialize)]
pub struct BoundPart {
    pub average: f64,
    pub per_node: Vec<f64>,
    pub terms: Vec<BoundTerm>,
    /// Propagated Monte Carlo error when any input moment was estimated.
    pub stderr: Option<f64>,
}

fn assemble_part(
    sched: &DiffusionSchedule,
    named: Vec<(&'static str, Vec<f64>)>,
    stderr: Option<f64>,
) -> Result<BoundPart> {
    let n = sched.n_nodes;
    let mut total = vec![0.0; n];
    let mut terms = Vec::with_capacity(named.len());
    for (name, per_node) in named {
        let avg = sched.average_of_samples(&per_node)?;
        for (acc, v) in total.iter_mut().zip(per_node.iter()) {
            *acc += v;
        }
        terms.push(BoundTerm {
            name,
            per_node,
            average: avg.value,
        });
    }
    let avg = sched.average_of_samples(&total)?;
    Ok(BoundPart {
        average: avg.value,
        per_node: total,
        terms,
        stderr,
    })
}

/// Frozen-reuse structural lower bound: per node,
/// mu(t)/h^2 (d2 - sum cos^2) + sigma^4 alpha^4 / (h^2 h_tilde)
/// (D - d1 - d2 + sum cos^2).
pub fn frozen_lower_bound(
    target: &NoisyLowDimModel,
    v1: &Frame,
    sched: &DiffusionSchedule,
    mc: &McBudget,
) -> Result<BoundPart> {
    let rep = subspace_report(v1, target.frame())?;
    let signal_defect = rep.residual_v_of_a;
    let noise_defect = rep.perp_trace;
    let sigma4 = target.sigma().powi(4);
    let nodes = sched.nodes();
    let mut signal = Vec::with_capacity(nodes.len());
    let mut noise = Vec::with_capacity(nodes.len());
    let mut se_acc = 0.0;
    let mut any_mc = false;
    for (i, &t) in nodes.iter().enumerate() {
        let sv = schedule_eval(t, target.sigma())?;
        let gm = g_moments(target, t, mc.n, mc.seed, i as u64)?;
        let h2 = sv.h * sv.h;
        signal.push(gm.mu_min / h2 * signal_defect);
        noise.push(sigma4 * sv.alpha.powi(4) / (h2 * sv.h_tilde) * noise_defect);
        if let Some(se) = gm.stderr {
            any_mc = true;
            se_acc += (se / h2 * signal_defect).powi(2);
        }
    }
    let stderr = any_mc.then(|| (se_acc / nodes.len() as f64).sqrt());
    assemble_part(
        sched,
        vec![("signal", signal), ("ambient_noise", noise)],
        stderr,
    )
}

/// Which dimension branch of the comparator upper bound applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UpperBoundBranch {
    /// d1 >= d2; B must have full column rank.
    DimSufficient,
    /// d1 < d2; B must have full row rank; an information-loss trace
    /// term appears.
    DimDeficient,
}

#[derive(Debug, Clone, Serialize)]
pub struct UpperBoundReport {
    pub part: BoundPart,
    pub branch: UpperBoundBranch,
}

/// Comparator upper bound on the frozen-reuse risk (both branches).
pub fn frozen_upper_bound(
    target: &NoisyLowDimModel,
    v1: &Frame,
    sched: &DiffusionSchedule,
    mc: &McBudget,
) -> Result<UpperBoundReport> {
    let d1 = v1.latent_dim();
    let d2 = target.latent_dim();
    let rep = subspace_report(v1, target.frame())?;
    let (branch, branch_name, required) = if d1 >= d2 {
        (
            UpperBoundBranch::DimSufficient,
            "d1 >= d2 (full column rank)",
            d2,
        )
    } else {
        (
            UpperBoundBranch::DimDeficient,
            "d1 < d2 (full row rank)",
            d1,
        )
    };
    if rep.b_rank < required {
        return Err(Error::RankConditionViolated {
            branch: branch_name,
            required,
            rank: rep.b_rank,
        });
    }
    for (j, angle) in rep.angles.iter().enumerate() {
        let c = angle.cos();
        if c < 1e-4 {
            return Err(Error::IllConditioned { index: j, cos: c });
        }
    }

    let signal_defect = rep.residual_v_of_a; // d2 - sum cos^2 in both branches
    let tan2 = rep.tan2_sum;
    let b_op2 = rep.b_opnorm * rep.b_opnorm;
    let noise_defect = (d1 + target.ambient_dim()) as f64 - d2 as f64 - rep.cos2_sum;
    let sigma4 = target.sigma().powi(4);
    // I - B^+ B projects onto the lost target rows (d1 < d2 branch).
    let lost_rows = if branch == UpperBoundBranch::DimDeficient {
        let mut p = -(&rep.b_pinv * &rep.b);
        for i in 0..d2 {
            p[(i, i)] += 1.0;
        }
        Some(p)
    } else {
        None
    };

    let nodes = sched.nodes();
    let mut signal = Vec::with_capacity(nodes.len());
    let mut instability = Vec::with_capacity(nodes.len());
    let mut info_loss = Vec::with_capacity(nodes.len());
    let mut noise = Vec::with_capacity(nodes.len());
    let mut se_acc = 0.0;
    let mut any_mc = false;
    for (i, &t) in nodes.iter().enumerate() {
        let sv = schedule_eval(t, target.sigma())?;
        let gm = g_moments(target, t, mc.n, mc.seed, i as u64)?;
        let h2 = sv.h * sv.h;
        let lg2 = gm.l_g * gm.l_g;
        signal.push(gm.lambda_max / h2 * signal_defect);
        instability.push(2.0 * b_op2 * sv.h_tilde * lg2 / h2 * tan2);
        if let Some(p) = &lost_rows {
            info_loss.push(2.0 * b_op2 * lg2 / h2 * (p * &gm.m_y).trace());
        } else {
            info_loss.push(0.0);
        }
        noise.push(sigma4 * sv.alpha.powi(4) / (h2 * sv.h_tilde) * noise_defect);
        if let Some(se) = gm.stderr {
            any_mc = true;
            se_acc += (se / h2 * signal_defect).powi(2);
        }
    }
    let stderr = any_mc.then(|| (se_acc / nodes.len() as f64).sqrt());
    let part = assemble_part(
        sched,
        vec![
            ("signal", signal),
            ("instability", instability),
            ("info_loss", info_loss),
            ("ambient_noise", noise),
        ],
        stderr,
    )?;
    Ok(UpperBoundReport { part, branch })
}

/// Exact best-in-class risk for Gaussian targets.
///
/// For a Gaussian latent, G_t is affine in X_t, so the optimal measurable
/// predictor of V1'G given Z = V1'X_t is the Gaussian conditional
/// expectation, and the structural oracle is a closed-form trace.
pub fn exact_structural_oracle(
    target: &NoisyLowDimModel,
    v1: &Frame,
    sched: &DiffusionSchedule,
) -> Result<BoundPart> {
    if !target.latent().is_gaussian() {
        return Err(Error::NotGaussian);
    }
    if v1.ambient_dim() != target.ambient_dim() {
        return Err(Error::DimensionMismatch {
            left: v1.ambient_dim(),
            right: target.ambient_dim(),
        });
    }
    let big_d = target.ambient_dim();
    let a = target.frame().matrix();
    let nodes = sched.nodes();
    let mut out_of_space = Vec::with_capacity(nodes.len());
    let mut in_space = Vec::with_capacity(nodes.len());
    for &t in &nodes {
        let sv = schedule_eval(t, target.sigma())?;
        let map = gaussian_g_affine(target, t)?;
        // G = Q x + q with Q = A C A' + rho P_perp, q = A b.
        let mut q_mat = a * &map.c * a.transpose();
        let p_perp = {
            let mut p = -(a * a.transpose());
            for i in 0..big_d {
                p[(i, i)] += 1.0;
            }
            p
        };
        q_mat += &p_perp * sv.rho;
        let q_vec = target.frame().lift(&map.b);

        let ambient = ambient_gaussian_params(target, t)?;
        let (mu_x, sigma_x) = (&ambient[0].mean, &ambient[0].cov);
        let g_mean = &q_mat * mu_x + &q_vec;
        let m_g = &q_mat * sigma_x * q_mat.transpose() + &g_mean * g_mean.transpose();

        // E ||P_perp_V1 G||^2 = Tr(M_G) - Tr(V1' M_G V1).
        let out_term =
            (m_g.trace() - (v1.matrix().transpose() * &m_g * v1.matrix()).trace()).max(0.0);

        // Conditional covariance of X given Z = V1'X.
        let sigma_xv = sigma_x * v1.matrix();
        let sigma_z = v1.matrix().transpose() * &sigma_xv;
        let chol = sigma_z.cholesky().ok_or(Error::SingularCovariance)?;
        let sigma_cond = sigma_x - &sigma_xv * chol.inverse() * sigma_xv.transpose();
        let vq = v1.matrix().transpose() * &q_mat;
        let in_term = (&vq * &sigma_cond * vq.transpose()).trace().max(0.0);

        let h2 = sv.h * sv.h;
        out_of_space.push(out_term / h2);
        in_space.push(in_term / h2);
    }
    assemble_part(
        sched,
        vec![
            ("out_of_space", out_of_space),
            ("in_space_residual", in_space),
        ],
        None,
    )
}

/// Ridgeless linear-regression Monte Carlo estimate of the structural
/// oracle: per node, fit V1'G on [Z; 1] by least squares and average the
/// residual plus out-of-space energy. Single-threaded and deterministic.
pub fn structural_oracle_mc(
    target: &NoisyLowDimModel,
    v1: &Frame,
    sched: &DiffusionSchedule,
    mc: &McBudget,
) -> Result<RiskEstimate> {
    let nodes = sched.nodes();
    let weights = sched.weights();
    let window = sched.window();
    let n = mc.n;
    let d1 = v1.latent_dim();
    let mut x0_rng = rng::stream(mc.seed, "oracle-mc-x0", 0);
    let mut noise_rng = rng::stream(mc.seed, "oracle-mc-noise", 0);
    let x0 = crate::datamodel::sample_data_with(target, n, &mut x0_rng);

    let mut per_sample = vec![0.0; n];
    let mut per_node = Vec::with_capacity(nodes.len());
    let mut feats = DMatrix::zeros(n, d1 + 1);
    let mut targets = DMatrix::zeros(n, d1);
    let mut perp_energy = vec![0.0; n];
    for (&t, &qw) in nodes.iter().zip(weights.iter()) {
        let sv = schedule_eval(t, target.sigma())?;
        let law = AmbientLaw::new(target, t)?;
        let h2 = sv.h * sv.h;
        let xt = crate::datamodel::renoise_rows(&x0, sv.alpha, sv.h, &mut noise_rng);
        for j in 0..n {
            let x = xt.row(j).transpose();
            let g = law.g_field(&x);
            let z = v1.project(&x);
            let vg = v1.project(&g);
            perp_energy[j] = g.norm_squared() - vg.norm_squared();
            for c in 0..d1 {
                feats[(j, c)] = z[c];
                targets[(j, c)] = vg[c];
            }
            feats[(j, d1)] = 1.0;
        }
        // Ridgeless normal equations.
        let gram = feats.transpose() * &feats;
        let cross = feats.transpose() * &targets;
        let (gram_pinv, _, _) = crate::geometry::pseudo_inverse(&gram, 1e-12);
        let beta = gram_pinv * cross;
        let fitted = &feats * &beta;
        let mut node_sum = 0.0;
        for j in 0..n {
            let mut resid = 0.0;
            for c in 0..d1 {
                let r = targets[(j, c)] - fitted[(j, c)];
                resid += r * r;
            }
            let val = (perp_energy[j].max(0.0) + resid) / h2;
            per_sample[j] += qw * val / window;
            node_sum += val;
        }
        per_node.push(node_sum / n as f64);
    }
    let value = per_sample.iter().sum::<f64>() / n as f64;
    let stderr = batch_mean_stderr(&per_sample, mc.n_batches);
    Ok(RiskEstimate {
        value,
        stderr,
        per_node,
        n_samples: n,
        seed: mc.seed,
    })
}

/// Time-averaged weights of the mixed objective:
/// c_bar = avg(lambda_max(t)/h^2), n_bar = avg(alpha^4 sigma^4/(h^2 h_tilde)).
#[derive(Debug, Clone)]
pub struct MixedWeights {
    pub c_bar: f64,
    pub n_bar: f64,
    pub c_bar_stderr: Option<f64>,
    pub l_g_is_estimate: bool,
}

pub fn mixed_weights(
    model: &NoisyLowDimModel,
    sched: &DiffusionSchedule,
    mc: &McBudget,
) -> Result<MixedWeights> {
    let nodes = sched.nodes();
    let weights = sched.weights();
    let sigma4 = model.sigma().powi(4);
    let mut c_nodes = Vec::with_capacity(nodes.len());
    let mut n_nodes_v = Vec::with_capacity(nodes.len());
    let mut se_acc = 0.0;
    let mut any_mc = false;
    let mut any_estimate = false;
    for (i, &t) in nodes.iter().enumerate() {
        let sv = schedule_eval(t, model.sigma())?;
        let gm = g_moments(model, t, mc.n, mc.seed, i as u64)?;
        let h2 = sv.h * sv.h;
        c_nodes.push(gm.lambda_max / h2);
        n_nodes_v.push(sigma4 * sv.alpha.powi(4) / (h2 * sv.h_tilde));
        if let Some(se) = gm.stderr {
            any_mc = true;
            se_acc += (weights[i] * se / h2).powi(2);
        }
        any_estimate |= gm.l_g_is_estimate;
    }
    let c_avg = sched.average_of_samples(&c_nodes)?;
    let n_avg = sched.average_of_samples(&n_nodes_v)?;
    Ok(MixedWeights {
        c_bar: c_avg.value,
        n_bar: n_avg.value,
        c_bar_stderr: any_mc.then(|| se_acc.sqrt() / sched.window()),
        l_g_is_estimate: any_estimate,
    })
}

/// Optimal shared projector: eigendecomposition of
/// M_mix = w1 A1 A1' + w2 A2 A2'.
#[derive(Debug, Clone)]
pub struct MixedProjectorSolution {
    pub m_mix: DMatrix<f64>,
    /// Eigenvalues, descending.
    pub spectrum: Vec<f64>,
    pub w_k: Frame,
    /// Sum of the trailing D - k eigenvalues.
    pub residual: f64,
    pub k: usize,
    weights: [f64; 2],
    frames: [Frame; 2],
}

impl MixedProjectorSolution {
    /// Gamma_k(W) = sum_i w_i ||P_W^perp A_i||_F^2 for an arbitrary frame.
    pub fn gamma(&self, w: &Frame) -> Result<f64> {
        gamma_residual(w, [&self.frames[0], &self.frames[1]], self.weights)
    }
}

/// Weighted signal residual Gamma(W).
pub fn gamma_residual(w: &Frame, frames: [&Frame; 2], weights: [f64; 2]) -> Result<f64> {
    let mut total = 0.0;
    for (frame, wt) in frames.iter().zip(weights.iter()) {
        if frame.ambient_dim() != w.ambient_dim() {
            return Err(Error::DimensionMismatch {
                left: frame.ambient_dim(),
                right: w.ambient_dim(),
            });
        }
        let projected = w.matrix() * (w.matrix().transpose() * frame.matrix());
        total += wt * (frame.matrix() - projected).norm_squared();
    }
    Ok(total)
}

/// Closed-form spectrum of M_mix from the principal angles between the
/// component frames: per angle, (a+b)/2 +- sqrt((a-b)^2 + 4ab cos^2)/2,
/// plus |d1-d2| copies of the heavier weight and zeros.
pub fn closed_form_mixed_spectrum(
    a: f64,
    b: f64,
    cosines: &[f64],
    d1: usize,
    d2: usize,
    ambient_dim: usize,
) -> Vec<f64> {
    let r = d1.min(d2);
    assert_eq!(cosines.len(), r, "need one cosine per principal angle");
    let mut spectrum = Vec::with_capacity(ambient_dim.max(d1 + d2));
    for &c in cosines {
        let disc = ((a - b) * (a - b) + 4.0 * a * b * c * c).sqrt();
        spectrum.push((a + b + disc) / 2.0);
        spectrum.push((a + b - disc) / 2.0);
    }
    for _ in 0..d1.saturating_sub(r) {
        spectrum.push(a);
    }
    for _ in 0..d2.saturating_sub(r) {
        spectrum.push(b);
    }
    spectrum.extend(std::iter::repeat_n(
        0.0,
        ambient_dim.saturating_sub(d1 + d2),
    ));
    spectrum.sort_by(|x, y| y.partial_cmp(x).unwrap());
    // If d1 + d2 > D the forced-zero angles contribute lambda^- = 0 entries
    // that stand in for the missing complement; keep the D largest.
    spectrum.truncate(ambient_dim);
    spectrum
}

/// Eigendecomposition of M_mix with the top-k eigenspace as W_k.
///
/// When d1 = d2 the numerical spectrum is cross-checked against the
/// closed form to 1e-10 (relative to the trace scale).
pub fn solve_mixed_projector(
    frames: [&Frame; 2],
    weights: [f64; 2],
    k: usize,
) -> Result<MixedProjectorSolution> {
    let big_d = frames[0].ambient_dim();
    if frames[1].ambient_dim() != big_d {
        return Err(Error::DimensionMismatch {
            left: big_d,
            right: frames[1].ambient_dim(),
        });
    }
    let (d1, d2) = (frames[0].latent_dim(), frames[1].latent_dim());
    let k_min = d1.max(d2);
    if k < k_min || k > big_d {
        return Err(Error::KOutOfRange {
            k,
            min: k_min,
            max: big_d,
        });
    }
    let m_mix = frames[0].projector() * weights[0] + frames[1].projector() * weights[1];
    let eig = m_mix.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..big_d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());
    let spectrum: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut w_data = DMatrix::zeros(big_d, k);
    for (col, &i) in order.iter().take(k).enumerate() {
        w_data.set_column(col, &eig.eigenvectors.column(i));
    }
    let w_k = Frame::from_orthonormal(w_data)?;
    let residual: f64 = spectrum[k..].iter().sum();

    if d1 == d2 {
        let rep = subspace_report(frames[0], frames[1])?;
        let cosines: Vec<f64> = rep.angles.iter().map(|a| a.cos()).collect();
        let closed = closed_form_mixed_spectrum(weights[0], weights[1], &cosines, d1, d2, big_d);
        let tol = 1e-10 * (weights[0] + weights[1]).abs().max(1.0);
        for (i, (num, cf)) in spectrum.iter().zip(closed.iter()).enumerate() {
            if (num - cf).abs() > tol {
                return Err(Error::SpectrumMismatch {
                    index: i,
                    numeric: *num,
                    closed_form: *cf,
                });
            }
        }
    }

    Ok(MixedProjectorSolution {
        m_mix,
        spectrum,
        w_k,
        residual,
        k,
        weights,
        frames: [frames[0].clone(), frames[1].clone()],
    })
}

/// The Monte Carlo penalty terms of the mixed oracle bound.
#[derive(Debug, Clone)]
pub struct MixedPenaltyTerms {
    /// Componentwise reconstruction errors R_i(U).
    pub reconstruction: [RiskEstimate; 2],
    /// Posterior-compression error P(U).
    pub compression: RiskEstimate,
}

/// R_i(U) = avg (1/h^2) E_{p_i,t} ||psi_{i,U}(U'X, t) - U'G_{i,t}(X)||^2 and
/// P(U) = avg (1/h^2) E_{p_mix,t} (pi_1^U - pi_1)^2 ||psi_1 - psi_2||^2,
/// all by Monte Carlo with batch-mean standard errors.
pub fn mixed_penalty_terms(
    mix: &MixtureModel,
    u: &Frame,
    sched: &DiffusionSchedule,
    mc: &McBudget,
) -> Result<MixedPenaltyTerms> {
    let nodes = sched.nodes();
    let weights = sched.weights();
    let window = sched.window();
    let psi = [
        ComponentComparatorCore::new(mix.component(0), u)?,
        ComponentComparatorCore::new(mix.component(1), u)?,
    ];

    let reconstruction_for = |i: usize| -> Result<RiskEstimate> {
        let model = mix.component(i);
        let name_x0 = if i == 0 {
            "penalty-r0-x0"
        } else {
            "penalty-r1-x0"
        };
        let name_noise = if i == 0 {
            "penalty-r0-noise"
        } else {
            "penalty-r1-noise"
        };
        let _ = psi[i].at(nodes[0])?;
        let out = crate::mc::run_time_averaged(mc, nodes.len(), |w, n_w| {
            let mut x0_rng = rng::stream(mc.seed, name_x0, w as u64);
            let mut noise_rng = rng::stream(mc.seed, name_noise, w as u64);
            let x0 = crate::datamodel::sample_data_with(model, n_w, &mut x0_rng);
            let mut per_sample = vec![0.0; n_w];
            let mut node_sums = vec![0.0; nodes.len()];
            for (ni, (&t, &qw)) in nodes.iter().zip(weights.iter()).enumerate() {
                let sv = schedule_eval(t, 0.0).expect("node time");
                let law = AmbientLaw::new(model, t).expect("component law");
                let psi_slice = psi[i].at(t).expect("psi slice");
                let xt = crate::datamodel::renoise_rows(&x0, sv.alpha, sv.h, &mut noise_rng);
                let inv_h2 = 1.0 / (sv.h * sv.h);
                for j in 0..n_w {
                    let x = xt.row(j).transpose();
                    let z = u.project(&x);
                    let ug = u.project(&law.g_field(&x));
                    let val = (psi_slice(&z) - ug).norm_squared() * inv_h2;
                    per_sample[j] += qw * val / window;
                    node_sums[ni] += val;
                }
            }
            crate::mc::WorkerBlock {
                per_sample,
                node_sums,
            }
        });
        Ok(RiskEstimate {
            value: out.value,
            stderr: out.stderr,
            per_node: out.per_node,
            n_samples: out.n,
            seed: mc.seed,
        })
    };

    let r0 = reconstruction_for(0)?;
    let r1 = reconstruction_for(1)?;

    let _ = psi[0].at(nodes[0])?;
    MixtureLaw::new(mix, nodes[0])?;
    ProjectedMixtureLaw::new(mix, u, nodes[0])?;
    let out = crate::mc::run_time_averaged(mc, nodes.len(), |w, n_w| {
        let mut x0_rng = rng::stream(mc.seed, "penalty-p-x0", w as u64);
        let mut noise_rng = rng::stream(mc.seed, "penalty-p-noise", w as u64);
        let (x0, _) = crate::datamodel::sample_mixture_with(mix, n_w, &mut x0_rng);
        let mut per_sample = vec![0.0; n_w];
        let mut node_sums = vec![0.0; nodes.len()];
        for (ni, (&t, &qw)) in nodes.iter().zip(weights.iter()).enumerate() {
            let sv = schedule_eval(t, 0.0).expect("node time");
            let full = MixtureLaw::new(mix, t).expect("mixture law");
            let projected = ProjectedMixtureLaw::new(mix, u, t).expect("projected law");
            let psi1 = psi[0].at(t).expect("psi1");
            let psi2 = psi[1].at(t).expect("psi2");
            let xt = crate::datamodel::renoise_rows(&x0, sv.alpha, sv.h, &mut noise_rng);
            let inv_h2 = 1.0 / (sv.h * sv.h);
            for j in 0..n_w {
                let x = xt.row(j).transpose();
                let z = u.project(&x);
                let gap = projected.posterior(&z)[0] - full.posterior(&x)[0];
                let val = gap * gap * (psi1(&z) - psi2(&z)).norm_squared() * inv_h2;
                per_sample[j] += qw * val / window;
                node_sums[ni] += val;
            }
        }
        crate::mc::WorkerBlock {
            per_sample,
            node_sums,
        }
    });
    let compression = RiskEstimate {
        value: out.value,
        stderr: out.stderr,
        per_node: out.per_node,
        n_samples: out.n,
        seed: mc.seed,
    };

    Ok(MixedPenaltyTerms {
        reconstruction: [r0, r1],
        compression,
    })
}

/// Configuration of the mixed-oracle bound assembly.
#[derive(Debug, Clone)]
pub struct MixedBoundConfig {
    pub eta: f64,
    /// Measured (or assumed) network approximation term.
    pub approx_term: f64,
    /// Override for the c_i weights; defaults to the measured c_bar_i.
    pub c_override: Option<[f64; 2]>,
    pub mc: McBudget,
}

/// Full term breakdown of the mixed oracle upper bound
/// (1+eta) [Gamma(U) + sum_i omega_i n_bar_i Tr(P_U^perp P_i^perp)
///          + 2 sum_i omega_i R_i(U) + 2 P(U)] + (1 + 1/eta) approx.
#[derive(Debug, Clone)]
pub struct MixedOracleBound {
    pub value: f64,
    pub stderr: f64,
    pub gamma: f64,
    pub noise: [f64; 2],
    pub reconstruction: [RiskEstimate; 2],
    pub compression: RiskEstimate,
    pub weights: [MixedWeights; 2],
    pub eta: f64,
    pub approx_term: f64,
}

pub fn mixed_oracle_upper_bound(
    mix: &MixtureModel,
    u: &Frame,
    sched: &DiffusionSchedule,
    cfg: &MixedBoundConfig,
) -> Result<MixedOracleBound> {
    if cfg.eta <= 0.0 {
        return Err(Error::InvalidArgument("eta must be positive".into()));
    }
    let omega = mix.omega();
    let w0 = mixed_weights(mix.component(0), sched, &cfg.mc)?;
    let w1 = mixed_weights(mix.component(1), sched, &cfg.mc)?;
    let c = cfg.c_override.unwrap_or([w0.c_bar, w1.c_bar]);
    let gamma = gamma_residual(
        u,
        [mix.component(0).frame(), mix.component(1).frame()],
        [omega[0] * c[0], omega[1] * c[1]],
    )?;

    let big_d = mix.ambient_dim() as f64;
    let m = u.latent_dim() as f64;
    let mut noise = [0.0; 2];
    for i in 0..2 {
        let rep = subspace_report(u, mix.component(i).frame())?;
        let d_i = mix.component(i).latent_dim() as f64;
        let trace = (big_d - m - d_i + rep.cos2_sum).max(0.0);
        let n_bar = if i == 0 { w0.n_bar } else { w1.n_bar };
        noise[i] = omega[i] * n_bar * trace;
    }

    let penalties = mixed_penalty_terms(mix, u, sched, &cfg.mc)?;
    let bracket = gamma
        + noise[0]
        + noise[1]
        + 2.0 * omega[0] * penalties.reconstruction[0].value
        + 2.0 * omega[1] * penalties.reconstruction[1].value
        + 2.0 * penalties.compression.value;
    let value = (1.0 + cfg.eta) * bracket + (1.0 + 1.0 / cfg.eta) * cfg.approx_term;
    let stderr = (1.0 + cfg.eta)
        * ((2.0 * omega[0] * penalties.reconstruction[0].stderr).powi(2)
            + (2.0 * omega[1] * penalties.reconstruction[1].stderr).powi(2)
            + (2.0 * penalties.compression.stderr).powi(2))
        .sqrt();

    Ok(MixedOracleBound {
        value,
        stderr,
        gamma,
        noise,
        reconstruction: penalties.reconstruction,
        compression: penalties.compression,
        weights: [w0, w1],
        eta: cfg.eta,
        approx_term: cfg.approx_term,
    })
}

/// Lower bound, oracle and upper bound for one frozen-reuse fixture,
/// with the sandwich ordering validated per quadrature node.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub nodes: Vec<f64>,
    pub lower: BoundPart,
    /// None when the Gaussian-only oracle does not apply.
    pub oracle: Option<BoundPart>,
    /// None when the rank or conditioning hypotheses fail; see status.
    pub upper: Option<UpperBoundReport>,
    /// "ok", or the reason the upper bound is unavailable.
    pub upper_status: String,
    pub excluded_angles: bool,
}

pub fn frozen_bound_report(
    target: &NoisyLowDimModel,
    v1: &Frame,
    sched: &DiffusionSchedule,
    mc: &McBudget,
) -> Result<BoundReport> {
    let rep = subspace_report(v1, target.frame())?;
    let lower = frozen_lower_bound(target, v1, sched, mc)?;
    let oracle = if target.latent().is_gaussian() {
        Some(exact_structural_oracle(target, v1, sched)?)
    } else {
        None
    };
    let (upper, upper_status) = match frozen_upper_bound(target, v1, sched, mc) {
        Ok(ub) => (Some(ub), String::from("ok")),
        Err(e @ (Error::RankConditionViolated { .. } | Error::IllConditioned { .. })) => {
            (None, e.to_string())
        }
        Err(e) => return Err(e),
    };

    if let Some(oracle_part) = &oracle {
        let slack = |x: f64| 1e-8 * x.abs().max(1.0);
        for (i, (&lo, &mid)) in lower
            .per_node
            .iter()
            .zip(oracle_part.per_node.iter())
            .enumerate()
        {
            if lo > mid + slack(mid) {
                return Err(Error::InvalidArgument(format!(
                    "sandwich violated at node {i}: lower {lo} > oracle {mid}"
                )));
            }
            if let Some(ub) = &upper {
                let hi = ub.part.per_node[i];
                if mid > hi + slack(hi) {
                    return Err(Error::InvalidArgument(format!(
                        "sandwich violated at node {i}: oracle {mid} > upper {hi}"
                    )));
                }
            }
        }
    }

    Ok(BoundReport {
        nodes: sched.nodes(),
        lower,
        oracle,
        upper,
        upper_status,
        excluded_angles: rep.excluded_angles,
    })
}
