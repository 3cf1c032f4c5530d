//! Closed-form scores and decomposition maps for the noisy low-dimensional
//! model: latent score, the maps g and f*, the ambient score split into
//! on-support and orthogonal parts, the field G, mixture scores and
//! posterior weights.
//!
//! Everything here is exact for Gaussian and Gaussian-mixture latents and
//! is computed in log space; these evaluations are the ground truth that
//! Monte Carlo risk estimators regress against.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::datamodel::{ambient_gaussian_params, MixtureModel, NoisyLowDimModel};
use crate::error::{Error, Result};
use crate::geometry::Frame;
use crate::rng;
use crate::schedule::{schedule_eval, ScheduleValues};

const LN_TAU: f64 = 1.8378770664093453; // ln(2 pi)

/// Affine map y -> C y + b; the closed form of g for Gaussian latents.
#[derive(Debug, Clone)]
pub struct AffineMap {
    pub c: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl AffineMap {
    pub fn eval(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.c * y + &self.b
    }

    /// Largest singular value of the linear part.
    pub fn op_norm(&self) -> f64 {
        self.c
            .clone()
            .svd(false, false)
            .singular_values
            .iter()
            .cloned()
            .fold(0.0, f64::max)
    }
}

struct WeightedGaussian {
    log_w: f64,
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl WeightedGaussian {
    fn log_density(&self, x: &DVector<f64>) -> f64 {
        let diff = x - &self.mean;
        let solved = self.chol.solve(&diff);
        let log_det: f64 = self.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
        -0.5 * diff.dot(&solved) - log_det - 0.5 * (x.len() as f64) * LN_TAU
    }

    /// (log density, gradient of log density).
    fn log_density_and_score(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let diff = x - &self.mean;
        let solved = self.chol.solve(&diff);
        let log_det: f64 = self.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
        let ld = -0.5 * diff.dot(&solved) - log_det - 0.5 * (x.len() as f64) * LN_TAU;
        (ld, -solved)
    }
}

/// A finite weighted Gaussian mixture with cached Cholesky factors,
/// evaluable in log space.
pub struct WeightedGaussianField {
    parts: Vec<WeightedGaussian>,
}

impl WeightedGaussianField {
    pub fn from_parts(parts: &[(f64, DVector<f64>, DMatrix<f64>)]) -> Result<Self> {
        let built = parts
            .iter()
            .map(|(w, mean, cov)| {
                let chol = cov.clone().cholesky().ok_or(Error::SingularCovariance)?;
                Ok(WeightedGaussian {
                    log_w: w.ln(),
                    mean: mean.clone(),
                    chol,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(WeightedGaussianField { parts: built })
    }

    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        let logs: Vec<f64> = self
            .parts
            .iter()
            .map(|p| p.log_w + p.log_density(x))
            .collect();
        log_sum_exp(&logs)
    }

    pub fn score(&self, x: &DVector<f64>) -> DVector<f64> {
        let evals: Vec<(f64, DVector<f64>)> = self
            .parts
            .iter()
            .map(|p| {
                let (ld, sc) = p.log_density_and_score(x);
                (p.log_w + ld, sc)
            })
            .collect();
        let logs: Vec<f64> = evals.iter().map(|(l, _)| *l).collect();
        let lse = log_sum_exp(&logs);
        let mut out = DVector::zeros(x.len());
        for (l, sc) in &evals {
            let resp = (l - lse).exp();
            if resp > 0.0 {
                out += sc * resp;
            }
        }
        out
    }
}

pub fn log_sum_exp(logs: &[f64]) -> f64 {
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
}

/// Two-way posterior from log(omega_i) + log(p_i); sums to one exactly.
pub fn posterior_pair(log_joint: [f64; 2]) -> [f64; 2] {
    let gap = log_joint[1] - log_joint[0];
    if gap.is_nan() {
        // Both joints -inf; undefined, split evenly.
        return [0.5, 0.5];
    }
    let pi1 = 1.0 / (1.0 + gap.exp());
    [pi1, 1.0 - pi1]
}

/// The latent time-t law p_t^LD of Y_t = A' X_t, prepared at fixed t:
/// a Gaussian mixture with means alpha*m_k and covariances
/// alpha^2 S_k + h_tilde I.
pub struct LatentLaw {
    field: WeightedGaussianField,
    pub sv: ScheduleValues,
    dim: usize,
}

impl LatentLaw {
    pub fn new(model: &NoisyLowDimModel, t: f64) -> Result<Self> {
        let sv = schedule_eval(t, model.sigma())?;
        let dim = model.latent_dim();
        let a2 = sv.alpha * sv.alpha;
        let parts: Vec<(f64, DVector<f64>, DMatrix<f64>)> = model
            .latent()
            .components()
            .into_iter()
            .map(|(w, g)| {
                let mut cov = g.cov() * a2;
                for i in 0..dim {
                    cov[(i, i)] += sv.h_tilde;
                }
                (w, g.mean() * sv.alpha, cov)
            })
            .collect();
        Ok(LatentLaw {
            field: WeightedGaussianField::from_parts(&parts)?,
            sv,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn log_density(&self, y: &DVector<f64>) -> f64 {
        self.field.log_density(y)
    }

    /// grad log p_t^LD(y).
    pub fn latent_score(&self, y: &DVector<f64>) -> DVector<f64> {
        self.field.score(y)
    }

    /// g(y, t) = h * grad log p_t^LD(y) + y.
    pub fn g(&self, y: &DVector<f64>) -> DVector<f64> {
        y + self.latent_score(y) * self.sv.h
    }

    /// f*(y, t) = h_tilde * grad log p_t^LD(y) + y.
    pub fn f_star(&self, y: &DVector<f64>) -> DVector<f64> {
        y + self.latent_score(y) * self.sv.h_tilde
    }
}

/// The ambient time-t law in factorized form: p_t(x) equals
/// p_t^LD(A'x) times an isotropic N(0, h_tilde I) factor on col(A)^perp.
pub struct AmbientLaw<'a> {
    frame: &'a Frame,
    pub latent: LatentLaw,
}

impl<'a> AmbientLaw<'a> {
    pub fn new(model: &'a NoisyLowDimModel, t: f64) -> Result<Self> {
        Ok(AmbientLaw {
            frame: model.frame(),
            latent: LatentLaw::new(model, t)?,
        })
    }

    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        let y = self.frame.project(x);
        let perp_dim = (self.frame.ambient_dim() - self.frame.latent_dim()) as f64;
        let h_tilde = self.latent.sv.h_tilde;
        self.latent.log_density(&y)
            - 0.5 * perp_dim * (LN_TAU + h_tilde.ln())
            - 0.5 * self.frame.perp_norm_sq(x) / h_tilde
    }

    pub fn score(&self, x: &DVector<f64>) -> DVector<f64> {
        self.decompose(x).total
    }

    pub fn decompose(&self, x: &DVector<f64>) -> ScoreDecomposition {
        let y = self.frame.project(x);
        let on_support = self.frame.lift(&self.latent.latent_score(&y));
        let orthogonal = (self.frame.lift(&y) - x) / self.latent.sv.h_tilde;
        let total = &on_support + &orthogonal;
        ScoreDecomposition {
            total,
            on_support,
            orthogonal,
        }
    }

    /// G_t(x) = A g(A'x, t) + rho(t) (I - A A') x.
    pub fn g_field(&self, x: &DVector<f64>) -> DVector<f64> {
        let y = self.frame.project(x);
        let mut out = self.frame.lift(&self.latent.g(&y));
        if self.latent.sv.rho > 0.0 {
            out += (x - self.frame.lift(&y)) * self.latent.sv.rho;
        }
        out
    }
}

/// The ambient score split into mutually orthogonal components.
#[derive(Debug, Clone)]
pub struct ScoreDecomposition {
    pub total: DVector<f64>,
    /// A grad log p_t^LD(A'x): lives in col(A).
    pub on_support: DVector<f64>,
    /// -(1/h_tilde) (I - A A') x: lives in col(A)^perp.
    pub orthogonal: DVector<f64>,
}

/// Latent score, g and f* at a single point.
pub struct LatentMaps {
    pub latent_score: DVector<f64>,
    pub g: DVector<f64>,
    pub f_star: DVector<f64>,
}

pub fn latent_maps(model: &NoisyLowDimModel, y: &DVector<f64>, t: f64) -> Result<LatentMaps> {
    let law = LatentLaw::new(model, t)?;
    let latent_score = law.latent_score(y);
    let g = y + &latent_score * law.sv.h;
    let f_star = y + &latent_score * law.sv.h_tilde;
    Ok(LatentMaps {
        latent_score,
        g,
        f_star,
    })
}

pub fn ambient_score(
    model: &NoisyLowDimModel,
    x: &DVector<f64>,
    t: f64,
) -> Result<ScoreDecomposition> {
    Ok(AmbientLaw::new(model, t)?.decompose(x))
}

pub fn g_field(model: &NoisyLowDimModel, x: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    Ok(AmbientLaw::new(model, t)?.g_field(x))
}

/// Dense-route ambient score through the full D x D Gaussian mixture from
/// `ambient_gaussian_params`; used to cross-check the factorized route.
pub fn ambient_score_dense(
    model: &NoisyLowDimModel,
    x: &DVector<f64>,
    t: f64,
) -> Result<DVector<f64>> {
    let parts: Vec<(f64, DVector<f64>, DMatrix<f64>)> = ambient_gaussian_params(model, t)?
        .into_iter()
        .map(|c| (c.weight, c.mean, c.cov))
        .collect();
    Ok(WeightedGaussianField::from_parts(&parts)?.score(x))
}

/// Mixture score with posterior weights: prepared at fixed t.
pub struct MixtureLaw<'a> {
    laws: [AmbientLaw<'a>; 2],
    log_omega: [f64; 2],
}

impl<'a> MixtureLaw<'a> {
    pub fn new(mix: &'a MixtureModel, t: f64) -> Result<Self> {
        Ok(MixtureLaw {
            laws: [
                AmbientLaw::new(mix.component(0), t)?,
                AmbientLaw::new(mix.component(1), t)?,
            ],
            log_omega: [mix.omega()[0].ln(), mix.omega()[1].ln()],
        })
    }

    pub fn posterior(&self, x: &DVector<f64>) -> [f64; 2] {
        posterior_pair([
            self.log_omega[0] + self.laws[0].log_density(x),
            self.log_omega[1] + self.laws[1].log_density(x),
        ])
    }

    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        log_sum_exp(&[
            self.log_omega[0] + self.laws[0].log_density(x),
            self.log_omega[1] + self.laws[1].log_density(x),
        ])
    }

    pub fn score_and_posterior(&self, x: &DVector<f64>) -> (DVector<f64>, [f64; 2]) {
        let pi = self.posterior(x);
        let mut out = DVector::zeros(x.len());
        if pi[0] > 0.0 {
            out += self.laws[0].score(x) * pi[0];
        }
        if pi[1] > 0.0 {
            out += self.laws[1].score(x) * pi[1];
        }
        (out, pi)
    }

    pub fn component(&self, i: usize) -> &AmbientLaw<'a> {
        &self.laws[i]
    }
}

pub fn mixture_score(
    mix: &MixtureModel,
    x: &DVector<f64>,
    t: f64,
) -> Result<(DVector<f64>, [f64; 2])> {
    Ok(MixtureLaw::new(mix, t)?.score_and_posterior(x))
}

/// The law of U' X_t for one mixture component, with the projected
/// posterior weights pi^U. Prepared at fixed t.
pub struct ProjectedMixtureLaw {
    fields: [WeightedGaussianField; 2],
    log_omega: [f64; 2],
}

impl ProjectedMixtureLaw {
    pub fn new(mix: &MixtureModel, u: &Frame, t: f64) -> Result<Self> {
        if u.ambient_dim() != mix.ambient_dim() {
            return Err(Error::DimensionMismatch {
                left: u.ambient_dim(),
                right: mix.ambient_dim(),
            });
        }
        let project = |model: &NoisyLowDimModel| -> Result<WeightedGaussianField> {
            let parts: Vec<(f64, DVector<f64>, DMatrix<f64>)> = ambient_gaussian_params(model, t)?
                .into_iter()
                .map(|c| {
                    (
                        c.weight,
                        u.project(&c.mean),
                        u.matrix().transpose() * c.cov * u.matrix(),
                    )
                })
                .collect();
            WeightedGaussianField::from_parts(&parts)
        };
        Ok(ProjectedMixtureLaw {
            fields: [project(mix.component(0))?, project(mix.component(1))?],
            log_omega: [mix.omega()[0].ln(), mix.omega()[1].ln()],
        })
    }

    pub fn posterior(&self, z: &DVector<f64>) -> [f64; 2] {
        posterior_pair([
            self.log_omega[0] + self.fields[0].log_density(z),
            self.log_omega[1] + self.fields[1].log_density(z),
        ])
    }
}

/// pi_i^U(z, t): posterior component weights given only U' X_t = z.
pub fn projected_posterior(
    mix: &MixtureModel,
    u: &Frame,
    z: &DVector<f64>,
    t: f64,
) -> Result<[f64; 2]> {
    Ok(ProjectedMixtureLaw::new(mix, u, t)?.posterior(z))
}

/// Closed-form coefficients of g for a Gaussian latent:
/// C = I - h (alpha^2 S + h_tilde I)^{-1},
/// b = h (alpha^2 S + h_tilde I)^{-1} alpha m.
pub fn gaussian_g_affine(model: &NoisyLowDimModel, t: f64) -> Result<AffineMap> {
    let latent = match model.latent() {
        crate::datamodel::LatentDistribution::Gaussian(g) => g,
        _ => return Err(Error::NotGaussian),
    };
    let sv = schedule_eval(t, model.sigma())?;
    let d = latent.dim();
    let mut sigma_y = latent.cov() * (sv.alpha * sv.alpha);
    for i in 0..d {
        sigma_y[(i, i)] += sv.h_tilde;
    }
    let chol = sigma_y.cholesky().ok_or(Error::SingularCovariance)?;
    let k = chol.inverse();
    let mut c = &k * (-sv.h);
    for i in 0..d {
        c[(i, i)] += 1.0;
    }
    let b = &k * (latent.mean() * (sv.alpha * sv.h));
    Ok(AffineMap { c, b })
}

/// Lipschitz constant of g(., t). Exact (largest |eigenvalue| of C) for a
/// Gaussian latent; for mixtures a sampled supremum of the finite-difference
/// Jacobian norm over draws from the latent time-t law, flagged as an
/// estimate.
pub fn lipschitz_g(
    model: &NoisyLowDimModel,
    t: f64,
    probes: usize,
    seed: u64,
) -> Result<(f64, bool)> {
    if model.latent().is_gaussian() {
        return Ok((gaussian_g_affine(model, t)?.op_norm(), false));
    }
    let law = LatentLaw::new(model, t)?;
    let d = law.dim();
    let mut rng = rng::stream(seed, "lipschitz-g", 0);
    let eps = 1e-5;
    let mut sup = 0.0f64;
    for _ in 0..probes.max(1) {
        // Draw y from the latent time-t mixture.
        let u: f64 = rand::Rng::gen(&mut rng);
        let comps = model.latent().components();
        let mut acc = 0.0;
        let mut y = DVector::zeros(d);
        for (w, g) in &comps {
            acc += w;
            if u < acc || std::ptr::eq(*g, comps.last().unwrap().1) {
                let mut xi = DVector::zeros(d);
                rng::fill_standard_normal(&mut rng, xi.as_mut_slice());
                y = g.sample(&mut rng) * law.sv.alpha + xi * law.sv.h_tilde.sqrt();
                break;
            }
        }
        let mut jac = DMatrix::zeros(d, d);
        for j in 0..d {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[j] += eps;
            ym[j] -= eps;
            let col = (law.g(&yp) - law.g(&ym)) / (2.0 * eps);
            jac.set_column(j, &col);
        }
        let op = jac.svd(false, false).singular_values[0];
        sup = sup.max(op);
    }
    Ok((sup, true))
}

/// Closure evaluating a field at one fixed time.
pub type TimeSlice<'a> = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Sync + 'a>;

/// An evaluable score field s(x, t).
pub trait ScoreField: Sync {
    /// Prepares the time-dependent state once for bulk evaluation at t.
    fn at(&self, t: f64) -> Result<TimeSlice<'_>>;

    fn eval(&self, x: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        Ok(self.at(t)?(x))
    }
}

/// A core map f(z, t) acting in projected coordinates.
pub trait CoreMap: Sync {
    fn dim(&self) -> usize;

    fn at(&self, t: f64) -> Result<TimeSlice<'_>>;

    fn eval(&self, z: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        Ok(self.at(t)?(z))
    }
}

/// s(x, t) = (1/h) U f(U'x, t) - (1/h) x: the structural class member
/// built from a projector frame and a core map.
pub struct ProjectedScore<C> {
    pub frame: Frame,
    pub core: C,
}

impl<C: CoreMap> ProjectedScore<C> {
    pub fn new(frame: Frame, core: C) -> Self {
        ProjectedScore { frame, core }
    }
}

impl<C: CoreMap> ScoreField for ProjectedScore<C> {
    fn at(&self, t: f64) -> Result<TimeSlice<'_>> {
        let h = schedule_eval(t, 0.0)?.h;
        if h <= 0.0 {
            return Err(Error::InvalidArgument("projected scores need t > 0".into()));
        }
        let core = self.core.at(t)?;
        let frame = &self.frame;
        Ok(Box::new(move |x| {
            let z = frame.project(x);
            (frame.lift(&core(&z)) - x) / h
        }))
    }
}

/// Core map that is identically zero: the induced score is -x/h.
pub struct ZeroCore {
    pub dim: usize,
}

impl CoreMap for ZeroCore {
    fn dim(&self) -> usize {
        self.dim
    }

    fn at(&self, _t: f64) -> Result<TimeSlice<'_>> {
        let dim = self.dim;
        Ok(Box::new(move |_z| DVector::zeros(dim)))
    }
}

/// The exact score of a single noisy low-dimensional model.
pub struct AnalyticScore<'a> {
    pub model: &'a NoisyLowDimModel,
}

impl ScoreField for AnalyticScore<'_> {
    fn at(&self, t: f64) -> Result<TimeSlice<'_>> {
        let law = AmbientLaw::new(self.model, t)?;
        Ok(Box::new(move |x| law.score(x)))
    }
}

/// The exact score of the two-component ambient mixture.
pub struct AnalyticMixtureScore<'a> {
    pub mix: &'a MixtureModel,
}

impl ScoreField for AnalyticMixtureScore<'_> {
    fn at(&self, t: f64) -> Result<TimeSlice<'_>> {
        let law = MixtureLaw::new(self.mix, t)?;
        Ok(Box::new(move |x| law.score_and_posterior(x).0))
    }
}
