//! The generative model x = A z + eps: latent families with closed-form
//! scores, forward noising, and the two-component mixture.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Frame;
use crate::rng::{self, standard_normal, Stream};
use crate::schedule::schedule_eval;

const PSD_CLAMP: f64 = -1e-10;
const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Gaussian with arbitrary PSD covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLatent {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    /// Factor L with L L' = cov, used for sampling.
    sqrt_cov: DMatrix<f64>,
}

impl GaussianLatent {
    /// Validates that `cov` is symmetric PSD up to a -1e-10 eigenvalue
    /// clamp, and precomputes a sampling factor.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::InvalidArgument(format!(
                "covariance must be {d}x{d}, got {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        let asym = (&cov - cov.transpose()).norm();
        if asym > 1e-8 * (1.0 + cov.norm()) {
            return Err(Error::InvalidArgument(format!(
                "covariance is not symmetric (defect {asym:.3e})"
            )));
        }
        let sym = (&cov + cov.transpose()) * 0.5;
        let sqrt_cov = match sym.clone().cholesky() {
            Some(chol) => chol.l(),
            None => {
                // Semidefinite or slightly indefinite from rounding: clamp.
                let eig = sym.clone().symmetric_eigen();
                let mut scaled = eig.eigenvectors.clone();
                for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
                    if lambda < PSD_CLAMP {
                        return Err(Error::InvalidArgument(format!(
                            "covariance has eigenvalue {lambda:.3e} below the PSD clamp"
                        )));
                    }
                    let s = lambda.max(0.0).sqrt();
                    for i in 0..d {
                        scaled[(i, j)] *= s;
                    }
                }
                scaled
            }
        };
        Ok(GaussianLatent {
            mean,
            cov: sym,
            sqrt_cov,
        })
    }

    pub fn point_mass(mean: DVector<f64>) -> Self {
        let d = mean.len();
        GaussianLatent {
            mean,
            cov: DMatrix::zeros(d, d),
            sqrt_cov: DMatrix::zeros(d, d),
        }
    }

    pub fn standard(dim: usize) -> Self {
        GaussianLatent::new(DVector::zeros(dim), DMatrix::identity(dim, dim)).unwrap()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn sample(&self, rng: &mut impl Rng) -> DVector<f64> {
        let mut xi = DVector::zeros(self.dim());
        for v in xi.iter_mut() {
            *v = standard_normal(rng);
        }
        &self.mean + &self.sqrt_cov * xi
    }
}

#[derive(Serialize, Deserialize)]
struct GaussianJson {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

impl Serialize for GaussianLatent {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let d = self.dim();
        let cov = (0..d)
            .map(|i| (0..d).map(|j| self.cov[(i, j)]).collect())
            .collect();
        GaussianJson {
            mean: self.mean.iter().cloned().collect(),
            cov,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GaussianLatent {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = GaussianJson::deserialize(d)?;
        let dim = raw.mean.len();
        if raw.cov.len() != dim || raw.cov.iter().any(|row| row.len() != dim) {
            return Err(serde::de::Error::custom("covariance shape mismatch"));
        }
        let mut cov = DMatrix::zeros(dim, dim);
        for (i, row) in raw.cov.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                cov[(i, j)] = v;
            }
        }
        GaussianLatent::new(DVector::from_vec(raw.mean), cov).map_err(serde::de::Error::custom)
    }
}

/// Latent family: a single Gaussian or a finite Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LatentDistribution {
    Gaussian(GaussianLatent),
    GaussianMixture {
        weights: Vec<f64>,
        components: Vec<GaussianLatent>,
    },
}

impl LatentDistribution {
    pub fn mixture(weights: Vec<f64>, components: Vec<GaussianLatent>) -> Result<Self> {
        if weights.is_empty() || weights.len() != components.len() {
            return Err(Error::InvalidArgument(
                "mixture needs matching, nonempty weights and components".into(),
            ));
        }
        if weights.iter().any(|&w| w <= 0.0) {
            return Err(Error::InvalidArgument(
                "mixture weights must be positive".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidArgument(format!(
                "mixture weights sum to {sum}, expected 1"
            )));
        }
        let dim = components[0].dim();
        if components.iter().any(|c| c.dim() != dim) {
            return Err(Error::InvalidArgument(
                "mixture components must share a dimension".into(),
            ));
        }
        Ok(LatentDistribution::GaussianMixture {
            weights,
            components,
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            LatentDistribution::Gaussian(g) => g.dim(),
            LatentDistribution::GaussianMixture { components, .. } => components[0].dim(),
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, LatentDistribution::Gaussian(_))
    }

    /// (weight, component) view that treats a plain Gaussian as a
    /// one-component mixture.
    pub fn components(&self) -> Vec<(f64, &GaussianLatent)> {
        match self {
            LatentDistribution::Gaussian(g) => vec![(1.0, g)],
            LatentDistribution::GaussianMixture {
                weights,
                components,
            } => weights.iter().cloned().zip(components.iter()).collect(),
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> DVector<f64> {
        match self {
            LatentDistribution::Gaussian(g) => g.sample(rng),
            LatentDistribution::GaussianMixture {
                weights,
                components,
            } => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (w, c) in weights.iter().zip(components.iter()) {
                    acc += w;
                    if u < acc {
                        return c.sample(rng);
                    }
                }
                components.last().unwrap().sample(rng)
            }
        }
    }
}

/// One domain's generative model: frame A, latent law, ambient noise sigma.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelJson")]
pub struct NoisyLowDimModel {
    frame: Frame,
    latent: LatentDistribution,
    sigma: f64,
}

#[derive(Deserialize)]
struct ModelJson {
    frame: Frame,
    latent: LatentDistribution,
    sigma: f64,
}

impl TryFrom<ModelJson> for NoisyLowDimModel {
    type Error = Error;
    fn try_from(raw: ModelJson) -> Result<Self> {
        NoisyLowDimModel::new(raw.frame, raw.latent, raw.sigma)
    }
}

impl NoisyLowDimModel {
    pub fn new(frame: Frame, latent: LatentDistribution, sigma: f64) -> Result<Self> {
        if latent.dim() != frame.latent_dim() {
            return Err(Error::DimensionMismatch {
                left: latent.dim(),
                right: frame.latent_dim(),
            });
        }
        if sigma.is_nan() || sigma < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "sigma must be nonnegative, got {sigma}"
            )));
        }
        Ok(NoisyLowDimModel {
            frame,
            latent,
            sigma,
        })
    }

    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    pub fn latent(&self) -> &LatentDistribution {
        &self.latent
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn ambient_dim(&self) -> usize {
        self.frame.ambient_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.frame.latent_dim()
    }

    /// Draws one x = A z + sigma * eps using the supplied stream.
    pub fn sample_with(&self, rng: &mut impl Rng) -> DVector<f64> {
        let z = self.latent.sample(rng);
        let mut x = self.frame.lift(&z);
        if self.sigma > 0.0 {
            for v in x.iter_mut() {
                *v += self.sigma * standard_normal(rng);
            }
        } else {
            // Keep the stream layout independent of sigma.
            for _ in 0..x.len() {
                standard_normal(rng);
            }
        }
        x
    }
}

/// Two-component ambient mixture omega_1 p_1 + omega_2 p_2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureJson")]
pub struct MixtureModel {
    omega: [f64; 2],
    components: [NoisyLowDimModel; 2],
}

#[derive(Deserialize)]
struct MixtureJson {
    omega: [f64; 2],
    components: [NoisyLowDimModel; 2],
}

impl TryFrom<MixtureJson> for MixtureModel {
    type Error = Error;
    fn try_from(raw: MixtureJson) -> Result<Self> {
        MixtureModel::new(raw.omega, raw.components)
    }
}

impl MixtureModel {
    pub fn new(omega: [f64; 2], components: [NoisyLowDimModel; 2]) -> Result<Self> {
        if omega[0] < 0.0 || omega[1] < 0.0 || (omega[0] + omega[1] - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidArgument(format!(
                "omega must be nonnegative and sum to 1, got {omega:?}"
            )));
        }
        if components[0].ambient_dim() != components[1].ambient_dim() {
            return Err(Error::DimensionMismatch {
                left: components[0].ambient_dim(),
                right: components[1].ambient_dim(),
            });
        }
        Ok(MixtureModel { omega, components })
    }

    pub fn omega(&self) -> [f64; 2] {
        self.omega
    }

    pub fn component(&self, i: usize) -> &NoisyLowDimModel {
        &self.components[i]
    }

    pub fn ambient_dim(&self) -> usize {
        self.components[0].ambient_dim()
    }
}

/// n x D sample matrix from the model, deterministic given the seed.
pub fn sample_data(model: &NoisyLowDimModel, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::InvalidArgument("need n >= 1 samples".into()));
    }
    let mut rng = rng::stream(seed, "sample-data", 0);
    Ok(sample_data_with(model, n, &mut rng))
}

pub(crate) fn sample_data_with(
    model: &NoisyLowDimModel,
    n: usize,
    rng: &mut Stream,
) -> DMatrix<f64> {
    let d = model.ambient_dim();
    let mut out = DMatrix::zeros(n, d);
    for i in 0..n {
        let x = model.sample_with(rng);
        out.row_mut(i).copy_from(&x.transpose());
    }
    out
}

/// One forward-noised point X_t | X_0 = x0 ~ N(alpha x0, h I).
pub fn noise_forward(x0: &DVector<f64>, t: f64, seed: u64) -> Result<DVector<f64>> {
    let sv = schedule_eval(t, 0.0)?;
    let mut rng = rng::stream(seed, "noise-forward", 0);
    let mut x = x0 * sv.alpha;
    let sqrt_h = sv.h.sqrt();
    for v in x.iter_mut() {
        *v += sqrt_h * standard_normal(&mut rng);
    }
    Ok(x)
}

/// Renoises every row of `x0s` to time t with fresh noise from `rng`.
pub(crate) fn renoise_rows(
    x0s: &DMatrix<f64>,
    alpha: f64,
    h: f64,
    rng: &mut Stream,
) -> DMatrix<f64> {
    let mut out = x0s * alpha;
    let sqrt_h = h.sqrt();
    for v in out.iter_mut() {
        *v += sqrt_h * standard_normal(rng);
    }
    out
}

/// Mixture samples together with their component labels (0 or 1).
pub fn sample_mixture(
    mix: &MixtureModel,
    n: usize,
    seed: u64,
) -> Result<(DMatrix<f64>, Vec<usize>)> {
    if n == 0 {
        return Err(Error::InvalidArgument("need n >= 1 samples".into()));
    }
    let mut rng = rng::stream(seed, "sample-mixture", 0);
    Ok(sample_mixture_with(mix, n, &mut rng))
}

pub(crate) fn sample_mixture_with(
    mix: &MixtureModel,
    n: usize,
    rng: &mut Stream,
) -> (DMatrix<f64>, Vec<usize>) {
    let d = mix.ambient_dim();
    let mut out = DMatrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let u: f64 = rng.gen();
        let label = if u < mix.omega[0] { 0 } else { 1 };
        let x = mix.components[label].sample_with(rng);
        out.row_mut(i).copy_from(&x.transpose());
        labels.push(label);
    }
    (out, labels)
}

/// One ambient Gaussian component of the time-t marginal.
#[derive(Debug, Clone)]
pub struct AmbientGaussian {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// The time-t ambient marginal as a list of weighted Gaussians.
///
/// For a Gaussian latent (m, S) the single entry is
/// N(alpha A m, alpha^2 (A S A' + sigma^2 I) + h I); a mixture latent
/// yields one entry per component.
pub fn ambient_gaussian_params(model: &NoisyLowDimModel, t: f64) -> Result<Vec<AmbientGaussian>> {
    let sv = schedule_eval(t, model.sigma())?;
    let d = model.ambient_dim();
    let a = model.frame().matrix();
    let a2 = sv.alpha * sv.alpha;
    model
        .latent()
        .components()
        .into_iter()
        .map(|(w, g)| {
            let mean = model.frame().lift(g.mean()) * sv.alpha;
            let mut cov = a * g.cov() * a.transpose() * a2;
            for i in 0..d {
                cov[(i, i)] += a2 * model.sigma() * model.sigma() + sv.h;
            }
            Ok(AmbientGaussian {
                weight: w,
                mean,
                cov,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry;

    pub(crate) fn std1() -> NoisyLowDimModel {
        NoisyLowDimModel::new(
            Frame::first_axes(2, 1),
            LatentDistribution::Gaussian(GaussianLatent::standard(1)),
            0.0,
        )
        .unwrap()
    }

    fn sample_mean_cov(samples: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
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
        cov /= n as f64;
        (mean, cov)
    }

    #[test]
    fn point_mass_latent_gives_exact_rows() {
        let z0 = DVector::from_vec(vec![1.5]);
        let model = NoisyLowDimModel::new(
            Frame::first_axes(3, 1),
            LatentDistribution::Gaussian(GaussianLatent::point_mass(z0.clone())),
            0.0,
        )
        .unwrap();
        let s = sample_data(&model, 16, 5).unwrap();
        for i in 0..16 {
            assert_eq!(s[(i, 0)], 1.5);
            assert_eq!(s[(i, 1)], 0.0);
            assert_eq!(s[(i, 2)], 0.0);
        }
    }

    #[test]
    fn std1_sample_covariance_matches_theory() {
        let n = 100_000;
        let s = sample_data(&std1(), n, 42).unwrap();
        let (mean, cov) = sample_mean_cov(&s);
        // Exact covariance A A' = diag(1, 0); 3-sigma MC band.
        let band = 3.0 * (2.0 / n as f64).sqrt();
        assert!(mean.norm() < 3.0 / (n as f64).sqrt() * 2.0);
        assert!((cov[(0, 0)] - 1.0).abs() < band, "var_x {}", cov[(0, 0)]);
        assert!(cov[(1, 1)].abs() < 1e-12);
    }

    #[test]
    fn noisy_sample_covariance_matches_theory() {
        let model = NoisyLowDimModel::new(
            Frame::first_axes(2, 1),
            LatentDistribution::Gaussian(GaussianLatent::standard(1)),
            0.5,
        )
        .unwrap();
        let n = 100_000;
        let s = sample_data(&model, n, 9).unwrap();
        let (_, cov) = sample_mean_cov(&s);
        // A A' + sigma^2 I = diag(1.25, 0.25).
        let band = 3.0 * 1.25 * (2.0 / n as f64).sqrt();
        assert!((cov[(0, 0)] - 1.25).abs() < band, "var_x {}", cov[(0, 0)]);
        assert!((cov[(1, 1)] - 0.25).abs() < band, "var_y {}", cov[(1, 1)]);
    }

    #[test]
    fn noise_forward_identity_at_t_zero() {
        let x0 = DVector::from_vec(vec![0.3, -1.2]);
        let x = noise_forward(&x0, 0.0, 7).unwrap();
        assert_eq!(x, x0);
    }

    #[test]
    fn noise_forward_reaches_stationary_law() {
        let x0 = DVector::zeros(2);
        let n = 50_000;
        let mut samples = DMatrix::zeros(n, 2);
        for i in 0..n {
            let x = noise_forward(&x0, 40.0, i as u64).unwrap();
            samples.row_mut(i).copy_from(&x.transpose());
        }
        let (_, cov) = sample_mean_cov(&samples);
        let band = 3.0 * (2.0 / n as f64).sqrt();
        assert!((cov[(0, 0)] - 1.0).abs() < band);
        assert!((cov[(1, 1)] - 1.0).abs() < band);
        assert!(cov[(0, 1)].abs() < band);
    }

    #[test]
    fn noise_forward_is_deterministic() {
        let x0 = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let a = noise_forward(&x0, 0.4, 123).unwrap();
        let b = noise_forward(&x0, 0.4, 123).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_data_is_seed_reproducible() {
        let model = std1();
        let a = sample_data(&model, 64, 11).unwrap();
        let b = sample_data(&model, 64, 11).unwrap();
        assert_eq!(a, b);
        let c = sample_data(&model, 64, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn degenerate_mixture_weight_pins_labels() {
        let mix = MixtureModel::new([1.0, 0.0], [std1(), std1()]).unwrap();
        let (_, labels) = sample_mixture(&mix, 200, 3).unwrap();
        assert!(labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn balanced_mixture_labels_follow_binomial() {
        let mix = MixtureModel::new([0.5, 0.5], [std1(), std1()]).unwrap();
        let n = 100_000;
        let (_, labels) = sample_mixture(&mix, n, 21).unwrap();
        let frac = labels.iter().filter(|&&l| l == 0).count() as f64 / n as f64;
        assert!((frac - 0.5).abs() < 3.0 * (0.25f64 / n as f64).sqrt());
    }

    #[test]
    fn identical_components_pool_like_single_model() {
        let mix = MixtureModel::new([0.5, 0.5], [std1(), std1()]).unwrap();
        let n = 50_000;
        let (samples, _) = sample_mixture(&mix, n, 33).unwrap();
        let (_, cov) = sample_mean_cov(&samples);
        let band = 3.0 * (2.0 / n as f64).sqrt();
        assert!((cov[(0, 0)] - 1.0).abs() < band);
        assert!(cov[(1, 1)].abs() < 1e-10);
    }

    #[test]
    fn ambient_params_std1_has_unit_signal_variance() {
        let model = std1();
        for t in [0.05, 0.3, 1.0] {
            let params = ambient_gaussian_params(&model, t).unwrap();
            assert_eq!(params.len(), 1);
            let sv = schedule_eval(t, 0.0).unwrap();
            // alpha^2 + h = 1 by the schedule identity.
            assert!((params[0].cov[(0, 0)] - 1.0).abs() < 1e-14);
            assert!((params[0].cov[(1, 1)] - sv.h).abs() < 1e-14);
            assert!(params[0].mean.norm() < 1e-14);
        }
    }

    #[test]
    fn ambient_params_at_time_zero_reduce_to_signal() {
        let mean = DVector::from_vec(vec![0.7, -0.2]);
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
        let latent = GaussianLatent::new(mean.clone(), cov.clone()).unwrap();
        let frame = geometry::haar_frame(5, 2, 8);
        let model = NoisyLowDimModel::new(frame.clone(), LatentDistribution::Gaussian(latent), 0.0)
            .unwrap();
        let params = ambient_gaussian_params(&model, 0.0).unwrap();
        let want_mean = frame.lift(&mean);
        let want_cov = frame.matrix() * cov * frame.matrix().transpose();
        assert!((&params[0].mean - want_mean).norm() < 1e-12);
        assert!((&params[0].cov - want_cov).norm() < 1e-12);
    }

    #[test]
    fn ambient_params_match_monte_carlo() {
        let latent = GaussianLatent::standard(2);
        let frame = geometry::haar_frame(3, 2, 4);
        let model =
            NoisyLowDimModel::new(frame, LatentDistribution::Gaussian(latent), 0.4).unwrap();
        let t = 0.35;
        let sv = schedule_eval(t, model.sigma()).unwrap();
        let n = 100_000;
        let x0 = sample_data(&model, n, 2).unwrap();
        let mut rng = rng::stream(9, "test-renoise", 0);
        let xt = renoise_rows(&x0, sv.alpha, sv.h, &mut rng);
        let (mean, cov) = sample_mean_cov(&xt);
        let params = ambient_gaussian_params(&model, t).unwrap();
        // 4-standard-error componentwise bands.
        for i in 0..3 {
            let se_mean = (params[0].cov[(i, i)] / n as f64).sqrt();
            assert!((mean[i] - params[0].mean[i]).abs() < 4.0 * se_mean);
            for j in 0..3 {
                let se_cov = ((params[0].cov[(i, i)] * params[0].cov[(j, j)]
                    + params[0].cov[(i, j)].powi(2))
                    / n as f64)
                    .sqrt();
                assert!(
                    (cov[(i, j)] - params[0].cov[(i, j)]).abs() < 4.0 * se_cov,
                    "cov ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn mixture_weight_validation() {
        assert!(LatentDistribution::mixture(
            vec![0.5, 0.6],
            vec![GaussianLatent::standard(1), GaussianLatent::standard(1)],
        )
        .is_err());
        assert!(MixtureModel::new([0.7, 0.4], [std1(), std1()]).is_err());
    }

    #[test]
    fn model_json_round_trip() {
        let model = NoisyLowDimModel::new(
            geometry::haar_frame(3, 2, 6),
            LatentDistribution::mixture(
                vec![0.25, 0.75],
                vec![GaussianLatent::standard(2), GaussianLatent::standard(2)],
            )
            .unwrap(),
            0.3,
        )
        .unwrap();
        let text = serde_json::to_string(&model).unwrap();
        let back: NoisyLowDimModel = serde_json::from_str(&text).unwrap();
        assert_eq!(model, back);
    }
}
