//! Orthonormal frames, projectors, principal angles and cross-Gram
//! pseudoinverses. These are the geometric quantities every bound consumes.

use nalgebra::{DMatrix, DVector};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::rng;

/// Relative singular-value cutoff for rank decisions and pseudoinverses.
pub const RANK_REL_TOL: f64 = 1e-10;

/// Angles with cos(theta) at or below this are excluded from tan^2 sums.
pub const TAN_COS_CUTOFF: f64 = 1e-8;

const ORTHONORMALITY_TOL: f64 = 1e-10;

/// A D x m matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    data: DMatrix<f64>,
}

impl Frame {
    /// Wraps a matrix that is already orthonormal to within 1e-10.
    pub fn from_orthonormal(data: DMatrix<f64>) -> Result<Self> {
        let frame = Frame { data };
        let defect = frame.orthonormality_defect();
        if defect > ORTHONORMALITY_TOL {
            return Err(Error::InvalidArgument(format!(
                "columns are not orthonormal: max |F'F - I| = {defect:.3e}"
            )));
        }
        if frame.latent_dim() == 0 || frame.latent_dim() > frame.ambient_dim() {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= m <= D, got m = {}, D = {}",
                frame.latent_dim(),
                frame.ambient_dim()
            )));
        }
        Ok(frame)
    }

    /// Frame spanned by the first `m` coordinate axes of R^D.
    pub fn first_axes(ambient_dim: usize, latent_dim: usize) -> Self {
        let mut data = DMatrix::zeros(ambient_dim, latent_dim);
        for j in 0..latent_dim {
            data[(j, j)] = 1.0;
        }
        Frame { data }
    }

    pub fn ambient_dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    /// Max-norm of F'F - I.
    pub fn orthonormality_defect(&self) -> f64 {
        let gram = self.data.transpose() * &self.data;
        let m = self.latent_dim();
        let mut worst: f64 = 0.0;
        for i in 0..m {
            for j in 0..m {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram[(i, j)] - target).abs());
            }
        }
        worst
    }

    /// Orthogonal projector V V'.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.data * self.data.transpose()
    }

    /// Complementary projector I - V V'.
    pub fn perp_projector(&self) -> DMatrix<f64> {
        let mut p = -self.projector();
        for i in 0..self.ambient_dim() {
            p[(i, i)] += 1.0;
        }
        p
    }

    /// V' x: ambient vector to frame coordinates.
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        self.data.transpose() * x
    }

    /// V z: frame coordinates back to the ambient space.
    pub fn lift(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.data * z
    }

    /// ||P_V^perp x||^2 without forming the projector.
    pub fn perp_norm_sq(&self, x: &DVector<f64>) -> f64 {
        let z = self.project(x);
        (x.norm_squared() - z.norm_squared()).max(0.0)
    }
}

#[derive(Serialize, Deserialize)]
struct FrameJson {
    ambient_dim: usize,
    latent_dim: usize,
    /// Row-major D*m entries.
    columns: Vec<f64>,
}

impl Serialize for Frame {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let (d, m) = (self.ambient_dim(), self.latent_dim());
        let mut columns = Vec::with_capacity(d * m);
        for i in 0..d {
            for j in 0..m {
                columns.push(self.data[(i, j)]);
            }
        }
        FrameJson {
            ambient_dim: d,
            latent_dim: m,
            columns,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Frame {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = FrameJson::deserialize(deserializer)?;
        if raw.columns.len() != raw.ambient_dim * raw.latent_dim {
            return Err(D::Error::custom(format!(
                "expected {} entries, got {}",
                raw.ambient_dim * raw.latent_dim,
                raw.columns.len()
            )));
        }
        let data = DMatrix::from_row_slice(raw.ambient_dim, raw.latent_dim, &raw.columns);
        Frame::from_orthonormal(data).map_err(D::Error::custom)
    }
}

/// Principal-angle summary between two frames V and A.
#[derive(Debug, Clone)]
pub struct SubspaceReport {
    /// r = min(d_V, d_A) principal angles in radians, ascending.
    pub angles: Vec<f64>,
    /// Sum of cos^2 over the principal angles; equals ||V'A||_F^2.
    pub cos2_sum: f64,
    /// Cross-Gram B = V'A.
    pub b: DMatrix<f64>,
    /// Moore-Penrose pseudoinverse of B.
    pub b_pinv: DMatrix<f64>,
    pub b_rank: usize,
    /// Largest singular value of B.
    pub b_opnorm: f64,
    /// ||P_V^perp A||_F^2.
    pub residual_v_of_a: f64,
    /// Tr(P_V^perp P_A^perp).
    pub perp_trace: f64,
    /// Sum of tan^2 over angles with cos(theta) above the cutoff.
    pub tan2_sum: f64,
    /// True when at least one angle was excluded from `tan2_sum`.
    pub excluded_angles: bool,
}

/// SVD-based pseudoinverse with a relative singular-value cutoff.
///
/// Returns (pinv, rank, largest singular value). The pseudoinverse of the
/// zero matrix is the zero matrix.
pub fn pseudo_inverse(m: &DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, usize, f64) {
    let svd = m.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let cutoff = rel_tol * max_sv;
    let u = svd.u.as_ref().expect("svd requested u");
    let vt = svd.v_t.as_ref().expect("svd requested v_t");
    let mut rank = 0;
    let mut inv_s = DMatrix::zeros(vt.nrows(), u.ncols());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if max_sv > 0.0 && s > cutoff {
            inv_s[(i, i)] = 1.0 / s;
            rank += 1;
        }
    }
    (vt.transpose() * inv_s * u.transpose(), rank, max_sv)
}

/// Orthonormalizes a full-column-rank matrix.
///
/// Inputs that are already orthonormal are passed through unchanged;
/// otherwise the thin QR factor with nonnegative R diagonal is returned,
/// which spans the same column space.
pub fn make_frame(matrix: &DMatrix<f64>) -> Result<Frame> {
    let (d, m) = (matrix.nrows(), matrix.ncols());
    if m == 0 || m > d {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= m <= D, got m = {m}, D = {d}"
        )));
    }
    let svd = matrix.clone().svd(false, false);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let min_sv = svd
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if min_sv.is_nan() || min_sv <= RANK_REL_TOL * max_sv {
        return Err(Error::RankDeficient { min_sv, max_sv });
    }

    let candidate = Frame {
        data: matrix.clone(),
    };
    if candidate.orthonormality_defect() <= ORTHONORMALITY_TOL {
        return Ok(candidate);
    }

    let qr = matrix.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..m {
        if r[(j, j)] < 0.0 {
            for i in 0..d {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    Frame::from_orthonormal(q)
}

/// Principal angles and cross-Gram quantities between col(V) and col(A).
pub fn subspace_report(v: &Frame, a: &Frame) -> Result<SubspaceReport> {
    if v.ambient_dim() != a.ambient_dim() {
        return Err(Error::DimensionMismatch {
            left: v.ambient_dim(),
            right: a.ambient_dim(),
        });
    }
    let b = v.matrix().transpose() * a.matrix();
    let svd = b.clone().svd(false, false);
    // Descending singular values give ascending angles.
    let mut cosines: Vec<f64> = svd
        .singular_values
        .iter()
        .map(|s| s.clamp(0.0, 1.0))
        .collect();
    cosines.sort_by(|x, y| y.partial_cmp(x).unwrap());
    let angles: Vec<f64> = cosines.iter().map(|c| c.acos()).collect();
    let cos2_sum: f64 = cosines.iter().map(|c| c * c).sum();

    let (b_pinv, b_rank, b_opnorm) = pseudo_inverse(&b, RANK_REL_TOL);

    // ||P_V^perp A||_F^2, computed directly rather than through the angles.
    let pa = v.matrix() * &b; // V V' A
    let residual_v_of_a = (a.matrix() - &pa).norm_squared();

    let perp_trace = (v.perp_projector() * a.perp_projector()).trace();

    let mut tan2_sum = 0.0;
    let mut excluded_angles = false;
    for &c in &cosines {
        if c > TAN_COS_CUTOFF {
            let s2 = 1.0 - c * c;
            tan2_sum += s2 / (c * c);
        } else {
            excluded_angles = true;
        }
    }

    Ok(SubspaceReport {
        angles,
        cos2_sum,
        b,
        b_pinv,
        b_rank,
        b_opnorm,
        residual_v_of_a,
        perp_trace,
        tan2_sum,
        excluded_angles,
    })
}

/// Builds a frame whose principal angles to `a` are the given list
/// (padded with zeros up to d when fewer than d angles are supplied).
///
/// The rotation directions inside col(a)^perp are Haar random given `seed`.
pub fn rotate_frame(a: &Frame, angles: &[f64], seed: u64) -> Result<Frame> {
    let d = a.latent_dim();
    let big_d = a.ambient_dim();
    let capacity = d.min(big_d - d);
    if angles.len() > capacity {
        return Err(Error::InfeasibleAngles {
            requested: angles.len(),
            capacity,
        });
    }
    for &th in angles {
        if !(0.0..=std::f64::consts::FRAC_PI_2 + 1e-12).contains(&th) {
            return Err(Error::InvalidArgument(format!(
                "angle {th} outside [0, pi/2]"
            )));
        }
    }
    let mut sorted: Vec<f64> = angles.to_vec();
    sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());

    // Haar complement directions: orthonormalize P_A^perp G for Gaussian G.
    let r = sorted.len();
    let mut result = a.matrix().clone();
    if r > 0 {
        let mut rng = rng::stream(seed, "rotate-frame", 0);
        let mut g = DMatrix::zeros(big_d, r);
        loop {
            for v in g.iter_mut() {
                *v = rng::standard_normal(&mut rng);
            }
            let perp = a.perp_projector() * &g;
            if let Ok(w) = make_frame(&perp) {
                for (j, &theta) in sorted.iter().enumerate() {
                    for i in 0..big_d {
                        result[(i, j)] =
                            theta.cos() * a.matrix()[(i, j)] + theta.sin() * w.matrix()[(i, j)];
                    }
                }
                break;
            }
            // Degenerate Gaussian draw; retry with fresh randomness.
        }
    }
    Frame::from_orthonormal(result)
}

/// Haar-random frame: thin QR of a Gaussian matrix with sign-fixed R.
pub fn haar_frame(ambient_dim: usize, latent_dim: usize, seed: u64) -> Frame {
    let mut rng = rng::stream(seed, "haar-frame", 0);
    loop {
        let mut g = DMatrix::zeros(ambient_dim, latent_dim);
        for v in g.iter_mut() {
            *v = rng::standard_normal(&mut rng);
        }
        if let Ok(frame) = make_frame(&g) {
            return frame;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3};

    fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
        assert!((a - b).abs() <= tol, "{what}: {a} vs {b}");
    }

    #[test]
    fn make_frame_passes_through_orthonormal_input() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let f = make_frame(&m).unwrap();
        assert_eq!(f.matrix(), &m);
    }

    #[test]
    fn make_frame_normalizes_single_column() {
        let m = DMatrix::from_row_slice(2, 1, &[3.0, 4.0]);
        let f = make_frame(&m).unwrap();
        assert_close(f.matrix()[(0, 0)], 0.6, 1e-12, "x");
        assert_close(f.matrix()[(1, 0)], 0.8, 1e-12, "y");
    }

    #[test]
    fn make_frame_rejects_rank_deficient_input() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1e-15]);
        match make_frame(&m) {
            Err(Error::RankDeficient { .. }) => {}
            other => panic!("expected RankDeficient, got {other:?}"),
        }
    }

    #[test]
    fn report_identity_case() {
        let f = Frame::first_axes(4, 2);
        let rep = subspace_report(&f, &f).unwrap();
        assert!(rep.angles.iter().all(|&a| a.abs() < 1e-10));
        assert_close(rep.residual_v_of_a, 0.0, 1e-12, "residual");
        assert_close(rep.cos2_sum, 2.0, 1e-12, "cos2");
        assert!((rep.b.clone() - DMatrix::<f64>::identity(2, 2)).norm() < 1e-12);
        assert!(!rep.excluded_angles);
    }

    #[test]
    fn report_single_angle_case() {
        let theta = 0.7f64;
        let v = Frame::first_axes(2, 1);
        let a = make_frame(&DMatrix::from_row_slice(2, 1, &[theta.cos(), theta.sin()])).unwrap();
        let rep = subspace_report(&v, &a).unwrap();
        assert_eq!(rep.angles.len(), 1);
        assert_close(rep.angles[0], theta, 1e-10, "angle");
        assert_close(rep.residual_v_of_a, theta.sin().powi(2), 1e-10, "residual");
        assert_close(rep.perp_trace, theta.cos().powi(2), 1e-10, "perp trace");
    }

    #[test]
    fn report_orthogonal_subspaces() {
        let v = Frame::first_axes(3, 1);
        let a = make_frame(&DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 0.0])).unwrap();
        let rep = subspace_report(&v, &a).unwrap();
        assert_close(rep.angles[0], FRAC_PI_2, 1e-10, "angle");
        assert_close(rep.residual_v_of_a, 1.0, 1e-10, "residual");
        assert_close(rep.perp_trace, 1.0, 1e-10, "perp trace");
        assert!(rep.excluded_angles);
        assert_eq!(rep.b_rank, 0);
    }

    #[test]
    fn report_rejects_dimension_mismatch() {
        let v = Frame::first_axes(3, 1);
        let a = Frame::first_axes(4, 1);
        assert!(matches!(
            subspace_report(&v, &a),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rotate_frame_zero_angles_spans_same_space() {
        let a = haar_frame(5, 2, 3);
        let rot = rotate_frame(&a, &[0.0, 0.0], 9).unwrap();
        let rep = subspace_report(&a, &rot).unwrap();
        assert!(rep.angles.iter().all(|&x| x < 1e-8));
    }

    #[test]
    fn rotate_frame_round_trips_requested_angle() {
        let a = haar_frame(4, 1, 5);
        let rot = rotate_frame(&a, &[FRAC_PI_3], 17).unwrap();
        let rep = subspace_report(&a, &rot).unwrap();
        assert_close(rep.angles[0], FRAC_PI_3, 1e-8, "angle");
    }

    #[test]
    fn rotate_frame_handles_multiple_distinct_angles() {
        let a = haar_frame(7, 3, 21);
        let requested = [0.35, 0.9];
        let rot = rotate_frame(&a, &requested, 5).unwrap();
        let rep = subspace_report(&a, &rot).unwrap();
        // One unrotated direction plus the two requested angles, ascending.
        assert_eq!(rep.angles.len(), 3);
        assert!(rep.angles[0] < 1e-8);
        assert_close(rep.angles[1], 0.35, 1e-8, "first angle");
        assert_close(rep.angles[2], 0.9, 1e-8, "second angle");
    }

    #[test]
    fn rotate_frame_rejects_infeasible_request() {
        let a = Frame::first_axes(2, 2);
        assert!(matches!(
            rotate_frame(&a, &[0.3, 0.3], 1),
            Err(Error::InfeasibleAngles { .. })
        ));
    }

    #[test]
    fn cos2_sum_matches_cross_gram_frobenius() {
        for seed in 0..20u64 {
            let v = haar_frame(8, 3, seed * 2 + 1);
            let a = haar_frame(8, 2, seed * 2 + 2);
            let rep = subspace_report(&v, &a).unwrap();
            let fro = (v.matrix().transpose() * a.matrix()).norm_squared();
            assert_close(rep.cos2_sum, fro, 1e-10, "cos2 vs frobenius");
        }
    }

    #[test]
    fn angles_are_symmetric_for_equal_dims() {
        for seed in 0..10u64 {
            let v = haar_frame(6, 2, 100 + seed);
            let a = haar_frame(6, 2, 200 + seed);
            let rep_va = subspace_report(&v, &a).unwrap();
            let rep_av = subspace_report(&a, &v).unwrap();
            for (x, y) in rep_va.angles.iter().zip(rep_av.angles.iter()) {
                assert_close(*x, *y, 1e-9, "angle symmetry");
            }
        }
    }

    #[test]
    fn projector_is_idempotent() {
        for seed in 0..10u64 {
            let v = haar_frame(7, 3, 300 + seed);
            let p = v.projector();
            let diff = &p * &p - &p;
            let worst = diff.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            assert!(worst <= 1e-10, "idempotence defect {worst}");
        }
    }

    #[test]
    fn pseudo_inverse_satisfies_moore_penrose_identities() {
        for seed in 0..10u64 {
            let v = haar_frame(6, 3, 400 + seed);
            let a = haar_frame(6, 2, 500 + seed);
            let rep = subspace_report(&v, &a).unwrap();
            let b = &rep.b;
            let bp = &rep.b_pinv;
            assert!((b * bp * b - b).norm() < 1e-10, "B B+ B = B");
            assert!((bp * b * bp - bp).norm() < 1e-10, "B+ B B+ = B+");
        }
    }

    #[test]
    fn pseudo_inverse_of_zero_is_zero() {
        let z = DMatrix::<f64>::zeros(3, 2);
        let (pinv, rank, opnorm) = pseudo_inverse(&z, RANK_REL_TOL);
        assert_eq!(rank, 0);
        assert_eq!(opnorm, 0.0);
        assert_eq!(pinv, DMatrix::<f64>::zeros(2, 3));
    }

    #[test]
    fn frame_json_round_trip() {
        let f = haar_frame(4, 2, 77);
        let text = serde_json::to_string(&f).unwrap();
        let back: Frame = serde_json::from_str(&text).unwrap();
        assert!((f.matrix() - back.matrix()).norm() < 1e-15);
    }

    #[test]
    fn frame_json_rejects_non_orthonormal_columns() {
        let text = r#"{"ambient_dim":2,"latent_dim":1,"columns":[3.0,4.0]}"#;
        assert!(serde_json::from_str::<Frame>(text).is_err());
    }
}
