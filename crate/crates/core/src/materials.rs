//! Pointwise constitutive kernels: deformation gradient, PK1 stress for
//! Saint Venant-Kirchhoff and compressible Mooney-Rivlin, Kelvin-Voigt
//! viscous stress, material tangent tensors, strain energy, and von Mises
//! post-processing.

use crate::error::{Error, Result};
use crate::model::T10_NODES;
use nalgebra::{Matrix3, Vector3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaterialModel {
    Svk,
    MooneyRivlin,
}

/// Constitutive parameters for one body.
#[derive(Debug, Clone, Copy)]
pub struct MaterialParams {
    pub model: MaterialModel,
    /// Young's modulus (Pa), SVK.
    pub youngs: f64,
    /// Poisson's ratio, SVK.
    pub poisson: f64,
    /// Mooney-Rivlin deviatoric constants (Pa).
    pub c10: f64,
    pub c01: f64,
    /// Mooney-Rivlin bulk modulus (Pa); `D1 = 2 / kappa`.
    pub kappa: f64,
    /// Reference density (kg/m^3).
    pub density: f64,
    /// Kelvin-Voigt damping (Pa s).
    pub eta_damp: f64,
    pub lambda_damp: f64,
}

impl MaterialParams {
    pub fn svk(youngs: f64, poisson: f64, density: f64) -> Self {
        MaterialParams {
            model: MaterialModel::Svk,
            youngs,
            poisson,
            c10: 0.0,
            c01: 0.0,
            kappa: 0.0,
            density,
            eta_damp: 0.0,
            lambda_damp: 0.0,
        }
    }

    pub fn mooney_rivlin(c10: f64, c01: f64, kappa: f64, density: f64) -> Self {
        MaterialParams {
            model: MaterialModel::MooneyRivlin,
            youngs: 0.0,
            poisson: 0.0,
            c10,
            c01,
            kappa,
            density,
            eta_damp: 0.0,
            lambda_damp: 0.0,
        }
    }

    /// Accepts the alternate volumetric parameterization `D1 = 2 / kappa`.
    pub fn mooney_rivlin_d1(c10: f64, c01: f64, d1: f64, density: f64) -> Self {
        Self::mooney_rivlin(c10, c01, 2.0 / d1, density)
    }

    pub fn with_damping(mut self, eta: f64, lambda: f64) -> Self {
        self.eta_damp = eta;
        self.lambda_damp = lambda;
        self
    }

    /// Lame constants derived from (E, nu).
    pub fn lame(&self) -> (f64, f64) {
        let e = self.youngs;
        let nu = self.poisson;
        let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
        let mu = e / (2.0 * (1.0 + nu));
        (lambda, mu)
    }

    pub fn has_damping(&self) -> bool {
        self.eta_damp > 0.0 || self.lambda_damp > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        match self.model {
            MaterialModel::Svk => {
                if !(self.youngs > 0.0) {
                    return Err(Error::usage("SVK requires E > 0"));
                }
                if !(self.poisson > -1.0 && self.poisson < 0.5) {
                    return Err(Error::usage("SVK requires -1 < nu < 0.5"));
                }
            }
            MaterialModel::MooneyRivlin => {
                if self.c10 < 0.0 || self.c01 < 0.0 {
                    return Err(Error::usage("Mooney-Rivlin requires C10, C01 >= 0"));
                }
                if !(self.kappa > 0.0) {
                    return Err(Error::usage("Mooney-Rivlin requires kappa > 0"));
                }
            }
        }
        if !(self.density > 0.0) {
            return Err(Error::usage("density must be > 0"));
        }
        if self.eta_damp < 0.0 || self.lambda_damp < 0.0 {
            return Err(Error::usage("damping coefficients must be >= 0"));
        }
        Ok(())
    }
}

/// `F = sum_a x_a (grad_X N_a)^T`.
pub fn deformation_gradient(
    coords: &[Vector3<f64>; T10_NODES],
    ref_grads: &[Vector3<f64>; T10_NODES],
) -> Matrix3<f64> {
    let mut f = Matrix3::zeros();
    for a in 0..T10_NODES {
        for i in 0..3 {
            for j in 0..3 {
                f[(i, j)] += coords[a][i] * ref_grads[a][j];
            }
        }
    }
    f
}

/// Rate of the deformation gradient, assembled from nodal velocities with
/// the same reference gradients.
pub fn deformation_rate(
    velocities: &[Vector3<f64>; T10_NODES],
    ref_grads: &[Vector3<f64>; T10_NODES],
) -> Matrix3<f64> {
    deformation_gradient(velocities, ref_grads)
}

fn double_contract(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            s += a[(i, j)] * b[(i, j)];
        }
    }
    s
}

/// First Piola-Kirchhoff stress for the selected model.
pub fn pk1(f: &Matrix3<f64>, params: &MaterialParams) -> Result<Matrix3<f64>> {
    match params.model {
        MaterialModel::Svk => Ok(pk1_svk(f, params)),
        MaterialModel::MooneyRivlin => pk1_mr(f, params),
    }
}

/// SVK stress: `E = (F^T F - I)/2`, `S = lambda tr(E) I + 2 mu E`,
/// `P = F S`.
pub fn pk1_svk(f: &Matrix3<f64>, params: &MaterialParams) -> Matrix3<f64> {
    let (lambda, mu) = params.lame();
    let e = (f.transpose() * f - Matrix3::identity()) * 0.5;
    let s = Matrix3::identity() * (lambda * e.trace()) + e * (2.0 * mu);
    f * s
}

/// Compressible Mooney-Rivlin stress, the gradient of
/// `W = C10 (I1b - 3) + C01 (I2b - 3) + kappa/2 (J - 1)^2`
/// with isochoric invariants `I1b = J^{-2/3} I1`, `I2b = J^{-4/3} I2`.
pub fn pk1_mr(f: &Matrix3<f64>, params: &MaterialParams) -> Result<Matrix3<f64>> {
    let j = f.determinant();
    if j <= 0.0 {
        return Err(Error::usage(format!(
            "Mooney-Rivlin evaluated at det F = {j:.3e} <= 0"
        )));
    }
    let c = f.transpose() * f;
    let i1 = c.trace();
    let i2 = 0.5 * (i1 * i1 - (c * c).trace());
    let finv_t = f
        .try_inverse()
        .ok_or_else(|| Error::usage("singular F"))?
        .transpose();
    let jm23 = j.powf(-2.0 / 3.0);
    let jm43 = jm23 * jm23;
    let p1 = (f - finv_t * (i1 / 3.0)) * (2.0 * params.c10 * jm23);
    let p2 = (f * i1 - f * c - finv_t * (2.0 * i2 / 3.0)) * (2.0 * params.c01 * jm43);
    let p3 = finv_t * (params.kappa * (j - 1.0) * j);
    Ok(p1 + p2 + p3)
}

/// Kelvin-Voigt viscous stress from the Green-Lagrange strain rate:
/// `Edot = (Fdot^T F + F^T Fdot)/2`,
/// `S_vis = 2 eta Edot + lambda tr(Edot) I`, `P_vis = F S_vis`.
pub fn pk1_viscous(
    f: &Matrix3<f64>,
    fdot: &Matrix3<f64>,
    params: &MaterialParams,
) -> Matrix3<f64> {
    let edot = (fdot.transpose() * f + f.transpose() * fdot) * 0.5;
    let s = edot * (2.0 * params.eta_damp)
        + Matrix3::identity() * (params.lambda_damp * edot.trace());
    f * s
}

/// Strain energy density (J/m^3).
pub fn strain_energy(f: &Matrix3<f64>, params: &MaterialParams) -> Result<f64> {
    match params.model {
        MaterialModel::Svk => {
            let (lambda, mu) = params.lame();
            let e = (f.transpose() * f - Matrix3::identity()) * 0.5;
            Ok(0.5 * lambda * e.trace() * e.trace() + mu * double_contract(&e, &e))
        }
        MaterialModel::MooneyRivlin => {
            let j = f.determinant();
            if j <= 0.0 {
                return Err(Error::usage(format!(
                    "Mooney-Rivlin energy at det F = {j:.3e} <= 0"
                )));
            }
            let c = f.transpose() * f;
            let i1 = c.trace();
            let i2 = 0.5 * (i1 * i1 - (c * c).trace());
            let jm23 = j.powf(-2.0 / 3.0);
            Ok(params.c10 * (jm23 * i1 - 3.0)
                + params.c01 * (jm23 * jm23 * i2 - 3.0)
                + 0.5 * params.kappa * (j - 1.0) * (j - 1.0))
        }
    }
}

/// Fourth-order material tangent `A_iJkL = dP_iJ / dF_kL`, stored dense.
#[derive(Debug, Clone)]
pub struct Tangent(pub [[[[f64; 3]; 3]; 3]; 3]);

impl Tangent {
    pub fn zeros() -> Self {
        Tangent([[[[0.0; 3]; 3]; 3]; 3])
    }

    pub fn at(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.0[i][j][k][l]
    }

    /// Contraction `(A : dF)_iJ = A_iJkL dF_kL`.
    pub fn contract(&self, df: &Matrix3<f64>) -> Matrix3<f64> {
        let mut out = Matrix3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    for l in 0..3 {
                        s += self.0[i][j][k][l] * df[(k, l)];
                    }
                }
                out[(i, j)] = s;
            }
        }
        out
    }
}

/// Tangent for the selected model.
pub fn tangent(f: &Matrix3<f64>, params: &MaterialParams) -> Result<Tangent> {
    match params.model {
        MaterialModel::Svk => Ok(tangent_svk(f, params)),
        MaterialModel::MooneyRivlin => tangent_mr(f, params),
    }
}

/// Closed-form SVK tangent:
/// `A_iJkL = delta_ik S_JL + lambda F_iJ F_kL
///           + mu [ (F F^T)_ik delta_JL + F_iL F_kJ ]`.
pub fn tangent_svk(f: &Matrix3<f64>, params: &MaterialParams) -> Tangent {
    let (lambda, mu) = params.lame();
    let e = (f.transpose() * f - Matrix3::identity()) * 0.5;
    let s = Matrix3::identity() * (lambda * e.trace()) + e * (2.0 * mu);
    let fft = f * f.transpose();
    let mut a = Tangent::zeros();
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    let mut v = lambda * f[(i, j)] * f[(k, l)] + mu * f[(i, l)] * f[(k, j)];
                    if i == k {
                        v += s[(j, l)];
                    }
                    if j == l {
                        v += mu * fft[(i, k)];
                    }
                    a.0[i][j][k][l] = v;
                }
            }
        }
    }
    a
}

/// Mooney-Rivlin tangent assembled from the exact directional derivative
/// `dP(F)[dF]` applied to the nine canonical directions.
pub fn tangent_mr(f: &Matrix3<f64>, params: &MaterialParams) -> Result<Tangent> {
    let j = f.determinant();
    if j <= 0.0 {
        return Err(Error::usage(format!(
            "Mooney-Rivlin tangent at det F = {j:.3e} <= 0"
        )));
    }
    let finv = f.try_inverse().ok_or_else(|| Error::usage("singular F"))?;
    let finv_t = finv.transpose();
    let c = f.transpose() * f;
    let i1 = c.trace();
    let i2 = 0.5 * (i1 * i1 - (c * c).trace());
    let jm23 = j.powf(-2.0 / 3.0);
    let jm43 = jm23 * jm23;
    let fc = f * c;

    let mut a = Tangent::zeros();
    for k in 0..3 {
        for l in 0..3 {
            let mut delta = Matrix3::zeros();
            delta[(k, l)] = 1.0;

            let t = double_contract(&finv_t, &delta); // tr(F^{-1} dF)
            let dfinv_t = -finv_t * delta.transpose() * finv_t;
            let dc = delta.transpose() * f + f.transpose() * delta;
            let di1 = 2.0 * double_contract(f, &delta);
            let di2 = i1 * di1 - 2.0 * double_contract(&fc, &delta);
            let dfc = delta * c + f * dc;

            // deviatoric C10 term
            let djm23 = -(2.0 / 3.0) * jm23 * t;
            let dp1 = (f - finv_t * (i1 / 3.0)) * djm23
                + (delta - dfinv_t * (i1 / 3.0) - finv_t * (di1 / 3.0)) * jm23;

            // deviatoric C01 term
            let djm43 = -(4.0 / 3.0) * jm43 * t;
            let base2 = f * i1 - fc - finv_t * (2.0 * i2 / 3.0);
            let dbase2 = f * di1 + delta * i1
                - dfc
                - finv_t * (2.0 * di2 / 3.0)
                - dfinv_t * (2.0 * i2 / 3.0);
            let dp2 = base2 * djm43 + dbase2 * jm43;

            // volumetric term: P3 = kappa (J^2 - J) F^{-T}
            let dj = j * t;
            let dp3 = finv_t * (params.kappa * (2.0 * j - 1.0) * dj)
                + dfinv_t * (params.kappa * (j * j - j));

            let dp = dp1 * (2.0 * params.c10) + dp2 * (2.0 * params.c01) + dp3;
            for i in 0..3 {
                for jj in 0..3 {
                    a.0[i][jj][k][l] = dp[(i, jj)];
                }
            }
        }
    }
    Ok(a)
}

/// Cauchy von Mises stress `sqrt(3/2 dev(sigma):dev(sigma))` with
/// `sigma = J^{-1} P F^T`.
pub fn cauchy_von_mises(p: &Matrix3<f64>, f: &Matrix3<f64>) -> Result<f64> {
    let j = f.determinant();
    if j <= 0.0 {
        return Err(Error::usage(format!(
            "von Mises evaluated at det F = {j:.3e} <= 0"
        )));
    }
    let sigma = p * f.transpose() / j;
    let dev = sigma - Matrix3::identity() * (sigma.trace() / 3.0);
    Ok((1.5 * double_contract(&dev, &dev)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn svk_test_params() -> MaterialParams {
        MaterialParams::svk(7.0e8, 0.33, 2700.0)
    }

    fn mr_test_params() -> MaterialParams {
        // cantilever acceptance constants
        MaterialParams::mooney_rivlin(7.89e7, 5.26e7, 1.03e9, 2700.0)
    }

    fn random_f(rng: &mut impl Rng) -> Matrix3<f64> {
        loop {
            let f = Matrix3::identity() + Matrix3::from_fn(|_, _| rng.gen_range(-0.35..0.35));
            let d = f.determinant();
            if (0.5..=2.0).contains(&d) {
                return f;
            }
        }
    }

    fn fd_energy_gradient(f: &Matrix3<f64>, params: &MaterialParams) -> Matrix3<f64> {
        let h = 1e-6;
        let mut g = Matrix3::zeros();
        for k in 0..3 {
            for l in 0..3 {
                let mut fp = *f;
                let mut fm = *f;
                fp[(k, l)] += h;
                fm[(k, l)] -= h;
                g[(k, l)] = (strain_energy(&fp, params).unwrap()
                    - strain_energy(&fm, params).unwrap())
                    / (2.0 * h);
            }
        }
        g
    }

    fn fd_pk1_tangent(f: &Matrix3<f64>, params: &MaterialParams) -> Tangent {
        let h = 1e-6;
        let mut a = Tangent::zeros();
        for k in 0..3 {
            for l in 0..3 {
                let mut fp = *f;
                let mut fm = *f;
                fp[(k, l)] += h;
                fm[(k, l)] -= h;
                let dp = (pk1(&fp, params).unwrap() - pk1(&fm, params).unwrap()) / (2.0 * h);
                for i in 0..3 {
                    for j in 0..3 {
                        a.0[i][j][k][l] = dp[(i, j)];
                    }
                }
            }
        }
        a
    }

    fn tangent_rel_err(a: &Tangent, b: &Tangent) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        num += (a.0[i][j][k][l] - b.0[i][j][k][l]).powi(2);
                        den += b.0[i][j][k][l].powi(2);
                    }
                }
            }
        }
        (num / den.max(1e-300)).sqrt()
    }

    #[test]
    fn svk_reference_is_stress_free() {
        let p = pk1_svk(&Matrix3::identity(), &svk_test_params());
        assert!(p.norm() < 1e-12);
    }

    #[test]
    fn svk_uniaxial_closed_form() {
        let params = svk_test_params();
        let (lambda_l, mu) = params.lame();
        let s = 1.23;
        let f = Matrix3::from_diagonal(&Vector3::new(s, 1.0, 1.0));
        let p = pk1_svk(&f, &params);
        let p11 = s * ((lambda_l / 2.0 + mu) * (s * s - 1.0));
        let p22 = lambda_l * (s * s - 1.0) / 2.0;
        assert_relative_eq!(p[(0, 0)], p11, max_relative = 1e-13);
        assert_relative_eq!(p[(1, 1)], p22, max_relative = 1e-13);
        assert_relative_eq!(p[(2, 2)], p22, max_relative = 1e-13);
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_eq!(p[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn mr_reference_is_stress_free() {
        let p = pk1_mr(&Matrix3::identity(), &mr_test_params()).unwrap();
        assert!(p.norm() < 1e-6, "{}", p.norm());
    }

    #[test]
    fn mr_rejects_inverted_state() {
        let f = Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, 1.0));
        assert!(pk1_mr(&f, &mr_test_params()).is_err());
        assert!(strain_energy(&f, &mr_test_params()).is_err());
    }

    #[test]
    fn mr_pure_dilation_matches_energy_gradient() {
        let params = mr_test_params();
        let s = 1.07;
        let f = Matrix3::identity() * s;
        let p = pk1_mr(&f, &params).unwrap();
        let fd = fd_energy_gradient(&f, &params);
        assert!((p - fd).norm() / fd.norm() < 1e-6);
        // deviatoric part vanishes: P is isotropic
        assert_relative_eq!(p[(0, 0)], p[(1, 1)], max_relative = 1e-10);
        assert!(p[(0, 1)].abs() < 1e-3 * p[(0, 0)].abs().max(1.0));
    }

    #[test]
    fn gradient_consistency_both_models() {
        // pk1 = dW/dF against a central difference of the energy.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for params in [svk_test_params(), mr_test_params()] {
            for _ in 0..100 {
                let f = random_f(&mut rng);
                let p = pk1(&f, &params).unwrap();
                let fd = fd_energy_gradient(&f, &params);
                let err = (p - fd).norm() / fd.norm().max(1e-12);
                assert!(err <= 1e-5, "{:?}: rel err {err}", params.model);
            }
        }
    }

    #[test]
    fn tangent_consistency_both_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for params in [svk_test_params(), mr_test_params()] {
            for _ in 0..100 {
                let f = random_f(&mut rng);
                let a = tangent(&f, &params).unwrap();
                let fd = fd_pk1_tangent(&f, &params);
                let err = tangent_rel_err(&a, &fd);
                assert!(err <= 1e-4, "{:?}: rel err {err}", params.model);
            }
        }
    }

    #[test]
    fn tangent_directional_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let params = svk_test_params();
        let f = random_f(&mut rng);
        let a = tangent(&f, &params).unwrap();
        let df = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let eps = 1e-6;
        let p_plus = pk1(&(f + df * eps), &params).unwrap();
        let p_minus = pk1(&(f - df * eps), &params).unwrap();
        let fd = (p_plus - p_minus) / (2.0 * eps);
        let an = a.contract(&df);
        assert!((an - fd).norm() / fd.norm() < 1e-6);
    }

    #[test]
    fn tangent_major_symmetry_at_identity() {
        let a = tangent_svk(&Matrix3::identity(), &svk_test_params());
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        assert_relative_eq!(a.at(i, j, k, l), a.at(k, l, i, j), epsilon = 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn viscous_examples_and_dissipation() {
        let params = svk_test_params().with_damping(40.0, 15.0);
        assert_eq!(
            pk1_viscous(&Matrix3::identity(), &Matrix3::zeros(), &params),
            Matrix3::zeros()
        );

        let rate = 0.7;
        let fdot = Matrix3::from_diagonal(&Vector3::new(rate, 0.0, 0.0));
        let p = pk1_viscous(&Matrix3::identity(), &fdot, &params);
        let (eta, lam) = (params.eta_damp, params.lambda_damp);
        assert_relative_eq!(p[(0, 0)], 2.0 * eta * rate + lam * rate, max_relative = 1e-14);
        assert_relative_eq!(p[(1, 1)], lam * rate, max_relative = 1e-14);
        assert_relative_eq!(p[(2, 2)], lam * rate, max_relative = 1e-14);

        // dissipation P_vis : Fdot >= 0
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        for _ in 0..1000 {
            let f = random_f(&mut rng);
            let fdot = Matrix3::from_fn(|_, _| rng.gen_range(-2.0..2.0));
            let p = pk1_viscous(&f, &fdot, &params);
            assert!(double_contract(&p, &fdot) >= -1e-10);
        }
    }

    #[test]
    fn energy_examples() {
        for params in [svk_test_params(), mr_test_params()] {
            assert!(strain_energy(&Matrix3::identity(), &params).unwrap().abs() < 1e-9);
        }
        // SVK uniaxial closed form
        let params = svk_test_params();
        let (lambda_l, mu) = params.lame();
        let s = 1.4;
        let f = Matrix3::from_diagonal(&Vector3::new(s, 1.0, 1.0));
        let e11 = (s * s - 1.0) / 2.0;
        let expected = 0.5 * lambda_l * e11 * e11 + mu * e11 * e11;
        assert_relative_eq!(
            strain_energy(&f, &params).unwrap(),
            expected,
            max_relative = 1e-13
        );
        // nonnegative near the reference
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        for params in [svk_test_params(), mr_test_params()] {
            for _ in 0..200 {
                let f =
                    Matrix3::identity() + Matrix3::from_fn(|_, _| rng.gen_range(-0.05..0.05));
                assert!(strain_energy(&f, &params).unwrap() >= -1e-8);
            }
        }
    }

    #[test]
    fn objectivity_spot_check() {
        use nalgebra::Rotation3;
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        for params in [svk_test_params(), mr_test_params()] {
            for _ in 0..20 {
                let f = random_f(&mut rng);
                let axis = nalgebra::Unit::new_normalize(Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ));
                let r = Rotation3::from_axis_angle(&axis, rng.gen_range(0.0..6.28));
                let w1 = strain_energy(&f, &params).unwrap();
                let w2 = strain_energy(&(r.matrix() * f), &params).unwrap();
                assert_relative_eq!(w1, w2, max_relative = 1e-10, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn von_mises_examples() {
        let f = Matrix3::identity();
        assert_eq!(cauchy_von_mises(&Matrix3::zeros(), &f).unwrap(), 0.0);
        // hydrostatic: deviator vanishes (sigma = P at F = I)
        let p = Matrix3::identity() * 3.3e5;
        assert!(cauchy_von_mises(&p, &f).unwrap() < 1e-9);
        // uniaxial sigma = diag(s, 0, 0) -> |s|
        let s = -2.5e4;
        let p = Matrix3::from_diagonal(&Vector3::new(s, 0.0, 0.0));
        assert_relative_eq!(cauchy_von_mises(&p, &f).unwrap(), s.abs(), max_relative = 1e-12);
    }

    #[test]
    fn deformation_gradient_examples() {
        use crate::meshgen;
        use crate::precompute::{precompute_elements, PrecompConfig};
        let mesh = meshgen::single_tet();
        let pre = precompute_elements(&mesh, &[1.0], PrecompConfig::default()).unwrap();
        let el = &mesh.elements[0];
        let coords: [Vector3<f64>; T10_NODES] =
            std::array::from_fn(|a| mesh.node_positions_ref[el[a]]);
        for q in 0..pre.n_qp() {
            let grads = &pre.ref_grads[pre.slot(0, q)];
            let f = deformation_gradient(&coords, grads);
            assert!((f - Matrix3::identity()).norm() < 1e-13, "reference -> I");
            let doubled: [Vector3<f64>; T10_NODES] = std::array::from_fn(|a| coords[a] * 2.0);
            let f2 = deformation_gradient(&doubled, grads);
            assert!((f2 - Matrix3::identity() * 2.0).norm() < 1e-12, "scaling -> 2I");
        }
    }

    #[test]
    fn deformation_gradient_matches_fd_of_map() {
        // F against finite differences of the interpolated map x(X) on an
        // affine element (xi(X) inverted through the corner map).
        use crate::meshgen;
        use crate::precompute::{t10_shape, t10_shape_grad};
        let mut rng = ChaCha8Rng::seed_from_u64(48);
        let mesh = meshgen::single_tet();
        let el = &mesh.elements[0];
        let coords: [Vector3<f64>; T10_NODES] = std::array::from_fn(|a| {
            mesh.node_positions_ref[el[a]]
                + Vector3::new(
                    rng.gen_range(-0.1..0.1),
                    rng.gen_range(-0.1..0.1),
                    rng.gen_range(-0.1..0.1),
                )
        });

        // corner map X(xi) = X0 + J xi, inverted for xi(X)
        let x0 = mesh.node_positions_ref[el[0]];
        let mut jac = Matrix3::zeros();
        for (c, col) in [(1usize, 0usize), (2, 1), (3, 2)] {
            let d = mesh.node_positions_ref[el[c]] - x0;
            for r in 0..3 {
                jac[(r, col)] = d[r];
            }
        }
        let jinv = jac.try_inverse().unwrap();
        let interp = |xpos: Vector3<f64>| -> Vector3<f64> {
            let xi = jinv * (xpos - x0);
            let n = t10_shape(&xi);
            let mut out = Vector3::zeros();
            for a in 0..T10_NODES {
                out += coords[a] * n[a];
            }
            out
        };

        let xi_q = Vector3::new(0.25, 0.25, 0.25);
        let xq = x0 + jac * xi_q;
        let grads = t10_shape_grad(&xi_q);
        let jinv_t = jinv.transpose();
        let ref_grads: [Vector3<f64>; T10_NODES] = std::array::from_fn(|a| jinv_t * grads[a]);
        let f = deformation_gradient(&coords, &ref_grads);

        let h = 1e-6;
        for d in 0..3 {
            let mut xp = xq;
            let mut xm = xq;
            xp[d] += h;
            xm[d] -= h;
            let col = (interp(xp) - interp(xm)) / (2.0 * h);
            for r in 0..3 {
                assert!((col[r] - f[(r, d)]).abs() < 1e-7, "F[{r}{d}]");
            }
        }
    }
}
