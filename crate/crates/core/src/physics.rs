//! Soil parameters for one-dimensional coupled pore-air/pore-water consolidation.
//!
//! The governing system is written in matrix form as `M·u_t = D·u_zz` with
//! `u = (u_a, u_w)`, `M = [[1, Ca], [Cw, 1]]` and `D = diag(cva, cvw)`.
//! Pressures are in kPa, lengths in m, time in s.

use serde::{Deserialize, Serialize};

use crate::error::PhysicsError;

/// Gravitational acceleration used in the gas-law factor of `cva` (m/s²).
pub const GRAVITY: f64 = 9.81;

/// Determinant magnitude below which the coupling matrix is treated as singular.
pub const SINGULAR_TOL: f64 = 1e-12;

/// Constitutive constants from which the four diffusion coefficients are derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstitutiveParameters {
    /// Air volume change w.r.t. net normal stress (1/kPa).
    pub m1a: f64,
    /// Air volume change w.r.t. matric suction (1/kPa).
    pub m2a: f64,
    /// Water volume change w.r.t. net normal stress (1/kPa).
    pub m1w: f64,
    /// Water volume change w.r.t. matric suction (1/kPa).
    pub m2w: f64,
    /// Porosity.
    pub n: f64,
    /// Degree of saturation as a fraction in [0, 1].
    pub sr: f64,
    /// Air permeability (m/s).
    pub ka: f64,
    /// Water permeability (m/s).
    pub kw: f64,
    /// Initial excess pore-air pressure (kPa).
    pub ua0: f64,
    /// Initial excess pore-water pressure (kPa).
    pub uw0: f64,
    /// Atmospheric pressure (kPa).
    pub uatm: f64,
    /// Universal gas constant (J/mol/K).
    pub r: f64,
    /// Absolute temperature (K).
    pub temperature: f64,
    /// Molecular mass of air (kg/mol).
    pub molar_mass: f64,
    /// Unit weight of water (kN/m³).
    pub gammaw: f64,
}

impl ConstitutiveParameters {
    pub fn validate(&self) -> Result<(), PhysicsError> {
        let all = [
            ("m1a", self.m1a),
            ("m2a", self.m2a),
            ("m1w", self.m1w),
            ("m2w", self.m2w),
            ("n", self.n),
            ("sr", self.sr),
            ("ka", self.ka),
            ("kw", self.kw),
            ("ua0", self.ua0),
            ("uw0", self.uw0),
            ("uatm", self.uatm),
            ("r", self.r),
            ("temperature", self.temperature),
            ("molar_mass", self.molar_mass),
            ("gammaw", self.gammaw),
        ];
        for (name, v) in all {
            if !v.is_finite() {
                return Err(PhysicsError::Parameter(format!("{name} is not finite")));
            }
        }
        if !(self.n > 0.0 && self.n < 1.0) {
            return Err(PhysicsError::Parameter(format!("porosity n = {} outside (0, 1)", self.n)));
        }
        if !(0.0..=1.0).contains(&self.sr) {
            return Err(PhysicsError::Parameter(format!("saturation sr = {} outside [0, 1]", self.sr)));
        }
        for (name, v) in [("ka", self.ka), ("kw", self.kw), ("gammaw", self.gammaw)] {
            if v <= 0.0 {
                return Err(PhysicsError::Parameter(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("m2a", self.m2a), ("m2w", self.m2w)] {
            if v == 0.0 {
                return Err(PhysicsError::Parameter(format!("{name} must be nonzero")));
            }
        }
        if self.ua0 + self.uatm <= 0.0 {
            return Err(PhysicsError::Parameter("ua0 + uatm must be positive".into()));
        }
        Ok(())
    }
}

/// Layer geometry, initial pressures and the four coupled-diffusion coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoilModel {
    /// Layer thickness (m).
    pub h: f64,
    /// Interactive constant of the air phase.
    pub ca: f64,
    /// Interactive constant of the water phase.
    pub cw: f64,
    /// Air-phase consolidation coefficient (m²/s).
    pub cva: f64,
    /// Water-phase consolidation coefficient (m²/s).
    pub cvw: f64,
    /// Initial excess pore-air pressure (kPa).
    pub ua0: f64,
    /// Initial excess pore-water pressure (kPa).
    pub uw0: f64,
}

impl SoilModel {
    /// Builds a model directly from the four coefficients and checks its invariants.
    pub fn new(h: f64, ca: f64, cw: f64, cva: f64, cvw: f64, ua0: f64, uw0: f64) -> Result<Self, PhysicsError> {
        let sm = Self { h, ca, cw, cva, cvw, ua0, uw0 };
        sm.validate()?;
        Ok(sm)
    }

    /// The reference soil: 10 m layer, `k_a = k_w = 1e-10` m/s, 20/40 kPa initial pressures.
    ///
    /// The interactive constants are negative in the `M·u_t = D·u_zz` convention:
    /// pore-water pressure drops while the air phase drains.
    pub fn reference() -> Self {
        Self { h: 10.0, ca: -0.0882, cw: -0.75, cva: 6.3e-6, cvw: 6.3e-8, ua0: 20.0, uw0: 40.0 }
    }

    pub fn validate(&self) -> Result<(), PhysicsError> {
        for (name, v) in [
            ("h", self.h),
            ("ca", self.ca),
            ("cw", self.cw),
            ("cva", self.cva),
            ("cvw", self.cvw),
            ("ua0", self.ua0),
            ("uw0", self.uw0),
        ] {
            if !v.is_finite() {
                return Err(PhysicsError::Parameter(format!("{name} is not finite")));
            }
        }
        if self.h <= 0.0 {
            return Err(PhysicsError::Parameter(format!("thickness h must be positive, got {}", self.h)));
        }
        if self.cva == 0.0 {
            return Err(PhysicsError::Parameter("cva must be nonzero".into()));
        }
        if self.cvw == 0.0 {
            return Err(PhysicsError::Parameter("cvw must be nonzero".into()));
        }
        if self.ua0 < 0.0 || self.uw0 < 0.0 {
            return Err(PhysicsError::Parameter("initial pressures must be nonnegative".into()));
        }
        if (1.0 - self.ca * self.cw).abs() < SINGULAR_TOL {
            return Err(PhysicsError::SingularCoupling { determinant: 1.0 - self.ca * self.cw });
        }
        Ok(())
    }

    /// Returns a copy with `cva` scaled so that the air/water permeability ratio
    /// becomes `ratio`, assuming this model was built with `k_a/k_w = 1`.
    pub fn with_permeability_ratio(&self, ratio: f64) -> Self {
        Self { cva: self.cva * ratio, ..*self }
    }

    /// `M⁻¹·D` as a row-major 2×2 matrix.
    pub fn diffusion_matrix(&self) -> [[f64; 2]; 2] {
        let det = 1.0 - self.ca * self.cw;
        [
            [self.cva / det, -self.ca * self.cvw / det],
            [-self.cw * self.cva / det, self.cvw / det],
        ]
    }
}

/// Outcome of checking that the coupled system is a well-posed diffusion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WellPosednessReport {
    /// `1 - Ca·Cw`.
    pub determinant: f64,
    /// Eigenvalues of `M⁻¹·D`, ascending by real part. Complex pairs are reported
    /// as `(re, ±im)` with `eigenvalues_imag` holding the imaginary magnitude.
    pub eigenvalues: [f64; 2],
    pub eigenvalues_imag: f64,
    pub dissipative: bool,
}

/// Derives `(Ca, Cw, cva, cvw)` from constitutive constants.
pub fn derive_coefficients(cp: &ConstitutiveParameters, h: f64) -> Result<SoilModel, PhysicsError> {
    cp.validate()?;
    let abs_air = cp.ua0 + cp.uatm;
    let air_ratio = cp.m1a / cp.m2a - 1.0;
    let gas_term = (1.0 - cp.sr) * cp.n / (cp.m2a * abs_air);
    let ca_denominator = air_ratio - gas_term;
    if ca_denominator.abs() <= 1e-12 * (air_ratio.abs() + gas_term.abs()) || !ca_denominator.is_finite() {
        return Err(PhysicsError::Parameter(
            "Ca denominator (m1a/m2a - 1) - (1 - sr)·n/(m2a·(ua0 + uatm)) is zero".into(),
        ));
    }
    let ca = 1.0 / ca_denominator;
    let cw = cp.m1w / cp.m2w - 1.0;
    let cvw = cp.kw / (cp.m2w * cp.gammaw);

    if cp.molar_mass == 0.0 {
        return Err(PhysicsError::Parameter("molar_mass must be nonzero".into()));
    }
    let gas_factor = cp.ka * cp.r * cp.temperature / (GRAVITY * cp.molar_mass);
    let cva_denominator = cp.m2a * abs_air * ca_denominator;
    if !cva_denominator.is_finite() {
        return Err(PhysicsError::Parameter(
            "cva denominator m2a·(ua0 + uatm)·(m1a/m2a - 1) - (1 - sr)·n is not finite".into(),
        ));
    }
    let cva = gas_factor / cva_denominator;
    SoilModel::new(h, ca, cw, cva, cvw, cp.ua0, cp.uw0)
}

/// Determinant, eigenvalues of `M⁻¹·D` and the dissipativity flag.
pub fn validate_coupling(sm: &SoilModel) -> Result<WellPosednessReport, PhysicsError> {
    let determinant = 1.0 - sm.ca * sm.cw;
    if determinant.abs() < SINGULAR_TOL {
        return Err(PhysicsError::SingularCoupling { determinant });
    }
    let a = sm.diffusion_matrix();
    let trace = a[0][0] + a[1][1];
    let det_a = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let disc = 0.25 * trace * trace - det_a;
    let (eigenvalues, imag) = if disc >= 0.0 {
        let root = disc.sqrt();
        // Citardauq-style split avoids cancellation in the smaller root.
        let big = 0.5 * trace + root.copysign(trace);
        let small = if big != 0.0 { det_a / big } else { 0.5 * trace - root };
        let (lo, hi) = if big < small { (big, small) } else { (small, big) };
        ([lo, hi], 0.0)
    } else {
        ([0.5 * trace, 0.5 * trace], (-disc).sqrt())
    };
    let dissipative = eigenvalues[0] > 0.0 && eigenvalues[1] > 0.0;
    Ok(WellPosednessReport { determinant, eigenvalues, eigenvalues_imag: imag, dissipative })
}

/// Largest power of ten not exceeding `x` (exact for decades).
pub(crate) fn floor_decade(x: f64) -> f64 {
    let mut k = x.log10().floor() as i32;
    if 10f64.powi(k + 1) <= x {
        k += 1;
    }
    if 10f64.powi(k) > x {
        k -= 1;
    }
    10f64.powi(k)
}

/// Air-phase dissipation time `H²/cva`, floored to its decade.
pub fn characteristic_air_time(sm: &SoilModel) -> Result<f64, PhysicsError> {
    if !(sm.cva > 0.0) {
        return Err(PhysicsError::Parameter(format!("cva must be positive, got {}", sm.cva)));
    }
    Ok(floor_decade(sm.h * sm.h / sm.cva))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn constitutive() -> ConstitutiveParameters {
        ConstitutiveParameters {
            m1a: 2.0584e-3,
            m2a: 1.0e-4,
            m1w: 2.835e-4,
            m2w: 1.62e-4,
            n: 0.5,
            sr: 0.8,
            ka: 1e-10,
            kw: 1e-10,
            ua0: 20.0,
            uw0: 40.0,
            uatm: 101.3,
            r: 8.314,
            temperature: 293.16,
            molar_mass: 0.029,
            gammaw: 9.8,
        }
    }

    #[test]
    fn cw_vanishes_for_equal_water_coefficients() {
        let cp = ConstitutiveParameters { m1w: 3e-4, m2w: 3e-4, ..constitutive() };
        let sm = derive_coefficients(&cp, 10.0).unwrap();
        assert_eq!(sm.cw, 0.0);
    }

    #[test]
    fn cw_and_cvw_match_reference_table() {
        let cp = constitutive();
        let sm = derive_coefficients(&cp, 10.0).unwrap();
        assert_relative_eq!(sm.cw, 0.75, epsilon = 1e-12);
        // 1e-10 / (1.62e-4 * 9.8) = 6.2988e-8
        assert_relative_eq!(sm.cvw, 6.3e-8, max_relative = 0.01);
    }

    #[test]
    fn constitutive_fixture_reproduces_reference_coefficients() {
        let sm = derive_coefficients(&constitutive(), 10.0).unwrap();
        let reference = SoilModel::reference();
        // The reference model carries the couplings with negative sign.
        assert_relative_eq!(sm.ca, -reference.ca, max_relative = 0.01);
        assert_relative_eq!(sm.cva, reference.cva, max_relative = 0.02);
    }

    #[test]
    fn cva_is_consistent_with_ca() {
        // cva = (ka R T / g M) · Ca / (m2a (ua0 + uatm))
        let cp = constitutive();
        let sm = derive_coefficients(&cp, 10.0).unwrap();
        let expected = cp.ka * cp.r * cp.temperature / (GRAVITY * cp.molar_mass) * sm.ca
            / (cp.m2a * (cp.ua0 + cp.uatm));
        assert_relative_eq!(sm.cva, expected, max_relative = 1e-12);
    }

    #[test]
    fn zero_m2w_is_named() {
        let cp = ConstitutiveParameters { m2w: 0.0, ..constitutive() };
        let err = derive_coefficients(&cp, 10.0).unwrap_err();
        assert!(err.to_string().contains("m2w"), "{err}");
    }

    #[test]
    fn degenerate_ca_denominator_is_reported() {
        // m1a/m2a - 1 = (1 - sr) n / (m2a (ua0 + uatm))
        let base = constitutive();
        let target = (1.0 - base.sr) * base.n / (base.m2a * (base.ua0 + base.uatm));
        let cp = ConstitutiveParameters { m1a: (target + 1.0) * base.m2a, ..base };
        let err = derive_coefficients(&cp, 10.0).unwrap_err();
        assert!(err.to_string().contains("Ca denominator"), "{err}");
    }

    #[test]
    fn reference_coupling_report() {
        let sm = SoilModel::reference();
        let rep = validate_coupling(&sm).unwrap();
        assert_relative_eq!(rep.determinant, 0.93385, epsilon = 1e-12);
        assert!(rep.dissipative);
        // Independent check: eigenvalues satisfy det(M⁻¹D - λI) = 0.
        let a = sm.diffusion_matrix();
        for lam in rep.eigenvalues {
            let char_poly = (a[0][0] - lam) * (a[1][1] - lam) - a[0][1] * a[1][0];
            assert!(char_poly.abs() < 1e-22, "{char_poly}");
        }
        let sum: f64 = rep.eigenvalues.iter().sum();
        assert_relative_eq!(sum, (sm.cva + sm.cvw) / 0.93385, max_relative = 1e-12);
    }

    #[test]
    fn singular_coupling_is_rejected() {
        let sm = SoilModel { ca: 2.0, cw: 0.5, ..SoilModel::reference() };
        assert!(matches!(validate_coupling(&sm), Err(PhysicsError::SingularCoupling { .. })));
        assert!(SoilModel::new(10.0, 2.0, 0.5, 1e-6, 1e-8, 1.0, 1.0).is_err());
    }

    #[test]
    fn decoupled_eigenvalues_are_diffusivities() {
        let sm = SoilModel { ca: 0.0, cw: 0.0, cva: 3e-6, cvw: 2e-8, ..SoilModel::reference() };
        let rep = validate_coupling(&sm).unwrap();
        assert_relative_eq!(rep.eigenvalues[0], 2e-8, max_relative = 1e-14);
        assert_relative_eq!(rep.eigenvalues[1], 3e-6, max_relative = 1e-14);
        assert!(rep.dissipative);
    }

    #[test]
    fn characteristic_time_examples() {
        assert_eq!(characteristic_air_time(&SoilModel::reference()).unwrap(), 1e7);
        let unit = SoilModel { h: 1.0, cva: 1.0, ..SoilModel::reference() };
        assert_eq!(characteristic_air_time(&unit).unwrap(), 1.0);
        let exact = SoilModel { h: 10.0, cva: 1e-4, ..SoilModel::reference() };
        assert_eq!(characteristic_air_time(&exact).unwrap(), 1e6);
        let negative = SoilModel { cva: -1e-6, ..SoilModel::reference() };
        assert!(characteristic_air_time(&negative).is_err());
    }

    proptest! {
        #[test]
        fn permeability_scales_coefficients_linearly(factor in 0.1f64..10.0) {
            let cp = constitutive();
            let base = derive_coefficients(&cp, 10.0).unwrap();
            let doubled = derive_coefficients(&ConstitutiveParameters { kw: 2.0 * cp.kw, ka: factor * cp.ka, ..cp }, 10.0).unwrap();
            prop_assert_eq!(doubled.cvw, 2.0 * base.cvw);
            prop_assert!((doubled.cva / base.cva - factor).abs() < 1e-12 * factor);
        }

        #[test]
        fn subunit_coupling_is_dissipative(ca in -3.0f64..3.0, cw in -3.0f64..3.0,
                                           lcva in -9.0f64..-3.0, lcvw in -11.0f64..-5.0) {
            prop_assume!(ca * cw < 1.0 - 1e-6);
            let sm = SoilModel { ca, cw, cva: 10f64.powf(lcva), cvw: 10f64.powf(lcvw), ..SoilModel::reference() };
            let rep = validate_coupling(&sm).unwrap();
            prop_assert!(rep.dissipative, "{:?}", rep);
        }

        #[test]
        fn characteristic_time_is_a_decade_bracket(h in 0.1f64..100.0, lcva in -10.0f64..0.0) {
            let sm = SoilModel { h, cva: 10f64.powf(lcva), ..SoilModel::reference() };
            let ts = characteristic_air_time(&sm).unwrap();
            let raw = h * h / sm.cva;
            prop_assert!(ts <= raw && raw < 10.0 * ts);
            let k = ts.log10().round() as i32;
            prop_assert_eq!(ts, 10f64.powi(k));
        }
    }
}
