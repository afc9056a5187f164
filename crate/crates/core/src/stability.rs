//! Innovation, energy, scale calibration, semantic drift and the runtime
//! stability predicate. Everything here is a pure function.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::UnitVector;

pub const DEFAULT_EPSILON: f64 = 1e-6;

/// One monitored step: innovation and its normalized energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnovationSample {
    pub t: usize,
    pub nu: f64,
    pub energy: f64,
}

/// How the normalizing scale is estimated from nominal innovations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleForm {
    /// Population variance plus the stabilizer.
    #[default]
    Variance,
    /// Raw second moment plus the stabilizer.
    SecondMoment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleCalibration {
    pub mu_nu: f64,
    pub scale: f64,
    pub epsilon: f64,
    pub form: ScaleForm,
    /// Nominal innovations the scale was fitted on.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<f64>,
}

impl ScaleCalibration {
    /// A calibration with a known scale and no stored sample.
    pub fn fixed(scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::contract(format!("scale must be positive, got {scale}")));
        }
        Ok(ScaleCalibration {
            mu_nu: 0.0,
            scale,
            epsilon: scale.min(DEFAULT_EPSILON),
            form: ScaleForm::Variance,
            samples: Vec::new(),
        })
    }

    /// True when the nominal sample had no spread at all.
    pub fn is_degenerate(&self) -> bool {
        self.scale - self.epsilon <= 0.0
    }

    /// Refit from the stored sample.
    pub fn refit(&self) -> Result<Self> {
        calibrate_scale_with(&self.samples, self.epsilon, self.form)
    }
}

/// `1 - cos(pred, realized)`, in [0, 2].
pub fn cosine_distance_innovation(pred: &UnitVector, realized: &UnitVector) -> Result<f64> {
    Ok((1.0 - pred.cosine(realized)?).clamp(0.0, 2.0))
}

/// `nu^2 / S`.
pub fn innovation_energy(nu: f64, cal: &ScaleCalibration) -> Result<f64> {
    if cal.scale.is_nan() || cal.scale <= 0.0 {
        return Err(Error::contract(format!("scale must be positive, got {}", cal.scale)));
    }
    Ok(nu * nu / cal.scale)
}

/// Mean and population variance (plus `epsilon`) of nominal innovations.
pub fn calibrate_scale(nominal_nus: &[f64], epsilon: f64) -> Result<ScaleCalibration> {
    calibrate_scale_with(nominal_nus, epsilon, ScaleForm::Variance)
}

pub fn calibrate_scale_with(
    nominal_nus: &[f64],
    epsilon: f64,
    form: ScaleForm,
) -> Result<ScaleCalibration> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::contract(format!("epsilon must be positive, got {epsilon}")));
    }
    if nominal_nus.len() < 2 {
        return Err(Error::Calibration(format!(
            "need at least 2 nominal innovations, got {}",
            nominal_nus.len()
        )));
    }
    let n = nominal_nus.len() as f64;
    let mu_nu = nominal_nus.iter().sum::<f64>() / n;
    let spread = match form {
        ScaleForm::Variance => {
            nominal_nus.iter().map(|v| (v - mu_nu).powi(2)).sum::<f64>() / n
        }
        ScaleForm::SecondMoment => nominal_nus.iter().map(|v| v * v).sum::<f64>() / n,
    };
    Ok(ScaleCalibration {
        mu_nu,
        scale: spread + epsilon,
        epsilon,
        form,
        samples: nominal_nus.to_vec(),
    })
}

/// `1 - cos(x_t, x_0)`, in [0, 2].
pub fn semantic_drift(x_t: &UnitVector, x_0: &UnitVector) -> Result<f64> {
    Ok((1.0 - x_t.cosine(x_0)?).clamp(0.0, 2.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityBounds {
    pub energy_bound: f64,
    pub drift_bound: f64,
    pub delta: f64,
}

impl StabilityBounds {
    pub fn new(energy_bound: f64, drift_bound: f64, delta: f64) -> Result<Self> {
        if energy_bound.is_nan() || energy_bound <= 0.0 {
            return Err(Error::validation("energy_bound", "must be positive"));
        }
        if drift_bound.is_nan() || drift_bound <= 0.0 {
            return Err(Error::validation("drift_bound", "must be positive"));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::validation("delta", "must lie in (0, 1)"));
        }
        Ok(StabilityBounds {
            energy_bound,
            drift_bound,
            delta,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub stable: bool,
    pub energy_exceedance: f64,
    pub drift_exceedance: f64,
}

pub fn check_runtime_stability(
    energies: &[f64],
    drift_scores: &[f64],
    bounds: &StabilityBounds,
) -> Result<StabilityVerdict> {
    if energies.is_empty() || drift_scores.is_empty() {
        return Err(Error::Verdict("energy and drift sequences must be nonempty".into()));
    }
    let frac = |xs: &[f64], bound: f64| {
        xs.iter().filter(|&&v| v > bound).count() as f64 / xs.len() as f64
    };
    let energy_exceedance = frac(energies, bounds.energy_bound);
    let drift_exceedance = frac(drift_scores, bounds.drift_bound);
    Ok(StabilityVerdict {
        stable: energy_exceedance <= bounds.delta && drift_exceedance <= bounds.delta,
        energy_exceedance,
        drift_exceedance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn e(dim: usize, i: usize) -> UnitVector {
        UnitVector::basis(dim, i).unwrap()
    }

    #[test]
    fn innovation_special_cases() {
        let v = UnitVector::normalize(vec![0.3, -0.2, 0.9]).unwrap();
        assert_eq!(cosine_distance_innovation(&v, &v).unwrap(), 0.0);
        assert_eq!(cosine_distance_innovation(&e(3, 0), &e(3, 1)).unwrap(), 1.0);
        assert_eq!(
            cosine_distance_innovation(&e(3, 0), &e(3, 0).negated()).unwrap(),
            2.0
        );
        assert!(matches!(
            cosine_distance_innovation(&e(3, 0), &e(2, 0)),
            Err(Error::DimensionMismatch { left: 3, right: 2 })
        ));
    }

    #[test]
    fn energy_examples() {
        let cal = ScaleCalibration::fixed(0.25).unwrap();
        assert_eq!(innovation_energy(0.0, &cal).unwrap(), 0.0);
        assert_eq!(innovation_energy(0.5, &cal).unwrap(), 1.0);
        let mut bad = cal.clone();
        bad.scale = 0.0;
        assert!(innovation_energy(0.5, &bad).is_err());
    }

    #[test]
    fn scale_examples() {
        let c = calibrate_scale(&[0.1, 0.1, 0.1], 1e-6).unwrap();
        assert!((c.mu_nu - 0.1).abs() < 1e-15);
        assert!((c.scale - 1e-6).abs() < 1e-15);
        assert!(c.is_degenerate());

        let c = calibrate_scale(&[0.0, 2.0], 1e-6).unwrap();
        assert_eq!(c.mu_nu, 1.0);
        assert_eq!(c.scale, 1.0 + 1e-6);

        assert!(matches!(calibrate_scale(&[], 1e-6), Err(Error::Calibration(_))));
        assert!(matches!(calibrate_scale(&[0.3], 1e-6), Err(Error::Calibration(_))));
        assert!(matches!(calibrate_scale(&[0.3, 0.4], 0.0), Err(Error::Contract(_))));
    }

    #[test]
    fn second_moment_form() {
        let c = calibrate_scale_with(&[1.0, 3.0], 1e-6, ScaleForm::SecondMoment).unwrap();
        assert_eq!(c.scale, 5.0 + 1e-6);
        assert_eq!(c.refit().unwrap(), c);
    }

    #[test]
    fn refit_reproduces_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<f64> = (0..500).map(|_| rng.random::<f64>()).collect();
        let c = calibrate_scale(&xs, 1e-6).unwrap();
        assert_eq!(c.refit().unwrap().scale, c.scale);
    }

    #[test]
    fn drift_special_cases() {
        let x0 = e(4, 2);
        assert_eq!(semantic_drift(&x0, &x0).unwrap(), 0.0);
        assert_eq!(semantic_drift(&x0.negated(), &x0).unwrap(), 2.0);
        assert_eq!(semantic_drift(&e(4, 1), &x0).unwrap(), 1.0);
    }

    #[test]
    fn verdict_examples() {
        let b = StabilityBounds::new(1.0, 1.0, 0.05).unwrap();
        let v = check_runtime_stability(&[0.1, 0.5], &[0.2], &b).unwrap();
        assert!(v.stable);
        assert_eq!((v.energy_exceedance, v.drift_exceedance), (0.0, 0.0));

        let b = StabilityBounds::new(1.0, 1.0, 0.4).unwrap();
        let energies = [2.0, 0.5, 3.0, 0.1, 4.0, 0.2, 5.0, 0.3, 6.0, 0.9];
        let v = check_runtime_stability(&energies, &[0.5], &b).unwrap();
        assert!(!v.stable);
        assert_eq!(v.energy_exceedance, 0.5);

        assert!(matches!(
            check_runtime_stability(&[], &[1.0], &b),
            Err(Error::Verdict(_))
        ));
        assert!(StabilityBounds::new(1.0, 1.0, 1.0).is_err());
    }

    fn unit(dim: usize) -> impl Strategy<Value = UnitVector> {
        prop::collection::vec(-1.0f64..1.0, dim)
            .prop_filter("nonzero", |v| v.iter().any(|c| c.abs() > 1e-3))
            .prop_map(|v| UnitVector::normalize(v).unwrap())
    }

    fn pair() -> impl Strategy<Value = (UnitVector, UnitVector)> {
        (2usize..12).prop_flat_map(|d| (unit(d), unit(d)))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn innovation_symmetric_and_bounded((a, b) in pair()) {
            let ab = cosine_distance_innovation(&a, &b).unwrap();
            let ba = cosine_distance_innovation(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=2.0).contains(&ab));
        }
    }

    proptest! {
        #[test]
        fn scale_is_translation_covariant(
            xs in prop::collection::vec(0.0f64..2.0, 2..200),
            shift in -1.0f64..1.0,
        ) {
            let a = calibrate_scale(&xs, 1e-6).unwrap();
            let shifted: Vec<f64> = xs.iter().map(|x| x + shift).collect();
            let b = calibrate_scale(&shifted, 1e-6).unwrap();
            prop_assert!((a.scale - b.scale).abs() < 1e-12);
            prop_assert!((b.mu_nu - a.mu_nu - shift).abs() < 1e-12);
        }

        #[test]
        fn energy_quadruples_when_nu_doubles(nu in 0.0f64..1.0, s in 1e-3f64..10.0) {
            let cal = ScaleCalibration::fixed(s).unwrap();
            let e1 = innovation_energy(nu, &cal).unwrap();
            let e2 = innovation_energy(2.0 * nu, &cal).unwrap();
            prop_assert!((e2 - 4.0 * e1).abs() <= 1e-12 * e2.max(1.0));
        }

        #[test]
        fn drift_invariant_under_rotation(
            (a, b) in pair(),
            angle in 0.0f64..std::f64::consts::TAU,
        ) {
            // Givens rotation in the first coordinate plane.
            let rot = |v: &UnitVector| {
                let mut c = v.as_slice().to_vec();
                let (s, co) = angle.sin_cos();
                let (x, y) = (c[0], c[1]);
                c[0] = co * x - s * y;
                c[1] = s * x + co * y;
                UnitVector::normalize(c).unwrap()
            };
            prop_assert_eq!(semantic_drift(&a, &a).unwrap(), 0.0);
            let before = semantic_drift(&a, &b).unwrap();
            let after = semantic_drift(&rot(&a), &rot(&b)).unwrap();
            prop_assert!((before - after).abs() < 1e-9);
        }

        #[test]
        fn verdict_matches_recount(
            es in prop::collection::vec(0.0f64..3.0, 1..100),
            ds in prop::collection::vec(0.0f64..3.0, 1..100),
            b in 0.1f64..2.5,
            bd in 0.1f64..2.5,
            delta in 0.01f64..0.99,
        ) {
            let bounds = StabilityBounds::new(b, bd, delta).unwrap();
            let v = check_runtime_stability(&es, &ds, &bounds).unwrap();
            let mut over_e = 0usize;
            for x in &es { if *x > b { over_e += 1; } }
            let mut over_d = 0usize;
            for x in &ds { if *x > bd { over_d += 1; } }
            let fe = over_e as f64 / es.len() as f64;
            let fd = over_d as f64 / ds.len() as f64;
            prop_assert_eq!(v.energy_exceedance, fe);
            prop_assert_eq!(v.drift_exceedance, fd);
            prop_assert_eq!(v.stable, fe <= delta && fd <= delta);
        }
    }
}
