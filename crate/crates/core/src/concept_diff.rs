//! Per-element concept differences of a sentence pair.

use serde::{Deserialize, Serialize};

use crate::rx_parse::PrescriptionConcepts;

pub const DIFF_DIM: usize = 5;

/// Difference feature in the fixed order
/// `[strength, unit, frequency, form, dose]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ConceptDiffVector {
    pub strength_diff: f64,
    pub unit_type_diff: f64,
    pub frequency_diff: f64,
    pub form_diff: f64,
    pub dose_diff: f64,
}

impl ConceptDiffVector {
    pub fn to_array(&self) -> [f64; DIFF_DIM] {
        [
            self.strength_diff,
            self.unit_type_diff,
            self.frequency_diff,
            self.form_diff,
            self.dose_diff,
        ]
    }

    pub fn from_array(a: [f64; DIFF_DIM]) -> Self {
        ConceptDiffVector {
            strength_diff: a[0],
            unit_type_diff: a[1],
            frequency_diff: a[2],
            form_diff: a[3],
            dose_diff: a[4],
        }
    }
}

/// Absolute residual of two numeric elements.
pub fn numeric_diff(e1: f64, e2: f64) -> f64 {
    (e1 - e2).abs()
}

/// 0 when the nominal values agree, 1 otherwise.
pub fn nominal_diff<T: PartialEq>(e1: &T, e2: &T) -> f64 {
    if e1 == e2 {
        0.0
    } else {
        1.0
    }
}

pub fn assemble_diff(c1: &PrescriptionConcepts, c2: &PrescriptionConcepts) -> ConceptDiffVector {
    ConceptDiffVector {
        strength_diff: numeric_diff(c1.strength_value, c2.strength_value),
        unit_type_diff: nominal_diff(&c1.strength_unit, &c2.strength_unit),
        frequency_diff: numeric_diff(c1.frequency_per_day, c2.frequency_per_day),
        form_diff: nominal_diff(&c1.form, &c2.form),
        dose_diff: numeric_diff(c1.dose_amount, c2.dose_amount),
    }
}

/// Optional per-component min-max scaling fitted on training vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffScaler {
    pub min: [f64; DIFF_DIM],
    pub max: [f64; DIFF_DIM],
}

impl DiffScaler {
    /// Identity scaling.
    pub fn identity() -> Self {
        DiffScaler {
            min: [0.0; DIFF_DIM],
            max: [1.0; DIFF_DIM],
        }
    }

    pub fn fit<'a>(vectors: impl IntoIterator<Item = &'a ConceptDiffVector>) -> Self {
        let mut min = [f64::INFINITY; DIFF_DIM];
        let mut max = [f64::NEG_INFINITY; DIFF_DIM];
        let mut any = false;
        for v in vectors {
            any = true;
            for (k, x) in v.to_array().into_iter().enumerate() {
                min[k] = min[k].min(x);
                max[k] = max[k].max(x);
            }
        }
        if !any {
            return DiffScaler::identity();
        }
        DiffScaler { min, max }
    }

    /// Constant components map to 0.
    pub fn apply(&self, v: &ConceptDiffVector) -> [f64; DIFF_DIM] {
        let mut out = v.to_array();
        for (k, x) in out.iter_mut().enumerate() {
            let span = self.max[k] - self.min[k];
            *x = if span > 0.0 { (*x - self.min[k]) / span } else { 0.0 };
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rx_parse::{DosageForm, Route, StrengthUnit};
    use proptest::prelude::*;

    fn concepts(strength: f64, unit: StrengthUnit, form: DosageForm, dose: f64, freq: f64) -> PrescriptionConcepts {
        PrescriptionConcepts {
            drug_name: "x".into(),
            drugs: vec!["x".into()],
            strength_value: strength,
            strength_unit: unit,
            form,
            dose_amount: dose,
            frequency_per_day: freq,
            route: Route::Oral,
        }
    }

    #[test]
    fn element_diffs() {
        assert_eq!(numeric_diff(10.0, 20.0), 10.0);
        assert_eq!(numeric_diff(5.0, 5.0), 0.0);
        assert_eq!(numeric_diff(0.5, 2.0), 1.5);
        assert_eq!(nominal_diff(&StrengthUnit::Mg, &StrengthUnit::Mg), 0.0);
        assert_eq!(nominal_diff(&StrengthUnit::Mg, &StrengthUnit::Mcg), 1.0);
        assert_eq!(nominal_diff(&DosageForm::Tablet, &DosageForm::Capsule), 1.0);
    }

    #[test]
    fn assembled_vectors() {
        let a = concepts(10.0, StrengthUnit::Mg, DosageForm::Tablet, 1.0, 1.0);
        assert_eq!(assemble_diff(&a, &a).to_array(), [0.0; 5]);
        let b = concepts(20.0, StrengthUnit::Mg, DosageForm::Tablet, 2.0, 3.0);
        assert_eq!(assemble_diff(&a, &b).to_array(), [10.0, 0.0, 2.0, 0.0, 1.0]);
        let c = concepts(500.0, StrengthUnit::Mg, DosageForm::Tablet, 1.0, 1.0);
        let d = concepts(500.0, StrengthUnit::Mcg, DosageForm::Capsule, 1.0, 1.0);
        assert_eq!(assemble_diff(&c, &d).to_array(), [0.0, 1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn no_unit_conversion() {
        let a = concepts(10.0, StrengthUnit::Mg, DosageForm::Tablet, 1.0, 1.0);
        let b = concepts(10000.0, StrengthUnit::Mcg, DosageForm::Tablet, 1.0, 1.0);
        let d = assemble_diff(&a, &b);
        assert_eq!((d.strength_diff, d.unit_type_diff), (9990.0, 1.0));
    }

    #[test]
    fn scaler_maps_to_unit_interval() {
        let vs = [
            ConceptDiffVector::from_array([0.0, 0.0, 1.0, 0.0, 2.0]),
            ConceptDiffVector::from_array([10.0, 1.0, 3.0, 0.0, 4.0]),
        ];
        let s = DiffScaler::fit(vs.iter());
        assert_eq!(s.apply(&vs[0]), [0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(s.apply(&vs[1]), [1.0, 1.0, 1.0, 0.0, 1.0]);
    }

    fn arb_concepts() -> impl Strategy<Value = PrescriptionConcepts> {
        let unit = prop_oneof![Just(StrengthUnit::Mg), Just(StrengthUnit::Mcg), Just(StrengthUnit::G)];
        let form = prop_oneof![
            Just(DosageForm::Tablet),
            Just(DosageForm::Capsule),
            Just(DosageForm::Other)
        ];
        (0.0..1000.0f64, unit, form, 0.0..4.0f64, 0.0..6.0f64).prop_map(|(s, u, f, d, q)| concepts(s, u, f, d, q))
    }

    proptest! {
        #[test]
        fn symmetric_nonnegative_identity(a in arb_concepts(), b in arb_concepts()) {
            let ab = assemble_diff(&a, &b).to_array();
            let ba = assemble_diff(&b, &a).to_array();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab.iter().all(|&x| x >= 0.0));
            prop_assert!(ab[1] == 0.0 || ab[1] == 1.0);
            prop_assert!(ab[3] == 0.0 || ab[3] == 1.0);
            prop_assert_eq!(assemble_diff(&a, &a).to_array(), [0.0; 5]);
        }
    }
}
