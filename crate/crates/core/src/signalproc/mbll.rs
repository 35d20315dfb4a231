//! Modified Beer-Lambert law.

use serde::{Deserialize, Serialize};

use super::{HemoSeries, OdSeries};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Optical constants for a two-wavelength channel.
///
/// `extinction[w] = [ε_HbO, ε_HbR]` in mm⁻¹·µM⁻¹ (decadic) for wavelength
/// `w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MbllParams {
    pub wavelengths_nm: [f64; 2],
    pub extinction: [[f64; 2]; 2],
    pub dpf: [f64; 2],
    pub distance_mm: f64,
}

impl Default for MbllParams {
    /// 760/850 nm with the tabulated molar extinction coefficients compiled
    /// by S. Prahl (OMLC, 1999): HbO₂ 1486.5865 / 2526.391 and Hb
    /// 3843.707 / 1798.643 cm⁻¹·M⁻¹, converted to mm⁻¹·µM⁻¹. DPF 6.0 at both
    /// wavelengths, 30 mm source-detector distance.
    fn default() -> Self {
        let to_mm_um = 1e-7; // (cm⁻¹ → mm⁻¹) × (M⁻¹ → µM⁻¹)
        Self {
            wavelengths_nm: [760.0, 850.0],
            extinction: [
                [1486.5865 * to_mm_um, 3843.707 * to_mm_um],
                [2526.391 * to_mm_um, 1798.643 * to_mm_um],
            ],
            dpf: [6.0, 6.0],
            distance_mm: 30.0,
        }
    }
}

impl MbllParams {
    pub fn validate(&self) -> Result<()> {
        if self.extinction.iter().flatten().any(|&e| !(e > 0.0)) {
            return Err(Error::arg("extinction coefficients must be positive"));
        }
        if self.dpf.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::arg("DPF must be positive"));
        }
        if !(self.distance_mm > 0.0) {
            return Err(Error::arg("source-detector distance must be positive"));
        }
        Ok(())
    }

    fn determinant(&self) -> f64 {
        let e = &self.extinction;
        e[0][0] * e[1][1] - e[0][1] * e[1][0]
    }

    /// `ΔOD[w] = Σ_c ε[w][c] Δc · d · DPF[w]`, the model `mbll_convert`
    /// inverts.
    pub fn forward(&self, delta_hbo: f64, delta_hbr: f64) -> [f64; 2] {
        let e = &self.extinction;
        [0, 1].map(|w| (e[w][0] * delta_hbo + e[w][1] * delta_hbr) * self.distance_mm * self.dpf[w])
    }
}

/// Converts two-wavelength optical density to ΔHbO/ΔHbR (µM).
pub fn mbll_convert<F: Scalar>(od: &OdSeries<F>, params: &MbllParams, channel_id: &str) -> Result<HemoSeries<F>> {
    if od.samples.ncols() != 2 {
        return Err(Error::arg(format!(
            "MBLL needs exactly 2 wavelengths, got {}",
            od.samples.ncols()
        )));
    }
    params.validate()?;
    let det = params.determinant();
    if det.abs() <= 1e-12 {
        return Err(Error::Numeric(format!(
            "extinction matrix is singular (det = {det:e})"
        )));
    }
    let e = &params.extinction;
    let inv = [
        [e[1][1] / det, -e[0][1] / det],
        [-e[1][0] / det, e[0][0] / det],
    ];
    let path = [0, 1].map(|w| F::lit(params.distance_mm * params.dpf[w]));
    let inv = inv.map(|row| row.map(F::lit));

    let t = od.samples.nrows();
    let mut delta_hbo = Vec::with_capacity(t);
    let mut delta_hbr = Vec::with_capacity(t);
    for row in od.samples.rows() {
        let a = row[0] / path[0];
        let b = row[1] / path[1];
        delta_hbo.push(inv[0][0] * a + inv[0][1] * b);
        delta_hbr.push(inv[1][0] * a + inv[1][1] * b);
    }
    Ok(HemoSeries {
        delta_hbo,
        delta_hbr,
        sample_rate_hz: od.sample_rate_hz,
        channel_id: channel_id.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn od_from(rows: &[[f64; 2]]) -> OdSeries<f64> {
        OdSeries {
            samples: Array2::from_shape_fn((rows.len(), 2), |(i, j)| rows[i][j]),
            sample_rate_hz: 7.8125,
            wavelengths_nm: vec![760.0, 850.0],
        }
    }

    #[test]
    fn zero_od_gives_zero_concentration() {
        let h = mbll_convert(&od_from(&[[0.0, 0.0]; 4]), &MbllParams::default(), "c").unwrap();
        assert!(h.delta_hbo.iter().chain(&h.delta_hbr).all(|&v| v == 0.0));
    }

    #[test]
    fn round_trip_recovers_concentrations() {
        let p = MbllParams::default();
        let od = p.forward(1.0, -0.5);
        let h = mbll_convert(&od_from(&[od]), &p, "c").unwrap();
        assert!((h.delta_hbo[0] - 1.0).abs() < 1e-9);
        assert!((h.delta_hbr[0] + 0.5).abs() < 1e-9);
    }

    #[test]
    fn singular_extinction_rejected() {
        let p = MbllParams {
            extinction: [[1e-4, 2e-4], [1e-4, 2e-4]],
            ..Default::default()
        };
        assert!(matches!(
            mbll_convert(&od_from(&[[0.1, 0.1]]), &p, "c"),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn wrong_wavelength_count_rejected() {
        let od = OdSeries {
            samples: Array2::<f64>::zeros((3, 3)),
            sample_rate_hz: 1.0,
            wavelengths_nm: vec![690.0, 760.0, 850.0],
        };
        assert!(matches!(mbll_convert(&od, &MbllParams::default(), "c"), Err(Error::Argument(_))));
    }

    proptest! {
        #[test]
        fn round_trip_any_valid_params(
            hbo in -10.0f64..10.0, hbr in -10.0f64..10.0,
            e in proptest::array::uniform4(1e-5f64..1e-3),
            dpf in proptest::array::uniform2(3.0f64..8.0),
            d in 10.0f64..50.0,
        ) {
            let p = MbllParams {
                wavelengths_nm: [760.0, 850.0],
                extinction: [[e[0], e[1]], [e[2], e[3]]],
                dpf,
                distance_mm: d,
            };
            prop_assume!(p.determinant().abs() > 1e-9);
            let od = p.forward(hbo, hbr);
            let h = mbll_convert(&od_from(&[od]), &p, "c").unwrap();
            prop_assert!((h.delta_hbo[0] - hbo).abs() < 1e-9);
            prop_assert!((h.delta_hbr[0] - hbr).abs() < 1e-9);
        }

        #[test]
        fn conversion_is_linear(a in proptest::array::uniform2(-1.0f64..1.0), b in proptest::array::uniform2(-1.0f64..1.0), k in -3.0f64..3.0) {
            let p = MbllParams::default();
            let comb = [a[0] + k * b[0], a[1] + k * b[1]];
            let h = mbll_convert(&od_from(&[a, b, comb]), &p, "c").unwrap();
            prop_assert!((h.delta_hbo[2] - (h.delta_hbo[0] + k * h.delta_hbo[1])).abs() < 1e-6);
            prop_assert!((h.delta_hbr[2] - (h.delta_hbr[0] + k * h.delta_hbr[1])).abs() < 1e-6);
        }
    }
}
