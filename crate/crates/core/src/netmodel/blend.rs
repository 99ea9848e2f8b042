use crate::error::{Error, Result};

use super::BlendConstants;

/// Volume fraction of hydrogen in a blend of `h2` and `ch4` cubic metres.
pub fn hydrogen_fraction(h2: f64, ch4: f64) -> Result<f64> {
    if !(h2 >= 0.0 && ch4 >= 0.0) {
        return Err(Error::domain(format!("gas volumes must be nonnegative, got h2={h2}, ch4={ch4}")));
    }
    let total = h2 + ch4;
    if total <= 0.0 {
        return Err(Error::domain("hydrogen fraction undefined when both volumes are zero"));
    }
    Ok(h2 / total)
}

/// Higher heating value of a blend with hydrogen fraction `omega`, MJ/m³.
pub fn hhv_mix(omega: f64, hhv_h2: f64, hhv_ch4: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::domain(format!("hydrogen fraction {omega} outside [0, 1]")));
    }
    if !(hhv_h2 > 0.0 && hhv_ch4 > 0.0) {
        return Err(Error::domain("heating values must be positive"));
    }
    Ok(omega * hhv_h2 + (1.0 - omega) * hhv_ch4)
}

/// Volume of blended gas delivering the same energy as `load` m³ of methane.
pub fn equivalent_gas_load(load: f64, hhv_mix: f64, hhv_ch4: f64) -> Result<f64> {
    if !(hhv_mix > 0.0 && hhv_ch4 > 0.0) {
        return Err(Error::domain("heating values must be positive"));
    }
    if load < 0.0 {
        return Err(Error::domain(format!("gas load {load} is negative")));
    }
    Ok(load * hhv_ch4 / hhv_mix)
}

/// Per-period blend composition held fixed while one convex schedule is solved.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendState {
    pub h2: Vec<f64>,
    pub ch4: Vec<f64>,
    pub omega: Vec<f64>,
    pub hhv_mix: Vec<f64>,
    pub constants: BlendConstants,
}

impl BlendState {
    /// Pure methane in every period; the starting point of the fixed-point loop.
    pub fn methane(constants: &BlendConstants, horizon: usize) -> BlendState {
        BlendState {
            h2: vec![0.0; horizon],
            ch4: vec![0.0; horizon],
            omega: vec![0.0; horizon],
            hhv_mix: vec![constants.hhv_ch4; horizon],
            constants: constants.clone(),
        }
    }

    /// Blend implied by system-wide injected volumes. Periods with no gas at
    /// all are treated as pure methane.
    pub fn from_volumes(constants: &BlendConstants, h2: &[f64], ch4: &[f64]) -> Result<BlendState> {
        let mut omega = Vec::with_capacity(h2.len());
        let mut mix = Vec::with_capacity(h2.len());
        for (&a, &b) in h2.iter().zip(ch4) {
            // Solver output can sit a hair below zero.
            let (a, b) = (a.max(0.0), b.max(0.0));
            let w = if a + b > 0.0 { hydrogen_fraction(a, b)? } else { 0.0 };
            omega.push(w);
            mix.push(hhv_mix(w, constants.hhv_h2, constants.hhv_ch4)?);
        }
        Ok(BlendState {
            h2: h2.to_vec(),
            ch4: ch4.to_vec(),
            omega,
            hhv_mix: mix,
            constants: constants.clone(),
        })
    }

    pub fn horizon(&self) -> usize {
        self.omega.len()
    }

    /// Equivalent blended-gas volume of a methane-denominated load in period `t`.
    pub fn equivalent_load(&self, load: f64, t: usize) -> f64 {
        load * self.constants.hhv_ch4 / self.hhv_mix[t]
    }

    /// Largest per-period change in hydrogen fraction against `other`.
    pub fn max_change(&self, other: &BlendState) -> f64 {
        self.omega
            .iter()
            .zip(&other.omega)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn fraction_endpoints_and_interior() {
        assert_eq!(hydrogen_fraction(0.0, 100.0).unwrap(), 0.0);
        assert_eq!(hydrogen_fraction(100.0, 0.0).unwrap(), 1.0);
        assert_eq!(hydrogen_fraction(25.0, 75.0).unwrap(), 0.25);
        assert!(hydrogen_fraction(0.0, 0.0).is_err());
    }

    #[test]
    fn mix_heating_value() {
        assert_eq!(hhv_mix(0.0, 12.7, 39.8).unwrap(), 39.8);
        assert_eq!(hhv_mix(1.0, 12.7, 39.8).unwrap(), 12.7);
        assert_relative_eq!(hhv_mix(0.2, 12.7, 39.8).unwrap(), 34.38, epsilon = 1e-12);
        assert!(hhv_mix(1.2, 12.7, 39.8).is_err());
        assert!(hhv_mix(-0.1, 12.7, 39.8).is_err());
    }

    #[test]
    fn equivalent_load_conserves_energy() {
        assert_eq!(equivalent_gas_load(100.0, 39.8, 39.8).unwrap(), 100.0);
        let g = equivalent_gas_load(100.0, 34.38, 39.8).unwrap();
        assert_relative_eq!(g, 115.76, epsilon = 5e-3);
        assert!(((g * 34.38 - 100.0 * 39.8) / 3980.0).abs() < 1e-9);
        assert!(equivalent_gas_load(100.0, 0.0, 39.8).is_err());
    }

    proptest! {
        #[test]
        fn mix_nonincreasing_in_hydrogen(total in 1.0f64..1e4, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let m_lo = hhv_mix(hydrogen_fraction(lo * total, (1.0 - lo) * total).unwrap(), 12.7, 39.8).unwrap();
            let m_hi = hhv_mix(hydrogen_fraction(hi * total, (1.0 - hi) * total).unwrap(), 12.7, 39.8).unwrap();
            prop_assert!(m_hi <= m_lo + 1e-12);
        }

        #[test]
        fn delivered_energy_is_conserved(load in 1e-3f64..1e5, w in 0.0f64..=1.0, h2 in 1.0f64..30.0, dh in 0.1f64..30.0) {
            let ch4 = h2 + dh;
            let mix = hhv_mix(w, h2, ch4).unwrap();
            let g = equivalent_gas_load(load, mix, ch4).unwrap();
            prop_assert!(((g * mix - load * ch4) / (load * ch4)).abs() <= 1e-9);
        }

        #[test]
        fn mix_lies_between_pure_values(w in 1e-9f64..=1.0) {
            let m = hhv_mix(w, 12.7, 39.8).unwrap();
            prop_assert!((12.7 - 1e-12..39.8).contains(&m));
        }
    }
}
