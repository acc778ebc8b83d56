use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Floor applied before taking the logarithm.
pub const DB_FLOOR: f64 = 1e-12;

/// `20 log10(max(x, eps) / max(x))`, so the largest entry maps to 0 dB.
pub fn magnitude_db_normalized<T: Scalar>(spectrum: &[T]) -> Result<Vec<T>> {
    let peak = spectrum
        .iter()
        .copied()
        .fold(T::zero(), |m, v| if v > m { v } else { m });
    if !(peak > T::zero()) || !peak.is_finite() {
        return Err(Error::Degenerate(
            "spectrum has no strictly positive finite entry".into(),
        ));
    }
    let eps = T::lit(DB_FLOOR);
    let twenty = T::lit(20.0);
    Ok(spectrum
        .iter()
        .map(|&v| twenty * (v.max(eps) / peak).log10())
        .collect())
}

/// Fraction of total power (`|X|^2`) carried by bins below `cutoff_hz`.
pub fn energy_fraction_below<T: Scalar>(magnitudes: &[T], bin_width_hz: f64, cutoff_hz: f64) -> f64 {
    let mut below = 0.0;
    let mut total = 0.0;
    for (k, m) in magnitudes.iter().enumerate() {
        let p = m.to_f64().unwrap_or(0.0).powi(2);
        total += p;
        if (k as f64) * bin_width_hz < cutoff_hz {
            below += p;
        }
    }
    if total == 0.0 {
        0.0
    } else {
        below / total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_is_zero_db() {
        assert_eq!(magnitude_db_normalized(&[1.0f64, 1.0, 1.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn decade_is_twenty_db() {
        let db = magnitude_db_normalized(&[10.0f64, 1.0]).unwrap();
        assert!((db[0] - 0.0).abs() < 1e-12);
        assert!((db[1] + 20.0).abs() < 1e-12);
    }

    #[test]
    fn zero_entries_are_floored() {
        let db = magnitude_db_normalized(&[1.0f64, 0.0]).unwrap();
        assert!((db[1] + 240.0).abs() < 1e-9);
    }

    #[test]
    fn all_zero_is_degenerate() {
        assert!(matches!(
            magnitude_db_normalized(&[0.0f64; 4]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn energy_fraction() {
        let m = [1.0f64, 1.0, 1.0, 1.0];
        assert!((energy_fraction_below(&m, 10.0, 15.0) - 0.5).abs() < 1e-12);
    }
}
