//! Conversions between logarithmic (dB/dBm) and linear power scales.
//!
//! Scenario files may quote powers in dBm and gains in dB; every model
//! equation works in linear watts, so conversion happens once at load time.

/// Converts a power level in dBm to watts: `10^((level - 30) / 10)`.
pub fn dbm_to_watt(level_dbm: f64) -> f64 {
    10f64.powf((level_dbm - 30.0) / 10.0)
}

/// Converts a power in watts to dBm. Inverse of [`dbm_to_watt`].
pub fn watt_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

/// Converts a dB ratio to a linear gain.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Converts a linear gain to a dB ratio.
pub fn linear_to_db(gain: f64) -> f64 {
    10.0 * gain.log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn dbm_reference_points() {
        assert_relative_eq!(dbm_to_watt(-30.0), 1e-6, max_relative = 1e-14);
        assert_relative_eq!(dbm_to_watt(0.0), 1e-3, max_relative = 1e-14);
        // 46 dBm = 10^1.6 W
        assert_relative_eq!(dbm_to_watt(46.0), 39.810717055349734, max_relative = 1e-13);
    }

    #[test]
    fn db_reference_points() {
        assert_relative_eq!(db_to_linear(-30.0), 1e-3, max_relative = 1e-14);
        assert_relative_eq!(db_to_linear(0.0), 1.0, max_relative = 1e-15);
    }

    proptest! {
        #[test]
        fn dbm_round_trip(level in -200.0f64..100.0) {
            let back = watt_to_dbm(dbm_to_watt(level));
            prop_assert!((back - level).abs() <= 1e-12 * level.abs().max(1.0));
        }

        #[test]
        fn db_round_trip(db in -120.0f64..60.0) {
            let back = linear_to_db(db_to_linear(db));
            prop_assert!((back - db).abs() <= 1e-12 * db.abs().max(1.0));
        }
    }
}
