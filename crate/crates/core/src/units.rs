//! Unit conversions between the customary traffic units and SI.

/// 1 km/h in m/s.
pub const KMH: f64 = 1.0 / 3.6;

/// 1 veh/km in veh/m.
pub const PER_KM: f64 = 1.0e-3;

#[inline]
pub fn kmh_to_ms(v: f64) -> f64 {
    v * KMH
}

#[inline]
pub fn ms_to_kmh(v: f64) -> f64 {
    v / KMH
}

#[inline]
pub fn per_km_to_per_m(rho: f64) -> f64 {
    rho * PER_KM
}

#[inline]
pub fn per_m_to_per_km(rho: f64) -> f64 {
    rho / PER_KM
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        assert!((ms_to_kmh(kmh_to_ms(80.0)) - 80.0).abs() < 1e-12);
        assert!((per_m_to_per_km(per_km_to_per_m(150.0)) - 150.0).abs() < 1e-12);
        assert!((kmh_to_ms(36.0) - 10.0).abs() < 1e-12);
    }
}
