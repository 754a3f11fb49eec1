//! Quintic smoothstep used for bumps and partitions of unity.

/// `0` for `u <= 0`, `1` for `u >= 1`, `6u^5 - 15u^4 + 10u^3` between.
pub fn smoothstep(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        u * u * u * (u * (6.0 * u - 15.0) + 10.0)
    }
}

pub fn smoothstep_deriv(u: f64) -> f64 {
    if u <= 0.0 || u >= 1.0 {
        0.0
    } else {
        30.0 * u * u * (u - 1.0) * (u - 1.0)
    }
}
