//! Float functions routed through `libm` so the crate stays `no_std`.

pub use core::f64::consts::{PI, TAU};

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}
#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}
#[inline]
pub fn expm1(x: f64) -> f64 {
    libm::expm1(x)
}
#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}
#[inline]
pub fn log1p(x: f64) -> f64 {
    libm::log1p(x)
}
#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}
#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}
#[inline]
pub fn atan2(y: f64, x: f64) -> f64 {
    libm::atan2(y, x)
}
#[inline]
pub fn hypot(x: f64, y: f64) -> f64 {
    libm::hypot(x, y)
}
#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}
#[inline]
pub fn powi(x: f64, n: i32) -> f64 {
    libm::pow(x, n as f64)
}
#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}
#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}
#[inline]
pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

/// `e^{iθ}`.
#[inline]
pub fn cis(theta: f64) -> crate::C64 {
    crate::C64::new(cos(theta), sin(theta))
}

#[inline]
pub fn cabs(z: crate::C64) -> f64 {
    hypot(z.re, z.im)
}

/// Principal `z^{1/n}`.
pub fn croot(z: crate::C64, n: usize) -> crate::C64 {
    let r = powf(cabs(z), 1.0 / n as f64);
    cis(atan2(z.im, z.re) / n as f64) * r
}

/// Reduce an angle into `[0, 2π)`.
#[inline]
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta - TAU * floor(theta / TAU);
    if t >= TAU {
        t -= TAU;
    }
    if t < 0.0 {
        t = 0.0;
    }
    t
}
