//! Float functions routed through `libm` so the crate stays `no_std`.

pub(crate) const SQRT_2: f64 = core::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline(always)]
pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline(always)]
pub(crate) fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline(always)]
pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline(always)]
pub(crate) fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

#[inline(always)]
pub(crate) fn log2(x: f64) -> f64 {
    libm::log2(x)
}

#[inline(always)]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + exp(-x))
}

/// Exact GELU: `x * Phi(x)` with the Gaussian CDF.
#[inline(always)]
pub(crate) fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

/// Derivative of exact GELU: `Phi(x) + x * phi(x)`.
#[inline(always)]
pub(crate) fn gelu_grad(x: f64) -> f64 {
    normal_cdf(x) + x * INV_SQRT_2PI * exp(-0.5 * x * x)
}

#[inline(always)]
fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / SQRT_2))
}
