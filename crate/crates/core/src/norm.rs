//! Standard-normal density, distribution function and quantile function.
//!
//! The quantile uses Wichura's PPND16 rational approximations (AS 241), which
//! are accurate to about 1e-15 over the full open unit interval; the CDF is
//! evaluated through `erfc` so the two routes are independent of each other.

use std::f64::consts::PI;

pub const SQRT_2: f64 = std::f64::consts::SQRT_2;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_74;

/// Standard normal density.
pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Log of the standard normal density.
pub fn ln_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Log density of N(mean, sd^2) at x.
pub fn ln_pdf_scaled(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    ln_pdf(z) - sd.ln()
}

/// Standard normal CDF, Phi(x) = P(Z <= x).
pub fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Upper tail, P(Z > x), computed without cancellation for large x.
pub fn sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

/// Standard normal quantile, the inverse of [`cdf`] on (0, 1).
///
/// Returns `-INFINITY`/`INFINITY` at the endpoints and NaN outside [0, 1].
pub fn quantile(p: f64) -> f64 {
    if p.is_nan() || p < 0.0 || p > 1.0 {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }

    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * rational_a(r);
    }

    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let x = if r <= 5.0 {
        rational_c(r - 1.6)
    } else {
        rational_e(r - 5.0)
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

fn rational_a(r: f64) -> f64 {
    let num = ((((((2.509_080_928_730_122_7e3 * r + 3.343_057_558_358_812_8e4) * r
        + 6.726_577_092_700_870_1e4)
        * r
        + 4.592_195_393_154_987_1e4)
        * r
        + 1.373_169_376_550_946_1e4)
        * r
        + 1.971_590_950_306_551_3e3)
        * r
        + 1.331_416_678_917_843_8e2)
        * r
        + 3.387_132_872_796_366_5;
    let den = ((((((5.226_495_278_852_545_6e3 * r + 2.872_908_573_572_194_3e4) * r
        + 3.930_789_580_009_271e4)
        * r
        + 2.121_379_430_158_659_7e4)
        * r
        + 5.394_196_021_424_751e3)
        * r
        + 6.871_870_074_920_579e2)
        * r
        + 4.231_333_070_160_091e1)
        * r
        + 1.0;
    num / den
}

fn rational_c(r: f64) -> f64 {
    let num = ((((((7.745_450_142_783_414e-4 * r + 2.272_384_498_926_918_4e-2) * r
        + 2.417_807_251_774_506e-1)
        * r
        + 1.270_458_252_452_368_4)
        * r
        + 3.647_848_324_763_204_5)
        * r
        + 5.769_497_221_460_691)
        * r
        + 4.630_337_846_156_546)
        * r
        + 1.423_437_110_749_683_5;
    let den = ((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r
        + 1.519_866_656_361_645_7e-2)
        * r
        + 1.481_039_764_274_800_8e-1)
        * r
        + 6.897_673_349_851e-1)
        * r
        + 1.676_384_830_183_803_8)
        * r
        + 2.053_191_626_637_759)
        * r
        + 1.0;
    num / den
}

fn rational_e(r: f64) -> f64 {
    let num = ((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
        + 1.242_660_947_388_078_4e-3)
        * r
        + 2.653_218_952_657_612_4e-2)
        * r
        + 2.965_605_718_285_048_9e-1)
        * r
        + 1.784_826_539_917_291_3)
        * r
        + 5.463_784_911_164_114)
        * r
        + 6.657_904_643_501_103;
    let den = ((((((2.044_263_103_389_939_785_6e-15 * r + 1.421_511_758_316_445_888_7e-7) * r
        + 1.846_318_317_510_054_681_8e-5)
        * r
        + 7.868_691_311_456_132_591e-4)
        * r
        + 1.487_536_129_085_061_485_25e-2)
        * r
        + 1.369_298_809_227_358_053_1e-1)
        * r
        + 5.998_322_065_558_879_376_9e-1)
        * r
        + 1.0;
    num / den
}
