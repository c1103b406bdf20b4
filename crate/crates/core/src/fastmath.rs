//! Branch-free `exp` for the sweep's weight rows.

use std::f64::consts::LOG2_E;

const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
// 1.5 · 2^52: adding it rounds to an integer kept in the low mantissa bits
const ROUND_MAGIC: f64 = 6_755_399_441_055_744.0;

/// `e^x` within a few ulp for `|x| ≤ 700`; arguments are clamped to that range.
#[inline(always)]
pub fn exp(x: f64) -> f64 {
    let x = if x < -700.0 { -700.0 } else { x };
    let x = if x > 700.0 { 700.0 } else { x };
    let t = x * LOG2_E + ROUND_MAGIC;
    let k = t - ROUND_MAGIC;
    let r = (x - k * LN2_HI) - k * LN2_LO;
    // Taylor to degree 12 on |r| ≤ ln2/2
    let mut p = 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    let scale = f64::from_bits(t.to_bits().wrapping_add(1023) << 52);
    p * scale
}

/// `out[i] = e^{a·x[i] + b}`.
#[inline]
pub fn exp_affine(out: &mut [f64], x: &[f64], a: f64, b: f64) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o = exp(a * v + b);
    }
}
