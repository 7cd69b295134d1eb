//! Symmetric per-tensor fake quantization.

use super::Real;

/// Largest integer code of a signed `bits`-wide symmetric quantizer.
pub fn max_code(bits: u32) -> f64 {
    assert!(
        (2..=16).contains(&bits),
        "quantizer bit width {bits} outside 2..=16"
    );
    f64::from((1u32 << (bits - 1)) - 1)
}

/// `absmax / (2^(bits-1) - 1)`, nudged to a fixed point of
/// `s -> (s * q) / q` so that re-quantizing an already quantized tensor
/// recovers the same scale bit for bit.
pub fn scale_for<T: Real>(absmax: T, bits: u32) -> T {
    let q = T::of(max_code(bits));
    let mut s = absmax / q;
    for _ in 0..8 {
        let t = (s * q) / q;
        if t == s {
            break;
        }
        s = t;
    }
    s
}

/// Quantizes onto the grid `k * scale`, `|k| <= 2^(bits-1) - 1`. A zero or
/// non-finite scale maps everything to zero.
pub fn quantize_with_scale<T: Real>(x: &[T], scale: T, bits: u32) -> Vec<T> {
    let q = T::of(max_code(bits));
    if !(scale > T::zero()) || !scale.is_finite() {
        return vec![T::zero(); x.len()];
    }
    x.iter()
        .map(|&v| (v / scale).round().max(-q).min(q) * scale)
        .collect()
}

pub fn absmax<T: Real>(x: &[T]) -> T {
    x.iter().fold(T::zero(), |m, v| m.max(v.abs()))
}

/// Fake-quantizes `x` with a scale derived from its own absolute maximum.
/// Returns the quantized tensor and the scale. The backward pass treats this
/// map as the identity.
pub fn fake_quantize<T: Real>(x: &[T], bits: u32) -> (Vec<T>, T) {
    let scale = scale_for(absmax(x), bits);
    (quantize_with_scale(x, scale, bits), scale)
}
