//! Scalar helpers backed by `libm` and a stable string hash.

use libm::{exp, log, sqrt, tanh};

#[inline]
pub fn ln(x: f64) -> f64 {
    log(x)
}

#[inline]
pub fn expf(x: f64) -> f64 {
    exp(x)
}

#[inline]
pub fn sqrtf(x: f64) -> f64 {
    sqrt(x)
}

#[inline]
pub fn tanhf(x: f64) -> f64 {
    tanh(x)
}

/// Left-to-right dot product.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

#[inline]
pub fn l2_norm(a: &[f64]) -> f64 {
    sqrtf(dot(a, a))
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> alloc::vec::Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: alloc::vec::Vec<f64> = logits.iter().map(|&z| expf(z - max)).collect();
    let mut total = 0.0;
    for p in &out {
        total += p;
    }
    for p in &mut out {
        *p /= total;
    }
    out
}

/// Index of the maximum entry; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Sums after sorting, so the result does not depend on input order.
pub fn order_invariant_sum(values: &[f64]) -> f64 {
    let mut sorted: alloc::vec::Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut s = 0.0;
    for v in sorted {
        s += v;
    }
    s
}
