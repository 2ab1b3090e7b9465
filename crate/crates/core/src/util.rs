//! Small shared helpers: deterministic seed derivation and stable
//! softmax/log-sum-exp primitives used across the solver and the model.

use ndarray::ArrayView1;

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent child seed from a master seed and a stream id.
///
/// Used to give every episode / row / restart its own RNG stream so results
/// do not depend on scheduling order.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(master) ^ splitmix64(stream.wrapping_add(0xA076_1D64_78BD_642F)))
}

/// log(sum_j exp(x_j)) with max-subtraction.
pub fn log_sum_exp(x: ArrayView1<'_, f64>) -> f64 {
    let mx = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return mx;
    }
    let s: f64 = x.iter().map(|&v| (v - mx).exp()).sum();
    mx + s.ln()
}

/// Writes softmax(x) into `out`. Caller guarantees matching lengths and
/// finite input.
pub(crate) fn softmax_into(x: ArrayView1<'_, f64>, out: &mut [f64]) {
    let mx = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(x.iter()) {
        let e = (v - mx).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}
