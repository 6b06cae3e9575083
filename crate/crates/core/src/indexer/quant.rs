use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symmetric per-vector int8 code: `value_i ~= scale * values[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedVector {
    pub scale: f32,
    pub values: Vec<i8>,
}

impl QuantizedVector {
    pub fn zeros(dim: usize) -> Self {
        QuantizedVector {
            scale: 0.0,
            values: vec![0; dim],
        }
    }
}

/// `scale = max|v| / 127`; each component rounds to the nearest multiple of
/// `scale`. The zero vector gets scale 0 and round-trips exactly.
pub fn quantize(v: &[f32]) -> Result<QuantizedVector> {
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::input(format!("component {i} is not finite")));
    }
    let max = v.iter().fold(0f32, |m, x| m.max(x.abs()));
    if max == 0.0 {
        return Ok(QuantizedVector::zeros(v.len()));
    }
    let scale = max / 127.0;
    let values = v.iter().map(|&x| quantize_component(x, scale)).collect();
    Ok(QuantizedVector { scale, values })
}

/// Picks the code whose `f32` dequantization is closest to `x`. Plain
/// rounding of `x / scale` can land one step off once the dequantizing
/// multiply rounds, which would break the `scale / 2` error bound.
fn quantize_component(x: f32, scale: f32) -> i8 {
    let q = (x as f64 / scale as f64).round().clamp(-127.0, 127.0) as i32;
    let err = |c: i32| ((scale * c as f32) as f64 - x as f64).abs();
    let mut best = q;
    for c in [q - 1, q + 1] {
        if (-127..=127).contains(&c) && err(c) < err(best) {
            best = c;
        }
    }
    best as i8
}

pub fn dequantize(qv: &QuantizedVector) -> Vec<f32> {
    let mut out = Vec::with_capacity(qv.values.len());
    dequantize_into(qv.scale, &qv.values, &mut out);
    out
}

#[inline]
pub(crate) fn dequantize_into(scale: f32, values: &[i8], out: &mut Vec<f32>) {
    out.clear();
    out.extend(values.iter().map(|&q| scale * q as f32));
}
