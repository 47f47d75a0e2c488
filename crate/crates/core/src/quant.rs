//! Affine int8 quantization and boundary-parameter alignment.
//!
//! Values map through `real = scale * (q - zero_point)`. The boundary between
//! two model halves only transfers cleanly when the producer's output
//! parameters match the consumer's input parameters; [`check_alignment`]
//! verifies that and [`requantize`] is the repair path when it fails.
//!
//! Rounding is fixed to round-half-away-from-zero so that independent
//! implementations of this scheme agree bit for bit.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::math;

/// Default relative tolerance when comparing scales at a split boundary.
pub const DEFAULT_ALIGNMENT_REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QuantError {
    InvalidScale,
    EmptySamples,
    NonFiniteSample,
    ShapeMismatch { expected: u64, got: u64 },
}

impl fmt::Display for QuantError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidScale => write!(f, "scale must be finite and > 0"),
            Self::EmptySamples => write!(f, "calibration requires at least one sample"),
            Self::NonFiniteSample => write!(f, "calibration sample is not finite"),
            Self::ShapeMismatch { expected, got } => {
                write!(f, "shape expects {expected} elements, data has {got}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for QuantError {}

/// Scale and zero point of an affine int8 mapping.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QuantParams {
    scale: f64,
    zero_point: i8,
}

impl QuantParams {
    pub fn new(scale: f64, zero_point: i8) -> Result<Self, QuantError> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(QuantError::InvalidScale);
        }
        Ok(Self { scale, zero_point })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn zero_point(&self) -> i8 {
        self.zero_point
    }

    /// Quantize a single value: `clamp(round(v / scale) + zero_point)`.
    pub fn quantize_value(&self, v: f32) -> i8 {
        let q = math::round(v as f64 / self.scale) + self.zero_point as f64;
        q.clamp(i8::MIN as f64, i8::MAX as f64) as i8
    }

    /// Dequantize a single value: `scale * (q - zero_point)`.
    pub fn dequantize_value(&self, q: i8) -> f32 {
        (self.scale * (q as i32 - self.zero_point as i32) as f64) as f32
    }
}

/// A quantized tensor: flat int8 data plus the parameters that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantTensor {
    pub shape: Vec<u32>,
    pub params: QuantParams,
    pub data: Vec<i8>,
}

impl QuantTensor {
    pub fn new(shape: Vec<u32>, params: QuantParams, data: Vec<i8>) -> Result<Self, QuantError> {
        let expected: u64 = shape.iter().map(|&d| d as u64).product();
        if expected != data.len() as u64 {
            return Err(QuantError::ShapeMismatch { expected, got: data.len() as u64 });
        }
        Ok(Self { shape, params, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Asymmetric min/max calibration over a representative sample set.
///
/// `scale = (max - min) / 255`, with a degenerate range falling back to
/// `max(|min|, 1) / 255` so the scale stays strictly positive, and
/// `zero_point = round(-128 - min / scale)` clamped to the int8 range.
pub fn calibrate_params(samples: &[f32]) -> Result<QuantParams, QuantError> {
    if samples.is_empty() {
        return Err(QuantError::EmptySamples);
    }
    let mut min = f32::INFINITY;
    let mut max = f32::NEG_INFINITY;
    for &s in samples {
        if !s.is_finite() {
            return Err(QuantError::NonFiniteSample);
        }
        min = min.min(s);
        max = max.max(s);
    }
    let scale = if max > min {
        (max as f64 - min as f64) / 255.0
    } else {
        math::abs(min as f64).max(1.0) / 255.0
    };
    let zp = math::round(-128.0 - min as f64 / scale).clamp(-128.0, 127.0) as i8;
    QuantParams::new(scale, zp)
}

/// Quantize a flat real tensor. Saturation clamps; this never fails for
/// finite input.
pub fn quantize(values: &[f32], shape: Vec<u32>, params: QuantParams) -> Result<QuantTensor, QuantError> {
    let data = values.iter().map(|&v| params.quantize_value(v)).collect();
    QuantTensor::new(shape, params, data)
}

/// Dequantize back to real values.
pub fn dequantize(t: &QuantTensor) -> Vec<f32> {
    t.data.iter().map(|&q| t.params.dequantize_value(q)).collect()
}

/// Result of comparing producer and consumer parameters at a split boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub aligned: bool,
    pub diagnostic: String,
}

/// Aligned iff `|scale_p - scale_c| <= rel_tol * scale_p` and the zero points
/// are exactly equal.
pub fn check_alignment(producer: QuantParams, consumer: QuantParams, rel_tol: f64) -> Alignment {
    let sp = producer.scale();
    let sc = consumer.scale();
    let scale_ok = math::abs(sp - sc) <= rel_tol * sp;
    let zp_ok = producer.zero_point() == consumer.zero_point();
    let aligned = scale_ok && zp_ok;
    let diagnostic = if aligned {
        format!("aligned: scale {sp} ~ {sc} (rel_tol {rel_tol}), zero_point {}", producer.zero_point())
    } else if !scale_ok {
        format!("scale mismatch: producer {sp} vs consumer {sc} exceeds rel_tol {rel_tol}")
    } else {
        format!(
            "zero_point mismatch: producer {} vs consumer {}",
            producer.zero_point(),
            consumer.zero_point()
        )
    };
    Alignment { aligned, diagnostic }
}

/// Re-express a tensor under different parameters (dequantize-then-quantize).
/// Shape is preserved; requantizing to identical parameters is the identity.
pub fn requantize(t: &QuantTensor, target: QuantParams) -> QuantTensor {
    let s_in = t.params.scale();
    let s_out = target.scale();
    let z_in = t.params.zero_point() as i32;
    let z_out = target.zero_point() as f64;
    let data = t
        .data
        .iter()
        .map(|&q| {
            let real = (q as i32 - z_in) as f64 * s_in;
            (math::round(real / s_out) + z_out).clamp(i8::MIN as f64, i8::MAX as f64) as i8
        })
        .collect();
    QuantTensor { shape: t.shape.clone(), params: target, data }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(scale: f64, zp: i8) -> QuantParams {
        QuantParams::new(scale, zp).unwrap()
    }

    #[test]
    fn calibrate_span_0_to_25_5() {
        let p = calibrate_params(&[0.0, 12.0, 25.5]).unwrap();
        assert!((p.scale() - 0.1).abs() < 1e-12);
        assert_eq!(p.zero_point(), -128);
    }

    #[test]
    fn calibrate_all_zero_keeps_scale_positive() {
        let p = calibrate_params(&[0.0, 0.0, 0.0]).unwrap();
        assert!(p.scale() > 0.0);
    }

    #[test]
    fn calibrate_symmetric_span_hits_both_endpoints() {
        let p = calibrate_params(&[-1.0, 1.0]).unwrap();
        assert_eq!(p.quantize_value(1.0), 127);
        assert_eq!(p.quantize_value(-1.0), -128);
    }

    #[test]
    fn calibrate_empty_rejected() {
        assert_eq!(calibrate_params(&[]), Err(QuantError::EmptySamples));
    }

    #[test]
    fn calibrated_params_keep_samples_in_range() {
        let samples = [-3.2, -0.7, 0.0, 1.1, 9.9];
        let p = calibrate_params(&samples).unwrap();
        for &s in &samples {
            let q = p.quantize_value(s) as i32;
            assert!((-128..=127).contains(&q));
        }
    }

    #[test]
    fn zero_maps_to_zero_point() {
        for zp in [-128, -3, 0, 7, 127] {
            assert_eq!(params(0.37, zp).quantize_value(0.0), zp);
        }
    }

    #[test]
    fn quantize_arithmetic() {
        assert_eq!(params(0.1, 0).quantize_value(1.0), 10);
    }

    #[test]
    fn quantize_saturates() {
        assert_eq!(params(0.1, 0).quantize_value(1000.0), 127);
        assert_eq!(params(0.1, 0).quantize_value(-1000.0), -128);
    }

    #[test]
    fn dequantize_arithmetic() {
        let p = params(0.1, 0);
        assert_eq!(p.dequantize_value(p.zero_point()), 0.0);
        assert!((p.dequantize_value(10) - 1.0).abs() < 1e-7);
    }

    #[test]
    fn alignment_identical_params() {
        let p = params(0.1, 3);
        assert!(check_alignment(p, p, 0.0).aligned);
    }

    #[test]
    fn alignment_tolerates_tiny_scale_drift() {
        let a = params(0.1, 0);
        let b = params(0.1000001, 0);
        assert!(check_alignment(a, b, 1e-4).aligned);
        assert!(!check_alignment(a, b, 1e-9).aligned);
    }

    #[test]
    fn alignment_rejects_zero_point_mismatch() {
        let a = params(0.1, 3);
        let b = params(0.1, 4);
        let r = check_alignment(a, b, DEFAULT_ALIGNMENT_REL_TOL);
        assert!(!r.aligned);
        assert!(r.diagnostic.contains("zero_point"));
    }

    #[test]
    fn requantize_identity() {
        let p = params(0.07, -5);
        let t = QuantTensor::new(vec![4], p, vec![-128, -1, 3, 127]).unwrap();
        assert_eq!(requantize(&t, p).data, t.data);
    }

    #[test]
    fn requantize_halves_when_scale_doubles() {
        let t = QuantTensor::new(vec![1], params(0.1, 0), vec![10]).unwrap();
        assert_eq!(requantize(&t, params(0.2, 0)).data, vec![5]);
    }

    #[test]
    fn tensor_shape_must_match_data() {
        assert!(matches!(
            QuantTensor::new(vec![2, 3], params(0.1, 0), vec![0; 5]),
            Err(QuantError::ShapeMismatch { expected: 6, got: 5 })
        ));
    }

    proptest! {
        // dequantize(quantize(v)) within scale/2 for values inside the
        // representable range.
        #[test]
        fn round_trip_error_bounded(
            scale in 0.001f64..1.0,
            zp in -128i32..=127,
            v01 in 0.0f64..=1.0,
        ) {
            let p = params(scale, zp as i8);
            let lo = p.dequantize_value(i8::MIN) as f64;
            let hi = p.dequantize_value(i8::MAX) as f64;
            let v = (lo + v01 * (hi - lo)) as f32;
            let q = p.quantize_value(v);
            let back = p.dequantize_value(q);
            prop_assert!((back as f64 - v as f64).abs() <= scale / 2.0 + 1e-9);
        }

        // requantization error is bounded by half the target scale plus
        // saturation slack.
        #[test]
        fn requantize_error_bounded(
            s_in in 0.01f64..0.5,
            s_out in 0.01f64..0.5,
            z_in in -20i32..=20,
            z_out in -20i32..=20,
            q in -100i32..=100,
        ) {
            let src = params(s_in, z_in as i8);
            let dst = params(s_out, z_out as i8);
            let t = QuantTensor::new(vec![1], src, vec![q as i8]).unwrap();
            let out = requantize(&t, dst);
            let v_in = src.dequantize_value(q as i8) as f64;
            let v_out = dst.dequantize_value(out.data[0]) as f64;
            // saturation slack: the target range may not cover v_in
            let lo = dst.dequantize_value(i8::MIN) as f64;
            let hi = dst.dequantize_value(i8::MAX) as f64;
            let slack = if v_in < lo { lo - v_in } else if v_in > hi { v_in - hi } else { 0.0 };
            prop_assert!((v_out - v_in).abs() <= s_out / 2.0 + slack + 1e-9);
        }

        #[test]
        fn quantize_always_in_int8_range(v in -1e6f32..1e6, scale in 0.001f64..10.0, zp in -128i32..=127) {
            let p = params(scale, zp as i8);
            let q = p.quantize_value(v) as i32;
            prop_assert!((-128..=127).contains(&q));
        }
    }
}
