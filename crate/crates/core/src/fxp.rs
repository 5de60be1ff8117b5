//! Fixed-point values in a `<I, F>` format: `I` total bits of which `F` are
//! fractional. Only the operations the sketch datapath needs are provided:
//! quantization, saturating addition and conversion back to a real.

use std::fmt;

use crate::error::{config_err, usage_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FxpFormat {
    total_bits: u32,
    frac_bits: u32,
    signed: bool,
}

impl FxpFormat {
    /// Unsigned `<16, 7>`, the accumulator format of the polynomial SPEs.
    pub const Q16_7: FxpFormat = FxpFormat {
        total_bits: 16,
        frac_bits: 7,
        signed: false,
    };

    pub fn new(total_bits: u32, frac_bits: u32, signed: bool) -> Result<Self> {
        if frac_bits < 1 || frac_bits >= total_bits || total_bits > 64 {
            return Err(config_err!(
                "fixed-point format <{total_bits},{frac_bits}> needs 1 <= F < I <= 64"
            ));
        }
        Ok(Self {
            total_bits,
            frac_bits,
            signed,
        })
    }

    pub fn unsigned(total_bits: u32, frac_bits: u32) -> Result<Self> {
        Self::new(total_bits, frac_bits, false)
    }

    pub fn signed(total_bits: u32, frac_bits: u32) -> Result<Self> {
        Self::new(total_bits, frac_bits, true)
    }

    pub fn total_bits(&self) -> u32 {
        self.total_bits
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn is_signed(&self) -> bool {
        self.signed
    }

    /// Bits left of the binary point, excluding the sign bit.
    pub fn magnitude_int_bits(&self) -> u32 {
        self.total_bits - self.frac_bits - u32::from(self.signed)
    }

    pub fn min_raw(&self) -> i128 {
        if self.signed {
            -(1i128 << (self.total_bits - 1))
        } else {
            0
        }
    }

    pub fn max_raw(&self) -> i128 {
        if self.signed {
            (1i128 << (self.total_bits - 1)) - 1
        } else {
            (1i128 << self.total_bits) - 1
        }
    }

    /// Weight of one raw step, `2^-F`.
    pub fn lsb(&self) -> f64 {
        (-(self.frac_bits as f64)).exp2()
    }

    pub fn min_value(&self) -> f64 {
        self.min_raw() as f64 * self.lsb()
    }

    pub fn max_value(&self) -> f64 {
        self.max_raw() as f64 * self.lsb()
    }

    pub fn contains_raw(&self, raw: i128) -> bool {
        (self.min_raw()..=self.max_raw()).contains(&raw)
    }

    /// Clamp an exact integer sum into range, reporting whether it moved.
    pub fn saturate_raw(&self, raw: i128) -> (i128, bool) {
        if raw > self.max_raw() {
            (self.max_raw(), true)
        } else if raw < self.min_raw() {
            (self.min_raw(), true)
        } else {
            (raw, false)
        }
    }

    /// Saturating add on raw integers; the single source of truth for every
    /// accumulator in the crate.
    #[inline]
    pub fn add_raw_saturating(&self, a: i128, b: i128) -> (i128, bool) {
        self.saturate_raw(a + b)
    }

    /// Number of maximal sub-unity entries (`1 - 2^-F`) that can be summed
    /// without leaving the range: `2^(I-F)` unsigned, `2^(I-F-1)` signed.
    pub fn frame_budget(&self) -> u64 {
        1u64 << self.magnitude_int_bits().min(63)
    }

    /// Raw integer of an unclamped `round(x * 2^F)`, ties away from zero.
    fn scaled_round(&self, x: f64) -> f64 {
        (x * (self.frac_bits as f64).exp2()).round()
    }

    /// Pack a raw two's-complement value into the low `I` bits.
    pub fn to_bits(&self, raw: i128) -> u64 {
        let mask = if self.total_bits == 64 {
            u64::MAX
        } else {
            (1u64 << self.total_bits) - 1
        };
        (raw as u64) & mask
    }

    /// Inverse of [`FxpFormat::to_bits`], sign-extending for signed formats.
    pub fn from_bits(&self, bits: u64) -> i128 {
        let shift = 128 - self.total_bits;
        let wide = i128::from(bits) << shift;
        if self.signed {
            wide >> shift
        } else {
            ((wide as u128) >> shift) as i128
        }
    }
}

impl fmt::Display for FxpFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = if self.signed { "s" } else { "u" };
        write!(f, "{s}<{},{}>", self.total_bits, self.frac_bits)
    }
}

/// A raw integer interpreted under a fixed-point format.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FxpValue {
    raw: i128,
    format: FxpFormat,
}

/// Result of an arithmetic step that may clamp.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Saturating {
    pub value: FxpValue,
    pub saturated: bool,
}

impl FxpValue {
    pub fn from_raw(raw: i128, format: FxpFormat) -> Result<Self> {
        if !format.contains_raw(raw) {
            return Err(usage_err!("raw {raw} does not fit {format}"));
        }
        Ok(Self { raw, format })
    }

    pub fn zero(format: FxpFormat) -> Self {
        Self { raw: 0, format }
    }

    pub fn raw(&self) -> i128 {
        self.raw
    }

    pub fn format(&self) -> FxpFormat {
        self.format
    }

    /// Round to nearest (ties away from zero); out-of-range inputs saturate.
    /// NaN quantizes to zero and is reported as saturated.
    pub fn quantize(x: f64, format: FxpFormat) -> Saturating {
        if x.is_nan() {
            return Saturating {
                value: Self::zero(format),
                saturated: true,
            };
        }
        let scaled = format.scaled_round(x);
        let (raw, saturated) = if scaled > format.max_raw() as f64 {
            (format.max_raw(), true)
        } else if scaled < format.min_raw() as f64 {
            (format.min_raw(), true)
        } else {
            (scaled as i128, false)
        };
        Saturating {
            value: Self { raw, format },
            saturated,
        }
    }

    pub fn add_saturating(self, other: FxpValue) -> Result<Saturating> {
        if self.format != other.format {
            return Err(usage_err!(
                "cannot add {} and {} values",
                self.format,
                other.format
            ));
        }
        let (raw, saturated) = self.format.add_raw_saturating(self.raw, other.raw);
        Ok(Saturating {
            value: Self {
                raw,
                format: self.format,
            },
            saturated,
        })
    }

    /// Exact for formats up to 53 significant bits.
    pub fn to_real(&self) -> f64 {
        self.raw as f64 * self.format.lsb()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q16_7s() -> FxpFormat {
        FxpFormat::signed(16, 7).unwrap()
    }

    #[test]
    fn format_validation() {
        assert!(FxpFormat::unsigned(16, 0).is_err());
        assert!(FxpFormat::unsigned(7, 7).is_err());
        assert!(FxpFormat::unsigned(65, 7).is_err());
        assert!(FxpFormat::unsigned(64, 63).is_ok());
    }

    #[test]
    fn ranges() {
        let u = FxpFormat::Q16_7;
        assert_eq!(u.max_raw(), 65535);
        assert_eq!(u.max_value(), 512.0 - 1.0 / 128.0);
        let s = q16_7s();
        assert_eq!(s.min_value(), -256.0);
        assert_eq!(s.max_value(), 256.0 - 1.0 / 128.0);
        assert_eq!(u.frame_budget(), 512);
        assert_eq!(s.frame_budget(), 256);
    }

    #[test]
    fn quantize_examples() {
        let u = FxpFormat::Q16_7;
        assert_eq!(FxpValue::quantize(1.0, u).value.raw(), 128);
        assert_eq!(FxpValue::quantize(0.0, u).value.raw(), 0);
        assert_eq!(FxpValue::quantize(0.0, q16_7s()).value.raw(), 0);
        assert_eq!(FxpValue::quantize(0.004, u).value.raw(), 1);
        // ties go away from zero
        assert_eq!(FxpValue::quantize(0.5 / 128.0, u).value.raw(), 1);
        assert_eq!(FxpValue::quantize(-0.5 / 128.0, q16_7s()).value.raw(), -1);
    }

    #[test]
    fn quantize_saturates() {
        let u = FxpFormat::Q16_7;
        let q = FxpValue::quantize(600.0, u);
        assert!(q.saturated);
        assert_eq!(q.value.raw(), 65535);
        let q = FxpValue::quantize(-0.5, u);
        assert!(q.saturated);
        assert_eq!(q.value.raw(), 0);
        let q = FxpValue::quantize(-300.0, q16_7s());
        assert!(q.saturated);
        assert_eq!(q.value.raw(), -32768);
        assert!(!FxpValue::quantize(511.99, u).saturated);
    }

    #[test]
    fn add_examples() {
        let u = FxpFormat::Q16_7;
        let one = FxpValue::from_raw(128, u).unwrap();
        let sum = one.add_saturating(one).unwrap();
        assert_eq!((sum.value.raw(), sum.saturated), (256, false));

        let max = FxpValue::from_raw(65535, u).unwrap();
        let lsb = FxpValue::from_raw(1, u).unwrap();
        let sum = max.add_saturating(lsb).unwrap();
        assert_eq!((sum.value.raw(), sum.saturated), (65535, true));

        let s = q16_7s();
        let a = FxpValue::from_raw(-2, s).unwrap();
        let b = FxpValue::from_raw(5, s).unwrap();
        let sum = a.add_saturating(b).unwrap();
        assert_eq!((sum.value.raw(), sum.saturated), (3, false));
    }

    #[test]
    fn add_format_mismatch_is_usage_error() {
        let a = FxpValue::zero(FxpFormat::Q16_7);
        let b = FxpValue::zero(q16_7s());
        assert!(matches!(
            a.add_saturating(b),
            Err(crate::Error::Usage(_))
        ));
    }

    #[test]
    fn to_real_examples() {
        let u = FxpFormat::Q16_7;
        assert_eq!(FxpValue::from_raw(64, u).unwrap().to_real(), 0.5);
        assert_eq!(FxpValue::from_raw(0, u).unwrap().to_real(), 0.0);
    }

    #[test]
    fn from_raw_rejects_out_of_range() {
        assert!(FxpValue::from_raw(65536, FxpFormat::Q16_7).is_err());
        assert!(FxpValue::from_raw(-1, FxpFormat::Q16_7).is_err());
    }

    #[test]
    fn bits_round_trip_signed() {
        let s = q16_7s();
        assert_eq!(s.to_bits(-1), 0xFFFF);
        assert_eq!(s.from_bits(0xFFFF), -1);
        assert_eq!(s.from_bits(0x8000), -32768);
        assert_eq!(FxpFormat::Q16_7.from_bits(0xFFFF), 65535);
    }

    /// Rational oracle: x is drawn as an exact dyadic k / 2^40, so the
    /// reconstruction error can be compared in integers without touching
    /// the floating-point rounding path under test.
    #[test]
    fn round_trip_sweep_against_rational_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for fmt in [
            FxpFormat::Q16_7,
            q16_7s(),
            FxpFormat::unsigned(32, 20).unwrap(),
        ] {
            let lo = (fmt.min_value() * 2f64.powi(40)) as i128;
            let hi = (fmt.max_value() * 2f64.powi(40)) as i128;
            let f = fmt.frac_bits();
            for _ in 0..100_000 {
                let k: i128 = rng.random_range(lo..=hi);
                let x = k as f64 / 2f64.powi(40);
                let raw = FxpValue::quantize(x, fmt).value.raw();
                // |raw * 2^(40-F) - k| <= 2^(40-F-1)
                let err = (raw << (40 - f)) - k;
                assert!(err.abs() <= 1i128 << (40 - f - 1), "x={x} raw={raw}");
            }
        }
    }

    proptest! {
        #[test]
        fn add_commutes(a in 0i128..=65535, b in 0i128..=65535) {
            let u = FxpFormat::Q16_7;
            let x = FxpValue::from_raw(a, u).unwrap();
            let y = FxpValue::from_raw(b, u).unwrap();
            prop_assert_eq!(x.add_saturating(y).unwrap(), y.add_saturating(x).unwrap());
        }

        #[test]
        fn add_associates_without_saturation(a in -8000i128..8000, b in -8000i128..8000, c in -8000i128..8000) {
            let s = FxpFormat::signed(16, 7).unwrap();
            let (x, y, z) = (
                FxpValue::from_raw(a, s).unwrap(),
                FxpValue::from_raw(b, s).unwrap(),
                FxpValue::from_raw(c, s).unwrap(),
            );
            let l = x.add_saturating(y).unwrap().value.add_saturating(z).unwrap();
            let r = x.add_saturating(y.add_saturating(z).unwrap().value).unwrap();
            prop_assert_eq!(l.value, r.value);
        }

        #[test]
        fn saturation_flag_iff_out_of_range(a in -32768i128..=32767, b in -32768i128..=32767) {
            let s = FxpFormat::signed(16, 7).unwrap();
            let r = FxpValue::from_raw(a, s).unwrap()
                .add_saturating(FxpValue::from_raw(b, s).unwrap()).unwrap();
            let exact = a + b;
            prop_assert_eq!(r.saturated, !(-32768..=32767).contains(&exact));
        }

        #[test]
        fn quantize_error_bound(x in 0.0f64..511.99) {
            let u = FxpFormat::Q16_7;
            let q = FxpValue::quantize(x, u);
            prop_assert!(!q.saturated);
            prop_assert!((q.value.to_real() - x).abs() <= u.lsb() / 2.0);
        }
    }
}
