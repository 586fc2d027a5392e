//! Signed saturating fixed-point arithmetic.
//!
//! States are two's-complement integers of `total_bits` with `frac_bits`
//! fractional bits. Weights are integers of `weight_bits` sharing one global
//! power-of-two scale per matrix. All rescaling is by shifts with
//! round-half-to-even; every overflow saturates and is counted.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::problem::SparseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FxpFormat {
    total_bits: u32,
    frac_bits: u32,
}

impl FxpFormat {
    pub fn new(total_bits: u32, frac_bits: u32) -> Result<Self> {
        if !(2..=32).contains(&total_bits) || frac_bits >= total_bits {
            return Err(Error::InvalidArgument(format!(
                "fixed-point format needs 2 <= total_bits <= 32 and frac_bits < total_bits, \
                 got total {total_bits}, frac {frac_bits}"
            )));
        }
        Ok(Self {
            total_bits,
            frac_bits,
        })
    }

    /// 24-bit states with 6 fractional bits.
    pub const DEFAULT_STATE: FxpFormat = FxpFormat {
        total_bits: 24,
        frac_bits: 6,
    };

    pub fn total_bits(&self) -> u32 {
        self.total_bits
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn int_bits(&self) -> u32 {
        self.total_bits - self.frac_bits - 1
    }

    pub fn max_raw(&self) -> i64 {
        (1i64 << (self.total_bits - 1)) - 1
    }

    pub fn min_raw(&self) -> i64 {
        -(1i64 << (self.total_bits - 1))
    }

    /// Value of one raw unit.
    pub fn resolution(&self) -> f64 {
        (-(self.frac_bits as f64)).exp2()
    }

    pub fn max_value(&self) -> f64 {
        self.max_raw() as f64 * self.resolution()
    }

    /// Clamps to the representable range; the flag reports saturation.
    pub fn saturate(&self, raw: i128) -> (i64, bool) {
        let (lo, hi) = (self.min_raw() as i128, self.max_raw() as i128);
        if raw > hi {
            (hi as i64, true)
        } else if raw < lo {
            (lo as i64, true)
        } else {
            (raw as i64, false)
        }
    }

    pub fn to_real(&self, raw: i64) -> f64 {
        raw as f64 * self.resolution()
    }

    /// Nearest representable raw value (ties to even), saturated.
    pub fn quantize(&self, x: f64) -> (i64, bool) {
        if x.is_nan() {
            return (0, true);
        }
        let scaled = x * (self.frac_bits as f64).exp2();
        let r = scaled.round_ties_even();
        if r >= self.max_raw() as f64 {
            (self.max_raw(), r > self.max_raw() as f64)
        } else if r <= self.min_raw() as f64 {
            (self.min_raw(), r < self.min_raw() as f64)
        } else {
            (r as i64, false)
        }
    }
}

impl Default for FxpFormat {
    fn default() -> Self {
        Self::DEFAULT_STATE
    }
}

/// `Q<int>.<frac>`; the sign bit is implicit.
impl fmt::Display for FxpFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Q{}.{}", self.int_bits(), self.frac_bits)
    }
}

impl FromStr for FxpFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad fixed-point format {s:?}, expected Q<int>.<frac>"));
        let body = s.strip_prefix('Q').or_else(|| s.strip_prefix('q')).ok_or_else(bad)?;
        let (i, f) = body.split_once('.').ok_or_else(bad)?;
        let int_bits: u32 = i.parse().map_err(|_| bad())?;
        let frac_bits: u32 = f.parse().map_err(|_| bad())?;
        FxpFormat::new(int_bits + frac_bits + 1, frac_bits)
    }
}

impl Serialize for FxpFormat {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FxpFormat {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Round-half-to-even arithmetic right shift.
pub fn round_shift_right(v: i128, shift: u32) -> i128 {
    if shift == 0 {
        return v;
    }
    if shift >= 127 {
        // |v| < 2^126 in every caller, so the quotient rounds to zero
        return 0;
    }
    let q = v >> shift;
    let rem = v - (q << shift);
    let half = 1i128 << (shift - 1);
    if rem > half || (rem == half && q & 1 == 1) {
        q + 1
    } else {
        q
    }
}

/// Multiplies by `2^shift` (shift may be negative) with ties-to-even rounding.
pub fn rescale(v: i128, shift: i32) -> i128 {
    if shift >= 0 {
        let s = shift as u32;
        if v == 0 {
            0
        } else if s >= 126 || v.unsigned_abs() > (i128::MAX as u128) >> s {
            if v > 0 {
                i128::MAX
            } else {
                i128::MIN
            }
        } else {
            v << s
        }
    } else {
        round_shift_right(v, shift.unsigned_abs())
    }
}

pub fn sat_add(a: i64, b: i64, fmt: FxpFormat) -> (i64, bool) {
    fmt.saturate(a as i128 + b as i128)
}

pub fn sat_sub(a: i64, b: i64, fmt: FxpFormat) -> (i64, bool) {
    fmt.saturate(a as i128 - b as i128)
}

/// `a·b` where `b` carries `b_frac` fractional bits; result in `a`'s format.
pub fn sat_mul(a: i64, b: i64, b_frac: u32, fmt: FxpFormat) -> (i64, bool) {
    fmt.saturate(round_shift_right(a as i128 * b as i128, b_frac))
}

/// Arithmetic right shift by one (floors toward −∞).
pub fn shift_halve(raw: i64) -> i64 {
    raw >> 1
}

/// Left shift by one, saturating.
pub fn shift_double(raw: i64, fmt: FxpFormat) -> (i64, bool) {
    fmt.saturate((raw as i128) << 1)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FxpTensor {
    pub raw: Vec<i64>,
    pub format: FxpFormat,
}

impl FxpTensor {
    pub fn zeros(n: usize, format: FxpFormat) -> Self {
        Self {
            raw: vec![0; n],
            format,
        }
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn dequantize(&self) -> Vec<f64> {
        self.raw.iter().map(|&r| self.format.to_real(r)).collect()
    }
}

/// Quantizes `x`, returning the tensor and the number of saturated entries.
pub fn quantize_vector(x: &[f64], fmt: FxpFormat) -> (FxpTensor, u64) {
    let mut sat = 0;
    let raw = x
        .iter()
        .map(|&v| {
            let (r, s) = fmt.quantize(v);
            sat += s as u64;
            r
        })
        .collect();
    (FxpTensor { raw, format: fmt }, sat)
}

/// Sparse integer weights with value `raw · 2^scale_exp`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    raw: Vec<i64>,
    pub scale_exp: i32,
    pub weight_bits: u32,
}

impl QuantizedMatrix {
    /// Builds from raw CSR triplets. Entries must lie in the weight range.
    pub fn from_raw(
        n_rows: usize,
        n_cols: usize,
        entries: &[(usize, usize, i64)],
        scale_exp: i32,
        weight_bits: u32,
    ) -> Result<Self> {
        check_weight_bits(weight_bits)?;
        let lim = 1i64 << (weight_bits - 1);
        let mut sorted: Vec<_> = entries.iter().copied().filter(|e| e.2 != 0).collect();
        sorted.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; n_rows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut raw = Vec::with_capacity(sorted.len());
        for &(r, c, v) in &sorted {
            if r >= n_rows || c >= n_cols {
                return Err(Error::IndexOutOfRange {
                    row: r,
                    col: c,
                    n_rows,
                    n_cols,
                });
            }
            if v < -lim || v >= lim {
                return Err(Error::InvalidArgument(format!(
                    "raw weight {v} outside {weight_bits}-bit range"
                )));
            }
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            raw.push(v);
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            raw,
            scale_exp,
            weight_bits,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.raw.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[i64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.col_idx[span.clone()], &self.raw[span])
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.row_ptr[r + 1] - self.row_ptr[r]
    }

    pub fn col_nnz(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_cols];
        for &c in &self.col_idx {
            counts[c] += 1;
        }
        counts
    }

    pub fn weight(&self, raw: i64) -> f64 {
        raw as f64 * (self.scale_exp as f64).exp2()
    }

    pub fn dequantize(&self) -> SparseMatrix {
        let mut t = Vec::with_capacity(self.nnz());
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                t.push((r, c, self.weight(v)));
            }
        }
        SparseMatrix::from_triplets(self.n_rows, self.n_cols, t).expect("indices already checked")
    }

    /// Same weights, transposed.
    pub fn transpose(&self) -> Self {
        let mut t = Vec::with_capacity(self.nnz());
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                t.push((c, r, v));
            }
        }
        Self::from_raw(self.n_cols, self.n_rows, &t, self.scale_exp, self.weight_bits)
            .expect("transpose preserves ranges")
    }
}

fn check_weight_bits(weight_bits: u32) -> Result<()> {
    if !(2..=32).contains(&weight_bits) {
        return Err(Error::InvalidArgument(format!(
            "weight_bits must be in 2..=32, got {weight_bits}"
        )));
    }
    Ok(())
}

/// Smallest `e` with `max_abs / 2^e ≤ 2^(weight_bits−1) − 1`.
pub fn weight_scale_exp(max_abs: f64, weight_bits: u32) -> i32 {
    if !(max_abs > 0.0) || !max_abs.is_finite() {
        return 0;
    }
    let lim = ((1u64 << (weight_bits - 1)) - 1) as f64;
    let mut e = (max_abs / lim).log2().ceil() as i32;
    // correct for log2 rounding at exact powers of two
    while max_abs / (e as f64).exp2() > lim {
        e += 1;
    }
    while max_abs / ((e - 1) as f64).exp2() <= lim {
        e -= 1;
    }
    e
}

/// Quantizes with one global power-of-two scale. Entries rounding to zero are
/// dropped from the pattern.
pub fn quantize_matrix(m: &SparseMatrix, weight_bits: u32) -> Result<QuantizedMatrix> {
    check_weight_bits(weight_bits)?;
    let e = weight_scale_exp(m.max_abs(), weight_bits);
    let inv = (-(e as f64)).exp2();
    let entries: Vec<_> = m
        .iter()
        .map(|(r, c, v)| (r, c, (v * inv).round_ties_even() as i64))
        .collect();
    QuantizedMatrix::from_raw(m.n_rows(), m.n_cols(), &entries, e, weight_bits)
}

/// Work done by one [`fxp_spmv`] call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpmvStats {
    pub macs: u64,
    pub saturations: u64,
}

/// `m · x` accumulated exactly in 128-bit integers and rounded once into
/// `out_fmt`. Zero inputs cost no multiply-accumulates.
pub fn fxp_spmv(m: &QuantizedMatrix, x: &FxpTensor, out_fmt: FxpFormat) -> Result<(FxpTensor, SpmvStats)> {
    if x.len() != m.n_cols() {
        return Err(Error::DimensionMismatch {
            what: "fixed-point spmv input".into(),
            expected: m.n_cols(),
            found: x.len(),
        });
    }
    let mut out = FxpTensor::zeros(m.n_rows(), out_fmt);
    let stats = fxp_spmv_into(m, x, &mut out, None);
    Ok((out, stats))
}

/// [`fxp_spmv`] into a preallocated output; `row_macs[r]` is incremented by
/// the MACs row `r` performs. Dimensions are the caller's responsibility.
pub fn fxp_spmv_into(
    m: &QuantizedMatrix,
    x: &FxpTensor,
    out: &mut FxpTensor,
    mut row_macs: Option<&mut [u64]>,
) -> SpmvStats {
    let shift = m.scale_exp - x.format.frac_bits as i32 + out.format.frac_bits as i32;
    let mut stats = SpmvStats::default();
    for r in 0..m.n_rows {
        let (cols, vals) = m.row(r);
        let mut acc: i128 = 0;
        let mut macs = 0u64;
        for (&c, &w) in cols.iter().zip(vals) {
            let xv = x.raw[c];
            if xv != 0 {
                acc += w as i128 * xv as i128;
                macs += 1;
            }
        }
        let (v, sat) = out.format.saturate(rescale(acc, shift));
        out.raw[r] = v;
        stats.saturations += sat as u64;
        stats.macs += macs;
        if let Some(rm) = row_macs.as_deref_mut() {
            rm[r] += macs;
        }
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use num::bigint::BigInt;
    use num::rational::BigRational;
    use num::{One, Signed, ToPrimitive, Zero};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn q(total: u32, frac: u32) -> FxpFormat {
        FxpFormat::new(total, frac).unwrap()
    }

    #[test]
    fn format_parse_and_display() {
        let f: FxpFormat = "Q17.6".parse().unwrap();
        assert_eq!((f.total_bits(), f.frac_bits()), (24, 6));
        assert_eq!(f.to_string(), "Q17.6");
        assert!("Q40.1".parse::<FxpFormat>().is_err());
        assert!("17.6".parse::<FxpFormat>().is_err());
        assert!(FxpFormat::new(1, 0).is_err());
        assert!(FxpFormat::new(8, 8).is_err());
    }

    #[test]
    fn quantize_vector_examples() {
        let f = q(8, 7);
        assert_eq!(quantize_vector(&[0.5], f).0.raw, vec![64]);
        let (t, sat) = quantize_vector(&[1.0], f);
        assert_eq!((t.raw[0], sat), (127, 1));
        assert_eq!(quantize_vector(&[0.0], FxpFormat::default()).0.raw, vec![0]);
    }

    #[test]
    fn ties_round_to_even() {
        let f = q(16, 0);
        let raws = quantize_vector(&[0.5, 1.5, 2.5, -0.5, -1.5], f).0.raw;
        assert_eq!(raws, vec![0, 2, 2, 0, -2]);
        assert_eq!(round_shift_right(3, 1), 2);
        assert_eq!(round_shift_right(5, 1), 2);
        assert_eq!(round_shift_right(-3, 1), -2);
        assert_eq!(round_shift_right(-5, 1), -2);
        assert_eq!(round_shift_right(7, 2), 2);
    }

    #[test]
    fn quantize_matrix_scale_rule() {
        let m = SparseMatrix::from_dense(&[vec![1.0]]).unwrap();
        let qm = quantize_matrix(&m, 8).unwrap();
        assert_eq!(qm.scale_exp, -6);
        assert_eq!(qm.row(0).1, &[64]);
        assert_eq!(qm.dequantize().get(0, 0), 1.0);

        let z = quantize_matrix(&SparseMatrix::zeros(3, 3), 8).unwrap();
        assert_eq!((z.scale_exp, z.nnz()), (0, 0));
    }

    #[test]
    fn tiny_entries_drop_out_of_pattern() {
        let m = SparseMatrix::from_dense(&[vec![1.0, 1e-6], vec![0.0, 0.5]]).unwrap();
        let qm = quantize_matrix(&m, 8).unwrap();
        assert_eq!(qm.nnz(), 2);
        assert_eq!(qm.dequantize().get(0, 1), 0.0);
    }

    #[test]
    fn spmv_examples() {
        let f = FxpFormat::default();
        let id = quantize_matrix(&SparseMatrix::identity(2), 8).unwrap();
        let x = FxpTensor {
            raw: vec![100, -3],
            format: f,
        };
        assert_eq!(fxp_spmv(&id, &x, f).unwrap().0.raw, vec![100, -3]);

        let (y, st) = fxp_spmv(&id, &FxpTensor::zeros(2, f), f).unwrap();
        assert_eq!((y.raw, st.macs), (vec![0, 0], 0));

        let two = QuantizedMatrix::from_raw(2, 2, &[(0, 0, 2), (1, 1, 2)], 0, 8).unwrap();
        let f16 = q(24, 7);
        let (x, _) = quantize_vector(&[1.0, 2.0], f16);
        assert_eq!(fxp_spmv(&two, &x, f16).unwrap().0.dequantize(), vec![2.0, 4.0]);

        assert!(fxp_spmv(&two, &FxpTensor::zeros(3, f), f).is_err());
    }

    #[test]
    fn shifts() {
        let f = FxpFormat::default();
        assert_eq!(shift_halve(1024), 512);
        assert_eq!(shift_halve(1), 0);
        assert_eq!(shift_halve(-1), -1);
        assert_eq!(shift_double(f.max_raw(), f), (f.max_raw(), true));
        assert_eq!(shift_double(3, f), (6, false));
    }

    fn big_exp2(e: i32) -> BigRational {
        let two = BigRational::from_integer(BigInt::from(2));
        if e >= 0 {
            num::pow(two, e as usize)
        } else {
            BigRational::one() / num::pow(two, (-e) as usize)
        }
    }

    /// Exact rational value rounded once to the output grid, ties to even.
    fn oracle_round(v: &BigRational, out: FxpFormat) -> i64 {
        let scaled = v * big_exp2(out.frac_bits() as i32);
        let fl = scaled.floor();
        let frac = &scaled - &fl;
        let half = BigRational::new(BigInt::one(), BigInt::from(2));
        let mut r = fl.to_integer();
        let odd = (&r % BigInt::from(2)).abs() == BigInt::one();
        if frac > half || (frac == half && odd) {
            r += 1;
        }
        let r = r.to_i128().unwrap_or(if r.is_negative() { i128::MIN } else { i128::MAX });
        out.saturate(r).0
    }

    #[test]
    fn spmv_matches_rational_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..50 {
            let in_fmt = q(24, rng.random_range(0..20));
            let out_fmt = q(24, rng.random_range(0..20));
            let mut entries = Vec::new();
            for r in 0..16 {
                for c in 0..16 {
                    if rng.random_bool(0.4) {
                        entries.push((r, c, rng.random_range(-128i64..128)));
                    }
                }
            }
            let m = QuantizedMatrix::from_raw(16, 16, &entries, rng.random_range(-10..4), 8).unwrap();
            let x = FxpTensor {
                raw: (0..16).map(|_| rng.random_range(-(1i64 << 20)..(1 << 20))).collect(),
                format: in_fmt,
            };
            let (y, _) = fxp_spmv(&m, &x, out_fmt).unwrap();
            for r in 0..16 {
                let (cols, vals) = m.row(r);
                let mut exact = BigRational::zero();
                for (&c, &w) in cols.iter().zip(vals) {
                    exact += BigRational::from_integer(BigInt::from(w * x.raw[c]));
                }
                exact *= big_exp2(m.scale_exp - in_fmt.frac_bits() as i32);
                assert_eq!(y.raw[r], oracle_round(&exact, out_fmt), "trial {trial} row {r}");
            }
        }
    }

    proptest! {
        #[test]
        fn saturating_ops_are_monotone(a in -(1i64<<23)..(1i64<<23), d in 0i64..(1<<22), c in -(1i64<<23)..(1i64<<23)) {
            let f = FxpFormat::default();
            let b = f.saturate(a as i128 + d as i128).0;
            prop_assert!(sat_add(a, c, f).0 <= sat_add(b, c, f).0);
            prop_assert!(sat_sub(a, c, f).0 <= sat_sub(b, c, f).0);
            if c >= 0 {
                prop_assert!(sat_mul(a, c, 6, f).0 <= sat_mul(b, c, 6, f).0);
            }
        }

        #[test]
        fn quantization_is_idempotent(xs in proptest::collection::vec(-1e6f64..1e6, 1..32), frac in 0u32..20) {
            let f = q(24, frac);
            let (t, _) = quantize_vector(&xs, f);
            let (t2, sat) = quantize_vector(&t.dequantize(), f);
            prop_assert_eq!(t2, t);
            prop_assert_eq!(sat, 0);
        }

        #[test]
        fn quantization_error_is_half_ulp(x in -1000.0f64..1000.0, frac in 0u32..12) {
            let f = q(24, frac);
            let (r, sat) = f.quantize(x);
            prop_assert!(!sat);
            prop_assert!((f.to_real(r) - x).abs() <= f.resolution() / 2.0 + 1e-12);
        }

        #[test]
        fn matrix_dequantization_error(vals in proptest::collection::vec(-50.0f64..50.0, 1..40), bits in 4u32..17) {
            let n = vals.len();
            let m = SparseMatrix::from_triplets(n, 1, vals.iter().enumerate().map(|(i, &v)| (i, 0, v))).unwrap();
            let qm = quantize_matrix(&m, bits).unwrap();
            let back = qm.dequantize();
            let half = (qm.scale_exp as f64 - 1.0).exp2();
            for (i, &v) in vals.iter().enumerate() {
                prop_assert!((back.get(i, 0) - v).abs() <= half * (1.0 + 1e-12));
            }
            if m.max_abs() > 0.0 {
                let imax = vals.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).unwrap().0;
                let rel = (back.get(imax, 0) - vals[imax]).abs() / vals[imax].abs();
                // worst case sits just above the scale boundary, at 2^(w−2) − ½ raw units
                prop_assert!(rel <= 1.0 / (((1u64 << (bits - 1)) - 1) as f64));
            }
        }

        /// Float-vs-fixed error of a quantized spmv. Beyond the per-product
        /// weight and state terms this includes the final output rounding.
        #[test]
        fn spmv_error_bound(
            rows in proptest::collection::vec(proptest::collection::vec(-4.0f64..4.0, 8), 1..8),
            x in proptest::collection::vec(-100.0f64..100.0, 8),
            bits in 6u32..17,
        ) {
            let m = SparseMatrix::from_dense(&rows).unwrap();
            let sfmt = q(24, 8);
            let qm = quantize_matrix(&m, bits).unwrap();
            let (xq, _) = quantize_vector(&x, sfmt);
            let (y, st) = fxp_spmv(&qm, &xq, sfmt).unwrap();
            prop_assert_eq!(st.saturations, 0);
            let exact = m.spmv(&x).unwrap();
            let weight_err = (qm.scale_exp as f64 - 1.0).exp2();
            let state_err = sfmt.resolution() / 2.0;
            let x_inf = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            for r in 0..m.n_rows() {
                let (_, vals) = m.row(r);
                let nnz = vals.len().max(1) as f64;
                let row_l1: f64 = vals.iter().map(|v| v.abs()).sum();
                let bound = nnz * (weight_err * x_inf + state_err * row_l1)
                    + nnz * weight_err * state_err
                    + state_err;
                prop_assert!((y.dequantize()[r] - exact[r]).abs() <= bound + 1e-9);
            }
        }
    }
}
