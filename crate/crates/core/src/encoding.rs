//! Bit-exact wire format for compressed vectors.
//!
//! Bits are written most-significant-bit first and packed into bytes with
//! zero padding at the tail. A quantized block is laid out as
//!
//! ```text
//! magnitude   31 bits   f32 bit pattern without the sign bit
//! n0          ceil(log2(d_b + 1)) bits, number of zero levels
//! positions   ceil(log2 C(d_b, n0)) bits, colex rank of the zero set
//! signs       d_b - n0 bits, 1 = negative, in coordinate order
//! levels      unary (k-1 ones then a zero) or Elias omega, per nonzero
//! ```
//!
//! Blocks follow each other in order. Block sizes and steps are shared once
//! before training and are not part of the message.

use std::fmt;
use std::sync::{OnceLock, RwLock};

use num_bigint::BigUint;
use num_traits::{One, Zero};
use serde::Serialize;

use crate::compressors::{Compressed, Compressor, QuantizedVector, SparseVector};
use crate::error::{Error, Result};

/// Bits used for a block magnitude.
pub const MAGNITUDE_BITS: usize = 31;
/// Bits per sparsifier value (full single precision).
pub const SPARSE_VALUE_BITS: usize = 32;
/// Bits per dense coordinate (full double precision, lossless).
pub const DENSE_VALUE_BITS: usize = 64;

const LEVEL_LIMIT: u64 = 1 << 63;

/// Growable bit string, MSB-first within each byte.
#[derive(Clone, Default, PartialEq, Eq)]
pub struct BitString {
    bytes: Vec<u8>,
    len: usize,
}

impl BitString {
    pub fn new() -> Self {
        Self::default()
    }

    /// Wraps `bytes`, keeping only the first `len` bits.
    pub fn from_bytes(bytes: Vec<u8>, len: usize) -> Result<Self> {
        if len > bytes.len() * 8 {
            return Err(Error::TruncatedPayload(bytes.len() * 8));
        }
        let mut s = Self { bytes, len };
        s.bytes.truncate(len.div_ceil(8));
        if !len.is_multiple_of(8) {
            let last = s.bytes.len() - 1;
            s.bytes[last] &= 0xFFu8 << (8 - len % 8);
        }
        Ok(s)
    }

    /// Parses a string of `0`/`1` characters; other characters are skipped.
    pub fn parse(text: &str) -> Self {
        let mut s = Self::new();
        for c in text.chars() {
            match c {
                '0' => s.push(false),
                '1' => s.push(true),
                _ => {}
            }
        }
        s
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn get(&self, i: usize) -> Option<bool> {
        (i < self.len).then(|| self.bytes[i / 8] & (0x80 >> (i % 8)) != 0)
    }

    pub fn flip(&mut self, i: usize) {
        assert!(i < self.len);
        self.bytes[i / 8] ^= 0x80 >> (i % 8);
    }

    pub fn push(&mut self, bit: bool) {
        if self.len.is_multiple_of(8) {
            self.bytes.push(0);
        }
        if bit {
            let last = self.bytes.len() - 1;
            self.bytes[last] |= 0x80 >> (self.len % 8);
        }
        self.len += 1;
    }

    /// Appends the low `width` bits of `value`, most significant first.
    pub fn push_bits(&mut self, value: u64, width: usize) {
        debug_assert!(width <= 64);
        for i in (0..width).rev() {
            self.push((value >> i) & 1 == 1);
        }
    }

    pub fn push_u128(&mut self, value: u128, width: usize) {
        debug_assert!(width <= 128);
        for i in (0..width).rev() {
            self.push((value >> i) & 1 == 1);
        }
    }

    pub fn push_big(&mut self, value: &BigUint, width: usize) {
        for i in (0..width as u64).rev() {
            self.push(value.bit(i));
        }
    }

    pub fn push_ones(&mut self, count: u64) {
        for _ in 0..count {
            self.push(true);
        }
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.len {
            f.write_str(if self.get(i).unwrap() { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitString({} bits: {})", self.len, self)
    }
}

pub struct BitReader<'a> {
    bits: &'a BitString,
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(bits: &'a BitString) -> Self {
        Self { bits, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.bits.len() - self.pos
    }

    pub fn read_bit(&mut self) -> Result<bool> {
        let b = self.bits.get(self.pos).ok_or(Error::TruncatedPayload(self.pos))?;
        self.pos += 1;
        Ok(b)
    }

    pub fn read_bits(&mut self, width: usize) -> Result<u64> {
        debug_assert!(width <= 64);
        if self.remaining() < width {
            return Err(Error::TruncatedPayload(self.bits.len()));
        }
        let mut v = 0u64;
        for _ in 0..width {
            v = (v << 1) | u64::from(self.read_bit()?);
        }
        Ok(v)
    }

    pub fn read_u128(&mut self, width: usize) -> Result<u128> {
        if self.remaining() < width {
            return Err(Error::TruncatedPayload(self.bits.len()));
        }
        let mut v = 0u128;
        for _ in 0..width {
            v = (v << 1) | u128::from(self.read_bit()?);
        }
        Ok(v)
    }

    pub fn read_big(&mut self, width: usize) -> Result<BigUint> {
        if self.remaining() < width {
            return Err(Error::TruncatedPayload(self.bits.len()));
        }
        let mut v = BigUint::zero();
        for i in (0..width as u64).rev() {
            if self.read_bit()? {
                v.set_bit(i, true);
            }
        }
        Ok(v)
    }
}

/// Number of bits needed to write any value in `0..count` (0 when `count <= 1`).
fn width_for_count(count: u64) -> usize {
    if count <= 1 {
        0
    } else {
        (64 - (count - 1).leading_zeros()) as usize
    }
}

/// Width of the `n0` field for a block of `size` coordinates.
pub fn count_field_width(size: usize) -> usize {
    width_for_count(size as u64 + 1)
}

// Binomial tables: u128 up to n = 127, BigUint beyond.
const SMALL_N: usize = 128;

fn small_binomials() -> &'static [[u128; SMALL_N]] {
    static TABLE: OnceLock<Vec<[u128; SMALL_N]>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = vec![[0u128; SMALL_N]; SMALL_N];
        for n in 0..SMALL_N {
            t[n][0] = 1;
            for k in 1..=n {
                t[n][k] = t[n - 1][k - 1] + if k < n { t[n - 1][k] } else { 0 };
            }
        }
        t
    })
}

fn big_binomial_rows(upto: usize) -> std::sync::RwLockReadGuard<'static, Vec<Vec<BigUint>>> {
    static TABLE: OnceLock<RwLock<Vec<Vec<BigUint>>>> = OnceLock::new();
    let lock = TABLE.get_or_init(|| RwLock::new(vec![vec![BigUint::one()]]));
    {
        let r = lock.read().unwrap();
        if r.len() > upto {
            return r;
        }
    }
    {
        let mut w = lock.write().unwrap();
        while w.len() <= upto {
            let prev = w.last().unwrap().clone();
            let n = prev.len();
            let mut row = Vec::with_capacity(n + 1);
            row.push(BigUint::one());
            for k in 1..n {
                row.push(&prev[k - 1] + &prev[k]);
            }
            row.push(BigUint::one());
            w.push(row);
        }
    }
    lock.read().unwrap()
}

/// Width of the colex rank of a `k`-subset of `0..n`: `ceil(log2 C(n, k))`.
pub fn subset_rank_width(n: usize, k: usize) -> usize {
    if k == 0 || k >= n {
        return 0;
    }
    if n < SMALL_N {
        let c = small_binomials()[n][k];
        if c <= 1 { 0 } else { (128 - (c - 1).leading_zeros()) as usize }
    } else {
        let rows = big_binomial_rows(n);
        let c = &rows[n][k];
        if c.is_one() { 0 } else { (c - 1u32).bits() as usize }
    }
}

fn binom_small(n: usize, k: usize) -> u128 {
    if k > n { 0 } else { small_binomials()[n][k] }
}

/// Writes the colex rank `sum_i C(c_i, i + 1)` of the sorted subset.
fn write_subset_rank(out: &mut BitString, n: usize, subset: &[usize]) {
    let k = subset.len();
    let width = subset_rank_width(n, k);
    if width == 0 {
        return;
    }
    if n < SMALL_N {
        let rank: u128 = subset.iter().enumerate().map(|(i, &c)| binom_small(c, i + 1)).sum();
        out.push_u128(rank, width);
    } else {
        let rows = big_binomial_rows(n);
        let mut rank = BigUint::zero();
        for (i, &c) in subset.iter().enumerate() {
            if i < c {
                rank += &rows[c][i + 1];
            }
        }
        out.push_big(&rank, width);
    }
}

/// Inverse of [`write_subset_rank`]; returns the subset in ascending order.
fn read_subset_rank(reader: &mut BitReader<'_>, n: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Ok(Vec::new());
    }
    if k == n {
        return Ok((0..n).collect());
    }
    let width = subset_rank_width(n, k);
    let mut subset = vec![0usize; k];
    if n < SMALL_N {
        let mut rank = reader.read_u128(width)?;
        if rank >= binom_small(n, k) {
            return Err(Error::MalformedPayload("subset rank out of range".into()));
        }
        let mut c = n;
        for i in (1..=k).rev() {
            c -= 1;
            while binom_small(c, i) > rank {
                c -= 1;
            }
            rank -= binom_small(c, i);
            subset[i - 1] = c;
        }
    } else {
        let mut rank = reader.read_big(width)?;
        let rows = big_binomial_rows(n);
        if rank >= rows[n][k] {
            return Err(Error::MalformedPayload("subset rank out of range".into()));
        }
        let binom = |c: usize, i: usize| -> BigUint { if i > c { BigUint::zero() } else { rows[c][i].clone() } };
        let mut c = n;
        for i in (1..=k).rev() {
            c -= 1;
            while binom(c, i) > rank {
                c -= 1;
            }
            rank -= binom(c, i);
            subset[i - 1] = c;
        }
    }
    Ok(subset)
}

fn elias_omega_write(out: &mut BitString, k: u64) {
    let mut groups = Vec::new();
    let mut n = k;
    while n > 1 {
        groups.push(n);
        n = 63 - u64::from(n.leading_zeros());
    }
    for &g in groups.iter().rev() {
        out.push_bits(g, 64 - g.leading_zeros() as usize);
    }
    out.push(false);
}

fn elias_omega_len(k: u64) -> usize {
    let mut len = 1;
    let mut n = k;
    while n > 1 {
        let bits = 64 - n.leading_zeros() as usize;
        len += bits;
        n = bits as u64 - 1;
    }
    len
}

fn elias_omega_read(reader: &mut BitReader<'_>) -> Result<u64> {
    let mut n: u64 = 1;
    loop {
        if !reader.read_bit()? {
            return Ok(n);
        }
        if n >= 64 {
            return Err(Error::MalformedPayload("Elias omega group wider than 64 bits".into()));
        }
        let rest = reader.read_bits(n as usize)?;
        n = (1u64 << n) | rest;
    }
}

/// Standard Elias omega codeword for `k >= 1`.
pub fn elias_omega_encode(k: u64) -> Result<BitString> {
    if k == 0 {
        return Err(Error::ZeroInput);
    }
    let mut out = BitString::new();
    elias_omega_write(&mut out, k);
    Ok(out)
}

/// Decodes one codeword, which must span the whole string.
pub fn elias_omega_decode(bits: &BitString) -> Result<u64> {
    let mut r = BitReader::new(bits);
    let v = elias_omega_read(&mut r)?;
    if r.remaining() != 0 {
        return Err(Error::MalformedPayload("trailing bits after codeword".into()));
    }
    Ok(v)
}

/// Integer code for nonzero quantization levels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LevelCoding {
    /// `k` bits: `k - 1` ones followed by a zero.
    #[default]
    Unary,
    EliasOmega,
}

impl LevelCoding {
    fn len(self, k: u64) -> usize {
        match self {
            LevelCoding::Unary => k as usize,
            LevelCoding::EliasOmega => elias_omega_len(k),
        }
    }
}

impl std::str::FromStr for LevelCoding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unary" => Ok(Self::Unary),
            "elias-omega" | "elias_omega" => Ok(Self::EliasOmega),
            other => Err(Error::InvalidParameter(format!("unknown level coding `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct BitBreakdown {
    pub magnitude_bits: usize,
    /// The `n0` count field plus the subset rank.
    pub position_bits: usize,
    pub sign_bits: usize,
    pub level_bits: usize,
}

impl BitBreakdown {
    pub fn total(&self) -> usize {
        self.magnitude_bits + self.position_bits + self.sign_bits + self.level_bits
    }
}

impl std::ops::AddAssign for BitBreakdown {
    fn add_assign(&mut self, o: Self) {
        self.magnitude_bits += o.magnitude_bits;
        self.position_bits += o.position_bits;
        self.sign_bits += o.sign_bits;
        self.level_bits += o.level_bits;
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedMessage {
    pub payload: BitString,
    pub bit_count: usize,
    pub breakdown: BitBreakdown,
}

fn magnitude_pattern(mag: f64) -> Result<u64> {
    if !mag.is_finite() {
        return Err(Error::NonFiniteMagnitude(mag));
    }
    let single = mag as f32;
    if mag < 0.0 || single as f64 != mag {
        return Err(Error::InvalidParameter(format!("magnitude {mag} is not a nonnegative f32 value")));
    }
    Ok(u64::from(single.to_bits() & 0x7FFF_FFFF))
}

fn validate_levels(q: &QuantizedVector) -> Result<()> {
    for (&k, &s) in q.levels.iter().zip(&q.signs) {
        if k > LEVEL_LIMIT {
            return Err(Error::LevelOverflow(k));
        }
        if (k == 0) != (s == 0) {
            return Err(Error::InvalidParameter("sign and level disagree on zero".into()));
        }
    }
    Ok(())
}

/// Exact bit counts of [`encode_quantized`] without building the payload.
pub fn quantized_bit_count(q: &QuantizedVector, coding: LevelCoding) -> Result<BitBreakdown> {
    validate_levels(q)?;
    let mut b = BitBreakdown::default();
    for l in 0..q.num_blocks() {
        magnitude_pattern(q.magnitudes[l])?;
        let range = q.block_range(l);
        let size = range.len();
        let nonzero = q.levels[range.clone()].iter().filter(|&&k| k != 0).count();
        b.magnitude_bits += MAGNITUDE_BITS;
        b.position_bits += count_field_width(size) + subset_rank_width(size, size - nonzero);
        b.sign_bits += nonzero;
        b.level_bits += q.levels[range].iter().filter(|&&k| k != 0).map(|&k| coding.len(k)).sum::<usize>();
    }
    Ok(b)
}

pub fn encode_quantized(q: &QuantizedVector, coding: LevelCoding) -> Result<EncodedMessage> {
    let breakdown = quantized_bit_count(q, coding)?;
    let mut out = BitString::new();
    for l in 0..q.num_blocks() {
        let range = q.block_range(l);
        let size = range.len();
        out.push_bits(magnitude_pattern(q.magnitudes[l])?, MAGNITUDE_BITS);
        let zeros: Vec<usize> = range.clone().filter(|&j| q.levels[j] == 0).map(|j| j - range.start).collect();
        out.push_bits(zeros.len() as u64, count_field_width(size));
        write_subset_rank(&mut out, size, &zeros);
        for j in range.clone() {
            if q.levels[j] != 0 {
                out.push(q.signs[j] < 0);
            }
        }
        for j in range {
            let k = q.levels[j];
            if k != 0 {
                match coding {
                    LevelCoding::Unary => {
                        out.push_ones(k - 1);
                        out.push(false);
                    }
                    LevelCoding::EliasOmega => elias_omega_write(&mut out, k),
                }
            }
        }
    }
    debug_assert_eq!(out.len(), breakdown.total());
    Ok(EncodedMessage { bit_count: out.len(), payload: out, breakdown })
}

fn read_level(reader: &mut BitReader<'_>, coding: LevelCoding) -> Result<u64> {
    match coding {
        LevelCoding::Unary => {
            let mut k = 1u64;
            while reader.read_bit()? {
                k += 1;
                if k > LEVEL_LIMIT {
                    return Err(Error::LevelOverflow(k));
                }
            }
            Ok(k)
        }
        LevelCoding::EliasOmega => elias_omega_read(reader),
    }
}

/// Inverse of [`encode_quantized`]; `steps` has one entry per coordinate.
pub fn decode_quantized(
    payload: &BitString,
    dim: usize,
    sizes: &[usize],
    steps: &[f64],
    coding: LevelCoding,
) -> Result<QuantizedVector> {
    let sum: usize = sizes.iter().sum();
    if sum != dim || sizes.contains(&0) {
        return Err(Error::BlockSizesMismatch { sum, dim });
    }
    if steps.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: steps.len() });
    }
    let mut r = BitReader::new(payload);
    let mut block_starts = Vec::with_capacity(sizes.len());
    let mut magnitudes = Vec::with_capacity(sizes.len());
    let mut signs = vec![0i8; dim];
    let mut levels = vec![0u64; dim];
    let mut start = 0;
    for &size in sizes {
        block_starts.push(start);
        let pattern = r.read_bits(MAGNITUDE_BITS)? as u32;
        let mag = f32::from_bits(pattern);
        if !mag.is_finite() {
            return Err(Error::MalformedPayload("non-finite magnitude".into()));
        }
        magnitudes.push(mag as f64);
        let n0 = r.read_bits(count_field_width(size))? as usize;
        if n0 > size {
            return Err(Error::MalformedPayload(format!("zero count {n0} exceeds block size {size}")));
        }
        let zeros = read_subset_rank(&mut r, size, n0)?;
        let mut is_zero = vec![false; size];
        for &z in &zeros {
            is_zero[z] = true;
        }
        for off in 0..size {
            if !is_zero[off] {
                signs[start + off] = if r.read_bit()? { -1 } else { 1 };
            }
        }
        for off in 0..size {
            if !is_zero[off] {
                levels[start + off] = read_level(&mut r, coding)?;
            }
        }
        start += size;
    }
    if r.remaining() != 0 {
        return Err(Error::MalformedPayload(format!("{} trailing bits", r.remaining())));
    }
    Ok(QuantizedVector { dim, block_starts, magnitudes, signs, levels, steps: steps.to_vec() })
}

pub fn encode_sparse(s: &SparseVector) -> Result<EncodedMessage> {
    let mut out = BitString::new();
    let k = s.indices.len();
    out.push_bits(k as u64, count_field_width(s.dim));
    write_subset_rank(&mut out, s.dim, &s.indices);
    let position_bits = out.len();
    for &v in &s.values {
        let single = v as f32;
        if !v.is_finite() || single as f64 != v {
            return Err(Error::InvalidParameter(format!("sparse value {v} is not an f32 value")));
        }
        out.push_bits(u64::from(single.to_bits()), SPARSE_VALUE_BITS);
    }
    let breakdown = BitBreakdown {
        magnitude_bits: k * SPARSE_VALUE_BITS,
        position_bits,
        sign_bits: 0,
        level_bits: 0,
    };
    Ok(EncodedMessage { bit_count: out.len(), payload: out, breakdown })
}

pub fn decode_sparse(payload: &BitString, dim: usize) -> Result<SparseVector> {
    let mut r = BitReader::new(payload);
    let k = r.read_bits(count_field_width(dim))? as usize;
    if k > dim {
        return Err(Error::MalformedPayload(format!("{k} entries exceed dimension {dim}")));
    }
    let indices = read_subset_rank(&mut r, dim, k)?;
    let mut values = Vec::with_capacity(k);
    for _ in 0..k {
        values.push(f32::from_bits(r.read_bits(SPARSE_VALUE_BITS)? as u32) as f64);
    }
    if r.remaining() != 0 {
        return Err(Error::MalformedPayload(format!("{} trailing bits", r.remaining())));
    }
    Ok(SparseVector { dim, indices, values })
}

pub fn encode_dense(v: &[f64]) -> EncodedMessage {
    let mut out = BitString::new();
    for x in v {
        out.push_bits(x.to_bits(), DENSE_VALUE_BITS);
    }
    let breakdown = BitBreakdown { magnitude_bits: out.len(), ..Default::default() };
    EncodedMessage { bit_count: out.len(), payload: out, breakdown }
}

pub fn decode_dense(payload: &BitString, dim: usize) -> Result<Vec<f64>> {
    let mut r = BitReader::new(payload);
    let v = (0..dim).map(|_| r.read_bits(DENSE_VALUE_BITS).map(f64::from_bits)).collect::<Result<Vec<_>>>()?;
    if r.remaining() != 0 {
        return Err(Error::MalformedPayload(format!("{} trailing bits", r.remaining())));
    }
    Ok(v)
}

/// Encodes any compressor output.
pub fn encode_message(c: &Compressed, coding: LevelCoding) -> Result<EncodedMessage> {
    match c {
        Compressed::Dense(v) => Ok(encode_dense(v)),
        Compressed::Quantized(q) => encode_quantized(q, coding),
        Compressed::Sparse(s) => encode_sparse(s),
    }
}

/// Decodes a message using the pre-shared compressor parameters.
pub fn decode_message(
    msg: &EncodedMessage,
    compressor: &Compressor,
    dim: usize,
    coding: LevelCoding,
) -> Result<Compressed> {
    if msg.payload.len() != msg.bit_count {
        return Err(Error::MalformedPayload("bit count disagrees with payload length".into()));
    }
    Ok(match compressor {
        Compressor::Identity => Compressed::Dense(decode_dense(&msg.payload, dim)?),
        Compressor::Standard { levels, .. } => Compressed::Quantized(decode_quantized(
            &msg.payload,
            dim,
            &[dim],
            &vec![1.0 / *levels as f64; dim],
            coding,
        )?),
        Compressor::Block { sizes, steps } => {
            let coord: Vec<f64> = sizes.iter().zip(steps).flat_map(|(&n, &h)| std::iter::repeat_n(h, n)).collect();
            Compressed::Quantized(decode_quantized(&msg.payload, dim, sizes, &coord, coding)?)
        }
        Compressor::Varying { steps } => {
            Compressed::Quantized(decode_quantized(&msg.payload, dim, &[dim], steps, coding)?)
        }
        Compressor::RandTau { .. } => Compressed::Sparse(decode_sparse(&msg.payload, dim)?),
    })
}

/// Exact payload size of a compressor output.
pub fn message_bits(c: &Compressed, coding: LevelCoding) -> Result<usize> {
    match c {
        Compressed::Dense(v) => Ok(v.len() * DENSE_VALUE_BITS),
        Compressed::Quantized(q) => Ok(quantized_bit_count(q, coding)?.total()),
        Compressed::Sparse(s) => {
            Ok(count_field_width(s.dim) + subset_rank_width(s.dim, s.indices.len()) + s.values.len() * SPARSE_VALUE_BITS)
        }
    }
}

/// Binary entropy in bits; `H2(0) = H2(1) = 0`.
pub fn binary_entropy(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        return 0.0;
    }
    -t * t.log2() - (1.0 - t) * (1.0 - t).log2()
}

/// `psi(tau) = d H2(tau/d) + tau`.
pub fn entropy_bound(tau: usize, d: usize) -> Result<f64> {
    if tau > d {
        return Err(Error::OutOfRange { value: tau, max: d });
    }
    if d == 0 {
        return Ok(0.0);
    }
    Ok(d as f64 * binary_entropy(tau as f64 / d as f64) + tau as f64)
}

/// The `||h^{-1}||` bit proxy.
pub fn bits_proxy(steps: &[f64]) -> f64 {
    crate::step_solver::inverse_norm(steps)
}

/// Pearson correlation; `None` with fewer than two points or zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return None;
    }
    let mx = xs[..n].iter().sum::<f64>() / n as f64;
    let my = ys[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs[..n].iter().zip(&ys[..n]) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
