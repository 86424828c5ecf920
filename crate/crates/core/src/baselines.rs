//! Comparison codecs: channel-wise symmetric INT quantization and TopK
//! sparsification. Both travel in the `MXC1` container under their own
//! format codes.
//!
//! Channel-INT payload: one `f16` scale per channel, then sign-magnitude codes
//! of `bits` bits each in value order. The header's scale-code byte carries
//! `bits`. TopK payload: `k` as `u32`, `k` ascending `u32` indices, then `k`
//! `f16` values.

use half::f16;

use crate::bitpack::{packed_len, BitReader, BitWriter};
use crate::error::{Error, Result};
use crate::tensor::{element_count, Tensor};
use crate::wire::{expect_end, header_len, Cursor, Header, CHANNEL_INT_FORMAT_CODE, TOPK_FORMAT_CODE};

/// Per-channel scaled integers.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelIntPacket {
    shape: Vec<u64>,
    bits: u32,
    scales: Vec<f16>,
    codes: Vec<u8>,
}

fn check_finite(data: &[f32]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFiniteInput { block: i }),
        None => Ok(()),
    }
}

fn shape_u64(shape: &[usize]) -> Vec<u64> {
    shape.iter().map(|&d| d as u64).collect()
}

fn shape_usize(shape: &[u64]) -> Result<Vec<usize>> {
    shape
        .iter()
        .map(|&d| usize::try_from(d).map_err(|_| Error::MalformedHeader(format!("dimension {d}"))))
        .collect()
}

pub fn channelwise_int_compress(tensor: &Tensor, bits: u32) -> Result<ChannelIntPacket> {
    if !(2..=8).contains(&bits) {
        return Err(Error::InvalidArgument(format!("channel INT bits {bits} outside 2..=8")));
    }
    check_finite(tensor.data())?;
    let levels = ((1u32 << (bits - 1)) - 1) as f64;
    let channels = tensor.channels();
    let mut max_abs = vec![0.0f64; channels];
    for row in tensor.data().chunks(channels.max(1)) {
        for (m, &v) in max_abs.iter_mut().zip(row) {
            *m = m.max((v as f64).abs());
        }
    }
    let scales: Vec<f16> = max_abs
        .iter()
        .map(|&m| {
            let s = f16::from_f64(m / levels);
            if s.is_infinite() {
                f16::MAX
            } else {
                s
            }
        })
        .collect();
    let sign = 1u32 << (bits - 1);
    let mut w = BitWriter::with_capacity_bits(tensor.len() * bits as usize);
    for row in tensor.data().chunks(channels.max(1)) {
        for (&v, s) in row.iter().zip(&scales) {
            let s = s.to_f64();
            let q = if s == 0.0 {
                0.0
            } else {
                (v as f64 / s).round_ties_even().clamp(-levels, levels)
            };
            let mag = q.abs() as u32;
            w.push(if q < 0.0 { mag | sign } else { mag }, bits);
        }
    }
    Ok(ChannelIntPacket {
        shape: shape_u64(tensor.shape()),
        bits,
        scales,
        codes: w.finish(),
    })
}

impl ChannelIntPacket {
    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn shape(&self) -> &[u64] {
        &self.shape
    }

    pub fn scales(&self) -> &[f16] {
        &self.scales
    }

    /// Signed integer level of every value, in value order.
    pub fn levels(&self) -> Vec<i32> {
        let n: u64 = self.shape.iter().product();
        let sign = 1u32 << (self.bits - 1);
        let mut r = BitReader::new(&self.codes);
        (0..n)
            .map(|_| {
                let c = r.read(self.bits);
                let mag = (c & (sign - 1)) as i32;
                if c & sign != 0 {
                    -mag
                } else {
                    mag
                }
            })
            .collect()
    }

    pub fn decompress(&self) -> Result<Tensor> {
        let shape = shape_usize(&self.shape)?;
        let channels = self.scales.len().max(1);
        let data = self
            .levels()
            .into_iter()
            .enumerate()
            .map(|(i, q)| (q as f64 * self.scales[i % channels].to_f64()) as f32)
            .collect();
        Tensor::new(shape, data)
    }

    /// Per-value rounding bound: half the channel scale.
    pub fn elementwise_bound(&self) -> Vec<f64> {
        let n: u64 = self.shape.iter().product();
        let channels = self.scales.len().max(1);
        (0..n as usize)
            .map(|i| self.scales[i % channels].to_f64() / 2.0)
            .collect()
    }

    pub fn serialized_len(&self) -> usize {
        header_len(self.shape.len()) + 2 * self.scales.len() + self.codes.len()
    }

    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_len());
        Header {
            format_code: CHANNEL_INT_FORMAT_CODE,
            scale_code: self.bits as u8,
            block_size: 0,
            shape: self.shape.clone(),
        }
        .write(&mut out);
        for s in &self.scales {
            out.extend_from_slice(&s.to_bits().to_le_bytes());
        }
        out.extend_from_slice(&self.codes);
        out
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self> {
        let (header, payload) = Header::read(bytes)?;
        Self::from_payload(&header, payload)
    }

    pub(crate) fn from_payload(header: &Header, payload: &[u8]) -> Result<Self> {
        if header.format_code != CHANNEL_INT_FORMAT_CODE {
            return Err(Error::MalformedHeader("not a channel INT packet".into()));
        }
        let bits = header.scale_code as u32;
        if !(2..=8).contains(&bits) || header.block_size != 0 {
            return Err(Error::MalformedHeader(format!("bad channel INT parameters ({bits} bits)")));
        }
        let overflow = || Error::MalformedHeader("shape overflows".into());
        let n = header
            .shape
            .iter()
            .try_fold(1u64, |a, &d| a.checked_mul(d))
            .ok_or_else(overflow)?;
        let channels = header.shape.last().copied().unwrap_or(1);
        let code_len = packed_len(n, bits).ok_or_else(overflow)?;
        let mut cur = Cursor::new(payload);
        cur.need(channels.saturating_mul(2).saturating_add(code_len))?;
        let scales = (0..channels)
            .map(|_| Ok(f16::from_bits(u16::from_le_bytes(cur.take(2)?.try_into().unwrap()))))
            .collect::<Result<Vec<_>>>()?;
        if scales.iter().any(|s| !s.is_finite() || s.is_sign_negative()) {
            return Err(Error::MalformedHeader("channel scale is negative or not finite".into()));
        }
        let codes = cur.take(code_len as usize)?.to_vec();
        expect_end(cur.rest())?;
        Ok(Self {
            shape: header.shape.clone(),
            bits,
            scales,
            codes,
        })
    }
}

pub fn channelwise_int_decompress(packet: &ChannelIntPacket) -> Result<Tensor> {
    packet.decompress()
}

/// The largest-magnitude entries of a tensor, everything else implied zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TopKPacket {
    shape: Vec<u64>,
    indices: Vec<u32>,
    values: Vec<f16>,
}

/// Bytes of a TopK packet that do not scale with `k`.
pub fn topk_fixed_bytes(ndim: usize) -> usize {
    header_len(ndim) + 4
}

/// Largest `k` whose packet fits in `2 * len / factor` bytes, i.e. a
/// `factor`-fold reduction against 16-bit storage.
pub fn topk_k_for_factor(len: usize, ndim: usize, factor: f64) -> Result<usize> {
    if !(factor > 1.0) {
        return Err(Error::InvalidArgument(format!("compression factor {factor} must exceed 1")));
    }
    let budget = 2.0 * len as f64 / factor - topk_fixed_bytes(ndim) as f64;
    let k = (budget / 6.0).floor();
    if k < 1.0 {
        return Err(Error::CompressionFactorTooHigh { factor });
    }
    Ok((k as usize).min(len))
}

pub fn topk_compress(tensor: &Tensor, compression_factor: f64) -> Result<TopKPacket> {
    let k = topk_k_for_factor(tensor.len(), tensor.shape().len(), compression_factor)?;
    topk_compress_k(tensor, k)
}

/// Keeps exactly `k` entries; equal magnitudes prefer the lower index.
pub fn topk_compress_k(tensor: &Tensor, k: usize) -> Result<TopKPacket> {
    let data = tensor.data();
    check_finite(data)?;
    if data.len() > u32::MAX as usize {
        return Err(Error::InvalidArgument("TopK indices are limited to u32".into()));
    }
    let k = k.min(data.len());
    let mut order: Vec<u32> = (0..data.len() as u32).collect();
    let by_rank = |a: &u32, b: &u32| {
        data[*b as usize]
            .abs()
            .total_cmp(&data[*a as usize].abs())
            .then(a.cmp(b))
    };
    if k < order.len() && k > 0 {
        order.select_nth_unstable_by(k - 1, by_rank);
    }
    order.truncate(k);
    order.sort_unstable();
    let values = order.iter().map(|&i| f16::from_f32(data[i as usize])).collect();
    Ok(TopKPacket {
        shape: shape_u64(tensor.shape()),
        indices: order,
        values,
    })
}

impl TopKPacket {
    pub fn k(&self) -> usize {
        self.indices.len()
    }

    pub fn shape(&self) -> &[u64] {
        &self.shape
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f16] {
        &self.values
    }

    pub fn decompress(&self) -> Result<Tensor> {
        let mut out = Tensor::zeros(shape_usize(&self.shape)?);
        let data = out.data_mut();
        for (&i, v) in self.indices.iter().zip(&self.values) {
            data[i as usize] = v.to_f32();
        }
        Ok(out)
    }

    /// Kept entries: half an `f16` ulp. Dropped entries: the smallest kept
    /// magnitude, padded by that half ulp.
    pub fn elementwise_bound(&self) -> Vec<f64> {
        let n: u64 = self.shape.iter().product();
        let floor = self
            .values
            .iter()
            .map(|&v| v.to_f64().abs() + f16_half_ulp(v))
            .fold(f64::INFINITY, f64::min);
        let dropped = if self.values.is_empty() { f64::INFINITY } else { floor };
        let mut out = vec![dropped; n as usize];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i as usize] = f16_half_ulp(v);
        }
        out
    }

    pub fn serialized_len(&self) -> usize {
        topk_fixed_bytes(self.shape.len()) + 6 * self.k()
    }

    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_len());
        Header {
            format_code: TOPK_FORMAT_CODE,
            scale_code: 0,
            block_size: 0,
            shape: self.shape.clone(),
        }
        .write(&mut out);
        out.extend_from_slice(&(self.k() as u32).to_le_bytes());
        for i in &self.indices {
            out.extend_from_slice(&i.to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        out
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self> {
        let (header, payload) = Header::read(bytes)?;
        Self::from_payload(&header, payload)
    }

    pub(crate) fn from_payload(header: &Header, payload: &[u8]) -> Result<Self> {
        if header.format_code != TOPK_FORMAT_CODE || header.scale_code != 0 || header.block_size != 0 {
            return Err(Error::MalformedHeader("not a TopK packet".into()));
        }
        let n = header
            .shape
            .iter()
            .try_fold(1u64, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::MalformedHeader("shape overflows".into()))?;
        let mut cur = Cursor::new(payload);
        let k = cur.u32()? as u64;
        if k > n {
            return Err(Error::MalformedHeader(format!("k = {k} exceeds {n} elements")));
        }
        cur.need(k * 6)?;
        let indices = (0..k).map(|_| cur.u32()).collect::<Result<Vec<_>>>()?;
        if indices.windows(2).any(|w| w[0] >= w[1]) || indices.last().is_some_and(|&i| i as u64 >= n) {
            return Err(Error::MalformedHeader("TopK indices not strictly increasing in range".into()));
        }
        let values = (0..k)
            .map(|_| Ok(f16::from_bits(u16::from_le_bytes(cur.take(2)?.try_into().unwrap()))))
            .collect::<Result<Vec<_>>>()?;
        expect_end(cur.rest())?;
        if element_count(&shape_usize(&header.shape)?).is_none() {
            return Err(Error::MalformedHeader("shape overflows".into()));
        }
        Ok(Self {
            shape: header.shape.clone(),
            indices,
            values,
        })
    }
}

/// Half the spacing above `|v|`, which bounds the rounding error of any value
/// that rounded to `v`.
fn f16_half_ulp(v: f16) -> f64 {
    let mag = v.to_bits() & 0x7fff;
    let lo = mag.min(0x7bfe);
    (f16::from_bits(lo + 1).to_f64() - f16::from_bits(lo).to_f64()) / 2.0
}

pub fn topk_decompress(packet: &TopKPacket) -> Result<Tensor> {
    packet.decompress()
}
