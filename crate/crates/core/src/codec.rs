//! Block-wise microscaling quantization.
//!
//! A tensor is flattened in row-major order and cut into consecutive blocks of
//! `block_size` values (the last block may be short). Each block stores one
//! exponent-only scale code and one element code per value:
//!
//! 1. `e = floor(log2(max|v|)) - emax(element)`. If the scaled maximum would
//!    land more than half of the widest grid gap beyond the largest grid
//!    value, `e` is raised by one.
//! 2. `e` is clamped to the scale format's range.
//! 3. `v / 2^e` is rounded to the nearest grid magnitude, ties going to the
//!    even code index, and saturates at the grid maximum.
//!
//! Blocks whose codes are all zero store scale code 0.

use crate::bitpack::{packed_len, BitReader, BitWriter};
use crate::error::{Error, Result};
use crate::formats::{exp2i, floor_log2, SchemeDescriptor};
use crate::tensor::{element_count, Tensor};

/// Precomputed rounding tables for one scheme.
#[derive(Debug, Clone)]
pub struct Quantizer {
    scheme: SchemeDescriptor,
    element_bits: u32,
    scale_bits: u32,
    midpoints: Vec<f64>,
    emax: i32,
    overflow_limit: f64,
    half_gap: f64,
    decode_lut: Vec<f64>,
}

/// One encoded block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedBlock {
    pub scale_code: u32,
    pub codes: Vec<u32>,
}

impl Quantizer {
    pub fn new(scheme: SchemeDescriptor) -> Self {
        let grid = scheme.element.grid();
        let midpoints = grid.values.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
        let half_gap = grid.largest_gap() / 2.0;
        let decode_lut = (0..1u32 << scheme.element.total_bits())
            .map(|c| scheme.element.decode(c).expect("code in range"))
            .collect();
        Self {
            scheme,
            element_bits: scheme.element.total_bits(),
            scale_bits: scheme.scale.exponent_bits(),
            midpoints,
            emax: scheme.element.emax(),
            overflow_limit: grid.max() + half_gap,
            half_gap,
            decode_lut,
        }
    }

    pub fn scheme(&self) -> &SchemeDescriptor {
        &self.scheme
    }

    /// Largest rounding error for a block with unbiased shared exponent `e`,
    /// valid whenever the block did not saturate.
    pub fn error_bound(&self, exponent: i32) -> f64 {
        self.half_gap * exp2i(exponent)
    }

    /// Shared exponent before clamping, for a block with positive `max_abs`.
    pub fn unclamped_exponent(&self, max_abs: f64) -> i32 {
        let lg = floor_log2(max_abs);
        let scaled_max = max_abs / exp2i(lg) * exp2i(self.emax);
        let e = lg - self.emax;
        if scaled_max > self.overflow_limit {
            e + 1
        } else {
            e
        }
    }

    /// Shared exponent actually used for the block (after clamping).
    pub fn shared_exponent(&self, max_abs: f64) -> i32 {
        let scale = self.scheme.scale;
        self.unclamped_exponent(max_abs)
            .clamp(scale.min_exponent(), scale.max_exponent())
    }

    #[inline]
    fn magnitude_index(&self, x: f64) -> u32 {
        let mids = &self.midpoints;
        // Fixed-length counts let the compiler unroll the common grid sizes.
        let mut idx = match mids.len() {
            7 => count_below::<7>(mids, x),
            15 => count_below::<15>(mids, x),
            _ => count_below_dyn(mids, x),
        };
        if let Some(&m) = mids.get(idx as usize) {
            if m == x && idx & 1 == 1 {
                idx += 1;
            }
        }
        idx
    }

    /// Encodes one block, handing each element code to `emit`, and returns the
    /// stored scale code. `block` identifies the block in error messages.
    #[inline]
    fn encode_into<T: Copy + Into<f64>>(
        &self,
        values: &[T],
        block: usize,
        mut emit: impl FnMut(u32, f64),
    ) -> Result<u32> {
        let mut max_abs = 0.0f64;
        let mut non_finite = false;
        for &v in values {
            let a = v.into().abs();
            non_finite |= !a.is_finite();
            max_abs = max_abs.max(a);
        }
        if non_finite {
            return Err(Error::NonFiniteInput { block });
        }
        if max_abs == 0.0 {
            for _ in values {
                emit(0, 0.0);
            }
            return Ok(0);
        }
        let e = self.shared_exponent(max_abs);
        let inv_scale = exp2i(-e);
        let scale = exp2i(e);
        let sign_shift = self.element_bits - 1;
        let mut any = 0u32;
        for &v in values {
            let v: f64 = v.into();
            let idx = self.magnitude_index(v.abs() * inv_scale);
            let code = if idx == 0 {
                0
            } else {
                idx | ((v.is_sign_negative() as u32) << sign_shift)
            };
            any |= idx;
            emit(code, self.decode_lut[code as usize] * scale);
        }
        Ok(if any == 0 {
            0
        } else {
            self.scheme.scale.encode(e)
        })
    }

    pub fn quantize_block<T: Copy + Into<f64>>(&self, values: &[T]) -> Result<QuantizedBlock> {
        if values.len() > self.scheme.block_size as usize {
            return Err(Error::InvalidArgument(format!(
                "{} values exceed block size {}",
                values.len(),
                self.scheme.block_size
            )));
        }
        let mut codes = Vec::with_capacity(values.len());
        let scale_code = self.encode_into(values, 0, |c, _| codes.push(c))?;
        Ok(QuantizedBlock { scale_code, codes })
    }

    pub fn dequantize_block(&self, scale_code: u32, codes: &[u32]) -> Result<Vec<f64>> {
        if scale_code >> self.scale_bits != 0 {
            return Err(Error::MalformedCode {
                code: scale_code,
                bits: self.scale_bits,
            });
        }
        let scale = self.scheme.scale.decode(scale_code).map(exp2i);
        codes
            .iter()
            .map(|&c| {
                let v = *self.decode_lut.get(c as usize).ok_or(Error::MalformedCode {
                    code: c,
                    bits: self.element_bits,
                })?;
                Ok(scale.map_or(0.0, |s| v * s))
            })
            .collect()
    }

    /// Compresses a flat row-major value slice with the given shape.
    pub fn compress<T: Copy + Into<f64>>(
        &self,
        shape: &[usize],
        values: &[T],
    ) -> Result<CompressedTensor> {
        self.compress_impl(shape, values, None)
    }

    /// Like [`Quantizer::compress`], also returning the values a decoder will
    /// reconstruct, without a second pass over the streams.
    pub fn compress_with_reconstruction<T: Copy + Into<f64>>(
        &self,
        shape: &[usize],
        values: &[T],
    ) -> Result<(CompressedTensor, Vec<f32>)> {
        let mut recon = Vec::with_capacity(values.len());
        let ct = self.compress_impl(shape, values, Some(&mut recon))?;
        Ok((ct, recon))
    }

    fn compress_impl<T: Copy + Into<f64>>(
        &self,
        shape: &[usize],
        values: &[T],
        mut recon: Option<&mut Vec<f32>>,
    ) -> Result<CompressedTensor> {
        let n = element_count(shape)
            .filter(|&n| n == values.len())
            .ok_or_else(|| {
                Error::ShapeMismatch(format!("shape {shape:?} vs {} values", values.len()))
            })?;
        let bs = self.scheme.block_size as usize;
        let num_blocks = n.div_ceil(bs);
        let mut scales = BitWriter::with_capacity_bits(num_blocks * self.scale_bits as usize);
        let mut elements = BitWriter::with_capacity_bits(n * self.element_bits as usize);
        let bits = self.element_bits;
        for (b, chunk) in values.chunks(bs).enumerate() {
            let scale_code = match recon.as_deref_mut() {
                Some(out) => self.encode_into(chunk, b, |c, v| {
                    elements.push(c, bits);
                    out.push(v as f32);
                })?,
                None => self.encode_into(chunk, b, |c, _| elements.push(c, bits))?,
            };
            scales.push(scale_code, self.scale_bits);
        }
        Ok(CompressedTensor {
            scheme: self.scheme,
            shape: shape.iter().map(|&d| d as u64).collect(),
            scale_stream: scales.finish(),
            element_stream: elements.finish(),
        })
    }

    /// Adds the decoded values of `ct` onto `acc`, element by element.
    pub fn decompress_accumulate(&self, ct: &CompressedTensor, acc: &mut [f32]) -> Result<()> {
        self.check_tensor(ct)?;
        if acc.len() as u64 != ct.total_elements() {
            return Err(Error::ShapeMismatch(format!(
                "accumulator has {} elements, tensor {}",
                acc.len(),
                ct.total_elements()
            )));
        }
        self.decode_with(ct, acc, |slot, v| *slot += v);
        Ok(())
    }

    pub fn decompress(&self, ct: &CompressedTensor) -> Result<Tensor> {
        self.check_tensor(ct)?;
        let shape: Vec<usize> = ct.shape.iter().map(|&d| d as usize).collect();
        let mut out = Tensor::zeros(shape);
        self.decode_with(ct, out.data_mut(), |slot, v| *slot = v);
        Ok(out)
    }

    fn check_tensor(&self, ct: &CompressedTensor) -> Result<()> {
        if ct.scheme != self.scheme {
            return Err(Error::InvalidArgument(format!(
                "tensor uses {}, quantizer {}",
                ct.scheme, self.scheme
            )));
        }
        Ok(())
    }

    fn decode_with(&self, ct: &CompressedTensor, out: &mut [f32], mut store: impl FnMut(&mut f32, f32)) {
        let bs = self.scheme.block_size as usize;
        let mut scales = BitReader::new(&ct.scale_stream);
        if self.element_bits == 4 {
            // Nibble-aligned fast path: every value starts on a 4-bit boundary.
            let bytes = &ct.element_stream;
            for (b, chunk) in out.chunks_mut(bs).enumerate() {
                let scale = self.scheme.scale.decode(scales.read(self.scale_bits));
                let base = b * bs;
                match scale {
                    None => chunk.iter_mut().for_each(|s| store(s, 0.0)),
                    Some(e) => {
                        let s = exp2i(e);
                        for (i, slot) in chunk.iter_mut().enumerate() {
                            let k = base + i;
                            let code = (bytes[k >> 1] >> ((k & 1) * 4)) & 0xF;
                            store(slot, (self.decode_lut[code as usize] * s) as f32);
                        }
                    }
                }
            }
            return;
        }
        let mut elements = BitReader::new(&ct.element_stream);
        for chunk in out.chunks_mut(bs) {
            let scale = self.scheme.scale.decode(scales.read(self.scale_bits)).map(exp2i);
            for slot in chunk.iter_mut() {
                let code = elements.read(self.element_bits);
                let v = scale.map_or(0.0, |s| self.decode_lut[code as usize] * s);
                store(slot, v as f32);
            }
        }
    }
}

#[inline(always)]
fn count_below<const N: usize>(mids: &[f64], x: f64) -> u32 {
    let mids: &[f64; N] = mids.try_into().unwrap();
    let mut n = 0;
    for &m in mids {
        n += (m < x) as u32;
    }
    n
}

#[inline]
fn count_below_dyn(mids: &[f64], x: f64) -> u32 {
    mids.iter().map(|&m| (m < x) as u32).sum()
}

/// Packed scales and element codes plus shape metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompressedTensor {
    scheme: SchemeDescriptor,
    shape: Vec<u64>,
    scale_stream: Vec<u8>,
    element_stream: Vec<u8>,
}

impl CompressedTensor {
    /// Assembles a tensor from raw streams, checking their lengths.
    pub fn from_parts(
        scheme: SchemeDescriptor,
        shape: Vec<u64>,
        scale_stream: Vec<u8>,
        element_stream: Vec<u8>,
    ) -> Result<Self> {
        let (scale_len, element_len) = stream_lengths(&scheme, &shape)?;
        if scale_stream.len() as u64 != scale_len || element_stream.len() as u64 != element_len {
            return Err(Error::MalformedHeader(format!(
                "stream lengths {}/{} do not match expected {scale_len}/{element_len}",
                scale_stream.len(),
                element_stream.len()
            )));
        }
        Ok(Self {
            scheme,
            shape,
            scale_stream,
            element_stream,
        })
    }

    pub fn scheme(&self) -> &SchemeDescriptor {
        &self.scheme
    }

    pub fn shape(&self) -> &[u64] {
        &self.shape
    }

    pub fn total_elements(&self) -> u64 {
        self.shape.iter().product()
    }

    pub fn num_blocks(&self) -> u64 {
        self.total_elements().div_ceil(self.scheme.block_size as u64)
    }

    pub fn scale_stream(&self) -> &[u8] {
        &self.scale_stream
    }

    pub fn element_stream(&self) -> &[u8] {
        &self.element_stream
    }

    /// Unbiased shared exponent of every block, `None` for all-zero blocks.
    pub fn block_exponents(&self) -> Vec<Option<i32>> {
        let bits = self.scheme.scale.exponent_bits();
        let mut r = BitReader::new(&self.scale_stream);
        (0..self.num_blocks())
            .map(|_| self.scheme.scale.decode(r.read(bits)))
            .collect()
    }

    /// Raw stored codes of one block.
    pub fn block(&self, index: u64) -> Option<QuantizedBlock> {
        if index >= self.num_blocks() {
            return None;
        }
        let bs = self.scheme.block_size as u64;
        let kbits = self.scheme.scale.exponent_bits();
        let tbits = self.scheme.element.total_bits();
        let mut sr = BitReader::new(&self.scale_stream);
        let mut scale_code = 0;
        for _ in 0..=index {
            scale_code = sr.read(kbits);
        }
        let start = index * bs;
        let len = bs.min(self.total_elements() - start);
        let first_bit = start * tbits as u64;
        let mut er = BitReader::new(&self.element_stream[(first_bit / 8) as usize..]);
        er.read((first_bit % 8) as u32);
        let codes = (0..len).map(|_| er.read(tbits)).collect();
        Some(QuantizedBlock { scale_code, codes })
    }

    /// Payload bytes (both streams, header excluded).
    pub fn payload_len(&self) -> usize {
        self.scale_stream.len() + self.element_stream.len()
    }
}

/// Byte lengths of the scale and element streams for a scheme and shape.
pub(crate) fn stream_lengths(scheme: &SchemeDescriptor, shape: &[u64]) -> Result<(u64, u64)> {
    let overflow = || Error::MalformedHeader(format!("shape {shape:?} overflows"));
    let n = shape
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d))
        .ok_or_else(overflow)?;
    let blocks = n.div_ceil(scheme.block_size as u64);
    let scale = packed_len(blocks, scheme.scale.exponent_bits()).ok_or_else(overflow)?;
    let element = packed_len(n, scheme.element.total_bits()).ok_or_else(overflow)?;
    Ok((scale, element))
}

pub fn quantize_block(values: &[f64], scheme: &SchemeDescriptor) -> Result<QuantizedBlock> {
    Quantizer::new(*scheme).quantize_block(values)
}

pub fn dequantize_block(scale_code: u32, codes: &[u32], scheme: &SchemeDescriptor) -> Result<Vec<f64>> {
    Quantizer::new(*scheme).dequantize_block(scale_code, codes)
}

pub fn compress_tensor(tensor: &Tensor, scheme: &SchemeDescriptor) -> Result<CompressedTensor> {
    Quantizer::new(*scheme).compress(tensor.shape(), tensor.data())
}

pub fn decompress_tensor(ct: &CompressedTensor) -> Result<Tensor> {
    Quantizer::new(ct.scheme).decompress(ct)
}
