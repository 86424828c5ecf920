//! One interface over every codec a worker can apply to its partial sum.
//!
//! Codec ids on the command line:
//! `none` (16-bit passthrough), `element:block:scale` (microscaling),
//! `int<bits>-channel` and `topk-<factor>x`.

use std::fmt;
use std::str::FromStr;

use half::f16;

use crate::baselines::{channelwise_int_compress, topk_compress, ChannelIntPacket, TopKPacket};
use crate::codec::{CompressedTensor, Quantizer};
use crate::error::{Error, Result};
use crate::formats::{SchemeDescriptor, ELEMENT_REGISTRY};
use crate::tensor::Tensor;
use crate::wire::{self, Header, CHANNEL_INT_FORMAT_CODE, TOPK_FORMAT_CODE};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Compressor {
    /// Uncompressed 16-bit floats.
    Passthrough16,
    Mx(SchemeDescriptor),
    ChannelInt { bits: u32 },
    TopK { factor: f64 },
}

impl Compressor {
    pub fn compress(&self, tensor: &Tensor) -> Result<Packet> {
        Ok(match self {
            Compressor::Passthrough16 => Packet::Raw16 {
                shape: tensor.shape().to_vec(),
                values: tensor.data().iter().map(|&v| f16::from_f32(v)).collect(),
            },
            Compressor::Mx(s) => Packet::Mx(Quantizer::new(*s).compress(tensor.shape(), tensor.data())?),
            Compressor::ChannelInt { bits } => Packet::ChannelInt(channelwise_int_compress(tensor, *bits)?),
            Compressor::TopK { factor } => Packet::TopK(topk_compress(tensor, *factor)?),
        })
    }

    /// Stored bits per value; 16 for passthrough, `None` when data dependent.
    pub fn effective_bits(&self) -> Option<f64> {
        match self {
            Compressor::Passthrough16 => Some(16.0),
            Compressor::Mx(s) => {
                let r = s.effective_bits();
                Some(*r.numer() as f64 / *r.denom() as f64)
            }
            Compressor::ChannelInt { .. } | Compressor::TopK { .. } => None,
        }
    }
}

impl fmt::Display for Compressor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Compressor::Passthrough16 => f.write_str("none"),
            Compressor::Mx(s) => write!(f, "{s}"),
            Compressor::ChannelInt { bits } => write!(f, "int{bits}-channel"),
            Compressor::TopK { factor } => write!(f, "topk-{factor}x"),
        }
    }
}

impl FromStr for Compressor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        if matches!(t.as_str(), "none" | "fp16" | "passthrough") {
            return Ok(Compressor::Passthrough16);
        }
        if let Some(bits) = t.strip_prefix("int").and_then(|r| r.strip_suffix("-channel")) {
            let bits = bits
                .parse()
                .map_err(|_| Error::InvalidFormat(format!("bad channel INT codec `{s}`")))?;
            return Ok(Compressor::ChannelInt { bits });
        }
        if let Some(f) = t.strip_prefix("topk-").and_then(|r| r.strip_suffix('x')) {
            let factor = f
                .parse()
                .map_err(|_| Error::InvalidFormat(format!("bad TopK codec `{s}`")))?;
            return Ok(Compressor::TopK { factor });
        }
        t.parse::<SchemeDescriptor>()
            .map(Compressor::Mx)
            .map_err(|e| match e {
                Error::InvalidFormat(_) => Error::UnknownScheme {
                    name: s.to_string(),
                    known: format!(
                        "none, int<bits>-channel, topk-<factor>x, or element:block:scale with element in [{}] and scale e4m0..e8m0",
                        ELEMENT_REGISTRY.join(", ")
                    ),
                },
                other => other,
            })
    }
}

/// A compressed partial sum as exchanged between workers.
#[derive(Debug, Clone, PartialEq)]
pub enum Packet {
    /// Raw little-endian `f16` values; travels without a header.
    Raw16 { shape: Vec<usize>, values: Vec<f16> },
    Mx(CompressedTensor),
    ChannelInt(ChannelIntPacket),
    TopK(TopKPacket),
}

impl Packet {
    pub fn decompress(&self) -> Result<Tensor> {
        match self {
            Packet::Raw16 { shape, values } => {
                Tensor::new(shape.clone(), values.iter().map(|v| v.to_f32()).collect())
            }
            Packet::Mx(ct) => Quantizer::new(*ct.scheme()).decompress(ct),
            Packet::ChannelInt(p) => p.decompress(),
            Packet::TopK(p) => p.decompress(),
        }
    }

    /// Bytes this packet occupies on the wire.
    pub fn wire_len(&self) -> usize {
        match self {
            Packet::Raw16 { values, .. } => 2 * values.len(),
            Packet::Mx(ct) => wire::serialized_len(ct),
            Packet::ChannelInt(p) => p.serialized_len(),
            Packet::TopK(p) => p.serialized_len(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(match self {
            Packet::Raw16 { values, .. } => values.iter().flat_map(|v| v.to_bits().to_le_bytes()).collect(),
            Packet::Mx(ct) => wire::serialize(ct)?,
            Packet::ChannelInt(p) => p.serialize(),
            Packet::TopK(p) => p.serialize(),
        })
    }

    /// Parses any `MXC1` container, dispatching on its format code.
    pub fn from_mxc1(bytes: &[u8]) -> Result<Self> {
        let (header, payload) = Header::read(bytes)?;
        match header.format_code {
            TOPK_FORMAT_CODE => TopKPacket::from_payload(&header, payload).map(Packet::TopK),
            CHANNEL_INT_FORMAT_CODE => ChannelIntPacket::from_payload(&header, payload).map(Packet::ChannelInt),
            _ => wire::deserialize_payload(&header, payload).map(Packet::Mx),
        }
    }

    pub fn from_raw16(shape: Vec<usize>, bytes: &[u8]) -> Result<Self> {
        let n = crate::tensor::element_count(&shape)
            .ok_or_else(|| Error::ShapeMismatch(format!("shape {shape:?} overflows")))?;
        if bytes.len() != 2 * n {
            return Err(Error::TruncatedStream {
                needed: 2 * n as u64,
                available: bytes.len() as u64,
            });
        }
        let values = bytes
            .chunks_exact(2)
            .map(|c| f16::from_bits(u16::from_le_bytes([c[0], c[1]])))
            .collect();
        Ok(Packet::Raw16 { shape, values })
    }

    /// Number of values the packet decodes to.
    pub fn element_count(&self) -> u64 {
        match self {
            Packet::Raw16 { values, .. } => values.len() as u64,
            Packet::Mx(ct) => ct.total_elements(),
            Packet::ChannelInt(p) => p.shape().iter().product(),
            Packet::TopK(p) => p.shape().iter().product(),
        }
    }

    /// Upper bound on `|original - decoded|` for every value, derived from the
    /// packet alone. Microscaling blocks stored at the scale format's maximum
    /// exponent may have saturated and get an infinite bound.
    pub fn elementwise_bound(&self) -> Vec<f64> {
        match self {
            Packet::Raw16 { values, .. } => values
                .iter()
                .map(|v| {
                    let mag = (v.to_bits() & 0x7fff).min(0x7bfe);
                    (f16::from_bits(mag + 1).to_f64() - f16::from_bits(mag).to_f64()) / 2.0
                })
                .collect(),
            Packet::Mx(ct) => {
                let q = Quantizer::new(*ct.scheme());
                let bs = ct.scheme().block_size as usize;
                let max_e = ct.scheme().scale.max_exponent();
                let n = ct.total_elements() as usize;
                let mut out = Vec::with_capacity(n);
                for (b, e) in ct.block_exponents().into_iter().enumerate() {
                    let bound = match e {
                        None => 0.0,
                        Some(e) if e >= max_e => f64::INFINITY,
                        Some(e) => q.error_bound(e),
                    };
                    let len = bs.min(n - b * bs);
                    out.extend(std::iter::repeat(bound).take(len));
                }
                out
            }
            Packet::ChannelInt(p) => p.elementwise_bound(),
            Packet::TopK(p) => p.elementwise_bound(),
        }
    }
}
