//! `MXC1` container, little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "MXC1"
//! 4       1     version = 1
//! 5       1     element format code (registry order; 0xF0 TopK, 0xF1 channel INT)
//! 6       1     scale format code
//! 7       1     flags = 0
//! 8       4     block size (u32)
//! 12      4     ndim (u32)
//! 16      4     reserved = 0
//! 20      8*n   dimensions (u64 each)
//! ...           payload
//! ```
//!
//! For microscaling tensors the payload is the scale stream followed by the
//! element stream, each padded to a byte boundary. There is no checksum.

use crate::codec::{stream_lengths, CompressedTensor};
use crate::error::{Error, Result};
use crate::formats::{ElementFormat, ScaleFormat, SchemeDescriptor};

pub const MAGIC: [u8; 4] = *b"MXC1";
pub const VERSION: u8 = 1;
pub const FIXED_HEADER_LEN: usize = 20;
pub const TOPK_FORMAT_CODE: u8 = 0xF0;
pub const CHANNEL_INT_FORMAT_CODE: u8 = 0xF1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub format_code: u8,
    pub scale_code: u8,
    pub block_size: u32,
    pub shape: Vec<u64>,
}

pub fn header_len(ndim: usize) -> usize {
    FIXED_HEADER_LEN + 8 * ndim
}

impl Header {
    pub fn encoded_len(&self) -> usize {
        header_len(self.shape.len())
    }

    pub fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.format_code);
        out.push(self.scale_code);
        out.push(0);
        out.extend_from_slice(&self.block_size.to_le_bytes());
        out.extend_from_slice(&(self.shape.len() as u32).to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        for d in &self.shape {
            out.extend_from_slice(&d.to_le_bytes());
        }
    }

    /// Parses a header and returns it with the remaining payload bytes.
    pub fn read(bytes: &[u8]) -> Result<(Header, &[u8])> {
        let mut cur = Cursor::new(bytes);
        let magic: [u8; 4] = cur.take(4)?.try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = cur.u8()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let format_code = cur.u8()?;
        let scale_code = cur.u8()?;
        let flags = cur.u8()?;
        if flags != 0 {
            return Err(Error::MalformedHeader(format!("flags {flags:#x} set")));
        }
        let block_size = cur.u32()?;
        let ndim = cur.u32()? as u64;
        let reserved = cur.u32()?;
        if reserved != 0 {
            return Err(Error::MalformedHeader("reserved field is not zero".into()));
        }
        cur.need(ndim.saturating_mul(8))?;
        let shape = (0..ndim).map(|_| cur.u64()).collect::<Result<Vec<_>>>()?;
        Ok((
            Header {
                format_code,
                scale_code,
                block_size,
                shape,
            },
            cur.rest(),
        ))
    }
}

pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn need(&self, n: u64) -> Result<()> {
        let available = (self.bytes.len() - self.pos) as u64;
        if n > available {
            return Err(Error::TruncatedStream {
                needed: n,
                available,
            });
        }
        Ok(())
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        self.need(n as u64)?;
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn rest(&self) -> &'a [u8] {
        &self.bytes[self.pos..]
    }
}

/// Rejects bytes left over after a fully parsed payload.
pub(crate) fn expect_end(rest: &[u8]) -> Result<()> {
    if rest.is_empty() {
        Ok(())
    } else {
        Err(Error::MalformedHeader(format!("{} trailing bytes", rest.len())))
    }
}

pub fn serialized_len(ct: &CompressedTensor) -> usize {
    header_len(ct.shape().len()) + ct.payload_len()
}

pub fn serialize(ct: &CompressedTensor) -> Result<Vec<u8>> {
    let scheme = ct.scheme();
    let format_code = scheme.element.wire_code().ok_or_else(|| {
        Error::InvalidFormat(format!("{} has no wire code", scheme.element))
    })?;
    let header = Header {
        format_code,
        scale_code: scheme.scale.wire_code(),
        block_size: scheme.block_size,
        shape: ct.shape().to_vec(),
    };
    let mut out = Vec::with_capacity(serialized_len(ct));
    header.write(&mut out);
    out.extend_from_slice(ct.scale_stream());
    out.extend_from_slice(ct.element_stream());
    Ok(out)
}

pub fn deserialize(bytes: &[u8]) -> Result<CompressedTensor> {
    let (header, payload) = Header::read(bytes)?;
    deserialize_payload(&header, payload)
}

pub(crate) fn deserialize_payload(header: &Header, payload: &[u8]) -> Result<CompressedTensor> {
    let element = ElementFormat::from_wire_code(header.format_code).ok_or_else(|| {
        Error::MalformedHeader(format!("unknown element format code {:#x}", header.format_code))
    })?;
    let scale = ScaleFormat::from_wire_code(header.scale_code).ok_or_else(|| {
        Error::MalformedHeader(format!("unknown scale format code {:#x}", header.scale_code))
    })?;
    if header.block_size == 0 {
        return Err(Error::MalformedHeader("block size is zero".into()));
    }
    let scheme = SchemeDescriptor::new(element, header.block_size, scale)?;
    let (scale_len, element_len) = stream_lengths(&scheme, &header.shape)?;
    let mut cur = Cursor::new(payload);
    cur.need(scale_len.saturating_add(element_len))?;
    let scales = cur.take(scale_len as usize)?.to_vec();
    let elements = cur.take(element_len as usize)?.to_vec();
    expect_end(cur.rest())?;
    CompressedTensor::from_parts(scheme, header.shape.clone(), scales, elements)
}
