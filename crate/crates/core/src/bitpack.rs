//! LSB-first bit packing: the first value occupies the lowest-order bits of
//! the first byte. A stream is padded with zero bits to a byte boundary only
//! at its end.

#[derive(Debug, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    acc: u64,
    fill: u32,
}

impl BitWriter {
    pub fn with_capacity_bits(bits: usize) -> Self {
        Self {
            bytes: Vec::with_capacity(bits.div_ceil(8)),
            acc: 0,
            fill: 0,
        }
    }

    /// Appends the low `bits` bits of `value` (`bits <= 32`).
    #[inline]
    pub fn push(&mut self, value: u32, bits: u32) {
        debug_assert!(bits <= 32 && (bits == 32 || value >> bits == 0));
        self.acc |= (value as u64) << self.fill;
        self.fill += bits;
        if self.fill >= 32 {
            self.bytes.extend_from_slice(&(self.acc as u32).to_le_bytes());
            self.acc >>= 32;
            self.fill -= 32;
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        while self.fill > 0 {
            self.bytes.push(self.acc as u8);
            self.acc >>= 8;
            self.fill = self.fill.saturating_sub(8);
        }
        self.bytes
    }
}

#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    acc: u64,
    fill: u32,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self {
            bytes,
            pos: 0,
            acc: 0,
            fill: 0,
        }
    }

    /// Reads `bits` bits (`bits <= 32`); missing bytes read as zero.
    #[inline]
    pub fn read(&mut self, bits: u32) -> u32 {
        if self.fill < bits {
            self.refill();
        }
        let mask = if bits == 32 { u32::MAX as u64 } else { (1u64 << bits) - 1 };
        let v = (self.acc & mask) as u32;
        self.acc >>= bits;
        self.fill -= bits;
        v
    }

    #[inline]
    fn refill(&mut self) {
        if let Some(chunk) = self.bytes.get(self.pos..self.pos + 4) {
            let word = u32::from_le_bytes(chunk.try_into().unwrap()) as u64;
            self.acc |= word << self.fill;
            self.fill += 32;
            self.pos += 4;
        } else {
            while self.fill <= 56 {
                let byte = self.bytes.get(self.pos).copied().unwrap_or(0);
                self.acc |= (byte as u64) << self.fill;
                self.fill += 8;
                self.pos += 1;
            }
        }
    }
}

/// Bytes needed to hold `count` values of `bits` bits each.
pub fn packed_len(count: u64, bits: u32) -> Option<u64> {
    count.checked_mul(bits as u64).map(|b| b.div_ceil(8))
}
