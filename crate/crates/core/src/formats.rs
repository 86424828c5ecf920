//! Low-bit element formats, exponent-only scale formats and the
//! (element, block size, scale) schemes built from them.
//!
//! Float element formats follow the usual sign/exponent/mantissa layout with
//! bias `2^(x-1) - 1` and subnormals at exponent field zero. No code point is
//! reserved for infinity or NaN, so every one of the `2^bits` codes is a
//! finite value. Integer formats are sign-magnitude.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;

use crate::error::{Error, Result};

/// Element formats addressable by name, in wire-code order.
pub const ELEMENT_REGISTRY: [&str; 10] = [
    "fp4_e2m1", "fp5_e2m2", "fp5_e3m1", "fp5_e1m3", "fp4_e1m2", "fp3_e1m1", "fp2_e1m0", "int3",
    "int4", "int5",
];

/// Scale formats addressable by name, in wire-code order.
pub const SCALE_REGISTRY: [&str; 5] = ["e4m0", "e5m0", "e6m0", "e7m0", "e8m0"];

const MAX_ELEMENT_BITS: u8 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElementKind {
    FloatMicro,
    IntSymmetric,
}

/// A signed low-bit value encoding. The sign is always a single bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ElementFormat {
    kind: ElementKind,
    exponent_bits: u8,
    mantissa_bits: u8,
}

impl ElementFormat {
    /// `ExMy` float with `x >= 1`.
    pub fn float(exponent_bits: u8, mantissa_bits: u8) -> Result<Self> {
        if exponent_bits == 0 {
            return Err(Error::InvalidFormat(
                "float element formats need at least one exponent bit".into(),
            ));
        }
        Self::checked(ElementKind::FloatMicro, exponent_bits, mantissa_bits)
    }

    /// Sign-magnitude `INTn`, magnitudes `0..=2^(n-1)-1`.
    pub fn int(bits: u8) -> Result<Self> {
        if bits < 2 {
            return Err(Error::InvalidFormat(format!("int{bits} is narrower than 2 bits")));
        }
        Self::checked(ElementKind::IntSymmetric, 0, bits - 1)
    }

    fn checked(kind: ElementKind, exponent_bits: u8, mantissa_bits: u8) -> Result<Self> {
        let total = 1 + exponent_bits as u32 + mantissa_bits as u32;
        if total > MAX_ELEMENT_BITS as u32 {
            return Err(Error::InvalidFormat(format!(
                "{total}-bit element formats are not supported (max {MAX_ELEMENT_BITS})"
            )));
        }
        if total < 2 {
            return Err(Error::InvalidFormat("element formats need at least 2 bits".into()));
        }
        Ok(Self {
            kind,
            exponent_bits,
            mantissa_bits,
        })
    }

    pub fn kind(&self) -> ElementKind {
        self.kind
    }

    pub fn sign_bits(&self) -> u32 {
        1
    }

    pub fn exponent_bits(&self) -> u32 {
        self.exponent_bits as u32
    }

    /// Mantissa bits for floats, magnitude bits for integers.
    pub fn mantissa_bits(&self) -> u32 {
        self.mantissa_bits as u32
    }

    pub fn total_bits(&self) -> u32 {
        self.sign_bits() + self.exponent_bits() + self.mantissa_bits()
    }

    /// Exponent bias of a float format; zero for integers.
    pub fn bias(&self) -> i32 {
        match self.kind {
            ElementKind::FloatMicro => (1 << (self.exponent_bits - 1)) - 1,
            ElementKind::IntSymmetric => 0,
        }
    }

    /// Number of magnitude codes, i.e. codes with the sign bit clear.
    pub fn magnitude_count(&self) -> usize {
        1 << (self.total_bits() - 1)
    }

    /// Magnitude of the code `index` (sign bit excluded).
    pub fn magnitude(&self, index: u32) -> f64 {
        debug_assert!((index as usize) < self.magnitude_count());
        match self.kind {
            ElementKind::IntSymmetric => index as f64,
            ElementKind::FloatMicro => {
                let m = self.mantissa_bits();
                let field = (index >> m) as i32;
                let frac = (index & ((1 << m) - 1)) as f64 / (1u32 << m) as f64;
                if field == 0 {
                    frac * exp2i(1 - self.bias())
                } else {
                    (1.0 + frac) * exp2i(field - self.bias())
                }
            }
        }
    }

    /// Decodes a full code including the sign bit. Negative zero decodes to 0.
    pub fn decode(&self, code: u32) -> Result<f64> {
        let bits = self.total_bits();
        if code >> bits != 0 {
            return Err(Error::MalformedCode { code, bits });
        }
        let sign_mask = 1 << (bits - 1);
        let mag = self.magnitude(code & (sign_mask - 1));
        Ok(if code & sign_mask != 0 && mag != 0.0 { -mag } else { mag })
    }

    pub fn grid(&self) -> ValueGrid {
        ValueGrid {
            values: (0..self.magnitude_count() as u32).map(|i| self.magnitude(i)).collect(),
        }
    }

    pub fn max_value(&self) -> f64 {
        self.magnitude(self.magnitude_count() as u32 - 1)
    }

    /// Exponent of the largest representable magnitude.
    pub fn emax(&self) -> i32 {
        floor_log2(self.max_value())
    }

    /// Canonical name, e.g. `fp4_e2m1` or `int4`.
    pub fn name(&self) -> String {
        match self.kind {
            ElementKind::FloatMicro => format!(
                "fp{}_e{}m{}",
                self.total_bits(),
                self.exponent_bits,
                self.mantissa_bits
            ),
            ElementKind::IntSymmetric => format!("int{}", self.total_bits()),
        }
    }

    pub fn wire_code(&self) -> Option<u8> {
        let name = self.name();
        ELEMENT_REGISTRY.iter().position(|n| *n == name).map(|p| p as u8)
    }

    pub fn from_wire_code(code: u8) -> Option<Self> {
        ELEMENT_REGISTRY.get(code as usize).map(|n| n.parse().expect("registry names parse"))
    }

    /// All named element formats, in registry order.
    pub fn registry() -> Vec<Self> {
        ELEMENT_REGISTRY.iter().map(|n| n.parse().expect("registry names parse")).collect()
    }
}

impl fmt::Display for ElementFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for ElementFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let bad = || Error::InvalidFormat(format!("cannot parse element format `{s}`"));
        if let Some(bits) = lower.strip_prefix("int") {
            let bits: u8 = bits.parse().map_err(|_| bad())?;
            return Self::int(bits);
        }
        let rest = lower.strip_prefix("fp").ok_or_else(bad)?;
        let (width, layout) = rest.split_once('_').ok_or_else(bad)?;
        let width: u32 = width.parse().map_err(|_| bad())?;
        let (e, m) = layout.strip_prefix('e').ok_or_else(bad)?.split_once('m').ok_or_else(bad)?;
        let e: u8 = e.parse().map_err(|_| bad())?;
        let m: u8 = m.parse().map_err(|_| bad())?;
        let fmt = Self::float(e, m)?;
        if fmt.total_bits() != width {
            return Err(Error::InvalidFormat(format!(
                "`{s}` declares {width} bits but 1 sign + {e} exponent + {m} mantissa = {}",
                fmt.total_bits()
            )));
        }
        Ok(fmt)
    }
}

/// Exponent-only `EkM0` scale. Stored code 0 marks an all-zero block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ScaleFormat {
    exponent_bits: u8,
}

impl ScaleFormat {
    pub const E8M0: ScaleFormat = ScaleFormat { exponent_bits: 8 };
    pub const E5M0: ScaleFormat = ScaleFormat { exponent_bits: 5 };

    pub fn new(exponent_bits: u8) -> Result<Self> {
        if !(4..=8).contains(&exponent_bits) {
            return Err(Error::InvalidFormat(format!(
                "scale format e{exponent_bits}m0 outside e4m0..e8m0"
            )));
        }
        Ok(Self { exponent_bits })
    }

    pub fn exponent_bits(&self) -> u32 {
        self.exponent_bits as u32
    }

    pub fn bias(&self) -> i32 {
        (1 << (self.exponent_bits - 1)) - 1
    }

    /// Smallest representable unbiased exponent (stored code 1).
    pub fn min_exponent(&self) -> i32 {
        1 - self.bias()
    }

    /// Largest representable unbiased exponent (stored code `2^k - 1`).
    pub fn max_exponent(&self) -> i32 {
        (1 << self.exponent_bits) - 1 - self.bias()
    }

    /// Stored code for an unbiased exponent already clamped into range.
    pub fn encode(&self, exponent: i32) -> u32 {
        debug_assert!((self.min_exponent()..=self.max_exponent()).contains(&exponent));
        (exponent + self.bias()) as u32
    }

    /// Unbiased exponent of a stored code, or `None` for the zero-block code.
    pub fn decode(&self, code: u32) -> Option<i32> {
        (code != 0).then(|| code as i32 - self.bias())
    }

    pub fn name(&self) -> String {
        format!("e{}m0", self.exponent_bits)
    }

    pub fn wire_code(&self) -> u8 {
        self.exponent_bits - 4
    }

    pub fn from_wire_code(code: u8) -> Option<Self> {
        (code <= 4).then(|| Self {
            exponent_bits: code + 4,
        })
    }

    pub fn registry() -> Vec<Self> {
        (4..=8).map(|k| Self { exponent_bits: k }).collect()
    }
}

impl fmt::Display for ScaleFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for ScaleFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let k = lower
            .strip_prefix('e')
            .and_then(|r| r.strip_suffix("m0"))
            .and_then(|k| k.parse::<u8>().ok())
            .ok_or_else(|| Error::InvalidFormat(format!("cannot parse scale format `{s}`")))?;
        Self::new(k)
    }
}

/// An (element format, block size, scale format) triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SchemeDescriptor {
    pub element: ElementFormat,
    pub block_size: u32,
    pub scale: ScaleFormat,
}

impl SchemeDescriptor {
    pub fn new(element: ElementFormat, block_size: u32, scale: ScaleFormat) -> Result<Self> {
        if block_size == 0 {
            return Err(Error::InvalidFormat("block size must be positive".into()));
        }
        Ok(Self {
            element,
            block_size,
            scale,
        })
    }

    /// Stored bits per value: element bits plus the block's amortized scale.
    pub fn effective_bits(&self) -> Ratio<u32> {
        effective_bits(self)
    }
}

pub fn effective_bits(scheme: &SchemeDescriptor) -> Ratio<u32> {
    Ratio::from_integer(scheme.element.total_bits())
        + Ratio::new(scheme.scale.exponent_bits(), scheme.block_size)
}

impl fmt::Display for SchemeDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.element, self.block_size, self.scale)
    }
}

impl FromStr for SchemeDescriptor {
    type Err = Error;

    /// Parses `element:block:scale`, e.g. `fp4_e2m1:32:e8m0`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let [element, block, scale] = parts.as_slice() else {
            return Err(Error::InvalidFormat(format!(
                "scheme `{s}` is not of the form element:block:scale"
            )));
        };
        let block: u32 = block
            .trim()
            .parse()
            .map_err(|_| Error::InvalidFormat(format!("bad block size in `{s}`")))?;
        Self::new(element.parse()?, block, scale.parse()?)
    }
}

/// All non-negative magnitudes of an element format, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrid {
    pub values: Vec<f64>,
}

impl ValueGrid {
    pub fn max(&self) -> f64 {
        *self.values.last().expect("grids are never empty")
    }

    pub fn largest_gap(&self) -> f64 {
        self.values.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }
}

pub fn enumerate_grid(fmt: &ElementFormat) -> ValueGrid {
    fmt.grid()
}

pub fn emax(fmt: &ElementFormat) -> i32 {
    fmt.emax()
}

/// Exact `2^e` for any exponent inside the f64 normal or subnormal range.
pub(crate) fn exp2i(e: i32) -> f64 {
    if e >= f64::MIN_EXP - 1 {
        f64::from_bits(((e + 1023) as u64) << 52)
    } else {
        // Subnormal: step through two exact multiplications.
        f64::from_bits(1u64 << 52) * f64::from_bits(((e + 1022 + 1023) as u64) << 52)
    }
}

/// `floor(log2(x))` for finite positive `x`, exact including subnormals.
pub(crate) fn floor_log2(x: f64) -> i32 {
    debug_assert!(x > 0.0 && x.is_finite());
    let bits = x.to_bits();
    let field = ((bits >> 52) & 0x7ff) as i32;
    if field != 0 {
        field - 1023
    } else {
        let mant = bits & ((1u64 << 52) - 1);
        -1074 + (63 - mant.leading_zeros() as i32)
    }
}
