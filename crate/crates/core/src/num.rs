//! Scalar abstraction for the numeric kernels.
//!
//! Everything numeric in this crate is generic over [`Real`] so the same
//! code runs in `f32` (the on-disk pipeline type) and `f64` (used where
//! solver accuracy matters). Concrete aliases live at the crate root.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar: `f32` or `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from `f64`; panics only for exotic scalar types.
    fn real(v: f64) -> Self {
        Self::from_f64(v).expect("f64 must convert into a Real scalar")
    }

    /// Widen to `f64` for accumulation and reporting.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real scalar must widen to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Deterministic seed derivation for independent random streams.
///
/// SplitMix64 finalizer over the base seed and a stream tag; the same
/// (base, tag) pair always yields the same child seed, and distinct tags
/// decorrelate streams.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed derivation keyed by a human-readable stream name (FNV-1a hashed).
pub fn derive_seed_str(base: u64, stream: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    derive_seed(base, h)
}
