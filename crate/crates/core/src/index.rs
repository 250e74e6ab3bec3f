//! Integer types usable as dyadic numerators.
//!
//! Every dyadic structure in the crate is generic over the integer that holds
//! numerators `a` of `a / 2^l`. Fixed-width types are fast but cap the level;
//! `BigUint` has no cap.

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use std::fmt::{Debug, Display};
use std::hash::Hash;
use std::ops::{Add, Shl, Shr, Sub};
use std::str::FromStr;

pub trait DyadicIndex:
    Clone
    + Ord
    + Hash
    + Debug
    + Display
    + FromStr
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Shl<u32, Output = Self>
    + Shr<u32, Output = Self>
    + Send
    + Sync
    + 'static
{
    /// Largest `l` such that `2^l` is representable.
    const MAX_LEVEL: u32;

    /// Number of trailing zero bits; `None` for zero.
    fn trailing_zeros(&self) -> Option<u32>;

    /// Position of the highest set bit plus one; zero for zero.
    fn bit_length(&self) -> u32;

    fn from_u128(v: u128) -> Option<Self>;

    fn from_biguint(v: &BigUint) -> Option<Self>;

    fn to_biguint(&self) -> BigUint;

    fn pow2(l: u32) -> Self {
        Self::one() << l
    }
}

macro_rules! impl_primitive_index {
    ($t:ty) => {
        impl DyadicIndex for $t {
            const MAX_LEVEL: u32 = <$t>::BITS - 1;

            #[inline]
            fn trailing_zeros(&self) -> Option<u32> {
                if *self == 0 {
                    None
                } else {
                    Some(<$t>::trailing_zeros(*self))
                }
            }

            #[inline]
            fn bit_length(&self) -> u32 {
                <$t>::BITS - self.leading_zeros()
            }

            #[inline]
            fn from_u128(v: u128) -> Option<Self> {
                <$t>::try_from(v).ok()
            }

            fn from_biguint(v: &BigUint) -> Option<Self> {
                v.to_u128().and_then(|w| <$t>::try_from(w).ok())
            }

            fn to_biguint(&self) -> BigUint {
                BigUint::from(*self)
            }
        }
    };
}

impl_primitive_index!(u64);
impl_primitive_index!(u128);

impl DyadicIndex for BigUint {
    const MAX_LEVEL: u32 = u32::MAX >> 1;

    fn trailing_zeros(&self) -> Option<u32> {
        BigUint::trailing_zeros(self).map(|t| t as u32)
    }

    fn bit_length(&self) -> u32 {
        self.bits() as u32
    }

    fn from_u128(v: u128) -> Option<Self> {
        Some(BigUint::from(v))
    }

    fn from_biguint(v: &BigUint) -> Option<Self> {
        Some(v.clone())
    }

    fn to_biguint(&self) -> BigUint {
        self.clone()
    }
}
