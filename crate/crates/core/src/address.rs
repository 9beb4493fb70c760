//! Structured address arithmetic.
//!
//! A fixed-base address is `base + size * i`. A relative-base address reuses
//! a previously computed address for element `j` and adds `size * (i - j)`.
//! Both are computed in wrapping machine arithmetic, so the two agree for
//! every `(base, size, i, j)`, not only for in-bounds indices.
//!
//! The functions are generic over the address word so the identities can be
//! exercised on narrow words as well as on the 64-bit words the interpreter
//! uses; see [`crate::Addr`] and [`crate::Index`].

use num_traits::{PrimInt, Signed, Unsigned, WrappingAdd, WrappingMul, WrappingSub};

/// An unsigned machine word used as a byte address.
pub trait AddressWord: PrimInt + Unsigned + WrappingAdd + WrappingSub + WrappingMul {
    /// Signed index type of the same width.
    type Index: PrimInt + Signed + WrappingSub;

    /// Reinterprets a two's complement index as an address word.
    fn from_index(i: Self::Index) -> Self;
}

macro_rules! impl_address_word {
    ($($word:ty => $index:ty),*) => {$(
        impl AddressWord for $word {
            type Index = $index;

            #[inline]
            fn from_index(i: $index) -> Self {
                i as $word
            }
        }
    )*};
}

impl_address_word!(u16 => i16, u32 => i32, u64 => i64, u128 => i128);

/// Fixed-base address of element `index`.
#[inline]
pub fn fba_address<W: AddressWord>(base: W, elem_size: W, index: W::Index) -> W {
    base.wrapping_add(&elem_size.wrapping_mul(&W::from_index(index)))
}

/// Relative index of element `index` with respect to element `rel_index`.
#[inline]
pub fn relative_index<I: PrimInt + Signed + WrappingSub>(index: I, rel_index: I) -> I {
    index.wrapping_sub(&rel_index)
}

/// Address of element `index` computed from the address `rel_base` of
/// element `rel_index`.
#[inline]
pub fn rba_address<W: AddressWord>(
    rel_base: W,
    elem_size: W,
    index: W::Index,
    rel_index: W::Index,
) -> W {
    fba_address(rel_base, elem_size, relative_index(index, rel_index))
}
