//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point type the solver can run on: `f32` or `f64`.
///
/// On-disk and on-wire formats are always 64-bit; values are converted at
/// the boundary.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lock-free cell holding one value of this type.
    type Atomic: AtomicScalar<Self>;

    /// Converts an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f32 {
    type Atomic = AtomicF32;
}

impl Scalar for f64 {
    type Atomic = AtomicF64;
}

/// Atomic floating point cell with relaxed loads and CAS-based additions.
pub trait AtomicScalar<T>: Send + Sync {
    fn new(value: T) -> Self;
    fn load(&self) -> T;
    fn store(&self, value: T);
    /// Adds `delta` and returns the previous value. Never loses an update.
    fn fetch_add(&self, delta: T) -> T;
}

macro_rules! atomic_float {
    ($name:ident, $float:ty, $bits:ty) => {
        #[derive(Debug, Default)]
        pub struct $name($bits);

        impl AtomicScalar<$float> for $name {
            #[inline]
            fn new(value: $float) -> Self {
                Self(<$bits>::new(value.to_bits()))
            }

            #[inline]
            fn load(&self) -> $float {
                <$float>::from_bits(self.0.load(Ordering::Relaxed))
            }

            #[inline]
            fn store(&self, value: $float) {
                self.0.store(value.to_bits(), Ordering::Relaxed)
            }

            #[inline]
            fn fetch_add(&self, delta: $float) -> $float {
                let mut current = self.0.load(Ordering::Relaxed);
                loop {
                    let next = (<$float>::from_bits(current) + delta).to_bits();
                    match self.0.compare_exchange_weak(
                        current,
                        next,
                        Ordering::Relaxed,
                        Ordering::Relaxed,
                    ) {
                        Ok(prev) => return <$float>::from_bits(prev),
                        Err(actual) => current = actual,
                    }
                }
            }
        }
    };
}

atomic_float!(AtomicF32, f32, AtomicU32);
atomic_float!(AtomicF64, f64, AtomicU64);

/// Dense helpers used across modules.
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub(crate) fn norm_sq<T: Scalar>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |acc, &x| acc + x * x)
}
