//! Scalar abstraction: the crate is generic over the real floating-point type.
//!
//! All numerics are written against [`Real`]; complex values are
//! `num_complex::Complex<R>`. Concrete `f64` aliases live at the crate root.

use num_complex::Complex;

/// Real scalar type underlying meshes, matrices, and solvers.
pub trait Real:
    num_traits::Float
    + num_traits::FloatConst
    + num_traits::FromPrimitive
    + num_traits::NumAssign
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Shorthand for converting an `f64` literal into the generic scalar.
#[inline]
pub fn r<R: Real>(x: f64) -> R {
    R::from_f64(x).expect("f64 must convert into the scalar type")
}

/// Complex number over the generic real scalar.
pub type Cplx<R> = Complex<R>;

/// Complex value from two `f64` literals.
#[inline]
pub fn c<R: Real>(re: f64, im: f64) -> Cplx<R> {
    Complex::new(r(re), r(im))
}
