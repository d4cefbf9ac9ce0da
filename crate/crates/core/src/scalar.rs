//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point type the model, mechanisms and LP solver are generic over.
///
/// The two tolerances are precision dependent: `COMPARE_TOL` is used for
/// equality tests between times and for column-stochasticity checks,
/// `LP_TOL` for pivoting and feasibility inside the simplex.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    const COMPARE_TOL: f64;
    const LP_TOL: f64;

    /// Lossy conversion from an `f64` literal.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    fn tol() -> Self {
        Self::lit(Self::COMPARE_TOL)
    }

    fn lp_tol() -> Self {
        Self::lit(Self::LP_TOL)
    }

    fn from_count(k: usize) -> Self {
        Self::from_usize(k).expect("count representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    const COMPARE_TOL: f64 = 1e-12;
    const LP_TOL: f64 = 1e-9;
}

impl Scalar for f32 {
    const COMPARE_TOL: f64 = 1e-5;
    const LP_TOL: f64 = 1e-4;
}

/// `a == b` up to a relative tolerance, the scale being the larger magnitude.
pub fn approx_eq<T: Scalar>(a: T, b: T) -> bool {
    let scale = a.abs().max(b.abs()).max(T::one());
    (a - b).abs() <= T::tol() * scale
}

/// Strict `a < b` that treats near-equal values as equal.
pub fn definitely_less<T: Scalar>(a: T, b: T) -> bool {
    a < b && !approx_eq(a, b)
}

/// Relative comparison used for case selection in the allocation rules.
///
/// Unlike [`approx_eq`], the scale is not floored at one, so the outcome is
/// invariant under a common rescaling of both arguments.
pub(crate) fn rel_eq<T: Scalar>(a: T, b: T) -> bool {
    let scale = a.abs().max(b.abs());
    (a - b).abs() <= T::tol() * scale
}

pub(crate) fn rel_lt<T: Scalar>(a: T, b: T) -> bool {
    a < b && !rel_eq(a, b)
}
