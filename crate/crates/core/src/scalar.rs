//! Scalar abstraction: every numeric routine in this crate is generic over a
//! floating-point type implementing [`Scalar`].

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use serde::{de::DeserializeOwned, Serialize};

/// Floating-point scalar: f32 or f64.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Lift an `f64` constant into the scalar type.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("constant not representable in scalar type")
    }

    /// A tolerance that honours `base` at f64 precision but never drops below
    /// a few ulps of the actual scalar type (1e-12 is meaningless for f32).
    fn tol(base: f64) -> Self {
        Self::of(base).max(Self::epsilon() * Self::of(64.0))
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Euclidean norm of a point.
pub fn norm<S: Scalar>(x: &[S]) -> S {
    x.iter().map(|&c| c * c).sum::<S>().sqrt()
}

/// Euclidean distance between two points of equal dimension.
pub fn dist<S: Scalar>(x: &[S], y: &[S]) -> S {
    debug_assert_eq!(x.len(), y.len());
    x.iter()
        .zip(y)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<S>()
        .sqrt()
}

/// `|x - y|^p` for `p ∈ {1, 2}` without going through `powf`.
pub fn dist_pow<S: Scalar>(x: &[S], y: &[S], p: u32) -> S {
    let d = dist(x, y);
    match p {
        1 => d,
        2 => d * d,
        _ => d.powi(p as i32),
    }
}

/// Kahan-compensated sum; error stays O(ε) independent of length, which keeps
/// weight renormalisation idempotent.
pub fn kahan_sum<S: Scalar>(values: &[S]) -> S {
    let mut sum = S::zero();
    let mut c = S::zero();
    for &v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

/// SplitMix64 finaliser, used to derive independent per-cell RNG streams.
pub fn splitmix64(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
