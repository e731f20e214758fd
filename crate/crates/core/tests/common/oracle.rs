//! Independent reference computations in exact rational arithmetic.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};

pub fn exact(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

pub fn exact_mean(xs: &[f64]) -> BigRational {
    let sum = xs.iter().fold(BigRational::zero(), |acc, &x| acc + exact(x));
    sum / BigRational::from_integer(BigInt::from(xs.len()))
}

/// Sample variance, n - 1 denominator.
pub fn exact_variance(xs: &[f64]) -> BigRational {
    let mean = exact_mean(xs);
    let ss = xs.iter().fold(BigRational::zero(), |acc, &x| {
        let d = exact(x) - &mean;
        acc + &d * &d
    });
    ss / BigRational::from_integer(BigInt::from(xs.len() - 1))
}

/// Least-squares slope by the normal equations, no centering tricks:
/// (n * sum(xy) - sum(x) * sum(y)) / (n * sum(x^2) - sum(x)^2).
pub fn ols_slope(points: &[(u32, f64)]) -> f64 {
    let n = BigRational::from_integer(BigInt::from(points.len()));
    let (mut sx, mut sy, mut sxy, mut sxx) =
        (BigRational::zero(), BigRational::zero(), BigRational::zero(), BigRational::zero());
    for &(x, y) in points {
        let x = BigRational::from_integer(BigInt::from(x));
        let y = exact(y);
        sxy += &x * &y;
        sxx += &x * &x;
        sx += x;
        sy += y;
    }
    let num = &n * sxy - &sx * &sy;
    let den = n * sxx - &sx * &sx;
    (num / den).to_f64().unwrap()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}
