use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::scalar::Real;

const PADE13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

/// Largest 1-norm for which the degree-13 Padé approximant is accurate to
/// double precision without scaling.
const THETA13: f64 = 5.371_920_351_148_152;

/// `e^{M t}` by scaling and squaring around a [13/13] Padé approximant.
///
/// The number of squarings is chosen from the 1-norm of `M t`.
pub fn expm<S: Real>(m: &Matrix<S>, t: S) -> Result<Matrix<S>> {
    if !m.is_square() {
        return Err(Error::Shape(format!(
            "expm of a {}x{} matrix",
            m.rows(),
            m.cols()
        )));
    }
    if !m.is_finite() || !t.is_finite() {
        return Err(Error::NonFinite("expm input".into()));
    }
    let n = m.rows();
    let a = m.scale(t);
    let norm = a.norm_one().as_f64();
    if norm == 0.0 {
        return Ok(Matrix::identity(n));
    }
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let a = a.scale(S::lit(0.5f64.powi(squarings)));

    let b = |i: usize| S::lit(PADE13[i]);
    let ident = Matrix::identity(n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;

    let lin = |c6: S, c4: S, c2: S, c0: S| -> Matrix<S> {
        let mut out = a6.scale(c6);
        out = &out + &a4.scale(c4);
        out = &out + &a2.scale(c2);
        &out + &ident.scale(c0)
    };

    let inner_u = lin(b(13), b(11), b(9), S::zero());
    let outer_u = lin(b(7), b(5), b(3), b(1));
    let u = &a * &(&(&a6 * &inner_u) + &outer_u);

    let inner_v = lin(b(12), b(10), b(8), S::zero());
    let outer_v = lin(b(6), b(4), b(2), b(0));
    let v = &(&a6 * &inner_v) + &outer_v;

    let mut r = (&v - &u).lu_solve(&(&v + &u))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    if !r.is_finite() {
        return Err(Error::NonFinite("expm overflow".into()));
    }
    Ok(r)
}
