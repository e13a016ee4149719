//! Poincaré-ball operations and Givens isometries.
//!
//! The ball of curvature `-c` is the open set `‖x‖² < 1/c`. The checked
//! functions at the top of this module validate their inputs and return
//! [`BallPoint`]s; the [`kernel`] submodule holds the allocation-free
//! versions (with vector-Jacobian products) used by the model and the
//! gradient code.

use crate::error::{Error, Result};

/// Margin kept between projected points and the ball boundary.
pub const BALL_EPS: f64 = 1e-5;

/// A point strictly inside the Poincaré ball of curvature `-c`.
#[derive(Debug, Clone, PartialEq)]
pub struct BallPoint {
    coords: Vec<f64>,
    c: f64,
}

impl BallPoint {
    pub fn new(coords: Vec<f64>, c: f64) -> Result<Self> {
        check_curvature(c)?;
        check_finite(&coords, "ball point")?;
        if !coords.len().is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "ball point dimension {} is odd",
                coords.len()
            )));
        }
        let sq = kernel::dot(&coords, &coords);
        if sq * c >= 1.0 {
            return Err(Error::Domain(format!(
                "‖x‖² = {sq} is not below 1/c = {}",
                1.0 / c
            )));
        }
        Ok(Self { coords, c })
    }

    pub fn origin(dim: usize, c: f64) -> Result<Self> {
        Self::new(vec![0.0; dim], c)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn curvature(&self) -> f64 {
        self.c
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn norm(&self) -> f64 {
        kernel::norm(&self.coords)
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }
}

/// Block angles for the 2×2 Givens diagonal, one per coordinate pair.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleVector(Vec<f64>);

impl AngleVector {
    pub fn new(angles: Vec<f64>) -> Self {
        Self(angles)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn negated(&self) -> Self {
        Self(self.0.iter().map(|a| -a).collect())
    }
}

fn check_curvature(c: f64) -> Result<()> {
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "curvature must be finite and positive, got {c}"
        )));
    }
    Ok(())
}

fn check_finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{what} has non-finite entries"
        )))
    }
}

fn check_same_ball(x: &BallPoint, y: &BallPoint) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::InvalidArgument(format!(
            "dimension mismatch: {} vs {}",
            x.dim(),
            y.dim()
        )));
    }
    if x.c != y.c {
        return Err(Error::InvalidArgument(format!(
            "curvature mismatch: {} vs {}",
            x.c, y.c
        )));
    }
    Ok(())
}

/// Exponential map at the origin.
///
/// Saturated outputs (where `tanh` rounds to 1) are pulled back inside the
/// ball by [`project_to_ball`], so the result always satisfies `‖x‖² < 1/c`.
pub fn exp0(u: &[f64], c: f64) -> Result<BallPoint> {
    check_curvature(c)?;
    check_finite(u, "tangent vector")?;
    let r = kernel::norm(u);
    let scale = kernel::exp0_scale(r, c);
    BallPoint::new(u.iter().map(|x| scale.lambda * x).collect(), c)
}

/// Logarithmic map at the origin. Fails with a domain error outside the ball.
pub fn log0(v: &[f64], c: f64) -> Result<Vec<f64>> {
    check_curvature(c)?;
    check_finite(v, "ball point")?;
    let sq = kernel::dot(v, v);
    if sq * c >= 1.0 {
        return Err(Error::Domain(format!(
            "log0 argument has ‖v‖² = {sq} ≥ 1/c = {}",
            1.0 / c
        )));
    }
    let scale = kernel::log0_scale(sq.sqrt(), c);
    Ok(v.iter().map(|x| scale.lambda * x).collect())
}

/// Möbius (gyrovector) addition `x ⊕_c y`.
pub fn mobius_add(x: &BallPoint, y: &BallPoint) -> Result<BallPoint> {
    check_same_ball(x, y)?;
    let mut out = vec![0.0; x.dim()];
    kernel::mobius_add(x.coords(), y.coords(), x.c, &mut out);
    // Rounding can land exactly on the boundary for points near it.
    let scale = kernel::project_scale(kernel::norm(&out), x.c);
    out.iter_mut().for_each(|v| *v *= scale.lambda);
    BallPoint::new(out, x.c)
}

/// Geodesic distance `(2/√c)·atanh(√c‖(−x) ⊕_c y‖)`, evaluated through an
/// explicit Möbius addition.
pub fn hyp_distance(x: &BallPoint, y: &BallPoint) -> Result<f64> {
    check_same_ball(x, y)?;
    let neg: Vec<f64> = x.coords().iter().map(|v| -v).collect();
    let mut m = vec![0.0; x.dim()];
    kernel::mobius_add(&neg, y.coords(), x.c, &mut m);
    let s = x.c.sqrt();
    let z = (s * kernel::norm(&m)).min(kernel::ATANH_MAX);
    Ok(2.0 / s * kernel::atanh(z))
}

/// Pulls `x` back to norm `(1−ε)/√c` when it lies on or beyond that radius.
pub fn project_to_ball(x: &[f64], c: f64) -> Result<BallPoint> {
    check_curvature(c)?;
    check_finite(x, "vector")?;
    let scale = kernel::project_scale(kernel::norm(x), c);
    BallPoint::new(x.iter().map(|v| scale.lambda * v).collect(), c)
}

fn check_pairs(x: &[f64], angles: &AngleVector) -> Result<()> {
    if !x.len().is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "Givens transform needs an even dimension, got {}",
            x.len()
        )));
    }
    if x.len() != 2 * angles.len() {
        return Err(Error::InvalidArgument(format!(
            "dimension {} does not match {} block angles",
            x.len(),
            angles.len()
        )));
    }
    Ok(())
}

/// Block-diagonal rotation, one `[[cos, −sin], [sin, cos]]` block per pair.
pub fn givens_rotate(x: &[f64], theta: &AngleVector) -> Result<Vec<f64>> {
    check_pairs(x, theta)?;
    let cs: Vec<(f64, f64)> = theta
        .as_slice()
        .iter()
        .map(|a| (a.cos(), a.sin()))
        .collect();
    let mut out = vec![0.0; x.len()];
    kernel::rotate(x, &cs, &mut out);
    Ok(out)
}

/// Block-diagonal reflection, one `[[cos, sin], [sin, −cos]]` block per pair.
pub fn givens_reflect(x: &[f64], phi: &AngleVector) -> Result<Vec<f64>> {
    check_pairs(x, phi)?;
    let cs: Vec<(f64, f64)> = phi.as_slice().iter().map(|a| (a.cos(), a.sin())).collect();
    let mut out = vec![0.0; x.len()];
    kernel::reflect(x, &cs, &mut out);
    Ok(out)
}

/// Unchecked building blocks with their vector-Jacobian products.
pub mod kernel {
    use super::BALL_EPS;

    /// Largest argument handed to `atanh`.
    pub const ATANH_MAX: f64 = 1.0 - 1e-15;

    const SERIES_CUTOFF: f64 = 1e-2;

    #[inline]
    pub fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[inline]
    pub fn norm(a: &[f64]) -> f64 {
        dot(a, a).sqrt()
    }

    /// `atanh` in its `log1p` form.
    #[inline]
    pub fn atanh(z: f64) -> f64 {
        0.5 * (2.0 * z / (1.0 - z)).ln_1p()
    }

    /// `(tanh z / z, (d/dz)(tanh z / z) / z)`.
    pub fn tanh_ratio(z: f64) -> (f64, f64) {
        if z < SERIES_CUTOFF {
            let z2 = z * z;
            let z4 = z2 * z2;
            let h = 1.0 - z2 / 3.0 + 2.0 * z4 / 15.0 - 17.0 * z4 * z2 / 315.0;
            let k = -2.0 / 3.0 + 8.0 * z2 / 15.0 - 34.0 * z4 / 105.0 + 496.0 * z4 * z2 / 2835.0;
            (h, k)
        } else {
            let t = z.tanh();
            let sech2 = 1.0 - t * t;
            (t / z, (z * sech2 - t) / (z * z * z))
        }
    }

    /// `(atanh z / z, (d/dz)(atanh z / z) / z)`.
    pub fn atanh_ratio(z: f64) -> (f64, f64) {
        if z < SERIES_CUTOFF {
            let z2 = z * z;
            let z4 = z2 * z2;
            let a = 1.0 + z2 / 3.0 + z4 / 5.0 + z4 * z2 / 7.0;
            let j = 2.0 / 3.0 + 4.0 * z2 / 5.0 + 6.0 * z4 / 7.0 + 8.0 * z4 * z2 / 9.0;
            (a, j)
        } else {
            let at = atanh(z);
            (at / z, (z / (1.0 - z * z) - at) / (z * z * z))
        }
    }

    /// A radial map `u ↦ λ(‖u‖, c)·u` together with the partials needed to
    /// pull gradients back through it.
    #[derive(Debug, Clone, Copy)]
    pub struct RadialScale {
        pub lambda: f64,
        /// `(∂λ/∂r) / r`
        pub dlambda_dr_over_r: f64,
        /// `∂λ/∂c`
        pub dlambda_dc: f64,
    }

    impl RadialScale {
        pub const IDENTITY: RadialScale = RadialScale {
            lambda: 1.0,
            dlambda_dr_over_r: 0.0,
            dlambda_dc: 0.0,
        };

        /// Accumulates `ū` into `grad_u` and returns `c̄` for upstream `ȳ`.
        #[inline]
        pub fn backward(&self, u: &[f64], grad_y: &[f64], grad_u: &mut [f64]) -> f64 {
            let gy_u = dot(grad_y, u);
            let radial = gy_u * self.dlambda_dr_over_r;
            for ((gu, gy), ui) in grad_u.iter_mut().zip(grad_y).zip(u) {
                *gu += self.lambda * gy + radial * ui;
            }
            gy_u * self.dlambda_dc
        }
    }

    /// Largest radius kept by the ball projection.
    #[inline]
    pub fn max_radius(c: f64) -> f64 {
        (1.0 - BALL_EPS) / c.sqrt()
    }

    /// Ball projection as a radial scale: identity inside `(1−ε)/√c`, else
    /// rescaling onto that radius.
    pub fn project_scale(r: f64, c: f64) -> RadialScale {
        let m = max_radius(c);
        if r <= m {
            RadialScale::IDENTITY
        } else {
            RadialScale {
                lambda: m / r,
                dlambda_dr_over_r: -m / (r * r * r),
                dlambda_dc: -m / (2.0 * c * r),
            }
        }
    }

    /// Exponential map at the origin followed by the ball projection.
    pub fn exp0_scale(r: f64, c: f64) -> RadialScale {
        let s = c.sqrt();
        let z = s * r;
        let (h, k) = tanh_ratio(z);
        let m = max_radius(c);
        if h * r <= m {
            RadialScale {
                lambda: h,
                dlambda_dr_over_r: k * c,
                dlambda_dc: 0.5 * k * r * r,
            }
        } else {
            RadialScale {
                lambda: m / r,
                dlambda_dr_over_r: -m / (r * r * r),
                dlambda_dc: -m / (2.0 * c * r),
            }
        }
    }

    /// Logarithmic map at the origin. Arguments beyond the boundary are
    /// clamped to `ATANH_MAX` with a frozen radial derivative.
    pub fn log0_scale(r: f64, c: f64) -> RadialScale {
        let s = c.sqrt();
        let z = s * r;
        if z > ATANH_MAX {
            let a = atanh(ATANH_MAX) / s;
            return RadialScale {
                lambda: a / r,
                dlambda_dr_over_r: -a / (r * r * r),
                dlambda_dc: -a / (2.0 * c * r),
            };
        }
        let (a, j) = atanh_ratio(z);
        RadialScale {
            lambda: a,
            dlambda_dr_over_r: j * c,
            dlambda_dc: 0.5 * j * r * r,
        }
    }

    /// Scalars shared by the Möbius forward and backward passes.
    #[derive(Debug, Clone, Copy)]
    pub struct MobiusCache {
        xy: f64,
        x2: f64,
        y2: f64,
        a: f64,
        b: f64,
        d: f64,
    }

    /// Writes `x ⊕_c y` into `out`.
    pub fn mobius_add(x: &[f64], y: &[f64], c: f64, out: &mut [f64]) -> MobiusCache {
        let xy = dot(x, y);
        let x2 = dot(x, x);
        let y2 = dot(y, y);
        let a = 1.0 + 2.0 * c * xy + c * y2;
        let b = 1.0 - c * x2;
        let d = 1.0 + 2.0 * c * xy + c * c * x2 * y2;
        for ((o, xi), yi) in out.iter_mut().zip(x).zip(y) {
            *o = (a * xi + b * yi) / d;
        }
        MobiusCache {
            xy,
            x2,
            y2,
            a,
            b,
            d,
        }
    }

    /// Pulls `ō` back onto `x̄`, `ȳ` (accumulated) and returns `c̄`.
    #[allow(clippy::too_many_arguments)]
    pub fn mobius_add_backward(
        x: &[f64],
        y: &[f64],
        c: f64,
        out: &[f64],
        cache: &MobiusCache,
        grad_out: &[f64],
        grad_x: &mut [f64],
        grad_y: &mut [f64],
    ) -> f64 {
        let MobiusCache {
            xy,
            x2,
            y2,
            a,
            b,
            d,
        } = *cache;
        // out = N / D, N = A x + B y
        let gd = -dot(grad_out, out) / d;
        let gx_dot = dot(grad_out, x) / d;
        let gy_dot = dot(grad_out, y) / d;
        let ga = gx_dot;
        let gb = gy_dot;
        let g_xy = 2.0 * c * ga + 2.0 * c * gd;
        let g_x2 = -c * gb + c * c * y2 * gd;
        let g_y2 = c * ga + c * c * x2 * gd;
        let gc = (2.0 * xy + y2) * ga - x2 * gb + (2.0 * xy + 2.0 * c * x2 * y2) * gd;
        for i in 0..x.len() {
            let go = grad_out[i] / d;
            grad_x[i] += a * go + g_xy * y[i] + 2.0 * g_x2 * x[i];
            grad_y[i] += b * go + g_xy * x[i] + 2.0 * g_y2 * y[i];
        }
        gc
    }

    /// Squared geodesic distance from the scalars `‖x‖²`, `‖y‖²`, `⟨x,y⟩`,
    /// using `‖(−x)⊕y‖² = ‖x−y‖² / (1 − 2c⟨x,y⟩ + c²‖x‖²‖y‖²)`.
    #[derive(Debug, Clone, Copy)]
    pub struct SqDistance {
        pub value: f64,
        /// `∂d²/∂‖x‖²`
        pub d_x2: f64,
        /// `∂d²/∂‖y‖²`
        pub d_y2: f64,
        /// `∂d²/∂⟨x,y⟩`
        pub d_xy: f64,
        /// `∂d²/∂c`
        pub d_c: f64,
    }

    pub fn sq_distance(x2: f64, y2: f64, xy: f64, c: f64) -> SqDistance {
        let e = (x2 + y2 - 2.0 * xy).max(0.0);
        let f = 1.0 - 2.0 * c * xy + c * c * x2 * y2;
        let z2 = c * e / f;
        let z = z2.sqrt();
        if z > ATANH_MAX {
            let at = atanh(ATANH_MAX);
            let value = 4.0 * at * at / c;
            return SqDistance {
                value,
                d_x2: 0.0,
                d_y2: 0.0,
                d_xy: 0.0,
                d_c: -value / c,
            };
        }
        let (a, _) = atanh_ratio(z);
        let at = a * z;
        let value = 4.0 * at * at / c;
        // ∂(d²)/∂(z²) with c held fixed in the 1/c prefactor
        let g = 4.0 * a / (c * (1.0 - z2));
        let ge = g * c / f;
        let gf = -g * c * e / (f * f);
        let d_x2 = ge + gf * c * c * y2;
        let d_y2 = ge + gf * c * c * x2;
        let d_xy = -2.0 * ge - 2.0 * c * gf;
        let d_c = -value / c + g * e / f + gf * (-2.0 * xy + 2.0 * c * x2 * y2);
        SqDistance {
            value,
            d_x2,
            d_y2,
            d_xy,
            d_c,
        }
    }

    /// Rotation blocks given `(cos, sin)` per pair.
    #[inline]
    pub fn rotate(x: &[f64], cs: &[(f64, f64)], out: &mut [f64]) {
        for (i, &(c, s)) in cs.iter().enumerate() {
            let (a, b) = (x[2 * i], x[2 * i + 1]);
            out[2 * i] = c * a - s * b;
            out[2 * i + 1] = s * a + c * b;
        }
    }

    /// Reflection blocks given `(cos, sin)` per pair.
    #[inline]
    pub fn reflect(x: &[f64], cs: &[(f64, f64)], out: &mut [f64]) {
        for (i, &(c, s)) in cs.iter().enumerate() {
            let (a, b) = (x[2 * i], x[2 * i + 1]);
            out[2 * i] = c * a + s * b;
            out[2 * i + 1] = s * a - c * b;
        }
    }

    /// Backward of [`rotate`]: accumulates `x̄` and writes `θ̄` per block.
    pub fn rotate_backward(
        cs: &[(f64, f64)],
        out: &[f64],
        grad_out: &[f64],
        grad_x: &mut [f64],
        grad_angle: &mut [f64],
    ) {
        for (i, &(c, s)) in cs.iter().enumerate() {
            let (g0, g1) = (grad_out[2 * i], grad_out[2 * i + 1]);
            grad_x[2 * i] += c * g0 + s * g1;
            grad_x[2 * i + 1] += -s * g0 + c * g1;
            grad_angle[i] = -g0 * out[2 * i + 1] + g1 * out[2 * i];
        }
    }

    /// Backward of [`reflect`]; same angle formula as the rotation.
    pub fn reflect_backward(
        cs: &[(f64, f64)],
        out: &[f64],
        grad_out: &[f64],
        grad_x: &mut [f64],
        grad_angle: &mut [f64],
    ) {
        for (i, &(c, s)) in cs.iter().enumerate() {
            let (g0, g1) = (grad_out[2 * i], grad_out[2 * i + 1]);
            grad_x[2 * i] += c * g0 + s * g1;
            grad_x[2 * i + 1] += s * g0 - c * g1;
            grad_angle[i] = -g0 * out[2 * i + 1] + g1 * out[2 * i];
        }
    }
}
