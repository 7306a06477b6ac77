//! Lorentz-model hyperbolic geometry, differentiable through the tape.
//!
//! Points live on the upper sheet `{x : <x,x>_L = -K, x0 > 0}` of a
//! two-sheeted hyperboloid in Minkowski space; the manifold has constant
//! curvature `-1/K` for a runtime parameter `K > 0`. All operations are
//! recorded on a [`Tape`], so curvature itself can be a learnable input.
//!
//! Two API levels:
//!
//! - row-wise kernels (`*_rows`) treating an [N, d+1] matrix as N points,
//!   used by the layer stack;
//! - typed single-point wrappers ([`LorentzPoint`], [`TangentVector`]) that
//!   carry their curvature handle and validate preconditions.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};

/// Floor for the arcosh argument; keeps the coincident-point singularity of
/// the distance and log map out of the forward pass, with zero gradient in
/// the clamped region.
pub const ARCOSH_EPS: f64 = 1e-12;

/// Ceiling for the arcosh argument (distance ~ 346): beyond this, squaring
/// the argument would overflow and the log map would turn into inf/inf.
/// Gradients are zero in the capped region, like at the lower clamp.
pub const ARCOSH_CAP: f64 = 1e150;

/// Ceiling on the exp-map radius |v|_L / sqrt(K); cosh overflows near 710,
/// and radii this large only occur when an optimizer diverges.
pub const EXP_RADIUS_CAP: f64 = 50.0;

/// Every projected point is kept within this geodesic distance of the
/// origin. Inside the shell all ambient coordinates stay below ~1e26, so no
/// inner product, square, or product of intermediates can overflow anywhere
/// in the stack; healthy runs live at distance ~1-10 and never touch it.
pub const DISTANCE_SHELL: f64 = 60.0;

/// Floor for squared tangent norms inside the exp map; the closed form then
/// degrades smoothly to the identity at the zero vector instead of 0/0.
const NORM_SQ_FLOOR: f64 = 1e-30;

/// Tangent vectors with Lorentzian square norm below this are rejected as
/// non-spacelike rather than silently extended.
const SPACELIKE_TOL: f64 = -1e-9;

// ─────────────────────────────────────────────────────────────────────
// Row-wise kernels
// ─────────────────────────────────────────────────────────────────────

/// `-x0*y0 + sum_i xi*yi` per row; either side may be a single row.
pub fn lorentz_inner_rows(t: &mut Tape, x: Var, y: Var) -> Result<Var> {
    t.lorentz_inner_rows(x, y)
}

/// Geodesic distance per row: `arcosh(clamp(-<x,y>_L / K, 1+eps, inf))`.
pub fn distance_rows(t: &mut Tape, x: Var, y: Var, k: Var) -> Result<Var> {
    let inner = t.lorentz_inner_rows(x, y)?;
    let neg = t.neg(inner)?;
    let ratio = t.div(neg, k)?;
    let arg = t.clamp(ratio, 1.0 + ARCOSH_EPS, ARCOSH_CAP)?;
    t.arcosh(arg)
}

/// Exp map per row: `cosh(|v|/sqrt(K)) x + sqrt(K) sinh(|v|/sqrt(K)) v/|v|`,
/// re-projected onto the hyperboloid.
///
/// The squared norm is floored at 1e-30, so a zero tangent row maps to its
/// base point with the correct identity Jacobian instead of dividing 0/0.
pub fn exp_map_rows(t: &mut Tape, x: Var, v: Var, k: Var) -> Result<Var> {
    let vv = t.lorentz_inner_rows(v, v)?;
    let vv = t.clamp(vv, NORM_SQ_FLOOR, f64::INFINITY)?;
    let norm = t.sqrt(vv)?; // [N,1]
    let sqrt_k = t.sqrt(k)?;
    let raw_r = t.div(norm, sqrt_k)?;
    let r = t.clamp(raw_r, 0.0, EXP_RADIUS_CAP)?;
    let cosh_r = t.cosh(r)?;
    let sinh_r = t.sinh(r)?;
    let scale_num = t.mul(sqrt_k, sinh_r)?;
    let scale = t.div(scale_num, norm)?; // sqrt(K) sinh(r) / |v|
    let xa = t.mul(cosh_r, x)?;
    let vb = t.mul(scale, v)?;
    let raw = t.add(xa, vb)?;
    project_rows(t, raw, k)
}

/// Log map per row: `arcosh(a)/sqrt(a^2-1) * (y + (<x,y>_L/K) x)` with
/// `a = clamp(-<x,y>_L/K, 1+eps, inf)`. Coincident rows map to (numerically)
/// zero tangent vectors.
///
/// A single-row base is broadcast against a multi-row `y` and vice versa.
pub fn log_map_rows(t: &mut Tape, x: Var, y: Var, k: Var) -> Result<Var> {
    let inner = t.lorentz_inner_rows(x, y)?;
    let u = t.div(inner, k)?; // [N,1], about -alpha
    let neg_u = t.neg(u)?;
    let alpha = t.clamp(neg_u, 1.0 + ARCOSH_EPS, ARCOSH_CAP)?;
    let num = t.arcosh(alpha)?;
    let a2 = t.mul(alpha, alpha)?;
    let a2m1 = t.add_const(a2, -1.0)?;
    let den = t.sqrt(a2m1)?;
    let beta = t.div(num, den)?; // [N,1]
    let ux = t.mul(u, x)?; // (<x,y>/K) x, broadcasting over rows of x
    let dir = t.add(y, ux)?;
    t.mul(beta, dir)
}

/// Parallel transport along the geodesic from base rows `x` to rows `y`:
/// `v + <y,v>_L / (K - <x,y>_L) * (x + y)`.
pub fn transport_rows(t: &mut Tape, x: Var, y: Var, v: Var, k: Var) -> Result<Var> {
    let yv = t.lorentz_inner_rows(y, v)?;
    let xy = t.lorentz_inner_rows(x, y)?;
    let den = t.sub(k, xy)?;
    let coef = t.div(yv, den)?; // [N,1]
    let xpy = t.add(x, y)?;
    let corr = t.mul(coef, xpy)?;
    t.add(v, corr)
}

/// Drop rows onto the hyperboloid: keep the spatial part `s`, recompute
/// `x0 = sqrt(K + |s|^2)`. Satisfies `<x,x>_L = -K` to machine precision.
///
/// Rows beyond [`DISTANCE_SHELL`] are first pulled back onto the shell
/// (spatial norm capped at `sqrt(K) sinh(shell)`), which is the one place
/// every point in the model flows through.
pub fn project_rows(t: &mut Tape, raw: Var, k: Var) -> Result<Var> {
    let cols = t.value(raw).cols();
    let s = t.slice_cols(raw, 1, cols)?;
    let s2 = t.mul(s, s)?;
    let norm2 = t.sum_axis1(s2)?; // [N,1]
    let safe2 = t.clamp(norm2, 1e-300, f64::INFINITY)?;
    let norm = t.sqrt(safe2)?;
    let sqrt_k = t.sqrt(k)?;
    let limit = t.mul_const(sqrt_k, DISTANCE_SHELL.sinh())?;
    let ratio = t.div(limit, norm)?;
    let factor = t.clamp(ratio, 0.0, 1.0)?;
    let s = t.mul(factor, s)?;
    let s2 = t.mul(s, s)?;
    let norm2 = t.sum_axis1(s2)?;
    let arg = t.add(norm2, k)?;
    let x0 = t.sqrt(arg)?;
    t.concat_cols(&[x0, s])
}

/// Orthogonal projection of raw ambient rows onto the tangent space at `x`:
/// `raw + (<x,raw>_L / K) x`. Idempotent.
pub fn project_tangent_rows(t: &mut Tape, x: Var, raw: Var, k: Var) -> Result<Var> {
    let xr = t.lorentz_inner_rows(x, raw)?;
    let coef = t.div(xr, k)?;
    let cx = t.mul(coef, x)?;
    t.add(raw, cx)
}

/// The origin `(sqrt(K), 0, ..., 0)` as a single row with `dim` spatial
/// coordinates; differentiable in `K`.
pub fn origin_row(t: &mut Tape, dim: usize, k: Var) -> Result<Var> {
    let sqrt_k = t.sqrt(k)?;
    let zeros = t.zeros(1, dim);
    t.concat_cols(&[sqrt_k, zeros])
}

// ─────────────────────────────────────────────────────────────────────
// Typed single-point API
// ─────────────────────────────────────────────────────────────────────

/// A point on the hyperboloid of curvature `-1/K`, as a 1x(n+1) row on the
/// tape together with its curvature handle.
#[derive(Clone, Copy, Debug)]
pub struct LorentzPoint {
    pub coords: Var,
    pub curvature: Var,
}

/// An ambient vector Lorentz-orthogonal to its base point.
#[derive(Clone, Copy, Debug)]
pub struct TangentVector {
    pub coords: Var,
    pub base: Var,
    pub curvature: Var,
}

impl LorentzPoint {
    /// Spatial dimension n (ambient is n+1).
    pub fn dim(&self, t: &Tape) -> usize {
        t.value(self.coords).cols() - 1
    }

    /// `|<x,x>_L + K|`, the hyperboloid constraint residual.
    pub fn constraint_residual(&self, t: &mut Tape) -> Result<f64> {
        let inner = t.lorentz_inner_rows(self.coords, self.coords)?;
        let k = t.value(self.curvature).item()?;
        Ok((t.value(inner).item()? + k).abs())
    }
}

fn same_curvature(t: &Tape, ka: Var, kb: Var) -> Result<()> {
    if ka == kb {
        return Ok(());
    }
    let (a, b) = (t.value(ka).item()?, t.value(kb).item()?);
    if a == b {
        Ok(())
    } else {
        Err(Error::CurvatureMismatch { ka: a, kb: b })
    }
}

/// Origin point `o = (sqrt(K), 0, ..., 0)`.
pub fn origin(t: &mut Tape, dim: usize, k: Var) -> Result<LorentzPoint> {
    let coords = origin_row(t, dim, k)?;
    Ok(LorentzPoint {
        coords,
        curvature: k,
    })
}

/// Minkowski inner product of two single-row ambient vectors.
pub fn lorentz_inner(t: &mut Tape, x: Var, y: Var) -> Result<Var> {
    t.lorentz_inner_rows(x, y)
}

/// Geodesic distance between two points on the same manifold.
pub fn geodesic_distance(t: &mut Tape, x: &LorentzPoint, y: &LorentzPoint) -> Result<Var> {
    same_curvature(t, x.curvature, y.curvature)?;
    distance_rows(t, x.coords, y.coords, x.curvature)
}

/// Exp map at `x`. Fails when `v` is not based at `x` or is not tangent
/// within 1e-6 (project first).
pub fn exp_map(t: &mut Tape, x: &LorentzPoint, v: &TangentVector) -> Result<LorentzPoint> {
    same_curvature(t, x.curvature, v.curvature)?;
    if v.base != x.coords {
        return Err(Error::InvalidInput(
            "exp_map: tangent vector is based at a different point".into(),
        ));
    }
    let xv = t.lorentz_inner_rows(x.coords, v.coords)?;
    let residual = t.value(xv).item()?.abs();
    if residual > 1e-6 {
        return Err(Error::InvalidInput(format!(
            "exp_map: vector not tangent at base (|<x,v>_L| = {residual:.3e}); project it first"
        )));
    }
    let vv = t.lorentz_inner_rows(v.coords, v.coords)?;
    let vv_val = t.value(vv).item()?;
    if vv_val < SPACELIKE_TOL {
        return Err(Error::NonSpacelikeTangent { value: vv_val });
    }
    let coords = exp_map_rows(t, x.coords, v.coords, x.curvature)?;
    Ok(LorentzPoint {
        coords,
        curvature: x.curvature,
    })
}

/// Log map of `y` at `x`; the returned vector is tangent at `x` and its
/// Lorentzian norm equals `sqrt(K) * d_K(x,y)`.
pub fn log_map(t: &mut Tape, x: &LorentzPoint, y: &LorentzPoint) -> Result<TangentVector> {
    same_curvature(t, x.curvature, y.curvature)?;
    let coords = log_map_rows(t, x.coords, y.coords, x.curvature)?;
    Ok(TangentVector {
        coords,
        base: x.coords,
        curvature: x.curvature,
    })
}

/// Parallel transport of `v` (tangent at `x`) to the tangent space at `y`.
pub fn parallel_transport(
    t: &mut Tape,
    x: &LorentzPoint,
    y: &LorentzPoint,
    v: &TangentVector,
) -> Result<TangentVector> {
    same_curvature(t, x.curvature, y.curvature)?;
    same_curvature(t, x.curvature, v.curvature)?;
    if v.base != x.coords {
        return Err(Error::InvalidInput(
            "parallel_transport: tangent vector is based at a different point".into(),
        ));
    }
    let coords = transport_rows(t, x.coords, y.coords, v.coords, x.curvature)?;
    Ok(TangentVector {
        coords,
        base: y.coords,
        curvature: y.curvature,
    })
}

/// Project a raw ambient row onto the hyperboloid.
pub fn project_to_hyperboloid(t: &mut Tape, raw: Var, k: Var) -> Result<LorentzPoint> {
    let coords = project_rows(t, raw, k)?;
    Ok(LorentzPoint {
        coords,
        curvature: k,
    })
}

/// Project a raw ambient row onto the tangent space at `x`.
pub fn project_to_tangent(t: &mut Tape, x: &LorentzPoint, raw: Var) -> Result<TangentVector> {
    let coords = project_tangent_rows(t, x.coords, raw, x.curvature)?;
    Ok(TangentVector {
        coords,
        base: x.coords,
        curvature: x.curvature,
    })
}

/// Lorentzian norm `sqrt(<v,v>_L)` of a tangent vector. Rejects vectors with
/// square norm below -1e-9 instead of extending the norm off the spacelike
/// cone.
pub fn tangent_norm(t: &mut Tape, v: &TangentVector) -> Result<Var> {
    let vv = t.lorentz_inner_rows(v.coords, v.coords)?;
    let vv_val = t.value(vv).item()?;
    if vv_val < SPACELIKE_TOL {
        return Err(Error::NonSpacelikeTangent { value: vv_val });
    }
    let cl = t.clamp(vv, 0.0, f64::INFINITY)?;
    t.sqrt(cl)
}

/// Random point with spatial coordinates drawn from N(0, scale^2).
pub fn random_point(
    t: &mut Tape,
    k: Var,
    dim: usize,
    scale: f64,
    rng: &mut impl rand::Rng,
) -> Result<LorentzPoint> {
    let mut raw = vec![0.0];
    raw.extend((0..dim).map(|_| scale * rng.sample::<f64, _>(rand_distr::StandardNormal)));
    let leaf = t.leaf(crate::tensor::Tensor::row(&raw));
    project_to_hyperboloid(t, leaf, k)
}

/// Random tangent vector at `x` rescaled to the requested Lorentzian norm.
pub fn random_tangent(
    t: &mut Tape,
    x: &LorentzPoint,
    norm: f64,
    rng: &mut impl rand::Rng,
) -> Result<TangentVector> {
    let cols = t.value(x.coords).cols();
    let raw: Vec<f64> = (0..cols)
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    let leaf = t.leaf(crate::tensor::Tensor::row(&raw));
    let v = project_to_tangent(t, x, leaf)?;
    let n = tangent_norm(t, &v)?;
    let n_val = t.value(n).item()?.max(1e-12);
    let coords = t.mul_const(v.coords, norm / n_val)?;
    Ok(TangentVector {
        coords,
        base: x.coords,
        curvature: x.curvature,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn tape_with_k(k: f64) -> (Tape, Var) {
        let mut t = Tape::new();
        let kv = t.scalar(k);
        (t, kv)
    }

    fn point(t: &mut Tape, k: Var, raw: &[f64]) -> LorentzPoint {
        let r = t.leaf(Tensor::row(raw));
        project_to_hyperboloid(t, r, k).unwrap()
    }

    /// Random point with spatial coordinates ~ N(0, scale).
    fn random_point(
        t: &mut Tape,
        k: Var,
        dim: usize,
        scale: f64,
        rng: &mut ChaCha8Rng,
    ) -> LorentzPoint {
        let mut raw = vec![0.0];
        raw.extend((0..dim).map(|_| scale * rng.sample::<f64, _>(rand_distr::StandardNormal)));
        point(t, k, &raw)
    }

    /// Random tangent vector at x with Lorentzian norm exactly `norm`.
    fn random_tangent(
        t: &mut Tape,
        x: &LorentzPoint,
        dim: usize,
        norm: f64,
        rng: &mut ChaCha8Rng,
    ) -> TangentVector {
        let raw: Vec<f64> = (0..=dim)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let rv = t.leaf(Tensor::row(&raw));
        let v = project_to_tangent(t, x, rv).unwrap();
        let n = tangent_norm(t, &v).unwrap();
        let n_val = t.value(n).item().unwrap().max(1e-12);
        let scaled = t.mul_const(v.coords, norm / n_val).unwrap();
        TangentVector {
            coords: scaled,
            base: x.coords,
            curvature: x.curvature,
        }
    }

    #[test]
    fn inner_product_examples() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::row(&[1.0, 0.0, 0.0]));
        let b = t.leaf(Tensor::row(&[0.0, 1.0, 0.0]));
        let c = t.leaf(Tensor::row(&[2.0, 1.0, 1.0]));
        let d = t.leaf(Tensor::row(&[3.0, 2.0, 2.0]));
        let aa = lorentz_inner(&mut t, a, a).unwrap();
        let ab = lorentz_inner(&mut t, a, b).unwrap();
        let cd = lorentz_inner(&mut t, c, d).unwrap();
        assert_eq!(t.value(aa).item().unwrap(), -1.0);
        assert_eq!(t.value(ab).item().unwrap(), 0.0);
        assert_eq!(t.value(cd).item().unwrap(), -2.0);
    }

    #[test]
    fn inner_length_mismatch_rejected() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::row(&[1.0, 0.0, 0.0]));
        let b = t.leaf(Tensor::row(&[1.0, 0.0]));
        assert!(lorentz_inner(&mut t, a, b).is_err());
    }

    #[test]
    fn distance_self_is_zero_up_to_clamp() {
        let (mut t, k) = tape_with_k(1.0);
        let x = point(&mut t, k, &[0.0, 0.7, -0.3]);
        let d = geodesic_distance(&mut t, &x, &x).unwrap();
        // The arcosh argument is clamped at 1 + 1e-12, so "zero" means
        // arcosh(1 + 1e-12) ~ 1.41e-6 at worst.
        assert!(t.value(d).item().unwrap() < 2e-6);
    }

    #[test]
    fn distance_unit_curvature_example() {
        let (mut t, k) = tape_with_k(1.0);
        let x = t.leaf(Tensor::row(&[1.0, 0.0, 0.0]));
        let y = t.leaf(Tensor::row(&[1f64.cosh(), 1f64.sinh(), 0.0]));
        let x = LorentzPoint { coords: x, curvature: k };
        let y = LorentzPoint { coords: y, curvature: k };
        let d = geodesic_distance(&mut t, &x, &y).unwrap();
        assert!((t.value(d).item().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn distance_scaled_curvature_example() {
        let (mut t, k) = tape_with_k(4.0);
        let x = t.leaf(Tensor::row(&[2.0, 0.0, 0.0]));
        let y = t.leaf(Tensor::row(&[2.0 * 1f64.cosh(), 2.0 * 1f64.sinh(), 0.0]));
        let x = LorentzPoint { coords: x, curvature: k };
        let y = LorentzPoint { coords: y, curvature: k };
        let d = geodesic_distance(&mut t, &x, &y).unwrap();
        assert!((t.value(d).item().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn curvature_mismatch_detected() {
        let mut t = Tape::new();
        let k1 = t.scalar(1.0);
        let k2 = t.scalar(2.0);
        let x = point(&mut t, k1, &[0.0, 0.5, 0.0]);
        let y = point(&mut t, k2, &[0.0, 0.5, 0.0]);
        assert!(matches!(
            geodesic_distance(&mut t, &x, &y),
            Err(Error::CurvatureMismatch { .. })
        ));
    }

    #[test]
    fn exp_map_examples() {
        // zero tangent -> x
        let (mut t, k) = tape_with_k(1.0);
        let x = point(&mut t, k, &[0.0, 0.4, -0.2]);
        let z = t.zeros(1, 3);
        let v = project_to_tangent(&mut t, &x, z).unwrap();
        let y = exp_map(&mut t, &x, &v).unwrap();
        let (xc, yc) = (t.value(x.coords).clone(), t.value(y.coords).clone());
        assert!(xc.max_abs_diff(&yc) < 1e-12);

        // K=1: exp_(1,0,0)((0,1,0)) = (cosh 1, sinh 1, 0)
        let x = t.leaf(Tensor::row(&[1.0, 0.0, 0.0]));
        let x = LorentzPoint { coords: x, curvature: k };
        let vc = t.leaf(Tensor::row(&[0.0, 1.0, 0.0]));
        let v = TangentVector { coords: vc, base: x.coords, curvature: k };
        let y = exp_map(&mut t, &x, &v).unwrap();
        let expect = Tensor::row(&[1f64.cosh(), 1f64.sinh(), 0.0]);
        assert!(t.value(y.coords).max_abs_diff(&expect) < 1e-12);

        // K=4: exp_(2,0,0)((0,2,0)) = (2 cosh 1, 2 sinh 1, 0)
        let k4 = t.scalar(4.0);
        let x = t.leaf(Tensor::row(&[2.0, 0.0, 0.0]));
        let x = LorentzPoint { coords: x, curvature: k4 };
        let vc = t.leaf(Tensor::row(&[0.0, 2.0, 0.0]));
        let v = TangentVector { coords: vc, base: x.coords, curvature: k4 };
        let y = exp_map(&mut t, &x, &v).unwrap();
        let expect = Tensor::row(&[2.0 * 1f64.cosh(), 2.0 * 1f64.sinh(), 0.0]);
        assert!(t.value(y.coords).max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn exp_map_rejects_non_tangent() {
        let (mut t, k) = tape_with_k(1.0);
        let x = point(&mut t, k, &[0.0, 0.4, -0.2]);
        let vc = t.leaf(Tensor::row(&[1.0, 0.0, 0.0]));
        let v = TangentVector { coords: vc, base: x.coords, curvature: k };
        assert!(exp_map(&mut t, &x, &v).is_err());
    }

    #[test]
    fn exp_map_moves_distance_norm_over_sqrt_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &kval in &[0.5, 1.0, 2.0] {
            let (mut t, k) = tape_with_k(kval);
            for _ in 0..20 {
                let x = random_point(&mut t, k, 5, 1.0, &mut rng);
                let norm = rng.gen_range(0.01..3.0);
                let v = random_tangent(&mut t, &x, 5, norm, &mut rng);
                let y = exp_map(&mut t, &x, &v).unwrap();
                let d = geodesic_distance(&mut t, &x, &y).unwrap();
                let d_val = t.value(d).item().unwrap();
                assert!(
                    (d_val - norm / kval.sqrt()).abs() < 1e-8,
                    "K={kval}: moved {d_val}, expected {}",
                    norm / kval.sqrt()
                );
                // result satisfies the hyperboloid constraint
                assert!(y.constraint_residual(&mut t).unwrap() < 1e-9);
            }
        }
    }

    #[test]
    fn log_map_examples() {
        let (mut t, k) = tape_with_k(1.0);
        // coincident points -> zero vector
        let x = point(&mut t, k, &[0.0, 0.8, 0.1]);
        let v = log_map(&mut t, &x, &x).unwrap();
        for &c in t.value(v.coords).data() {
            assert!(c.abs() < 1e-12);
        }

        // inverse of the exp example
        let xc = t.leaf(Tensor::row(&[1.0, 0.0, 0.0]));
        let x = LorentzPoint { coords: xc, curvature: k };
        let yc = t.leaf(Tensor::row(&[1f64.cosh(), 1f64.sinh(), 0.0]));
        let y = LorentzPoint { coords: yc, curvature: k };
        let v = log_map(&mut t, &x, &y).unwrap();
        let expect = Tensor::row(&[0.0, 1.0, 0.0]);
        assert!(t.value(v.coords).max_abs_diff(&expect) < 1e-9);
    }

    #[test]
    fn exp_log_roundtrip_and_norm_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &kval in &[0.5, 1.0, 2.0] {
            let (mut t, k) = tape_with_k(kval);
            for _ in 0..50 {
                let x = random_point(&mut t, k, 4, 1.0, &mut rng);
                let norm = rng.gen_range(1e-3..3.0);
                let v = random_tangent(&mut t, &x, 4, norm, &mut rng);
                let y = exp_map(&mut t, &x, &v).unwrap();
                let back = log_map(&mut t, &x, &y).unwrap();
                let diff = t
                    .value(v.coords)
                    .max_abs_diff(t.value(back.coords));
                assert!(diff < 1e-6, "K={kval}: roundtrip error {diff}");

                // |log_x(y)|_L = sqrt(K) d(x,y)
                let n = tangent_norm(&mut t, &back).unwrap();
                let d = geodesic_distance(&mut t, &x, &y).unwrap();
                let lhs = t.value(n).item().unwrap();
                let rhs = kval.sqrt() * t.value(d).item().unwrap();
                assert!((lhs - rhs).abs() < 1e-8, "norm identity: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn log_then_exp_recovers_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (mut t, k) = tape_with_k(1.0);
        for _ in 0..50 {
            let x = random_point(&mut t, k, 4, 1.0, &mut rng);
            let y = random_point(&mut t, k, 4, 1.0, &mut rng);
            let v = log_map(&mut t, &x, &y).unwrap();
            let back = exp_map(&mut t, &x, &v).unwrap();
            let diff = t.value(y.coords).max_abs_diff(t.value(back.coords));
            assert!(diff < 1e-8, "exp_x(log_x(y)) error {diff}");
        }
    }

    #[test]
    fn transport_identities() {
        let (mut t, k) = tape_with_k(1.0);
        // PT x->x is the identity: <x,v>_L = 0 kills the correction.
        let x = point(&mut t, k, &[0.0, 0.6, -0.4]);
        let raw = t.leaf(Tensor::row(&[0.3, 1.0, 0.2]));
        let v = project_to_tangent(&mut t, &x, raw).unwrap();
        let moved = parallel_transport(&mut t, &x, &x, &v).unwrap();
        assert!(t.value(v.coords).max_abs_diff(t.value(moved.coords)) < 1e-12);

        // transported vectors are tangent at the target
        let xc = t.leaf(Tensor::row(&[1.0, 0.0, 0.0]));
        let x = LorentzPoint { coords: xc, curvature: k };
        let yc = t.leaf(Tensor::row(&[1f64.cosh(), 1f64.sinh(), 0.0]));
        let y = LorentzPoint { coords: yc, curvature: k };
        let vc = t.leaf(Tensor::row(&[0.0, 1.0, 0.0]));
        let v = TangentVector { coords: vc, base: x.coords, curvature: k };
        let moved = parallel_transport(&mut t, &x, &y, &v).unwrap();
        let ry = t.lorentz_inner_rows(moved.coords, y.coords).unwrap();
        assert!(t.value(ry).item().unwrap().abs() < 1e-10);
        let rr = t.lorentz_inner_rows(moved.coords, moved.coords).unwrap();
        assert!((t.value(rr).item().unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn transport_is_isometric_and_invertible() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (mut t, k) = tape_with_k(1.0);
        for _ in 0..30 {
            let x = random_point(&mut t, k, 5, 1.0, &mut rng);
            let y = random_point(&mut t, k, 5, 1.0, &mut rng);
            let u = random_tangent(&mut t, &x, 5, 1.3, &mut rng);
            let v = random_tangent(&mut t, &x, 5, 0.7, &mut rng);
            let uv = t.lorentz_inner_rows(u.coords, v.coords).unwrap();
            let tu = parallel_transport(&mut t, &x, &y, &u).unwrap();
            let tv = parallel_transport(&mut t, &x, &y, &v).unwrap();
            let tuv = t.lorentz_inner_rows(tu.coords, tv.coords).unwrap();
            let before = t.value(uv).item().unwrap();
            let after = t.value(tuv).item().unwrap();
            assert!((before - after).abs() < 1e-8, "isometry: {before} vs {after}");

            let back = parallel_transport(&mut t, &y, &x, &tu).unwrap();
            let diff = t.value(u.coords).max_abs_diff(t.value(back.coords));
            assert!(diff < 1e-7, "roundtrip transport error {diff}");
        }
    }

    #[test]
    fn projection_examples() {
        let (mut t, k) = tape_with_k(1.0);
        let p = point(&mut t, k, &[0.9, 0.0, 0.0]);
        assert!(t.value(p.coords).max_abs_diff(&Tensor::row(&[1.0, 0.0, 0.0])) < 1e-15);

        let p = point(&mut t, k, &[5.0, 3.0, 4.0]);
        let expect = Tensor::row(&[26f64.sqrt(), 3.0, 4.0]);
        assert!(t.value(p.coords).max_abs_diff(&expect) < 1e-15);

        // idempotence
        let again = project_to_hyperboloid(&mut t, p.coords, k).unwrap();
        assert!(t.value(p.coords).max_abs_diff(t.value(again.coords)) < 1e-15);
    }

    #[test]
    fn tangent_projection_examples() {
        let (mut t, k) = tape_with_k(1.0);
        let xc = t.leaf(Tensor::row(&[1.0, 0.0, 0.0]));
        let x = LorentzPoint { coords: xc, curvature: k };

        // (1,1,0) at (1,0,0) -> (0,1,0)
        let raw = t.leaf(Tensor::row(&[1.0, 1.0, 0.0]));
        let v = project_to_tangent(&mut t, &x, raw).unwrap();
        assert!(t.value(v.coords).max_abs_diff(&Tensor::row(&[0.0, 1.0, 0.0])) < 1e-15);

        // raw = x -> zero vector
        let v = project_to_tangent(&mut t, &x, xc).unwrap();
        assert!(t.value(v.coords).max_abs_diff(&Tensor::zeros(1, 3)) < 1e-15);

        // already tangent -> unchanged; idempotent
        let again = project_to_tangent(&mut t, &x, v.coords).unwrap();
        assert!(t.value(v.coords).max_abs_diff(t.value(again.coords)) < 1e-15);
    }

    #[test]
    fn triangle_inequality_on_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (mut t, k) = tape_with_k(1.0);
        for _ in 0..100 {
            let a = random_point(&mut t, k, 4, 1.5, &mut rng);
            let b = random_point(&mut t, k, 4, 1.5, &mut rng);
            let c = random_point(&mut t, k, 4, 1.5, &mut rng);
            let ab = geodesic_distance(&mut t, &a, &b).unwrap();
            let bc = geodesic_distance(&mut t, &b, &c).unwrap();
            let ac = geodesic_distance(&mut t, &a, &c).unwrap();
            let (ab, bc, ac) = (
                t.value(ab).item().unwrap(),
                t.value(bc).item().unwrap(),
                t.value(ac).item().unwrap(),
            );
            assert!(ac <= ab + bc + 1e-9, "triangle violated: {ac} > {ab}+{bc}");
        }
    }

    #[test]
    fn manifold_ops_pass_gradient_check() {
        use crate::gradcheck::check_gradients;
        // Scalar function mixing distance, exp, log, and transport, driven by
        // raw ambient inputs plus the curvature itself.
        let params = [
            ("raw_x", Tensor::row(&[0.0, 0.6, -0.3, 0.2])),
            ("raw_y", Tensor::row(&[0.0, -0.4, 0.5, 0.1])),
            ("raw_v", Tensor::row(&[0.2, 0.8, -0.1, 0.4])),
            ("k", Tensor::scalar(1.3)),
        ];
        let report = check_gradients(
            |t, vs| {
                let k = vs[3];
                let x = project_to_hyperboloid(t, vs[0], k)?;
                let y = project_to_hyperboloid(t, vs[1], k)?;
                let v = project_to_tangent(t, &x, vs[2])?;
                let d = geodesic_distance(t, &x, &y)?;
                let moved = exp_map(t, &x, &v)?;
                let lg = log_map(t, &moved, &y)?;
                let pt = parallel_transport(t, &x, &y, &v)?;
                let n1 = t.lorentz_inner_rows(lg.coords, lg.coords)?;
                let n2 = t.lorentz_inner_rows(pt.coords, pt.coords)?;
                let s = t.add(n1, n2)?;
                let s = t.add(s, d)?;
                t.sum(s)
            },
            &params,
            1e-5,
            1e-5,
        )
        .unwrap();
        assert!(report.pass(), "{report:#?}");
    }
}
