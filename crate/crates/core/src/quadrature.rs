//! Adaptive Gauss-Kronrod (7/15 nodes) and Gauss-Laguerre quadrature.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

const MAX_INTERVALS: usize = 20_000;

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for i in 0..7 {
        let x = h * XGK[i];
        let s = f(c - x) + f(c + x);
        kron += WGK[i] * s;
        if i % 2 == 1 {
            gauss += WG[i / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Integral of f over [a, b] to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let mut stack = vec![(a, b, gk15(&f, a, b))];
    let mut total = 0.0;
    let mut comp = 0.0;
    let mut count = 0;
    while let Some((lo, hi, (val, err))) = stack.pop() {
        let local = tol * ((hi - lo) / (b - a)).abs();
        if err <= local.max(1e-15 * val.abs()) || (hi - lo).abs() < 1e-13 * (1.0 + lo.abs()) {
            let y = val - comp;
            let t = total + y;
            comp = (t - total) - y;
            total = t;
            continue;
        }
        count += 1;
        if count > MAX_INTERVALS {
            return Err(Error::numerical(format!("quadrature on [{a}, {b}] did not converge")));
        }
        let mid = 0.5 * (lo + hi);
        stack.push((mid, hi, gk15(&f, mid, hi)));
        stack.push((lo, mid, gk15(&f, lo, mid)));
    }
    if !total.is_finite() {
        return Err(Error::numerical(format!("non-finite integral on [{a}, {b}]")));
    }
    Ok(total)
}

/// Integral of s^(beta-1) psi(s) over [0, s0] with psi smooth, via s = u^(1/beta).
pub fn integrate_power_singular<F: Fn(f64) -> f64>(beta: f64, psi: F, s0: f64, tol: f64) -> Result<f64> {
    if beta <= 0.0 {
        return Err(Error::domain("power singularity exponent must be positive"));
    }
    let inv = 1.0 / beta;
    let v = integrate(|u: f64| psi(u.powf(inv)), 0.0, s0.powf(beta), tol * beta)?;
    Ok(v / beta)
}

/// Integral of f over [a, inf), summed over blocks of growing width until a block is negligible.
pub fn integrate_tail<F: Fn(f64) -> f64>(f: F, a: f64, tol: f64) -> Result<f64> {
    let mut lo = a;
    let mut width = 4.0;
    let mut total = 0.0;
    for _ in 0..200 {
        let piece = integrate(&f, lo, lo + width, tol)?;
        total += piece;
        lo += width;
        if piece.abs() <= tol * 1e-3 && f(lo).abs() * width <= tol * 1e-3 {
            return Ok(total);
        }
        width *= 1.5;
    }
    Err(Error::numerical(format!("tail integral from {a} did not converge")))
}

/// Nodes and probability weights for the Gamma(alpha) law, exact for polynomials of degree < 2n.
pub fn gauss_laguerre(alpha: f64, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if alpha <= 0.0 || n == 0 {
        return Err(Error::domain("Gauss-Laguerre needs alpha > 0 and n >= 1"));
    }
    let a = alpha - 1.0;
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let fi = i as f64;
        jac[(i, i)] = 2.0 * fi + a + 1.0;
        if i + 1 < n {
            let off = ((fi + 1.0) * (fi + 1.0 + a)).sqrt();
            jac[(i, i + 1)] = off;
            jac[(i + 1, i)] = off;
        }
    }
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    Ok(pairs.into_iter().unzip())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_integrals() {
        let v = integrate(|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-12).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
        let v = integrate_tail(|x: f64| (-x).exp(), 0.0, 1e-12).unwrap();
        assert!((v - 1.0).abs() < 1e-11);
    }

    #[test]
    fn singular_endpoint() {
        // int_0^1 s^(-1/2) cos(s) ds
        let v = integrate_power_singular(0.5, |s: f64| s.cos(), 1.0, 1e-12).unwrap();
        let reference = 1.809_048_475_800_544;
        assert!((v - reference).abs() < 1e-10);
    }

    #[test]
    fn laguerre_rule_moments() {
        let alpha = 2.5;
        let (x, w) = gauss_laguerre(alpha, 12).unwrap();
        let mut expected = 1.0;
        for m in 0..20 {
            let got: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(m)).sum();
            assert!((got - expected).abs() < 1e-9 * expected, "moment {m}");
            expected *= alpha + m as f64;
        }
    }
}
