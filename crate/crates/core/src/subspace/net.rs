use std::f64::consts::PI;

use nalgebra::DVector;

use super::{SubspaceBasis, TruncatedVector};
use crate::error::{Error, Result};

pub const DEFAULT_NET_CAP: usize = 2_000_000;

/// Points a `resolution`-net of the unit sphere of span(`s`).
pub fn unit_net(s: &SubspaceBasis, resolution: f64) -> Result<Vec<TruncatedVector>> {
    unit_net_capped(s, resolution, DEFAULT_NET_CAP)
}

pub fn unit_net_capped(s: &SubspaceBasis, resolution: f64, cap: usize) -> Result<Vec<TruncatedVector>> {
    if !(resolution > 0.0 && resolution < 1.0) {
        return Err(Error::invalid(format!(
            "net resolution must lie in (0, 1), got {resolution}"
        )));
    }
    let k = s.rank();
    if k == 0 {
        return Err(Error::invalid("the zero subspace has an empty unit sphere"));
    }
    sphere_net_size(k, resolution, cap).ok_or(Error::NetTooLarge { cap })?;
    let mut pts = Vec::new();
    sphere_points(k, resolution, &mut pts);
    pts.into_iter()
        .map(|c| {
            let v = s.onb() * DVector::from_vec(c);
            TruncatedVector::from_dvector(v)
        })
        .collect()
}

/// Number of points of the net of S^{dim-1}, or `None` once it exceeds `cap`.
pub fn sphere_net_size(dim: usize, rho: f64, cap: usize) -> Option<usize> {
    let n = count(dim, rho, cap);
    (n <= cap).then_some(n)
}

fn circle_steps(rho: f64) -> usize {
    (2.0 * PI / (2.0 * (rho / 2.0).asin())).ceil() as usize
}

fn polar_steps(rho: f64) -> usize {
    let s = 4.0 * (rho / 4.0).min(1.0).asin();
    (PI / s).ceil().max(1.0) as usize
}

// Saturates at cap + 1.
fn count(dim: usize, rho: f64, cap: usize) -> usize {
    if dim == 1 {
        return 2;
    }
    if rho >= 2.0 {
        return 1;
    }
    if dim == 2 {
        return circle_steps(rho).min(cap + 1);
    }
    let k = polar_steps(rho);
    let mut total = 0usize;
    for i in 0..=k {
        let theta = i as f64 * PI / k as f64;
        let st = theta.sin();
        total += if st < 1e-15 {
            1
        } else {
            count(dim - 1, (rho / 2.0) / st, cap)
        };
        if total > cap {
            return cap + 1;
        }
    }
    total
}

fn sphere_points(dim: usize, rho: f64, out: &mut Vec<Vec<f64>>) {
    if dim == 1 {
        out.push(vec![1.0]);
        out.push(vec![-1.0]);
        return;
    }
    if rho >= 2.0 {
        let mut p = vec![0.0; dim];
        p[0] = 1.0;
        out.push(p);
        return;
    }
    if dim == 2 {
        let k = circle_steps(rho);
        for i in 0..k {
            let a = 2.0 * PI * i as f64 / k as f64;
            out.push(vec![a.cos(), a.sin()]);
        }
        return;
    }
    // x = (cos t, sin t * w): grid t, then a coarser net for w where sin t is small.
    let k = polar_steps(rho);
    for i in 0..=k {
        let theta = i as f64 * PI / k as f64;
        let (st, ct) = theta.sin_cos();
        if st < 1e-15 {
            let mut p = vec![0.0; dim];
            p[0] = ct.signum();
            out.push(p);
            continue;
        }
        let mut sub = Vec::new();
        sphere_points(dim - 1, (rho / 2.0) / st, &mut sub);
        for w in sub {
            let mut p = Vec::with_capacity(dim);
            p.push(ct);
            p.extend(w.iter().map(|c| st * c));
            out.push(p);
        }
    }
}
