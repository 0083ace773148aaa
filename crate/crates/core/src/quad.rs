//! Quadrature rules on intervals and spheres.

use nalgebra::DVector;
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Gauss–Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    x.iter().zip(&w).map(|(xi, wi)| (mid + half * xi, half * wi)).collect()
}

/// Nodes on the unit sphere `S^{k-1}` in `R^k` with weights summing to its area.
///
/// Every node's antipode is also a node (`antipode[i]`).
#[derive(Clone, Debug)]
pub struct SphereRule {
    pub nodes: Vec<DVector<f64>>,
    pub weights: Vec<f64>,
    pub antipode: Vec<usize>,
}

impl SphereRule {
    /// `n` controls resolution: points on a circle, or polar nodes on `S^2`
    /// (with `2n` azimuths).
    pub fn new(k: usize, n: usize) -> Result<Self> {
        match k {
            1 => Ok(SphereRule {
                nodes: vec![DVector::from_vec(vec![1.0]), DVector::from_vec(vec![-1.0])],
                weights: vec![1.0, 1.0],
                antipode: vec![1, 0],
            }),
            2 => {
                let m = 2 * n.div_ceil(2).max(1);
                let nodes = (0..m)
                    .map(|j| {
                        let a = 2.0 * PI * j as f64 / m as f64;
                        DVector::from_vec(vec![a.cos(), a.sin()])
                    })
                    .collect();
                Ok(SphereRule {
                    nodes,
                    weights: vec![2.0 * PI / m as f64; m],
                    antipode: (0..m).map(|j| (j + m / 2) % m).collect(),
                })
            }
            3 => {
                let np = n.max(1);
                let na = 2 * np;
                let (cz, wz) = gauss_legendre(np);
                let mut nodes = Vec::with_capacity(np * na);
                let mut weights = Vec::with_capacity(np * na);
                for i in 0..np {
                    let s = (1.0 - cz[i] * cz[i]).max(0.0).sqrt();
                    for j in 0..na {
                        let a = 2.0 * PI * (j as f64 + 0.5) / na as f64;
                        nodes.push(DVector::from_vec(vec![s * a.cos(), s * a.sin(), cz[i]]));
                        weights.push(wz[i] * 2.0 * PI / na as f64);
                    }
                }
                let antipode = (0..np * na)
                    .map(|idx| {
                        let (i, j) = (idx / na, idx % na);
                        (np - 1 - i) * na + (j + na / 2) % na
                    })
                    .collect();
                Ok(SphereRule { nodes, weights, antipode })
            }
            _ => Err(Error::Dimension(k)),
        }
    }

    /// Composite rule refined inside the cap of half-angle `cap` around `pole`
    /// and around its antipode, with `n_cap` nodes per cap interval and `n_rest`
    /// elsewhere. Still integrates over the whole sphere.
    pub fn graded(pole: &DVector<f64>, cap: f64, n_cap: usize, n_rest: usize) -> Result<Self> {
        let k = pole.len();
        if !(cap > 0.0 && cap < 0.5 * PI) {
            return Err(Error::Invalid("cap angle must lie in (0, pi/2)".into()));
        }
        let pole = pole.normalize();
        let frame = orthonormal_complement(&pole);
        match k {
            2 => {
                let arcs = [(-cap, cap, n_cap), (cap, PI - cap, n_rest), (PI - cap, PI + cap, n_cap), (PI + cap, 2.0 * PI - cap, n_rest)];
                let mut nodes = Vec::new();
                let mut weights = Vec::new();
                let mut starts = Vec::new();
                for &(a, b, n) in &arcs {
                    starts.push(nodes.len());
                    for (t, w) in gauss_legendre_on(n.max(1), a, b) {
                        nodes.push(&pole * t.cos() + &frame[0] * t.sin());
                        weights.push(w);
                    }
                }
                let mut antipode = vec![0; nodes.len()];
                for q in 0..4 {
                    let n = arcs[q].2.max(1);
                    for i in 0..n {
                        antipode[starts[q] + i] = starts[(q + 2) % 4] + i;
                    }
                }
                Ok(SphereRule { nodes, weights, antipode })
            }
            3 => {
                let z1 = cap.cos();
                let mut zs = gauss_legendre_on(n_cap.max(1), -1.0, -z1);
                zs.extend(gauss_legendre_on(n_rest.max(1), -z1, z1));
                zs.extend(gauss_legendre_on(n_cap.max(1), z1, 1.0));
                let np = zs.len();
                let na = 2 * n_cap.max(n_rest).max(1);
                let mut nodes = Vec::with_capacity(np * na);
                let mut weights = Vec::with_capacity(np * na);
                for &(z, wz) in &zs {
                    let s = (1.0 - z * z).max(0.0).sqrt();
                    for j in 0..na {
                        let a = 2.0 * PI * (j as f64 + 0.5) / na as f64;
                        nodes.push(&pole * z + (&frame[0] * a.cos() + &frame[1] * a.sin()) * s);
                        weights.push(wz * 2.0 * PI / na as f64);
                    }
                }
                let antipode = (0..np * na)
                    .map(|idx| {
                        let (i, j) = (idx / na, idx % na);
                        (np - 1 - i) * na + (j + na / 2) % na
                    })
                    .collect();
                Ok(SphereRule { nodes, weights, antipode })
            }
            _ => Err(Error::Dimension(k)),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Orthonormal basis of the complement of a unit vector, as columns.
pub fn orthonormal_complement(u: &DVector<f64>) -> Vec<DVector<f64>> {
    let d = u.len();
    let un = u.normalize();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(d - 1);
    // start from coordinate axes ordered by how little they overlap with u
    let mut axes: Vec<usize> = (0..d).collect();
    axes.sort_by(|&a, &b| un[a].abs().partial_cmp(&un[b].abs()).unwrap());
    for &ax in &axes {
        if basis.len() == d - 1 {
            break;
        }
        let mut v = DVector::zeros(d);
        v[ax] = 1.0;
        v -= &un * un.dot(&v);
        for b in &basis {
            let p = b.dot(&v);
            v -= b * p;
        }
        let nv = v.norm();
        if nv > 1e-8 {
            basis.push(v / nv);
        }
    }
    basis
}

/// Roughly uniform directions on `S^{k-1}` (golden spiral on `S^2`).
pub fn spiral_directions(k: usize, n: usize) -> Result<Vec<DVector<f64>>> {
    match k {
        2 => Ok((0..n)
            .map(|j| {
                let a = 2.0 * PI * (j as f64 + 0.5) / n as f64;
                DVector::from_vec(vec![a.cos(), a.sin()])
            })
            .collect()),
        3 => {
            let golden = PI * (3.0 - 5f64.sqrt());
            Ok((0..n)
                .map(|j| {
                    let z = 1.0 - 2.0 * (j as f64 + 0.5) / n as f64;
                    let r = (1.0 - z * z).sqrt();
                    let a = golden * j as f64;
                    DVector::from_vec(vec![r * a.cos(), r * a.sin(), z])
                })
                .collect())
        }
        _ => Err(Error::Dimension(k)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(7);
        for p in 0..14 {
            let q: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(p)).sum();
            let exact = if p % 2 == 1 { 0.0 } else { 2.0 / (p as f64 + 1.0) };
            assert!((q - exact).abs() < 1e-13, "degree {p}");
        }
    }

    #[test]
    fn sphere_areas() {
        let s1 = SphereRule::new(2, 9).unwrap();
        assert!((s1.weights.iter().sum::<f64>() - 2.0 * PI).abs() < 1e-12);
        let s2 = SphereRule::new(3, 8).unwrap();
        assert!((s2.weights.iter().sum::<f64>() - 4.0 * PI).abs() < 1e-12);
        // second moment of z over S^2 is 4 pi / 3
        let m: f64 = s2.nodes.iter().zip(&s2.weights).map(|(v, w)| w * v[2] * v[2]).sum();
        assert!((m - 4.0 * PI / 3.0).abs() < 1e-12);
    }

    #[test]
    fn antipodes_are_consistent() {
        for (k, n) in [(1, 1), (2, 6), (3, 5)] {
            let r = SphereRule::new(k, n).unwrap();
            for i in 0..r.len() {
                let j = r.antipode[i];
                assert!((&r.nodes[i] + &r.nodes[j]).norm() < 1e-12);
                assert_eq!(r.antipode[j], i);
            }
        }
    }

    #[test]
    fn complement_is_orthonormal() {
        let u = DVector::from_vec(vec![0.3, -0.4, 0.866]);
        let b = orthonormal_complement(&u);
        assert_eq!(b.len(), 2);
        for v in &b {
            assert!(v.dot(&u).abs() < 1e-12);
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
        assert!(b[0].dot(&b[1]).abs() < 1e-12);
    }

    #[test]
    fn graded_rule_is_exact_on_low_degree() {
        let pole = DVector::from_vec(vec![0.3, -0.4, 0.8]);
        let r = SphereRule::graded(&pole, 0.4, 6, 4).unwrap();
        let total: f64 = r.weights.iter().sum();
        assert!((total - 4.0 * PI).abs() < 1e-12);
        let m: f64 = r.nodes.iter().zip(&r.weights).map(|(n, w)| w * n[0] * n[0]).sum();
        assert!((m - 4.0 * PI / 3.0).abs() < 1e-12);
        for (i, &j) in r.antipode.iter().enumerate() {
            assert!((&r.nodes[i] + &r.nodes[j]).norm() < 1e-12);
            assert!((r.weights[i] - r.weights[j]).abs() < 1e-14);
        }
        let c = SphereRule::graded(&DVector::from_vec(vec![1.0, 1.0]), 0.3, 5, 3).unwrap();
        let m2: f64 = c.nodes.iter().zip(&c.weights).map(|(n, w)| w * n[1] * n[1]).sum();
        assert!((m2 - PI).abs() < 1e-12);
        for (i, &j) in c.antipode.iter().enumerate() {
            assert!((&c.nodes[i] + &c.nodes[j]).norm() < 1e-12);
        }
    }
}
