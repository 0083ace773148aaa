//! Smooth cutoffs built from `exp(-1/s)`.

/// Value and first two derivatives of a scalar profile.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet1 {
    pub v: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Jet1 {
    pub const ZERO: Jet1 = Jet1 { v: 0.0, d1: 0.0, d2: 0.0 };
    pub const ONE: Jet1 = Jet1 { v: 1.0, d1: 0.0, d2: 0.0 };
}

fn h(s: f64) -> Jet1 {
    if s <= 0.0 {
        return Jet1::ZERO;
    }
    let e = (-1.0 / s).exp();
    let s2 = s * s;
    Jet1 { v: e, d1: e / s2, d2: e * (1.0 / (s2 * s2) - 2.0 / (s2 * s)) }
}

/// C-infinity step: 0 for `s <= 0`, 1 for `s >= 1`.
pub fn step(s: f64) -> Jet1 {
    if s <= 0.0 {
        return Jet1::ZERO;
    }
    if s >= 1.0 {
        return Jet1::ONE;
    }
    let a = h(s);
    let b = h(1.0 - s);
    let n = a;
    let d = Jet1 { v: a.v + b.v, d1: a.d1 - b.d1, d2: a.d2 + b.d2 };
    let v = n.v / d.v;
    let q = n.d1 * d.v - n.v * d.d1;
    let d1 = q / (d.v * d.v);
    let d2 = (n.d2 * d.v - n.v * d.d2) / (d.v * d.v) - 2.0 * d.d1 * q / (d.v * d.v * d.v);
    Jet1 { v, d1, d2 }
}

/// Plateau cutoff: 1 on `[0, plateau]`, 0 on `[1, inf)`, smooth and monotone between.
pub fn plateau(u: f64, plateau: f64) -> Jet1 {
    let w = 1.0 - plateau;
    let s = step((u - plateau) / w);
    Jet1 { v: 1.0 - s.v, d1: -s.d1 / w, d2: -s.d2 / (w * w) }
}

/// `chi(r)`: 1 on `[0, eps]`, 0 on `[2 eps, inf)`.
pub fn chi(r: f64, eps: f64) -> f64 {
    1.0 - step((r - eps) / eps).v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_limits_and_symmetry() {
        assert_eq!(step(-0.3).v, 0.0);
        assert_eq!(step(1.2).v, 1.0);
        for i in 1..20 {
            let s = i as f64 / 20.0;
            assert!((step(s).v + step(1.0 - s).v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn step_derivatives_match_differences() {
        let hstep = 1e-5;
        for i in 1..40 {
            let s = i as f64 / 40.0;
            let j = step(s);
            let fd1 = (step(s + hstep).v - step(s - hstep).v) / (2.0 * hstep);
            let fd2 = (step(s + hstep).d1 - step(s - hstep).d1) / (2.0 * hstep);
            assert!((j.d1 - fd1).abs() < 1e-7 * (1.0 + fd1.abs()), "s={s}");
            assert!((j.d2 - fd2).abs() < 1e-6 * (1.0 + fd2.abs()), "s={s}");
        }
    }

    #[test]
    fn plateau_support() {
        assert_eq!(plateau(0.5, 0.9).v, 1.0);
        assert_eq!(plateau(0.9, 0.9).v, 1.0);
        assert_eq!(plateau(1.0, 0.9).v, 0.0);
        assert_eq!(plateau(1.7, 0.9).d2, 0.0);
        assert!(plateau(0.95, 0.9).v > 0.0 && plateau(0.95, 0.9).v < 1.0);
    }

    #[test]
    fn chi_is_monotone() {
        let mut prev = 1.0;
        for i in 0..=100 {
            let v = chi(i as f64 * 0.01, 0.3);
            assert!(v <= prev + 1e-15);
            prev = v;
        }
        assert_eq!(chi(0.3, 0.3), 1.0);
        assert_eq!(chi(0.6, 0.3), 0.0);
    }
}
