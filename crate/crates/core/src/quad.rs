//! Numerical quadrature: fixed Gauss-Legendre rules and adaptive Gauss-Kronrod.

use crate::scalar::{lit, Scalar};

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre<T> {
    pub nodes: Vec<T>,
    pub weights: Vec<T>,
}

impl<T: Scalar> GaussLegendre<T> {
    /// Build an `n`-point rule (Newton iteration on the Legendre polynomial).
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "rule needs at least one node");
        let mut nodes = vec![T::zero(); n];
        let mut weights = vec![T::zero(); n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, z);
                dp = d;
                let dz = p / d;
                z -= dz;
                if dz.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, z);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - z * z) * dp * dp);
            nodes[i] = lit(-z);
            nodes[n - 1 - i] = lit(z);
            weights[i] = lit(w);
            weights[n - 1 - i] = lit(w);
        }
        Self { nodes, weights }
    }

    /// Integrate `f` over `[a, b]`.
    pub fn integrate<F: FnMut(T) -> T>(&self, a: T, b: T, mut f: F) -> T {
        let half = lit::<T>(0.5);
        let mid = half * (a + b);
        let rad = half * (b - a);
        let mut acc = T::zero();
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc = acc + *w * f(mid + rad * *x);
        }
        acc * rad
    }

    /// Composite rule over `panels` equal sub-intervals of `[a, b]`.
    pub fn integrate_composite<F: FnMut(T) -> T>(&self, a: T, b: T, panels: usize, mut f: F) -> T {
        let width = (b - a) / T::from_count(panels);
        (0..panels)
            .map(|k| {
                let lo = a + width * T::from_count(k);
                self.integrate(lo, lo + width, &mut f)
            })
            .sum()
    }

    /// Nodes and weights mapped onto `[a, b]` split into `panels` pieces.
    pub fn mapped(&self, a: T, b: T, panels: usize) -> Vec<(T, T)> {
        let half = lit::<T>(0.5);
        let width = (b - a) / T::from_count(panels);
        let mut out = Vec::with_capacity(panels * self.nodes.len());
        for k in 0..panels {
            let lo = a + width * T::from_count(k);
            let mid = lo + half * width;
            for (x, w) in self.nodes.iter().zip(&self.weights) {
                out.push((mid + half * width * *x, half * width * *w));
            }
        }
        out
    }
}

fn legendre(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let d = nf * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const GAUSS7_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<T: Scalar, F: FnMut(T) -> T>(f: &mut F, a: T, b: T) -> (T, T) {
    let half = lit::<T>(0.5);
    let mid = half * (a + b);
    let rad = half * (b - a);
    let fc = f(mid);
    let mut kronrod = fc * lit(GK_WEIGHTS[7]);
    let mut gauss = fc * lit(GAUSS7_WEIGHTS[3]);
    for j in 0..7 {
        let dx = rad * lit(GK_NODES[j]);
        let s = f(mid - dx) + f(mid + dx);
        kronrod = kronrod + s * lit(GK_WEIGHTS[j]);
        if j % 2 == 1 {
            gauss = gauss + s * lit(GAUSS7_WEIGHTS[j / 2]);
        }
    }
    (kronrod * rad, ((kronrod - gauss) * rad).abs())
}

/// Adaptive Gauss-Kronrod (7/15) integration of `f` over `[a, b]`.
///
/// Globally adaptive: the sub-interval with the largest error estimate is
/// bisected until the summed estimate falls below `tol`.
pub fn integrate_adaptive<T: Scalar, F: FnMut(T) -> T>(mut f: F, a: T, b: T, tol: T) -> T {
    const MAX_INTERVALS: usize = 4000;
    let (v, e) = gk15(&mut f, a, b);
    let mut parts = vec![(a, b, v, e)];
    loop {
        let err: T = parts.iter().map(|p| p.3).sum();
        if err <= tol || parts.len() >= MAX_INTERVALS {
            break;
        }
        let (idx, _) = parts
            .iter()
            .enumerate()
            .fold((0, T::neg_infinity()), |best, (i, p)| {
                if p.3 > best.1 {
                    (i, p.3)
                } else {
                    best
                }
            });
        let (lo, hi, _, _) = parts.swap_remove(idx);
        if (hi - lo).abs() <= T::epsilon() * lit(16.0) * (lo.abs() + hi.abs()) {
            parts.push((lo, hi, T::zero(), T::zero()));
            continue;
        }
        let mid = lit::<T>(0.5) * (lo + hi);
        let (v1, e1) = gk15(&mut f, lo, mid);
        let (v2, e2) = gk15(&mut f, mid, hi);
        parts.push((lo, mid, v1, e1));
        parts.push((mid, hi, v2, e2));
    }
    parts.iter().map(|p| p.2).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_rule_is_exact_for_polynomials() {
        let rule = GaussLegendre::<f64>::new(10);
        let v = rule.integrate(0.0, 2.0, |x| x.powi(19) + 3.0 * x * x);
        let exact = 2f64.powi(20) / 20.0 + 8.0;
        assert!((v - exact).abs() < 1e-9 * exact);
        let wsum: f64 = rule.weights.iter().sum();
        assert!((wsum - 2.0).abs() < 1e-14);
    }

    #[test]
    fn adaptive_handles_endpoint_singularity() {
        let v = integrate_adaptive(|x: f64| 1.0 / x.sqrt(), 0.0, 1.0, 1e-10);
        assert!((v - 2.0).abs() < 1e-8);
    }
}
