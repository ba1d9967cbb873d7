//! Symmetric triangle rules in barycentric coordinates and Gauss-Legendre rules.

/// A quadrature point: barycentric coordinates and a weight normalized so the
/// weights of a rule sum to one (multiply by the triangle area).
#[derive(Clone, Copy, Debug)]
pub struct BaryPoint {
    pub lambda: [f64; 3],
    pub weight: f64,
}

fn orbit3(a: f64, b: f64, w: f64, out: &mut Vec<BaryPoint>) {
    for lambda in [[a, b, b], [b, a, b], [b, b, a]] {
        out.push(BaryPoint { lambda, weight: w });
    }
}

fn orbit6(a: f64, b: f64, c: f64, w: f64, out: &mut Vec<BaryPoint>) {
    for lambda in [[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]] {
        out.push(BaryPoint { lambda, weight: w });
    }
}

/// Seven-point rule, exact for polynomials of degree 5.
pub fn triangle_degree5() -> Vec<BaryPoint> {
    let s = 15f64.sqrt();
    let mut pts = vec![BaryPoint {
        lambda: [1.0 / 3.0; 3],
        weight: 9.0 / 40.0,
    }];
    orbit3((9.0 - 2.0 * s) / 21.0, (6.0 + s) / 21.0, (155.0 + s) / 1200.0, &mut pts);
    orbit3((9.0 + 2.0 * s) / 21.0, (6.0 - s) / 21.0, (155.0 - s) / 1200.0, &mut pts);
    pts
}

/// Twelve-point rule, exact for polynomials of degree 6.
pub fn triangle_degree6() -> Vec<BaryPoint> {
    let mut pts = Vec::with_capacity(12);
    orbit3(0.501426509658179, 0.249286745170910, 0.116786275726379, &mut pts);
    orbit3(0.873821971016996, 0.063089014491502, 0.050844906370207, &mut pts);
    orbit6(
        0.053145049844817,
        0.310352451033784,
        0.636502499121399,
        0.082851075618374,
        &mut pts,
    );
    pts
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out.reverse();
    out
}

/// Integrates `f` over [a, b] with an n-point Gauss-Legendre rule.
pub fn integrate_1d(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    gauss_legendre(n).iter().map(|&(x, w)| w * f(c + h * x)).sum::<f64>() * h
}

#[cfg(test)]
mod tests {
    use super::*;

    // exact integral of l1^a l2^b l3^c over the reference simplex, divided by its area
    fn monomial(a: u32, b: u32, c: u32) -> f64 {
        let fact = |n: u32| (1..=n).map(|k| k as f64).product::<f64>();
        2.0 * fact(a) * fact(b) * fact(c) / fact(a + b + c + 2)
    }

    fn check(rule: &[BaryPoint], degree: u32) {
        let wsum: f64 = rule.iter().map(|p| p.weight).sum();
        assert!((wsum - 1.0).abs() < 1e-14);
        for a in 0..=degree {
            for b in 0..=degree - a {
                let c = degree - a - b;
                let q: f64 = rule
                    .iter()
                    .map(|p| {
                        p.weight
                            * p.lambda[0].powi(a as i32)
                            * p.lambda[1].powi(b as i32)
                            * p.lambda[2].powi(c as i32)
                    })
                    .sum();
                assert!((q - monomial(a, b, c)).abs() < 1e-13, "{a} {b} {c}");
            }
        }
    }

    #[test]
    fn triangle_rules_are_exact() {
        for d in 0..=5 {
            check(&triangle_degree5(), d);
        }
        for d in 0..=6 {
            check(&triangle_degree6(), d);
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in 1..8 {
            for k in 0..(2 * n) {
                let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
                let q = integrate_1d(-1.0, 1.0, n, |x| x.powi(k as i32));
                assert!((q - exact).abs() < 1e-13, "n={n} k={k}");
            }
        }
    }
}
