//! Gauss–Legendre rules on the reference interval and square.

use thiserror::Error;

pub const MAX_NODES: usize = 32;

#[derive(Error, Debug, Clone, PartialEq)]
#[error("Gauss rule with {0} nodes is not supported (1..={MAX_NODES})")]
pub struct QuadratureError(pub usize);

/// Nodes and weights on `[-1, 1]^d` (`d` = length of each node).
#[derive(Clone, Debug, PartialEq)]
pub struct QuadRule {
    pub nodes: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl QuadRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.nodes.first().map_or(0, Vec::len)
    }
}

/// Legendre polynomial `P_n(x)` and its derivative.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// `n`-point Gauss–Legendre rule. Roots come from Newton iteration started at
/// the Chebyshev-like guesses `cos(pi (i + 3/4) / (n + 1/2))`.
pub fn gauss_rule(n: usize) -> Result<QuadRule, QuadratureError> {
    if n == 0 || n > MAX_NODES {
        return Err(QuadratureError(n));
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let half = n.div_ceil(2);
    for i in 0..half {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok(QuadRule {
        nodes: nodes.into_iter().map(|x| vec![x]).collect(),
        weights,
    })
}

/// Tensor product of two 1D rules; the first coordinate varies fastest.
pub fn tensor_rule(rule_x: &QuadRule, rule_y: &QuadRule) -> QuadRule {
    let mut nodes = Vec::with_capacity(rule_x.len() * rule_y.len());
    let mut weights = Vec::with_capacity(nodes.capacity());
    for (ny, wy) in rule_y.nodes.iter().zip(&rule_y.weights) {
        for (nx, wx) in rule_x.nodes.iter().zip(&rule_x.weights) {
            nodes.push(vec![nx[0], ny[0]]);
            weights.push(wx * wy);
        }
    }
    QuadRule { nodes, weights }
}

/// Tensor rule with `n` points per direction in `dim` dimensions.
pub fn element_rule(n: usize, dim: usize) -> Result<QuadRule, QuadratureError> {
    let g = gauss_rule(n)?;
    Ok(match dim {
        1 => g,
        _ => tensor_rule(&g, &g),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn integrate(rule: &QuadRule, f: impl Fn(&[f64]) -> f64) -> f64 {
        rule.nodes.iter().zip(&rule.weights).map(|(x, w)| w * f(x)).sum()
    }

    #[test]
    fn midpoint_rule() {
        let r = gauss_rule(1).unwrap();
        assert_eq!(r.nodes, vec![vec![0.0]]);
        assert_abs_diff_eq!(r.weights[0], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn two_point_rule() {
        let r = gauss_rule(2).unwrap();
        let root = (1.0f64 / 3.0).sqrt(); // roots of (3x^2 - 1)/2
        assert_abs_diff_eq!(r.nodes[0][0], -root, epsilon = 1e-15);
        assert_abs_diff_eq!(r.nodes[1][0], root, epsilon = 1e-15);
        assert_abs_diff_eq!(r.weights[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(r.weights[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn five_points_integrate_x8() {
        let r = gauss_rule(5).unwrap();
        assert_abs_diff_eq!(integrate(&r, |x| x[0].powi(8)), 2.0 / 9.0, epsilon = 1e-13);
    }

    #[test]
    fn exactness_up_to_2n_minus_1() {
        for n in 1..=MAX_NODES {
            let r = gauss_rule(n).unwrap();
            assert!(r.weights.iter().all(|&w| w > 0.0));
            for deg in 0..2 * n {
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                let got = integrate(&r, |x| x[0].powi(deg as i32));
                assert!((got - exact).abs() < 1e-13, "n={n} deg={deg}: {got} vs {exact}");
            }
            // symmetric about zero
            for i in 0..n {
                assert_abs_diff_eq!(r.nodes[i][0], -r.nodes[n - 1 - i][0], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn out_of_range_counts() {
        assert_eq!(gauss_rule(0), Err(QuadratureError(0)));
        assert_eq!(gauss_rule(33), Err(QuadratureError(33)));
    }

    #[test]
    fn tensor_rules() {
        let one = gauss_rule(1).unwrap();
        let t = tensor_rule(&one, &one);
        assert_eq!(t.nodes, vec![vec![0.0, 0.0]]);
        assert_abs_diff_eq!(t.weights[0], 4.0, epsilon = 1e-15);

        for (a, b) in [(1, 4), (3, 2), (5, 7)] {
            let t = tensor_rule(&gauss_rule(a).unwrap(), &gauss_rule(b).unwrap());
            assert_eq!(t.len(), a * b);
            assert_abs_diff_eq!(t.weights.iter().sum::<f64>(), 4.0, epsilon = 1e-13);
        }

        let g3 = gauss_rule(3).unwrap();
        let t = tensor_rule(&g3, &g3);
        let v = integrate(&t, |x| x[0].powi(4) * x[1].powi(4));
        assert_abs_diff_eq!(v, (2.0f64 / 5.0).powi(2), epsilon = 1e-13);
    }
}
