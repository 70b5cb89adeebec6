//! Composite Gauss–Legendre quadrature.
//!
//! Expected regret integrands are smooth on each side of the kink at
//! `e = 0`, so callers split there and integrate each side with a fixed
//! number of equal panels.

use serde::{Deserialize, Serialize};

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Rule with `order` points, nodes found by Newton iteration on `P_n`.
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "Gauss-Legendre order must be >= 1");
        let n = order;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            // Tricomi's initial guess for the i-th largest root.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `∫_a^b f` using `panels` equal sub-intervals.
    pub fn composite<F: FnMut(f64) -> f64>(&self, mut f: F, a: f64, b: f64, panels: usize) -> f64 {
        if a == b || panels == 0 {
            return 0.0;
        }
        let h = (b - a) / panels as f64;
        let half = 0.5 * h;
        let mut total = 0.0;
        for p in 0..panels {
            let mid = a + (p as f64 + 0.5) * h;
            let mut panel = 0.0;
            for (x, w) in self.nodes.iter().zip(&self.weights) {
                panel += w * f(mid + half * x);
            }
            total += panel * half;
        }
        total
    }
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

pub const DEFAULT_WIDTH: f64 = 10.0;
pub const DEFAULT_PANELS: usize = 64;
pub const DEFAULT_ORDER: usize = 4;

/// Truncation and resolution of the expected-cost integrals: the Gaussian
/// is integrated over `mean ± width·sigma`, split at zero, with `panels`
/// panels of `order` points on each side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadConfig {
    pub width: f64,
    pub panels: usize,
    pub order: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self { width: DEFAULT_WIDTH, panels: DEFAULT_PANELS, order: DEFAULT_ORDER }
    }
}

impl QuadConfig {
    pub fn is_valid(&self) -> bool {
        self.width.is_finite() && self.width > 0.0 && self.panels >= 1 && self.order >= 1
    }
}

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Partial first moments of `N(mean, sigma^2)` split at zero:
/// `(∫_{-∞}^0 e p(e) de, ∫_0^∞ e p(e) de)`, truncated to `mean ± width·sigma`.
#[derive(Debug, Clone)]
pub struct SplitGaussian {
    rule: GaussLegendre,
    config: QuadConfig,
}

impl SplitGaussian {
    pub fn new(config: QuadConfig) -> Self {
        Self { rule: GaussLegendre::new(config.order), config }
    }

    pub fn config(&self) -> &QuadConfig {
        &self.config
    }

    pub fn first_moments(&self, mean: f64, sigma: f64) -> (f64, f64) {
        let lo = mean - self.config.width * sigma;
        let hi = mean + self.config.width * sigma;
        let lower = if lo < 0.0 { self.side(lo, hi.min(0.0), mean, sigma) } else { 0.0 };
        let upper = if hi > 0.0 { self.side(lo.max(0.0), hi, mean, sigma) } else { 0.0 };
        (lower, upper)
    }

    /// `∫_a^b e p(e) de` on `panels` equal panels.
    ///
    /// Node `j` of panel `p` sits at `x_j + p·h`, so along a node the
    /// Gaussian factor obeys `g_{p+1} = g_p·r_p`, `r_{p+1} = r_p·exp(-h²/σ²)`.
    /// Two exponentials per node replace one per point.
    fn side(&self, a: f64, b: f64, mean: f64, sigma: f64) -> f64 {
        let panels = self.config.panels;
        if a >= b || panels == 0 {
            return 0.0;
        }
        let h = (b - a) / panels as f64;
        let half = 0.5 * h;
        let inv_two_var = 0.5 / (sigma * sigma);
        let scale = INV_SQRT_2PI / sigma;
        // Larger steps could overflow the ratio before the product shrinks.
        if h > sigma {
            let f = |e: f64| {
                let d = e - mean;
                e * (-d * d * inv_two_var).exp()
            };
            return scale * self.rule.composite(f, a, b, panels);
        }
        let step = (-h * h * 2.0 * inv_two_var).exp();
        let mut total = 0.0;
        for (x, w) in self.rule.nodes.iter().zip(&self.rule.weights) {
            let mut e = a + half * (1.0 + x);
            let d = e - mean;
            let mut g = (-d * d * inv_two_var).exp();
            let mut r = (-(2.0 * d * h + h * h) * inv_two_var).exp();
            let mut acc = 0.0;
            for _ in 0..panels {
                acc += e * g;
                g *= r;
                r *= step;
                e += h;
            }
            total += w * acc;
        }
        total * half * scale
    }
}
