use serde::{Deserialize, Serialize};

/// Smoothness regime used to size the network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum Regime {
    Besov { beta_tilde: f64 },
    TensorSobolev { alpha: f64 },
}

/// Constants hidden by the rate theorems, plus hard caps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchRule {
    pub c_depth: f64,
    pub c_width: f64,
    /// Include the `log^3` depth and `log^5` width factors of the tensor
    /// Sobolev sizing.
    pub log_factors: bool,
    pub max_depth: usize,
    pub max_width: usize,
}

impl Default for ArchRule {
    fn default() -> Self {
        Self {
            c_depth: 1.0,
            c_width: 1.0,
            log_factors: false,
            max_depth: 64,
            max_width: 1024,
        }
    }
}

/// `(L, W)` from the effective sample size `N = n floor(m/2)`.
///
/// Besov: `L = ceil(c_L ln N)`, `W = ceil(c_W N^(1/(beta+1)))`.
/// Tensor Sobolev: `W = ceil(c_W N^(1/(2 alpha+1)))`, and with `log_factors`
/// `L = ceil(c_L ln^3 N)`, `W = ceil(c_W N^(1/(2 alpha+1)) ln^5 N)`.
pub fn arch_from_theory(n: usize, m: usize, regime: Regime, rule: &ArchRule) -> (usize, usize) {
    assert!(n >= 1 && m >= 2);
    let big_n = (n * (m / 2)) as f64;
    let ln = big_n.ln();
    let (depth, width) = match regime {
        Regime::Besov { beta_tilde } => {
            assert!(beta_tilde > 0.0);
            (rule.c_depth * ln, rule.c_width * big_n.powf(1.0 / (beta_tilde + 1.0)))
        }
        Regime::TensorSobolev { alpha } => {
            assert!(alpha > 0.0);
            let base = rule.c_width * big_n.powf(1.0 / (2.0 * alpha + 1.0));
            if rule.log_factors {
                (rule.c_depth * ln.powi(3), base * ln.powi(5))
            } else {
                (rule.c_depth * ln, base)
            }
        }
    };
    let depth = (depth.ceil() as usize).clamp(1, rule.max_depth.max(1));
    let width = (width.ceil() as usize).clamp(1, rule.max_width.max(1));
    (depth, width)
}
