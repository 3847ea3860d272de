/// Probability clamp applied before taking logarithms.
pub const BCE_EPS: f64 = 1e-7;

/// Binary cross entropy `-(t ln s + (1 - t) ln(1 - s))` with `s` clamped to `[eps, 1 - eps]`.
pub fn bce(s: f64, target: f64) -> f64 {
    let s = s.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(target * s.ln() + (1.0 - target) * (1.0 - s).ln())
}

/// `d bce / d s`; zero where the clamp is active.
pub fn bce_grad(s: f64, target: f64) -> f64 {
    if s <= BCE_EPS || s >= 1.0 - BCE_EPS {
        return 0.0;
    }
    -target / s + (1.0 - target) / (1.0 - s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midpoint_is_ln2() {
        assert!((bce(0.5, 0.5) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn perfect_prediction_is_eps() {
        let v = bce(1.0 - BCE_EPS, 1.0);
        assert!((v - BCE_EPS).abs() < 1e-12, "{v}");
        // clamped from above as well
        assert_eq!(bce(1.0, 1.0), v);
    }

    #[test]
    fn direct_formula() {
        // -(0.3 ln 0.8 + 0.7 ln 0.2)
        let want = -(0.3 * 0.8f64.ln() + 0.7 * 0.2f64.ln());
        assert!((bce(0.8, 0.3) - want).abs() < 1e-15);
        assert!((want - 1.193_549_604_098_133).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_difference() {
        for (s, t) in [(0.8, 0.3), (0.1, 1.0), (0.6, 0.0)] {
            let h = 1e-7;
            let num = (bce(s + h, t) - bce(s - h, t)) / (2.0 * h);
            assert!((num - bce_grad(s, t)).abs() < 1e-6);
        }
    }
}
