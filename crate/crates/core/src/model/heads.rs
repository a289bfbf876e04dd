//! Pooled-encoder output heads.

use super::graph::sigmoid;

/// Classes of the two-way head, in output order.
pub const CLASS_NAMES: [&str; 2] = ["entail", "none"];

/// `4 · sigmoid(w · pool + b) + 1`, always within [1, 5].
pub fn regression_head(pool: &[f64], w: &[f64], b: f64) -> f64 {
    regression_from_preactivation(dot(pool, w) + b)
}

pub fn regression_from_preactivation(z: f64) -> f64 {
    4.0 * sigmoid(z) + 1.0
}

/// Softmax over two logits `pool · W + b`, with `W` stored `[d × 2]` row-major.
pub fn classification_head(pool: &[f64], w: &[f64], b: &[f64]) -> [f64; 2] {
    let mut z = [b[0], b[1]];
    for (i, &p) in pool.iter().enumerate() {
        z[0] += p * w[2 * i];
        z[1] += p * w[2 * i + 1];
    }
    softmax2(z)
}

pub fn softmax2(z: [f64; 2]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let e = [(z[0] - m).exp(), (z[1] - m).exp()];
    let s = e[0] + e[1];
    [e[0] / s, e[1] / s]
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regression_hand_values() {
        assert_eq!(regression_from_preactivation(0.0), 3.0);
        assert!((regression_from_preactivation(3f64.ln()) - 4.0).abs() < 1e-12);
        assert_eq!(regression_from_preactivation(-1e6), 1.0);
        assert_eq!(regression_from_preactivation(1e6), 5.0);
    }

    #[test]
    fn classification_hand_values() {
        assert_eq!(softmax2([0.7, 0.7]), [0.5, 0.5]);
        let p = softmax2([-0.2, -0.2 + 3f64.ln()]);
        assert!((p[0] - 0.25).abs() < 1e-12 && (p[1] - 0.75).abs() < 1e-12);
        let p = classification_head(&[1.0, -2.0], &[0.5, 0.1, 0.3, -0.4], &[0.0, 0.2]);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
    }
}
