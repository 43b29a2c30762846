/// Ordinary least-squares line `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    weighted_linear_fit(xs, ys, None)
}

pub fn weighted_linear_fit(xs: &[f64], ys: &[f64], weights: Option<&[f64]>) -> LinearFit {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2, "need at least two points for a line");
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for i in 0..xs.len() {
        sw += w(i);
        sx += w(i) * xs[i];
        sy += w(i) * ys[i];
    }
    let (mx, my) = (sx / sw, sy / sw);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for i in 0..xs.len() {
        let dx = xs[i] - mx;
        sxx += w(i) * dx * dx;
        sxy += w(i) * dx * (ys[i] - my);
    }
    let slope = sxy / sxx;
    LinearFit { slope, intercept: my - slope * mx }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 - 0.5 * x).collect();
        let fit = linear_fit(&xs, &ys);
        assert!((fit.slope + 0.5).abs() < 1e-14);
        assert!((fit.intercept - 2.0).abs() < 1e-14);
    }
}
