use ndarray::Zip;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::waveop::TimeSeries;

/// Adds Gaussian noise to the rows flagged in `active`, scaled so that
/// `‖δ‖ = eta ‖g‖` exactly. Other rows are left untouched.
///
/// `eta = 0` returns `g` unchanged.
pub fn add_relative_noise(g: &TimeSeries, eta: f64, seed: u64, active: &[bool]) -> Result<TimeSeries> {
    if !(0.0..1.0).contains(&eta) {
        return Err(Error::Parameter(format!("noise level must be in [0, 1), got {eta}")));
    }
    if active.len() != g.nrows() {
        return Err(Error::Shape(format!(
            "active mask has {} entries for {} rows",
            active.len(),
            g.nrows()
        )));
    }
    if eta == 0.0 {
        return Ok(g.clone());
    }
    let g_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if g_norm == 0.0 {
        return Err(Error::Parameter("relative noise on zero data is undefined".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut delta = TimeSeries::zeros(g.dim());
    for (mut row, &on) in delta.outer_iter_mut().zip(active) {
        if on {
            row.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
        }
    }
    let d_norm = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
    if d_norm == 0.0 {
        return Err(Error::Parameter("no active rows to carry noise".into()));
    }
    let k = eta * g_norm / d_norm;
    let mut out = g.clone();
    Zip::from(&mut out).and(&delta).for_each(|o, &d| *o += k * d);
    Ok(out)
}

/// `‖noisy − clean‖ / ‖clean‖`.
pub fn measured_noise_level(noisy: &TimeSeries, clean: &TimeSeries) -> f64 {
    let d: f64 = Zip::from(noisy).and(clean).fold(0.0, |s, a, b| s + (a - b) * (a - b));
    let n: f64 = clean.iter().map(|v| v * v).sum();
    (d / n).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn data() -> TimeSeries {
        Array2::from_shape_fn((6, 40), |(i, j)| if i == 4 { 0.0 } else { ((i * 7 + j) as f64 * 0.37).sin() })
    }

    #[test]
    fn exact_levels() {
        let g = data();
        let active = [true, true, true, true, false, true];
        assert_eq!(add_relative_noise(&g, 0.0, 1, &active).unwrap(), g);
        for eta in [0.1, 0.2] {
            let n = add_relative_noise(&g, eta, 1, &active).unwrap();
            assert!((measured_noise_level(&n, &g) - eta).abs() <= 1e-12);
            assert!(n.row(4).iter().all(|&v| v == 0.0));
            assert_eq!(n, add_relative_noise(&g, eta, 1, &active).unwrap());
        }
    }

    #[test]
    fn rejects_bad_input() {
        let g = data();
        let all = [true; 6];
        assert!(add_relative_noise(&g, 1.0, 1, &all).is_err());
        assert!(add_relative_noise(&g, -0.1, 1, &all).is_err());
        assert!(add_relative_noise(&Array2::zeros((6, 40)), 0.1, 1, &all).is_err());
        assert!(add_relative_noise(&g, 0.1, 1, &[true; 5]).is_err());
    }
}
