use crate::error::{invalid, Error, Result};
use crate::stats::mean;

// Autocovariances up to the initial positive sequence cutoff, and the
// resulting integrated autocorrelation time 1 + 2 sum rho_t.
fn autocorrelation_time(x: &[f64]) -> Option<(f64, f64)> {
    let n = x.len();
    let m = mean(x);
    let d: Vec<f64> = x.iter().map(|v| v - m).collect();
    let acov = |lag: usize| d[..n - lag].iter().zip(&d[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    let g0 = acov(0);
    if !(g0 > 0.0) {
        return None;
    }
    let mut tau = -1.0;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = (acov(2 * k) + acov(2 * k + 1)) / g0;
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        k += 1;
    }
    Some((g0, tau.max(0.0)))
}

/// Effective sample size `n / (1 + 2 sum rho_t)` with the autocorrelation sum
/// truncated at the first nonpositive pair sum; never exceeds `n`.
pub fn mcmc_ess(series: &[f64]) -> Result<f64> {
    if series.len() < 10 {
        return invalid(format!("effective sample size needs at least 10 draws, got {}", series.len()));
    }
    let (_, tau) = autocorrelation_time(series).ok_or(Error::ConstantSeries)?;
    let n = series.len() as f64;
    Ok(if tau > 0.0 { (n / tau).min(n) } else { n })
}

/// Geweke z-score comparing the means of the first 10% and last 50% of the
/// series, each mean's variance taken from its spectral density at zero.
pub fn geweke_z(series: &[f64]) -> Result<f64> {
    let n = series.len();
    if n < 100 {
        return invalid(format!("geweke diagnostic needs at least 100 draws, got {n}"));
    }
    if series.iter().all(|&v| v == series[0]) {
        return Err(Error::ConstantSeries);
    }
    let a = &series[..n / 10];
    let b = &series[n - n / 2..];
    let var_mean = |s: &[f64]| match autocorrelation_time(s) {
        Some((g0, tau)) => g0 * tau / s.len() as f64,
        None => 0.0,
    };
    Ok((mean(a) - mean(b)) / (var_mean(a) + var_mean(b)).sqrt())
}
