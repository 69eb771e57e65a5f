use crate::error::{invalid, Error, Result};
use crate::stats::{mad, variance};

/// Accepted draws of one scalar parameter with kernel weights, plus the
/// statistics needed for regression adjustment.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedSamples {
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
    pub bandwidth: f64,
    pub obs_stat: Vec<f64>,
    /// Statistics of each accepted draw, aligned with `values`.
    pub stats: Vec<Vec<f64>>,
    /// Position of each accepted draw in the pool.
    pub indices: Vec<usize>,
}

impl WeightedSamples {
    pub fn new(values: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if values.len() != weights.len() {
            return Err(Error::Dimension(format!("{} values with {} weights", values.len(), weights.len())));
        }
        check_weights(&weights)?;
        let n = values.len();
        Ok(Self { values, weights, bandwidth: f64::NAN, obs_stat: vec![], stats: vec![vec![]; n], indices: (0..n).collect() })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub(crate) fn check_weights(w: &[f64]) -> Result<()> {
    if w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
        return invalid("weights must be finite and nonnegative");
    }
    if !w.iter().any(|&x| x > 0.0) {
        return Err(Error::DegenerateKernel("all weights are zero".into()));
    }
    Ok(())
}

/// Per-coordinate spread used to standardize statistic distances: the median
/// absolute deviation over the pool, falling back to the standard deviation
/// and then to 1 when a coordinate is constant.
#[derive(Clone, Debug, PartialEq)]
pub struct StatScale(pub Vec<f64>);

impl StatScale {
    pub fn from_pool(stats: &[Vec<f64>]) -> Result<Self> {
        let dim = stats.first().map(Vec::len).ok_or_else(|| Error::InsufficientSamples("empty pool".into()))?;
        if stats.iter().any(|s| s.len() != dim) {
            return Err(Error::Dimension("statistics of unequal length".into()));
        }
        let scale = (0..dim)
            .map(|k| {
                let col: Vec<f64> = stats.iter().map(|s| s[k]).collect();
                let m = mad(&col);
                if m > 0.0 {
                    return m;
                }
                let sd = if col.len() > 1 { variance(&col).sqrt() } else { 0.0 };
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self(scale))
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).zip(&self.0).map(|((x, y), s)| ((x - y) / s).powi(2)).sum::<f64>().sqrt()
    }
}

/// Smallest number of accepted draws.
pub const MIN_ACCEPTED: usize = 10;

/// Rejection step: keeps the `ceil(N d)` pool draws whose standardized
/// statistics lie closest to `obs` and weights them by the Epanechnikov
/// kernel `1 - (x / h)^2` with `h` the largest kept distance.
pub fn abc_reject(obs: &[f64], thetas: &[f64], stats: &[Vec<f64>], d: f64) -> Result<WeightedSamples> {
    let scale = StatScale::from_pool(stats)?;
    abc_reject_scaled(obs, thetas, stats, &scale, d)
}

/// As [`abc_reject`] with a precomputed scale, for repeated queries against
/// one pool.
pub fn abc_reject_scaled(
    obs: &[f64],
    thetas: &[f64],
    stats: &[Vec<f64>],
    scale: &StatScale,
    d: f64,
) -> Result<WeightedSamples> {
    if !(d > 0.0 && d <= 1.0) {
        return invalid(format!("acceptance fraction must lie in (0, 1], got {d}"));
    }
    if thetas.len() != stats.len() {
        return Err(Error::Dimension(format!("{} parameters with {} statistics", thetas.len(), stats.len())));
    }
    if obs.len() != scale.0.len() {
        return Err(Error::Dimension(format!("observed statistic has {} entries, pool has {}", obs.len(), scale.0.len())));
    }
    let n = thetas.len();
    let k = ((n as f64) * d).ceil() as usize;
    let k = k.min(n);
    if k < MIN_ACCEPTED {
        return Err(Error::InsufficientSamples(format!(
            "{k} draws accepted from {n}, need at least {MIN_ACCEPTED}; raise d or the pool size"
        )));
    }
    let mut dist: Vec<(f64, usize)> = stats.iter().enumerate().map(|(i, s)| (scale.distance(obs, s), i)).collect();
    if k < n {
        dist.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        dist.truncate(k);
    }
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let h = dist.last().expect("k >= 1").0;
    if !(h > 0.0) {
        return Err(Error::DegenerateKernel("all accepted draws sit at distance 0".into()));
    }
    let weights: Vec<f64> = dist.iter().map(|&(x, _)| (1.0 - (x / h).powi(2)).max(0.0)).collect();
    if !weights.iter().any(|&w| w > 0.0) {
        return Err(Error::DegenerateKernel(
            "all accepted draws are equidistant from the observation; raise d or the pool size".into(),
        ));
    }
    Ok(WeightedSamples {
        values: dist.iter().map(|&(_, i)| thetas[i]).collect(),
        weights,
        bandwidth: h,
        obs_stat: obs.to_vec(),
        stats: dist.iter().map(|&(_, i)| stats[i].clone()).collect(),
        indices: dist.iter().map(|&(_, i)| i).collect(),
    })
}
