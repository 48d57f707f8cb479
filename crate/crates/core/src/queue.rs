//! Steady-state analysis of a single finite-capacity birth-death queue.
//!
//! The state is the number of customers present, `0..=K`. Arrivals in state
//! `n` occur at rate `λ_n` and completions in state `n` at rate `μ_n`. An
//! arrival finding `K` customers present is lost.

use serde::Serialize;
use thiserror::Error;

/// Tolerance used when validating that a probability vector is normalized.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("capacity must be at least 1")]
    ZeroCapacity,
    #[error("expected {expected} arrival rates for capacity {capacity}, got {actual}")]
    ArrivalRateCount {
        capacity: usize,
        expected: usize,
        actual: usize,
    },
    #[error("expected {expected} service rates for capacity {capacity}, got {actual}")]
    ServiceRateCount {
        capacity: usize,
        expected: usize,
        actual: usize,
    },
    #[error("arrival rate λ_{index} must be finite and non-negative, got {value}")]
    InvalidArrivalRate { index: usize, value: f64 },
    #[error("service rate μ_{index} must be finite and strictly positive, got {value}")]
    InvalidServiceRate { index: usize, value: f64 },
    #[error("probabilities must be finite and non-negative (entry {index} is {value})")]
    InvalidProbability { index: usize, value: f64 },
    #[error("probabilities sum to {sum}, not 1")]
    NotNormalized { sum: f64 },
    #[error("a distribution needs at least two states")]
    TooFewStates,
    #[error("distribution has {actual} states but the spec has capacity {capacity}")]
    DistributionMismatch { capacity: usize, actual: usize },
}

/// State-dependent rates and capacity of one birth-death queue.
///
/// `arrival_rates[n]` is `λ_n` for `n in 0..K` and `service_rates[n - 1]` is
/// `μ_n` for `n in 1..=K`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BirthDeathSpec {
    capacity: usize,
    arrival_rates: Vec<f64>,
    service_rates: Vec<f64>,
}

impl BirthDeathSpec {
    pub fn new(
        capacity: usize,
        arrival_rates: Vec<f64>,
        service_rates: Vec<f64>,
    ) -> Result<Self, SpecError> {
        if capacity == 0 {
            return Err(SpecError::ZeroCapacity);
        }
        if arrival_rates.len() != capacity {
            return Err(SpecError::ArrivalRateCount {
                capacity,
                expected: capacity,
                actual: arrival_rates.len(),
            });
        }
        if service_rates.len() != capacity {
            return Err(SpecError::ServiceRateCount {
                capacity,
                expected: capacity,
                actual: service_rates.len(),
            });
        }
        if let Some((index, &value)) = arrival_rates
            .iter()
            .enumerate()
            .find(|(_, r)| !(r.is_finite() && **r >= 0.0))
        {
            return Err(SpecError::InvalidArrivalRate { index, value });
        }
        if let Some((index, &value)) = service_rates
            .iter()
            .enumerate()
            .find(|(_, r)| !(r.is_finite() && **r > 0.0))
        {
            return Err(SpecError::InvalidServiceRate {
                index: index + 1,
                value,
            });
        }
        Ok(Self {
            capacity,
            arrival_rates,
            service_rates,
        })
    }

    /// The M/M/1/K spec: the same `λ` in every state and the same `μ` in every
    /// non-empty state.
    pub fn constant(
        arrival_rate: f64,
        service_rate: f64,
        capacity: usize,
    ) -> Result<Self, SpecError> {
        Self::new(
            capacity,
            vec![arrival_rate; capacity],
            vec![service_rate; capacity],
        )
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// `λ_0..λ_{K-1}`.
    pub fn arrival_rates(&self) -> &[f64] {
        &self.arrival_rates
    }

    /// `μ_1..μ_K`.
    pub fn service_rates(&self) -> &[f64] {
        &self.service_rates
    }

    /// `(λ, μ)` when every arrival rate and every service rate is the same.
    pub fn constant_rates(&self) -> Option<(f64, f64)> {
        let lambda = self.arrival_rates[0];
        let mu = self.service_rates[0];
        let same = self.arrival_rates.iter().all(|&r| r == lambda)
            && self.service_rates.iter().all(|&r| r == mu);
        same.then_some((lambda, mu))
    }
}

/// Steady-state probabilities `P(0)..P(K)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct StationaryDistribution {
    probabilities: Vec<f64>,
}

impl StationaryDistribution {
    /// Wraps an explicit probability vector, checking that it is a
    /// distribution over at least two states.
    pub fn new(probabilities: Vec<f64>) -> Result<Self, SpecError> {
        if probabilities.len() < 2 {
            return Err(SpecError::TooFewStates);
        }
        if let Some((index, &value)) = probabilities
            .iter()
            .enumerate()
            .find(|(_, p)| !(p.is_finite() && **p >= 0.0))
        {
            return Err(SpecError::InvalidProbability { index, value });
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(SpecError::NotNormalized { sum });
        }
        Ok(Self { probabilities })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn capacity(&self) -> usize {
        self.probabilities.len() - 1
    }

    pub fn get(&self, state: usize) -> Option<f64> {
        self.probabilities.get(state).copied()
    }

    /// `P(0)`.
    pub fn empty_probability(&self) -> f64 {
        self.probabilities[0]
    }

    /// `P(K)`, the probability an arrival is lost.
    pub fn blocking_probability(&self) -> f64 {
        self.probabilities[self.capacity()]
    }

    /// `1 / P(0)`: the sum of the unnormalized product-form weights when the
    /// empty state has weight one. For M/M/1/K this is `Σ ρ^i`.
    pub fn normalization_constant(&self) -> f64 {
        1.0 / self.probabilities[0]
    }
}

/// Product-form solution `P(n) ∝ Π_{i<n} λ_i / μ_{i+1}`.
///
/// Weights are built multiplicatively outward from the most likely state, so
/// the largest weight is exactly 1 and nothing overflows for large `ρ^K`.
pub fn stationary_distribution(spec: &BirthDeathSpec) -> StationaryDistribution {
    let k = spec.capacity;
    let lambda = &spec.arrival_rates;
    let mu = &spec.service_rates;

    // Locate the mode in log space. States past a zero arrival rate are
    // unreachable and keep -inf.
    let mut log_weight = vec![f64::NEG_INFINITY; k + 1];
    log_weight[0] = 0.0;
    for n in 0..k {
        if lambda[n] == 0.0 {
            break;
        }
        log_weight[n + 1] = log_weight[n] + lambda[n].ln() - mu[n].ln();
    }
    let mode = log_weight.iter().enumerate().fold(
        0,
        |best, (n, &w)| if w > log_weight[best] { n } else { best },
    );

    let mut weights = vec![0.0; k + 1];
    weights[mode] = 1.0;
    for n in mode..k {
        weights[n + 1] = weights[n] * lambda[n] / mu[n];
    }
    for n in (1..=mode).rev() {
        weights[n - 1] = weights[n] * mu[n - 1] / lambda[n - 1];
    }

    let total = compensated_sum(weights.iter().copied());
    StationaryDistribution {
        probabilities: weights.into_iter().map(|w| w / total).collect(),
    }
}

/// Stationary distribution of M/M/1/K with arrival rate `λ`, service rate
/// `μ` and capacity `K`. At `ρ = 1` every weight is 1, so the result is
/// exactly uniform.
pub fn mm1k_distribution(
    arrival_rate: f64,
    service_rate: f64,
    capacity: usize,
) -> Result<StationaryDistribution, SpecError> {
    if !(arrival_rate.is_finite() && arrival_rate > 0.0) {
        return Err(SpecError::InvalidArrivalRate {
            index: 0,
            value: arrival_rate,
        });
    }
    let spec = BirthDeathSpec::constant(arrival_rate, service_rate, capacity)?;
    Ok(stationary_distribution(&spec))
}

/// `Σ ρ^i` for `i in 0..=capacity` in exact integer arithmetic, or `None` on
/// overflow.
pub fn integer_geometric_sum(ratio: u64, capacity: u32) -> Option<u128> {
    let ratio = u128::from(ratio);
    let mut term: u128 = 1;
    let mut sum: u128 = 1;
    for _ in 0..capacity {
        term = term.checked_mul(ratio)?;
        sum = sum.checked_add(term)?;
    }
    Some(sum)
}

/// `L = Σ i·P(i)`, accumulated with Neumaier compensation so that, e.g., a
/// uniform distribution over `0..=K` gives exactly `K/2`.
pub fn expected_in_system(dist: &StationaryDistribution) -> f64 {
    compensated_sum(
        dist.probabilities
            .iter()
            .enumerate()
            .map(|(i, p)| i as f64 * p),
    )
}

fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut carry = 0.0;
    for v in values {
        let t = sum + v;
        carry += if sum.abs() >= v.abs() {
            (sum - t) + v
        } else {
            (v - t) + sum
        };
        sum = t;
    }
    sum + carry
}

/// Long-run metrics of one queue.
///
/// `mean_time_in_system` and `mean_time_in_queue` are `None` when nothing is
/// ever admitted (`λ_eff = 0`). `traffic_intensity` is only defined for
/// constant-rate specs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerformanceMetrics {
    pub expected_in_system: f64,
    pub expected_in_queue: f64,
    pub effective_arrival_rate: f64,
    pub blocking_probability: f64,
    pub mean_time_in_system: Option<f64>,
    pub mean_time_in_queue: Option<f64>,
    pub traffic_intensity: Option<f64>,
}

pub fn performance_metrics(
    spec: &BirthDeathSpec,
    dist: &StationaryDistribution,
) -> Result<PerformanceMetrics, SpecError> {
    if dist.capacity() != spec.capacity {
        return Err(SpecError::DistributionMismatch {
            capacity: spec.capacity,
            actual: dist.probabilities.len(),
        });
    }
    let l = expected_in_system(dist);
    let lq = (l - (1.0 - dist.empty_probability())).max(0.0);
    let lambda_eff: f64 = spec
        .arrival_rates
        .iter()
        .zip(&dist.probabilities)
        .map(|(rate, p)| rate * p)
        .sum();
    let (w, wq) = if lambda_eff > 0.0 {
        (Some(l / lambda_eff), Some(lq / lambda_eff))
    } else {
        (None, None)
    };
    Ok(PerformanceMetrics {
        expected_in_system: l,
        expected_in_queue: lq,
        effective_arrival_rate: lambda_eff,
        blocking_probability: dist.blocking_probability(),
        mean_time_in_system: w,
        mean_time_in_queue: wq,
        traffic_intensity: spec.constant_rates().map(|(lambda, mu)| lambda / mu),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const CASE1: [f64; 11] = [
        0.000011, 0.000034, 0.000102, 0.000305, 0.000914, 0.002743, 0.008230, 0.024691, 0.074074,
        0.222223, 0.666670,
    ];

    #[test]
    fn case1_table() {
        let dist = mm1k_distribution(6.0, 2.0, 10).unwrap();
        for (i, expected) in CASE1.iter().enumerate() {
            let p = dist.get(i).unwrap();
            assert!((p - expected).abs() < 2e-5, "P{i} = {p}");
        }
        assert!((expected_in_system(&dist) - 9.500062).abs() < 1e-4);
        assert!((dist.normalization_constant() - 88573.0).abs() < 1e-6);
    }

    #[test]
    fn case2_endpoints() {
        let dist = mm1k_distribution(8.0, 3.0, 10).unwrap();
        assert!((dist.empty_probability() - 0.000034).abs() < 2e-5);
        assert!((dist.blocking_probability() - 0.625013).abs() < 2e-5);
        assert!((expected_in_system(&dist) - 9.400227).abs() < 1e-3);
    }

    #[test]
    fn equal_rates_are_uniform() {
        for rate in [0.5, 5.0, 1234.0] {
            let dist = mm1k_distribution(rate, rate, 10).unwrap();
            for p in dist.probabilities() {
                assert_eq!(*p, 1.0 / 11.0);
            }
            assert_eq!(expected_in_system(&dist), 5.0);
        }
        for k in [1, 100, 1000] {
            let dist = mm1k_distribution(2.0, 2.0, k).unwrap();
            assert_eq!(expected_in_system(&dist), k as f64 / 2.0);
        }
    }

    #[test]
    fn state_dependent_two_slot_queue() {
        // Weights (1, 1/2, 1/4) by hand; balance equations give the same.
        let spec = BirthDeathSpec::new(2, vec![1.0, 2.0], vec![2.0, 4.0]).unwrap();
        let dist = stationary_distribution(&spec);
        let expected = [4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0];
        for (p, e) in dist.probabilities().iter().zip(expected) {
            assert!((p - e).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_malformed_specs() {
        assert_eq!(
            BirthDeathSpec::new(0, vec![], vec![]),
            Err(SpecError::ZeroCapacity)
        );
        assert!(matches!(
            BirthDeathSpec::new(2, vec![1.0], vec![1.0, 1.0]),
            Err(SpecError::ArrivalRateCount { actual: 1, .. })
        ));
        assert!(matches!(
            BirthDeathSpec::new(2, vec![1.0, 1.0], vec![1.0, 0.0]),
            Err(SpecError::InvalidServiceRate { index: 2, .. })
        ));
        assert!(matches!(
            BirthDeathSpec::new(1, vec![-1.0], vec![1.0]),
            Err(SpecError::InvalidArrivalRate { index: 0, .. })
        ));
        assert!(mm1k_distribution(0.0, 1.0, 3).is_err());
        assert!(mm1k_distribution(1.0, -1.0, 3).is_err());
        assert!(mm1k_distribution(1.0, 1.0, 0).is_err());
        let msg = BirthDeathSpec::new(1, vec![1.0], vec![f64::NAN])
            .unwrap_err()
            .to_string();
        assert!(msg.contains("service rate"), "{msg}");
    }

    #[test]
    fn huge_traffic_does_not_overflow() {
        let dist = mm1k_distribution(1000.0, 1.0, 500).unwrap();
        assert!(dist.probabilities().iter().all(|p| p.is_finite()));
        assert!((dist.blocking_probability() - 0.999).abs() < 1e-12);
        let sum: f64 = dist.probabilities().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn idle_source_has_empty_system() {
        let spec = BirthDeathSpec::new(3, vec![0.0; 3], vec![1.0; 3]).unwrap();
        let dist = stationary_distribution(&spec);
        assert_eq!(dist.probabilities(), &[1.0, 0.0, 0.0, 0.0]);
        let m = performance_metrics(&spec, &dist).unwrap();
        assert_eq!(m.expected_in_system, 0.0);
        assert_eq!(m.effective_arrival_rate, 0.0);
        assert_eq!(m.mean_time_in_system, None);
        assert_eq!(m.mean_time_in_queue, None);
    }

    #[test]
    fn case1_littles_law() {
        let spec = BirthDeathSpec::constant(6.0, 2.0, 10).unwrap();
        let dist = stationary_distribution(&spec);
        let m = performance_metrics(&spec, &dist).unwrap();
        let closed = 6.0 * (1.0 - dist.blocking_probability());
        assert!((m.effective_arrival_rate - closed).abs() < 1e-12);
        assert!((m.effective_arrival_rate - 2.0).abs() < 1e-4);
        let w = m.mean_time_in_system.unwrap();
        assert!((w - 4.75).abs() < 1e-3);
        assert!((w * m.effective_arrival_rate - m.expected_in_system).abs() < 1e-9);
        assert_eq!(m.traffic_intensity, Some(3.0));
        let lq = m.expected_in_system - (1.0 - dist.empty_probability());
        assert!((m.expected_in_queue - lq).abs() < 1e-12);
    }

    #[test]
    fn case2_blocking() {
        let spec = BirthDeathSpec::constant(8.0, 3.0, 10).unwrap();
        let m = performance_metrics(&spec, &stationary_distribution(&spec)).unwrap();
        assert!((m.blocking_probability - 0.625013).abs() < 1e-6);
    }

    #[test]
    fn metrics_reject_foreign_distribution() {
        let spec = BirthDeathSpec::constant(1.0, 2.0, 3).unwrap();
        let other = mm1k_distribution(1.0, 2.0, 4).unwrap();
        assert!(performance_metrics(&spec, &other).is_err());
    }

    #[test]
    fn explicit_distribution_validation() {
        assert!(StationaryDistribution::new(vec![0.5, 0.5]).is_ok());
        assert!(StationaryDistribution::new(vec![1.0]).is_err());
        assert!(StationaryDistribution::new(vec![0.6, 0.6]).is_err());
        assert!(StationaryDistribution::new(vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn exact_geometric_sum() {
        assert_eq!(integer_geometric_sum(3, 10), Some(88573));
        assert_eq!(integer_geometric_sum(1, 10), Some(11));
        assert_eq!(integer_geometric_sum(u64::MAX, 10), None);
    }
}
