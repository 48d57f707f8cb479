//! Multi-level promotion hierarchy built from per-level M/M/1/K queues.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::queue::{
    performance_metrics, stationary_distribution, BirthDeathSpec, PerformanceMetrics, SpecError,
    StationaryDistribution,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("a pipeline needs at least one level")]
    Empty,
    #[error("level {position} has level_id {found}, expected {position}")]
    NonConsecutiveId { position: u32, found: u32 },
    #[error("level {level_id} ({label}): {source}")]
    InvalidLevel {
        level_id: u32,
        label: String,
        #[source]
        source: SpecError,
    },
    #[error(
        "level {level_id} ({label}): signing_limit {limit} is below the previous level's {previous}"
    )]
    DecreasingSigningLimit {
        level_id: u32,
        label: String,
        limit: u64,
        previous: u64,
    },
    #[error("no level with id {0}")]
    UnknownLevel(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coupling {
    /// Every level uses its configured arrival rate.
    #[default]
    Independent,
    /// Level `i + 1` is fed at level `i`'s effective throughput.
    Tandem,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelConfig {
    pub level_id: u32,
    pub label: String,
    pub arrival_rate: f64,
    pub service_rate: f64,
    pub capacity: usize,
    pub designation: String,
    pub signing_limit: u64,
}

/// What an employee may do while at a level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuthorityGrant {
    pub designation: String,
    pub signing_limit: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineModel {
    levels: Vec<LevelConfig>,
    coupling: Coupling,
}

impl PipelineModel {
    pub fn new(levels: Vec<LevelConfig>, coupling: Coupling) -> Result<Self, PipelineError> {
        if levels.is_empty() {
            return Err(PipelineError::Empty);
        }
        let mut previous_limit = 0;
        for (position, level) in (1..).zip(&levels) {
            if level.level_id != position {
                return Err(PipelineError::NonConsecutiveId {
                    position,
                    found: level.level_id,
                });
            }
            let invalid = |source| PipelineError::InvalidLevel {
                level_id: level.level_id,
                label: level.label.clone(),
                source,
            };
            if !(level.arrival_rate.is_finite() && level.arrival_rate > 0.0) {
                return Err(invalid(SpecError::InvalidArrivalRate {
                    index: 0,
                    value: level.arrival_rate,
                }));
            }
            BirthDeathSpec::constant(level.arrival_rate, level.service_rate, level.capacity)
                .map_err(invalid)?;
            if level.signing_limit < previous_limit {
                return Err(PipelineError::DecreasingSigningLimit {
                    level_id: level.level_id,
                    label: level.label.clone(),
                    limit: level.signing_limit,
                    previous: previous_limit,
                });
            }
            previous_limit = level.signing_limit;
        }
        Ok(Self { levels, coupling })
    }

    pub fn levels(&self) -> &[LevelConfig] {
        &self.levels
    }

    pub fn coupling(&self) -> Coupling {
        self.coupling
    }

    pub fn with_coupling(mut self, coupling: Coupling) -> Self {
        self.coupling = coupling;
        self
    }

    /// Number of levels; the top level's id.
    pub fn depth(&self) -> u32 {
        self.levels.len() as u32
    }

    pub fn level(&self, level_id: u32) -> Option<&LevelConfig> {
        level_id
            .checked_sub(1)
            .and_then(|i| self.levels.get(i as usize))
    }
}

/// Designation and signing limit granted at `level_id`.
pub fn authority_grant(
    model: &PipelineModel,
    level_id: u32,
) -> Result<AuthorityGrant, PipelineError> {
    model
        .level(level_id)
        .map(|level| AuthorityGrant {
            designation: level.designation.clone(),
            signing_limit: level.signing_limit,
        })
        .ok_or(PipelineError::UnknownLevel(level_id))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelReport {
    pub level_id: u32,
    pub label: String,
    /// Arrival rate actually used for this level's analysis.
    pub arrival_rate: f64,
    pub service_rate: f64,
    pub capacity: usize,
    pub distribution: StationaryDistribution,
    pub metrics: PerformanceMetrics,
    /// Rate of promotions out of the level, `λ·(1 − P(K))`.
    pub throughput: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineReport {
    pub coupling: Coupling,
    pub per_level: Vec<LevelReport>,
}

/// Analyzes each level as M/M/1/K.
///
/// In tandem mode the downstream levels are treated as if fed by a Poisson
/// stream at the upstream throughput. Departures from a finite queue are not
/// Poisson, so this is an approximation; the simulator gives the exact answer.
pub fn analyze_pipeline(model: &PipelineModel) -> PipelineReport {
    let mut per_level = Vec::with_capacity(model.levels.len());
    let mut upstream: Option<f64> = None;
    for level in &model.levels {
        let arrival_rate = match (model.coupling, upstream) {
            (Coupling::Tandem, Some(rate)) => rate,
            _ => level.arrival_rate,
        };
        // Validated in PipelineModel::new; a tandem rate is the product of a
        // positive rate and a positive non-blocking probability.
        let spec = BirthDeathSpec::constant(arrival_rate, level.service_rate, level.capacity)
            .expect("pipeline levels are validated on construction");
        let distribution = stationary_distribution(&spec);
        let metrics =
            performance_metrics(&spec, &distribution).expect("distribution matches its spec");
        let throughput = arrival_rate * (1.0 - distribution.blocking_probability());
        upstream = Some(throughput);
        per_level.push(LevelReport {
            level_id: level.level_id,
            label: level.label.clone(),
            arrival_rate,
            service_rate: level.service_rate,
            capacity: level.capacity,
            distribution,
            metrics,
            throughput,
        });
    }
    PipelineReport {
        coupling: model.coupling,
        per_level,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::queue::expected_in_system;

    fn level(id: u32, lambda: f64, mu: f64, k: usize, limit: u64) -> LevelConfig {
        LevelConfig {
            level_id: id,
            label: format!("L{id}"),
            arrival_rate: lambda,
            service_rate: mu,
            capacity: k,
            designation: format!("grade-{id}"),
            signing_limit: limit,
        }
    }

    fn sample_levels() -> Vec<LevelConfig> {
        vec![
            level(1, 6.0, 2.0, 10, 100),
            level(2, 8.0, 3.0, 10, 1000),
            level(3, 4.0, 4.0, 10, 5000),
        ]
    }

    #[test]
    fn single_level_reproduces_case1() {
        let model =
            PipelineModel::new(vec![level(1, 6.0, 2.0, 10, 0)], Coupling::default()).unwrap();
        let report = analyze_pipeline(&model);
        assert_eq!(report.per_level.len(), 1);
        let l = report.per_level[0].metrics.expected_in_system;
        assert!((l - 9.500062).abs() < 1e-4);
    }

    #[test]
    fn three_independent_levels() {
        let model = PipelineModel::new(sample_levels(), Coupling::Independent).unwrap();
        let report = analyze_pipeline(&model);
        let ls: Vec<f64> = report
            .per_level
            .iter()
            .map(|r| expected_in_system(&r.distribution))
            .collect();
        assert!((ls[0] - 9.500062).abs() < 1e-4);
        assert!((ls[1] - 9.400227).abs() < 1e-3);
        assert_eq!(ls[2], 5.0);
        let ids: Vec<u32> = report.per_level.iter().map(|r| r.level_id).collect();
        assert_eq!(ids, [1, 2, 3]);
    }

    #[test]
    fn tandem_feeds_downstream_at_throughput() {
        let model = PipelineModel::new(
            vec![level(1, 3.0, 3.0, 10, 0), level(2, 3.0, 3.0, 10, 0)],
            Coupling::Tandem,
        )
        .unwrap();
        let report = analyze_pipeline(&model);
        let used = report.per_level[1].arrival_rate;
        assert!((used - 3.0 * 10.0 / 11.0).abs() < 1e-12);
        assert!(report.per_level[1].throughput <= report.per_level[0].throughput);
    }

    #[test]
    fn independent_matches_tandem_when_rates_agree() {
        let first = analyze_pipeline(
            &PipelineModel::new(vec![level(1, 6.0, 2.0, 10, 0)], Coupling::Independent).unwrap(),
        );
        let throughput = first.per_level[0].throughput;
        let levels = vec![level(1, 6.0, 2.0, 10, 0), level(2, throughput, 3.0, 5, 0)];
        let a =
            analyze_pipeline(&PipelineModel::new(levels.clone(), Coupling::Independent).unwrap());
        let b = analyze_pipeline(&PipelineModel::new(levels, Coupling::Tandem).unwrap());
        for (x, y) in a.per_level.iter().zip(&b.per_level) {
            assert_eq!(x.arrival_rate, y.arrival_rate);
            for (p, q) in x
                .distribution
                .probabilities()
                .iter()
                .zip(y.distribution.probabilities())
            {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn grants_by_level() {
        let mut levels = sample_levels();
        levels[1].designation = "manager".into();
        let model = PipelineModel::new(levels, Coupling::Independent).unwrap();
        assert_eq!(
            authority_grant(&model, 2).unwrap(),
            AuthorityGrant {
                designation: "manager".into(),
                signing_limit: 1000
            }
        );
        assert_eq!(authority_grant(&model, 3).unwrap().signing_limit, 5000);
        assert_eq!(
            authority_grant(&model, 0),
            Err(PipelineError::UnknownLevel(0))
        );
        assert_eq!(
            authority_grant(&model, 4),
            Err(PipelineError::UnknownLevel(4))
        );
    }

    #[test]
    fn validation_names_the_level() {
        assert_eq!(
            PipelineModel::new(vec![], Coupling::Tandem),
            Err(PipelineError::Empty)
        );
        let err = PipelineModel::new(
            vec![level(1, 1.0, 1.0, 1, 0), level(3, 1.0, 1.0, 1, 0)],
            Coupling::Tandem,
        )
        .unwrap_err();
        assert_eq!(
            err,
            PipelineError::NonConsecutiveId {
                position: 2,
                found: 3
            }
        );

        let err = PipelineModel::new(
            vec![level(1, 1.0, 1.0, 1, 0), level(2, 1.0, 1.0, 0, 0)],
            Coupling::Tandem,
        )
        .unwrap_err();
        assert!(err.to_string().starts_with("level 2 (L2)"), "{err}");
        assert!(err.to_string().contains("capacity"), "{err}");

        let err = PipelineModel::new(
            vec![level(1, 1.0, 1.0, 1, 10), level(2, 1.0, 1.0, 1, 5)],
            Coupling::Tandem,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            PipelineError::DecreasingSigningLimit { level_id: 2, .. }
        ));

        let err = PipelineModel::new(vec![level(1, 0.0, 1.0, 1, 0)], Coupling::Tandem).unwrap_err();
        assert!(matches!(
            err,
            PipelineError::InvalidLevel { level_id: 1, .. }
        ));
    }
}
