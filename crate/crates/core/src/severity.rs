//! Severity labels and the hidden ground-truth NSE model.

use serde::{Deserialize, Serialize};

/// NSE severity of a state-action pair.
///
/// Ordered by severity, so `max`/`min` pick the more/less severe label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeverityLabel {
    /// No NSE (l_a).
    #[serde(alias = "none", alias = "safe")]
    Acceptable,
    /// Mild NSE (l_m).
    Mild,
    /// Severe NSE (l_h).
    Severe,
}

impl SeverityLabel {
    pub const ALL: [SeverityLabel; 3] = [
        SeverityLabel::Acceptable,
        SeverityLabel::Mild,
        SeverityLabel::Severe,
    ];

    /// Penalty in cost units: 0, 5 and 10.
    pub fn penalty(self) -> f64 {
        match self {
            SeverityLabel::Acceptable => 0.0,
            SeverityLabel::Mild => 5.0,
            SeverityLabel::Severe => 10.0,
        }
    }

    /// Ordinal code used for classification targets and CV error.
    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn from_ordinal(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn is_acceptable(self) -> bool {
        self == SeverityLabel::Acceptable
    }

    pub fn one_hot(self) -> [f64; 3] {
        let mut v = [0.0; 3];
        v[self.ordinal()] = 1.0;
        v
    }
}

impl std::fmt::Display for SeverityLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SeverityLabel::Acceptable => "acceptable",
            SeverityLabel::Mild => "mild",
            SeverityLabel::Severe => "severe",
        })
    }
}

/// Additive penalty per `(state, action)`, in cost units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyTable {
    values: Vec<Vec<f64>>,
}

impl PenaltyTable {
    pub fn new(values: Vec<Vec<f64>>) -> Self {
        Self { values }
    }

    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            values: vec![vec![0.0; n_actions]; n_states],
        }
    }

    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.values[state][action]
    }

    pub fn n_states(&self) -> usize {
        self.values.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }
}

/// The hidden, deterministic map from `(state, action)` to severity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrueNseModel {
    labels: Vec<Vec<SeverityLabel>>,
}

impl TrueNseModel {
    pub fn new(labels: Vec<Vec<SeverityLabel>>) -> Self {
        Self { labels }
    }

    pub fn severity(&self, state: usize, action: usize) -> SeverityLabel {
        self.labels[state][action]
    }

    pub fn labels(&self) -> &[Vec<SeverityLabel>] {
        &self.labels
    }

    pub fn penalty_table(&self) -> PenaltyTable {
        PenaltyTable::new(
            self.labels
                .iter()
                .map(|row| row.iter().map(|l| l.penalty()).collect())
                .collect(),
        )
    }
}
