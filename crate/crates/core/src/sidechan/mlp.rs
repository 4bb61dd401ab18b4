use serde::{Deserialize, Serialize};

use super::{Memorygram, SideChanError};

pub const CALIBRATION_SCHEMA_VERSION: u32 = 1;

/// Observed memorygram miss totals of MLP runs with known hidden sizes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NeuronCalibration {
    pub schema_version: u32,
    /// `(neurons, totals)`, kept sorted by neuron count.
    pub entries: Vec<(usize, Vec<u64>)>,
}

impl NeuronCalibration {
    pub fn new() -> Self {
        Self { schema_version: CALIBRATION_SCHEMA_VERSION, entries: Vec::new() }
    }

    pub fn add(&mut self, neurons: usize, total: u64) {
        match self.entries.binary_search_by_key(&neurons, |e| e.0) {
            Ok(i) => self.entries[i].1.push(total),
            Err(i) => self.entries.insert(i, (neurons, vec![total])),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.is_empty())
    }

    /// Mean total per calibrated size, ascending by size.
    pub fn means(&self) -> Vec<(usize, f64)> {
        self.entries
            .iter()
            .filter(|(_, t)| !t.is_empty())
            .map(|(n, t)| (*n, t.iter().sum::<u64>() as f64 / t.len() as f64))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronEstimate {
    pub estimated_neurons: usize,
    pub observed_total_misses: u64,
    /// Calibrated mean total per size.
    pub calibration_means: Vec<(usize, f64)>,
}

/// Picks the calibrated size whose mean total is nearest the memorygram's
/// total; the smaller size on ties.
pub fn estimate_hidden_neurons(mg: &Memorygram, table: &NeuronCalibration) -> Result<NeuronEstimate, SideChanError> {
    let means = table.means();
    let total = mg.total();
    let best = means
        .iter()
        .min_by(|a, b| (a.1 - total as f64).abs().total_cmp(&(b.1 - total as f64).abs()).then(a.0.cmp(&b.0)))
        .ok_or(SideChanError::EmptyCalibration)?;
    Ok(NeuronEstimate {
        estimated_neurons: best.0,
        observed_total_misses: total,
        calibration_means: means.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mg_with_total(t: u32) -> Memorygram {
        Memorygram { counts: vec![vec![t]], set_ids: vec![0], epoch_cycles: 1, start_cycle: 0, ways: 16 }
    }

    #[test]
    fn nearest_mean_wins() {
        let mut c = NeuronCalibration::new();
        for (n, t) in [(128, 200), (64, 100), (64, 110), (256, 400)] {
            c.add(n, t);
        }
        assert_eq!(c.means(), vec![(64, 105.0), (128, 200.0), (256, 400.0)]);
        let est = estimate_hidden_neurons(&mg_with_total(170), &c).unwrap();
        assert_eq!((est.estimated_neurons, est.observed_total_misses), (128, 170));
        let tie = estimate_hidden_neurons(&mg_with_total(300), &c).unwrap();
        assert_eq!(tie.estimated_neurons, 128);
    }

    #[test]
    fn empty_table_is_an_error() {
        let r = estimate_hidden_neurons(&mg_with_total(5), &NeuronCalibration::new());
        assert_eq!(r, Err(SideChanError::EmptyCalibration));
    }
}
