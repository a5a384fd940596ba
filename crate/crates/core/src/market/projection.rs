use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::MixedMatching;
use crate::contracts::UserTypePopulation;
use crate::error::{Error, Result};

/// Deterministic type-to-operator assignment. Column 0 means opt-out,
/// column `m` (1-based) means operator `m`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    columns: Vec<usize>,
}

impl Assignment {
    pub fn new(columns: Vec<usize>, n_operators: usize) -> Result<Self> {
        if let Some((n, c)) = columns.iter().enumerate().find(|(_, &c)| c > n_operators) {
            return Err(Error::Dimension(format!(
                "type {} assigned to column {c} but there are {n_operators} operators",
                n + 1
            )));
        }
        Ok(Self { columns })
    }

    pub fn columns(&self) -> &[usize] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    /// Operator index (0-based) of type `n`, `None` when it opts out.
    pub fn operator_of(&self, n: usize) -> Option<usize> {
        self.columns[n].checked_sub(1)
    }

    /// Types served by operator `m` (0-based).
    pub fn members(&self, m: usize) -> Vec<usize> {
        (0..self.columns.len())
            .filter(|&n| self.columns[n] == m + 1)
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct Entry {
    type_index: usize,
    /// 0 for opt-out.
    operator: usize,
}

impl Serialize for Assignment {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let entries: Vec<Entry> = self
            .columns
            .iter()
            .enumerate()
            .map(|(n, &c)| Entry {
                type_index: n + 1,
                operator: c,
            })
            .collect();
        entries.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Assignment {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let mut entries = Vec::<Entry>::deserialize(d)?;
        entries.sort_by_key(|e| e.type_index);
        for (i, e) in entries.iter().enumerate() {
            if e.type_index != i + 1 {
                return Err(serde::de::Error::custom(format!(
                    "type indices must be 1..=N, found {}",
                    e.type_index
                )));
            }
        }
        Ok(Self {
            columns: entries.into_iter().map(|e| e.operator).collect(),
        })
    }
}

/// Probabilities closer than this are treated as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Rounds a mixed matching to a capacity-respecting assignment.
///
/// Types are visited in priority order (highest β first). Each takes its most
/// likely column among those with room left for its whole traffic. Columns
/// within [`TIE_TOLERANCE`] of the best count as tied: operators beat
/// opt-out, so an indifferent type participates, and then the lower operator
/// index wins. Opt-out always has room.
pub fn project_matching(
    matching: &MixedMatching,
    capacities: &[f64],
    population: &UserTypePopulation,
    delta: f64,
) -> Result<Assignment> {
    let n_ops = matching.n_operators();
    if capacities.len() != n_ops || matching.n_types() != population.len() {
        return Err(Error::Dimension(format!(
            "{} capacities and {} matching rows for {} operators and {} types",
            capacities.len(),
            matching.n_types(),
            n_ops,
            population.len()
        )));
    }
    let traffic = population.traffic(delta);
    let mut order: Vec<usize> = (0..population.len()).collect();
    let betas = population.betas();
    order.sort_by(|&a, &b| betas[b].total_cmp(&betas[a]).then(a.cmp(&b)));

    let mut used = vec![0.0; n_ops];
    let mut columns = vec![0; population.len()];
    for n in order {
        let row = &matching.rows()[n];
        let feasible: Vec<usize> = (0..=n_ops)
            .filter(|&c| c == 0 || used[c - 1] + traffic[n] <= capacities[c - 1] * (1.0 + 1e-12))
            .collect();
        let top = feasible.iter().map(|&c| row[c]).fold(f64::NEG_INFINITY, f64::max);
        // operators before opt-out, then lower index
        let pick = feasible
            .into_iter()
            .filter(|&c| row[c] >= top - TIE_TOLERANCE)
            .min_by_key(|&c| (c == 0, c))
            .unwrap_or(0);
        if pick > 0 {
            used[pick - 1] += traffic[n];
        }
        columns[n] = pick;
    }
    Ok(Assignment { columns })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pop() -> UserTypePopulation {
        UserTypePopulation::new(vec![3.0, 2.0, 1.0], vec![10, 10, 10], 1.0).unwrap()
    }

    #[test]
    fn argmax_without_capacity_pressure() {
        let z = MixedMatching::new(vec![
            vec![0.1, 0.6, 0.3],
            vec![0.2, 0.2, 0.6],
            vec![0.7, 0.2, 0.1],
        ])
        .unwrap();
        let a = project_matching(&z, &[1e9, 1e9], &pop(), 1.0).unwrap();
        assert_eq!(a.columns(), &[1, 2, 0]);
    }

    #[test]
    fn ties_prefer_lower_operator_then_operators_over_opt_out() {
        let z = MixedMatching::new(vec![
            vec![0.2, 0.4, 0.4],
            vec![0.5, 0.5, 0.0],
            vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        ])
        .unwrap();
        let a = project_matching(&z, &[1e9, 1e9], &pop(), 1.0).unwrap();
        assert_eq!(a.columns(), &[1, 1, 1]);
    }

    #[test]
    fn full_operator_pushes_lower_priority_type_on() {
        let z = MixedMatching::new(vec![
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.9, 0.1],
            vec![0.0, 1.0, 0.0],
        ])
        .unwrap();
        // room for one type of 10 tasks/s at operator 1 and one at operator 2
        let a = project_matching(&z, &[15.0, 15.0], &pop(), 1.0).unwrap();
        assert_eq!(a.columns(), &[1, 2, 0]);
        for m in 0..2 {
            let load: f64 = a.members(m).len() as f64 * 10.0;
            assert!(load <= 15.0);
        }
    }

    #[test]
    fn json_round_trip() {
        let a = Assignment::new(vec![2, 0, 1], 2).unwrap();
        let text = serde_json::to_string(&a).unwrap();
        assert!(text.contains("\"type_index\":1"));
        let back: Assignment = serde_json::from_str(&text).unwrap();
        assert_eq!(a, back);
        assert!(Assignment::new(vec![3], 2).is_err());
    }
}
