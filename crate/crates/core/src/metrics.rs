//! True calibration error, calibration-map estimation error, and their exact
//! finite-distribution counterparts.

use std::collections::HashMap;

use crate::dataset::BinaryDataset;
use crate::error::{CalibError, Result};
use crate::ground_truth::GroundTruthMap;
use crate::loss::BregmanKind;
use crate::map::CalibrationMap;

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(CalibError::domain(format!("exponent must be positive, got {alpha}")))
    }
}

/// `mean |a_i − b_i|^α`.
pub fn mean_abs_power(a: &[f64], b: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if a.is_empty() || a.len() != b.len() {
        return Err(CalibError::domain("need two non-empty vectors of equal length"));
    }
    let total: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs().powf(alpha)).sum();
    Ok(total / a.len() as f64)
}

/// `CE^(α) = (1/n) Σ |c*(p̂_i) − p̂_i|^α`.
pub fn true_ce(dataset: &BinaryDataset, gt: &GroundTruthMap, alpha: f64) -> Result<f64> {
    let truth = gt.apply_all(dataset.predictions());
    mean_abs_power(&truth, dataset.predictions(), alpha)
}

/// `(1/n) Σ |ĉ(p̂_i) − c*(p̂_i)|^α` over the supplied evaluation points.
pub fn cmee<M: CalibrationMap + ?Sized>(map: &M, gt: &GroundTruthMap, points: &BinaryDataset, alpha: f64) -> Result<f64> {
    let truth = gt.apply_all(points.predictions());
    cmee_against(map, points.predictions(), &truth, alpha)
}

/// CMEE with precomputed true values at each point.
pub fn cmee_against<M: CalibrationMap + ?Sized>(map: &M, points: &[f64], truth: &[f64], alpha: f64) -> Result<f64> {
    let fitted = map.apply_all(points);
    mean_abs_power(&fitted, truth, alpha)
}

/// A finite joint distribution of predictions with known `c*` at every atom.
///
/// Used to evaluate expectations exactly, without sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDistribution {
    atoms: Vec<Atom>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub prediction: f64,
    pub weight: f64,
    /// `E[Y | p̂ = prediction]`.
    pub c_star: f64,
}

impl FiniteDistribution {
    /// Weights are normalised to sum to one. Predictions must be distinct.
    pub fn new(mut atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(CalibError::domain("distribution needs at least one atom"));
        }
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        if atoms.iter().any(|a| !(a.weight > 0.0)) || !(total > 0.0) {
            return Err(CalibError::domain("atom weights must be positive"));
        }
        if atoms.iter().any(|a| !(0.0..=1.0).contains(&a.prediction) || !(0.0..=1.0).contains(&a.c_star)) {
            return Err(CalibError::domain("atom predictions and c* must lie in [0,1]"));
        }
        let mut seen = std::collections::HashSet::new();
        if !atoms.iter().all(|a| seen.insert(a.prediction.to_bits())) {
            return Err(CalibError::domain("atom predictions must be distinct"));
        }
        for a in &mut atoms {
            a.weight /= total;
        }
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    /// `E[d(ĉ(p̂), Y) | p̂]` at every atom, by enumerating `Y ∈ {0, 1}`.
    pub fn conditional_expected_loss<M: CalibrationMap + ?Sized>(&self, map: &M, kind: BregmanKind) -> Result<Vec<f64>> {
        self.atoms
            .iter()
            .map(|a| kind.expected_to_label(map.apply(a.prediction), a.c_star))
            .collect()
    }

    /// `E[d(ĉ(P̂), c*_f(P̂))]`.
    pub fn cmee<M: CalibrationMap + ?Sized>(&self, map: &M, kind: BregmanKind) -> Result<f64> {
        self.atoms.iter().try_fold(0.0, |acc, a| {
            Ok(acc + a.weight * kind.divergence(map.apply(a.prediction), a.c_star)?)
        })
    }

    /// `c*_{ĉ∘f}` at each atom: the weighted mean of `c*` over all atoms
    /// sharing the same recalibrated output.
    pub fn recalibrated_truth<M: CalibrationMap + ?Sized>(&self, map: &M) -> Vec<f64> {
        let outputs: Vec<f64> = self.atoms.iter().map(|a| map.apply(a.prediction)).collect();
        let mut groups: HashMap<u64, (f64, f64)> = HashMap::new();
        for (a, c) in self.atoms.iter().zip(&outputs) {
            let g = groups.entry(c.to_bits()).or_insert((0.0, 0.0));
            g.0 += a.weight * a.c_star;
            g.1 += a.weight;
        }
        outputs
            .iter()
            .map(|c| {
                let (num, den) = groups[&c.to_bits()];
                num / den
            })
            .collect()
    }

    /// Calibration error after calibration, `E[d(Ĉ, c*_{ĉ∘f}(Ĉ))]`.
    pub fn ceac<M: CalibrationMap + ?Sized>(&self, map: &M, kind: BregmanKind) -> Result<f64> {
        let grouped = self.recalibrated_truth(map);
        self.atoms.iter().zip(&grouped).try_fold(0.0, |acc, (a, g)| {
            Ok(acc + a.weight * kind.divergence(map.apply(a.prediction), *g)?)
        })
    }

    /// The grouping loss `E[d(c*_{ĉ∘f}(Ĉ), c*_f(P̂))]` introduced by ties in `ĉ`.
    pub fn grouping_loss<M: CalibrationMap + ?Sized>(&self, map: &M, kind: BregmanKind) -> Result<f64> {
        let grouped = self.recalibrated_truth(map);
        self.atoms.iter().zip(&grouped).try_fold(0.0, |acc, (a, g)| {
            let g = g.clamp(0.0, 1.0);
            Ok(acc + a.weight * kind.divergence(g, a.c_star)?)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::Identity;

    fn ds(p: &[f64], y: &[u8]) -> BinaryDataset {
        BinaryDataset::new(p.to_vec(), y.to_vec()).unwrap()
    }

    #[test]
    fn true_ce_identity_is_zero() {
        let d = ds(&[0.1, 0.5, 0.93], &[0, 1, 1]);
        assert_eq!(true_ce(&d, &GroundTruthMap::Identity, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn true_ce_examples() {
        let gt = GroundTruthMap::stepwise(vec![0.0, 0.5, 1.5], vec![0.3, 0.25]).unwrap();
        let d = ds(&[0.5], &[1]);
        assert!((true_ce(&d, &gt, 1.0).unwrap() - 0.25).abs() < 1e-15);

        let gt = GroundTruthMap::stepwise(vec![0.0, 0.5, 1.5], vec![0.3, 0.6]).unwrap();
        let d = ds(&[0.2, 0.8], &[0, 1]);
        assert!((true_ce(&d, &gt, 2.0).unwrap() - 0.025).abs() < 1e-15);
    }

    #[test]
    fn true_ce_is_permutation_invariant() {
        let gt = GroundTruthMap::Analytic(crate::synth::Derivate::new(crate::synth::Shape::Sqrt, 0.4).unwrap());
        let d = ds(&[0.1, 0.4, 0.7, 0.95], &[0, 1, 0, 1]);
        let r = ds(&[0.95, 0.1, 0.7, 0.4], &[1, 0, 0, 1]);
        let a = true_ce(&d, &gt, 1.0).unwrap();
        let b = true_ce(&r, &gt, 1.0).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn cmee_examples() {
        let d = ds(&[0.5], &[0]);
        let sq = GroundTruthMap::Analytic(crate::synth::Derivate::new(crate::synth::Shape::Sqrt, 1.0).unwrap());
        // c*(p) = p² is the inverse of sqrt.
        assert!((cmee(&Identity, &sq, &d, 1.0).unwrap() - 0.25).abs() < 1e-12);
        assert_eq!(cmee(&Identity, &GroundTruthMap::Identity, &d, 1.0).unwrap(), 0.0);
        let d = ds(&[0.0, 1.0], &[0, 1]);
        let half = |_: f64| 0.5;
        assert_eq!(cmee(&half, &GroundTruthMap::Identity, &d, 1.0).unwrap(), 0.5);
    }

    #[test]
    fn rejects_bad_alpha() {
        assert!(mean_abs_power(&[0.1], &[0.2], 0.0).is_err());
    }

    #[test]
    fn grouping_by_ties() {
        let dist = FiniteDistribution::new(vec![
            Atom { prediction: 0.2, weight: 1.0, c_star: 0.1 },
            Atom { prediction: 0.4, weight: 3.0, c_star: 0.5 },
        ])
        .unwrap();
        let constant = |_: f64| 0.3;
        let g = dist.recalibrated_truth(&constant);
        assert!((g[0] - 0.4).abs() < 1e-15 && (g[1] - 0.4).abs() < 1e-15);
        assert_eq!(dist.recalibrated_truth(&Identity), vec![0.1, 0.5]);
    }
}
