//! Exhaustive enumeration of `psi(k)`, the ground truth for everything else.
//!
//! Only supports of size exactly `k` are visited: the objective cannot increase when a
//! column is added, so some optimal support of size at most `k` has size `k`.

use rayon::prelude::*;
use serde::Serialize;

use crate::combinatorics::{binomial, Combinations};
use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::subset_eval::{evaluate_unchecked, SupportSet};

pub const DEFAULT_SUPPORT_CAP: u128 = 5_000_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactResult {
    pub psi: f64,
    pub optimal_support: SupportSet,
    pub num_supports_evaluated: u64,
}

/// `psi(k)` with the lexicographically smallest optimal support.
pub fn psi_exact(inst: &Instance, k: usize, cap: Option<u128>) -> Result<ExactResult> {
    psi_exact_restricted(inst, k, &SupportSet::empty(), &SupportSet::empty(), cap)
}

/// Minimum over size-`k` supports containing `forced_in` and avoiding `forced_out`;
/// `psi = +inf` when there is none.
pub fn psi_exact_restricted(
    inst: &Instance,
    k: usize,
    forced_in: &SupportSet,
    forced_out: &SupportSet,
    cap: Option<u128>,
) -> Result<ExactResult> {
    inst.check_k(k)?;
    let p = inst.p();
    let cap = cap.unwrap_or(DEFAULT_SUPPORT_CAP);
    let needed: u128 = (0..=k).map(|j| binomial(p, j)).fold(0u128, |a, b| a.saturating_add(b));
    if needed > cap {
        return Err(Error::Capacity(format!(
            "enumerating supports of size <= {k} out of {p} needs {needed} evaluations, cap is {cap}"
        )));
    }
    for s in [forced_in, forced_out] {
        if s.indices().last().is_some_and(|&i| i >= p) {
            return Err(Error::Validation(format!("forced index out of range for p = {p}")));
        }
    }
    if !forced_in.is_disjoint(forced_out) {
        return Err(Error::Validation("forced_in and forced_out overlap".into()));
    }

    let free: Vec<usize> = (0..p).filter(|&i| !forced_in.contains(i) && !forced_out.contains(i)).collect();
    let infeasible = ExactResult { psi: f64::INFINITY, optimal_support: SupportSet::empty(), num_supports_evaluated: 0 };
    if forced_in.len() > k || forced_in.len() + free.len() < k {
        return Ok(infeasible);
    }
    let extra = k - forced_in.len();

    let complete = |choice: &[usize]| -> SupportSet {
        let mut idx: Vec<usize> = forced_in.indices().to_vec();
        idx.extend(choice.iter().map(|&j| free[j]));
        idx.sort_unstable();
        SupportSet::new_unchecked(idx)
    };

    // (objective, support, count) per first free position, merged in order
    let per_first: Vec<(f64, Option<SupportSet>, u64)> = if extra == 0 {
        let s = complete(&[]);
        vec![(evaluate_unchecked(inst, &s).objective, Some(s), 1)]
    } else {
        (0..=free.len() - extra)
            .into_par_iter()
            .map(|first| {
                let mut best: (f64, Option<SupportSet>, u64) = (f64::INFINITY, None, 0);
                for tail in Combinations::new(free.len() - first - 1, extra - 1) {
                    let mut choice = Vec::with_capacity(extra);
                    choice.push(first);
                    choice.extend(tail.iter().map(|&t| t + first + 1));
                    let s = complete(&choice);
                    let v = evaluate_unchecked(inst, &s).objective;
                    best.2 += 1;
                    if is_better(v, &s, best.0, best.1.as_ref()) {
                        best.0 = v;
                        best.1 = Some(s);
                    }
                }
                best
            })
            .collect()
    };

    let mut out = infeasible;
    for (v, s, count) in per_first {
        out.num_supports_evaluated += count;
        if let Some(s) = s {
            if is_better(v, &s, out.psi, out.psi.is_finite().then_some(&out.optimal_support)) {
                out.psi = v;
                out.optimal_support = s;
            }
        }
    }
    Ok(out)
}

fn is_better(v: f64, s: &SupportSet, best_v: f64, best_s: Option<&SupportSet>) -> bool {
    match best_s {
        None => true,
        Some(b) => v < best_v || (v == best_v && s.indices() < b.indices()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate_gaussian, GaussianSpec};
    use crate::subset_eval::evaluate;
    use nalgebra::{DMatrix, DVector};

    fn gaussian(n: usize, p: usize, k: usize, seed: u64) -> Instance {
        generate_gaussian(&GaussianSpec::new(n, p, k, seed)).unwrap().0
    }

    #[test]
    fn orthonormal_design_is_separable() {
        let y = DVector::from_vec(vec![0.5, -3.0, 1.0, 2.0, -0.1]);
        let inst = Instance::new(DMatrix::identity(5, 5), y, None).unwrap();
        let r = psi_exact(&inst, 2, None).unwrap();
        assert_eq!(r.optimal_support.indices(), &[1, 3]);
        assert!((r.psi - (0.25 + 1.0 + 0.01)).abs() < 1e-12);
        assert_eq!(r.num_supports_evaluated, 10);
    }

    #[test]
    fn full_cardinality_is_least_squares() {
        let inst = gaussian(10, 6, 2, 1);
        let r = psi_exact(&inst, 6, None).unwrap();
        let full = evaluate(&inst, &SupportSet::full(6)).unwrap().objective;
        assert!((r.psi - full).abs() < 1e-12 * (1.0 + full));
        assert_eq!(r.num_supports_evaluated, 1);
    }

    #[test]
    fn counts_and_ordering() {
        let inst = gaussian(10, 20, 2, 3);
        let r = psi_exact(&inst, 2, None).unwrap();
        assert_eq!(r.num_supports_evaluated, 190);
        let mut prev = f64::INFINITY;
        for k in 1..=6 {
            let v = psi_exact(&inst, k, None).unwrap().psi;
            assert!(v <= prev + 1e-12);
            prev = v;
        }
    }

    #[test]
    fn ties_pick_smallest_support() {
        // duplicated columns give identical objectives
        let x = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let y = DVector::from_vec(vec![1.0, 0.0, 1.0]);
        let inst = Instance::new(x, y, None).unwrap();
        assert_eq!(psi_exact(&inst, 1, None).unwrap().optimal_support.indices(), &[0]);
    }

    #[test]
    fn restricted_matches_filtered_enumeration() {
        for seed in 0..10 {
            let inst = gaussian(8, 12, 3, 100 + seed);
            let fin = SupportSet::new(vec![seed as usize % 12], 12).unwrap();
            let fout = SupportSet::from_unsorted(vec![(seed as usize + 1) % 12, (seed as usize + 7) % 12], 12).unwrap();
            let r = psi_exact_restricted(&inst, 3, &fin, &fout, None).unwrap();
            let mut best = f64::INFINITY;
            for s in Combinations::new(12, 3) {
                let s = SupportSet::new(s, 12).unwrap();
                if fin.is_subset(&s) && s.is_disjoint(&fout) {
                    best = best.min(evaluate(&inst, &s).unwrap().objective);
                }
            }
            assert_eq!(r.psi, best);
            assert!(fin.is_subset(&r.optimal_support) && r.optimal_support.is_disjoint(&fout));
        }
    }

    #[test]
    fn restricted_edge_cases() {
        let inst = gaussian(6, 8, 2, 5);
        let fin = SupportSet::new(vec![2, 5], 8).unwrap();
        let r = psi_exact_restricted(&inst, 2, &fin, &SupportSet::empty(), None).unwrap();
        assert_eq!(r.psi, evaluate(&inst, &fin).unwrap().objective);
        let out = SupportSet::new(vec![0, 1, 3, 4, 6, 7], 8).unwrap();
        let r = psi_exact_restricted(&inst, 2, &SupportSet::empty(), &out, None).unwrap();
        assert_eq!(r.optimal_support, fin);
        let out = SupportSet::new(vec![0, 1, 2, 3, 4, 6, 7], 8).unwrap();
        assert_eq!(psi_exact_restricted(&inst, 2, &SupportSet::empty(), &out, None).unwrap().psi, f64::INFINITY);
        assert!(psi_exact_restricted(&inst, 2, &fin, &fin, None).is_err());
    }

    #[test]
    fn cap_is_enforced() {
        let inst = gaussian(5, 40, 2, 1);
        assert!(matches!(psi_exact(&inst, 10, None), Err(Error::Capacity(_))));
        assert!(psi_exact(&inst, 2, Some(100)).is_err());
        assert!(psi_exact(&inst, 2, Some(1000)).is_ok());
    }
}
