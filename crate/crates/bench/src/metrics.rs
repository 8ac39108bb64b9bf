//! Ranking and correlation metrics comparing approximate posterior marginals
//! with a reference.

use serde::Serialize;

use noisyor::{Error, Result};

/// Disease indices sorted by descending probability, ties by smaller index.
pub fn ranking(posteriors: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..posteriors.len()).collect();
    idx.sort_by(|&a, &b| posteriors[b].total_cmp(&posteriors[a]).then(a.cmp(&b)));
    idx
}

/// For `N = 1..=n_max`: how far down the approximate ranking one must go to
/// recover the reference top `N`, and how many of the reference top `N` are
/// missing from the approximate top `N`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RankingCurve {
    pub true_positives: Vec<usize>,
    /// `N'` per `N`.
    pub required_length: Vec<usize>,
    /// `N' - N` per `N`.
    pub false_positives: Vec<usize>,
    pub false_negatives: Vec<usize>,
}

impl RankingCurve {
    /// Area under the false-positive curve.
    pub fn false_positive_area(&self) -> usize {
        self.false_positives.iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,n_prime,false_positives,false_negatives\n");
        for k in 0..self.true_positives.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.true_positives[k], self.required_length[k], self.false_positives[k], self.false_negatives[k]
            ));
        }
        out
    }
}

pub fn ranking_curve(reference: &[f64], approx: &[f64], n_max: usize) -> Result<RankingCurve> {
    let n = reference.len();
    if approx.len() != n {
        return Err(Error::Domain(format!(
            "posterior vectors differ in length ({n} vs {})",
            approx.len()
        )));
    }
    if n_max > n {
        return Err(Error::Domain(format!("n_max {n_max} exceeds {n} diseases")));
    }
    let ref_rank = ranking(reference);
    let mut position = vec![0; n];
    for (pos, &j) in ranking(approx).iter().enumerate() {
        position[j] = pos;
    }
    let mut curve = RankingCurve {
        true_positives: Vec::with_capacity(n_max),
        required_length: Vec::with_capacity(n_max),
        false_positives: Vec::with_capacity(n_max),
        false_negatives: Vec::with_capacity(n_max),
    };
    let mut deepest = 0;
    for big_n in 1..=n_max {
        let j = ref_rank[big_n - 1];
        deepest = deepest.max(position[j] + 1);
        let missing = ref_rank[..big_n].iter().filter(|&&j| position[j] >= big_n).count();
        curve.true_positives.push(big_n);
        curve.required_length.push(deepest);
        curve.false_positives.push(deepest - big_n);
        curve.false_negatives.push(missing);
    }
    Ok(curve)
}

/// Pearson correlation over the `top_k` diseases ranked highest by the
/// reference. `None` when either side has zero variance.
pub fn correlation(reference: &[f64], approx: &[f64], top_k: usize) -> Result<Option<f64>> {
    if approx.len() != reference.len() {
        return Err(Error::Domain("posterior vectors differ in length".into()));
    }
    if top_k > reference.len() {
        return Err(Error::Domain(format!(
            "top_k {top_k} exceeds {} diseases",
            reference.len()
        )));
    }
    let top = &ranking(reference)[..top_k];
    let k = top_k as f64;
    let mx = top.iter().map(|&j| reference[j]).sum::<f64>() / k;
    let my = top.iter().map(|&j| approx[j]).sum::<f64>() / k;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &j in top {
        let (dx, dy) = (reference[j] - mx, approx[j] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)))
}

pub fn max_abs_error(reference: &[f64], approx: &[f64]) -> f64 {
    reference
        .iter()
        .zip(approx)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_ranking_has_no_errors() {
        let p = [0.9, 0.5, 0.7, 0.1];
        let c = ranking_curve(&p, &p, 4).unwrap();
        assert_eq!(c.required_length, vec![1, 2, 3, 4]);
        assert_eq!(c.false_negatives, vec![0; 4]);
        assert_eq!(c.false_positive_area(), 0);
    }

    #[test]
    fn swapping_the_top_two() {
        let reference = [0.9, 0.8, 0.5, 0.3, 0.1];
        let approx = [0.8, 0.9, 0.5, 0.3, 0.1];
        let c = ranking_curve(&reference, &approx, 5).unwrap();
        assert_eq!(c.required_length, vec![2, 2, 3, 4, 5]);
        assert_eq!(c.false_positives, vec![1, 0, 0, 0, 0]);
        assert_eq!(c.false_negatives, vec![1, 0, 0, 0, 0]);
    }

    #[test]
    fn ties_break_by_index() {
        assert_eq!(ranking(&[0.2, 0.5, 0.2, 0.5]), vec![1, 3, 0, 2]);
    }

    #[test]
    fn n_max_beyond_diseases_is_rejected() {
        assert!(ranking_curve(&[0.1, 0.2], &[0.1, 0.2], 3).is_err());
    }

    #[test]
    fn correlation_cases() {
        let p = [0.9, 0.5, 0.7, 0.1];
        assert!((correlation(&p, &p, 4).unwrap().unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(correlation(&p, &[0.3; 4], 4).unwrap(), None);
        let neg = [0.1, 0.5, 0.3, 0.9];
        assert!(correlation(&p, &neg, 4).unwrap().unwrap() < 0.0);
        assert!(correlation(&p, &p, 5).is_err());
    }
}
