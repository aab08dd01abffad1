use super::table::ScoreColumn;
use crate::metrics::zscore;
use crate::{Error, Result};

/// `w * z(a) + (1 - w) * z(b)`, z-scored over the pooled evaluation set.
pub fn ensemble_scores(a: &ScoreColumn, b: &ScoreColumn, weight: f64) -> Result<ScoreColumn> {
    if !(0.0..=1.0).contains(&weight) {
        return Err(Error::invalid(format!(
            "ensemble weight {weight} outside [0, 1]"
        )));
    }
    if a.ids != b.ids {
        return Err(Error::Misaligned(format!(
            "`{}` and `{}` cover different example ids",
            a.attack, b.attack
        )));
    }
    if a.labels != b.labels {
        return Err(Error::Misaligned(format!(
            "`{}` and `{}` disagree on labels",
            a.attack, b.attack
        )));
    }
    let za = zscore(&a.scores).map_err(|_| Error::ZeroVariance(a.attack.clone()))?;
    let zb = zscore(&b.scores).map_err(|_| Error::ZeroVariance(b.attack.clone()))?;
    Ok(ScoreColumn {
        attack: format!("ensemble({},{},w={weight})", a.attack, b.attack),
        ids: a.ids.clone(),
        labels: a.labels.clone(),
        scores: za
            .iter()
            .zip(&zb)
            .map(|(x, y)| weight * x + (1.0 - weight) * y)
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::Membership;
    use crate::metrics::{auc, roc};

    fn col(name: &str, scores: Vec<f64>) -> ScoreColumn {
        let n = scores.len();
        ScoreColumn {
            attack: name.into(),
            ids: (0..n as u64).collect(),
            labels: (0..n)
                .map(|i| {
                    if i % 2 == 0 {
                        Membership::Member
                    } else {
                        Membership::Nonmember
                    }
                })
                .collect(),
            scores,
        }
    }

    fn col_auc(c: &ScoreColumn) -> f64 {
        auc(&roc(&c.scores, &c.member_mask()).unwrap())
    }

    #[test]
    fn endpoints_reduce_to_constituents() {
        let a = col("a", vec![0.9, 0.1, 0.4, 0.5, 0.7, 0.3]);
        let b = col("b", vec![0.2, 0.6, 0.8, 0.1, 0.3, 0.9]);
        assert_eq!(col_auc(&ensemble_scores(&a, &b, 1.0).unwrap()), col_auc(&a));
        assert_eq!(col_auc(&ensemble_scores(&a, &b, 0.0).unwrap()), col_auc(&b));
        for w in [0.0, 0.3, 0.8] {
            assert_eq!(col_auc(&ensemble_scores(&a, &a, w).unwrap()), col_auc(&a));
        }
    }

    #[test]
    fn positive_scaling_does_not_change_ranking() {
        let a = col("a", vec![0.9, 0.1, 0.4, 0.5, 0.7, 0.3]);
        let b = col("b", vec![0.2, 0.6, 0.8, 0.1, 0.3, 0.9]);
        let scaled = col("a", a.scores.iter().map(|s| 40.0 * s).collect());
        let e1 = ensemble_scores(&a, &b, 0.4).unwrap();
        let e2 = ensemble_scores(&scaled, &b, 0.4).unwrap();
        assert_eq!(col_auc(&e1), col_auc(&e2));
    }

    #[test]
    fn errors_name_the_column() {
        let a = col("loss", vec![1.0, 2.0, 3.0, 4.0]);
        let flat = col("mope", vec![1.0; 4]);
        assert_eq!(
            ensemble_scores(&a, &flat, 0.5),
            Err(Error::ZeroVariance("mope".into()))
        );
        let mut shifted = a.clone();
        shifted.ids[0] = 99;
        assert!(matches!(
            ensemble_scores(&a, &shifted, 0.5),
            Err(Error::Misaligned(_))
        ));
        assert!(ensemble_scores(&a, &a, 1.5).is_err());
    }
}
