use crate::error::{Error, Result};

/// Confusion counts `[[tn, fp], [fn, tp]]` indexed `[truth][prediction]`.
pub fn confusion(y_true: &[u8], y_pred: &[u8]) -> Result<[[usize; 2]; 2]> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Dimension {
            expected: y_true.len(),
            got: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Err(Error::Empty("macro-F1 of empty input".into()));
    }
    let mut c = [[0usize; 2]; 2];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t > 1 || p > 1 {
            return Err(Error::InvalidArgument(format!("labels must be 0 or 1, got ({t}, {p})")));
        }
        c[t as usize][p as usize] += 1;
    }
    Ok(c)
}

/// Unweighted mean of the two per-class F1 scores. A class whose F1
/// denominator is zero (absent from both truth and prediction) scores 0.
pub fn macro_f1(y_true: &[u8], y_pred: &[u8]) -> Result<f64> {
    let c = confusion(y_true, y_pred)?;
    let f1 = |k: usize| {
        let tp = c[k][k] as f64;
        let fp = c[1 - k][k] as f64;
        let fnn = c[k][1 - k] as f64;
        let denom = 2.0 * tp + fp + fnn;
        if denom == 0.0 {
            0.0
        } else {
            2.0 * tp / denom
        }
    };
    Ok(0.5 * (f1(0) + f1(1)))
}

pub fn accuracy(y_true: &[u8], y_pred: &[u8]) -> Result<f64> {
    let c = confusion(y_true, y_pred)?;
    Ok((c[0][0] + c[1][1]) as f64 / y_true.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_half() {
        assert_eq!(macro_f1(&[0, 1, 1, 0], &[0, 1, 1, 0]).unwrap(), 1.0);
        assert_eq!(macro_f1(&[1, 1, 0, 0], &[1, 0, 1, 0]).unwrap(), 0.5);
    }

    #[test]
    fn majority_predictor_on_three_to_one() {
        let f = macro_f1(&[0, 0, 0, 1], &[0, 0, 0, 0]).unwrap();
        assert!((f - 0.5 * (1.5 / 1.75)).abs() < 1e-15);
    }

    #[test]
    fn absent_class_scores_zero() {
        assert_eq!(macro_f1(&[0, 0], &[0, 0]).unwrap(), 0.5);
    }

    #[test]
    fn errors() {
        assert!(macro_f1(&[], &[]).is_err());
        assert!(macro_f1(&[0], &[0, 1]).is_err());
        assert!(macro_f1(&[2], &[0]).is_err());
    }
}
