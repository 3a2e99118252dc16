use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hetgraph::LabelTable;
use crate::numcore::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub micro_f1: f64,
    pub macro_f1: f64,
    /// Present for binary single-label tasks with at least one positive.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ap: Option<f64>,
    pub nodes: usize,
}

/// Row-wise argmax; ties resolve to the lowest class index.
pub fn predict(logits: &Tensor) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for (k, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Per-class `(tp, fp, fn)` over `nodes`.
fn confusion(logits: &Tensor, labels: &LabelTable, nodes: &[usize]) -> Result<Vec<(usize, usize, usize)>> {
    let c = labels.num_classes;
    let mut counts = vec![(0, 0, 0); c];
    if labels.multilabel {
        for &u in nodes {
            let truth = labels.classes_of(u);
            for (k, cnt) in counts.iter_mut().enumerate() {
                let pred = logits[[u, k]] > 0.0;
                match (pred, truth.contains(&k)) {
                    (true, true) => cnt.0 += 1,
                    (true, false) => cnt.1 += 1,
                    (false, true) => cnt.2 += 1,
                    _ => {}
                }
            }
        }
    } else {
        let preds = predict(logits);
        for &u in nodes {
            let truth = labels.class_of(u).ok_or(Error::UnlabeledSplitMember(u))?;
            let p = preds[u];
            if p == truth {
                counts[p].0 += 1;
            } else {
                counts[p].1 += 1;
                counts[truth].2 += 1;
            }
        }
    }
    Ok(counts)
}

/// Micro/macro F1 (and AP where defined) of `logits` rows `nodes`.
pub fn evaluate(logits: &Tensor, labels: &LabelTable, nodes: &[usize]) -> Result<Scores> {
    if nodes.is_empty() {
        return Err(Error::Data("cannot evaluate an empty node set".into()));
    }
    if logits.ncols() != labels.num_classes || logits.nrows() != labels.n_nodes() {
        return Err(Error::ShapeMismatch(format!(
            "logits are {:?}, labels cover {} nodes and {} classes",
            logits.dim(),
            labels.n_nodes(),
            labels.num_classes
        )));
    }
    let counts = confusion(logits, labels, nodes)?;
    let (tp, fp, fn_) = counts.iter().fold((0, 0, 0), |a, c| (a.0 + c.0, a.1 + c.1, a.2 + c.2));
    let micro_f1 = f1(tp, fp, fn_);
    let macro_f1 = counts.iter().map(|&(a, b, c)| f1(a, b, c)).sum::<f64>() / counts.len() as f64;
    let ap = if labels.num_classes == 2 && !labels.multilabel {
        average_precision(logits, labels, nodes)?
    } else {
        None
    };
    Ok(Scores {
        micro_f1,
        macro_f1,
        ap,
        nodes: nodes.len(),
    })
}

/// Average precision of class 1 ranked by `logit_1 - logit_0`, ties broken by
/// ascending node id. `None` when `nodes` holds no positive.
pub fn average_precision(logits: &Tensor, labels: &LabelTable, nodes: &[usize]) -> Result<Option<f64>> {
    if labels.num_classes != 2 || labels.multilabel {
        return Err(Error::InvalidArgument(format!(
            "average precision is defined for binary single-label tasks, not {} classes{}",
            labels.num_classes,
            if labels.multilabel { " (multilabel)" } else { "" }
        )));
    }
    let mut ranked: Vec<(f64, usize, bool)> = nodes
        .iter()
        .map(|&u| {
            let truth = labels.class_of(u).ok_or(Error::UnlabeledSplitMember(u))?;
            Ok((logits[[u, 1]] - logits[[u, 0]], u, truth == 1))
        })
        .collect::<Result<_>>()?;
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let n_pos = ranked.iter().filter(|r| r.2).count();
    if n_pos == 0 {
        return Ok(None);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, r) in ranked.iter().enumerate() {
        if r.2 {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(Some(sum / n_pos as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn onehot(preds: &[usize], c: usize) -> Tensor {
        let mut t = Tensor::zeros((preds.len(), c));
        for (i, &p) in preds.iter().enumerate() {
            t[[i, p]] = 1.0;
        }
        t
    }

    #[test]
    fn perfect_predictions() {
        let labels = LabelTable::from_classes("t", 3, &[0, 1, 2, 1]);
        let s = evaluate(&onehot(&[0, 1, 2, 1], 3), &labels, &[0, 1, 2, 3]).unwrap();
        assert_eq!((s.micro_f1, s.macro_f1), (1.0, 1.0));
    }

    #[test]
    fn confusion_arithmetic() {
        let labels = LabelTable::from_classes("t", 2, &[0, 1, 1]);
        let s = evaluate(&onehot(&[0, 0, 1], 2), &labels, &[0, 1, 2]).unwrap();
        assert!((s.micro_f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.macro_f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn constant_predictor_on_balanced_data() {
        let labels = LabelTable::from_classes("t", 2, &[0, 1, 0, 1]);
        let s = evaluate(&onehot(&[0, 0, 0, 0], 2), &labels, &[0, 1, 2, 3]).unwrap();
        assert_eq!(s.micro_f1, 0.5);
        assert!((s.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ap_ranks_by_margin_with_id_ties() {
        let labels = LabelTable::from_classes("t", 2, &[1, 0, 1, 0]);
        // margins: 2, 1, 1, -1 -> ranking 0(+), 1(-), 2(+), 3(-)
        let logits = array![[0.0, 2.0], [0.0, 1.0], [0.0, 1.0], [1.0, 0.0]];
        let ap = average_precision(&logits, &labels, &[0, 1, 2, 3]).unwrap().unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        let three = LabelTable::from_classes("t", 3, &[0]);
        assert!(average_precision(&Tensor::zeros((1, 3)), &three, &[0]).is_err());
    }

    #[test]
    fn empty_split_rejected() {
        let labels = LabelTable::from_classes("t", 2, &[0]);
        assert!(evaluate(&Tensor::zeros((1, 2)), &labels, &[]).is_err());
    }
}
