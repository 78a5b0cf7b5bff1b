use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scoring::AnomalyMapSet;
use crate::synth::Label;

/// Area under the ROC curve via the rank-sum (Mann-Whitney) statistic, with
/// tied scores sharing their average rank.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Input(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Input(format!("score {s} is not comparable")));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::MetricUndefined(format!(
            "AUROC needs both classes ({pos} positive, {neg} negative)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Ranks are doubled so tie averages stay integral.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg2 = (i + 1 + j + 1) as u128;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum2 += avg2;
            }
        }
        i = j + 1;
    }
    let p = pos as u128;
    // U = R − p(p+1)/2, all doubled.
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2 * pos * neg) as f64)
}

/// AUROC over every pixel of every image, flattened together.
pub fn pixel_auroc(maps: &[&Tensor], gts: &[&Tensor]) -> Result<f64> {
    if maps.len() != gts.len() {
        return Err(Error::Input(format!("{} maps for {} masks", maps.len(), gts.len())));
    }
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (m, g) in maps.iter().zip(gts) {
        m.expect_same_shape(g, "pixel_auroc")?;
        scores.extend_from_slice(m.data());
        labels.extend(g.data().iter().map(|&v| v > 0.5));
    }
    auroc(&scores, &labels)
}

/// [`pixel_auroc`] over the fused maps of a set of results.
pub fn pixel_auroc_sets(maps: &[AnomalyMapSet], gts: &[Tensor]) -> Result<f64> {
    let m: Vec<&Tensor> = maps.iter().map(|s| &s.fused).collect();
    let g: Vec<&Tensor> = gts.iter().collect();
    pixel_auroc(&m, &g)
}

/// Fraction of exact matches.
pub fn accuracy(predicted: &[Label], truth: &[Label]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::Input(format!("{} predictions for {} labels", predicted.len(), truth.len())));
    }
    if truth.is_empty() {
        return Err(Error::MetricUndefined("accuracy of an empty set".into()));
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Exhaustive pairwise AUROC; quadratic, for cross-checking.
pub fn auroc_pairwise(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (mut wins, mut pairs) = (0.0, 0usize);
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    if pairs == 0 {
        return Err(Error::MetricUndefined("AUROC needs both classes".into()));
    }
    Ok(wins / pairs as f64)
}
