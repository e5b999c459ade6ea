use crate::error::{Error, Result};
use crate::math::SeededRng;

/// Softmax of `logits / temperature`; `-inf` logits map to probability zero.
pub fn softmax_with_temperature(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::domain(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if logits.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
        return Err(Error::Sampling("logits contain NaN or +inf".into()));
    }
    let max = logits
        .iter()
        .copied()
        .filter(|x| x.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::Sampling("every logit is -inf".into()));
    }
    let mut probs: Vec<f64> = logits
        .iter()
        .map(|&x| {
            if x.is_finite() {
                ((x - max) / temperature).exp()
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(probs)
}

/// Index of the largest logit, lowest index on ties.
pub fn argmax(logits: &[f64]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &x) in logits.iter().enumerate() {
        if x.is_nan() {
            return Err(Error::Sampling("NaN logit".into()));
        }
        if x == f64::NEG_INFINITY {
            continue;
        }
        if best.is_none_or(|(_, b)| x > b) {
            best = Some((i, x));
        }
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| Error::Sampling("every logit is -inf".into()))
}

/// Token ids in the nucleus, most probable first, with their probabilities.
///
/// The nucleus is the shortest prefix of the probability-sorted vocabulary
/// whose mass reaches `p`. Ties sort by ascending token id.
pub fn nucleus(probs: &[f64], p: f64) -> Result<Vec<(usize, f64)>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::domain(format!("top-p must lie in (0, 1], got {p}")));
    }
    let mut order: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] > 0.0).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut kept = Vec::new();
    let mut mass = 0.0;
    for i in order {
        kept.push((i, probs[i]));
        mass += probs[i];
        if mass >= p {
            break;
        }
    }
    if kept.is_empty() {
        return Err(Error::Sampling("no token has positive probability".into()));
    }
    Ok(kept)
}

/// Temperature + nucleus sampling.
pub fn top_p_sample(logits: &[f64], temperature: f64, p: f64, rng: &mut SeededRng) -> Result<usize> {
    let probs = softmax_with_temperature(logits, temperature)?;
    let kept = nucleus(&probs, p)?;
    let mass: f64 = kept.iter().map(|(_, q)| q).sum();
    let mut u = rng.unit() * mass;
    for &(i, q) in &kept {
        if u < q {
            return Ok(i);
        }
        u -= q;
    }
    Ok(kept.last().expect("nucleus is nonempty").0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dominant_logit_always_wins() {
        let mut rng = SeededRng::new(5);
        let logits = [0.0, 60.0, -3.0, 1.0];
        for _ in 0..1000 {
            assert_eq!(top_p_sample(&logits, 1.0, 0.95, &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn uniform_logits_pass_chi_square() {
        let mut rng = SeededRng::new(11);
        let mut counts = [0usize; 4];
        let n = 10_000;
        for _ in 0..n {
            counts[top_p_sample(&[0.5; 4], 1.0, 1.0, &mut rng).unwrap()] += 1;
        }
        let expected = n as f64 / 4.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // chi-square critical value, 3 degrees of freedom, alpha = 0.01
        assert!(chi2 < 11.345, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn nucleus_excludes_tail() {
        // softmax([2,1,0]) = {0.665, 0.245, 0.090}; cumulative reaches 0.8 at two tokens
        let probs = softmax_with_temperature(&[2.0, 1.0, 0.0], 1.0).unwrap();
        assert!((probs[0] - 0.665241).abs() < 1e-6);
        assert!((probs[1] - 0.244728).abs() < 1e-6);
        let kept = nucleus(&probs, 0.8).unwrap();
        assert_eq!(kept.iter().map(|k| k.0).collect::<Vec<_>>(), vec![0, 1]);
        let mut rng = SeededRng::new(2);
        let mut seen = [false; 3];
        for _ in 0..5000 {
            seen[top_p_sample(&[2.0, 1.0, 0.0], 1.0, 0.8, &mut rng).unwrap()] = true;
        }
        assert_eq!(seen, [true, true, false]);
    }

    #[test]
    fn all_neg_inf_is_an_error() {
        let mut rng = SeededRng::new(1);
        let logits = [f64::NEG_INFINITY; 3];
        assert!(matches!(
            top_p_sample(&logits, 1.0, 0.9, &mut rng),
            Err(Error::Sampling(_))
        ));
        assert!(argmax(&logits).is_err());
    }

    #[test]
    fn ties_break_by_index() {
        let probs = [0.25; 4];
        let kept = nucleus(&probs, 0.5).unwrap();
        assert_eq!(kept.iter().map(|k| k.0).collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]).unwrap(), 1);
    }

    #[test]
    fn same_seed_same_draws() {
        let logits: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let draw = |seed| {
            let mut rng = SeededRng::new(seed);
            (0..50)
                .map(|_| top_p_sample(&logits, 1.0, 0.95, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(42), draw(42));
    }

    #[test]
    fn temperature_keeps_argmax_first() {
        let logits = [0.3, 2.0, -1.0, 1.9];
        for t in [0.1, 0.5, 1.0, 2.0, 10.0] {
            let probs = softmax_with_temperature(&logits, t).unwrap();
            assert_eq!(argmax(&probs).unwrap(), 1);
        }
    }
}
