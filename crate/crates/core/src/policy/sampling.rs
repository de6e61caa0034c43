//! Nucleus (top-p) sampling.

use rand::Rng;

use crate::error::{Error, Result};

const SUM_TOLERANCE: f64 = 1e-6;

pub fn validate_distribution(dist: &[f64]) -> Result<()> {
    if dist.is_empty() {
        return Err(Error::Distribution("empty distribution".into()));
    }
    if let Some(bad) = dist.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::Distribution(format!("entry {bad} is not a probability")));
    }
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::Distribution(format!("entries sum to {total}")));
    }
    Ok(())
}

fn check_top_p(top_p: f64) -> Result<()> {
    if top_p > 0.0 && top_p <= 1.0 {
        Ok(())
    } else {
        Err(Error::Distribution(format!("top_p {top_p} is outside (0, 1]")))
    }
}

/// The smallest prefix of tokens, sorted by descending probability with
/// ties broken by lower index, whose cumulative mass reaches `top_p`.
/// Zero-probability tokens are never included.
pub fn nucleus_set(dist: &[f64], top_p: f64) -> Result<Vec<usize>> {
    validate_distribution(dist)?;
    check_top_p(top_p)?;
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
    let mut cum = 0.0;
    let mut nucleus = Vec::new();
    for i in order {
        if dist[i] == 0.0 {
            break;
        }
        nucleus.push(i);
        cum += dist[i];
        if cum >= top_p {
            break;
        }
    }
    Ok(nucleus)
}

/// Samples a token from the renormalized nucleus of `dist`.
pub fn nucleus_sample<R: Rng + ?Sized>(dist: &[f64], top_p: f64, rng: &mut R) -> Result<usize> {
    let nucleus = nucleus_set(dist, top_p)?;
    if nucleus.len() == 1 {
        return Ok(nucleus[0]);
    }
    let mass: f64 = nucleus.iter().map(|&i| dist[i]).sum();
    let u = rng.gen::<f64>() * mass;
    let mut cum = 0.0;
    for &i in &nucleus {
        cum += dist[i];
        if u < cum {
            return Ok(i);
        }
    }
    Ok(*nucleus.last().expect("nucleus is non-empty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::par::seeded_rng;
    use proptest::prelude::*;

    #[test]
    fn small_top_p_isolates_the_head() {
        let mut rng = seeded_rng(1);
        for _ in 0..200 {
            assert_eq!(nucleus_sample(&[0.7, 0.2, 0.1], 0.6, &mut rng).unwrap(), 0);
        }
        assert_eq!(nucleus_set(&[0.7, 0.2, 0.1], 0.6).unwrap(), vec![0]);
        assert_eq!(nucleus_set(&[0.7, 0.2, 0.1], 0.8).unwrap(), vec![0, 1]);
    }

    #[test]
    fn full_nucleus_matches_frequencies() {
        let dist = [0.5, 0.3, 0.2];
        let mut rng = seeded_rng(42);
        let mut counts = [0usize; 3];
        for _ in 0..10_000 {
            counts[nucleus_sample(&dist, 1.0, &mut rng).unwrap()] += 1;
        }
        for (c, p) in counts.iter().zip(dist) {
            assert!((*c as f64 / 10_000.0 - p).abs() < 0.03);
        }
    }

    #[test]
    fn ties_break_toward_lower_index() {
        assert_eq!(nucleus_set(&[0.25, 0.5, 0.25], 0.6).unwrap(), vec![1, 0]);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let mut rng = seeded_rng(0);
        assert!(nucleus_sample(&[], 0.9, &mut rng).is_err());
        assert!(nucleus_sample(&[0.5, 0.6], 0.9, &mut rng).is_err());
        assert!(nucleus_sample(&[1.5, -0.5], 0.9, &mut rng).is_err());
        assert!(nucleus_sample(&[0.5, 0.5], 0.0, &mut rng).is_err());
        assert!(nucleus_sample(&[0.5, 0.5], 1.5, &mut rng).is_err());
        assert!(nucleus_sample(&[f64::NAN, 1.0], 0.5, &mut rng).is_err());
    }

    fn distribution() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, 1..20).prop_filter_map("non-zero mass", |w| {
            let s: f64 = w.iter().sum();
            (s > 1e-6).then(|| w.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn samples_stay_in_the_nucleus(dist in distribution(), top_p in 0.01f64..=1.0, seed in any::<u64>()) {
            let nucleus = nucleus_set(&dist, top_p).unwrap();
            let mut rng = seeded_rng(seed);
            for _ in 0..50 {
                let t = nucleus_sample(&dist, top_p, &mut rng).unwrap();
                prop_assert!(nucleus.contains(&t));
            }
        }

        #[test]
        fn nucleus_shrinks_with_top_p(dist in distribution(), a in 0.01f64..=1.0, b in 0.01f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let small = nucleus_set(&dist, lo).unwrap();
            let large = nucleus_set(&dist, hi).unwrap();
            prop_assert!(small.len() <= large.len());
            prop_assert_eq!(&large[..small.len()], &small[..]);
        }

        #[test]
        fn top_p_below_max_is_argmax(dist in distribution(), frac in 0.0f64..=1.0, seed in any::<u64>()) {
            let max = dist.iter().copied().fold(0.0, f64::max);
            let top_p = (max * frac).max(1e-12);
            let argmax = nucleus_set(&dist, 1e-12).unwrap()[0];
            prop_assert_eq!(dist[argmax], max);
            let mut rng = seeded_rng(seed);
            prop_assert_eq!(nucleus_sample(&dist, top_p, &mut rng).unwrap(), argmax);
        }
    }
}
