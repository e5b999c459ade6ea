use std::f64::consts::PI;

use crate::error::{Error, Result};

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn checked_norm(v: &[f64], what: &str) -> Result<f64> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain(format!("{what} has non-finite entries")));
    }
    let n = norm(v);
    if n == 0.0 {
        return Err(Error::domain(format!("{what} has zero norm")));
    }
    Ok(n)
}

fn check_dims(u: &[f64], v: &[f64]) -> Result<()> {
    if u.len() != v.len() {
        return Err(Error::domain(format!(
            "vector lengths differ: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    Ok(())
}

/// Cosine similarity in `[-1, 1]`.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    check_dims(u, v)?;
    let nu = checked_norm(u, "left vector")?;
    let nv = checked_norm(v, "right vector")?;
    if u == v {
        // rounding in the norms must not cost the exact 1
        return Ok(1.0);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// `1 - arccos(cos(u, v)) / pi`, in `[0, 1]`.
pub fn angular_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    let c = cosine_similarity(u, v)?;
    Ok(1.0 - c.acos() / PI)
}

pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = checked_norm(v, "vector")?;
    Ok(v.iter().map(|x| x / n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::SeededRng;
    use proptest::prelude::*;

    #[test]
    fn angular_examples() {
        let u = [0.6, 0.8];
        assert_eq!(angular_similarity(&u, &u).unwrap(), 1.0);
        assert!((angular_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(angular_similarity(&u, &[-0.6, -0.8]).unwrap(), 0.0);
        assert!(angular_similarity(&[0.0, 0.0], &u).is_err());
    }

    #[test]
    fn cosine_examples() {
        let u = [1.0, 2.0, 3.0];
        assert!((cosine_similarity(&u, &u).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let expect = 32.0 / (14f64.sqrt() * 77f64.sqrt());
        let got = cosine_similarity(&u, &[4.0, 5.0, 6.0]).unwrap();
        assert!((got - expect).abs() < 1e-15);
        assert!((got - 0.974631).abs() < 1e-6);
        assert!(cosine_similarity(&u, &[0.0; 3]).is_err());
        assert!(cosine_similarity(&u, &[1.0]).is_err());
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(l2_normalize(&[3.0, 4.0]).unwrap(), vec![0.6, 0.8]);
        let unit = [0.6, 0.8];
        let again = l2_normalize(&unit).unwrap();
        assert!((again[0] - 0.6).abs() < 1e-15 && (again[1] - 0.8).abs() < 1e-15);
        assert_eq!(l2_normalize(&[1.0; 4]).unwrap(), vec![0.5; 4]);
        assert!(l2_normalize(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn normalized_vectors_have_unit_norm() {
        let mut rng = SeededRng::new(3);
        for _ in 0..100 {
            let v: Vec<f64> = (0..64).map(|_| rng.normal(0.0, 10.0)).collect();
            let n = norm(&l2_normalize(&v).unwrap());
            assert!((n - 1.0).abs() <= 1e-12);
        }
    }

    proptest! {
        #[test]
        fn angular_is_symmetric_and_scale_invariant(
            u in prop::collection::vec(-10.0f64..10.0, 6),
            v in prop::collection::vec(-10.0f64..10.0, 6),
            a in 0.01f64..100.0,
            b in 0.01f64..100.0,
        ) {
            prop_assume!(norm(&u) > 1e-6 && norm(&v) > 1e-6);
            let s = angular_similarity(&u, &v).unwrap();
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert!((s - angular_similarity(&v, &u).unwrap()).abs() < 1e-12);
            let su: Vec<f64> = u.iter().map(|x| x * a).collect();
            let sv: Vec<f64> = v.iter().map(|x| x * b).collect();
            prop_assert!((s - angular_similarity(&su, &sv).unwrap()).abs() < 1e-7);
        }
    }
}
