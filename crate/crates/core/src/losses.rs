//! Hinge adversarial losses and the pre-emphasised error-to-signal ratio.
//!
//! Multi-scale scores are passed as one slice per sub-discriminator; the
//! loss is the mean of the per-scale losses.

use crate::error::{Error, Result};
use crate::real::Real;

pub const DEFAULT_PREEMPHASIS: f64 = 0.85;

fn check_scales<T>(scores: &[Vec<T>], what: &str) -> Result<()> {
    if scores.is_empty() || scores.iter().any(|s| s.is_empty()) {
        return Err(Error::Data(format!("{what} scores are empty")));
    }
    Ok(())
}

/// `mean max(0, 1 - real) + mean max(0, 1 + fake)` for one scale.
pub fn hinge_loss_d<T: Real>(real: &[T], fake: &[T]) -> T {
    let one = T::one();
    let r = real.iter().map(|&s| (one - s).max(T::zero())).sum::<T>() / T::of(real.len() as f64);
    let f = fake.iter().map(|&s| (one + s).max(T::zero())).sum::<T>() / T::of(fake.len() as f64);
    r + f
}

/// `-mean fake` for one scale.
pub fn hinge_loss_g<T: Real>(fake: &[T]) -> T {
    -fake.iter().copied().sum::<T>() / T::of(fake.len() as f64)
}

pub fn hinge_loss_d_multiscale<T: Real>(real: &[Vec<T>], fake: &[Vec<T>]) -> Result<T> {
    check_scales(real, "real")?;
    check_scales(fake, "fake")?;
    if real.len() != fake.len() {
        return Err(Error::Data("real and fake scale counts differ".into()));
    }
    let s = real.iter().zip(fake).map(|(r, f)| hinge_loss_d(r, f)).sum::<T>();
    Ok(s / T::of(real.len() as f64))
}

pub fn hinge_loss_g_multiscale<T: Real>(fake: &[Vec<T>]) -> Result<T> {
    check_scales(fake, "fake")?;
    Ok(fake.iter().map(|f| hinge_loss_g(f)).sum::<T>() / T::of(fake.len() as f64))
}

/// Derivatives of the multi-scale D loss with respect to each score.
/// Margin-satisfied scores get exactly zero.
pub fn hinge_loss_d_grads<T: Real>(real: &[Vec<T>], fake: &[Vec<T>]) -> (Vec<Vec<T>>, Vec<Vec<T>>) {
    let n_scales = T::of(real.len() as f64);
    let dr = real
        .iter()
        .map(|r| {
            let w = T::one() / (n_scales * T::of(r.len() as f64));
            r.iter()
                .map(|&s| if T::one() - s > T::zero() { -w } else { T::zero() })
                .collect()
        })
        .collect();
    let df = fake
        .iter()
        .map(|f| {
            let w = T::one() / (n_scales * T::of(f.len() as f64));
            f.iter()
                .map(|&s| if T::one() + s > T::zero() { w } else { T::zero() })
                .collect()
        })
        .collect();
    (dr, df)
}

/// Derivatives of the multi-scale G loss with respect to each fake score.
pub fn hinge_loss_g_grads<T: Real>(fake: &[Vec<T>]) -> Vec<Vec<T>> {
    let n_scales = T::of(fake.len() as f64);
    fake.iter()
        .map(|f| vec![-T::one() / (n_scales * T::of(f.len() as f64)); f.len()])
        .collect()
}

/// `y[n] = x[n] - c x[n-1]` with `x[-1] = 0`.
pub fn preemphasis<T: Real>(x: &[T], coeff: f64) -> Vec<T> {
    let c = T::of(coeff);
    let mut prev = T::zero();
    x.iter()
        .map(|&v| {
            let y = v - c * prev;
            prev = v;
            y
        })
        .collect()
}

/// Error and reference energy of one pair after pre-emphasis.
fn esr_terms<T: Real>(output: &[T], target: &[T], coeff: f64) -> Result<(T, T, Vec<T>)> {
    if output.len() != target.len() {
        return Err(Error::Shape(format!(
            "output has {} samples, target {}",
            output.len(),
            target.len()
        )));
    }
    let ho = preemphasis(output, coeff);
    let ht = preemphasis(target, coeff);
    let e: Vec<T> = ht.iter().zip(&ho).map(|(&t, &o)| t - o).collect();
    let err = e.iter().map(|&v| v * v).sum::<T>();
    let energy = ht.iter().map(|&v| v * v).sum::<T>();
    Ok((err, energy, e))
}

/// Pre-emphasised error-to-signal ratio `sum(e^2) / sum(H(target)^2)`.
pub fn esr_loss<T: Real>(output: &[T], target: &[T], coeff: f64) -> Result<T> {
    let (err, energy, _) = esr_terms(output, target, coeff)?;
    if energy == T::zero() {
        return Err(Error::Data("target has zero energy after pre-emphasis".into()));
    }
    Ok(err / energy)
}

/// Pooled ESR over a batch (total error energy over total target energy)
/// and its gradient with respect to each output. The first `mask` samples
/// of every pair are dropped before filtering, so they influence neither
/// the loss nor the gradient.
pub fn batch_esr_with_grad<T: Real>(
    outputs: &[Vec<T>],
    targets: &[&[T]],
    coeff: f64,
    mask: usize,
) -> Result<(T, Vec<Vec<T>>)> {
    if outputs.len() != targets.len() || outputs.is_empty() {
        return Err(Error::Shape("batch sizes differ or are empty".into()));
    }
    let mut total_err = T::zero();
    let mut total_energy = T::zero();
    let mut errors = Vec::with_capacity(outputs.len());
    for (o, t) in outputs.iter().zip(targets) {
        if o.len() <= mask || t.len() != o.len() {
            return Err(Error::Shape(format!(
                "segment of {} samples cannot be masked by {mask} (target {})",
                o.len(),
                t.len()
            )));
        }
        let (err, energy, e) = esr_terms(&o[mask..], &t[mask..], coeff)?;
        total_err += err;
        total_energy += energy;
        errors.push(e);
    }
    if total_energy == T::zero() {
        return Err(Error::Data("batch targets have zero energy after pre-emphasis".into()));
    }
    let c = T::of(coeff);
    let scale = T::of(-2.0) / total_energy;
    let grads = outputs
        .iter()
        .zip(&errors)
        .map(|(o, e)| {
            let mut g = vec![T::zero(); o.len()];
            let n = e.len();
            for i in 0..n {
                // d/do_i of H(o): i contributes to filtered samples i and i+1
                let mut v = scale * e[i];
                if i + 1 < n {
                    v -= c * scale * e[i + 1];
                }
                g[mask + i] = v;
            }
            g
        })
        .collect();
    Ok((total_err / total_energy, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(v: &[f64]) -> Vec<Vec<f64>> {
        vec![v.to_vec()]
    }

    #[test]
    fn hinge_examples() {
        assert_eq!(hinge_loss_d_multiscale(&s(&[1.0, 1.0]), &s(&[-1.0, -1.0])).unwrap(), 0.0);
        assert_eq!(hinge_loss_d_multiscale(&s(&[0.0]), &s(&[0.0])).unwrap(), 2.0);
        assert_eq!(hinge_loss_d_multiscale(&s(&[-0.5]), &s(&[0.5])).unwrap(), 3.0);
        assert_eq!(hinge_loss_g_multiscale(&s(&[0.0, 0.0])).unwrap(), 0.0);
        assert_eq!(hinge_loss_g_multiscale(&s(&[1.0, 1.0])).unwrap(), -1.0);
        assert_eq!(hinge_loss_g_multiscale(&s(&[0.5, -0.5])).unwrap(), 0.0);
    }

    #[test]
    fn multiscale_losses_are_averaged() {
        let real = vec![vec![0.0], vec![1.0]];
        let fake = vec![vec![0.0], vec![-1.0]];
        assert_eq!(hinge_loss_d_multiscale(&real, &fake).unwrap(), 1.0);
        assert_eq!(hinge_loss_g_multiscale(&[vec![2.0], vec![0.0]]).unwrap(), -1.0);
    }

    #[test]
    fn empty_scores_rejected() {
        assert!(hinge_loss_d_multiscale::<f64>(&[vec![]], &s(&[0.0])).is_err());
        assert!(hinge_loss_g_multiscale::<f64>(&[]).is_err());
    }

    #[test]
    fn hinge_clamp_zeroes_margin_satisfied_gradients() {
        let real = vec![vec![1.5, 0.3, 2.0]];
        let fake = vec![vec![-1.2, 0.1, -3.0]];
        let (dr, df) = hinge_loss_d_grads(&real, &fake);
        // numerical check against the loss itself
        let h = 1e-6;
        for i in 0..3 {
            let mut rp = real.clone();
            rp[0][i] += h;
            let mut rm = real.clone();
            rm[0][i] -= h;
            let fd: f64 = (hinge_loss_d_multiscale(&rp, &fake).unwrap() - hinge_loss_d_multiscale(&rm, &fake).unwrap()) / (2.0 * h);
            assert!((fd - dr[0][i]).abs() < 1e-9);
            let mut fp = fake.clone();
            fp[0][i] += h;
            let mut fm = fake.clone();
            fm[0][i] -= h;
            let fd: f64 = (hinge_loss_d_multiscale(&real, &fp).unwrap() - hinge_loss_d_multiscale(&real, &fm).unwrap()) / (2.0 * h);
            assert!((fd - df[0][i]).abs() < 1e-9);
        }
        assert_eq!(dr[0][0], 0.0);
        assert_eq!(dr[0][2], 0.0);
        assert_eq!(df[0][0], 0.0);
        assert_eq!(df[0][2], 0.0);
    }

    #[test]
    fn esr_examples() {
        let t: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37).sin()).collect();
        assert_eq!(esr_loss(&t, &t, 0.85).unwrap(), 0.0);
        assert_eq!(esr_loss(&vec![0.0; 200], &t, 0.85).unwrap(), 1.0);
        let half: Vec<f64> = t.iter().map(|v| 0.5 * v).collect();
        assert!((esr_loss(&half, &t, 0.85).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn esr_errors() {
        assert!(esr_loss(&[0.0; 3], &[0.0; 3], 0.85).is_err());
        assert!(esr_loss(&[0.0; 3], &[1.0; 4], 0.85).is_err());
    }

    #[test]
    fn preemphasis_values() {
        assert_eq!(preemphasis(&[1.0, 1.0, 0.0], 0.85), vec![1.0, 1.0 - 0.85, -0.85]);
    }

    #[test]
    fn batch_esr_gradient_matches_finite_differences() {
        let outs = vec![
            (0..40).map(|i| (i as f64 * 0.3).cos() * 0.4).collect::<Vec<_>>(),
            (0..40).map(|i| (i as f64 * 0.7).sin() * 0.2).collect(),
        ];
        let t1: Vec<f64> = (0..40).map(|i| (i as f64 * 0.31).sin()).collect();
        let t2: Vec<f64> = (0..40).map(|i| (i as f64 * 0.11).cos()).collect();
        let targets = [t1.as_slice(), t2.as_slice()];
        let (_, g) = batch_esr_with_grad(&outs, &targets, 0.85, 5).unwrap();
        let h = 1e-6;
        for b in 0..2 {
            for i in 0..40 {
                let mut p = outs.clone();
                p[b][i] += h;
                let mut m = outs.clone();
                m[b][i] -= h;
                let fd = (batch_esr_with_grad(&p, &targets, 0.85, 5).unwrap().0
                    - batch_esr_with_grad(&m, &targets, 0.85, 5).unwrap().0)
                    / (2.0 * h);
                assert!((fd - g[b][i]).abs() < 1e-8, "{b} {i}: {fd} vs {}", g[b][i]);
            }
        }
    }

    proptest! {
        #[test]
        fn masked_prefix_of_target_is_ignored(
            prefix in proptest::collection::vec(-10.0f64..10.0, 8),
            seed in 0u64..1000,
        ) {
            let n = 64;
            let out: Vec<f64> = (0..n).map(|i| ((i as u64 * 31 + seed) % 17) as f64 / 17.0 - 0.5).collect();
            let t: Vec<f64> = (0..n).map(|i| ((i as u64 * 7 + seed) % 13) as f64 / 13.0 - 0.4).collect();
            let mut t2 = t.clone();
            t2[..8].copy_from_slice(&prefix);
            let a = batch_esr_with_grad(&[out.clone()], &[t.as_slice()], 0.85, 8).unwrap();
            let b = batch_esr_with_grad(&[out], &[t2.as_slice()], 0.85, 8).unwrap();
            prop_assert_eq!(a.0, b.0);
            prop_assert_eq!(a.1, b.1);
        }

        #[test]
        fn esr_of_scaled_target(k in -3.0f64..3.0) {
            let t: Vec<f64> = (0..100).map(|i| (i as f64 * 0.21).sin() + 0.1).collect();
            let o: Vec<f64> = t.iter().map(|v| k * v).collect();
            let e = esr_loss(&o, &t, 0.85).unwrap();
            prop_assert!((e - (1.0 - k) * (1.0 - k)).abs() < 1e-9);
        }
    }
}
