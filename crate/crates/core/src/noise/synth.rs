use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;

use super::PoissonGaussianParams;
use crate::error::Result;
use crate::plane::Plane;
use crate::raw::{RawFrame, CHANNELS};

/// Random stream for one (channel, row). Each row draws from its own ChaCha
/// stream so the output does not depend on how rows are scheduled.
fn row_rng(seed: u64, channel: usize, row: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((channel as u64) << 32) | row as u64);
    rng
}

/// Draw a noisy observation of `clean` under `Var(x) = α·z + β`.
///
/// With `α > 0` each pixel is `α·Poisson(z/α) + N(0, β)`; with `α = 0` it is
/// `z + N(0, β)`. Output is clamped to `[0, 1]`.
pub fn synthesize_noise(
    clean: &RawFrame,
    params: &PoissonGaussianParams,
    seed: u64,
) -> Result<RawFrame> {
    params.validate()?;
    let (w, h) = clean.dims();
    let planes: Vec<Plane> = (0..CHANNELS)
        .map(|c| {
            let alpha = params.alpha[c];
            let beta = params.beta[c];
            let read = if beta > 0.0 {
                Some(Normal::new(0.0, beta.sqrt()).expect("finite sigma"))
            } else {
                None
            };
            let src = clean.plane(c);
            let mut data = vec![0.0f32; w * h];
            if w > 0 {
                data.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
                    let mut rng = row_rng(seed, c, y);
                    for (x, dst) in row.iter_mut().enumerate() {
                        let z = src.get(x, y) as f64;
                        let mut v = if alpha > 0.0 {
                            let lambda = z / alpha;
                            let k = if lambda > 0.0 {
                                Poisson::new(lambda)
                                    .expect("positive rate")
                                    .sample(&mut rng)
                            } else {
                                0.0
                            };
                            alpha * k
                        } else {
                            z
                        };
                        if let Some(n) = &read {
                            v += n.sample(&mut rng);
                        }
                        *dst = v.clamp(0.0, 1.0) as f32;
                    }
                });
            }
            Plane::new(w, h, data)
        })
        .collect::<Result<_>>()?;
    RawFrame::new(planes.try_into().expect("four planes"), clean.meta.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raw::CameraMeta;

    fn gray(w: usize, h: usize, v: f32) -> RawFrame {
        RawFrame::constant(w, h, [v; 4], CameraMeta::normalized("synth")).unwrap()
    }

    fn sample_variance(p: &Plane) -> f64 {
        let n = p.len() as f64;
        let m = p.mean();
        p.as_slice()
            .iter()
            .map(|&v| (v as f64 - m).powi(2))
            .sum::<f64>()
            / (n - 1.0)
    }

    #[test]
    fn noiseless_is_identity() {
        let clean = RawFrame::new(
            std::array::from_fn(|c| Plane::from_fn(7, 5, |x, y| ((x + y + c) % 9) as f32 / 8.0)),
            CameraMeta::normalized("c"),
        )
        .unwrap();
        let out = synthesize_noise(&clean, &PoissonGaussianParams::uniform(0.0, 0.0), 3).unwrap();
        assert_eq!(out, clean);
    }

    #[test]
    fn gaussian_only_variance() {
        let sigma2 = 1e-4;
        let out = synthesize_noise(
            &gray(1000, 1000, 0.5),
            &PoissonGaussianParams::uniform(0.0, sigma2),
            1,
        )
        .unwrap();
        let v = sample_variance(out.plane(0));
        assert!((v - sigma2).abs() < 0.05 * sigma2, "{v}");
    }

    #[test]
    fn poisson_gaussian_variance_at_mid_gray() {
        let (a, b) = (0.01, 1e-4);
        let out = synthesize_noise(
            &gray(1000, 1000, 0.5),
            &PoissonGaussianParams::uniform(a, b),
            2,
        )
        .unwrap();
        let want = a * 0.5 + b;
        for c in 0..CHANNELS {
            let v = sample_variance(out.plane(c));
            assert!((v - want).abs() < 0.05 * want, "channel {c}: {v} vs {want}");
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let p = PoissonGaussianParams::uniform(0.01, 1e-4);
        let a = synthesize_noise(&gray(33, 17, 0.3), &p, 9).unwrap();
        let b = synthesize_noise(&gray(33, 17, 0.3), &p, 9).unwrap();
        let c = synthesize_noise(&gray(33, 17, 0.3), &p, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_negative_parameters() {
        let mut p = PoissonGaussianParams::uniform(0.01, 1e-4);
        p.beta[2] = -1.0;
        assert!(synthesize_noise(&gray(4, 4, 0.5), &p, 0).is_err());
    }
}
