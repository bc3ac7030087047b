use rand::Rng;
use rand_distr::StandardNormal;

use super::{Conditioning, Denoiser, DenoiserInput, LatentImage, NoiseSchedule};
use crate::error::{Error, Result};
use crate::meshproc::BoxMask;

/// Draws from `N(√ᾱ·x0, (1 − ᾱ)·I)` at `step`, one normal per element in
/// row-major order.
pub fn noise_known<R: Rng + ?Sized>(
    x0: &LatentImage,
    step: usize,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<LatentImage> {
    schedule.check_step(step)?;
    let a = schedule.alpha_bar(step);
    let (signal, sigma) = (a.sqrt(), (1.0 - a).sqrt());
    let mut out = x0.clone();
    for v in out.as_mut_slice() {
        let z: f64 = rng.sample(StandardNormal);
        *v = signal * *v + sigma * z;
    }
    Ok(out)
}

/// Clean-image estimate implied by a noise prediction.
pub fn predict_x0(x_t: &LatentImage, eps: &LatentImage, alpha_bar: f64) -> LatentImage {
    let (signal, sigma) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    x_t.map_with(eps, |x, e| (x - sigma * e) / signal)
}

fn predict_noise<D: Denoiser + ?Sized>(
    denoiser: &D,
    x_t: &LatentImage,
    step: usize,
    cond: &Conditioning<'_>,
    schedule: &NoiseSchedule,
) -> Result<LatentImage> {
    let input = DenoiserInput {
        noisy: x_t,
        step,
        alpha_bar: schedule.alpha_bar(step),
        masked_image: cond.masked_image,
        guidance: cond.guidance,
        extra: cond.extra,
    };
    let eps = denoiser.predict_noise(&input)?;
    if !eps.same_shape(x_t) {
        return Err(Error::ShapeMismatch("denoiser output shape differs from its input".into()));
    }
    Ok(eps)
}

/// One deterministic (η = 0) DDIM update from `from_step` to `to_step`.
pub fn ddim_step<D: Denoiser + ?Sized>(
    denoiser: &D,
    x_t: &LatentImage,
    from_step: usize,
    to_step: usize,
    cond: &Conditioning<'_>,
    schedule: &NoiseSchedule,
) -> Result<LatentImage> {
    schedule.check_step(from_step)?;
    if from_step <= to_step {
        return Err(Error::InvalidParameter(format!("DDIM steps run backwards, got {from_step} -> {to_step}")));
    }
    x_t.check_guidance(cond.guidance)?;
    let eps = predict_noise(denoiser, x_t, from_step, cond, schedule)?;
    let x0 = predict_x0(x_t, &eps, schedule.alpha_bar(from_step));
    let a = schedule.alpha_bar(to_step);
    let (signal, sigma) = (a.sqrt(), (1.0 - a).sqrt());
    Ok(x0.map_with(&eps, |x, e| signal * x + sigma * e))
}

fn blend(generated: &LatentImage, known: &LatentImage, mask: &BoxMask) -> LatentImage {
    let mut out = known.clone();
    for (i, v) in out.as_mut_slice().iter_mut().enumerate() {
        if generated.masked_at(mask, i) {
            *v = generated.as_slice()[i];
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn blend_step<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    denoiser: &D,
    x_t: &LatentImage,
    from_step: usize,
    to_step: usize,
    x0_known: &LatentImage,
    mask: &BoxMask,
    cond: &Conditioning<'_>,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<(LatentImage, LatentImage)> {
    if !x_t.same_shape(x0_known) {
        return Err(Error::ShapeMismatch("noisy and known images differ in shape".into()));
    }
    x_t.check_mask(mask)?;
    let generated = ddim_step(denoiser, x_t, from_step, to_step, cond, schedule)?;
    let known = noise_known(x0_known, to_step, schedule, rng)?;
    Ok((blend(&generated, &known, mask), known))
}

/// DDIM inside the mask, freshly noised known image outside it.
#[allow(clippy::too_many_arguments)]
pub fn masked_blend_step<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    denoiser: &D,
    x_t: &LatentImage,
    from_step: usize,
    to_step: usize,
    x0_known: &LatentImage,
    mask: &BoxMask,
    cond: &Conditioning<'_>,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<LatentImage> {
    blend_step(denoiser, x_t, from_step, to_step, x0_known, mask, cond, schedule, rng).map(|(out, _)| out)
}

/// Last, unmasked DDIM step to step 0. The background-only image is not
/// passed to the denoiser here.
pub fn final_step<D: Denoiser + ?Sized>(
    denoiser: &D,
    x_t: &LatentImage,
    from_step: usize,
    cond: &Conditioning<'_>,
    schedule: &NoiseSchedule,
) -> Result<LatentImage> {
    ddim_step(denoiser, x_t, from_step, 0, &cond.without_masked_image(), schedule)
}

/// Snapshot handed to an [`inpaint_observed`] observer after every step.
#[derive(Debug, Clone, Copy)]
pub struct StepRecord<'a> {
    pub from_step: usize,
    pub to_step: usize,
    pub state: &'a LatentImage,
    /// Noised known image pasted outside the mask; `None` on the final step.
    pub known: Option<&'a LatentImage>,
}

/// Masked inpainting over the schedule's sampling subsequence.
pub fn inpaint<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    denoiser: &D,
    image: &LatentImage,
    mask: &BoxMask,
    guidance: &crate::meshproc::GrayscaleMap,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<LatentImage> {
    inpaint_observed(denoiser, image, mask, &Conditioning::new(guidance), schedule, rng, |_| {})
}

/// [`inpaint`] with prompt conditioning and a per-step observer.
///
/// `cond.masked_image` is ignored; the background-only image is derived from
/// `image` and `mask`.
pub fn inpaint_observed<D, R, F>(
    denoiser: &D,
    image: &LatentImage,
    mask: &BoxMask,
    cond: &Conditioning<'_>,
    schedule: &NoiseSchedule,
    rng: &mut R,
    mut observer: F,
) -> Result<LatentImage>
where
    D: Denoiser + ?Sized,
    R: Rng + ?Sized,
    F: FnMut(&StepRecord<'_>),
{
    image.check_mask(mask)?;
    image.check_guidance(cond.guidance)?;
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let background = image.masked_out(mask);
    let cond = Conditioning { masked_image: Some(&background), ..*cond };
    let tau = schedule.tau();
    let top = *tau.last().unwrap();

    // Pure noise inside the mask, the noised known image outside it.
    let a = schedule.alpha_bar(top);
    let (signal, sigma) = (a.sqrt(), (1.0 - a).sqrt());
    let mut state = image.clone();
    for (i, v) in state.as_mut_slice().iter_mut().enumerate() {
        let z: f64 = rng.sample(StandardNormal);
        *v = if image.masked_at(mask, i) { z } else { signal * *v + sigma * z };
    }

    for pair in tau[1..].windows(2).rev() {
        let (to_step, from_step) = (pair[0], pair[1]);
        let (next, known) = blend_step(denoiser, &state, from_step, to_step, image, mask, &cond, schedule, rng)?;
        observer(&StepRecord { from_step, to_step, state: &next, known: Some(&known) });
        state = next;
    }

    let out = final_step(denoiser, &state, tau[1], &cond, schedule)?;
    observer(&StepRecord { from_step: tau[1], to_step: 0, state: &out, known: None });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{make_schedule, GaussianMixture, ScheduleKind};
    use crate::meshproc::{GrayscaleMap, PixelRect};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Mutex;

    struct ZeroNoise;

    impl Denoiser for ZeroNoise {
        fn predict_noise(&self, input: &DenoiserInput<'_>) -> Result<LatentImage> {
            let x = input.noisy;
            Ok(LatentImage::zeros(x.width(), x.height(), x.channels()))
        }
    }

    /// Returns a fixed noise image regardless of input.
    struct Fixed(LatentImage);

    impl Denoiser for Fixed {
        fn predict_noise(&self, _: &DenoiserInput<'_>) -> Result<LatentImage> {
            Ok(self.0.clone())
        }
    }

    /// Guidance, masked-image presence and extra values of one call.
    type Call = (Vec<f64>, bool, Vec<f64>);

    /// Records the guidance and masked-image presence it is called with.
    #[derive(Default)]
    struct Recorder(Mutex<Vec<Call>>);

    impl Denoiser for Recorder {
        fn predict_noise(&self, input: &DenoiserInput<'_>) -> Result<LatentImage> {
            self.0.lock().unwrap().push((
                input.guidance.as_slice().to_vec(),
                input.masked_image.is_some(),
                input.extra.to_vec(),
            ));
            let x = input.noisy;
            Ok(LatentImage::zeros(x.width(), x.height(), x.channels()))
        }
    }

    fn image(w: usize, h: usize, c: usize, seed: u64) -> LatentImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h * c).map(|_| rng.random::<f64>()).collect();
        LatentImage::from_vec(w, h, c, data).unwrap()
    }

    #[test]
    fn zero_variance_step_returns_input() {
        let s = make_schedule(10, ScheduleKind::LinearBeta, 10).unwrap();
        let x0 = image(3, 2, 2, 1);
        let out = noise_known(&x0, 0, &s, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(out, x0);
    }

    #[test]
    fn true_noise_recovers_x0() {
        let s = make_schedule(100, ScheduleKind::LinearBeta, 10).unwrap();
        let x0 = image(4, 4, 1, 2);
        let eps = {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let data = (0..16).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            LatentImage::from_vec(4, 4, 1, data).unwrap()
        };
        for step in [1, 37, 100] {
            let a = s.alpha_bar(step);
            let x_t = x0.map_with(&eps, |x, e| a.sqrt() * x + (1.0 - a).sqrt() * e);
            let rec = predict_x0(&x_t, &eps, a);
            for (r, x) in rec.as_slice().iter().zip(x0.as_slice()) {
                assert!((r - x).abs() < 1e-9);
            }
            // And the step itself moves along the same trajectory.
            let g = GrayscaleMap::zeros(4, 4);
            let next = ddim_step(&Fixed(eps.clone()), &x_t, step, 0, &Conditioning::new(&g), &s).unwrap();
            for (r, x) in next.as_slice().iter().zip(x0.as_slice()) {
                assert!((r - x).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ddim_rejects_forward_steps() {
        let s = make_schedule(10, ScheduleKind::LinearBeta, 10).unwrap();
        let x = image(2, 2, 1, 0);
        let g = GrayscaleMap::zeros(2, 2);
        assert!(ddim_step(&ZeroNoise, &x, 3, 3, &Conditioning::new(&g), &s).is_err());
        assert!(ddim_step(&ZeroNoise, &x, 11, 3, &Conditioning::new(&g), &s).is_err());
    }

    #[test]
    fn final_step_with_zero_noise() {
        let s = make_schedule(1000, ScheduleKind::LinearBeta, 50).unwrap();
        let x = image(3, 3, 3, 4);
        let g = GrayscaleMap::zeros(3, 3);
        let out = final_step(&ZeroNoise, &x, 20, &Conditioning::new(&g), &s).unwrap();
        let scale = s.alpha_bar(20).sqrt();
        for (o, v) in out.as_slice().iter().zip(x.as_slice()) {
            assert_eq!(*o, v / scale);
        }
    }

    #[test]
    fn blend_with_full_and_empty_masks() {
        let s = make_schedule(100, ScheduleKind::LinearBeta, 10).unwrap();
        let x_t = image(4, 3, 2, 7);
        let known = image(4, 3, 2, 8);
        let g = GrayscaleMap::zeros(4, 3);
        let cond = Conditioning::new(&g);
        let den = Fixed(image(4, 3, 2, 3));

        let full = masked_blend_step(
            &den,
            &x_t,
            50,
            40,
            &known,
            &BoxMask::full(4, 3),
            &cond,
            &s,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        assert_eq!(full, ddim_step(&den, &x_t, 50, 40, &cond, &s).unwrap());

        let none = masked_blend_step(
            &den,
            &x_t,
            50,
            40,
            &known,
            &BoxMask::empty(4, 3),
            &cond,
            &s,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        assert_eq!(none, noise_known(&known, 40, &s, &mut ChaCha8Rng::seed_from_u64(1)).unwrap());
    }

    #[test]
    fn blend_preserves_unmasked_bit_exactly() {
        let s = make_schedule(100, ScheduleKind::LinearBeta, 10).unwrap();
        let x_t = image(6, 5, 3, 17);
        let known = image(6, 5, 3, 18);
        let g = GrayscaleMap::zeros(6, 5);
        let mask = BoxMask::from_rect(6, 5, PixelRect { x0: 1, y0: 2, x1: 3, y1: 4 });
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let captured = rng.clone();
        let out = masked_blend_step(
            &Fixed(image(6, 5, 3, 2)),
            &x_t,
            30,
            20,
            &known,
            &mask,
            &Conditioning::new(&g),
            &s,
            &mut rng,
        )
        .unwrap();
        let replay = noise_known(&known, 20, &s, &mut captured.clone()).unwrap();
        for i in 0..out.len() {
            let pixel = i / 3;
            if !mask.get(pixel % 6, pixel / 6) {
                assert_eq!(out.as_slice()[i].to_bits(), replay.as_slice()[i].to_bits());
            }
        }
    }

    #[test]
    fn empty_mask_is_an_error() {
        let s = make_schedule(10, ScheduleKind::LinearBeta, 5).unwrap();
        let x = image(2, 2, 1, 0);
        let g = GrayscaleMap::zeros(2, 2);
        let r = inpaint(&ZeroNoise, &x, &BoxMask::empty(2, 2), &g, &s, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(r, Err(Error::EmptyMask)));
    }

    #[test]
    fn guidance_reaches_denoiser_and_final_step_drops_masked_image() {
        let s = make_schedule(100, ScheduleKind::LinearBeta, 5).unwrap();
        let x = image(3, 3, 1, 0);
        let mask = BoxMask::full(3, 3);
        let g1 = GrayscaleMap::from_vec(3, 3, vec![0.0, 0.5, 1.0, 0.0, 0.0, 0.25, 0.0, 0.0, 0.0]).unwrap();
        let g2 = GrayscaleMap::from_vec(3, 3, vec![0.0, 0.5, 1.0, 0.0, 0.0, 0.26, 0.0, 0.0, 0.0]).unwrap();
        let extra = [0.1, -2.0];
        let run = |g: &GrayscaleMap| {
            let rec = Recorder::default();
            inpaint_observed(
                &rec,
                &x,
                &mask,
                &Conditioning::new(g).with_extra(&extra),
                &s,
                &mut ChaCha8Rng::seed_from_u64(3),
                |_| {},
            )
            .unwrap();
            rec.0.into_inner().unwrap()
        };
        let calls1 = run(&g1);
        let calls2 = run(&g2);
        assert_eq!(calls1.len(), 5);
        for ((ga, _, ea), (gb, _, _)) in calls1.iter().zip(&calls2) {
            assert_eq!(ga.as_slice(), g1.as_slice());
            assert_eq!(gb.as_slice(), g2.as_slice());
            assert_eq!(ea.as_slice(), &extra);
        }
        let flags: Vec<bool> = calls1.iter().map(|c| c.1).collect();
        assert_eq!(flags, vec![true, true, true, true, false]);
    }

    #[test]
    fn inpaint_is_reproducible() {
        let s = make_schedule(200, ScheduleKind::Cosine, 20).unwrap();
        let x = image(5, 4, 2, 11);
        let g = GrayscaleMap::zeros(5, 4);
        let mask = BoxMask::from_rect(5, 4, PixelRect { x0: 0, y0: 1, x1: 2, y1: 3 });
        let mix = GaussianMixture::new(vec![x.as_slice().to_vec()], vec![0.01], vec![1.0]).unwrap();
        let den = crate::diffusion::GmmDenoiser::new(mix);
        let a = inpaint(&den, &x, &mask, &g, &s, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = inpaint(&den, &x, &mask, &g, &s, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert!(a.as_slice().iter().zip(b.as_slice()).all(|(p, q)| p.to_bits() == q.to_bits()));
        assert!(a.as_slice().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn delta_data_chain_lands_on_mean() {
        let s = make_schedule(1000, ScheduleKind::LinearBeta, 50).unwrap();
        let mu = vec![0.3, -0.7, 1.2, 0.05];
        let den =
            crate::diffusion::GmmDenoiser::new(GaussianMixture::new(vec![mu.clone()], vec![0.0], vec![1.0]).unwrap());
        let x = LatentImage::from_vec(2, 2, 1, vec![0.0; 4]).unwrap();
        let g = GrayscaleMap::zeros(2, 2);
        let norm = mu.iter().map(|v| v * v).sum::<f64>().sqrt();
        for seed in 0..5 {
            let out = inpaint(&den, &x, &BoxMask::full(2, 2), &g, &s, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let err = out.as_slice().iter().zip(&mu).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(err <= 1e-3 * norm, "seed {seed}: {err}");
        }
    }
}
