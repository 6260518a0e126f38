//! Independent reference implementations checked against the library.

use itoedit::mask::{gaussian_kernel, gaussian_smooth, kernel_radius};
use itoedit::sampler::{decode_conditioned, encode_conditioned, no_hook};
use itoedit::{Condition, LatentImage, NoiseSchedule, Position, SceneConfig, SceneMixture};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Noise prediction computed component by component: each responsibility
/// is `1 / sum_k exp(l_k - l_j)` and each component keeps its own
/// posterior mean, with no shared max shift and no factored mean.
fn brute_force_eps(
    mix: &SceneMixture,
    x_t: &LatentImage,
    t: usize,
    cond: &Condition,
    sched: &NoiseSchedule,
) -> Vec<f64> {
    let a = sched.alpha_bar(t);
    let s2 = mix.sigma() * mix.sigma();
    let var = a * s2 + 1.0 - a;
    let comps: Vec<_> = mix
        .components()
        .iter()
        .filter(|c| cond.admits(c.class_id, c.position))
        .collect();
    let logs: Vec<f64> = comps
        .iter()
        .map(|c| {
            let d2: f64 = x_t
                .as_slice()
                .iter()
                .zip(c.mean.as_slice())
                .map(|(x, m)| (x - a.sqrt() * m).powi(2))
                .sum();
            c.weight.ln() - 0.5 * d2 / var
        })
        .collect();
    let mut x0 = vec![0.0; x_t.len()];
    for (j, c) in comps.iter().enumerate() {
        let r = 1.0 / logs.iter().map(|l| (l - logs[j]).exp()).sum::<f64>();
        for (i, acc) in x0.iter_mut().enumerate() {
            let m = c.mean.as_slice()[i];
            let post = m + a.sqrt() * s2 / var * (x_t.as_slice()[i] - a.sqrt() * m);
            *acc += r * post;
        }
    }
    x_t.as_slice()
        .iter()
        .zip(&x0)
        .map(|(x, m)| (x - a.sqrt() * m) / (1.0 - a).sqrt())
        .collect()
}

#[test]
fn denoiser_matches_component_enumeration() {
    let config = SceneConfig::default();
    let mix = SceneMixture::build(&config).unwrap();
    let sched = NoiseSchedule::cosine(25).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let positions = config.positions();
    for trial in 0..50 {
        let t = rng.random_range(1..=25);
        let cond = match trial % 4 {
            0 => Condition::null(),
            1 => Condition::class(rng.random_range(0..4)),
            2 => Condition::layout(positions[rng.random_range(0..positions.len())]),
            _ => Condition::both(2, positions[rng.random_range(0..positions.len())]),
        };
        let j = rng.random_range(0..mix.components().len());
        let noise = LatentImage::standard_normal(16, 16, 3, trial);
        let x_t = sched
            .stochastic_encode(&mix.components()[j].mean, t, &noise)
            .unwrap();
        let got = mix.predict_eps(&x_t, t, &cond, &sched).unwrap();
        let want = brute_force_eps(&mix, &x_t, t, &cond, &sched);
        let err: f64 = got
            .as_slice()
            .iter()
            .zip(&want)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = want.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(
            err <= 1e-10 * scale,
            "trial {trial}: t={t} {cond} rel {}",
            err / scale
        );
    }
}

#[test]
fn class_two_condition_matches_enumeration() {
    let mix = SceneMixture::build(&SceneConfig::default()).unwrap();
    let sched = NoiseSchedule::cosine(25).unwrap();
    let x_t = LatentImage::standard_normal(16, 16, 3, 77);
    let cond = Condition::class(2);
    for t in [1, 5, 13, 25] {
        let got = mix.predict_eps(&x_t, t, &cond, &sched).unwrap();
        let want = brute_force_eps(&mix, &x_t, t, &cond, &sched);
        for (a, b) in got.as_slice().iter().zip(&want) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
        }
    }
}

#[test]
fn impulse_blur_matches_dense_convolution() {
    let (h, w) = (15, 15);
    let mut map = vec![0.0; h * w];
    map[7 * w + 7] = 1.0;
    let got = gaussian_smooth(&map, h, w, 1.0);
    let r = kernel_radius(1.0) as i64;
    let norm: f64 = (-r..=r).map(|d| (-(d * d) as f64 / 2.0).exp()).sum();
    for i in 0..h as i64 {
        for j in 0..w as i64 {
            let (di, dj) = (i - 7, j - 7);
            let want = if di.abs() <= r && dj.abs() <= r {
                (-((di * di + dj * dj) as f64) / 2.0).exp() / (norm * norm)
            } else {
                0.0
            };
            assert!((got[(i as usize) * w + j as usize] - want).abs() < 1e-10);
        }
    }
    assert_eq!(gaussian_kernel(1.0).len(), 9);
}

#[test]
fn impulse_near_border_reflects() {
    let (h, w) = (6, 6);
    let mut map = vec![0.0; h * w];
    map[0] = 1.0;
    let got = gaussian_smooth(&map, h, w, 1.0);
    let k = gaussian_kernel(1.0);
    let r = kernel_radius(1.0) as i64;
    // Dense sum over the reflected copies of the impulse.
    let tap = |d: i64| {
        if d.abs() <= r {
            k[(d + r) as usize]
        } else {
            0.0
        }
    };
    for i in 0..h as i64 {
        for j in 0..w as i64 {
            let mut want = 0.0;
            for src_r in -2 * h as i64..3 * h as i64 {
                for src_c in -2 * w as i64..3 * w as i64 {
                    let fold = |v: i64, n: i64| {
                        let m = v.rem_euclid(2 * n);
                        if m < n {
                            m
                        } else {
                            2 * n - 1 - m
                        }
                    };
                    if fold(src_r, h as i64) == 0 && fold(src_c, w as i64) == 0 {
                        want += tap(i - src_r) * tap(j - src_c);
                    }
                }
            }
            assert!((got[(i as usize) * w + j as usize] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn replayed_noise_round_trip_is_exact() {
    let mix = SceneMixture::build(&SceneConfig::default()).unwrap();
    let sched = NoiseSchedule::cosine(25).unwrap();
    let cond = Condition::null();
    let x0 = LatentImage::standard_normal(16, 16, 3, 9).map(|v| 0.3 * v);
    let mut latents = vec![x0.clone()];
    let mut eps_used = Vec::new();
    for t in 0..25 {
        let eps = mix
            .predict_eps(&latents[t], t.max(1), &cond, &sched)
            .unwrap();
        latents.push(sched.ddim_invert_step(&latents[t], &eps, t).unwrap());
        eps_used.push(eps);
    }
    let mut y = latents[25].clone();
    for t in (1..=25).rev() {
        y = sched.ddim_step(&y, &eps_used[t - 1], t).unwrap();
    }
    let worst = y
        .as_slice()
        .iter()
        .zip(x0.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    // 25 chained steps; the last one scales by about 1/sqrt(alpha_bar[T]).
    assert!(worst <= 1e-10, "{worst:e}");
}

#[test]
fn point_mass_round_trip_is_exact_to_tolerance() {
    let config = SceneConfig {
        palette: vec![vec![0.3, -0.2, 0.7]],
        grid_rows: vec![4],
        grid_cols: vec![10],
        sigma: 0.0,
        ..SceneConfig::default()
    };
    let mix = SceneMixture::build(&config).unwrap();
    let sched = NoiseSchedule::cosine(25).unwrap();
    let x0 = mix.components()[0].mean.clone();
    let cond = Condition::both(0, Position::new(4, 10));
    for t_e in [1, 7, 25] {
        let enc = encode_conditioned(&x0, t_e, cond, &mix, &sched).unwrap();
        let dec = decode_conditioned(enc.last(), t_e, cond, &mix, &sched, &mut no_hook()).unwrap();
        assert!(itoedit::l1(&x0, dec.first(), None).unwrap() <= 1e-6);
    }
}
