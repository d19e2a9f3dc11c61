use hac_core::ratemodel::{
    adaptive_step, bin_probability, bits_of, entropy_bits, quantize_test, quantize_train, total_loss, ContextModel, ForwardCache,
    RateParams, DEFAULT_Q0,
};
use hac_core::{AttributeLayout, Family};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Standard normal CDF by composite Simpson integration of the density.
fn phi_oracle(z: f64) -> f64 {
    let n = 20_000;
    let (a, b) = (0.0, z);
    let h = (b - a) / n as f64;
    let f = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = f(a) + f(b);
    for i in 1..n {
        let t = a + i as f64 * h;
        s += if i % 2 == 1 { 4.0 * f(t) } else { 2.0 * f(t) };
    }
    0.5 + s * h / 3.0
}

#[test]
fn centered_bin_matches_simpson_oracle() {
    let want = phi_oracle(0.5) - phi_oracle(-0.5);
    assert!((want - 0.382925).abs() < 1e-6);
    assert!((bin_probability(0, 0.0, 1.0, 1.0) - want).abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let (mu, sigma, q) = (rng.random_range(-3.0..3.0), rng.random_range(0.1..3.0), rng.random_range(0.05..2.0));
        let k = rng.random_range(-6..6);
        let c = k as f64 * q;
        let want = phi_oracle((c + q / 2.0 - mu) / sigma) - phi_oracle((c - q / 2.0 - mu) / sigma);
        assert!((bin_probability(k, mu, sigma, q) - want).abs() < 1e-11);
    }
}

#[test]
fn centered_bins_are_symmetric_maxima() {
    let (q, sigma) = (0.3, 0.7);
    let mu = 2.0 * q;
    let peak = bin_probability(2, mu, sigma, q);
    assert!((peak - (2.0 * phi_oracle(q / (2.0 * sigma)) - 1.0)).abs() < 1e-11);
    for d in 1..5 {
        let (up, down) = (bin_probability(2 + d, mu, sigma, q), bin_probability(2 - d, mu, sigma, q));
        assert!((up - down).abs() < 1e-15);
        assert!(up < peak);
    }
    assert!(bin_probability(0, 0.0, 1e-3, 1.0) > 1.0 - 1e-15);
}

#[test]
fn truncated_mass_is_complete() {
    let (mu, sigma, q): (f64, f64, f64) = (0.37, 1.3, 0.25);
    let lo = ((mu - 16.0 * sigma) / q).floor() as i32 - 1;
    let hi = ((mu + 16.0 * sigma) / q).ceil() as i32 + 1;
    let total: f64 = (lo..=hi).map(|k| bin_probability(k, mu, sigma, q)).sum();
    assert!(total >= 1.0 - 1e-6 && total <= 1.0 + 1e-9);
}

#[test]
fn quantizers() {
    assert_eq!(quantize_train(0.3, 0.2, 0.0).unwrap(), 0.3);
    assert!((quantize_train(1.0, 0.2, 0.5).unwrap() - 1.1).abs() < 1e-15);
    assert!(quantize_train(1.0, 0.0, 0.1).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 100_000;
    let q = 0.4;
    let diffs: Vec<f64> = (0..n).map(|_| quantize_train(1.7, q, rng.random::<f64>() - 0.5).unwrap() - 1.7).collect();
    assert!(diffs.iter().all(|d| d.abs() <= q / 2.0 + 1e-15));
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let se = (q * q / 12.0 / n as f64).sqrt();
    assert!(mean.abs() < 3.0 * se, "mean {mean} se {se}");

    let (k, v) = quantize_test(0.37, 0.2).unwrap();
    assert_eq!(k, 2);
    assert!((v - 0.4).abs() < 1e-15);
    assert_eq!(quantize_test(0.5, 1.0).unwrap().0, 1);
    assert_eq!(quantize_test(-0.5, 1.0).unwrap().0, -1);
    assert_eq!(quantize_test(0.0, 0.3).unwrap(), (0, 0.0));
    assert!(quantize_test(f64::NAN, 1.0).is_err());
    for f in [-3.3, 0.01, 0.77, 12.5] {
        let (_, v) = quantize_test(f, 0.13).unwrap();
        assert_eq!(quantize_test(v, 0.13).unwrap().1, v);
        assert!((v - f).abs() <= 0.065 + 1e-12);
    }
}

#[test]
fn step_bounds() {
    for q0 in DEFAULT_Q0 {
        assert_eq!(adaptive_step(q0, 0.0), q0);
        let top = adaptive_step(q0, 1e6);
        assert!(top < 2.0 * q0 && top > 1.99 * q0);
        let bottom = adaptive_step(q0, -1e6);
        assert!(bottom > 0.0);
    }
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// Matrix oracle: parameters parsed into explicit row vectors.
fn mlp_oracle(m: &ContextModel, x: &[f64]) -> Vec<f64> {
    let (i, h) = (m.input, m.hidden);
    let o = ContextModel::output_dim(m.layout);
    let p = &m.params;
    let mut at = 0;
    let mut take = |rows: usize, cols: usize| -> (Vec<Vec<f64>>, Vec<f64>) {
        let w: Vec<Vec<f64>> = (0..rows).map(|r| p[at + r * cols..at + (r + 1) * cols].to_vec()).collect();
        at += rows * cols;
        let b = p[at..at + rows].to_vec();
        at += rows;
        (w, b)
    };
    let layers = [take(h, i), take(h, h), take(o, h)];
    let mut a = x.to_vec();
    for (n, (w, b)) in layers.iter().enumerate() {
        let z: Vec<f64> = w.iter().zip(b).map(|(row, bias)| row.iter().zip(&a).map(|(p, q)| p * q).sum::<f64>() + bias).collect();
        a = if n < 2 { z.into_iter().map(relu).collect() } else { z };
    }
    a
}

#[test]
fn mlp_matches_matrix_oracle() {
    let layout = AttributeLayout::new(50, 10);
    let m = ContextModel::random(96, 96, layout, DEFAULT_Q0, 21, 0.2);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut cache = ForwardCache::default();
    for _ in 0..10 {
        let x: Vec<f64> = (0..96).map(|_| rng.random_range(-1.0..1.0)).collect();
        m.forward(&x, &mut cache);
        let want = mlp_oracle(&m, &x);
        assert_eq!(cache.out.len(), 2 * 86 + 3);
        for (a, b) in cache.out.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-6));
        }
        let rp = m.rate_params(&cache.out);
        for f in Family::ALL {
            let c = f.index();
            let q = DEFAULT_Q0[c] * (1.0 + want[c].clamp(-8.0, 8.0).tanh());
            assert!((rp.q[c] - q).abs() <= 1e-6 * q);
        }
        for j in 0..86 {
            let b = m.sigma_bounds(layout.family_of(j));
            let s = want[3 + 86 + j].clamp(b.min.ln(), b.max.ln()).exp();
            assert!((rp.sigma[j] - s).abs() <= 1e-6 * s);
            assert_eq!(rp.mu[j], cache.out[3 + j]);
        }
    }
    assert!(m.check_input(&[0.0; 95]).is_err());
}

#[test]
fn entropy_bits_matches_brute_force() {
    let layout = AttributeLayout::new(4, 2);
    let nv = layout.values_per_anchor();
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let n = 25;
    let rates: Vec<RateParams> = (0..n)
        .map(|_| RateParams {
            q: [rng.random_range(0.5..2.0), rng.random_range(0.0005..0.002), rng.random_range(0.1..0.4)],
            mu: (0..nv).map(|_| rng.random_range(-1.0..1.0)).collect(),
            sigma: (0..nv).map(|_| rng.random_range(0.05..2.0)).collect(),
        })
        .collect();
    let symbols: Vec<i32> = (0..n * nv).map(|_| rng.random_range(-4..5)).collect();
    let mask: Vec<bool> = (0..n * 2).map(|_| rng.random_bool(0.7)).collect();

    let mut want = [0.0; 3];
    for i in 0..n {
        let row = &mask[i * 2..i * 2 + 2];
        if !row.iter().any(|&b| b) {
            continue;
        }
        for j in 0..nv {
            let fam = if j < 4 {
                0
            } else if j < 10 {
                1
            } else {
                2
            };
            if fam == 2 && !row[(j - 10) / 3] {
                continue;
            }
            let r = &rates[i];
            let p = bin_probability(symbols[i * nv + j], r.mu[j], r.sigma[j], r.q[fam]).max(1.0 / (1u64 << 24) as f64);
            want[fam] += -p.log2();
        }
    }
    let got = entropy_bits(layout, &rates, &symbols, &mask).unwrap();
    for c in 0..3 {
        assert!((got.bits[c] - want[c]).abs() < 1e-9 * want[c].max(1.0));
    }
    assert!((got.total() - want.iter().sum::<f64>()).abs() < 1e-9 * got.total());

    let mut order: Vec<usize> = (0..n).collect();
    order.reverse();
    let rates_r: Vec<RateParams> = order.iter().map(|&i| rates[i].clone()).collect();
    let symbols_r: Vec<i32> = order.iter().flat_map(|&i| symbols[i * nv..(i + 1) * nv].to_vec()).collect();
    let mask_r: Vec<bool> = order.iter().flat_map(|&i| mask[i * 2..i * 2 + 2].to_vec()).collect();
    let again = entropy_bits(layout, &rates_r, &symbols_r, &mask_r).unwrap();
    assert!((again.total() - got.total()).abs() < 1e-9 * got.total());
    assert!(entropy_bits(layout, &rates, &symbols[1..], &mask).is_err());
}

#[test]
fn bit_cost_basics() {
    assert!((bits_of(0.5) - 1.0).abs() < 1e-15);
    assert_eq!(bits_of(0.0), 24.0);
    assert!(bits_of(0.3) > bits_of(0.31));
}

#[test]
fn total_loss_examples() {
    let layout = AttributeLayout::new(50, 10);
    assert_eq!(layout.values_per_anchor() * 2, 172);
    assert_eq!(total_loss(0.7, 300.0, 20.0, 0.4, 0.0, 0.0, 2, layout), 0.7);
    assert!((total_loss(1.0, 172.0, 0.0, 0.0, 0.004, 0.0, 2, layout) - 1.004).abs() < 1e-15);
}
