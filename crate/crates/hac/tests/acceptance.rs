mod common;

use std::time::Instant;

use hac::bitmap::bit_allocation_map;
use hac::container::{self, half_location, CodecContext};
use hac::report::Report;
use hac::Checkpoint;
use hac_core::coder::{build_cdf, CdfTable, Snapper};
use hac_core::hashgrid::hash_bits_with_frequency;
use hac_core::math::normal_mass;
use hac_core::masking::prune_bits;
use hac_core::ratemodel::{entropy_bits, quantize_test, ContextModel, ForwardCache, SigmaBounds, DEFAULT_Q0};
use hac_core::scene::synth_scene;
use hac_core::trainer::{baseline_bits, fit, grad_check, GradComponent, TrainConfig, TrainMode, Trained};
use hac_core::{AnchorScene, AttributeLayout, Family, GridConfig, HashGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ITERS: usize = 1500;

fn benchmark() -> AnchorScene {
    synth_scene(1, 8192, 50, 10, 0.9)
}

fn train(scene: &AnchorScene, lambda_e: f64, lambda_m: f64, mode: TrainMode) -> Trained {
    let cfg = TrainConfig { lambda_e, lambda_m, iterations: ITERS, mode, grid: GridConfig::small(), ..Default::default() };
    fit(scene, &cfg).expect("fit")
}

fn checkpoint(t: &Trained, lambda_e: f64, lambda_m: f64) -> Checkpoint {
    Checkpoint::from_trained(t, lambda_e, lambda_m)
}

fn round_trips() -> (bool, String) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut sizes: Vec<usize> = vec![0, 1, 20_000];
    while sizes.len() < 110 {
        sizes.push(10f64.powf(rng.random_range(0.0..20_000f64.log10())) as usize);
    }
    let mut failures = Vec::new();
    for (s, &n) in sizes.iter().enumerate() {
        let (d, k) = (rng.random_range(1..=24), rng.random_range(1..=8));
        let scene = synth_scene(s as u64, n, d, k, rng.random_range(0.0..=1.0));
        let ck = common::random_checkpoint(&scene, common::tiny_grid(), 12, s as u64 + 7, rng.random_range(0.2..=1.0));
        if let Err(e) = container::verify(&scene, &ck) {
            failures.push(format!("N={n} D={d} K={k}: {e}"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = failures.is_empty() && secs < 300.0;
    (ok, format!("{} scenes (N up to 20000, empty and single anchor included), {} failures, {secs:.1} s {:?}", sizes.len(), failures.len(), failures.first()))
}

/// Ideal cost of a symbol under a table: the bin, or the edge bin plus its
/// Exp-Golomb escape.
fn ideal_bits(t: &CdfTable, k: i32) -> f64 {
    let edge = k.clamp(t.k_min, t.k_max());
    let excess = k.abs_diff(edge) as u64;
    let escape = if k == edge {
        0.0
    } else {
        let len = 64 - (excess + 1).leading_zeros();
        (2 * len - 1) as f64
    };
    -(t.frequency(edge) as f64 / 65536.0).log2() + escape
}

fn coder_efficiency(scene: &AnchorScene, ck: &Checkpoint) -> (bool, String) {
    let enc = container::encode(scene, ck).expect("encode");
    let layout = scene.layout();
    let (nv, k) = (layout.values_per_anchor(), layout.k_offsets);
    let mut ctx = CodecContext::from_checkpoint(ck).unwrap();
    let hard = ck.masks.hard();
    let kept = prune_bits(scene.n, k, &hard).unwrap();
    let mut ideal = [0.0; 3];
    let mut cursor = [0usize; 3];
    for &i in &kept.kept_anchors {
        let (_, loc) = half_location(scene.location(i)).unwrap();
        let rp = ctx.rate(loc);
        let mrow = &hard[i * k..(i + 1) * k];
        for j in 0..nv {
            if layout.offset_slot(j).is_some_and(|s| !mrow[s]) {
                continue;
            }
            let fam = layout.family_of(j);
            let c = fam.index();
            let t = build_cdf(rp.mu[j], rp.sigma[j], rp.q[c], ctx.sigma_bounds(fam)).unwrap();
            ideal[c] += ideal_bits(&t, enc.trace.symbols[c][cursor[c]]);
            cursor[c] += 1;
        }
    }
    let mut ok = true;
    let mut parts = Vec::new();
    for f in Family::ALL {
        let c = f.index();
        let measured = 8.0 * enc.streams[c] as f64;
        let bound = 1.02 * ideal[c] + 256.0;
        let n = enc.trace.symbols[c].len();
        ok &= cursor[c] == n && n >= 10_000 && measured <= bound;
        parts.push(format!("{} {n} values {measured:.0}/{:.0} bits ({:.4}x)", f.name(), ideal[c], measured / ideal[c]));
    }
    (ok, parts.join(", "))
}

fn probability_tables() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(1003);
    let (mut worst, mut checked, mut ok) = (0.0f64, 0usize, true);
    for _ in 0..1000 {
        let q0 = DEFAULT_Q0[rng.random_range(0..3)];
        let bounds = SigmaBounds::for_step(q0);
        let q = q0 * rng.random_range(0.01..1.99);
        let sigma = q0 * 10f64.powf(rng.random_range(-2.5..2.5));
        let mu = q0 * rng.random_range(-100.0..100.0);
        let t = build_cdf(mu, sigma, q, bounds).unwrap();
        let freqs: Vec<u32> = (t.k_min..=t.k_max()).map(|k| t.frequency(k)).collect();
        ok &= freqs.iter().map(|&f| f as u64).sum::<u64>() == 65536 && freqs.iter().all(|&f| f >= 1);
        let (m, s) = Snapper::new(bounds).snap(mu, sigma, q);
        for (k, &f) in (t.k_min..).zip(&freqs) {
            let c = k as f64 * q;
            let p = normal_mass((c - q / 2.0 - m) / s, (c + q / 2.0 - m) / s);
            if p >= 1.0 / 1024.0 {
                worst = worst.max((f as f64 / 65536.0 - p).abs());
                checked += 1;
            }
        }
    }
    ok &= worst <= 1.0 / 4096.0;
    (ok, format!("1000 tables, totals 65536, bins >= 1, {checked} bins checked, max error {worst:.2e} (limit {:.2e})", 1.0 / 4096.0))
}

fn step_bounds() -> (bool, String) {
    let layout = AttributeLayout::new(2, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(1004);
    let mut cache = ForwardCache::default();
    let (mut evals, mut ok) = (0usize, true);
    let mut ratio = [(f64::MAX, 0.0f64); 3];
    for m in 0..1000u64 {
        let model = ContextModel::random(6, 8, layout, DEFAULT_Q0, m, rng.random_range(0.1..20.0));
        for _ in 0..1000 {
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            model.forward(&x, &mut cache);
            let rp = model.rate_params(&cache.out);
            for c in 0..3 {
                let r = rp.q[c] / DEFAULT_Q0[c];
                ok &= rp.q[c] > 0.0 && rp.q[c] < 2.0 * DEFAULT_Q0[c];
                ratio[c] = (ratio[c].0.min(r), ratio[c].1.max(r));
            }
            evals += 1;
        }
    }
    let zero = ContextModel::new(6, 8, layout, DEFAULT_Q0, 3);
    zero.forward(&[0.3; 6], &mut cache);
    let rp = zero.rate_params(&cache.out);
    let exact = (0..3).all(|c| cache.out[c] == 0.0 && rp.q[c] == DEFAULT_Q0[c]);
    ok &= exact && evals >= 1_000_000;
    (ok, format!("{evals} evaluations, q/Q0 ranges {ratio:.6?}, r=0 gives Q0 exactly: {exact}"))
}

fn gradients() -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for c in GradComponent::ALL {
        let worst = (1..=5u64).map(|seed| grad_check(c, seed, 1e-5).expect("grad_check").max_rel_error).fold(0.0, f64::max);
        ok &= worst < 1e-4;
        parts.push(format!("{} {worst:.2e}", c.name()));
    }
    (ok, format!("max relative error over 5 seeds: {}", parts.join(", ")))
}

fn hash_entropy() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let config = GridConfig::small();
    let m = config.param_count();
    let theta: Vec<f64> = (0..m).map(|i| if i % 2 == 0 { 0.5 } else { -0.5 }).collect();
    let half = HashGrid::from_params(config, theta).unwrap();
    let balanced = (half.entropy_loss() - m as f64).abs() <= 1e-9 * m as f64;
    let mut dominated = true;
    for _ in 0..100 {
        let config = GridConfig {
            res_3d: vec![rng.random_range(2..6), rng.random_range(6..20)],
            res_2d: vec![rng.random_range(4..40)],
            table_3d_max: 1 << rng.random_range(6..10),
            table_2d_max: 1 << rng.random_range(5..9),
            dim_embed: rng.random_range(1..4),
        };
        let bias = rng.random_range(-0.95..0.95);
        let theta = (0..config.param_count()).map(|_| rng.random_range(-1.0..1.0) + bias).collect();
        let g = HashGrid::from_params(config, theta).unwrap();
        let (plus, minus) = g.sign_counts();
        let loss = g.entropy_loss();
        for _ in 0..100 {
            let h = rng.random_range(1e-6..1.0 - 1e-6);
            dominated &= hash_bits_with_frequency(plus as f64, minus as f64, h) >= loss - 1e-9 * loss.max(1.0);
        }
    }
    (balanced && dominated, format!("M={m}: {:.3} bits at h=0.5, dominance on 100 grids: {dominated}", half.entropy_loss()))
}

/// Entropy of the kept values from independently assembled rate parameters.
fn scene_entropy(scene: &AnchorScene, ck: &Checkpoint) -> f64 {
    let layout = scene.layout();
    let nv = layout.values_per_anchor();
    let mut ctx = CodecContext::from_checkpoint(ck).unwrap();
    let hard = ck.masks.hard();
    let (mut rates, mut symbols, mut row) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..scene.n {
        let (_, loc) = half_location(scene.location(i)).unwrap();
        let rp = ctx.rate(loc);
        scene.attribute_row(i, &mut row);
        for j in 0..nv {
            symbols.push(quantize_test(row[j], rp.q[layout.family_of(j).index()]).unwrap().0);
        }
        rates.push(rp);
    }
    entropy_bits(layout, &rates, &symbols, &hard).unwrap().total()
}

fn bitmap_conservation(scene: &AnchorScene, ck: &Checkpoint) -> (bool, String) {
    let want = scene_entropy(scene, ck);
    let mut ok = true;
    let mut parts = Vec::new();
    for g in [1, 8, 32] {
        let map = bit_allocation_map(scene, ck, g).unwrap();
        let sum: f64 = map.records.iter().map(|r| r.total_bits).sum();
        let rel = (sum - want).abs() / want;
        ok &= rel <= 1e-6 && map.records.iter().map(|r| r.anchor_count).sum::<usize>() == scene.n;
        parts.push(format!("G={g} {} voxels rel {rel:.1e}", map.records.len()));
    }
    (ok, format!("scene entropy {want:.1} bits; {}", parts.join(", ")))
}

fn masking(scene: &AnchorScene, base: &Trained, strong: &Trained, lambda_m: f64) -> (bool, String) {
    let (lo, hi) = (base.last.masked_fraction, strong.last.masked_fraction);
    let mut ok = hi >= lo;

    let mut ck = checkpoint(strong, 2e-3, 10.0 * lambda_m);
    let k = scene.k_offsets;
    for i in (0..scene.n).step_by(7) {
        ck.masks.logits[i * k..(i + 1) * k].iter_mut().for_each(|l| *l = -20.0);
    }
    let hard = ck.masks.hard();
    let kept = prune_bits(scene.n, k, &hard).unwrap();
    let pruned: Vec<usize> = (0..scene.n).filter(|&i| !hard[i * k..(i + 1) * k].iter().any(|&b| b)).collect();
    let map = bit_allocation_map(scene, &ck, 8).unwrap();
    let zero_bits = pruned.iter().all(|&i| map.anchor_bits[i] == 0.0);

    let (enc, dec) = container::verify(scene, &ck).unwrap();
    let layout = scene.layout();
    let kept_offsets = kept.kept_offset_count();
    let absent = dec.scene.n == kept.kept_anchors.len()
        && enc.trace.symbols[0].len() == kept.kept_anchors.len() * layout.dim_feat
        && enc.trace.symbols[2].len() == kept_offsets * 3
        && enc.trace.locations.len() == kept.kept_anchors.len() * 3;
    let report = Report::from_encoded(&enc);
    let offset_row = report.families.iter().find(|r| r.family == Family::Offset.name()).unwrap();
    let denominators = offset_row.values == kept_offsets as u64 * 3 && report.kept_offsets == kept_offsets as u64;
    ok &= zero_bits && absent && denominators && !pruned.is_empty();
    (
        ok,
        format!(
            "masked fraction {lo:.4} -> {hi:.4} with 10x lambda_m; {} pruned anchors: zero bitmap bits {zero_bits}, absent from S5 {absent}; offset denominator {} = 3 x {kept_offsets} surviving",
            pruned.len(),
            offset_row.values
        ),
    )
}

fn main() {
    let start = Instant::now();
    let mut results: Vec<(usize, bool, String)> = Vec::new();
    let mut record = |n: usize, (ok, detail): (bool, String)| {
        println!("criterion {n}: {} {detail}", if ok { "PASS" } else { "FAIL" });
        results.push((n, ok, detail));
    };

    record(1, round_trips());
    record(3, probability_tables());
    record(4, step_bounds());
    record(5, gradients());
    record(10, hash_entropy());

    let scene = benchmark();
    let base = baseline_bits(&scene, DEFAULT_Q0).unwrap().pooled();
    let mut by_lambda = Vec::new();
    for le in [5e-4, 1e-3, 2e-3, 4e-3] {
        let t = train(&scene, le, 5e-4, TrainMode::RateOnly);
        by_lambda.push((le, t));
    }
    let main_run = &by_lambda[2].1;
    let pooled = main_run.last.pooled_bits_per_param();
    let margin = 1.0 - pooled / base;
    record(
        6,
        (
            pooled < base && margin >= 0.05 && main_run.last.total < main_run.initial.total,
            format!(
                "pooled {pooled:.4} vs baseline {base:.4} bits/param, margin {:.1}%; total loss {:.4e} -> {:.4e}",
                100.0 * margin,
                main_run.initial.total,
                main_run.last.total
            ),
        ),
    );
    let rates: Vec<f64> = by_lambda.iter().map(|(_, t)| t.last.pooled_bits_per_param()).collect();
    record(7, (rates.windows(2).all(|w| w[1] <= w[0]), format!("lambda_e {:?} -> bits/param {rates:.4?}", by_lambda.iter().map(|p| p.0).collect::<Vec<_>>())));

    let ck = checkpoint(main_run, 2e-3, 5e-4);
    record(2, coder_efficiency(&scene, &ck));
    let enc = container::encode(&scene, &ck).unwrap();
    let share = enc.sections[4].len as f64 / enc.bytes.len() as f64;
    let largest = enc.sections.iter().all(|s| s.len <= enc.sections[4].len);
    println!("S5 share of the benchmark container: {:.1}% of {} bytes, largest section: {largest}", 100.0 * share, enc.bytes.len());

    let lambda_m = 5e-4;
    let joint = train(&scene, 2e-3, lambda_m, TrainMode::Joint);
    let joint_strong = train(&scene, 2e-3, 10.0 * lambda_m, TrainMode::Joint);
    record(8, masking(&scene, &joint, &joint_strong, lambda_m));
    record(9, bitmap_conservation(&scene, &checkpoint(&joint_strong, 2e-3, 10.0 * lambda_m)));

    let failed: Vec<usize> = results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    println!("acceptance: {} of {} criteria passed in {:.0} s", results.len() - failed.len(), results.len(), start.elapsed().as_secs_f64());
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
