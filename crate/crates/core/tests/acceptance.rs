//! End-to-end acceptance checks. Each check prints one `PASS`/`FAIL` line with
//! the measured value next to its threshold.
//!
//! Run with `cargo test -p lfid-core --test acceptance`.

use std::collections::HashMap;
use std::f64::consts::{PI, TAU};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lfid_core::compressor::{cosine_error, train_compressor, TrainConfig};
use lfid_core::config::Config;
use lfid_core::descriptor::cosine;
use lfid_core::extract::Models;
use lfid_core::gallery::GalleryIndex;
use lfid_core::matcher::{compare_minutiae_templates, compare_texture_prepared, fuse_scores, FusionWeights, MatcherParams, TextureProbe};
use lfid_core::minutiae_map::{
    decode_minutiae_map, encode_minutiae_map, interpolate_orientation, EncoderParams, MinutiaeMap, CHANNELS, CHANNEL_STEP, DEFAULT_THRESHOLD,
};
use lfid_core::model::{angle_diff, Minutia, COMPRESSED_LEN, RAW_LEN};
use lfid_core::pq::{train_pq, AdcTable};
use lfid_core::ridge::{best_match, RidgeDictionary, PATCH};
use lfid_core::search::{evaluate_cmc, search_with_workers, ScoreMatrix};
use lfid_core::synthetic::{synthetic_cases, CaseParams, DescriptorFactory, SyntheticCase};

struct Outcome {
    pass: bool,
    detail: String,
}

/// Writes to the process stdout directly so the line shows without `--nocapture`.
fn report(name: &str, o: &Outcome) {
    use std::io::Write as _;
    let line = format!("{} {name}: {}\n", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
}

fn separated(rng: &mut ChaCha8Rng, n: usize, size: f64, sep: f64) -> Vec<Minutia> {
    let mut out: Vec<Minutia> = Vec::new();
    while out.len() < n {
        let m = Minutia::real(rng.random_range(2.0..size - 2.0), rng.random_range(2.0..size - 2.0), rng.random_range(0.0..TAU));
        if out.iter().all(|o| o.distance(&m) >= sep) {
            out.push(m);
        }
    }
    out
}

/// Every truth point claims a distinct decoded point within tolerance, and
/// nothing else was decoded.
fn one_to_one(truth: &[Minutia], got: &[Minutia]) -> bool {
    if got.len() != truth.len() {
        return false;
    }
    let mut taken = vec![false; got.len()];
    truth.iter().all(|t| {
        match got.iter().enumerate().position(|(i, g)| !taken[i] && g.distance(t) <= 2.0 && angle_diff(g.theta, t.theta) <= PI / 36.0) {
            Some(i) => {
                taken[i] = true;
                true
            }
            None => false,
        }
    })
}

fn map_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let start = Instant::now();
    let (mut sets_ok, mut points, mut recovered, mut spurious) = (0, 0, 0usize, 0usize);
    for _ in 0..500 {
        let n = rng.random_range(1..=60);
        let truth = separated(&mut rng, n, 512.0, 16.0);
        let map = encode_minutiae_map(&truth, 512, 512, EncoderParams::default()).unwrap();
        let got = decode_minutiae_map(&map, DEFAULT_THRESHOLD);
        points += n;
        recovered += truth
            .iter()
            .filter(|t| got.iter().any(|g| g.distance(t) <= 2.0 && angle_diff(g.theta, t.theta) <= PI / 36.0))
            .count();
        spurious += got.len().saturating_sub(n);
        sets_ok += one_to_one(&truth, &got) as usize;
    }
    let elapsed = start.elapsed();
    Outcome {
        pass: sets_ok == 500 && spurious == 0 && elapsed < Duration::from_secs(60),
        detail: format!("{sets_ok}/500 sets exact, {recovered}/{points} points, {spurious} spurious, {elapsed:.1?} (limit 60s)"),
    }
}

/// Vertex of the parabola through three channel responses, found by dense
/// sampling then golden-section refinement.
fn dense_vertex(f0: f64, f1: f64, f2: f64) -> f64 {
    let p = |t: f64| f0 * t * (t - 1.0) / 2.0 - f1 * (t - 1.0) * (t + 1.0) + f2 * t * (t + 1.0) / 2.0;
    let mut best = -1.0;
    for s in 0..=20_000 {
        let t = -1.0 + s as f64 * 1e-4;
        if p(t) > p(best) {
            best = t;
        }
    }
    let (mut a, mut b) = ((best - 1e-4).max(-1.0), (best + 1e-4).min(1.0));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let (x1, x2) = (b - g * (b - a), a + g * (b - a));
        if p(x1) < p(x2) {
            a = x1;
        } else {
            b = x2;
        }
    }
    (a + b) / 2.0
}

fn peak(map: &MinutiaeMap) -> (usize, usize, usize) {
    let mut best = (0, 0, 0);
    for i in 0..map.height() {
        for j in 0..map.width() {
            for k in 0..CHANNELS {
                if map.get(i, j, k) > map.get(best.0, best.1, best.2) {
                    best = (i, j, k);
                }
            }
        }
    }
    best
}

fn interpolation() -> Outcome {
    let (mut decoded_err, mut oracle_err) = (0f64, 0f64);
    let mut counts_ok = true;
    for a in 0..48 {
        // halfway between the 48-step grid so no angle sits on a channel centre
        let theta = (a as f64 + 0.5) * TAU / 48.0;
        let m = Minutia::real(32.0, 32.0, theta);
        let map = encode_minutiae_map(&[m], 64, 64, EncoderParams::default()).unwrap();
        let got = decode_minutiae_map(&map, DEFAULT_THRESHOLD);
        counts_ok &= got.len() == 1;
        if let Some(g) = got.first() {
            decoded_err = decoded_err.max(angle_diff(g.theta, theta));
        }
        let (i, j, c) = peak(&map);
        let f = |k: usize| map.get(i, j, k % CHANNELS) as f64;
        let vertex = dense_vertex(f(c + CHANNELS - 1), f(c), f(c + 1));
        let oracle = (c as f64 + vertex) * CHANNEL_STEP;
        oracle_err = oracle_err.max(angle_diff(interpolate_orientation(&map, i, j, c), oracle.rem_euclid(TAU)));
    }
    Outcome {
        pass: counts_ok && decoded_err <= PI / 72.0 && oracle_err <= 1e-6,
        detail: format!("max decode error {decoded_err:.5} rad (limit {:.5}), max oracle gap {oracle_err:.2e} (limit 1e-6)", PI / 72.0),
    }
}

fn dictionary() -> Outcome {
    let dict = RidgeDictionary::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut correct, mut worst) = (0, 0f64);
    for (label, e) in dict.elements().iter().enumerate() {
        // gray-level ridges written from scratch: flow direction (cos, sin),
        // the wave runs along the normal (-sin, cos)
        let phase = rng.random_range(0.0..TAU);
        let (s, c) = e.orientation.sin_cos();
        let mid = (PATCH as f64 - 1.0) / 2.0;
        let patch: Vec<f32> = (0..PATCH * PATCH)
            .map(|p| {
                let (x, y) = ((p % PATCH) as f64 - mid, (p / PATCH) as f64 - mid);
                let d = -x * s + y * c;
                (128.0 + 90.0 * (TAU * d / e.spacing + phase).cos() + rng.random_range(-8.0..8.0)) as f32
            })
            .collect();
        let (best, _) = best_match(&patch, &dict, 300.0).unwrap();
        correct += (best == label) as usize;
        let got = dict.elements()[best].orientation;
        worst = worst.max(angle_diff(2.0 * got, 2.0 * e.orientation) / 2.0);
    }
    Outcome {
        pass: correct >= 88 && worst <= PI / 10.0,
        detail: format!("{correct}/90 labels exact (need 88), worst orientation error {worst:.4} rad (limit {:.4})", PI / 10.0),
    }
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn pq_fidelity() -> Outcome {
    let factory = DescriptorFactory::new(COMPRESSED_LEN, 24, false, 31);
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let corpus: Vec<Vec<f32>> = (0..4000).map(|_| factory.sample(&mut rng)).collect();
    let pairs: Vec<(Vec<f32>, Vec<f32>)> = (0..10_000)
        .map(|k| {
            let x = factory.sample(&mut rng);
            let y = if k % 2 == 0 { factory.perturb(&x, rng.random_range(0.0..0.2), &mut rng) } else { factory.sample(&mut rng) };
            (x, y)
        })
        .collect();
    let exact: Vec<f64> = pairs.iter().map(|(x, y)| x.iter().zip(y).map(|(a, b)| f64::from(a - b).powi(2)).sum::<f64>().sqrt()).collect();
    let rho: Vec<(usize, f64)> = [12, 16, 24]
        .into_iter()
        .map(|m| {
            let (book, _) = train_pq(&corpus, m, 5).unwrap();
            let adc: Vec<f64> = pairs
                .iter()
                .map(|(x, y)| f64::from(AdcTable::new(&book, x).unwrap().distance(&book.quantize_values(y).unwrap())))
                .collect();
            (m, spearman(&adc, &exact))
        })
        .collect();
    let (r12, r16, r24) = (rho[0].1, rho[1].1, rho[2].1);
    Outcome {
        pass: r16 >= 0.9 && r24 >= r16 && r16 >= r12,
        detail: format!("spearman m=12 {r12:.4}, m=16 {r16:.4} (need 0.9), m=24 {r24:.4}, ordered {}", r24 >= r16 && r16 >= r12),
    }
}

fn compression_fidelity() -> Outcome {
    let factory = DescriptorFactory::new(RAW_LEN, 24, true, 41);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let train: Vec<Vec<f32>> = (0..10_000).map(|_| factory.sample(&mut rng)).collect();
    let (model, _) = train_compressor(&train, &TrainConfig::default()).unwrap();
    // held-out pool: each query has one noisy twin, the rest are unrelated
    let held: Vec<Vec<f32>> = (0..2000)
        .flat_map(|_| {
            let x = factory.sample(&mut rng);
            let y = factory.perturb(&x, 0.05, &mut rng);
            [x, y]
        })
        .collect();
    let pairs: Vec<(usize, usize)> = (0..2000)
        .map(|k| if k % 2 == 0 { (2 * k, 2 * k + 1) } else { (2 * k, rng.random_range(0..held.len())) })
        .filter(|(a, b)| a != b)
        .collect();
    let err = cosine_error(&model, &held, &pairs).unwrap();
    let comp: Vec<Vec<f32>> = held.iter().map(|d| model.compress_values(d).unwrap()).collect();
    let (queries, pool) = (200, 200usize);
    let mut kept = 0;
    for q in 0..queries {
        let a = 2 * q * 5;
        let candidates: Vec<usize> = (0..pool).map(|k| (a + 1 + k) % held.len()).collect();
        let best_in = *candidates.iter().max_by(|&&i, &&j| cosine(&held[a], &held[i]).total_cmp(&cosine(&held[a], &held[j]))).unwrap();
        let mut by_out = candidates.clone();
        by_out.sort_by(|&i, &j| cosine(&comp[a], &comp[j]).total_cmp(&cosine(&comp[a], &comp[i])));
        kept += by_out[..5].contains(&best_in) as usize;
    }
    let rate = kept as f64 / queries as f64;
    Outcome {
        pass: err <= 0.05 && rate >= 0.9,
        detail: format!("mean cosine change {err:.4} (limit 0.05), top-1 kept in top-5 {rate:.3} (need 0.9)"),
    }
}

struct Bench {
    models: Arc<Models>,
    factory: DescriptorFactory,
}

fn bench() -> Bench {
    let factory = DescriptorFactory::new(COMPRESSED_LEN, 24, false, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let corpus: Vec<Vec<f32>> = (0..3000).map(|_| factory.sample(&mut rng)).collect();
    let (codebook, _) = train_pq(&corpus, 16, 3).unwrap();
    let mut models = Models::untrained(4).unwrap();
    models.codebook = codebook;
    Bench { models: Arc::new(models), factory }
}

fn gallery(b: &Bench, cases: &[SyntheticCase]) -> GalleryIndex {
    let mut g = GalleryIndex::new(b.models.clone());
    for c in cases {
        g.insert(c.id.clone(), c.reference.clone(), None).unwrap();
    }
    g
}

fn identification(b: &Bench, config: &Config) -> (Outcome, GalleryIndex, Vec<SyntheticCase>) {
    let start = Instant::now();
    let cases = synthetic_cases(1000, &CaseParams::default(), &b.factory, &b.models.codebook, 9);
    let g = gallery(b, &cases);
    let probes: Vec<&SyntheticCase> = cases.iter().step_by(10).collect();
    let mut matrix = ScoreMatrix { probe_ids: Vec::new(), gallery_ids: g.entries().iter().map(|e| e.id.clone()).collect(), scores: Vec::new() };
    for c in &probes {
        let list = search_with_workers(&c.probe, &g, g.len(), config, 1).unwrap();
        let by_id: HashMap<&str, f64> = list.entries().iter().map(|e| (e.reference_id.as_str(), e.fused_score)).collect();
        matrix.probe_ids.push(c.id.clone());
        matrix.scores.push(matrix.gallery_ids.iter().map(|id| by_id[id.as_str()]).collect());
    }
    let truth = matrix.probe_ids.iter().map(|p| (p.clone(), p.clone())).collect();
    let cmc = evaluate_cmc(&matrix, &truth, 5).unwrap();
    let elapsed = start.elapsed();
    let o = Outcome {
        pass: cmc.rate(1) >= 0.95 && cmc.rate(5) == 1.0 && elapsed < Duration::from_secs(600),
        detail: format!(
            "{} probes vs 1000 references: rank-1 {:.3} (need 0.95), rank-5 {:.3} (need 1.0), {elapsed:.1?} single worker (limit 600s)",
            probes.len(),
            cmc.rate(1),
            cmc.rate(5)
        ),
    };
    (o, g, cases)
}

fn parallel_equivalence(g: &GalleryIndex, cases: &[SyntheticCase], config: &Config) -> Outcome {
    let mut same = 0;
    let n = 10;
    for c in cases.iter().skip(3).step_by(97).take(n) {
        let one = search_with_workers(&c.probe, g, 50, config, 1).unwrap();
        let eight = search_with_workers(&c.probe, g, 50, config, 8).unwrap();
        same += (one == eight) as usize;
    }
    Outcome { pass: same == n, detail: format!("{same}/{n} probes give identical 8-worker and 1-worker top-50 lists") }
}

fn paper_scale(b: &Bench, n: usize) -> Vec<SyntheticCase> {
    let params = CaseParams { minutiae: 100, frame: 1024.0, stride: 32, ..CaseParams::default() };
    synthetic_cases(n, &params, &b.factory, &b.models.codebook, 13)
}

fn comparison_time(b: &Bench, config: &Config) -> Outcome {
    let cases = paper_scale(b, 8);
    let probe = &cases[0].probe;
    let prepared = TextureProbe::new(&probe.texture, &b.models.codebook).unwrap();
    let d0 = b.models.d0(config);
    let p: &MatcherParams = &config.matcher;
    let start = Instant::now();
    let mut total = 0.0;
    for c in &cases {
        let r = &c.reference;
        for l in &probe.minutiae {
            total += compare_minutiae_templates(l, &r.minutiae, p).score;
        }
        total += compare_texture_prepared(&prepared, &r.texture, d0, p).score;
    }
    let per = start.elapsed() / cases.len() as u32;
    std::hint::black_box(total);
    let sizes = (probe.minutiae[0].len(), cases[0].reference.minutiae.len(), probe.texture.len(), cases[0].reference.texture.len());
    Outcome {
        pass: per <= Duration::from_millis(20),
        detail: format!("{per:.2?} per latent-reference comparison (limit 20ms), templates {}x{} minutiae, {}x{} virtual", sizes.0, sizes.1, sizes.2, sizes.3),
    }
}

fn scaling(b: &Bench, config: &Config) -> Outcome {
    let cases = paper_scale(b, 48);
    let g = gallery(b, &cases);
    let time = |workers| {
        let start = Instant::now();
        search_with_workers(&cases[0].probe, &g, 20, config, workers).unwrap();
        start.elapsed()
    };
    let t1 = time(1);
    let t8 = time(8);
    let speedup = t1.as_secs_f64() / t8.as_secs_f64();
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    Outcome {
        pass: speedup >= 5.0,
        detail: format!("8 workers {speedup:.2}x faster than 1 (need 5x), {t1:.2?} vs {t8:.2?}, {cores} cores available"),
    }
}

fn brute_force_rank(row: &[f64], ids: &[String], mate: usize) -> usize {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then_with(|| ids[a].cmp(&ids[b])));
    // pessimistic: the mate goes after every tie
    let pos = order.iter().position(|&i| i == mate).unwrap();
    let ties_after = order[pos + 1..].iter().filter(|&&i| row[i] == row[mate] && ids[i] < ids[mate]).count();
    pos + 1 + ties_after
}

fn cmc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut exact = 0;
    let trials = 5;
    for t in 0..trials {
        let gallery_ids: Vec<String> = (0..1000).map(|k| format!("g{:04}", (k * 7919 + t) % 1000)).collect();
        let probe_ids: Vec<String> = (0..100).map(|k| format!("p{k}")).collect();
        // coarse scores in half the trials so ties occur
        let scores: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..1000).map(|_| if t % 2 == 0 { f64::from(rng.random_range(0..40u8)) } else { rng.random::<f64>() }).collect())
            .collect();
        let mates: Vec<usize> = (0..100).map(|_| rng.random_range(0..1000)).collect();
        let truth: HashMap<String, String> = probe_ids.iter().zip(&mates).map(|(p, &m)| (p.clone(), gallery_ids[m].clone())).collect();
        let matrix = ScoreMatrix { probe_ids, gallery_ids: gallery_ids.clone(), scores };
        let curve = evaluate_cmc(&matrix, &truth, 1000).unwrap();
        let mut hits = vec![0usize; 1000];
        for (row, &m) in matrix.scores.iter().zip(&mates) {
            hits[brute_force_rank(row, &gallery_ids, m) - 1] += 1;
        }
        let expected: Vec<f64> = hits.iter().scan(0, |acc, h| { *acc += h; Some(*acc as f64 / 100.0) }).collect();
        exact += (curve.rates == expected) as usize;
    }
    Outcome { pass: exact == trials, detail: format!("{exact}/{trials} random 100x1000 matrices match brute-force ranking exactly") }
}

fn fusion() -> Outcome {
    let w = FusionWeights { minutiae: [1.0, 1.0, 1.0], texture: 0.3 };
    let hand = [
        ([1.0, 1.0, 1.0], 1.0, 3.3),
        ([0.0, 0.0, 0.0], 0.0, 0.0),
        ([2.0, 0.5, 0.0], 10.0, 5.5),
        ([0.25, 0.5, 0.75], 2.0, 2.1),
    ];
    let hand_ok = hand.iter().filter(|(m, t, want)| (fuse_scores(*m, *t, &w) - want).abs() < 1e-12).count();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut monotone = 0;
    for _ in 0..1000 {
        let s: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.0..100.0));
        let which = rng.random_range(0..4);
        let bump = rng.random_range(0.0..10.0);
        let mut t = s;
        t[which] += bump;
        let before = fuse_scores([s[0], s[1], s[2]], s[3], &w);
        let after = fuse_scores([t[0], t[1], t[2]], t[3], &w);
        monotone += (after >= before) as usize;
    }
    Outcome {
        pass: hand_ok == hand.len() && monotone == 1000,
        detail: format!("{hand_ok}/{} hand cases, {monotone}/1000 random tuples monotone", hand.len()),
    }
}

#[test]
fn acceptance() {
    let config = Config::default();
    let b = bench();
    let mut results = vec![
        ("minutiae map round trip", map_round_trip()),
        ("orientation interpolation", interpolation()),
        ("ridge dictionary", dictionary()),
        ("product quantization fidelity", pq_fidelity()),
        ("compression fidelity", compression_fidelity()),
    ];
    for (name, o) in &results {
        report(name, o);
    }
    let (ident, g, cases) = identification(&b, &config);
    report("synthetic identification", &ident);
    results.push(("synthetic identification", ident));
    let staged = [
        ("parallel equivalence", parallel_equivalence(&g, &cases, &config)),
        ("comparison time", comparison_time(&b, &config)),
        ("8-worker scaling", scaling(&b, &config)),
        ("cmc oracle", cmc_oracle()),
        ("score fusion", fusion()),
    ];
    for (name, o) in staged {
        report(name, &o);
        results.push((name, o));
    }
    // Scaling is a property of the host: with fewer than eight cores it is
    // reported but cannot be held against the code.
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let failed: Vec<&str> = results.iter().filter(|(name, o)| !o.pass && !(*name == "8-worker scaling" && cores < 8)).map(|(n, _)| *n).collect();
    assert!(failed.is_empty(), "failed: {failed:?}");
}
