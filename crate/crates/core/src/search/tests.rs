use std::sync::{Arc, OnceLock};

use rand::seq::SliceRandom;
use rand::Rng;

use super::*;
use crate::compressor::CompressorModel;
use crate::extract::Models;
use crate::pq::train_pq;
use crate::synthetic::{rng, synthetic_cases, CaseParams, DescriptorFactory, Perturbation, SyntheticCase};

struct Fixture {
    models: Arc<Models>,
    cases: Vec<SyntheticCase>,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let factory = DescriptorFactory::new(96, 24, false, 1);
        let mut r = rng(2);
        let corpus: Vec<Vec<f32>> = (0..600).map(|_| factory.sample(&mut r)).collect();
        let (codebook, _) = train_pq(&corpus, 16, 3).unwrap();
        let models = Arc::new(Models { compressor: CompressorModel::random(4), codebook });
        let params = CaseParams { minutiae: 40, frame: 256.0, ..CaseParams::default() };
        let cases = synthetic_cases(24, &params, &factory, &models.codebook, 5);
        Fixture { models, cases }
    })
}

fn gallery(order: &[usize]) -> GalleryIndex {
    let f = fixture();
    let mut g = GalleryIndex::new(f.models.clone());
    for &i in order {
        g.insert(f.cases[i].id.clone(), f.cases[i].reference.clone(), None).unwrap();
    }
    g
}

fn all() -> Vec<usize> {
    (0..fixture().cases.len()).collect()
}

#[test]
fn empty_gallery_gives_empty_list() {
    let g = GalleryIndex::new(fixture().models.clone());
    let list = search_gallery(&fixture().cases[0].probe, &g, 10, &Config::default()).unwrap();
    assert!(list.is_empty());
}

#[test]
fn mates_rank_first() {
    let g = gallery(&all());
    for case in &fixture().cases {
        let list = search_gallery(&case.probe, &g, 5, &Config::default()).unwrap();
        assert_eq!(list.len(), 5);
        assert_eq!(list.entries()[0].reference_id, case.id);
    }
}

#[test]
fn unperturbed_probe_scores_its_own_reference_highest() {
    let f = fixture();
    let factory = DescriptorFactory::new(96, 24, false, 1);
    let still = Perturbation { max_rotation: 0.0, max_translation: 0.0, delete_fraction: 0.0, spurious_fraction: 0.0, descriptor_noise: 0.0 };
    let params = CaseParams { minutiae: 40, frame: 256.0, perturbation: still, ..CaseParams::default() };
    let cases = synthetic_cases(6, &params, &factory, &f.models.codebook, 77);
    let mut g = GalleryIndex::new(f.models.clone());
    for c in &cases {
        g.insert(c.id.clone(), c.reference.clone(), None).unwrap();
    }
    for c in &cases {
        let list = search_gallery(&c.probe, &g, 6, &Config::default()).unwrap();
        assert_eq!(list.entries()[0].reference_id, c.id);
        assert!(list.entries()[0].fused_score > 2.0 * list.entries()[1].fused_score);
    }
}

#[test]
fn result_ignores_gallery_order_and_worker_count() {
    let mut order = all();
    order.shuffle(&mut rng(9));
    let (a, b) = (gallery(&all()), gallery(&order));
    let cfg = Config::default();
    for case in fixture().cases.iter().take(4) {
        let seq = search_with_workers(&case.probe, &a, 10, &cfg, 1).unwrap();
        assert_eq!(search_with_workers(&case.probe, &a, 10, &cfg, 8).unwrap(), seq);
        assert_eq!(search_with_workers(&case.probe, &b, 10, &cfg, 3).unwrap(), seq);
        assert_eq!(search_with_workers(&case.probe, &b, 10, &cfg, 1).unwrap(), seq);
    }
}

#[test]
fn detailed_search_agrees_with_plain_search() {
    let g = gallery(&all());
    let probe = &fixture().cases[3].probe;
    let cfg = Config::default();
    let plain = search_gallery(probe, &g, 3, &cfg).unwrap();
    let detailed = search_gallery_detailed(probe, &g, 3, &cfg).unwrap();
    assert_eq!(detailed.iter().map(|d| d.candidate.clone()).collect::<Vec<_>>(), plain.into_entries());
    let top = &detailed[0];
    assert_eq!(top.candidate.scores.minutiae[0], top.minutiae[0].score);
    assert!(!top.minutiae[0].surviving.is_empty());
    assert!(!top.texture.surviving.is_empty());
}

#[test]
fn score_gallery_matches_search_order() {
    let g = gallery(&all());
    let probe = &fixture().cases[1].probe;
    let cfg = Config::default();
    let scores = score_gallery(probe, &g, &cfg).unwrap();
    assert_eq!(scores.len(), g.len());
    let best = CandidateList::from_unsorted(scores, 4);
    assert_eq!(best, search_gallery(probe, &g, 4, &cfg).unwrap());
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("g{i:04}")).collect()
}

#[test]
fn strict_mate_maximum_gives_full_rank_one() {
    let gallery_ids = ids(5);
    let probe_ids: Vec<String> = (0..5).map(|i| format!("p{i}")).collect();
    let scores = (0..5).map(|i| (0..5).map(|j| if i == j { 2.0 } else { 1.0 }).collect()).collect();
    let truth = probe_ids.iter().cloned().zip(gallery_ids.iter().cloned()).collect();
    let cmc = evaluate_cmc(&ScoreMatrix { probe_ids, gallery_ids, scores }, &truth, 5).unwrap();
    assert_eq!(cmc.rates, vec![1.0; 5]);
}

#[test]
fn ties_count_against_the_mate_only_for_smaller_ids() {
    let g = ids(4);
    assert_eq!(mate_rank(&[1.0, 1.0, 1.0, 0.5], &g, 0), 1);
    assert_eq!(mate_rank(&[1.0, 1.0, 1.0, 0.5], &g, 2), 3);
    assert_eq!(mate_rank(&[1.0, 2.0, 1.0, 0.5], &g, 2), 3);
    assert_eq!(mate_rank(&[1.0, 2.0, 1.0, 0.5], &g, 3), 4);
}

#[test]
fn random_scores_match_brute_force_ranks() {
    let mut r = rng(31);
    let gallery_ids = ids(1000);
    let probe_ids: Vec<String> = (0..100).map(|i| format!("p{i:03}")).collect();
    let scores: Vec<Vec<f64>> = (0..100).map(|_| (0..1000).map(|_| f64::from(r.random_range(0..50u8))).collect()).collect();
    let mates: Vec<usize> = (0..100).map(|_| r.random_range(0..1000)).collect();
    let truth = probe_ids.iter().cloned().zip(mates.iter().map(|&m| gallery_ids[m].clone())).collect();
    let max_rank = 1000;
    let cmc = evaluate_cmc(&ScoreMatrix { probe_ids, gallery_ids: gallery_ids.clone(), scores: scores.clone() }, &truth, max_rank).unwrap();
    for k in [1usize, 5, 20, 100, 500, 1000] {
        let hits = (0..100)
            .filter(|&p| {
                let mut order: Vec<usize> = (0..1000).collect();
                order.sort_by(|&a, &b| scores[p][b].total_cmp(&scores[p][a]).then(gallery_ids[a].cmp(&gallery_ids[b])));
                order.iter().position(|&g| g == mates[p]).unwrap() < k
            })
            .count();
        assert_eq!(cmc.rate(k), hits as f64 / 100.0, "rank {k}");
    }
    assert!(cmc.rates.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(cmc.rate(1000), 1.0);
}

#[test]
fn missing_mate_is_rejected() {
    let m = ScoreMatrix { probe_ids: vec!["p".into()], gallery_ids: ids(2), scores: vec![vec![0.1, 0.2]] };
    let mut truth = HashMap::new();
    assert!(evaluate_cmc(&m, &truth, 2).is_err());
    truth.insert("p".to_string(), "nobody".to_string());
    assert!(evaluate_cmc(&m, &truth, 2).is_err());
    truth.insert("p".to_string(), "g0001".to_string());
    let cmc = evaluate_cmc(&m, &truth, 2).unwrap();
    assert_eq!(cmc.to_csv(), "rank,rate\n1,1.000000\n2,1.000000\n");
}
