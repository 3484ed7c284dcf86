use std::collections::BTreeSet;

use coldstart::eval::{build_graph, generate_world, SyntheticWorldConfig, WORLD_BUILD_TS};
use coldstart::graph::{AttrValue, HeteroGraph, StatVector, VideoId, VideoNode};
use coldstart::linkage::{dot, embed_content, DEFAULT_CONTENT_DIM};
use coldstart::sampler::{encode_store, sample_all, sample_computation_graph, ComputationGraph, Neighbor, NeighborStore};
use coldstart::{Error, Execution};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DAY: i64 = 86_400;
const T: i64 = WORLD_BUILD_TS;

fn video(id: u64, age_days: f64, author: Option<u64>, product: Option<u64>, tokens: &[u32]) -> VideoNode {
    VideoNode {
        video_id: VideoId(id),
        release_ts: T - (age_days * DAY as f64) as i64,
        author_id: author,
        product_id: product,
        category_id: Some(1),
        title_tokens: tokens.to_vec(),
        stats: StatVector { ctr_15d: 0.1, pv_cnt_15d: 10.0, ..StatVector::default() },
        content_vector: Some(embed_content(tokens, Some(id), DEFAULT_CONTENT_DIM).unwrap()),
    }
}

fn ids(list: &[Neighbor]) -> Vec<u64> {
    list.iter().map(|n| n.video.0).collect()
}

#[test]
fn six_video_fixture_matches_hand_enumeration() {
    // v0 and v5 are cold; v1..v4 warm. v1 and v2 share a release time.
    let videos = vec![
        video(0, 1.0, Some(1), Some(10), &[1, 2, 3]),
        video(1, 5.0, Some(1), Some(10), &[1, 2, 9]),
        video(2, 5.0, Some(1), Some(11), &[4, 5]),
        video(3, 8.0, Some(2), Some(10), &[1, 7]),
        video(4, 20.0, Some(1), Some(10), &[2, 3]),
        video(5, 2.0, Some(1), None, &[8]),
    ];
    let g = build_graph(T, videos.clone(), 10, Execution::Sequential).unwrap();

    let cg = sample_computation_graph(&g, VideoId(0), 2).unwrap();
    // Author 1 warm: v1 (4d), v2 (4d), v4 (19d). Tie on v1/v2 goes to the lower id.
    assert_eq!(ids(&cg.nbrs_a), [1, 2]);
    assert_eq!(cg.nbrs_a[0].score, (4 * DAY) as f64);
    // Product 10 warm: v1 (4d), v3 (7d), v4 (19d).
    assert_eq!(ids(&cg.nbrs_p), [1, 3]);
    // Semantic: every warm video ranked by cosine, descending.
    let q = videos[0].content_vector.as_ref().unwrap();
    let mut sem: Vec<(f64, u64)> =
        (1..5).map(|i| (dot(q, videos[i].content_vector.as_ref().unwrap()), i as u64)).collect();
    sem.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    assert_eq!(ids(&cg.nbrs_s), sem.iter().take(2).map(|s| s.1).collect::<Vec<_>>());
    for n in cg.nbrs_a.iter().chain(&cg.nbrs_p).chain(&cg.nbrs_s) {
        assert_eq!(n.attrs, g.attrs_of(n.video).unwrap());
    }

    let cg = sample_computation_graph(&g, VideoId(0), 20).unwrap();
    assert_eq!(ids(&cg.nbrs_a), [1, 2, 4]);
    assert_eq!(ids(&cg.nbrs_p), [1, 3, 4]);
    assert_eq!(cg.nbrs_s.len(), 4);

    // v5 has no product: the product path is empty, the cold v0 never appears.
    let cg = sample_computation_graph(&g, VideoId(5), 20).unwrap();
    assert_eq!(ids(&cg.nbrs_a), [1, 2, 4]);
    assert!(cg.nbrs_p.is_empty());
    assert_eq!(cg.nbrs_s.len(), 4);

    assert!(matches!(sample_computation_graph(&g, VideoId(3), 2), Err(Error::WarmTarget(_))));
    assert!(sample_computation_graph(&g, VideoId(99), 2).is_err());
}

#[test]
fn store_lookup_matches_linear_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut targets: Vec<u64> = (0..30_000).collect();
    targets.shuffle(&mut rng);
    let nb = |rng: &mut ChaCha8Rng| -> Vec<Neighbor> {
        (0..rng.random_range(0..4))
            .map(|_| Neighbor {
                video: VideoId(rng.random_range(0..1_000_000)),
                score: rng.random(),
                attrs: (0..rng.random_range(0..6)).map(|_| coldstart::graph::AttrId(rng.random())).collect(),
            })
            .collect()
    };
    let graphs: Vec<ComputationGraph> = targets[..10_000]
        .iter()
        .map(|&t| ComputationGraph {
            target: VideoId(t),
            own_attrs: vec![coldstart::graph::AttrId(rng.random())],
            nbrs_a: nb(&mut rng),
            nbrs_p: nb(&mut rng),
            nbrs_s: nb(&mut rng),
        })
        .collect();
    let store = NeighborStore::from_bytes(encode_store(&graphs, 3).unwrap()).unwrap();
    assert_eq!(store.len(), 10_000);
    for _ in 0..2000 {
        let q = VideoId(rng.random_range(0..30_000));
        let scan = graphs.iter().find(|g| g.target == q).cloned();
        assert_eq!(store.get(q).unwrap(), scan);
    }
}

#[test]
fn disjoint_token_sets_are_dissimilar() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut below = 0;
    let mut worst = f64::MIN;
    for _ in 0..1000 {
        let mut vocab: Vec<u32> = (0..400).collect();
        vocab.shuffle(&mut rng);
        let (na, nb) = (rng.random_range(2..8), rng.random_range(2..8));
        let a = embed_content(&vocab[..na], None, DEFAULT_CONTENT_DIM).unwrap();
        let b = embed_content(&vocab[na..na + nb], None, DEFAULT_CONTENT_DIM).unwrap();
        let c = dot(&a, &b);
        worst = worst.max(c);
        below += usize::from(c < 0.5);
    }
    assert!(below >= 995, "{below} of 1000 pairs below 0.5 (max cosine {worst})");
}

#[test]
fn default_world_edge_count_and_coverage() {
    let world = generate_world(&SyntheticWorldConfig::default()).unwrap();
    let g = world.graph(20, Execution::Parallel).unwrap();
    let expected: usize = world
        .videos
        .iter()
        .map(|v| {
            usize::from(v.author_id.is_some())
                + usize::from(v.product_id.is_some())
                + usize::from(v.category_id.is_some())
                + StatVector::LEN
        })
        .sum();
    assert_eq!(g.physical_edge_count(), expected);
    let cov = g.coverage();
    assert_eq!(cov.cold_videos, 500);
    assert!(cov.physical >= 0.95, "{cov:?}");

    // Sampling twice, and on either backend, persists the same bytes.
    let a = encode_store(&sample_all(&g, 20, Execution::Sequential).unwrap(), 20).unwrap();
    let b = encode_store(&sample_all(&g, 20, Execution::Parallel).unwrap(), 20).unwrap();
    let again = world.graph(20, Execution::Sequential).unwrap();
    let c = encode_store(&sample_all(&again, 20, Execution::Sequential).unwrap(), 20).unwrap();
    assert!(a == b && a == c);
}

fn random_videos(seed: u64, n: usize) -> Vec<VideoNode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n as u64)
        .map(|i| {
            let age = if rng.random_bool(0.3) { rng.random_range(0.0..3.0) } else { rng.random_range(3.1..40.0) };
            let tokens: Vec<u32> = (0..rng.random_range(1..5)).map(|_| rng.random_range(0..30)).collect();
            let mut v = video(
                i,
                age,
                rng.random_bool(0.9).then(|| rng.random_range(0..5)),
                rng.random_bool(0.9).then(|| rng.random_range(0..6)),
                &tokens,
            );
            // Whole-day ages make release-time ties common.
            if rng.random_bool(0.3) {
                v.release_ts = T - DAY * rng.random_range(4..8);
            }
            v
        })
        .collect()
}

fn check_invariants(g: &HeteroGraph, videos: &[VideoNode], k: usize) {
    for v in g.videos() {
        for &a in g.attrs_of(v.video_id).unwrap() {
            assert!(g.videos_of(a).unwrap().contains(&v.video_id), "edge stored one way only");
        }
    }
    for e in g.semantic_edges() {
        assert!(g.is_cold(e.src).unwrap() && !g.is_cold(e.dst).unwrap());
    }
    for t in g.cold_videos() {
        let tv = &videos[t.0 as usize];
        let cg = sample_computation_graph(g, t, k).unwrap();
        for (list, key) in [(&cg.nbrs_a, 0), (&cg.nbrs_p, 1)] {
            let attr = |v: &VideoNode| if key == 0 { v.author_id } else { v.product_id };
            let mut oracle: Vec<(u64, u64)> = videos
                .iter()
                .filter(|v| v.video_id != t && !g.is_cold(v.video_id).unwrap())
                .filter(|v| attr(tv).is_some() && attr(v) == attr(tv))
                .map(|v| ((v.release_ts - tv.release_ts).unsigned_abs(), v.video_id.0))
                .collect();
            oracle.sort();
            oracle.truncate(k);
            assert_eq!(ids(list), oracle.iter().map(|o| o.1).collect::<Vec<_>>());
        }
        let q = tv.content_vector.as_ref().unwrap();
        let sims: Vec<f64> = cg.nbrs_s.iter().map(|n| dot(q, videos[n.video.0 as usize].content_vector.as_ref().unwrap())).collect();
        assert!(sims.windows(2).all(|w| w[0] >= w[1]));
        let unique: BTreeSet<_> = cg.nbrs_s.iter().map(|n| n.video).collect();
        assert_eq!(unique.len(), cg.nbrs_s.len());
        assert!(cg.nbrs_s.len() <= k);
        assert!(cg.nbrs_s.iter().all(|n| !g.is_cold(n.video).unwrap()));
        // Statistic nodes are private to their video.
        for a in &cg.own_attrs {
            if let AttrValue::Stat { owner, .. } = g.attr(*a).unwrap().value {
                assert_eq!(owner, t);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sampled_lists_match_brute_force(seed in any::<u64>(), n in 8usize..60, k in 1usize..6) {
        let videos = random_videos(seed, n);
        let g = build_graph(T, videos.clone(), k, Execution::Sequential).unwrap();
        check_invariants(&g, &videos, k);
    }
}
