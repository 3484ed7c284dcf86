use coldstart::data::{read_impressions, read_users, read_videos};
use coldstart::eval::{compute_auc, generate_world, run_ablation, Experiment, SyntheticWorldConfig};
use coldstart::graph::{VideoId, Vocabulary};
use coldstart::model::{AblationMask, Model, ModelConfig};
use coldstart::train::{predict_all, TrainConfig};
use coldstart::Execution;
use proptest::prelude::*;

#[test]
fn large_warm_video_click_rate_converges() {
    let world = generate_world(&SyntheticWorldConfig::default()).unwrap();
    // The warm video with the most page views.
    let v = (0..world.config.warm_videos as u64)
        .map(VideoId)
        .max_by(|a, b| {
            let pv = |v: &VideoId| world.videos[v.0 as usize].stats.pv_cnt_15d;
            pv(a).total_cmp(&pv(b))
        })
        .unwrap();
    for seed in 0..5 {
        let emp = world.empirical_ctr(v, 10_000, seed);
        assert!((emp - world.video_ctr(v)).abs() <= 0.02, "{emp} vs {}", world.video_ctr(v));
    }
}

#[test]
fn logged_labels_follow_the_planted_click_model() {
    let world = generate_world(&SyntheticWorldConfig::default()).unwrap();
    for set in [&world.d_full, &world.d_test] {
        let n = set.len() as f64;
        let clicks = set.iter().filter(|i| i.label).count() as f64;
        let p: Vec<f64> = set.iter().map(|i| world.oracle_ctr(i.user, i.target)).collect();
        let mean = p.iter().sum::<f64>();
        let sd = p.iter().map(|p| p * (1.0 - p)).sum::<f64>().sqrt();
        assert!((clicks - mean).abs() < 4.0 * sd, "{clicks} clicks, expected {mean} ± {sd} over {n}");
    }
    // The planted scores rank held-out clicks well above chance.
    let scores: Vec<f64> = world.d_test.iter().map(|i| world.oracle_ctr(i.user, i.target)).collect();
    let labels: Vec<bool> = world.d_test.iter().map(|i| i.label).collect();
    assert!(compute_auc(&scores, &labels).unwrap() > 0.7);
}

#[test]
fn dataset_roles_hold() {
    let world = generate_world(&SyntheticWorldConfig::small(5)).unwrap();
    assert!(world.d_cold.iter().all(|i| world.is_cold(i.target)));
    assert!(world.d_test.iter().all(|i| world.is_cold(i.target)));
    let cold_in_full = world.d_full.iter().filter(|i| world.is_cold(i.target)).count();
    assert_eq!(cold_in_full, world.d_cold.len());
    let last_train = world.d_full.iter().map(|i| i.ts).max().unwrap();
    assert!(world.d_test.iter().all(|i| i.ts > last_train));
}

#[test]
fn written_world_reads_back() {
    let world = generate_world(&SyntheticWorldConfig::small(6)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    world.write(dir.path()).unwrap();
    let mut vocab = Vocabulary::new();
    let (ts, videos) = read_videos(&dir.path().join("videos.tsv"), &mut vocab).unwrap();
    assert_eq!(ts, world.build_ts);
    assert_eq!(videos.len(), world.videos.len());
    for (a, b) in videos.iter().zip(&world.videos) {
        assert_eq!((a.video_id, a.release_ts, a.author_id, a.product_id), (b.video_id, b.release_ts, b.author_id, b.product_id));
        assert_eq!(a.stats, b.stats);
    }
    let users = read_users(&dir.path().join("users.tsv"), &mut vocab).unwrap();
    assert_eq!(users, world.users);
    assert_eq!(read_impressions(&dir.path().join("d_test.tsv"), &vocab).unwrap(), world.d_test);
    assert_eq!(read_impressions(&dir.path().join("d_cold.tsv"), &vocab).unwrap(), world.d_cold);
}

fn small_experiment() -> Experiment {
    let world = generate_world(&SyntheticWorldConfig::small(2)).unwrap();
    let model = ModelConfig { attn_dim: 16, hidden: vec![32, 16], max_behaviors: 12, ..ModelConfig::default() };
    let train = TrainConfig { learning_rate: 0.003, batch_size: 128, exec: Execution::Parallel, ..TrainConfig::default() };
    Experiment::from_world(&world, 10, 10, model, train).unwrap()
}

#[test]
fn ablation_report_layout() {
    let ex = small_experiment();
    let masks = [AblationMask::parse("drop_semantic").unwrap(), AblationMask::base(), AblationMask::parse("drop_repr").unwrap()];
    let report = run_ablation(&ex, &masks).unwrap();
    let names: Vec<&str> = report.rows.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(names, ["full", "base", "drop_semantic", "drop_repr"]);
    let tsv = report.to_tsv();
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines[0], "operator\tauc\trela_impr_vs_full\trela_impr_vs_base");
    assert_eq!(lines.len(), 5);
    let full: Vec<&str> = lines[1].split('\t').collect();
    assert_eq!(full[2], "0.00");
    let base: Vec<&str> = lines[2].split('\t').collect();
    assert_eq!(base[3], "0.00");
    for r in &report.rows {
        assert!(r.auc > 0.0 && r.auc < 1.0);
    }
    // The run for a mask is reproducible.
    let again = ex.run(masks[0]).unwrap();
    assert_eq!(again.finetune_auc, report.rows[2].auc);
}

fn mask_strategy() -> impl Strategy<Value = AblationMask> {
    prop::array::uniform9(any::<bool>()).prop_map(|f| AblationMask {
        drop_repr: f[0],
        drop_stats: f[1],
        drop_physical: f[2],
        drop_author: f[3],
        drop_product: f[4],
        drop_semantic: f[5],
        drop_h2: f[6],
        drop_h3: f[7],
        drop_target_stats: f[8],
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mask_union_is_order_independent(a in mask_strategy(), b in mask_strategy(), c in mask_strategy()) {
        prop_assert_eq!(a.union(b), b.union(a));
        prop_assert_eq!(a.union(b).union(c), a.union(b.union(c)));
        prop_assert_eq!(a.union(a), a);
        prop_assert_eq!(AblationMask::parse(&a.to_string()).unwrap(), a);
    }
}

#[test]
fn applying_masks_in_sequence_equals_their_union() {
    let ex = small_experiment();
    let model = Model::init(ex.model.clone(), &ex.corpus.store).unwrap();
    let f = coldstart::train::Assembler::new(&model, &ex.corpus, AblationMask::NONE);
    let pairs = [("drop_author", "drop_stats"), ("drop_h2", "drop_semantic+drop_repr"), ("drop_physical", "drop_product")];
    for (x, y) in pairs {
        let (a, b) = (AblationMask::parse(x).unwrap(), AblationMask::parse(y).unwrap());
        for imp in ex.d_test.iter().take(50) {
            let cg = ex.corpus.neighbors.get(&imp.target);
            let mut ab = f.featurizer().transfer(cg, &a);
            b.apply(&mut ab);
            let mut ba = f.featurizer().transfer(cg, &b);
            a.apply(&mut ba);
            assert_eq!(ab, ba);
            assert_eq!(ab, f.featurizer().transfer(cg, &a.union(b)));
        }
        let ab = predict_all(&model, &ex.corpus, &ex.d_test, a.union(b), Execution::Sequential);
        let ba = predict_all(&model, &ex.corpus, &ex.d_test, b.union(a), Execution::Sequential);
        assert_eq!(ab, ba);
    }
}
