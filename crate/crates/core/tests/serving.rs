use std::sync::Arc;

use coldstart::data::{Impression, USER, VIDEO};
use coldstart::eval::{generate_world, SyntheticWorldConfig, World};
use coldstart::model::{encode_checkpoint, AblationMask, Model, ModelConfig};
use coldstart::serving::{bench, serve, workload, Client, PredictRequest, Scorer, ScoreMode, ServerConfig, WorkloadConfig};
use coldstart::train::{predict_all, pretrain, Corpus, TrainConfig};
use coldstart::Execution;

struct Fixture {
    world: World,
    corpus: Corpus,
    model: Model,
}

fn fixture() -> Fixture {
    let world = generate_world(&SyntheticWorldConfig::small(9)).unwrap();
    let graph = world.graph(10, Execution::Sequential).unwrap();
    let corpus = Corpus::from_graph(&graph, world.users.iter().cloned(), 10, Execution::Sequential).unwrap();
    let cfg = ModelConfig { attn_dim: 16, hidden: vec![32, 16], max_behaviors: 12, ..ModelConfig::default() };
    let init = Model::init(cfg, &corpus.store).unwrap();
    let train = TrainConfig { learning_rate: 0.003, batch_size: 256, ..TrainConfig::default() };
    let (model, _) = pretrain(init, &corpus, &world.d_full, &train).unwrap();
    Fixture { world, corpus, model }
}

fn names(w: &World, space: &str, ids: impl Iterator<Item = u64>) -> Vec<String> {
    ids.map(|i| w.vocab.external(space, i).unwrap().to_string()).collect()
}

fn requests(f: &Fixture, n: usize) -> Vec<PredictRequest> {
    let users = names(&f.world, USER, f.world.users.iter().map(|u| u.0));
    let videos = names(&f.world, VIDEO, f.world.videos.iter().map(|v| v.video_id.0));
    let cold = names(&f.world, VIDEO, f.world.videos.iter().map(|v| v.video_id.0).filter(|&v| f.world.is_cold(coldstart::graph::VideoId(v))));
    workload(&WorkloadConfig { requests: n, candidates: 8, behaviors: 12, seed: 3 }, &users, &videos, &cold)
}

/// The offline path: impressions in internal ids through batch prediction.
fn offline(f: &Fixture, req: &PredictRequest) -> Vec<f64> {
    let id = |space, s: &str| f.world.vocab.get(space, s).unwrap_or(u64::MAX);
    let imps: Vec<Impression> = req
        .candidates
        .iter()
        .map(|c| Impression {
            id: 0,
            user: id(USER, &req.user),
            behaviors: req.behaviors.iter().map(|b| coldstart::graph::VideoId(id(VIDEO, b))).collect(),
            target: coldstart::graph::VideoId(id(VIDEO, c)),
            label: false,
            ts: 0,
        })
        .collect();
    let mask = if req.mode == ScoreMode::Base { AblationMask::base() } else { AblationMask::NONE };
    predict_all(&f.model, &f.corpus, &imps, mask, Execution::Parallel)
}

#[test]
fn daemon_matches_offline_prediction() {
    let f = fixture();
    let before = encode_checkpoint(&f.model);
    let scorer = Arc::new(Scorer::new(f.model.clone(), &f.corpus, f.world.vocab.clone()));
    let server = serve(scorer.clone(), "127.0.0.1:0", ServerConfig { threads: 2, exact: true }).unwrap();
    let mut client = Client::connect(server.addr()).unwrap();
    for mut req in requests(&f, 200) {
        for mode in [ScoreMode::Gift, ScoreMode::Base] {
            req.mode = mode;
            let online = client.predict(&req).unwrap().scores;
            let expected = offline(&f, &req);
            assert_eq!(online.len(), expected.len());
            for (a, b) in online.iter().zip(&expected) {
                assert_eq!(a.to_bits(), b.to_bits(), "{}", req.to_line());
            }
        }
    }
    // Unknown user and unknown candidate fall back to the out-of-vocabulary rows.
    let odd = PredictRequest { user: "nobody".into(), behaviors: vec!["v0".into(), "ghost".into()], candidates: vec!["v299".into(), "ghost".into()], mode: ScoreMode::Gift };
    let got = client.predict(&odd).unwrap().scores;
    assert_eq!(got, offline(&f, &odd));
    assert!(got.iter().all(|p| *p > 0.0 && *p < 1.0));
    drop(client);
    server.shutdown();
    assert!(encode_checkpoint(scorer.model()) == before, "serving must not modify the model");
}

#[test]
fn protocol_edge_cases() {
    let f = fixture();
    let scorer = Arc::new(Scorer::new(f.model.clone(), &f.corpus, f.world.vocab.clone()));
    let server = serve(scorer, "127.0.0.1:0", ServerConfig::default()).unwrap();
    let mut c = Client::connect(server.addr()).unwrap();
    assert!(c.send_line("u1\t-\t-").unwrap().ends_with("\t-"));
    assert!(c.send_line("not a request").unwrap().starts_with("ERR\t"));
    assert!(c.send_line("u1\tv1\tv250\tfast").unwrap().starts_with("ERR\t"));
    let many = vec!["v250"; 513].join(",");
    assert!(c.send_line(&format!("u1\t-\t{many}")).unwrap().starts_with("ERR\t"));
    // The connection survives errors and identical requests repeat exactly.
    let a = c.send_line("u3\tv1,v2\tv250,v260").unwrap();
    let b = c.send_line("u3\tv1,v2\tv250,v260").unwrap();
    assert!(a.starts_with("OK\t"));
    let scores = |s: &str| s.rsplit('\t').next().unwrap().to_string();
    assert_eq!(scores(&a), scores(&b));
    let six = scores(&a);
    assert!(six.split(',').all(|p| p.split('.').nth(1).unwrap().len() == 6));
    server.shutdown();
}

#[test]
fn concurrent_clients_get_their_own_answers() {
    let f = fixture();
    let scorer = Arc::new(Scorer::new(f.model.clone(), &f.corpus, f.world.vocab.clone()));
    let server = serve(scorer.clone(), "127.0.0.1:0", ServerConfig { threads: 4, exact: true }).unwrap();
    let reqs = requests(&f, 120);
    let addr = server.addr();
    std::thread::scope(|s| {
        for part in reqs.chunks(30) {
            let scorer = scorer.clone();
            s.spawn(move || {
                let mut c = Client::connect(addr).unwrap();
                for r in part {
                    assert_eq!(c.predict(r).unwrap().scores, scorer.score(r));
                }
            });
        }
    });
    server.shutdown();
}

#[test]
fn bench_reports_both_modes() {
    let f = fixture();
    let scorer = Arc::new(Scorer::new(f.model.clone(), &f.corpus, f.world.vocab.clone()));
    let server = serve(scorer, "127.0.0.1:0", ServerConfig::default()).unwrap();
    let reqs = requests(&f, 50);
    assert_eq!(reqs, requests(&f, 50));
    let report = bench(server.addr(), &reqs).unwrap();
    assert_eq!(report.gift.requests, 50);
    assert_eq!(report.base.requests, 50);
    assert!(report.delta_us().is_some());
    let text = report.to_text();
    assert!(text.lines().last().unwrap().starts_with("delta_server_us\t"));
    let empty = bench(server.addr(), &[]).unwrap();
    assert_eq!(empty.gift.p50_us, None);
    assert!(empty.to_text().contains("delta_server_us\t-"));
    server.shutdown();
}
