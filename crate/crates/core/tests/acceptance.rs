//! End-to-end acceptance checks. Run with `--nocapture` to see one PASS/FAIL
//! line per criterion.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use fedfuse::alignment::{
    build_aligned_sample, insert_pause_tokens, pool_frames_to_words, FrameFeatures, PauseKind, PauseThresholds,
    TimedWord, Token,
};
use fedfuse::augmentation::{augment_dataset, synth_generate, Converter, Sample, SynthCorpusConfig};
use fedfuse::federation::{
    aggregate_adaptive, aggregate_fedavg, fedavg_weights, partition, select_best, stratified_split, AdaptiveKind,
    Aggregator, ClientState, ClientUpdate, Federation, FederationConfig, PartitionScheme, ServerOptConfig,
    ServerState, Strategy,
};
use fedfuse::harness::{run_experiment, CorpusSource, ExperimentConfig, Paradigm};
use fedfuse::model::{batch_loss_grad, gradient_check, FusionConfig, FusionParams, Modality};
use fedfuse::numerics::{AdamWConfig, ParamVector, Tensor2};
use fedfuse::training::{evaluate, LocalOptimizer};
use fedfuse::alignment::AlignedSample;
use fedfuse::Label;

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn small_model() -> FusionConfig {
    FusionConfig { hidden_dim: 8, heads: 2, max_len: 12, mlp_hidden: 4, ..FusionConfig::default() }
}

fn small_corpus(n_per_class: usize, seed: u64) -> SynthCorpusConfig {
    SynthCorpusConfig { n_per_class, d_s: 2, d_c: 4, d: 8, words_per_sample: 6, max_len: 12, seed, ..Default::default() }
}

fn features(samples: &[Sample]) -> Vec<AlignedSample> {
    samples.iter().map(|s| s.features.clone()).collect()
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for seed in 0..24u64 {
        let cfg = FusionConfig {
            hidden_dim: 8,
            heads: 2,
            max_len: 1 + (seed as usize % 6),
            mlp_hidden: 4,
            include_ffn: seed % 2 == 1,
            modality: Modality::ALL[(seed / 2) as usize % 3],
            ..FusionConfig::default()
        };
        let r = gradient_check(&cfg, 1000 + seed, 1e-5).map_err(|e| e.to_string())?;
        ensure(r.passed && r.max_rel_error < 1e-5, format!("instance {seed}: rel error {:.3e}", r.max_rel_error))?;
        worst = worst.max(r.max_rel_error);
        n += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 30.0, format!("took {secs:.1}s"))?;
    Ok(format!("{n} instances, max rel error {worst:.2e}, {secs:.1}s"))
}

fn fedavg_exactness() -> Outcome {
    let upd = |id, n, d: f64| ClientUpdate::new(id, 1, n, ParamVector::new(vec![d]));
    let w = ParamVector::new(vec![1.0]);
    let one = aggregate_fedavg(&w, &[upd(0, 5, 0.75)]).map_err(|e| e.to_string())?;
    ensure((one.values[0] - 1.75).abs() < 1e-12, "single client")?;
    let two = aggregate_fedavg(&w, &[upd(0, 1, 4.0), upd(1, 3, 0.0)]).map_err(|e| e.to_string())?;
    ensure((two.values[0] - 2.0).abs() < 1e-12, format!("n=(1,3) gave {}", two.values[0]))?;
    let same = aggregate_fedavg(&w, &[upd(0, 2, 0.3), upd(1, 7, 0.3), upd(2, 11, 0.3)]).map_err(|e| e.to_string())?;
    ensure((same.values[0] - 1.3).abs() < 1e-12, "equal deltas")?;
    for counts in [vec![1, 3], vec![7, 11, 13], vec![96, 97, 98, 99], vec![1, 1, 1]] {
        let ws = fedavg_weights(&counts).map_err(|e| e.to_string())?;
        let total: u64 = counts.iter().map(|&c| c as u64).sum();
        let sum: u64 = ws.iter().map(|&(num, den)| num * (total / den)).sum();
        ensure(sum == total, format!("weights for {counts:?} do not sum to 1"))?;
    }
    Ok("examples within 1e-12, integer weight sums exact".into())
}

fn federated_matches_centralized() -> Outcome {
    let (_, samples) = synth_generate(&small_corpus(6, 21)).map_err(|e| e.to_string())?;
    let model = small_model();
    let lr = 0.1;
    let cfg = FederationConfig {
        clients: 3,
        rounds: 1,
        local_epochs: 1,
        batch_size: None,
        optimizer: LocalOptimizer::Sgd { lr },
        ..Default::default()
    };
    let w0 = FusionParams::init(&model, 5).flatten(&model);
    let data = features(&samples);
    let clients = (0..3)
        .map(|i| {
            let shard = data[i * 4..(i + 1) * 4].to_vec();
            ClientState::new(i, shard.clone(), shard, &w0, &cfg)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let mut fed = Federation::new(cfg, model, clients, w0.clone()).map_err(|e| e.to_string())?;
    fed.run_round().map_err(|e| e.to_string())?;
    let refs: Vec<&AlignedSample> = data.iter().collect();
    let p = FusionParams::load(&w0, &model).map_err(|e| e.to_string())?;
    let (_, g) = batch_loss_grad(&refs, &p, &model).map_err(|e| e.to_string())?;
    let mut central = w0.clone();
    central.add_scaled(&g, -lr).map_err(|e| e.to_string())?;
    let diff = central.max_abs_diff(&fed.global);
    ensure(diff < 1e-10, format!("L-inf difference {diff:.3e}"))?;
    Ok(format!("L-inf difference {diff:.2e}"))
}

fn fedprox_zero_is_fedavg() -> Outcome {
    let (_, samples) = synth_generate(&small_corpus(12, 4)).map_err(|e| e.to_string())?;
    let data = features(&samples);
    let labels: Vec<Label> = data.iter().map(|s| s.label).collect();
    let model = small_model();
    let build = |agg: Aggregator| -> Result<Federation, String> {
        let cfg = FederationConfig {
            clients: 3,
            rounds: 5,
            batch_size: Some(4),
            optimizer: LocalOptimizer::AdamW(AdamWConfig { lr: 1e-2, ..Default::default() }),
            aggregator: agg,
            seed: 17,
            ..Default::default()
        };
        let w0 = FusionParams::init(&model, 2).flatten(&model);
        let shards = partition(&labels, PartitionScheme::Uniform, 3, 3).map_err(|e| e.to_string())?;
        let clients = shards
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let local: Vec<AlignedSample> = s.iter().map(|&j| data[j].clone()).collect();
                let ll: Vec<Label> = local.iter().map(|x| x.label).collect();
                let (tr, va) = stratified_split(&ll, 0.2, i as u64).map_err(|e| e.to_string())?;
                let pick = |idx: &[usize]| idx.iter().map(|&j| local[j].clone()).collect::<Vec<_>>();
                ClientState::new(i, pick(&tr), pick(&va), &w0, &cfg).map_err(|e| e.to_string())
            })
            .collect::<Result<Vec<_>, _>>()?;
        Federation::new(cfg, model, clients, w0).map_err(|e| e.to_string())
    };
    let mut avg = build(Aggregator::FedAvg)?;
    let mut prox = build(Aggregator::FedProx { mu: 0.0 })?;
    for r in 1..=5 {
        avg.run_round().map_err(|e| e.to_string())?;
        prox.run_round().map_err(|e| e.to_string())?;
        ensure(avg.global == prox.global, format!("round {r} differs"))?;
    }
    Ok("5 rounds bit-identical".into())
}

fn adaptive_oracles() -> Outcome {
    // Frozen hand-computed trajectories for pseudo-gradients 1, 0.5, -0.25
    // with eta 1, beta (0.9, 0.99), tau 1e-3, starting from 0.
    let oracle: [(AdaptiveKind, [f64; 3]); 3] = [
        (AdaptiveKind::Adam, [0.9900990099009894, 2.2361462891915815, 3.117606713812338]),
        (AdaptiveKind::Adagrad, [0.09990009990009989, 0.22500800672641352, 0.31309114911176766]),
        (AdaptiveKind::Yogi, [0.9900990099009894, 2.2311963650892856, 3.105167991861877]),
    ];
    let cfg = ServerOptConfig::default();
    let mut worst: f64 = 0.0;
    for (kind, expected) in oracle {
        let mut state = ServerState::new(1);
        let mut w = ParamVector::new(vec![0.0]);
        for (r, (d, want)) in [1.0, 0.5, -0.25].iter().zip(expected).enumerate() {
            let u = ClientUpdate::new(0, r + 1, 3, ParamVector::new(vec![*d]));
            w = aggregate_adaptive(&w, &[u], &mut state, kind, &cfg).map_err(|e| e.to_string())?;
            let err = (w.values[0] - want).abs();
            worst = worst.max(err);
            ensure(err < 1e-12, format!("{kind:?} round {}: {} vs {want}", r + 1, w.values[0]))?;
        }
    }
    Ok(format!("9 values, max error {worst:.1e}"))
}

fn adaptive_selection() -> Outcome {
    let model = small_model();
    let rounds = 6;
    let mut checked = 0;
    for seed in 0..4u64 {
        let (_, samples) = synth_generate(&small_corpus(15, seed)).map_err(|e| e.to_string())?;
        let data = features(&samples);
        let labels: Vec<Label> = data.iter().map(|s| s.label).collect();
        let cfg = FederationConfig {
            clients: 3,
            rounds,
            batch_size: Some(4),
            optimizer: LocalOptimizer::AdamW(AdamWConfig { lr: 1e-2, ..Default::default() }),
            aggregator: [Aggregator::FedAvg, Aggregator::FedAdam, Aggregator::FedYogi, Aggregator::FedProx { mu: 0.1 }][seed as usize],
            strategy: Strategy::Afl,
            partition: PartitionScheme::Dirichlet { alpha: 0.5 },
            seed,
            ..Default::default()
        };
        let w0 = FusionParams::init(&model, seed).flatten(&model);
        let shards = partition(&labels, cfg.partition, 3, seed).map_err(|e| e.to_string())?;
        let clients = shards
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let local: Vec<AlignedSample> = s.iter().map(|&j| data[j].clone()).collect();
                let ll: Vec<Label> = local.iter().map(|x| x.label).collect();
                let (tr, va) = stratified_split(&ll, 0.2, seed + i as u64).map_err(|e| e.to_string())?;
                let pick = |idx: &[usize]| idx.iter().map(|&j| local[j].clone()).collect::<Vec<_>>();
                ClientState::new(i, pick(&tr), pick(&va), &w0, &cfg).map_err(|e| e.to_string())
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut fed = Federation::new(cfg, model, clients, w0).map_err(|e| e.to_string())?;
        fed.run(None).map_err(|e| e.to_string())?;
        let deployed = fed.finalize().map_err(|e| e.to_string())?;
        for (c, d) in fed.clients.iter().zip(&deployed) {
            ensure(c.snapshots.len() == 2 * rounds, format!("client {} has {} snapshots", c.client_id, c.snapshots.len()))?;
            let best = select_best(&c.snapshots).ok_or("empty log")?;
            ensure(d.snapshot.as_ref() == Some(best), "deployed snapshot is not the argmax")?;
            let mine = evaluate(&d.params, &c.val, &model).map_err(|e| e.to_string())?;
            let global = evaluate(&fed.global, &c.val, &model).map_err(|e| e.to_string())?;
            ensure(mine == best.metrics, "deployed parameters do not reproduce the snapshot metrics")?;
            ensure(mine.accuracy >= global.accuracy, format!("seed {seed} client {} below final global", c.client_id))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} clients over 4 seeded runs"))
}

fn augmentation_invariants() -> Outcome {
    let mut checked = 0;
    for (seed, n, keep_ad) in [(1u64, 10, 10), (2, 12, 3), (3, 8, 1), (4, 20, 7)] {
        let cfg = SynthCorpusConfig { noise_std: 0.0, ..small_corpus(n, seed) };
        let (g, all) = synth_generate(&cfg).map_err(|e| e.to_string())?;
        // Unbalanced subsets too: all CN and the first `keep_ad` AD samples.
        let mut ad_seen = 0;
        let train: Vec<Sample> = all
            .into_iter()
            .filter(|s| {
                if s.label == Label::Ad {
                    ad_seen += 1;
                    ad_seen <= keep_ad
                } else {
                    true
                }
            })
            .collect();
        let out = augment_dataset(&train, seed, &g).map_err(|e| e.to_string())?;
        let count = |l| out.iter().filter(|s| s.label == l).count();
        ensure(count(Label::Ad) == count(Label::Cn) && count(Label::Ad) == train.len(), "class counts differ")?;
        let mut labels_by_speaker: BTreeMap<&str, BTreeSet<Label>> = BTreeMap::new();
        for s in &out {
            labels_by_speaker.entry(&s.speaker_id).or_default().insert(s.label);
        }
        ensure(labels_by_speaker.values().all(|ls| ls.len() == 2), "a speaker lacks one label")?;
        for aug in &out[train.len()..] {
            let (src_id, _) = aug.id.split_once('~').ok_or("augmented id lacks source")?;
            let source = train.iter().find(|s| s.id == src_id).ok_or("source not found")?;
            let target = train.iter().find(|s| s.speaker_id == aug.speaker_id).ok_or("target not found")?;
            let content = source.content.as_ref().ok_or("source without content")?;
            let expect = g.render(&target.speaker, &target.speaker_id, content, source.label).map_err(|e| e.to_string())?;
            ensure(aug.features == expect, format!("{} differs from the generator output", aug.id))?;
            ensure(aug.label == source.label && aug.speaker == target.speaker, "recombined fields wrong")?;
            checked += 1;
        }
    }
    Ok(format!("4 corpora, {checked} augmented samples bit-exact"))
}

fn desk_config(pathology: f64, pause_shift: f64) -> ExperimentConfig {
    let corpus = SynthCorpusConfig { n_per_class: 60, pathology_strength: pathology, pause_shift, ..Default::default() };
    ExperimentConfig {
        folds: 5,
        model: FusionConfig { hidden_dim: corpus.d, heads: 2, max_len: corpus.max_len, mlp_hidden: 16, ..FusionConfig::default() },
        federation: FederationConfig {
            clients: 3,
            rounds: 10,
            local_epochs: 1,
            batch_size: Some(16),
            optimizer: LocalOptimizer::AdamW(AdamWConfig { lr: 1e-2, ..Default::default() }),
            partition: PartitionScheme::Dirichlet { alpha: 0.5 },
            ..Default::default()
        },
        corpus: CorpusSource::Synthetic(corpus),
        seeds: (0..5).collect(),
        ..Default::default()
    }
}

fn per_seed(cfg: &ExperimentConfig) -> Result<Vec<f64>, String> {
    let r = run_experiment(cfg).map_err(|e| e.to_string())?;
    Ok(r.per_seed.iter().map(|s| s.metrics.accuracy).collect())
}

fn fmt(v: &[f64]) -> String {
    v.iter().map(|x| format!("{:.3}", x)).collect::<Vec<_>>().join(" ")
}

fn paradigm_ordering() -> Outcome {
    let start = Instant::now();
    let base = desk_config(0.6, 0.25);
    let ll = per_seed(&ExperimentConfig { paradigm: Paradigm::Local, ..base.clone() })?;
    let fl = per_seed(&ExperimentConfig { paradigm: Paradigm::Federated, ..base.clone() })?;
    let fl_aug = per_seed(&ExperimentConfig { paradigm: Paradigm::Federated, augment: true, ..base })?;
    let secs = start.elapsed().as_secs_f64();
    let fl_over_ll = fl.iter().zip(&ll).filter(|(f, l)| f > l).count();
    let aug_over_fl = fl_aug.iter().zip(&fl).filter(|(a, f)| a >= f).count();
    let detail = format!(
        "LL [{}] FL [{}] FL+Aug [{}]; FL>LL {fl_over_ll}/5, FL+Aug>=FL {aug_over_fl}/5, {secs:.0}s",
        fmt(&ll),
        fmt(&fl),
        fmt(&fl_aug)
    );
    ensure(fl_over_ll >= 4 && aug_over_fl >= 3 && secs < 600.0, detail.clone())?;
    Ok(detail)
}

fn null_signal() -> Outcome {
    let base = desk_config(0.0, 0.0);
    let mut parts = Vec::new();
    for paradigm in [Paradigm::Centralized, Paradigm::Federated] {
        let accs = per_seed(&ExperimentConfig { paradigm, ..base.clone() })?;
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        let line = format!("{} mean {mean:.3} [{}]", paradigm.name(), fmt(&accs));
        ensure((mean - 0.5).abs() <= 0.1, line.clone())?;
        parts.push(line);
    }
    Ok(parts.join("; "))
}

fn determinism() -> Outcome {
    let cfg = ExperimentConfig {
        folds: 3,
        augment: true,
        model: small_model(),
        federation: FederationConfig {
            clients: 3,
            rounds: 3,
            batch_size: Some(4),
            optimizer: LocalOptimizer::AdamW(AdamWConfig { lr: 1e-2, ..Default::default() }),
            aggregator: Aggregator::FedYogi,
            strategy: Strategy::Afl,
            partition: PartitionScheme::Dirichlet { alpha: 0.5 },
            ..Default::default()
        },
        corpus: CorpusSource::Synthetic(small_corpus(15, 0)),
        seeds: vec![3, 4],
        ..Default::default()
    };
    let json = |workers: Option<usize>| -> Result<String, String> {
        let r = run_experiment(&ExperimentConfig { workers, ..cfg.clone() }).map_err(|e| e.to_string())?;
        serde_json::to_string(&r).map_err(|e| e.to_string())
    };
    let a = json(None)?;
    ensure(a == json(None)?, "two runs differ")?;
    ensure(a == json(Some(1))?, "1-worker run differs")?;
    ensure(a == json(Some(4))?, "4-worker run differs")?;
    Ok(format!("{} bytes identical across repeat, 1 and 4 workers", a.len()))
}

fn alignment_tables() -> Outcome {
    let th = PauseThresholds { comma: 0.5, period: 1.0, ellipsis: 2.0 };
    let words = |gaps: &[f64]| {
        let mut t = 0.0;
        let mut out = vec![TimedWord::new("w0", 0.0, 0.3)];
        t += 0.3;
        for (i, g) in gaps.iter().enumerate() {
            t += g;
            out.push(TimedWord::new(format!("w{}", i + 1), t, t + 0.3));
            t += 0.3;
        }
        out
    };
    let markers = |toks: &[Token]| toks.iter().filter_map(|t| t.pause).collect::<Vec<_>>();
    let pause_cases: [(&[f64], Vec<PauseKind>); 3] = [
        (&[0.1], vec![]),
        (&[0.7, 1.5, 2.5], vec![PauseKind::Comma, PauseKind::Period, PauseKind::Ellipsis]),
        (&[], vec![]),
    ];
    for (gaps, want) in pause_cases {
        let toks = insert_pause_tokens(&words(gaps), &th).map_err(|e| e.to_string())?;
        ensure(markers(&toks) == want, format!("gaps {gaps:?}"))?;
        ensure(toks.len() == gaps.len() + 1 + want.len(), "token count")?;
    }

    let frames = |vals: &[f64]| {
        FrameFeatures::new(10.0, Tensor2::from_rows(&vals.iter().map(|&v| vec![v, 2.0 * v]).collect::<Vec<_>>()).unwrap())
            .unwrap()
    };
    let pooled = pool_frames_to_words(&frames(&[1.0, 2.0, 3.0]), &[TimedWord::new("w", 0.0, 0.3)]).map_err(|e| e.to_string())?;
    ensure(pooled.row(0) == [2.0, 4.0], "mean of three frames")?;
    let pooled = pool_frames_to_words(&frames(&[1.0, 2.0, 3.0]), &[TimedWord::new("w", 0.1, 0.2)]).map_err(|e| e.to_string())?;
    ensure(pooled.row(0) == [2.0, 4.0], "single frame")?;
    let vals = [1.0, 4.0, 2.0, 8.0, 5.0, 7.0];
    let split = [TimedWord::new("a", 0.0, 0.2), TimedWord::new("b", 0.2, 0.6)];
    let pooled = pool_frames_to_words(&frames(&vals), &split).map_err(|e| e.to_string())?;
    let (mut sums, mut counts) = ([0.0; 2], [0.0; 2]);
    for (i, v) in vals.iter().enumerate() {
        let w = usize::from(i as f64 / 10.0 >= 0.2);
        sums[w] += v;
        counts[w] += 1.0;
    }
    ensure(pooled.row(0)[0] == sums[0] / counts[0] && pooled.row(1)[0] == sums[1] / counts[1], "grouping oracle")?;

    let toks: Vec<Token> = ["a", ",", "b", "c"]
        .iter()
        .enumerate()
        .map(|(i, t)| Token {
            text: t.to_string(),
            start: i as f64,
            end: i as f64 + 0.5,
            pause: (*t == ",").then_some(PauseKind::Comma),
        })
        .collect();
    let s = build_aligned_sample(&toks, &Tensor2::from_vec(3, 2, vec![1.0; 6]).unwrap(), &Tensor2::from_vec(4, 2, vec![1.0; 8]).unwrap(), 200, Label::Ad, "s")
        .map_err(|e| e.to_string())?;
    let t_true = s.mask_text.iter().filter(|&&m| m).count();
    let a_true = s.mask_audio.iter().filter(|&&m| m).count();
    ensure((t_true, a_true) == (4, 3), format!("mask counts {t_true}/{a_true}"))?;
    let long: Vec<Token> = (0..250).map(|i| Token { text: format!("w{i}"), start: i as f64, end: i as f64 + 0.5, pause: None }).collect();
    let s = build_aligned_sample(&long, &Tensor2::zeros(250, 2), &Tensor2::zeros(250, 2), 200, Label::Cn, "s").map_err(|e| e.to_string())?;
    ensure(s.audio.rows() == 200 && s.text.rows() == 200 && s.mask_text.len() == 200, "truncation")?;
    let err = build_aligned_sample(&[], &Tensor2::zeros(0, 2), &Tensor2::zeros(0, 2), 200, Label::Cn, "s")
        .err()
        .map(|e| e.to_string());
    ensure(err.as_deref() == Some("empty sequence"), "empty transcript")?;
    Ok("pause, pooling, and padding tables match".into())
}

#[test]
fn acceptance() {
    let criteria: [Check; 11] = [
        ("1 gradient fidelity", gradient_fidelity),
        ("2 weighted-average exactness", fedavg_exactness),
        ("3 federated/centralized equivalence", federated_matches_centralized),
        ("4 FedProx(0) equals FedAvg", fedprox_zero_is_fedavg),
        ("5 adaptive aggregator oracles", adaptive_oracles),
        ("6 adaptive selection", adaptive_selection),
        ("7 augmentation invariants", augmentation_invariants),
        ("8 paradigm ordering", paradigm_ordering),
        ("9 null signal", null_signal),
        ("10 determinism", determinism),
        ("11 alignment tables", alignment_tables),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                println!("FAIL {name}: {detail}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
