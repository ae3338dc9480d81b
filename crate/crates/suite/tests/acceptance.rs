//! Acceptance suite. Run with `cargo test -p ran-suite --test acceptance`;
//! extra arguments (`AC3 AC7`) select criteria. Prints one line per
//! criterion and exits non-zero when any of them fails.

use std::io::{self, Write};
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ran_cli::commands::{cmd_bench, cmd_train, BENCH_HEADER};
use ran_cli::dataset::prepare;
use ran_cli::{Checkpoint, RunConfig};
use ran_core::attention::{build_mask, pmhsa, AttentionParams, MaskKind, Positions, WindowLayout};
use ran_core::config::{Ablations, ModelConfig, Task};
use ran_core::data::{synth_longrange, Label, TokenizedDocument, NUM_RESERVED};
use ran_core::memory_review::{review, MemoryBank};
use ran_core::numerics::{Graph, ParamStore, Tensor};
use ran_core::rope::{apply_rotary, RotaryTable};
use ran_core::training::{
    adam_step, batch_gradients, conlleval_counts, evaluate, grad_check_matrix, row_targets, AdamState,
    GRAD_CHECK_TOLERANCE,
};
use ran_core::RanModel;

type M = Vec<Vec<f64>>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

const CRITERIA: &[(&str, &str, fn() -> Outcome)] = &[
    ("AC1", "gradient fidelity", ac1_gradient_fidelity),
    ("AC2", "oracle equivalence", ac2_oracle_equivalence),
    ("AC3", "LM causality", ac3_lm_causality),
    ("AC4", "recurrence locality", ac4_recurrence_locality),
    ("AC5", "rotary shift invariance", ac5_rotary),
    ("AC6", "memory-review ablation trend", ac6_ablation_trend),
    ("AC7", "char LM", ac7_char_lm),
    ("AC8", "synthetic tagging", ac8_tagging),
    ("AC9", "bench trend", ac9_bench),
    ("AC10", "persistence", ac10_persistence),
];

fn main() {
    let wanted: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for &(id, name, run) in CRITERIA {
        if !wanted.is_empty() && !wanted.iter().any(|w| w.eq_ignore_ascii_case(id)) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.pass {
            failed += 1;
        }
        let mut out = io::stdout().lock();
        writeln!(
            out,
            "{id} {name}: {} ({}; {:.1}s)",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            start.elapsed().as_secs_f64()
        )
        .unwrap();
        out.flush().unwrap();
    }
    writeln!(io::stdout(), "{} of {ran} criteria passed", ran - failed).unwrap();
    if failed > 0 {
        std::process::exit(1);
    }
}

// Naive references.

fn random(rng: &mut impl Rng, r: usize, c: usize) -> M {
    (0..r).map(|_| (0..c).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn rows(t: &Tensor<f64>) -> M {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn tensor(m: &M) -> Tensor<f64> {
    Tensor::from_rows(m).unwrap()
}

fn affine(x: &M, w: &Tensor<f64>, b: &Tensor<f64>) -> M {
    x.iter()
        .map(|row| {
            (0..w.cols())
                .map(|c| b.data()[c] + row.iter().enumerate().map(|(i, xi)| xi * w.get(i, c)).sum::<f64>())
                .collect()
        })
        .collect()
}

/// Rotate consecutive pairs of one head's slice by `pos * base^(-2j/dh)`.
fn rotate_row(row: &[f64], pos: usize, base: f64) -> Vec<f64> {
    let dh = row.len();
    let mut out = row.to_vec();
    for j in 0..dh / 2 {
        let a = pos as f64 * base.powf(-2.0 * j as f64 / dh as f64);
        let (x, y) = (row[2 * j], row[2 * j + 1]);
        out[2 * j] = x * a.cos() - y * a.sin();
        out[2 * j + 1] = x * a.sin() + y * a.cos();
    }
    out
}

/// `softmax(q k^T / sqrt(dk) + mask) v` with `visible[r][c]` as the mask.
fn naive_attention(q: &M, k: &M, v: &M, visible: &[Vec<bool>]) -> M {
    let dk = q[0].len() as f64;
    q.iter()
        .zip(visible)
        .map(|(qi, vis)| {
            let s: Vec<Option<f64>> = k
                .iter()
                .zip(vis)
                .map(|(kj, &ok)| ok.then(|| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / dk.sqrt()))
                .collect();
            let mx = s.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = s.iter().map(|x| x.map_or(0.0, |x| (x - mx).exp())).collect();
            let z: f64 = e.iter().sum();
            let mut out = vec![0.0; v[0].len()];
            for (w, vj) in e.iter().zip(v) {
                for (o, x) in out.iter_mut().zip(vj) {
                    *o += w / z * x;
                }
            }
            out
        })
        .collect()
}

fn max_abs_diff(a: &M, b: &M) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn bits(t: &Tensor<f32>) -> Vec<u32> {
    t.data().iter().map(|x| x.to_bits()).collect()
}

// Criteria.

fn ac1_gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let reports = match grad_check_matrix(0) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("grad check errored: {e}")),
    };
    let worst = reports.iter().map(|r| r.max_rel_err()).fold(0.0, f64::max);
    let failing: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.label.as_str()).collect();
    let elapsed = start.elapsed();
    let pass = reports.len() == 18 && failing.is_empty() && worst < GRAD_CHECK_TOLERANCE && elapsed < Duration::from_secs(300);
    outcome(
        pass,
        format!(
            "{} cases, max rel err {worst:.2e} < {GRAD_CHECK_TOLERANCE:e}, failing {:?}, {:.0}s < 300s",
            reports.len(),
            failing,
            elapsed.as_secs_f64()
        ),
    )
}

fn visible_in_window(kind: MaskKind, w: usize, valid: &[bool], offset: usize, prefix: usize, strict: bool) -> Vec<Vec<bool>> {
    (0..=w)
        .map(|r| {
            (0..=w)
                .map(|c| {
                    if c == 0 {
                        return true;
                    }
                    let tok = c - 1;
                    if !valid[tok] {
                        return false;
                    }
                    match kind {
                        MaskKind::Full => true,
                        _ if r == 0 => !strict,
                        MaskKind::Causal => tok < r,
                        MaskKind::PrefixCausal => offset + tok < offset + r || offset + tok < prefix,
                    }
                })
                .collect()
        })
        .collect()
}

fn ac2_oracle_equivalence() -> Outcome {
    const TOL: f64 = 1e-8;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_pmhsa: f64 = 0.0;
    for _ in 0..100 {
        let heads = [1, 2, 4][rng.random_range(0..3)];
        let dh = [2, 4, 6][rng.random_range(0..3)];
        let d = heads * dh;
        let w = rng.random_range(1..10);
        let kind = [MaskKind::Full, MaskKind::Causal, MaskKind::PrefixCausal][rng.random_range(0..3)];
        let mut valid: Vec<bool> = (0..w).map(|_| rng.random_bool(0.8)).collect();
        let n_valid = rng.random_range(1..=w);
        valid.iter_mut().skip(n_valid).for_each(|v| *v = false);
        let offset = rng.random_range(0..20);
        let prefix = rng.random_range(0..30);
        let strict = rng.random_bool(0.5);
        let with_output = rng.random_bool(0.5);
        let base = 10_000.0;

        let mut store = ParamStore::<f64>::new();
        let p = AttentionParams::register(&mut store, "a", d, with_output, 0.4, &mut rng);
        for id in [p.bq, p.bk, p.bv] {
            store.get_mut(id).data_mut().iter_mut().for_each(|x| *x = rng.random_range(-0.2..0.2));
        }
        let x = random(&mut rng, w + 1, d);
        let positions: Vec<Option<usize>> = (0..=w).map(|r| (r > 0 || rng.random_bool(0.5)).then(|| rng.random_range(0..40))).collect();
        let table = RotaryTable::<f64>::new(dh, 40, base).unwrap();
        let layout = WindowLayout {
            valid: &valid,
            offset,
            prefix_len: prefix,
            strict_gpc: strict,
        };
        let mask = build_mask::<f64>(kind, w, layout).unwrap();
        let mut g = Graph::inference(&store);
        let xv = g.constant(tensor(&x));
        let got = pmhsa(&mut g, xv, &p, &mask, heads, Some(Positions { table: &table, rows: &positions })).unwrap();
        let got = rows(g.value(got));

        let q = affine(&x, store.get(p.wq), store.get(p.bq));
        let k = affine(&x, store.get(p.wk), store.get(p.bk));
        let v = affine(&x, store.get(p.wv), store.get(p.bv));
        let vis = visible_in_window(kind, w, &valid, offset, prefix, strict);
        let mut cat = vec![Vec::new(); w + 1];
        for h in 0..heads {
            let cols = |m: &M, rotate: bool| -> M {
                m.iter()
                    .zip(&positions)
                    .map(|(r, p)| {
                        let s = &r[h * dh..(h + 1) * dh];
                        match (rotate, p) {
                            (true, Some(p)) => rotate_row(s, *p, base),
                            _ => s.to_vec(),
                        }
                    })
                    .collect()
            };
            let out = naive_attention(&cols(&q, true), &cols(&k, true), &cols(&v, false), &vis);
            for (c, o) in cat.iter_mut().zip(out) {
                c.extend(o);
            }
        }
        let want = match p.out {
            Some((wo, bo)) => affine(&cat, store.get(wo), store.get(bo)),
            None => cat,
        };
        worst_pmhsa = worst_pmhsa.max(max_abs_diff(&got, &want));
    }

    let mut worst_review: f64 = 0.0;
    for _ in 0..100 {
        let d = [2, 4, 8][rng.random_range(0..3)];
        let w = rng.random_range(1..6);
        let m = rng.random_range(1..5);
        let len = rng.random_range((m - 1) * w + 1..=m * w);
        let causal = rng.random_bool(0.5);
        let mut store = ParamStore::<f64>::new();
        let p = AttentionParams::register(&mut store, "review", d, false, 0.5, &mut rng);
        for id in [p.bq, p.bk, p.bv] {
            store.get_mut(id).data_mut().iter_mut().for_each(|x| *x = rng.random_range(-0.2..0.2));
        }
        let o = random(&mut rng, len, d);
        let states = random(&mut rng, m + 1, d);
        let mut g = Graph::inference(&store);
        let ov = g.constant(tensor(&o));
        let init = g.constant(tensor(&vec![states[0].clone()]));
        let vars: Vec<_> = states[1..].iter().map(|r| g.constant(tensor(&vec![r.clone()]))).collect();
        let bank = MemoryBank::from_states(&mut g, init, &vars).unwrap();
        let got = review(&mut g, ov, &bank, &p, w, causal).unwrap();
        let got = rows(g.value(got));

        // Keys are [G_0; G_1..G_m] when causal, [G_1..G_m] otherwise.
        let keys: M = if causal { states.clone() } else { states[1..].to_vec() };
        let vis: Vec<Vec<bool>> = (0..len)
            .map(|t| {
                let i = t / w;
                (0..keys.len())
                    .map(|c| match causal {
                        false => true,
                        true if i == 0 => c == 0,
                        true => c >= 1 && c <= i,
                    })
                    .collect()
            })
            .collect();
        let q = affine(&o, store.get(p.wq), store.get(p.bq));
        let k = affine(&keys, store.get(p.wk), store.get(p.bk));
        let v = affine(&keys, store.get(p.wv), store.get(p.bv));
        worst_review = worst_review.max(max_abs_diff(&got, &naive_attention(&q, &k, &v, &vis)));
    }
    outcome(
        worst_pmhsa <= TOL && worst_review <= TOL,
        format!("100 + 100 instances, max |diff| pmhsa {worst_pmhsa:.2e}, review {worst_review:.2e}, tol {TOL:e}"),
    )
}

fn causal_lm_model(seed: u64, depth: usize) -> RanModel<f32> {
    let mut cfg = ModelConfig::new(Task::Lm, NUM_RESERVED + 16, 0);
    cfg.max_len = 64;
    cfg.window = 8;
    cfg.dim = 8;
    cfg.heads = 2;
    cfg.depth = depth;
    cfg.init_std = 0.5;
    RanModel::new(cfg, seed).unwrap()
}

fn random_doc(rng: &mut impl Rng, len: usize, vocab: usize) -> TokenizedDocument {
    let ids = (0..len).map(|_| rng.random_range(NUM_RESERVED..vocab)).collect();
    TokenizedDocument::from_ids(ids, len, Label::None)
}

fn ac3_lm_causality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut leaks, mut trials, mut crossing, mut influential) = (0, 0, 0, 0);
    for model_seed in 0..50u64 {
        let model = causal_lm_model(model_seed, 1 + (model_seed as usize % 2));
        let vocab = model.config.vocab_size;
        for _ in 0..20 {
            let doc = random_doc(&mut rng, 64, vocab);
            let t = rng.random_range(1..64);
            let mut other = doc.clone();
            while other.ids[t] == doc.ids[t] {
                other.ids[t] = rng.random_range(NUM_RESERVED..vocab);
            }
            let (a, b) = (model.logits(&doc).unwrap(), model.logits(&other).unwrap());
            trials += 1;
            if t / 8 < 7 {
                crossing += 1;
            }
            if bits(&a.slice_rows(0, t)) != bits(&b.slice_rows(0, t)) {
                leaks += 1;
            }
            if bits(&a.slice_rows(t, 64 - t)) != bits(&b.slice_rows(t, 64 - t)) {
                influential += 1;
            }
        }
    }
    outcome(
        trials == 1000 && leaks == 0 && influential == trials,
        format!("{trials} trials ({crossing} with later windows), {leaks} leaked into earlier logits, {influential} changed later logits"),
    )
}

fn ac4_recurrence_locality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut trials, mut broken) = (0, 0);
    for model_seed in 0..50u64 {
        let mut cfg = ModelConfig::new(
            if model_seed % 2 == 0 { Task::Classify } else { Task::Lm },
            NUM_RESERVED + 16,
            2,
        );
        cfg.max_len = 64;
        cfg.window = 8;
        cfg.dim = 8;
        cfg.heads = 2;
        cfg.depth = 1 + (model_seed as usize / 2) % 2;
        cfg.init_std = 0.5;
        let model = RanModel::<f32>::new(cfg, model_seed).unwrap();
        let pre_review = |doc: &TokenizedDocument| -> Vec<(Vec<u32>, Vec<u32>)> {
            let mut g = Graph::inference(&model.params);
            let f = model.forward(&mut g, &doc.ids, &doc.valid()).unwrap();
            f.stack
                .windows
                .iter()
                .zip(&f.stack.history)
                .map(|(w, s)| (bits(g.value(*w)), bits(g.value(s.value))))
                .collect()
        };
        for _ in 0..20 {
            let doc = random_doc(&mut rng, 64, NUM_RESERVED + 16);
            let i = rng.random_range(0..7);
            let mut other = doc.clone();
            for t in (i + 1) * 8..64 {
                other.ids[t] = rng.random_range(NUM_RESERVED..NUM_RESERVED + 16);
            }
            let (a, b) = (pre_review(&doc), pre_review(&other));
            trials += 1;
            if a[..=i] != b[..=i] {
                broken += 1;
            }
        }
    }
    outcome(
        trials == 1000 && broken == 0,
        format!("{trials} trials, {broken} with earlier window outputs or states changed"),
    )
}

fn ac5_rotary() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst_logit, mut worst_norm): (f64, f64) = (0.0, 0.0);
    for _ in 0..200 {
        let dim = 2 * rng.random_range(1..33);
        let n = rng.random_range(1..9);
        let q = tensor(&random(&mut rng, n, dim));
        let k = tensor(&random(&mut rng, n, dim));
        let pos: Vec<usize> = (0..n).map(|_| rng.random_range(0..512)).collect();
        let shift = rng.random_range(1..1024);
        let moved: Vec<usize> = pos.iter().map(|p| p + shift).collect();
        let logits = |pq: &[usize], pk: &[usize]| -> M {
            let (rq, rk) = (apply_rotary(&q, pq, 10_000.0).unwrap(), apply_rotary(&k, pk, 10_000.0).unwrap());
            (0..n)
                .map(|i| (0..n).map(|j| rq.row(i).iter().zip(rk.row(j)).map(|(a, b)| a * b).sum()).collect())
                .collect()
        };
        worst_logit = worst_logit.max(max_abs_diff(&logits(&pos, &pos), &logits(&moved, &moved)));
        let r = apply_rotary(&q, &moved, 10_000.0).unwrap();
        for i in 0..n {
            let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
            worst_norm = worst_norm.max((norm(r.row(i)) - norm(q.row(i))).abs());
        }
    }
    outcome(
        worst_logit <= 1e-8 && worst_norm <= 1e-9,
        format!("200 instances, logit drift {worst_logit:.2e} <= 1e-8, norm drift {worst_norm:.2e} <= 1e-9"),
    )
}

/// Adam on shuffled batches until the time budget is spent, then test accuracy.
fn train_for(model: &mut RanModel<f32>, train: &[TokenizedDocument], test: &[TokenizedDocument], budget: Duration, seed: u64) -> (f64, usize) {
    let start = Instant::now();
    let mut opt = AdamState::new(&model.params, 1e-3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut steps = 0;
    'outer: loop {
        order.shuffle(&mut rng);
        for chunk in order.chunks(16) {
            if start.elapsed() >= budget {
                break 'outer;
            }
            let batch: Vec<TokenizedDocument> = chunk.iter().map(|&i| train[i].clone()).collect();
            let (_, grads) = batch_gradients(model, &batch, true).unwrap();
            adam_step(&mut model.params, &grads, &mut opt).unwrap();
            steps += 1;
        }
    }
    (evaluate(model, test, None, true).unwrap().metric, steps)
}

fn ac6_ablation_trend() -> Outcome {
    let start = Instant::now();
    let (n, len, window) = (20_000, 1024, 128);
    let set = synth_longrange(n, len, window, 6);
    let (train, test) = set.docs.split_at(n * 9 / 10);
    let variants = [
        ("full", Ablations::default()),
        ("no_memory_review", Ablations { no_memory_review: true, ..Default::default() }),
        ("avg_pool", Ablations { avg_pool: true, ..Default::default() }),
        ("no_residual", Ablations { no_residual: true, ..Default::default() }),
    ];
    // 30 minutes split evenly, leaving room for the four test passes.
    let budget = Duration::from_secs(420);
    let mut acc = Vec::new();
    let mut detail = Vec::new();
    for (name, ablations) in variants {
        let mut cfg = ModelConfig::new(Task::Classify, set.vocab.len(), 2);
        cfg.max_len = len;
        cfg.window = window;
        cfg.depth = 2;
        cfg.dim = 64;
        cfg.heads = 2;
        cfg.init_std = 0.1;
        cfg.ablations = ablations;
        let mut model = RanModel::<f32>::new(cfg, 6).unwrap();
        let (a, steps) = train_for(&mut model, train, test, budget, 6);
        detail.push(format!("{name} {a:.1}% ({steps} steps)"));
        acc.push(a);
    }
    let elapsed = start.elapsed();
    let pass = acc[0] >= 95.0 && acc[1] <= acc[0] - 10.0 && acc[2] <= acc[0] && acc[3] <= acc[0] && elapsed < Duration::from_secs(1800);
    outcome(
        pass,
        format!(
            "{}; need full >= 95, no_memory_review <= full - 10, others <= full, under 1800s",
            detail.join(", ")
        ),
    )
}

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data")
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../cli/tests/fixtures").join(name)
}

fn ac7_char_lm() -> Outcome {
    let text = data_dir().join("moby_dick.txt");
    let cfg = RunConfig::parse(&format!(
        "task=lm\ntrain_path={}\neval_fraction=0.05\nmax_len=512\nwindow=256\ndim=64\nheads=2\ndepth=1\n\
         lr=3e-3\nbatch_size=8\nepochs=3\nseed=1\n",
        text.display()
    ))
    .unwrap();
    let data = prepare(&cfg).unwrap();
    // Add-one unigram fitted on the training stream, scored on the
    // validation targets.
    let v = data.vocab.len();
    let mut counts = vec![1.0f64; v];
    for d in &data.train {
        for &id in &d.ids[..d.true_length] {
            counts[id] += 1.0;
        }
    }
    let total: f64 = counts.iter().sum();
    let (mut nll, mut n) = (0.0, 0usize);
    for d in &data.eval {
        for t in row_targets(d).into_iter().flatten() {
            nll -= (counts[t] / total).ln();
            n += 1;
        }
    }
    let unigram = (nll / n as f64).exp();
    let summary = cmd_train(&cfg, None, &mut Vec::new()).unwrap();
    let ppl: Vec<f64> = summary.log.iter().map(|l| l.metric).collect();
    let decreasing = ppl.windows(2).all(|w| w[1] < w[0]);
    let pass = ppl.len() == 3 && decreasing && ppl[2] < unigram;
    outcome(
        pass,
        format!("{} chars of text, unigram perplexity {unigram:.3}, per-epoch validation perplexity {ppl:.3?}", n),
    )
}

fn read_fixture(name: &str) -> Vec<(Vec<String>, Vec<String>)> {
    let text = std::fs::read_to_string(fixture(name)).unwrap();
    let mut out = Vec::new();
    let (mut gold, mut pred) = (Vec::new(), Vec::new());
    for line in text.lines().chain(std::iter::once("")) {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            if !gold.is_empty() {
                out.push((std::mem::take(&mut gold), std::mem::take(&mut pred)));
            }
            continue;
        }
        gold.push(cols[cols.len() - 2].to_string());
        pred.push(cols[cols.len() - 1].to_string());
    }
    out
}

fn ac8_tagging() -> Outcome {
    // (correct, guessed, found) and the F1 printed by the reference script.
    let frozen = [
        ("conll_basic.txt", (3, 5, 5), 60.0),
        ("conll_orphans.txt", (1, 7, 8), 13.33),
        ("conll_boundaries.txt", (4, 7, 6), 61.54),
    ];
    let mut fixtures_ok = true;
    for (name, (c, g, f), f1) in frozen {
        let counts = conlleval_counts(&read_fixture(name));
        let same = (counts.correct, counts.guessed, counts.found) == (c, g, f) && format!("{:.2}", counts.f1()) == format!("{f1:.2}");
        fixtures_ok &= same;
    }
    let cfg = RunConfig::parse(
        "task=tag\ndata=synth_conll\nsynth_n=3000\nsynth_sentence_len=48\nmax_len=64\nwindow=64\ndim=64\nheads=2\n\
         lr=1e-3\nclip_norm=1.0\nbatch_size=16\nepochs=8\nseed=1\n",
    )
    .unwrap();
    let summary = cmd_train(&cfg, None, &mut Vec::new()).unwrap();
    let f1 = summary.best.metric;
    outcome(
        f1 >= 99.0 && fixtures_ok,
        format!("entity F1 {f1:.2} >= 99, fixtures match reference counts: {fixtures_ok}"),
    )
}

fn ac9_bench() -> Outcome {
    let cfg = RunConfig::parse(
        "task=classify\ndata=synth_longrange\nsynth_n=200\nmax_len=512\ndim=32\nheads=2\nepochs=1\nbatch_size=8\nwindow=8\n",
    )
    .unwrap();
    let mut csv = Vec::new();
    let rows = cmd_bench(&cfg, &[8, 32, 128, 512], &mut csv).unwrap();
    let csv = String::from_utf8(csv).unwrap();
    let mut lines = csv.lines();
    let header_ok = lines.next() == Some(BENCH_HEADER);
    let parsed: Vec<(usize, f64, f64, usize)> = lines
        .filter_map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            Some((f.first()?.parse().ok()?, f.get(1)?.parse().ok()?, f.get(2)?.parse().ok()?, f.get(3)?.parse().ok()?))
        })
        .collect();
    let parse_ok = header_ok && parsed.len() == 4 && parsed.iter().zip(&rows).all(|(p, r)| p.0 == r.window);
    let secs: Vec<f64> = parsed.iter().map(|p| p.1).collect();
    let trend = parse_ok && secs[0] > secs[2];
    outcome(
        parse_ok && trend,
        format!("seconds/epoch at W=8,32,128,512: {secs:.3?}; CSV parsed: {parse_ok}"),
    )
}

fn ac10_persistence() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::parse(
        "task=classify\ndata=synth_longrange\nsynth_n=64\nmax_len=32\nwindow=8\ndim=16\nheads=2\nepochs=2\nbatch_size=8\nseed=3\n",
    )
    .unwrap();
    let path = dir.path().join("m.ckpt");
    let a = cmd_train(&cfg, Some(&path), &mut Vec::new()).unwrap();
    let b = cmd_train(&cfg, None, &mut Vec::new()).unwrap();
    let log_bits = |s: &ran_cli::commands::TrainSummary| -> Vec<(usize, u64, u64)> {
        s.log.iter().map(|l| (l.step, l.loss.to_bits(), l.metric.to_bits())).collect()
    };
    let logs_equal = log_bits(&a) == log_bits(&b) && !a.log.is_empty();

    let bytes = std::fs::read(&path).unwrap();
    let loaded = Checkpoint::<f32>::from_bytes(&bytes).unwrap();
    let bytes_equal = loaded.to_bytes() == bytes;
    let model = loaded.model().unwrap();
    let data = prepare(&cfg).unwrap();
    let report = evaluate(&model, &data.eval, None, true).unwrap();
    let eval_equal = report.loss.to_bits() == a.best.loss.to_bits();
    let path2 = dir.path().join("again.ckpt");
    Checkpoint::from_model(&model, &loaded.vocab, &loaded.labels, loaded.optimizer.as_ref())
        .save(&path2)
        .unwrap();
    let resaved_equal = std::fs::read(&path2).unwrap() == bytes;
    outcome(
        logs_equal && bytes_equal && eval_equal && resaved_equal,
        format!(
            "seeded logs identical: {logs_equal}; reload bytes: {bytes_equal}; resave bytes: {resaved_equal}; reloaded eval loss bit-exact: {eval_equal}"
        ),
    )
}
