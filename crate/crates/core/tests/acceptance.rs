//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Trained checkpoints and the evaluator embedder are cached under the
//! cargo target tmp directory and reused only when their run config matches.
//! `VQAI_ACCEPTANCE=1,4,7` restricts the run to the listed criteria.

mod common;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use vqai_core::config::RunConfig;
use vqai_core::diffusion::Sampler;
use vqai_core::eval::{
    auc, category_columns, cosine, decode_state, fid, generate_candidates, render_category_table,
    render_method_table, score_method, sim_avg, sim_best_at_k, threshold_grid, EmbedderConfig, EvalReport,
    EvalSample, MethodReport, MetricRow, DEFAULT_K, FID_EPS, GRID_POINTS, TOTAL,
};
use vqai_core::heads::{ccpc_loss, Paradigm};
use vqai_core::ingest::{segment_frames, split, Segment, SplitSpec};
use vqai_core::microworld::{
    apply_condition, category_faithful, make_dataset, make_records, render, sample_record, Category,
    DatasetConfig, Image, SampleRecord,
};
use vqai_core::trainer::{initial_checkpoint, node_pool, total_loss, train, Checkpoint, Example, Silent};
use vqai_core::{Embedder32, Graph, ParamStore, Tensor};

// Criterion 1
const ORACLE_INSTANCES: usize = 1000;
const ORACLE_TOL: f64 = 1e-9;
const FID_TOL: f64 = 1e-6;
// Criterion 2
const GRAD_PROBES: usize = 10;
const GRAD_STEP: f64 = 1e-4;
const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_MIN_MAGNITUDE: f64 = 1e-6;
// Criterion 3
const CLOSURE_SAMPLES: usize = 10_000;
// Criterion 4
const OVERFIT_STEPS: usize = 500;
const OVERFIT_BATCH: usize = 4;
const OVERFIT_LR: f64 = 1e-3;
const OVERFIT_WINDOW: usize = 50;
const OVERFIT_LOSS: f64 = 0.05;
const OVERFIT_COSINE: f64 = 0.95;
// Criteria 4-6
const SAMPLE_STEPS: usize = 50;
// Criterion 5
const TREND_TRAIN: usize = 2000;
const TREND_TEST: usize = 200;
const TREND_SEEDS: [u64; 3] = [0, 1, 2];
const TREND_SPREAD: f64 = 0.01;
const TREND_STATE_GAP: f64 = 0.03;
const TREND_MIN_SEEDS: usize = 2;
// Criterion 6
const ABLATION_P: f64 = 0.05;
// Criterion 7
const MCCS_STEPS: usize = 400;
const MCCS_LR: f64 = 1e-3;
// Criterion 9
const MANIFEST_SIZE: usize = 17_524;
const SPLIT_SIZES: (usize, usize, usize) = (15_524, 1000, 1000);
// Criterion 10
const SEGMENT_CASES: usize = 300;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

type Check = fn(&mut Ctx) -> Outcome;

fn main() {
    let only: Option<BTreeSet<usize>> = std::env::var("VQAI_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let checks: [(usize, &str, Check); 10] = [
        (1, "metric oracles", c1_metric_oracles),
        (2, "gradient checks", c2_gradients),
        (3, "microworld closure", c3_closure),
        (4, "overfit smoke test", c4_overfit),
        (5, "paradigm ordering trend", c5_paradigm_trend),
        (6, "contrastive ablation trend", c6_ccpc_ablation),
        (7, "chain decoder fidelity", c7_mccs_fidelity),
        (8, "determinism", c8_determinism),
        (9, "splits and bookkeeping", c9_bookkeeping),
        (10, "segmentation properties", c10_segmentation),
    ];
    let mut ctx = Ctx::new();
    let mut failed = Vec::new();
    for (id, name, check) in checks {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t = Instant::now();
        let out = check(&mut ctx);
        let verdict = if out.pass { "PASS" } else { "FAIL" };
        println!("{verdict} criterion {id} ({name}): {} [{:.1}s]", out.detail, t.elapsed().as_secs_f64());
        if !out.pass {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("{} criteria failed: {failed:?}", failed.len());
        std::process::exit(1);
    }
}

/// Lazily built shared state: cache directory, evaluator and trend data.
struct Ctx {
    cache: PathBuf,
    embedder: Option<Embedder32>,
    trend: Option<(Vec<SampleRecord>, Vec<SampleRecord>)>,
}

impl Ctx {
    fn new() -> Self {
        let cache = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
        std::fs::create_dir_all(&cache).unwrap();
        Ctx {
            cache,
            embedder: None,
            trend: None,
        }
    }

    fn embedder(&mut self) -> &Embedder32 {
        if self.embedder.is_none() {
            let e = Embedder32::load_or_train(&self.cache.join("embedder.bin"), &EmbedderConfig::default()).unwrap();
            eprintln!("evaluator {} (probe accuracy {:.4})", e.id, e.probe_accuracy);
            self.embedder = Some(e);
        }
        self.embedder.as_ref().unwrap()
    }

    /// Train and test records shared by criteria 5 and 6 (dataset seed 0).
    fn trend_data(&mut self) -> (Vec<SampleRecord>, Vec<SampleRecord>) {
        self.trend
            .get_or_insert_with(|| {
                let records = make_records(&DatasetConfig {
                    n: TREND_TRAIN + TREND_TEST,
                    seed: 0,
                    ..DatasetConfig::default()
                })
                .unwrap();
                let spec = SplitSpec {
                    train: TREND_TRAIN,
                    val: 0,
                    test: TREND_TEST,
                    seed: 0,
                    chains_in_train: true,
                };
                let (tr, _, te) = split(&records, &spec).unwrap();
                (tr, te)
            })
            .clone()
    }

    /// Checkpoint for `cfg` on `records`, from the cache when its run
    /// config matches, otherwise trained and stored.
    fn trained(&self, tag: &str, cfg: &RunConfig, records: &[SampleRecord]) -> Checkpoint<f32> {
        let path = self.cache.join(format!("{tag}.ckpt"));
        if let Ok(ck) = Checkpoint::<f32>::load(&path, None, false) {
            if ck.run == *cfg && ck.step > 0 {
                eprintln!("{tag}: cached checkpoint at step {}", ck.step);
                return ck;
            }
        }
        let t = Instant::now();
        let init = initial_checkpoint::<f32>(cfg).unwrap();
        let ex = to_examples(records, &init.components);
        let ck = train(cfg, &ex, &mut Silent).unwrap();
        ck.save(&path).unwrap();
        eprintln!("{tag}: trained {} steps in {:.0}s", ck.step, t.elapsed().as_secs_f64());
        ck
    }
}

fn to_examples<T: vqai_core::Scalar>(records: &[SampleRecord], comps: &vqai_core::models::Components<T>) -> Vec<Example<T>> {
    records.iter().cloned().map(|r| Example::from_record(r, comps).unwrap()).collect()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn unit_gaussian(r: &mut ChaCha8Rng) -> f64 {
    r.sample(StandardNormal)
}

// ---------------------------------------------------------------- 1

fn brute_cos(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    dot / na.sqrt() / nb.sqrt()
}

fn brute_auc(sims: &[f64], grid: &[f64]) -> f64 {
    let mut acc = 0.0;
    for &t in grid {
        let mut hits = 0usize;
        for &s in sims {
            let s = if s < 0.0 { 0.0 } else { s };
            if s >= t {
                hits += 1;
            }
        }
        acc += hits as f64 / sims.len() as f64;
    }
    acc / grid.len() as f64
}

/// Matrix square root by the Denman-Beavers iteration.
fn db_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let (mut y, mut z) = (a.clone(), DMatrix::<f64>::identity(n, n));
    for _ in 0..100 {
        let yi = y.clone().try_inverse().unwrap();
        let zi = z.clone().try_inverse().unwrap();
        let ny = (&y + zi) * 0.5;
        let nz = (&z + yi) * 0.5;
        let moved = (&ny - &y).norm();
        y = ny;
        z = nz;
        if moved < 1e-15 * y.norm() {
            break;
        }
    }
    y
}

fn brute_fid(a: &[Vec<f64>], b: &[Vec<f64>], eps: f64) -> f64 {
    let stats = |s: &[Vec<f64>]| {
        let (n, d) = (s.len(), s[0].len());
        let mut mu = vec![0.0; d];
        for v in s {
            for j in 0..d {
                mu[j] += v[j] / n as f64;
            }
        }
        let mut c = DMatrix::<f64>::zeros(d, d);
        for v in s {
            for i in 0..d {
                for j in 0..d {
                    c[(i, j)] += (v[i] - mu[i]) * (v[j] - mu[j]) / (n - 1) as f64;
                }
            }
        }
        for i in 0..d {
            c[(i, i)] += eps;
        }
        (mu, c)
    };
    let (ma, ca) = stats(a);
    let (mb, cb) = stats(b);
    let diff: f64 = ma.iter().zip(&mb).map(|(x, y)| (x - y) * (x - y)).sum();
    let cross = db_sqrt(&(&ca * &cb)).trace();
    (diff + ca.trace() + cb.trace() - 2.0 * cross).max(0.0)
}

fn c1_metric_oracles(_: &mut Ctx) -> Outcome {
    let mut r = rng(101);
    let grid = threshold_grid(GRID_POINTS);
    let (mut worst_sim, mut worst_auc, mut worst_fid) = (0.0f64, 0.0f64, 0.0f64);
    let mut best_below_avg = 0;
    for _ in 0..ORACLE_INSTANCES {
        let (n, d) = (r.random_range(1..8), r.random_range(2..9));
        let gts: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| unit_gaussian(&mut r)).collect()).collect();
        let preds: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|_| (0..DEFAULT_K).map(|_| (0..d).map(|_| unit_gaussian(&mut r)).collect()).collect())
            .collect();
        let mut avg = 0.0;
        let mut bst = 0.0;
        let mut flat = Vec::new();
        for i in 0..n {
            let mut m = f64::MIN;
            for p in &preds[i] {
                let c = brute_cos(p, &gts[i]);
                avg += c / (n * DEFAULT_K) as f64;
                m = m.max(c);
                flat.push(c);
                worst_sim = worst_sim.max((cosine(p, &gts[i]) - c).abs());
            }
            bst += m / n as f64;
        }
        let (a, b) = (sim_avg(&preds, &gts).unwrap(), sim_best_at_k(&preds, &gts).unwrap());
        worst_sim = worst_sim.max((a - avg).abs()).max((b - bst).abs());
        if b < a {
            best_below_avg += 1;
        }
        worst_auc = worst_auc.max((auc(&flat, &grid).unwrap() - brute_auc(&flat, &grid)).abs());

        let d = r.random_range(1..6);
        let (na, nb) = (r.random_range(d + 2..d + 20), r.random_range(d + 2..d + 20));
        let shift: f64 = r.random_range(-1.0..1.0);
        let sa: Vec<Vec<f64>> = (0..na).map(|_| (0..d).map(|_| unit_gaussian(&mut r)).collect()).collect();
        let sb: Vec<Vec<f64>> = (0..nb)
            .map(|_| (0..d).map(|j| shift + (1.0 + j as f64 * 0.3) * unit_gaussian(&mut r)).collect())
            .collect();
        let (got, want) = (fid(&sa, &sb, FID_EPS).unwrap(), brute_fid(&sa, &sb, FID_EPS));
        worst_fid = worst_fid.max((got - want).abs() / want.abs().max(1.0));
    }
    let pass = worst_sim <= ORACLE_TOL && worst_auc <= ORACLE_TOL && worst_fid <= FID_TOL && best_below_avg == 0;
    outcome(
        pass,
        format!(
            "{ORACLE_INSTANCES} instances; max error sim {worst_sim:.1e}, AUC {worst_auc:.1e} (tol {ORACLE_TOL:.0e}), FID {worst_fid:.1e} (tol {FID_TOL:.0e}); Sim_Best@{DEFAULT_K} < Sim_Avg on {best_below_avg}"
        ),
    )
}


// ---------------------------------------------------------------- 2

type Grads = Vec<(vqai_core::ParamId, Tensor<f64>)>;

/// Worst relative error between analytic and central-difference gradients
/// over up to `GRAD_PROBES` parameter scalars with non-negligible gradient.
fn probe<S>(state: &mut S, store_of: fn(&mut S) -> &mut ParamStore<f64>, loss: &dyn Fn(&S, bool) -> (f64, Grads)) -> (f64, usize) {
    let (_, grads) = loss(state, true);
    let mut cands = Vec::new();
    for (id, g) in &grads {
        for (i, &v) in g.data().iter().enumerate() {
            if v.abs() >= GRAD_MIN_MAGNITUDE {
                cands.push((*id, i, v));
            }
        }
    }
    let stride = (cands.len() / GRAD_PROBES).max(1);
    let mut worst: f64 = 0.0;
    let mut used = 0;
    for &(id, i, analytic) in cands.iter().step_by(stride).take(GRAD_PROBES) {
        let orig = store_of(state).value(id).data()[i];
        store_of(state).value_mut(id).data_mut()[i] = orig + GRAD_STEP;
        let up = loss(state, false).0;
        store_of(state).value_mut(id).data_mut()[i] = orig - GRAD_STEP;
        let down = loss(state, false).0;
        store_of(state).value_mut(id).data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * GRAD_STEP);
        worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()));
        used += 1;
    }
    (worst, used)
}

fn c2_gradients(_: &mut Ctx) -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;

    let mut r = rng(7);
    let mut store = ParamStore::<f64>::new();
    let ids = [
        store.add("anchor", Tensor::randn(&[6], 1.0, &mut r)),
        store.add("pos", Tensor::randn(&[2, 6], 1.0, &mut r)),
        store.add("neg", Tensor::randn(&[4, 6], 1.0, &mut r)),
    ];
    let direct = move |s: &ParamStore<f64>, grad: bool| {
        let g = Graph::new(s);
        let l = ccpc_loss(&g, g.param(ids[0]), g.param(ids[1]), g.param(ids[2]), 0.07).unwrap();
        (g.item(l), if grad { g.backward(l).into_params() } else { Vec::new() })
    };
    let (w, n) = probe(&mut store, |s| s, &direct);
    pass &= w <= GRAD_REL_TOL && n == GRAD_PROBES;
    details.push(format!("ccpc on raw vectors {w:.1e} ({n} probes)"));

    let cfg = common::tiny_run(Paradigm::Lgd);
    let mut comps = initial_checkpoint::<f64>(&cfg).unwrap().components;
    let ex = common::examples(4, 1.0, 11, &comps);
    let pool = node_pool(&ex);
    for term in ["ccpc", "mccs", "diffusion"] {
        let model = |c: &vqai_core::models::Components<f64>, grad: bool| {
            let g = Graph::new(&c.store);
            let refs: Vec<&Example<f64>> = ex.iter().collect();
            let (mut a, mut b) = (rng(1), rng(2));
            let t = total_loss(&g, c, &refs, &cfg, &pool, &mut a, &mut b).unwrap();
            let v = match term {
                "ccpc" => t.ccpc.unwrap(),
                "mccs" => t.mccs.unwrap(),
                _ => t.diffusion,
            };
            (g.item(v), if grad { g.backward(v).into_params() } else { Vec::new() })
        };
        let (w, n) = probe(&mut comps, |c| &mut c.store, &model);
        pass &= w <= GRAD_REL_TOL && n == GRAD_PROBES;
        details.push(format!("{term} through the model {w:.1e} ({n} probes)"));
    }
    outcome(pass, format!("max relative error: {} (tol {GRAD_REL_TOL:.0e}, f64, h = {GRAD_STEP:.0e})", details.join(", ")))
}

// ---------------------------------------------------------------- 3

fn c3_closure(_: &mut Ctx) -> Outcome {
    let mut bad_rule = 0;
    let mut bad_decode = 0;
    let mut unfaithful = 0;
    for i in 0..CLOSURE_SAMPLES {
        let category = Category::ALL[i % Category::ALL.len()];
        let rec = sample_record(7, i, category, true);
        let json = serde_json::to_string(&rec).unwrap();
        let rec: SampleRecord = serde_json::from_str(&json).unwrap();
        let (init, answer) = (rec.init_state.unwrap(), rec.answer_state.unwrap());
        let (again, _) = apply_condition(&init, rec.condition.as_ref().unwrap()).unwrap();
        if again != answer {
            bad_rule += 1;
        }
        for s in [&init, &answer] {
            if decode_state(&render(s)).state != s.canonical() {
                bad_decode += 1;
            }
        }
        if !category_faithful(category, &init, &answer) {
            unfaithful += 1;
        }
    }
    outcome(
        bad_rule == 0 && bad_decode == 0 && unfaithful == 0,
        format!(
            "{CLOSURE_SAMPLES} samples: {bad_rule} rule mismatches, {bad_decode} decode mismatches over {} renders, {unfaithful} off-category",
            2 * CLOSURE_SAMPLES
        ),
    )
}

// ---------------------------------------------------------------- 4

fn c4_overfit(ctx: &mut Ctx) -> Outcome {
    let records = make_records(&DatasetConfig {
        n: OVERFIT_BATCH,
        ..DatasetConfig::default()
    })
    .unwrap();
    let mut cfg = RunConfig::desk();
    cfg.batch_size = OVERFIT_BATCH;
    cfg.learning_rate = OVERFIT_LR;
    cfg.epochs = OVERFIT_STEPS;
    cfg.max_steps = OVERFIT_STEPS;
    let ck = ctx.trained("overfit", &cfg, &records);
    let tail = &ck.history[ck.history.len() - OVERFIT_WINDOW..];
    let loss = tail.iter().map(|r| r.diffusion).sum::<f64>() / OVERFIT_WINDOW as f64;
    let ex = to_examples(&records, &ck.components);
    let cands = generate_candidates(&ck.components, cfg.paradigm, &ex, &[0], SAMPLE_STEPS, Sampler::Ddim, OVERFIT_BATCH).unwrap();
    let emb = ctx.embedder();
    let gts: Vec<Image> = records.iter().map(|r| render(r.answer_state.as_ref().unwrap())).collect();
    let cos: Vec<f64> = cands
        .iter()
        .zip(&gts)
        .map(|(c, gt)| cosine(&emb.embed(&c[0]), &emb.embed(gt)))
        .collect();
    let mean = cos.iter().sum::<f64>() / cos.len() as f64;
    outcome(
        ck.step as usize == OVERFIT_STEPS && loss <= OVERFIT_LOSS && mean >= OVERFIT_COSINE,
        format!(
            "diffusion loss {loss:.4} (mean of last {OVERFIT_WINDOW} of {} steps, target <= {OVERFIT_LOSS}); sampled cosine to ground truth {mean:.4} (per sample {:?}, target mean >= {OVERFIT_COSINE})",
            ck.step,
            cos.iter().map(|c| format!("{c:.3}")).collect::<Vec<_>>()
        ),
    )
}

// ---------------------------------------------------------------- 5, 6

fn trend_cfg(paradigm: Paradigm, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::desk();
    cfg.paradigm = paradigm;
    cfg.seed = seed;
    cfg
}

/// Candidates (seed 0, DDIM) of a checkpoint on the trend test split.
fn trend_samples(ck: &Checkpoint<f32>, test: &[SampleRecord]) -> Vec<EvalSample> {
    let ex = to_examples(test, &ck.components);
    let cands = generate_candidates(&ck.components, ck.run.paradigm, &ex, &[0], SAMPLE_STEPS, Sampler::Ddim, 16).unwrap();
    ex.iter().zip(cands).map(|(e, c)| EvalSample::from_example(e, c).unwrap()).collect()
}

fn c5_paradigm_trend(ctx: &mut Ctx) -> Outcome {
    let (train_r, test_r) = ctx.trend_data();
    let grid = threshold_grid(GRID_POINTS);
    let mut lines = Vec::new();
    let mut held = 0;
    for (n, &seed) in TREND_SEEDS.iter().enumerate() {
        if held >= TREND_MIN_SEEDS || held + (TREND_SEEDS.len() - n) < TREND_MIN_SEEDS {
            break;
        }
        let mut row = Vec::new();
        for p in [Paradigm::Qgd, Paradigm::Agd, Paradigm::Lgd] {
            let ck = ctx.trained(&format!("trend-{p}-{seed}"), &trend_cfg(p, seed), &train_r);
            let samples = trend_samples(&ck, &test_r);
            let r = score_method(ctx.embedder(), p.name(), &samples, &grid).unwrap();
            row.push(r.categories[TOTAL].clone());
        }
        let (q, a, l) = (&row[0], &row[1], &row[2]);
        let ok = l.sim_avg >= a.sim_avg
            && a.sim_avg >= q.sim_avg
            && l.sim_avg - q.sim_avg >= TREND_SPREAD
            && l.state_match_rate >= q.state_match_rate + TREND_STATE_GAP;
        held += ok as usize;
        lines.push(format!(
            "seed {seed} {}: Sim_Avg QGD {:.4} AGD {:.4} LGD {:.4}, state match QGD {:.3} AGD {:.3} LGD {:.3}",
            if ok { "holds" } else { "fails" },
            q.sim_avg,
            a.sim_avg,
            l.sim_avg,
            q.state_match_rate,
            a.state_match_rate,
            l.state_match_rate
        ));
    }
    outcome(
        held >= TREND_MIN_SEEDS,
        format!(
            "{} (need LGD >= AGD >= QGD, spread >= {TREND_SPREAD}, state gap >= {TREND_STATE_GAP} on {TREND_MIN_SEEDS} of {} seeds; {TREND_TRAIN} train / {TREND_TEST} test samples, {} steps)",
            lines.join("; "),
            TREND_SEEDS.len(),
            RunConfig::desk().max_steps
        ),
    )
}

/// One-sided sign test: probability of at least `wins` successes in `n`
/// fair coin flips.
fn sign_test(wins: usize, n: usize) -> f64 {
    let mut p = 0.0;
    for k in wins..=n {
        let mut c = 1.0f64;
        for j in 0..k {
            c *= (n - j) as f64 / (j + 1) as f64;
        }
        p += c * 0.5f64.powi(n as i32);
    }
    p
}

fn c6_ccpc_ablation(ctx: &mut Ctx) -> Outcome {
    let (train_r, test_r) = ctx.trend_data();
    let with_cfg = trend_cfg(Paradigm::Lgd, 0);
    let mut without_cfg = with_cfg.clone();
    without_cfg.lambda_ccpc = 0.0;
    let with = ctx.trained(&format!("trend-{}-0", Paradigm::Lgd), &with_cfg, &train_r);
    let without = ctx.trained("ablation-lgd-noccpc-0", &without_cfg, &train_r);
    let (sw, so) = (trend_samples(&with, &test_r), trend_samples(&without, &test_r));
    let emb = ctx.embedder();
    let init_sim = |s: &[EvalSample]| -> Vec<f64> {
        let inits = emb.embed_batch(&s.iter().map(|x| &x.init_image).collect::<Vec<_>>());
        let gens = emb.embed_batch(&s.iter().map(|x| &x.candidates[0]).collect::<Vec<_>>());
        inits.iter().zip(&gens).map(|(a, b)| cosine(a, b)).collect()
    };
    let (a, b) = (init_sim(&sw), init_sim(&so));
    let wins = a.iter().zip(&b).filter(|(w, o)| o > w).count();
    let losses = a.iter().zip(&b).filter(|(w, o)| o < w).count();
    let p = sign_test(wins, wins + losses);
    let (ma, mb) = (a.iter().sum::<f64>() / a.len() as f64, b.iter().sum::<f64>() / b.len() as f64);
    outcome(
        a.len() >= TREND_TEST && mb > ma && p < ABLATION_P,
        format!(
            "mean cos(generated, initial) with contrastive term {ma:.4}, without {mb:.4}; without higher on {wins} of {} untied samples, sign-test p = {p:.2e} (need p < {ABLATION_P})",
            wins + losses
        ),
    )
}

// ---------------------------------------------------------------- 7

fn c7_mccs_fidelity(ctx: &mut Ctx) -> Outcome {
    let mut cfg = RunConfig::desk();
    cfg.batch_size = 1;
    cfg.learning_rate = MCCS_LR;
    cfg.epochs = MCCS_STEPS;
    cfg.max_steps = MCCS_STEPS;
    let probe_comps = initial_checkpoint::<f32>(&cfg).unwrap().components;
    let record = make_records(&DatasetConfig {
        n: 40,
        chain_fraction: 1.0,
        ..DatasetConfig::default()
    })
    .unwrap()
    .into_iter()
    .find(|r| {
        let ex = Example::from_record(r.clone(), &probe_comps).unwrap();
        ex.chain_text.as_ref().unwrap().len() <= cfg.model.mccs_max_len
    })
    .expect("a chain that fits the decoder");
    let ck = ctx.trained("mccs-single", &cfg, std::slice::from_ref(&record));
    let ex = to_examples(std::slice::from_ref(&record), &ck.components);
    let decoded = ck.components.decode_chains(&ex[0].init.clone().reshape(&[1, 64, 64, 3]), &[&ex[0].question]).unwrap();
    let target = ex[0].chain_text.as_ref().unwrap();
    let same = decoded[0].ids == target.ids;
    let matching = decoded[0].ids.iter().zip(&target.ids).take_while(|(a, b)| a == b).count();
    outcome(
        same,
        format!(
            "sample {} after {} steps: decoded {} tokens, target {}, common prefix {matching}",
            record.sample_id,
            ck.step,
            decoded[0].len(),
            target.len()
        ),
    )
}

// ---------------------------------------------------------------- 8

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn c8_determinism(_: &mut Ctx) -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let data = DatasetConfig {
        n: 40,
        seed: 5,
        ..DatasetConfig::default()
    };
    make_dataset(&tmp.path().join("a"), &data).unwrap();
    make_dataset(&tmp.path().join("b"), &data).unwrap();
    let (ta, tb) = (tree(&tmp.path().join("a")), tree(&tmp.path().join("b")));
    let gen_same = !ta.is_empty() && ta == tb;

    let mut cfg = common::tiny_run(Paradigm::Lgd);
    cfg.epochs = 2;
    let init = initial_checkpoint::<f32>(&cfg).unwrap();
    let records = make_records(&data).unwrap();
    let ex = to_examples(&records[..12], &init.components);
    let a = train(&cfg, &ex, &mut Silent).unwrap();
    let b = train(&cfg, &ex, &mut Silent).unwrap();
    let bytes = a.to_bytes();
    let train_same = bytes == b.to_bytes();

    let mut sample_same = true;
    for sampler in [Sampler::Ddim, Sampler::Ddpm] {
        for p in [Paradigm::Qgd, Paradigm::Agd, Paradigm::Lgd, Paradigm::LgdPlus] {
            let x = generate_candidates(&a.components, p, &ex[..3], &[0, 1], 5, sampler, 2).unwrap();
            let y = generate_candidates(&b.components, p, &ex[..3], &[0, 1], 5, sampler, 3).unwrap();
            sample_same &= x == y;
        }
    }

    let path = tmp.path().join("run.ckpt");
    a.save(&path).unwrap();
    let back = Checkpoint::<f32>::load(&path, Some(&a.config_hash()), false).unwrap();
    let weights_same = a
        .components
        .store
        .entries()
        .iter()
        .zip(back.components.store.entries())
        .all(|(x, y)| x.name == y.name && x.value.data().iter().zip(y.value.data()).all(|(u, v)| u.to_bits() == v.to_bits()))
        && back.adam == a.adam
        && back.history == a.history
        && back.to_bytes() == bytes;
    outcome(
        gen_same && train_same && sample_same && weights_same,
        format!(
            "gen-data identical: {gen_same} ({} files); train identical: {train_same} ({} steps); samples identical for every paradigm and sampler: {sample_same}; checkpoint round trip exact: {weights_same}",
            ta.len(),
            a.step
        ),
    )
}

// ---------------------------------------------------------------- 9

fn report_fixture() -> EvalReport {
    let row = |v: f64, human: bool| MetricRow {
        n: 100,
        sim_avg: v,
        sim_best: v + 0.03,
        auc_avg: v - 0.05,
        auc_best: v - 0.02,
        fid: Some(100.0 * (1.0 - v)),
        state_match_rate: v / 3.0,
        init_similarity: v,
        acc: human.then_some(v / 2.0),
        chosen_rate: human.then_some(1.0 - v),
    };
    let methods = [("QGD", 0.8361), ("AGD", 0.8444), ("LGD", 0.8589)]
        .iter()
        .map(|&(m, v)| MethodReport {
            method: m.to_string(),
            categories: category_columns().into_iter().enumerate().map(|(i, c)| (c.to_string(), row(v - 0.001 * i as f64, m == "LGD"))).collect(),
        })
        .collect();
    EvalReport {
        k: DEFAULT_K,
        grid_points: GRID_POINTS,
        embedder_id: "embedder-fixture".into(),
        config: Default::default(),
        methods,
    }
}

fn c9_bookkeeping(ctx: &mut Ctx) -> Outcome {
    let t = Instant::now();
    let records: Vec<SampleRecord> = make_records(&DatasetConfig {
        n: MANIFEST_SIZE,
        ..DatasetConfig::default()
    })
    .unwrap();
    let gen_s = t.elapsed().as_secs_f64();
    let (ntr, nva, nte) = SPLIT_SIZES;
    let (tr, va, te) = split(&records, &SplitSpec {
        train: ntr,
        val: nva,
        test: nte,
        seed: 0,
        chains_in_train: true,
    })
    .unwrap();
    let ids = |v: &[SampleRecord]| v.iter().map(|r| r.sample_id.clone()).collect::<BTreeSet<_>>();
    let (a, b, c) = (ids(&tr), ids(&va), ids(&te));
    let all = ids(&records);
    let sizes = (tr.len(), va.len(), te.len()) == SPLIT_SIZES && (a.len(), b.len(), c.len()) == SPLIT_SIZES;
    let disjoint = a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c);
    let exhaustive = a.union(&b).chain(c.iter()).cloned().collect::<BTreeSet<_>>() == all;
    let chains_ok = va.iter().chain(&te).all(|r| r.chain.is_none());

    let cfg = common::tiny_run(Paradigm::Lgd);
    let comps = initial_checkpoint::<f32>(&cfg).unwrap().components;
    let ex = to_examples(&te[..3], &comps);
    let seeds: Vec<u64> = (0..DEFAULT_K as u64).collect();
    let cands = generate_candidates(&comps, Paradigm::Lgd, &ex, &seeds, 3, Sampler::Ddim, 2).unwrap();
    let k_ok = cands.len() == 3 && cands.iter().all(|c| c.len() == DEFAULT_K);
    let samples: Vec<EvalSample> = ex.iter().zip(cands).map(|(e, c)| EvalSample::from_example(e, c).unwrap()).collect();
    let scored = score_method(ctx.embedder(), "LGD", &samples, &threshold_grid(GRID_POINTS)).unwrap();
    let k_ok = k_ok && scored.categories[TOTAL].n == 3;

    let report = report_fixture();
    let table = render_method_table(&report);
    let header: Vec<&str> = table.lines().nth(2).unwrap().split_whitespace().collect();
    let labels: Vec<String> = table.lines().skip(4).take_while(|l| !l.starts_with('-')).map(|l| l.split("  ").next().unwrap().trim().to_string()).collect();
    let want_labels = ["Sim_Avg", "Sim_Best@9", "AUC_Avg", "AUC_Best@9", "Acc (human)", "Chosen Rate (human)", "FID↓", "State match"];
    let cat = render_category_table(&report, &report.methods[2]);
    let cat_header: Vec<&str> = cat.lines().nth(2).unwrap().split_whitespace().collect();
    let table_ok = header == ["Methods", "QGD", "AGD", "LGD"]
        && labels == want_labels
        && table.contains("0.8589")
        && table.contains("0.4294")
        && cat_header == ["Methods", "TT", "SV", "ME", "FE", "EV", "EMV"]
        && EvalReport::from_json(&report.to_json()).unwrap() == report;
    outcome(
        sizes && disjoint && exhaustive && chains_ok && k_ok && table_ok,
        format!(
            "{MANIFEST_SIZE} records ({gen_s:.1}s) split {}/{}/{}: sizes {sizes}, disjoint {disjoint}, exhaustive {exhaustive}, annotated chains all in train {chains_ok}; {DEFAULT_K} images per test sample {k_ok}; table layouts {table_ok}",
            tr.len(),
            va.len(),
            te.len()
        ),
    )
}

// ---------------------------------------------------------------- 10

fn frame(gray: u8, r: &mut ChaCha8Rng) -> image::RgbImage {
    image::RgbImage::from_fn(48, 48, |_, _| {
        let v = gray.saturating_add(r.random_range(0..3));
        image::Rgb([v, v, v])
    })
}

fn tiles(segs: &[Segment], n: usize) -> bool {
    let mut next = 0;
    for s in segs {
        if s.start_frame != next || s.end_frame < s.start_frame || s.length != s.end_frame - s.start_frame + 1 {
            return false;
        }
        next = s.end_frame + 1;
    }
    next == n
}

fn c10_segmentation(_: &mut Ctx) -> Outcome {
    let mut r = rng(10);
    let (mut exact, mut tiled, mut short) = (0, 0, 0);
    for case in 0..SEGMENT_CASES {
        let min_len = r.random_range(1..6);
        let shots = r.random_range(1..7);
        let levels = [10u8, 60, 110, 160, 210];
        let mut frames = Vec::new();
        let mut want = Vec::new();
        let mut level = r.random_range(0..levels.len());
        for _ in 0..shots {
            let len = r.random_range(min_len..min_len + 8);
            want.push(Segment {
                start_frame: frames.len(),
                end_frame: frames.len() + len - 1,
                length: len,
            });
            for _ in 0..len {
                frames.push(frame(levels[level], &mut r));
            }
            level = (level + r.random_range(1..levels.len())) % levels.len();
        }
        let segs = segment_frames(&frames, 12.0, min_len).unwrap();
        exact += (segs == want) as usize;

        // arbitrary cut patterns, including runs shorter than min_len
        let n = r.random_range(1..40);
        let frames: Vec<_> = (0..n).map(|_| frame(levels[r.random_range(0..levels.len())], &mut r)).collect();
        let min_len = r.random_range(1..8) + case % 2;
        let segs = segment_frames(&frames, 12.0, min_len).unwrap();
        tiled += tiles(&segs, n) as usize;
        short += (n >= min_len && segs.iter().any(|s| s.length < min_len)) as usize;
    }
    outcome(
        exact == SEGMENT_CASES && tiled == SEGMENT_CASES && short == 0,
        format!("{SEGMENT_CASES} cases: hard cuts exact {exact}, tiling {tiled}, segments below min_len {short}"),
    )
}
