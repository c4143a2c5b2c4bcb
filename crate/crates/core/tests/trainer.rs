mod common;

use common::{examples, tiny_run};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vqai_core::heads::Paradigm;
use vqai_core::models::{Components, ENCODER_GROUPS};
use vqai_core::trainer::{
    initial_checkpoint, node_pool, planned_steps, total_loss, train, Checkpoint, CheckpointError,
    Example, LossRecord, Observer, Silent,
};
use vqai_core::Graph;

fn rngs() -> (ChaCha8Rng, ChaCha8Rng) {
    (ChaCha8Rng::seed_from_u64(1), ChaCha8Rng::seed_from_u64(2))
}

fn terms(cfg: &vqai_core::config::RunConfig, comps: &Components<f64>, batch: &[Example<f64>]) -> (f64, f64, Option<f64>, Option<f64>) {
    let g = Graph::new(&comps.store);
    let refs: Vec<&Example<f64>> = batch.iter().collect();
    let (mut a, mut b) = rngs();
    let t = total_loss(&g, comps, &refs, cfg, &node_pool(batch), &mut a, &mut b).unwrap();
    (g.item(t.total), g.item(t.diffusion), t.ccpc.map(|v| g.item(v)), t.mccs.map(|v| g.item(v)))
}

#[test]
fn zero_weights_leave_only_diffusion() {
    let mut cfg = tiny_run(Paradigm::Lgd);
    cfg.lambda_ccpc = 0.0;
    cfg.lambda_mccs = 0.0;
    let ck = initial_checkpoint::<f64>(&cfg).unwrap();
    let ex = examples(4, 1.0, 0, &ck.components);
    let (total, diff, c, m) = terms(&cfg, &ck.components, &ex);
    assert_eq!(total, diff);
    assert!(c.is_none() && m.is_none());
}

#[test]
fn unannotated_batch_has_no_chain_terms() {
    let cfg = tiny_run(Paradigm::Lgd);
    let ck = initial_checkpoint::<f64>(&cfg).unwrap();
    let ex = examples(4, 0.0, 0, &ck.components);
    let (total, diff, c, m) = terms(&cfg, &ck.components, &ex);
    assert_eq!(total, diff);
    assert!(c.is_none() && m.is_none());
}

#[test]
fn question_guidance_ignores_chain_weights() {
    let cfg = tiny_run(Paradigm::Qgd);
    let ck = initial_checkpoint::<f64>(&cfg).unwrap();
    let ex = examples(4, 1.0, 0, &ck.components);
    let (total, diff, c, m) = terms(&cfg, &ck.components, &ex);
    assert_eq!(total, diff);
    assert!(c.is_none() && m.is_none());
}

#[test]
fn weighted_breakdown_adds_up() {
    for p in [Paradigm::Agd, Paradigm::Lgd, Paradigm::LgdPlus] {
        let cfg = tiny_run(p);
        let ck = initial_checkpoint::<f64>(&cfg).unwrap();
        let ex = examples(4, 1.0, 0, &ck.components);
        let (total, diff, c, m) = terms(&cfg, &ck.components, &ex);
        let (c, m) = (c.expect("ccpc term"), m.expect("mccs term"));
        assert!(c > 0.0 && m > 0.0);
        let expect = diff + cfg.lambda_ccpc * c + cfg.lambda_mccs * m;
        assert!((total - expect).abs() < 1e-9 * expect.abs().max(1.0), "{p}: {total} vs {expect}");
    }
}

#[test]
fn zero_epochs_give_untrained_checkpoint() {
    let mut cfg = tiny_run(Paradigm::Lgd);
    cfg.epochs = 0;
    assert_eq!(planned_steps(&cfg, 10), 0);
    let ck = initial_checkpoint::<f32>(&cfg).unwrap();
    let ex = examples(3, 0.0, 0, &ck.components);
    let out = train(&cfg, &ex, &mut Silent).unwrap();
    assert_eq!(out.step, 0);
    assert!(matches!(out.require_trained(false), Err(CheckpointError::UntrainedModel)));
    assert!(out.require_trained(true).is_ok());
}

#[test]
fn planned_steps_cap() {
    let mut cfg = tiny_run(Paradigm::Lgd);
    cfg.batch_size = 16;
    cfg.epochs = 20;
    assert_eq!(planned_steps(&cfg, 33), 60);
    cfg.max_steps = 7;
    assert_eq!(planned_steps(&cfg, 33), 7);
}

struct Recorder(Vec<LossRecord>, usize);
impl Observer<f32> for Recorder {
    fn on_step(&mut self, r: &LossRecord) {
        self.0.push(*r);
    }
    fn on_checkpoint(&mut self, _: &Checkpoint<f32>) -> Result<(), vqai_core::trainer::TrainError> {
        self.1 += 1;
        Ok(())
    }
}

#[test]
fn training_is_deterministic_and_round_trips() {
    let mut cfg = tiny_run(Paradigm::Lgd);
    cfg.epochs = 2;
    cfg.checkpoint_every = 2;
    let ck = initial_checkpoint::<f32>(&cfg).unwrap();
    let ex = examples(10, 0.5, 3, &ck.components);
    let mut rec = Recorder(Vec::new(), 0);
    let a = train(&cfg, &ex, &mut rec).unwrap();
    let b = train(&cfg, &ex, &mut Silent).unwrap();
    assert_eq!(a.step, 6);
    assert_eq!(rec.0, a.history);
    assert_eq!(rec.1, 3);
    let bytes = a.to_bytes();
    assert_eq!(bytes, b.to_bytes());
    assert!(a.history.iter().all(|r| r.total.is_finite()));

    let back = Checkpoint::<f32>::from_bytes(&bytes, Some(&a.config_hash()), false).unwrap();
    for (x, y) in a.components.store.entries().iter().zip(back.components.store.entries()) {
        assert_eq!(x.name, y.name);
        assert_eq!(x.value, y.value);
    }
    assert_eq!(back.adam, a.adam);
    assert_eq!(back.to_bytes(), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.ckpt");
    a.save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(Checkpoint::<f32>::load(&path, None, false).unwrap().step, 6);
}

#[test]
fn corrupt_and_mismatched_checkpoints() {
    let cfg = tiny_run(Paradigm::Qgd);
    let ck = initial_checkpoint::<f32>(&cfg).unwrap();
    let bytes = ck.to_bytes();
    let mut tampered = bytes.clone();
    let i = tampered.len() - 100;
    tampered[i] ^= 0x40;
    assert!(matches!(Checkpoint::<f32>::from_bytes(&tampered, None, false), Err(CheckpointError::CorruptFile(_))));
    assert!(matches!(Checkpoint::<f32>::from_bytes(&bytes[..bytes.len() - 1], None, false), Err(CheckpointError::CorruptFile(_))));
    assert!(matches!(Checkpoint::<f32>::from_bytes(b"not a checkpoint at all, clearly not", None, false), Err(CheckpointError::CorruptFile(_))));

    let mut other = cfg.clone();
    other.model.d_ctx = 12;
    other.model.diffusion.d_ctx = 12;
    let expected = other.model.hash();
    assert_ne!(expected, ck.config_hash());
    assert!(matches!(
        Checkpoint::<f32>::from_bytes(&bytes, Some(&expected), false),
        Err(CheckpointError::ConfigHashMismatch { .. })
    ));
    assert!(Checkpoint::<f32>::from_bytes(&bytes, Some(&expected), true).is_ok());
    let wide = Checkpoint::<f64>::from_bytes(&bytes, None, false).unwrap();
    assert_eq!(wide.components.store.entries()[0].value.to_f64_vec(), ck.components.store.entries()[0].value.to_f64_vec());
    assert!(matches!(
        Checkpoint::<f32>::load(std::path::Path::new("/nonexistent/x.ckpt"), None, false),
        Err(CheckpointError::Io { .. })
    ));
}

#[test]
fn frozen_encoders_stay_fixed() {
    let mut cfg = tiny_run(Paradigm::Lgd);
    cfg.freeze_encoders = true;
    let init = initial_checkpoint::<f32>(&cfg).unwrap();
    let ex = examples(8, 1.0, 0, &init.components);
    let out = train(&cfg, &ex, &mut Silent).unwrap();
    assert_eq!(out.step, 2);
    for (a, b) in init.components.store.entries().iter().zip(out.components.store.entries()) {
        if a.name.starts_with("denoiser.") {
            continue;
        }
        assert_eq!(a.value, b.value, "{} moved", a.name);
    }
    let moved = init
        .components
        .store
        .entries()
        .iter()
        .zip(out.components.store.entries())
        .any(|(a, b)| a.name.starts_with("denoiser.") && a.value != b.value);
    assert!(moved);
}

#[test]
fn latent_guidance_reaches_every_group() {
    let cfg = tiny_run(Paradigm::Lgd);
    let ck = initial_checkpoint::<f64>(&cfg).unwrap();
    let comps = &ck.components;
    let ex = examples(4, 1.0, 0, comps);
    let g = Graph::new(&comps.store);
    let refs: Vec<&Example<f64>> = ex.iter().collect();
    let (mut a, mut b) = rngs();
    let t = total_loss(&g, comps, &refs, &cfg, &node_pool(&ex), &mut a, &mut b).unwrap();
    let grads = g.backward(t.total).into_params();
    for group in ENCODER_GROUPS.iter().chain(&["denoiser."]) {
        let norm: f64 = grads
            .iter()
            .filter(|(id, _)| comps.store.name(*id).starts_with(group))
            .map(|(_, g)| g.sq_norm())
            .sum();
        assert!(norm > 0.0, "no gradient reaches {group}");
    }
}

#[test]
fn contrastive_term_trains_predictive_head() {
    let mut cfg = tiny_run(Paradigm::Lgd);
    cfg.lambda_mccs = 0.0;
    let ck = initial_checkpoint::<f64>(&cfg).unwrap();
    let comps = &ck.components;
    let ex = examples(4, 1.0, 0, comps);
    let g = Graph::new(&comps.store);
    let refs: Vec<&Example<f64>> = ex.iter().collect();
    let (mut a, mut b) = rngs();
    let t = total_loss(&g, comps, &refs, &cfg, &node_pool(&ex), &mut a, &mut b).unwrap();
    let grads = g.backward(t.ccpc.expect("ccpc term")).into_params();
    let pc: f64 = grads
        .iter()
        .filter(|(id, _)| comps.store.name(*id).starts_with("pc."))
        .map(|(_, g)| g.sq_norm())
        .sum();
    assert!(pc > 0.0);
    assert!(grads.iter().all(|(id, g)| !comps.store.name(*id).starts_with("denoiser.") || g.sq_norm() == 0.0));
}
