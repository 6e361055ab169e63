use candle_core::{DType, Device};
use sshnet_core::imgcore::Image;
use sshnet_core::sshnet::{ModelConfig, SshNet};
use sshnet_core::synth::{
    build_corpus_from, builtin_assets, procedural_scenes, CorpusConfig, CorruptionRanges, Manifest, Split,
};
use sshnet_core::trainer::{
    evaluate, load_model, lr_schedule, read_checkpoint, EvalOptions, IdentityRestorer, Restorer, TrainConfig, TrainData,
    Trainer,
};

fn tiny_model(seed: u64) -> SshNet {
    let cfg = ModelConfig { base_width: 8, ..ModelConfig::desk() };
    SshNet::new(&cfg, &Device::Cpu, DType::F32, seed).unwrap()
}

fn pinned_ranges() -> CorruptionRanges {
    CorruptionRanges { transparencies: vec![0.5], sigmas: vec![25.0], ..CorruptionRanges::default() }
}

fn corpus(split: Split, dir: &std::path::Path) -> Manifest {
    let images = procedural_scenes(3, 48, 48, 11, "scene");
    let cfg = CorpusConfig { split, ranges: pinned_ranges(), previews: false, ..CorpusConfig::default() };
    let assets: Vec<_> = builtin_assets().into_iter().take(2).collect();
    build_corpus_from(&images, &assets, &cfg, dir, 7).unwrap()
}

fn train_cfg() -> TrainConfig {
    TrainConfig { batch: 2, crop: 32, alpha: 0.0, epochs: 10, seed: 4, ..TrainConfig::default() }
}

fn params_of(model: &SshNet) -> Vec<Vec<f32>> {
    model
        .params()
        .vars()
        .iter()
        .map(|(_, v)| v.as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap())
        .collect()
}

#[test]
fn checkpoint_round_trip_restores_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(Split::Train, dir.path());
    let data = TrainData::from_manifest(&manifest).unwrap();
    let mut trainer = Trainer::new(tiny_model(1), train_cfg(), data, None).unwrap();
    trainer.run_steps(2, |_| Ok(())).unwrap();
    let path = dir.path().join("ck.bin");
    trainer.save(&path).unwrap();

    let (loaded, ck) = load_model(&path, &Device::Cpu, DType::F32).unwrap();
    assert_eq!(ck.header.step, 2);
    assert_eq!(params_of(&loaded), params_of(&trainer.model));
    let img = procedural_scenes(1, 32, 32, 2, "probe").remove(0);
    let a = trainer.model.restore(&img).unwrap();
    let b = loaded.restore(&img).unwrap();
    assert_eq!(a.pixels(), b.pixels());
}

#[test]
fn mismatched_width_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(Split::Train, dir.path());
    let data = TrainData::from_manifest(&manifest).unwrap();
    let trainer = Trainer::new(tiny_model(1), train_cfg(), data, None).unwrap();
    let path = dir.path().join("ck.bin");
    trainer.save(&path).unwrap();

    let wider = SshNet::new(&ModelConfig { base_width: 16, ..ModelConfig::desk() }, &Device::Cpu, DType::F32, 1).unwrap();
    let err = read_checkpoint(&path).unwrap().validate_against(&wider).unwrap_err().to_string();
    assert!(err.contains("encoder.stem.weight"), "{err}");
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(Split::Train, dir.path());
    let data = TrainData::from_manifest(&manifest).unwrap();
    let trainer = Trainer::new(tiny_model(1), train_cfg(), data, None).unwrap();
    let path = dir.path().join("ck.bin");
    trainer.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
    assert!(read_checkpoint(&path).is_err());
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(Split::Train, dir.path());
    let straight_data = TrainData::from_manifest(&manifest).unwrap();
    let mut straight = Trainer::new(tiny_model(1), train_cfg(), straight_data, None).unwrap();
    let straight_logs = straight.run_steps(4, |_| Ok(())).unwrap();

    let first_data = TrainData::from_manifest(&manifest).unwrap();
    let mut first = Trainer::new(tiny_model(1), train_cfg(), first_data, None).unwrap();
    let mut logs = first.run_steps(2, |_| Ok(())).unwrap();
    let path = dir.path().join("half.bin");
    first.save(&path).unwrap();
    drop(first);

    let second_data = TrainData::from_manifest(&manifest).unwrap();
    let mut second = Trainer::new(tiny_model(99), train_cfg(), second_data, None).unwrap();
    second.resume(&path).unwrap();
    logs.extend(second.run_steps(2, |_| Ok(())).unwrap());

    let totals = |l: &[sshnet_core::trainer::StepLog]| l.iter().map(|s| s.total).collect::<Vec<_>>();
    assert_eq!(totals(&logs), totals(&straight_logs));
    assert_eq!(params_of(&second.model), params_of(&straight.model));
}

#[test]
fn training_never_reads_clean_images() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(Split::Train, dir.path());
    let data = TrainData::from_manifest(&manifest).unwrap();
    let mut trainer = Trainer::new(tiny_model(1), train_cfg(), data, None).unwrap();
    trainer.run_steps(3, |_| Ok(())).unwrap();
    assert_eq!(trainer.data.clean_reads().count(), 0);
}

struct Oracle(Manifest);

impl Restorer for Oracle {
    fn restore(&self, input: &Image) -> sshnet_core::Result<Image> {
        let counter = sshnet_core::synth::CleanAccessCounter::new();
        for rec in &self.0.records {
            let pair = rec.load_pair(&self.0.root, &counter)?;
            if pair.x_wn.pixels() == input.pixels() {
                return Ok(pair.y_clean().unwrap().clone());
            }
        }
        panic!("unknown input");
    }
}

#[test]
fn evaluation_scores_baseline_and_perfect_restorers() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(Split::Test, dir.path());
    assert_eq!(manifest.len(), 6);

    let base = evaluate(&IdentityRestorer, &manifest, &EvalOptions::default()).unwrap();
    assert_eq!(base.items.len(), 6);
    assert!(base.failures.is_empty());
    assert!(base.mean_psnr().is_finite() && base.mean_psnr() < 40.0);
    assert_eq!(base.groups.len(), 1);

    let perfect = evaluate(&Oracle(manifest.clone()), &manifest, &EvalOptions::default()).unwrap();
    assert!(perfect.items.iter().all(|i| i.psnr.is_infinite()));
    assert!(perfect.items.iter().all(|i| (i.ssim - 1.0).abs() < 1e-12));

    let out = dir.path().join("eval");
    perfect.write(&out).unwrap();
    let json = std::fs::read_to_string(out.join("metrics.json")).unwrap();
    assert!(json.contains("\"inf\""), "{json}");
    assert!(out.join("metrics.csv").exists());
}

#[test]
fn logged_learning_rate_follows_the_step_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(Split::Train, dir.path());
    let cfg = TrainConfig { decay: 0.5, decay_every: 1, epochs: 3, ..train_cfg() };
    let data = TrainData::from_manifest(&manifest).unwrap();
    let mut trainer = Trainer::new(tiny_model(2), cfg.clone(), data, None).unwrap();
    let total = trainer.total_steps();
    let logs = trainer.run_steps(total, |_| Ok(())).unwrap();
    let mut seen = std::collections::BTreeSet::new();
    for log in &logs {
        assert_eq!(log.lr.to_bits(), lr_schedule(&cfg, log.epoch as usize).unwrap().to_bits(), "step {}", log.step);
        seen.insert(log.epoch);
    }
    assert_eq!(seen.len(), 3);
    assert_eq!(logs.last().unwrap().lr, 1e-3 * 0.25);
}
