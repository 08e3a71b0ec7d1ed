use std::fs;
use std::path::Path;

use oceantl::pipeline::{self, store, PipelineConfig};
use oceantl::scenario::TaskConfig;
use oceantl::tlf::{Container, Record};
use oceantl::trainer::SequenceProgress;
use oceantl::Error;

fn small_config(out: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.set_grid(32, 32);
    cfg.source.fan = 201;
    let mut tasks = vec![TaskConfig::standard(1, 5).unwrap(), TaskConfig::standard(4, 9).unwrap()];
    for t in &mut tasks {
        t.count = 6;
    }
    cfg.dataset.tasks = tasks;
    cfg.model.encoder_channels = vec![4, 4, 4, 4];
    cfg.model.latent_dim = 8;
    cfg.train.epochs = 3;
    cfg.train.patience = 3;
    cfg.train.batch_size = 2;
    cfg.train.replay_epochs = 2;
    cfg.train.exemplars_per_task = 2;
    cfg.eval.timing_fields = 2;
    cfg.output_dir = out.to_path_buf();
    cfg.validate().unwrap();
    cfg
}

#[test]
fn tlf_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.tlf");
    let values: Vec<f32> = (0..60).map(|i| (i as f32 * 0.37).sin() * 1e3 + f32::EPSILON * i as f32).collect();
    let mut c = Container::new();
    c.push(Record::new(oceantl::tlf::RecordKind::Tensor, "weights", vec![3, 4, 5], values.clone()).unwrap());
    c.write(&path).unwrap();
    let back = Container::read(&path).unwrap();
    assert_eq!(back, c);
    let bits: Vec<u32> = back.get("weights").unwrap().data.iter().map(|v| v.to_bits()).collect();
    assert_eq!(bits, values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn generate_is_reproducible_resumable_and_detects_corruption() {
    let root = tempfile::tempdir().unwrap();
    let a = small_config(&root.path().join("a"));
    let b = small_config(&root.path().join("b"));

    let ra = pipeline::cmd_generate(&a).unwrap();
    assert_eq!(ra.tasks, vec![(1, 6), (4, 6)]);
    let rb = pipeline::cmd_generate(&b).unwrap();
    assert_eq!(ra.checksums, rb.checksums);
    assert_eq!(ra.checksums.lines().count(), 12);

    // rerunning over a finished directory changes nothing
    assert_eq!(pipeline::cmd_generate(&a).unwrap().checksums, ra.checksums);

    // interrupt b: forget the second task and lose one of its files
    let manifest_path = rb.dataset_dir.join(store::MANIFEST);
    let mut manifest: store::Manifest = store::read_json(&manifest_path).unwrap();
    manifest.tasks[1].norm = None;
    for s in &mut manifest.tasks[1].samples {
        s.complete = false;
    }
    fs::write(&manifest_path, serde_json::to_vec(&manifest).unwrap()).unwrap();
    fs::remove_file(rb.dataset_dir.join(store::sample_file(4, 3))).unwrap();
    assert!(matches!(store::load_dataset(&rb.dataset_dir), Err(Error::Config(_))));
    assert_eq!(pipeline::cmd_generate(&b).unwrap().checksums, ra.checksums);

    // flip one payload byte
    let victim = rb.dataset_dir.join(store::sample_file(1, 2));
    let mut bytes = fs::read(&victim).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    fs::write(&victim, bytes).unwrap();
    let err = store::load_dataset(&rb.dataset_dir).unwrap_err();
    assert!(matches!(err, Error::Crc { .. }), "{err}");
    assert!(err.to_string().contains("sample_0002.tlf"), "{err}");
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let err = PipelineConfig::from_json(r#"{"grid": {"n_range": 32, "n_depth": 32, "range_max": 1e5, "depth_max": 3000, "colour": 1}}"#).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let err = PipelineConfig::from_json(r#"{"gird": {}}"#).unwrap_err();
    assert!(err.to_string().contains("gird"), "{err}");
}

#[test]
fn grids_too_small_for_four_halvings_are_rejected() {
    let mut cfg = PipelineConfig::default();
    cfg.set_grid(15, 256);
    assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
    cfg.set_grid(16, 16);
    cfg.validate().unwrap();
}

#[test]
fn train_resumes_from_the_last_stage_and_evaluates() {
    let root = tempfile::tempdir().unwrap();
    let a = small_config(&root.path().join("a"));
    let data = pipeline::cmd_generate(&a).unwrap().dataset_dir;
    let full = pipeline::cmd_train(&a, &data).unwrap();
    assert_eq!(full.resumed_from_stage, 0);
    assert_eq!(full.log.matrix.len(), 2);
    let csv = fs::read_to_string(full.train_dir.join("loss.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "stage,task,epoch,split,loss");

    // pretend the run died after the first stage
    let b = small_config(&root.path().join("b"));
    let train_b = b.output_dir.join("train");
    fs::create_dir_all(&train_b).unwrap();
    for f in ["stage_01.tlf", "stage_01.json"] {
        fs::copy(full.train_dir.join(f), train_b.join(f)).unwrap();
    }
    fs::copy(full.train_dir.join("stage_01.json"), train_b.join(pipeline::PROGRESS)).unwrap();
    let resumed = pipeline::cmd_train(&b, &data).unwrap();
    assert_eq!(resumed.resumed_from_stage, 1);
    assert_eq!(resumed.log, full.log);
    assert_eq!(
        fs::read(full.train_dir.join("model.tlf")).unwrap(),
        fs::read(train_b.join("model.tlf")).unwrap()
    );
    let progress: SequenceProgress = store::read_json(&train_b.join(pipeline::PROGRESS)).unwrap();
    assert_eq!(progress.stages_done, 2);

    let report = pipeline::cmd_evaluate(&a, &full.train_dir.join("model.tlf"), &data).unwrap();
    assert_eq!(report.tasks.len(), 2);
    for t in &report.tasks {
        assert!(t.test_ssim.is_finite() && t.test_ssim <= 1.0);
        assert_eq!(t.transect_files.len(), 2);
        let first = fs::read_to_string(&t.transect_files[0]).unwrap();
        assert_eq!(first.lines().count(), 33);
    }
    let timing = report.timing.unwrap();
    assert_eq!(timing.fields, 2);
    assert!(timing.speedup > 0.0);
    assert!(a.output_dir.join("eval/report.json").exists());
}

#[test]
fn solve_and_predict_write_fields_and_renders() {
    let root = tempfile::tempdir().unwrap();
    let cfg = small_config(&root.path().join("run"));
    let csv = root.path().join("ridge.csv");
    fs::write(&csv, "range_m,depth_m\n0,3000\n40000,3000\n50000,1000\n60000,3000\n100000,3000\n").unwrap();

    let solved = pipeline::cmd_solve(&cfg, &csv).unwrap();
    let c = Container::read(&solved.field_path).unwrap();
    assert_eq!(c.get("field").unwrap().dims, vec![32, 32]);
    let pgm = fs::read(&solved.render_path).unwrap();
    assert!(pgm.starts_with(b"P5\n32 32\n255\n"));
    assert_eq!(pgm.len(), b"P5\n32 32\n255\n".len() + 32 * 32);

    let state = oceantl::model::ModelState::new(cfg.model.clone(), 0).unwrap();
    let mut state = state;
    state.norm_stats.insert(3, oceantl::scenario::NormStats { mean: 60.0, std: 20.0 });
    let ckpt = root.path().join("m.tlf");
    state.save(&ckpt).unwrap();
    let p1 = pipeline::cmd_predict(&cfg, &ckpt, &csv, None).unwrap();
    let first = fs::read(&p1.field_path).unwrap();
    let p2 = pipeline::cmd_predict(&cfg, &ckpt, &csv, Some(3)).unwrap();
    assert_eq!(first, fs::read(&p2.field_path).unwrap());
    let field = Container::read(&p1.field_path).unwrap().get("field").unwrap().to_field(cfg.grid, 200.0).unwrap();
    assert!(field.values.iter().all(|&v| v <= 200.0));
    // the ridge top is below the seafloor line: plateau cells render white
    let pgm = fs::read(&p1.render_path).unwrap();
    let header = b"P5\n32 32\n255\n".len();
    assert_eq!(pgm[header + 31 * 32 + 16], 255);
    assert!(matches!(pipeline::cmd_predict(&cfg, &ckpt, &csv, Some(9)), Err(Error::Config(_))));
}
