use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use tased_core::archive::{self, DType};
use tased_core::data::{synth_dataset, SynthParams};
use tased_core::infer::{plan_windows, predict_video, predict_windows};
use tased_core::model::{ModelConfig, Network};
use tased_core::rng;
use tased_core::Tensor;

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn synth_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let params = SynthParams {
        videos: 2,
        frames: 9,
        blobs: 2,
        ..SynthParams::default()
    };
    let gen = |name: &str, seed: u64| {
        let root = dir.path().join(name);
        synth_dataset(&root, &SynthParams { seed, ..params.clone() }, &mut rng::seeded(seed)).unwrap();
        tree(&root)
    };
    let a = gen("a", 4);
    assert!(!a.is_empty());
    assert_eq!(a, gen("b", 4));
    assert_ne!(a, gen("c", 5));
}

fn frames(n: usize, size: [usize; 2], seed: u64) -> Vec<Tensor> {
    let mut r = rng::seeded(seed);
    (0..n).map(|_| Tensor::uniform(vec![3, size[0], size[1]], -1.0, 1.0, &mut r)).collect()
}

#[test]
fn every_frame_gets_exactly_one_map() {
    let net = Network::build(&ModelConfig::tiny(4)).unwrap();
    for n in [1, 3, 4, 7, 8, 11] {
        let maps = predict_video(&net, &frames(n, [32, 64], n as u64)).unwrap();
        assert_eq!(maps.len(), n);
        for m in &maps {
            assert_eq!(m.shape(), [32, 64]);
            assert!(m.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }
}

#[test]
fn window_order_and_batching_do_not_change_predictions() {
    let net = Network::build(&ModelConfig::tiny(4).with_seed(2)).unwrap();
    let f = frames(10, [32, 64], 9);
    let plan = plan_windows(f.len(), 4).unwrap();
    let reference = predict_windows(&net, &f, &plan.windows, 1).unwrap();

    let mut order: Vec<usize> = (0..plan.windows.len()).collect();
    order.shuffle(&mut rng::seeded(1));
    let shuffled: Vec<_> = order.iter().map(|&i| plan.windows[i].clone()).collect();
    let out = predict_windows(&net, &f, &shuffled, 3).unwrap();
    for (k, &i) in order.iter().enumerate() {
        assert_eq!(out[k].data(), reference[i].data(), "window {i}");
    }
    for batch in [2, 4, 10] {
        let out = predict_windows(&net, &f, &plan.windows, batch).unwrap();
        for (a, b) in out.iter().zip(&reference) {
            tased_core::tensor::check_close(a, b, 1e-12, 1e-12).unwrap();
        }
    }
}

#[test]
fn state_archive_round_trips_and_names_bad_tensors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.tasd");
    let src = Network::build(&ModelConfig::tiny(4).with_seed(1)).unwrap();
    archive::save(&path, &src.state(), DType::F64).unwrap();

    let mut dst = Network::build(&ModelConfig::tiny(4).with_seed(2)).unwrap();
    let entries = archive::load(&path).unwrap();
    dst.load_state(&entries).unwrap();
    assert_eq!(dst.state(), src.state());

    let (name, t) = entries[0].clone();
    let mut wrong = entries.clone();
    wrong[0] = (name.clone(), Tensor::zeros(vec![t.len() + 1]));
    let err = dst.load_state(&wrong).unwrap_err().to_string();
    assert!(err.contains(&name), "{err}");

    let err = dst.load_state(&entries[1..]).unwrap_err().to_string();
    assert!(err.contains(&name), "{err}");

    let mut extra = entries.clone();
    extra.push(("stray.weight".into(), Tensor::zeros(vec![1])));
    let err = dst.load_state(&extra).unwrap_err().to_string();
    assert!(err.contains("stray.weight"), "{err}");

    let f32_path = dir.path().join("w32.tasd");
    archive::save(&f32_path, &src.state(), DType::F32).unwrap();
    let mut lossy = Network::build(&ModelConfig::tiny(4)).unwrap();
    lossy.load_state(&archive::load(&f32_path).unwrap()).unwrap();
    for ((_, a), (_, b)) in lossy.state().iter().zip(src.state().iter()) {
        tased_core::tensor::check_close(a, b, 1e-6, 1e-7).unwrap();
    }
}
