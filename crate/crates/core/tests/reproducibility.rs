use std::fs;
use std::path::PathBuf;

use civae::flows::{flow_forward, flow_inverse, pad_latent, CouplingStack};
use civae::models::{build_model, train_restarts, Checkpoint, Mode, ModelConfig, TrainConfig};
use civae::rng::{self, normals};
use civae::synthdata::{generate, Scheme};
use serde::{Deserialize, Serialize};

fn tiny_config() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 40,
        seed: 21,
        ..TrainConfig::default()
    }
}

#[test]
fn generation_is_bit_identical() {
    for scheme in [Scheme::Sine, Scheme::Quadratic, Scheme::TwoCircles] {
        let a = generate(scheme, 300, 4, 4).unwrap();
        let b = generate(scheme, 300, 4, 4).unwrap();
        assert_eq!(a, b);
        let c = generate(scheme, 300, 5, 4).unwrap();
        assert_ne!(a.x, c.x);
    }
}

#[test]
fn training_is_bit_identical() {
    let ds = generate(Scheme::Sine, 200, 1, 1).unwrap();
    for mode in [Mode::Ivae, Mode::Ci] {
        let config = ModelConfig::for_scheme(Scheme::Sine, ds.d_x(), ds.d_u(), mode);
        let run = || {
            let out = train_restarts(&config, &ds, &tiny_config(), 2, &mut |_, _| {}).unwrap();
            let ck = Checkpoint::from_model(&out.model, &config, out.init_seed, serde_json::Value::Null);
            (out.model.param_hash(), serde_json::to_string(&ck).unwrap(), out.history)
        };
        let (h1, j1, hist1) = run();
        let (h2, j2, hist2) = run();
        assert_eq!(h1, h2, "{mode:?}");
        assert_eq!(j1, j2, "{mode:?}");
        assert_eq!(hist1, hist2, "{mode:?}");
    }
}

#[test]
fn initialization_depends_only_on_seed() {
    let config = ModelConfig::for_scheme(Scheme::Quadratic, 100, 2, Mode::Ci);
    let a = build_model(&config, 3).unwrap().param_hash();
    assert_eq!(a, build_model(&config, 3).unwrap().param_hash());
    assert_ne!(a, build_model(&config, 4).unwrap().param_hash());
}

#[derive(Debug, Serialize, Deserialize)]
struct GoldenCase {
    flow_seed: u64,
    z: Vec<f64>,
    x: Vec<f64>,
}

const GOLDEN_SEEDS: [u64; 3] = [0, 7, 2024];

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/flow_golden.json")
}

fn golden_cases() -> Vec<GoldenCase> {
    GOLDEN_SEEDS
        .iter()
        .map(|&flow_seed| {
            let z = normals(&mut rng::stream(99, 0, flow_seed), 2);
            let flow = CouplingStack::ground_truth(100, flow_seed).unwrap();
            let x = flow_forward(&flow, &pad_latent(&z, 100, flow_seed).unwrap()).unwrap();
            GoldenCase { flow_seed, z, x }
        })
        .collect()
}

/// Set `CIVAE_BLESS=1` to rewrite the stored vectors after an intended change.
#[test]
fn mixing_function_matches_golden_vectors() {
    let path = golden_path();
    let fresh = golden_cases();
    if std::env::var_os("CIVAE_BLESS").is_some() {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, serde_json::to_string_pretty(&fresh).unwrap()).unwrap();
    }
    let stored: Vec<GoldenCase> = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(stored.len(), fresh.len());
    for (s, f) in stored.iter().zip(&fresh) {
        assert_eq!(s.flow_seed, f.flow_seed);
        assert_eq!(s.z, f.z);
        for (a, b) in s.x.iter().zip(&f.x) {
            assert_eq!(a.to_bits(), b.to_bits(), "seed {}", s.flow_seed);
        }
        let flow = CouplingStack::ground_truth(100, s.flow_seed).unwrap();
        let v = flow_inverse(&flow, &s.x).unwrap();
        for (a, b) in v.iter().zip(&s.z) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
