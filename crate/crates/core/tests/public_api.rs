use proptest::prelude::*;

use hinmal_core::datagen::{generate, random_hin, SyntheticConfig};
use hinmal_core::incremental::{embed_batch, IncrementalConfig};
use hinmal_core::metastructure::{build_all, default_structures};
use hinmal_core::msgat::{load_model, save_model, train, TrainConfig};

fn small() -> SyntheticConfig {
    SyntheticConfig {
        n_in: 60,
        n_out: 15,
        apis: 40,
        permissions: 12,
        classes: 20,
        interfaces: 10,
        so_files: 8,
        density: 0.08,
        ..SyntheticConfig::default()
    }
}

fn quick() -> TrainConfig {
    TrainConfig {
        dim: 8,
        epochs: 5,
        ..TrainConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adjacencies_are_symmetric_and_similarities_bounded(seed in 0u64..10_000) {
        let hin = random_hin(seed, 10, 8);
        for adj in build_all(&hin, &default_structures()).unwrap() {
            prop_assert!(adj.psi().is_symmetric());
            for i in 0..hin.num_apps() {
                for j in 0..hin.num_apps() {
                    let s = adj.similarity(i, j).unwrap();
                    prop_assert!((0.0..=1.0).contains(&s));
                }
            }
        }
    }
}

#[test]
fn out_of_sample_rows_are_convex_combinations() {
    let data = generate(&small()).unwrap();
    let model = train(&data.hin, &default_structures(), &quick()).unwrap();
    let out = embed_batch(&model, &data.hin, &data.batch, &IncrementalConfig::default()).unwrap();
    assert_eq!(out.len(), 15);
    for (k, phi) in model.structure_embeddings().iter().enumerate() {
        for o in 0..out.len() {
            let sel = &out.selections[k][o];
            if sel.neighbors.is_empty() {
                assert!(out.per_structure[k].row(o).iter().all(|&v| v == 0.0));
                continue;
            }
            assert!(sel.neighbors.len() <= 3);
            assert!((sel.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for c in 0..model.dim() {
                let col: Vec<f64> = sel.neighbors.iter().map(|&j| phi.get(j, c)).collect();
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let v = out.per_structure[k].get(o, c);
                assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }
}

#[test]
fn checkpoint_reload_embeds_identically() {
    let data = generate(&small()).unwrap();
    let model = train(&data.hin, &default_structures(), &quick()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_model(&model, &path).unwrap();
    let loaded = load_model(&path).unwrap();
    let cfg = IncrementalConfig::default();
    let a = embed_batch(&model, &data.hin, &data.batch, &cfg).unwrap();
    let b = embed_batch(&loaded, &data.hin, &data.batch, &cfg).unwrap();
    assert_eq!(a.embedding, b.embedding);
    assert_eq!(model.predict_proba(&a.embedding).unwrap(), loaded.predict_proba(&b.embedding).unwrap());
}
