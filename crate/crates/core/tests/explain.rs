use cogmotor::explain::{compute_cam, normalize_resample_cam, spearman_rho};
use cogmotor::featurestream::{Modality, SpatioTemporalMatrix};
use cogmotor::nnet::{train, Head, Target, TrainedModel, VbaNetConfig};
use ndarray::Array2;
use rand::Rng;

fn input(seed: u64, len: usize) -> SpatioTemporalMatrix<f64> {
    let mut rng = cogmotor::seed::rng(seed);
    let data = Array2::from_shape_fn((len, 3), |_| rng.random_range(0.0..1.0));
    SpatioTemporalMatrix::with_prefix(data, 1.0, "c", Modality::Neural).unwrap()
}

fn config(head: Head) -> VbaNetConfig {
    VbaNetConfig {
        conv_filters: 8,
        se_reduction: 4,
        max_epochs: 20,
        rng_seed: 2,
        ..VbaNetConfig::new(3, head)
    }
}

/// Each output equals the time-mean of its CAM plus the output bias.
fn assert_logit_identity(model: &TrainedModel<f64>, outputs: usize) {
    let net = model.network().unwrap();
    for seed in 0..4 {
        let x = input(100 + seed, 15 + seed as usize);
        let logits = model.forward_raw(&x).unwrap().outputs;
        for k in 0..outputs {
            let cam = compute_cam(model, &x, k).unwrap();
            assert_eq!(cam.len(), x.len());
            let gap = cam.iter().sum::<f64>() / cam.len() as f64;
            let bias = net.head_bias(&model.parameters, k);
            assert!((gap + bias - logits[k]).abs() < 1e-9);
        }
    }
}

#[test]
fn trained_classifier_satisfies_logit_identity() {
    let trials: Vec<_> = (0..8)
        .map(|i| {
            let mut x = input(i, 12);
            x.data.column_mut(0).mapv_inplace(|v| v + (i % 2) as f64);
            (x, Target::Class((i % 2) as usize))
        })
        .collect();
    let model = train(&config(Head::Classify { classes: 2 }), &trials).unwrap();
    assert_logit_identity(&model, 2);
    assert!(compute_cam(&model, &input(1, 12), 2).is_err());
}

#[test]
fn regression_cam_uses_single_output() {
    let model = TrainedModel::<f64>::initialized(&config(Head::Regress)).unwrap();
    assert_logit_identity(&model, 1);
    assert!(compute_cam(&model, &input(1, 12), 1).is_err());
}

#[test]
fn zero_head_gives_flat_zero_cam() {
    let mut model = TrainedModel::<f64>::initialized(&config(Head::Classify { classes: 2 })).unwrap();
    let range = model.network().unwrap().head_range();
    model.parameters[range].fill(0.0);
    let cam = compute_cam(&model, &input(5, 10), 1).unwrap();
    assert!(cam.iter().all(|v| *v == 0.0));
    let curve = normalize_resample_cam(&cam, 100, "Pass", Modality::Neural).unwrap();
    assert_eq!(curve.values, vec![0.5; 100]);
    assert_eq!(spearman_rho(&curve.values, &curve.values), None);
}
