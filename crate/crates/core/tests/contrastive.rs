use cogmotor::contrastive::{extract_features, train_contrastive, Backbone, BackboneConfig, Frame};
use cogmotor::featurestream::channel_group_gap;
use ndarray::Array3;

/// A bright disc on a dark background whose centre and colour vary per frame.
fn disc_frame(cx: f64, cy: f64, rgb: [f64; 3]) -> Frame<f64> {
    let size = 24;
    let pixels = Array3::from_shape_fn((size, size, 3), |(y, x, c)| {
        let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
        if d < 5.0 {
            rgb[c]
        } else {
            0.1
        }
    });
    Frame::new(pixels).unwrap()
}

fn frames(n: usize) -> Vec<Frame<f64>> {
    (0..n)
        .map(|i| {
            let t = i as f64 * 0.7;
            let rgb = if i % 2 == 0 { [0.9, 0.2, 0.2] } else { [0.2, 0.3, 0.9] };
            disc_frame(12.0 + 6.0 * t.cos(), 12.0 + 6.0 * t.sin(), rgb)
        })
        .collect()
}

fn config() -> BackboneConfig {
    BackboneConfig {
        feature_dim: 12,
        projection_dim: 16,
        hidden_channels: vec![6],
        image_size: 16,
        batch_size: 8,
        epochs: 12,
        patience: 4,
        learning_rate: 3e-3,
        validation_fraction: 0.25,
        rng_seed: 5,
        ..Default::default()
    }
}

#[test]
fn training_lowers_held_out_loss() {
    let model = train_contrastive(&frames(40), &config()).unwrap();
    let initial = model.history[0];
    let best = model.history[1 + model.best_epoch];
    assert!(best < initial, "initial {initial}, best {best}");
    assert!(model.history.iter().skip(1).all(|l| *l >= best));
}

#[test]
fn extraction_shape_and_purity() {
    let model = train_contrastive(&frames(20), &BackboneConfig { epochs: 2, ..config() }).unwrap();
    let clip = vec![disc_frame(8.0, 8.0, [1.0, 1.0, 0.0]); 3]
        .into_iter()
        .chain(frames(4))
        .collect::<Vec<_>>();
    let feats = extract_features(&model, &clip);
    assert_eq!(feats.dim(), (7, 12));
    assert_eq!(feats.row(0), feats.row(1));
    assert_eq!(feats, extract_features(&model, &clip));
    let reduced = channel_group_gap(&feats, 6).unwrap();
    assert_eq!(reduced.dim(), (7, 6));
}

#[test]
fn rejects_too_few_frames() {
    assert!(train_contrastive(&frames(5), &config()).is_err());
    assert!(train_contrastive(&frames(40), &BackboneConfig { temperature: 0.0, ..config() }).is_err());
}

#[test]
fn backbone_round_trips() {
    let model = Backbone::<f64>::initialized(&config()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("backbone.json");
    model.save(&path).unwrap();
    assert_eq!(Backbone::<f64>::load(&path).unwrap(), model);
}
