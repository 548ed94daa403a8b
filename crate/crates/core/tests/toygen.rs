use asft_core::numkit::SeededRng;
use asft_core::toygen::{
    build_corpus, export_dataset, import_dataset, mean_loss, property, sample_dataset, train_vae, validate,
    GradScope, Property, ToyVae, TrainConfig, LATENT_DIM,
};

#[test]
fn parameter_layout() {
    let model = ToyVae::random(&mut SeededRng::new(1, 0));
    assert_eq!(ToyVae::param_count(), 22_320);
    assert_eq!(model.values().len(), 22_320);
    assert_eq!(model.params().stochastic_len(), 10_976);
    assert_eq!(model.decoder_range().len(), 10_976);
    assert_eq!(model.decoder_range().end, 22_320);
    let copy = ToyVae::from_params(model.values().to_vec()).unwrap();
    assert_eq!(copy.values(), model.values());
    assert!(ToyVae::from_params(vec![0.0; 5]).is_err());
}

#[test]
fn decoder_only_gradients_leave_the_encoder_alone() {
    let mut rng = SeededRng::new(2, 0);
    let model = ToyVae::random(&mut rng);
    let seq = sample_dataset(&mut rng, 1)[0];
    let eps = rng.normal_vec(LATENT_DIM);
    let (l_all, g_all) = model.loss_and_grad_with(model.values(), &seq, &eps, GradScope::All).unwrap();
    let (l_dec, g_dec) = model
        .loss_and_grad_with(model.values(), &seq, &eps, GradScope::DecoderOnly)
        .unwrap();
    assert_eq!(l_all, l_dec);
    let dec = model.decoder_range();
    assert!(g_dec[..dec.start].iter().all(|g| *g == 0.0));
    assert_eq!(&g_dec[dec.clone()], &g_all[dec.clone()]);
    assert!(g_all[..dec.start].iter().any(|g| *g != 0.0));
    let terms = model.loss_terms_with(model.values(), &seq, &eps).unwrap();
    assert!((terms.total() - l_all).abs() <= 1e-12 * l_all.abs());
    assert!(terms.kl >= 0.0 && terms.recon >= 0.0);
}

#[test]
fn sampled_sequences_are_valid_and_round_trip() {
    let data = sample_dataset(&mut SeededRng::new(3, 0), 300);
    assert!(data.iter().all(validate));
    let back = import_dataset(&export_dataset(&data)).unwrap();
    assert_eq!(back, data);
    for p in Property::ALL {
        for s in &data[..20] {
            let v = property(s, p).unwrap();
            assert!(v.is_finite());
            assert_eq!(v, property(s, p).unwrap());
        }
    }
    assert!(import_dataset("not a sequence\n").is_err());
}

#[test]
fn short_training_reduces_loss_and_is_reproducible() {
    let cfg = TrainConfig {
        epochs: 3,
        dataset_size: 300,
        ..TrainConfig::default()
    };
    let corpus = build_corpus(&cfg).unwrap();
    assert_eq!(corpus, build_corpus(&cfg).unwrap());
    let a = train_vae(&corpus, &cfg).unwrap();
    assert_eq!(a.epoch_losses.len(), 3);
    assert!(a.epoch_losses[2] < a.initial_loss, "{} -> {:?}", a.initial_loss, a.epoch_losses);
    let b = train_vae(&corpus, &cfg).unwrap();
    assert_eq!(a.model.values(), b.model.values());
    let loss = mean_loss(&a.model, &corpus, &mut SeededRng::new(0, 0)).unwrap();
    assert!(loss.is_finite());
    assert!(train_vae(&[], &cfg).is_err());
}
