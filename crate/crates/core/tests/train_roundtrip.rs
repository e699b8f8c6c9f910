use lipwave::checkpoint::Container;
use lipwave::critic::CriticConfig;
use lipwave::generator::GeneratorConfig;
use lipwave::io::{read_wav, write_wav};
use lipwave::metrics::cepstrum::CepstrumConfig;
use lipwave::speech_encoder::LogMelEncoder;
use lipwave::synthetic::toy_samples;
use lipwave::trainer::{load_generator, McdValidation, TrainConfig, Trainer};

fn tiny() -> (GeneratorConfig, CriticConfig) {
    let g = GeneratorConfig {
        window: 3,
        encoder_channels: vec![2, 2, 4, 4, 4],
        gru_hidden: 6,
        decoder_channels: 4,
        ..GeneratorConfig::desk()
    };
    let c = CriticConfig { clip_seconds: 0.1, layers: 4, base_channels: 2, max_channels: 4, ..CriticConfig::desk() };
    (g, c)
}

#[test]
fn trained_generator_survives_save_and_load() {
    let samples = toy_samples(6, 5, 8000, 4).unwrap();
    let (gcfg, ccfg) = tiny();
    let cfg = TrainConfig { batch_size: 2, max_epochs: 2, ..TrainConfig::default() };
    let encoder = Box::new(LogMelEncoder::new(&Default::default(), 8000).unwrap());
    let mut trainer = Trainer::build(&gcfg, &ccfg, encoder, cfg, 8000).unwrap();
    let mut hooks = McdValidation { cepstrum: CepstrumConfig::default() };
    let outcome = trainer.train(&samples[..4], &samples[4..], &mut hooks).unwrap();
    assert_eq!(outcome.epochs, 2);
    assert!(outcome.best_val_mcd.is_finite());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("best.lwck");
    trainer.best_checkpoint(&serde_json::json!({})).save(&path).unwrap();
    let loaded = load_generator(&Container::load(&path).unwrap()).unwrap();
    let expected = trainer.best_generator().generate(&samples[5].video).unwrap();
    let got = loaded.generate(&samples[5].video).unwrap();
    assert_eq!(got.samples, expected.samples);

    let wav = dir.path().join("out.wav");
    write_wav(&wav, &got).unwrap();
    let back = read_wav(&wav).unwrap();
    assert_eq!(back.len(), got.len());
    assert!(back.samples.iter().zip(&got.samples).all(|(a, b)| (a - b).abs() <= 2.0 / 32768.0));
}
