use spandec::corpus::{build_vocab, generate_synthetic, SyntheticSpec};
use spandec::eval::{benchmark_throughput, BenchConfig};
use spandec::models::{Model, ModelConfig, Strategy, Tagger};
use spandec::nnet::EncoderConfig;

fn untrained(strategy: Strategy, spec: &SyntheticSpec) -> Tagger {
    let corpus = generate_synthetic(spec, 1).unwrap();
    let vocab = build_vocab(&corpus, 1).unwrap();
    let mut encoder = EncoderConfig::desk();
    encoder.vocab_size = vocab.len();
    let config = ModelConfig::new(strategy, encoder, spec.label_set().unwrap());
    Tagger {
        model: Model::init(config, 3).unwrap(),
        vocab,
    }
}

fn sentences(spec: &SyntheticSpec, n: usize, seed: u64) -> Vec<Vec<String>> {
    let spec = SyntheticSpec { sentences: n, ..spec.clone() };
    generate_synthetic(&spec, seed).unwrap().iter().map(|s| s.words.clone()).collect()
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

#[test]
fn token_tagging_outpaces_plmarker() {
    let spec = SyntheticSpec::default();
    let data = sentences(&spec, 40, 2);
    let cfg = BenchConfig { repeats: 3, ..BenchConfig::default() };
    let token = benchmark_throughput(&untrained(Strategy::Token, &spec), &data, &cfg).unwrap();
    let plmarker = benchmark_throughput(&untrained(Strategy::Plmarker, &spec), &data, &cfg).unwrap();
    assert_eq!(token.sentences, 40);
    assert_eq!(token.measured_batches, 5);
    assert!(
        median(token.runs.clone()) > median(plmarker.runs.clone()),
        "token {:?} plmarker {:?}",
        token.runs,
        plmarker.runs
    );
}

#[test]
fn throughput_is_size_invariant() {
    let spec = SyntheticSpec::default();
    let tagger = untrained(Strategy::Spandec, &spec);
    let small = sentences(&spec, 40, 4);
    let large: Vec<Vec<String>> = small.iter().chain(&small).cloned().collect();
    let cfg = BenchConfig { repeats: 5, ..BenchConfig::default() };
    let a = median(benchmark_throughput(&tagger, &small, &cfg).unwrap().runs);
    let b = median(benchmark_throughput(&tagger, &large, &cfg).unwrap().runs);
    let ratio = b / a;
    assert!((0.67..=1.5).contains(&ratio), "{a} vs {b}");
}

#[test]
fn rejects_empty_and_degenerate_configs() {
    let spec = SyntheticSpec::default();
    let tagger = untrained(Strategy::Token, &spec);
    assert!(benchmark_throughput(&tagger, &[], &BenchConfig::default()).is_err());
    let zero = BenchConfig { batch_size: 0, ..BenchConfig::default() };
    assert!(benchmark_throughput(&tagger, &sentences(&spec, 2, 1), &zero).is_err());
}
