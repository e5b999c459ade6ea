//! Fixtures shared by the criterion benches.

use stylemix_core::math::SeededRng;
use stylemix_core::mixing::{ExpandedAdapter, Granularity, MixWeights};
use stylemix_core::model::{encode_prompt, AuthorAdapter, BaseModel, ModelConfig, Tokenizer};

pub const SENTENCE: &str = "the old hound sees a quiet hill near the river and the miller waits.";

/// Default-sized model, `k` adapters with non-zero deltas, and mixing weights.
pub struct Fixture {
    pub model: BaseModel,
    pub adapters: Vec<AuthorAdapter>,
    pub expanded: Vec<ExpandedAdapter>,
    pub weights: MixWeights,
    pub prompt: Vec<usize>,
}

impl Fixture {
    pub fn new(k: usize) -> Self {
        let cfg = ModelConfig::default();
        let mut rng = SeededRng::new(7);
        let model = BaseModel::init(cfg.clone(), &mut rng).expect("default config is valid");
        let adapters: Vec<AuthorAdapter> = (0..k)
            .map(|i| {
                let mut a = AuthorAdapter::init(format!("a{i}"), &cfg, 8, 16.0, &mut rng);
                for f in a.factors_mut() {
                    f.data_mut().iter_mut().for_each(|v| *v = rng.normal(0.0, 0.05));
                }
                a
            })
            .collect();
        let expanded = adapters.iter().map(ExpandedAdapter::new).collect();
        let ids = adapters.iter().map(|a| a.author_id.clone()).collect();
        let free: Vec<f64> = (0..k * cfg.n_layers).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let weights = MixWeights::from_free(Granularity::Layer, ids, cfg.n_layers, &free).expect("weights in bounds");
        let prompt = encode_prompt(&Tokenizer::standard(), SENTENCE).expect("ascii prompt");
        Self {
            model,
            adapters,
            expanded,
            weights,
            prompt,
        }
    }
}
