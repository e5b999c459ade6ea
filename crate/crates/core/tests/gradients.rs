//! Central finite differences against the hand-written backward pass.

use stylemix_core::math::SeededRng;
use stylemix_core::model::completion_nll;
use stylemix_core::model::{
    backward, forward, param_gradients, sequence_log_prob, AuthorAdapter, BaseGrad, BaseModel, ModelConfig,
    ScaledAdapter,
};

const STEP: f64 = 1e-5;

fn toy_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 11,
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        d_ff: 16,
        context_len: 16,
    }
}

fn perturbed_model(seed: u64) -> BaseModel {
    let mut m = BaseModel::init(toy_config(), &mut SeededRng::new(seed)).unwrap();
    let mut rng = SeededRng::new(seed + 1000);
    for (_, t) in m.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.normal(0.0, 0.25));
    }
    m
}

fn random_adapter(model: &BaseModel, seed: u64) -> AuthorAdapter {
    let mut rng = SeededRng::new(seed);
    let mut a = AuthorAdapter::init("toy", &model.config, 3, 6.0, &mut rng);
    for f in a.factors_mut() {
        f.data_mut().iter_mut().for_each(|v| *v = rng.normal(0.0, 0.2));
    }
    a
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn nll(model: &BaseModel, adapters: &[ScaledAdapter<'_>], prompt: &[usize], completion: &[usize]) -> f64 {
    -sequence_log_prob(model, adapters, prompt, completion).unwrap()
}

#[test]
fn base_gradients_match_central_differences() {
    for seed in [1u64, 2, 3] {
        let model = perturbed_model(seed);
        let adapter = random_adapter(&model, seed + 50);
        let scales = [0.7, -0.3];
        let sa = [ScaledAdapter::new(&adapter, &scales)];
        let prompt = [0, 3, 7, 2, 9];
        let completion = [4, 1, 8, 10];
        let (_, grad) = param_gradients(&model, &sa, &prompt, &completion, BaseGrad::All).unwrap();

        let names: Vec<String> = model.tensors().into_iter().map(|(n, _)| n).collect();
        let mut rng = SeededRng::new(seed * 7);
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let ti = rng.below(names.len());
            let len = model.tensors()[ti].1.data().len();
            let k = rng.below(len);
            let analytic = grad.tensors()[ti].1.data()[k];
            let eval = |delta: f64| {
                let mut m = model.clone();
                m.tensors_mut()[ti].1.data_mut()[k] += delta;
                nll(&m, &sa, &prompt, &completion)
            };
            let numeric = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
            let e = rel_err(analytic, numeric);
            // positions past the prompt+completion never receive gradient
            if analytic == 0.0 && numeric.abs() < 1e-9 {
                continue;
            }
            worst = worst.max(e);
            assert!(
                e <= 1e-4,
                "{}[{k}]: analytic {analytic}, numeric {numeric}, rel {e}",
                names[ti]
            );
        }
        eprintln!("seed {seed}: worst relative error {worst:.2e}");
    }
}

#[test]
fn adapter_factor_gradients_match_central_differences() {
    let model = perturbed_model(9);
    let a1 = random_adapter(&model, 10);
    let a2 = random_adapter(&model, 11);
    let s1 = [0.5, 1.1];
    let s2 = [-0.8, 0.4];
    let tokens = [0usize, 5, 6, 2, 3, 9, 1];
    let start = 4;
    let sa = [ScaledAdapter::new(&a1, &s1), ScaledAdapter::new(&a2, &s2)];
    let cache = forward(&model, &sa, &tokens).unwrap();
    let (_, dl) = completion_nll(&cache.logits, &tokens, start, 1.0).unwrap();
    let mut grads = vec![a1.zeros_like(), a2.zeros_like()];
    backward(&model, &sa, &cache, &dl, BaseGrad::None, None, Some(&mut grads)).unwrap();

    let mut rng = SeededRng::new(77);
    for _ in 0..20 {
        let which = rng.below(2);
        let nf = a1.factors().len();
        let fi = rng.below(nf);
        let k = rng.below(a1.factors()[fi].data().len());
        let analytic = grads[which].factors()[fi].data()[k];
        let eval = |delta: f64| {
            let mut adapters = [a1.clone(), a2.clone()];
            adapters[which].factors_mut()[fi].data_mut()[k] += delta;
            let sa = [
                ScaledAdapter::new(&adapters[0], &s1),
                ScaledAdapter::new(&adapters[1], &s2),
            ];
            nll(&model, &sa, &tokens[..start], &tokens[start..])
        };
        let numeric = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
        let e = rel_err(analytic, numeric);
        assert!(e <= 1e-4, "adapter {which} factor {fi}[{k}]: {analytic} vs {numeric}");
    }
}

#[test]
fn effective_query_value_gradients_match_differences_on_merged_weights() {
    let model = perturbed_model(21);
    let prompt = [0, 2, 4, 6];
    let completion = [8, 10, 1];
    let (_, grad) = param_gradients(&model, &[], &prompt, &completion, BaseGrad::QueryValue).unwrap();
    let mut rng = SeededRng::new(5);
    for _ in 0..20 {
        let j = rng.below(2);
        let query = rng.bernoulli(0.5);
        let (r, c) = (rng.below(8), rng.below(8));
        let analytic = if query {
            grad.blocks[j].wq.get(r, c)
        } else {
            grad.blocks[j].wv.get(r, c)
        };
        let eval = |delta: f64| {
            let mut m = model.clone();
            let w = if query {
                &mut m.blocks[j].wq
            } else {
                &mut m.blocks[j].wv
            };
            let old = w.get(r, c);
            w.set(r, c, old + delta);
            nll(&m, &[], &prompt, &completion)
        };
        let numeric = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
        assert!(rel_err(analytic, numeric) <= 1e-4, "{analytic} vs {numeric}");
    }
}
