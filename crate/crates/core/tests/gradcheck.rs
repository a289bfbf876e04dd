use ptkit::model::{Example, ModelConfig, PositionScheme, Seq2Seq, Target, TrainableMask};

/// Largest |a - n| / max(|a| + |n|, 1e-6) over sampled entries of every tensor.
fn max_rel_error(model: &Seq2Seq, batch: &[Example]) -> (f64, String) {
    let mask = TrainableMask::all(model.params());
    let (_, grads) = model.batch_loss_and_grad(batch, &mask).unwrap();
    let h = 1e-3;
    let mut worst = (0.0, String::new());
    for (ti, t) in model.params().tensors().iter().enumerate() {
        let g = grads[ti].as_ref();
        let step = (t.data.len() / 24).max(1);
        for i in (0..t.data.len()).step_by(step) {
            let mut m = model.clone();
            m.params_mut().tensors_mut()[ti].data[i] += h;
            let up = m.batch_loss_and_grad(batch, &mask).unwrap().0;
            m.params_mut().tensors_mut()[ti].data[i] -= 2.0 * h;
            let down = m.batch_loss_and_grad(batch, &mask).unwrap().0;
            let numeric = (up - down) / (2.0 * h);
            let analytic = g.map_or(0.0, |g| g[i]);
            let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6);
            if rel > worst.0 {
                worst = (rel, format!("{}[{i}] analytic {analytic} numeric {numeric}", t.name));
            }
        }
    }
    worst
}

fn batch() -> Vec<Example> {
    vec![
        Example {
            input: vec![5, 6, 7, 0],
            target: Target::Sequence(vec![8, 9, 1]),
        },
        Example {
            input: vec![10, 4],
            target: Target::Score(3.7),
        },
        Example {
            input: vec![11, 12, 13],
            target: Target::Class(1),
        },
    ]
}

#[test]
fn gradients_match_finite_differences() {
    for (scheme, tie) in [
        (PositionScheme::LearnedAbsolute, true),
        (
            PositionScheme::RelativeBucket {
                num_buckets: 8,
                max_distance: 16,
            },
            false,
        ),
    ] {
        let cfg = ModelConfig {
            vocab_size: 16,
            d_model: 8,
            n_heads: 2,
            d_ff: 12,
            n_enc_layers: 1,
            n_dec_layers: 2,
            max_len: 8,
            position_scheme: scheme,
            tie_embeddings: tie,
        };
        let model = Seq2Seq::init(&cfg, 21).unwrap();
        let (err, at) = max_rel_error(&model, &batch());
        assert!(err < 1e-3, "max relative error {err} at {at}");
    }
}
