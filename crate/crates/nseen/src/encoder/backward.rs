//! Exact gradients of the pair contrastive loss with respect to every
//! encoder parameter, by reverse accumulation through both Siamese towers.
//!
//! The towers share one parameter set, so per-tower gradients are summed.
//! [`numerical_gradient`] provides the central-finite-difference oracle the
//! analytic path is tested against.

use ndarray::{s, Array1, Array2, Axis};

use super::forward::{forward_trace, DirectionTrace, ForwardTrace};
use super::{CharVocab, EncoderParams, LstmCell, Pooling};
use crate::pairs::TrainingPair;
use crate::training::{contrastive_loss, cosine_distance};
use crate::{Error, Result};

/// Gradients (same shapes as the parameters) plus the pair's loss and
/// embedding distance.
pub struct PairGradient {
    pub grads: EncoderParams,
    pub loss: f64,
    pub distance: f64,
}

/// Loss of one training pair under the current parameters.
pub fn pair_loss(
    params: &EncoderParams,
    vocab: &CharVocab,
    pooling: Pooling,
    pair: &TrainingPair,
    margin: f64,
) -> Result<f64> {
    let va = forward_trace(params, vocab, pooling, &pair.name_a)?.embedding;
    let vb = forward_trace(params, vocab, pooling, &pair.name_b)?.embedding;
    let delta = cosine_distance(&va, &vb)?;
    Ok(contrastive_loss(delta, pair.label, margin))
}

/// Analytic gradient of the contrastive loss for one pair.
pub fn backward(
    params: &EncoderParams,
    vocab: &CharVocab,
    pooling: Pooling,
    pair: &TrainingPair,
    margin: f64,
) -> Result<PairGradient> {
    if margin <= 0.0 {
        return Err(Error::InvalidArgument("margin must be > 0".into()));
    }
    let trace_a = forward_trace(params, vocab, pooling, &pair.name_a)?;
    let trace_b = forward_trace(params, vocab, pooling, &pair.name_b)?;
    let va = &trace_a.embedding;
    let vb = &trace_b.embedding;

    let norm_a = va.dot(va).sqrt();
    let norm_b = vb.dot(vb).sqrt();
    if norm_a == 0.0 || norm_b == 0.0 {
        return Err(Error::ZeroVector);
    }
    let cos = va.dot(vb) / (norm_a * norm_b);
    let delta = 1.0 - cos;
    let y = pair.label;
    let loss = contrastive_loss(delta, y, margin);

    // dL/dδ; zero whenever a dissimilar pair already sits outside the margin.
    let dloss_ddelta = y * delta - (1.0 - y) * (margin - delta).max(0.0);

    let mut grads = params.zeros_like();
    if dloss_ddelta != 0.0 {
        // δ = 1 − cos ⇒ ∂δ/∂va = cos·va/‖va‖² − vb/(‖va‖‖vb‖)
        let dva = dloss_ddelta * (&(cos / (norm_a * norm_a) * va) - &(vb / (norm_a * norm_b)));
        let dvb = dloss_ddelta * (&(cos / (norm_b * norm_b) * vb) - &(va / (norm_a * norm_b)));
        tower_backward(params, &trace_a, &dva, &mut grads);
        tower_backward(params, &trace_b, &dvb, &mut grads);
    }

    Ok(PairGradient {
        grads,
        loss,
        distance: delta,
    })
}

/// Backpropagates `dv` (gradient at the embedding) through one tower,
/// accumulating into `grads`.
fn tower_backward(
    params: &EncoderParams,
    trace: &ForwardTrace,
    dv: &Array1<f64>,
    grads: &mut EncoderParams,
) {
    let t_len = trace.char_ids.len();
    let hidden = params.layers[0].fwd.bias.len() / 4;

    // Dense output layer.
    grads.out_bias += dv;
    for (r, &g) in dv.iter().enumerate() {
        grads.out_weight.row_mut(r).scaled_add(g, &trace.pooled);
    }
    let d_pooled = params.out_weight.t().dot(dv); // 2H

    // Un-pool into per-position output gradients of the top layer.
    let mut d_out = Array2::zeros((t_len, 2 * hidden));
    match trace.pooling {
        Pooling::LastHidden => {
            d_out
                .slice_mut(s![t_len - 1, ..hidden])
                .assign(&d_pooled.slice(s![..hidden]));
            d_out
                .slice_mut(s![0, hidden..])
                .assign(&d_pooled.slice(s![hidden..]));
        }
        Pooling::Mean => {
            let per_row = &d_pooled / t_len as f64;
            for mut row in d_out.rows_mut() {
                row.assign(&per_row);
            }
        }
    }

    // Walk the recurrent stack top-down.
    for (layer_idx, layer_trace) in trace.layers.iter().enumerate().rev() {
        let cell_params = &params.layers[layer_idx];
        let mut d_input = Array2::zeros(layer_trace.input.raw_dim());

        let dh_fwd = d_out.slice(s![.., ..hidden]);
        direction_backward(
            &cell_params.fwd,
            &layer_trace.fwd,
            &layer_trace.input,
            &dh_fwd.to_owned(),
            false,
            &mut grads.layers[layer_idx].fwd,
            &mut d_input,
        );
        let dh_bwd = d_out.slice(s![.., hidden..]);
        direction_backward(
            &cell_params.bwd,
            &layer_trace.bwd,
            &layer_trace.input,
            &dh_bwd.to_owned(),
            true,
            &mut grads.layers[layer_idx].bwd,
            &mut d_input,
        );

        if layer_idx == 0 {
            // Scatter into the embedding table; repeated characters sum.
            for (t, &id) in trace.char_ids.iter().enumerate() {
                let mut row = grads.char_embed.row_mut(id);
                row += &d_input.row(t);
            }
        } else {
            d_out = d_input;
        }
    }
}

/// Backpropagation through time for one direction of one layer.
///
/// `reverse` mirrors the forward pass: the reversed direction processed
/// positions from the end, so its gradient walk runs front-to-back.
fn direction_backward(
    cell: &LstmCell,
    trace: &DirectionTrace,
    input: &Array2<f64>,
    dh_ext: &Array2<f64>,
    reverse: bool,
    cell_grads: &mut LstmCell,
    d_input: &mut Array2<f64>,
) {
    let t_len = input.nrows();
    let h = cell.bias.len() / 4;
    let mut dz_all = Array2::zeros((t_len, 4 * h));
    let mut dh_carry = Array1::<f64>::zeros(h);
    let mut dc_carry = Array1::<f64>::zeros(h);

    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new(0..t_len)
    } else {
        Box::new((0..t_len).rev())
    };

    let mut dz = Array1::<f64>::zeros(4 * h);
    for t in order {
        // Predecessor in processing order (whose state fed position t).
        let prev = if reverse {
            (t + 1 < t_len).then_some(t + 1)
        } else {
            t.checked_sub(1)
        };
        for k in 0..h {
            let gi = trace.gate_i[[t, k]];
            let gf = trace.gate_f[[t, k]];
            let gg = trace.gate_g[[t, k]];
            let go = trace.gate_o[[t, k]];
            let tc = trace.cell_tanh[[t, k]];
            let dh = dh_ext[[t, k]] + dh_carry[k];

            let d_o = dh * tc;
            let d_c = dh * go * (1.0 - tc * tc) + dc_carry[k];
            let c_prev = prev.map_or(0.0, |p| trace.cell[[p, k]]);
            let d_f = d_c * c_prev;
            let d_i = d_c * gg;
            let d_g = d_c * gi;
            dc_carry[k] = d_c * gf;

            dz[k] = d_i * gi * (1.0 - gi);
            dz[h + k] = d_f * gf * (1.0 - gf);
            dz[2 * h + k] = d_g * (1.0 - gg * gg);
            dz[3 * h + k] = d_o * go * (1.0 - go);
        }
        dh_carry = cell.w_recur.t().dot(&dz);
        dz_all.row_mut(t).assign(&dz);
    }

    // Batched parameter and input gradients.
    cell_grads.bias += &dz_all.sum_axis(Axis(0));
    cell_grads.w_input += &dz_all.t().dot(input);
    let mut h_prev = Array2::zeros((t_len, h));
    for t in 0..t_len {
        let prev = if reverse {
            (t + 1 < t_len).then_some(t + 1)
        } else {
            t.checked_sub(1)
        };
        if let Some(p) = prev {
            h_prev.row_mut(t).assign(&trace.hidden.row(p));
        }
    }
    cell_grads.w_recur += &dz_all.t().dot(&h_prev);
    *d_input += &dz_all.dot(&cell.w_input);
}

/// Central-difference gradient estimate `(L(θ+ε) − L(θ−ε)) / 2ε`, parameter
/// by parameter. Test oracle; quadratic in the parameter count.
pub fn numerical_gradient(
    params: &EncoderParams,
    vocab: &CharVocab,
    pooling: Pooling,
    pair: &TrainingPair,
    margin: f64,
    epsilon: f64,
) -> Result<EncoderParams> {
    if epsilon <= 0.0 {
        return Err(Error::InvalidArgument("epsilon must be > 0".into()));
    }
    let mut work = params.clone();
    let mut grads = params.zeros_like();
    let chunk_count = work.flat_chunks().len();
    for ci in 0..chunk_count {
        let len = work.flat_chunks()[ci].len();
        for j in 0..len {
            let original = work.flat_chunks()[ci][j];
            work.flat_chunks_mut()[ci][j] = original + epsilon;
            let plus = pair_loss(&work, vocab, pooling, pair, margin)?;
            work.flat_chunks_mut()[ci][j] = original - epsilon;
            let minus = pair_loss(&work, vocab, pooling, pair, margin)?;
            work.flat_chunks_mut()[ci][j] = original;
            grads.flat_chunks_mut()[ci][j] = (plus - minus) / (2.0 * epsilon);
        }
    }
    Ok(grads)
}

/// Symmetric relative error with an absolute floor, for gradient checks.
pub fn gradient_relative_error(analytic: &EncoderParams, numeric: &EncoderParams) -> f64 {
    let mut worst = 0.0f64;
    for (a_chunk, n_chunk) in analytic.flat_chunks().into_iter().zip(numeric.flat_chunks()) {
        for (&a, &n) in a_chunk.iter().zip(n_chunk) {
            let rel = (a - n).abs() / (a.abs() + n.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{init_params, EncoderConfig};
    use crate::pairs::{PairSource, TrainingPair};
    use crate::refset::ReferenceSet;

    fn setup(pooling: Pooling) -> (EncoderParams, CharVocab, EncoderConfig) {
        let r = ReferenceSet::from_pairs([("E1", "abcde"), ("E2", "badec")]).unwrap();
        let vocab = CharVocab::build(&r, 12).unwrap();
        let cfg = EncoderConfig {
            char_embed_dim: 3,
            hidden_dim: 4,
            num_recurrent_layers: 2,
            output_dim: 3,
            max_sequence_length: 12,
            pooling,
        };
        let params = init_params(&cfg, &vocab, 11).unwrap();
        (params, vocab, cfg)
    }

    fn pair(a: &str, b: &str, y: f64) -> TrainingPair {
        TrainingPair::new(a, b, y, PairSource::Positive).unwrap()
    }

    #[test]
    fn forward_is_pure_and_shape_invariant() {
        let (params, vocab, cfg) = setup(Pooling::LastHidden);
        let v1 = super::super::forward(&params, &vocab, cfg.pooling, "abc").unwrap();
        let v2 = super::super::forward(&params, &vocab, cfg.pooling, "abc").unwrap();
        assert_eq!(v1, v2);
        for name in ["a", "abcde", "abcdeabcdeab"] {
            let v = super::super::forward(&params, &vocab, cfg.pooling, name).unwrap();
            assert_eq!(v.len(), cfg.output_dim);
        }
    }

    #[test]
    fn forward_truncates_overlong_names() {
        let (params, vocab, cfg) = setup(Pooling::LastHidden);
        let long = "abcde".repeat(10);
        let truncated: String = long.chars().take(12).collect();
        let v_long = super::super::forward(&params, &vocab, cfg.pooling, &long).unwrap();
        let v_trunc = super::super::forward(&params, &vocab, cfg.pooling, &truncated).unwrap();
        assert_eq!(v_long, v_trunc);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for pooling in [Pooling::LastHidden, Pooling::Mean] {
            let (params, vocab, _) = setup(pooling);
            for (y, margin) in [(1.0, 1.0), (0.5, 1.0), (0.0, 1.95)] {
                let p = pair("abc", "dec", y);
                let got = backward(&params, &vocab, pooling, &p, margin).unwrap();
                let want = numerical_gradient(&params, &vocab, pooling, &p, margin, 1e-5).unwrap();
                let rel = gradient_relative_error(&got.grads, &want);
                assert!(rel < 1e-4, "pooling {pooling:?} y={y} m={margin}: rel err {rel}");
            }
        }
    }

    #[test]
    fn clamped_negative_pair_has_zero_gradient() {
        let (params, vocab, cfg) = setup(Pooling::LastHidden);
        let p = pair("abc", "dec", 0.0);
        // Cosine distance never exceeds 2, so margin 0.01 puts any distinct
        // pair outside the margin unless the embeddings nearly coincide.
        let out = backward(&params, &vocab, cfg.pooling, &p, 0.01).unwrap();
        assert!(out.distance >= 0.01);
        assert_eq!(out.loss, 0.0);
        assert!(out.grads.iter_values().all(|v| v == 0.0));
    }

    #[test]
    fn swapping_names_preserves_loss_and_gradient() {
        let (params, vocab, cfg) = setup(Pooling::LastHidden);
        let ab = backward(&params, &vocab, cfg.pooling, &pair("abc", "dec", 0.7), 1.0).unwrap();
        let ba = backward(&params, &vocab, cfg.pooling, &pair("dec", "abc", 0.7), 1.0).unwrap();
        assert_eq!(ab.loss, ba.loss);
        assert_eq!(ab.distance, ba.distance);
        assert_eq!(ab.grads, ba.grads);
    }

    #[test]
    fn repeated_characters_accumulate_embedding_gradient() {
        let (params, vocab, cfg) = setup(Pooling::Mean);
        let p = pair("aaa", "bcd", 1.0);
        let got = backward(&params, &vocab, cfg.pooling, &p, 1.0).unwrap();
        let want = numerical_gradient(&params, &vocab, cfg.pooling, &p, 1.0, 1e-5).unwrap();
        assert!(gradient_relative_error(&got.grads, &want) < 1e-4);
    }

    #[test]
    fn finite_difference_is_second_order() {
        // Halving ε should shrink the FD error roughly fourfold.
        let (params, vocab, cfg) = setup(Pooling::LastHidden);
        let p = pair("abcd", "abce", 0.5);
        let exact = backward(&params, &vocab, cfg.pooling, &p, 1.0).unwrap().grads;
        let err = |eps: f64| {
            let num = numerical_gradient(&params, &vocab, cfg.pooling, &p, 1.0, eps).unwrap();
            let mut total = 0.0;
            for (a, n) in exact.flat_chunks().into_iter().zip(num.flat_chunks()) {
                for (&x, &y) in a.iter().zip(n) {
                    total += (x - y).abs();
                }
            }
            total
        };
        let coarse = err(1e-3);
        let fine = err(5e-4);
        assert!(
            fine < coarse / 2.5,
            "expected ~4x error reduction, got {coarse} -> {fine}"
        );
    }
}
