//! Forward pass: character indices → embeddings → stacked bidirectional
//! recurrent layers → pooled vector → dense projection.
//!
//! [`forward_trace`] additionally captures every intermediate activation the
//! backward pass replays.

use ndarray::{s, Array1, Array2, Axis};

use super::{CharVocab, Embedding, EncoderParams, LstmCell, Pooling};
use crate::Result;

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations of one direction of one layer, stored per position.
pub(crate) struct DirectionTrace {
    pub gate_i: Array2<f64>,
    pub gate_f: Array2<f64>,
    pub gate_g: Array2<f64>,
    pub gate_o: Array2<f64>,
    pub cell: Array2<f64>,
    pub cell_tanh: Array2<f64>,
    pub hidden: Array2<f64>,
}

pub(crate) struct LayerTrace {
    /// The layer's input sequence, `T × D` (shared by both directions).
    pub input: Array2<f64>,
    pub fwd: DirectionTrace,
    pub bwd: DirectionTrace,
}

pub(crate) struct ForwardTrace {
    pub char_ids: Vec<usize>,
    pub layers: Vec<LayerTrace>,
    pub pooled: Array1<f64>,
    pub pooling: Pooling,
    pub embedding: Embedding,
}

/// Runs one direction over the input sequence. `reverse` walks positions
/// from the end, so its final state lives at position 0.
pub(crate) fn run_direction(cell: &LstmCell, input: &Array2<f64>, reverse: bool) -> DirectionTrace {
    let t_len = input.nrows();
    let h = cell.bias.len() / 4;

    // Input contributions for every position at once.
    let pre_input = input.dot(&cell.w_input.t()); // T × 4H

    let mut trace = DirectionTrace {
        gate_i: Array2::zeros((t_len, h)),
        gate_f: Array2::zeros((t_len, h)),
        gate_g: Array2::zeros((t_len, h)),
        gate_o: Array2::zeros((t_len, h)),
        cell: Array2::zeros((t_len, h)),
        cell_tanh: Array2::zeros((t_len, h)),
        hidden: Array2::zeros((t_len, h)),
    };

    let mut h_prev = Array1::<f64>::zeros(h);
    let mut c_prev = Array1::<f64>::zeros(h);
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..t_len).rev())
    } else {
        Box::new(0..t_len)
    };

    for t in order {
        let mut z = cell.w_recur.dot(&h_prev);
        z += &pre_input.row(t);
        z += &cell.bias;
        for k in 0..h {
            let iv = sigmoid(z[k]);
            let fv = sigmoid(z[h + k]);
            let gv = z[2 * h + k].tanh();
            let ov = sigmoid(z[3 * h + k]);
            let cv = fv * c_prev[k] + iv * gv;
            let tc = cv.tanh();
            trace.gate_i[[t, k]] = iv;
            trace.gate_f[[t, k]] = fv;
            trace.gate_g[[t, k]] = gv;
            trace.gate_o[[t, k]] = ov;
            trace.cell[[t, k]] = cv;
            trace.cell_tanh[[t, k]] = tc;
            trace.hidden[[t, k]] = ov * tc;
        }
        h_prev.assign(&trace.hidden.row(t));
        c_prev.assign(&trace.cell.row(t));
    }
    trace
}

pub(crate) fn forward_trace(
    params: &EncoderParams,
    vocab: &CharVocab,
    pooling: Pooling,
    name: &str,
) -> Result<ForwardTrace> {
    let char_ids = vocab.encode(name)?;
    let t_len = char_ids.len();
    let embed_dim = params.char_embed.ncols();

    let mut input = Array2::zeros((t_len, embed_dim));
    for (t, &id) in char_ids.iter().enumerate() {
        input.row_mut(t).assign(&params.char_embed.row(id));
    }

    let hidden = params.layers[0].fwd.bias.len() / 4;
    let mut layers = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let fwd = run_direction(&layer.fwd, &input, false);
        let bwd = run_direction(&layer.bwd, &input, true);
        let mut output = Array2::zeros((t_len, 2 * hidden));
        output.slice_mut(s![.., ..hidden]).assign(&fwd.hidden);
        output.slice_mut(s![.., hidden..]).assign(&bwd.hidden);
        layers.push(LayerTrace { input, fwd, bwd });
        input = output;
    }

    let pooled = match pooling {
        Pooling::LastHidden => {
            let top = layers.last().expect("≥1 layer");
            let mut pooled = Array1::zeros(2 * hidden);
            pooled
                .slice_mut(s![..hidden])
                .assign(&top.fwd.hidden.row(t_len - 1));
            pooled.slice_mut(s![hidden..]).assign(&top.bwd.hidden.row(0));
            pooled
        }
        Pooling::Mean => input.mean_axis(Axis(0)).expect("non-empty sequence"),
    };

    let embedding = params.out_weight.dot(&pooled) + &params.out_bias;
    Ok(ForwardTrace {
        char_ids,
        layers,
        pooled,
        pooling,
        embedding,
    })
}

/// Embeds a name. Deterministic; the name is truncated to the vocabulary's
/// maximum sequence length, and an empty result is an error.
pub fn forward(
    params: &EncoderParams,
    vocab: &CharVocab,
    pooling: Pooling,
    name: &str,
) -> Result<Embedding> {
    forward_trace(params, vocab, pooling, name).map(|t| t.embedding)
}
