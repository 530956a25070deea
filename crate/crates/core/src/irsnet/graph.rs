//! The trainable loss graph: network forward pass plus the throughput
//! closed form, recorded once per (architecture, batch size) and re-bound
//! every step.
//!
//! The throughput subgraph mirrors [`crate::evaluator`] operation for
//! operation — same expressions, same accumulation order — so the taped
//! loss agrees with the plain evaluator to the last bit on identical
//! inputs. Complex cascades are expanded into real/imaginary columns; the
//! per-antenna views are slices of one bound constant per feature block.

use crate::autodiff::{Axis, NodeId, Shape, Tape};
use crate::channel::{FeatureVector, SystemParams};
use crate::evaluator::{INV_LN_2, TAU_MARGIN};

use super::{Architecture, NetworkParams};

/// Constant nodes bound from feature blocks each step. All are `B x *`
/// matrices whose row `b` is sample `b`'s block.
struct FeatureConsts {
    v_re: NodeId,
    v_im: NodeId,
    a_re: NodeId,
    a_im: NodeId,
    u_sd_re: NodeId,
    u_sd_im: NodeId,
    h_sd_re: NodeId,
    h_sd_im: NodeId,
    interferer: Option<InterfererConsts>,
}

struct InterfererConsts {
    u_is_re: NodeId,
    u_is_im: NodeId,
    u_id_re: NodeId,
    u_id_im: NodeId,
    h_is_re: NodeId,
    h_is_im: NodeId,
    h_id_re: NodeId,
    h_id_im: NodeId,
}

/// A recorded loss graph for one batch size.
pub struct LossGraph {
    pub tape: Tape,
    batch: usize,
    interference: bool,
    input: NodeId,
    feats: FeatureConsts,
    /// Per-layer weight and bias parameter nodes (hidden layers then output).
    weights: Vec<NodeId>,
    biases: Vec<NodeId>,
    /// Per-hidden-layer batch-norm scale/shift parameters and the norm nodes
    /// themselves (for reading batch statistics after a forward pass).
    gammas: Vec<NodeId>,
    betas: Vec<NodeId>,
    bn_nodes: Vec<NodeId>,
    /// Negative mean throughput over the batch.
    pub loss: NodeId,
    /// Per-sample throughput column (`B x 1`), for diagnostics.
    pub throughput: NodeId,
    scratch: Vec<f64>,
}

impl LossGraph {
    /// Records the full loss graph. The interferer term is embedded only
    /// when the dataset carries interferer blocks and the interferer power
    /// is positive, matching the evaluator's short-circuit.
    pub fn build(
        arch: &Architecture,
        interference: bool,
        params: &SystemParams,
        batch: usize,
    ) -> LossGraph {
        assert!(batch >= 2, "training graphs need a batch of at least 2");
        let n = arch.elements;
        let m = params.antennas;
        assert_eq!(
            arch.feature_len,
            FeatureVector::feature_len(m, n, interference),
            "architecture input width does not match the system dimensions"
        );

        let mut tape = Tape::new();
        let input = tape.constant(Shape::matrix(batch, arch.feature_len));

        // Network: affine -> relu -> batch norm per hidden layer, then an
        // affine output squashed by a sigmoid.
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut gammas = Vec::new();
        let mut betas = Vec::new();
        let mut bn_nodes = Vec::new();

        let mut h = input;
        let mut fan_in = arch.feature_len;
        for &units in &arch.hidden {
            let w = tape.param(Shape::matrix(fan_in, units));
            let b = tape.param(Shape::matrix(1, units));
            let z = tape.matmul(h, w);
            let z = tape.add_row(z, b);
            let r = tape.relu(z);
            let gamma = tape.param(Shape::matrix(1, units));
            let beta = tape.param(Shape::matrix(1, units));
            let y = tape.batch_norm(r, gamma, beta, super::BN_EPSILON);
            weights.push(w);
            biases.push(b);
            gammas.push(gamma);
            betas.push(beta);
            bn_nodes.push(y);
            h = y;
            fan_in = units;
        }
        let out_width = arch.output_width();
        let w = tape.param(Shape::matrix(fan_in, out_width));
        let b = tape.param(Shape::matrix(1, out_width));
        let z = tape.matmul(h, w);
        let z = tape.add_row(z, b);
        let s = tape.sigmoid(z);
        weights.push(w);
        biases.push(b);

        let et_raw = tape.slice_cols(s, 0, n);
        let theta_et = tape.mul_scalar(et_raw, std::f64::consts::TAU);
        let it_raw = tape.slice_cols(s, n, 2 * n);
        let theta_it = tape.mul_scalar(it_raw, std::f64::consts::TAU);
        let tau_raw = tape.slice_cols(s, 2 * n, 2 * n + 1);
        let tau = tape.clamp(tau_raw, TAU_MARGIN, 1.0 - TAU_MARGIN);

        // Feature constants.
        let with_interferer = interference && params.interferer_power > 0.0;
        let feats = FeatureConsts {
            v_re: tape.constant(Shape::matrix(batch, n * m)),
            v_im: tape.constant(Shape::matrix(batch, n * m)),
            a_re: tape.constant(Shape::matrix(batch, m)),
            a_im: tape.constant(Shape::matrix(batch, m)),
            u_sd_re: tape.constant(Shape::matrix(batch, n)),
            u_sd_im: tape.constant(Shape::matrix(batch, n)),
            h_sd_re: tape.constant(Shape::matrix(batch, 1)),
            h_sd_im: tape.constant(Shape::matrix(batch, 1)),
            interferer: with_interferer.then(|| InterfererConsts {
                u_is_re: tape.constant(Shape::matrix(batch, n)),
                u_is_im: tape.constant(Shape::matrix(batch, n)),
                u_id_re: tape.constant(Shape::matrix(batch, n)),
                u_id_im: tape.constant(Shape::matrix(batch, n)),
                h_is_re: tape.constant(Shape::matrix(batch, 1)),
                h_is_im: tape.constant(Shape::matrix(batch, 1)),
                h_id_re: tape.constant(Shape::matrix(batch, 1)),
                h_id_im: tape.constant(Shape::matrix(batch, 1)),
            }),
        };

        // Energy-transfer gain: P_B * ||a + e_ET . V||^2 (+ interferer term).
        let et_cos = tape.cos(theta_et);
        let et_sin = tape.sin(theta_et);
        let mut norm_sqr: Option<NodeId> = None;
        for col in 0..m {
            let v_re = tape.slice_cols(feats.v_re, col * n, (col + 1) * n);
            let v_im = tape.slice_cols(feats.v_im, col * n, (col + 1) * n);
            let a_re = tape.slice_cols(feats.a_re, col, col + 1);
            let a_im = tape.slice_cols(feats.a_im, col, col + 1);
            let (re, im) = cascade_sum(&mut tape, et_cos, et_sin, v_re, v_im, a_re, a_im);
            let re2 = tape.square(re);
            let im2 = tape.square(im);
            let g = tape.add(re2, im2);
            norm_sqr = Some(match norm_sqr {
                None => g,
                Some(acc) => tape.add(acc, g),
            });
        }
        let mut et_gain = tape.mul_scalar(norm_sqr.unwrap(), params.pb_power);
        if let Some(ic) = &feats.interferer {
            let (re, im) = cascade_sum(
                &mut tape, et_cos, et_sin, ic.u_is_re, ic.u_is_im, ic.h_is_re, ic.h_is_im,
            );
            let re2 = tape.square(re);
            let im2 = tape.square(im);
            let g = tape.add(re2, im2);
            let scaled = tape.mul_scalar(g, params.interferer_power);
            et_gain = tape.add(et_gain, scaled);
        }

        // Information-transfer signal and interference-plus-noise power.
        let it_cos = tape.cos(theta_it);
        let it_sin = tape.sin(theta_it);
        let (sig_re, sig_im) = cascade_sum(
            &mut tape, it_cos, it_sin, feats.u_sd_re, feats.u_sd_im, feats.h_sd_re, feats.h_sd_im,
        );
        let sig_re2 = tape.square(sig_re);
        let sig_im2 = tape.square(sig_im);
        let signal = tape.add(sig_re2, sig_im2);

        let one_minus_tau = {
            let neg = tape.neg(tau);
            tape.add_scalar(neg, 1.0)
        };
        let numerator = {
            let te = tape.mul_scalar(tau, params.eh_efficiency);
            let te = tape.mul(te, et_gain);
            tape.mul(te, signal)
        };
        let denominator = if let Some(ic) = &feats.interferer {
            let (re, im) = cascade_sum(
                &mut tape, it_cos, it_sin, ic.u_id_re, ic.u_id_im, ic.h_id_re, ic.h_id_im,
            );
            let re2 = tape.square(re);
            let im2 = tape.square(im);
            let g = tape.add(re2, im2);
            let scaled = tape.mul_scalar(g, params.interferer_power);
            let power = tape.add_scalar(scaled, params.noise_power);
            tape.mul(one_minus_tau, power)
        } else {
            tape.mul_scalar(one_minus_tau, params.noise_power)
        };
        let gamma = tape.div(numerator, denominator);
        let throughput = {
            let one_plus = tape.add_scalar(gamma, 1.0);
            let ln = tape.ln(one_plus);
            let log2 = tape.mul_scalar(ln, INV_LN_2);
            tape.mul(one_minus_tau, log2)
        };
        let loss = {
            let mean = tape.mean(throughput, Axis::All);
            tape.neg(mean)
        };

        LossGraph {
            tape,
            batch,
            interference,
            input,
            feats,
            weights,
            biases,
            gammas,
            betas,
            bn_nodes,
            loss,
            throughput,
            scratch: Vec::new(),
        }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Binds every trainable root from the network parameters.
    pub fn bind_network(&mut self, params: &NetworkParams) {
        for (i, layer) in params.layers.iter().enumerate() {
            self.tape.bind(self.weights[i], &layer.weights);
            self.tape.bind(self.biases[i], &layer.bias);
        }
        for (i, bn) in params.batch_norm.iter().enumerate() {
            self.tape.bind(self.gammas[i], &bn.gamma);
            self.tape.bind(self.betas[i], &bn.beta);
        }
    }

    /// Binds the network input and the throughput constants from a batch of
    /// features. `scale` divides the network input per component when
    /// present; the throughput constants always see the raw features.
    pub fn bind_batch(&mut self, feats: &[FeatureVector], scale: Option<&[f64]>) {
        assert_eq!(feats.len(), self.batch, "batch size mismatch");
        let f0 = &feats[0];
        let f_len = f0.flat().len();

        let mut scratch = std::mem::take(&mut self.scratch);
        scratch.clear();
        scratch.reserve(self.batch * f_len);
        match scale {
            Some(s) => {
                assert_eq!(s.len(), f_len, "feature scale length");
                for f in feats {
                    scratch.extend(f.flat().iter().zip(s).map(|(x, d)| x / d));
                }
            }
            None => {
                for f in feats {
                    scratch.extend_from_slice(f.flat());
                }
            }
        }
        self.tape.bind(self.input, &scratch);

        let tape = &mut self.tape;
        bind_block(tape, &mut scratch, feats, self.feats.v_re, &|f| f.v_re());
        bind_block(tape, &mut scratch, feats, self.feats.v_im, &|f| f.v_im());
        bind_block(tape, &mut scratch, feats, self.feats.a_re, &|f| f.a_re());
        bind_block(tape, &mut scratch, feats, self.feats.a_im, &|f| f.a_im());
        bind_block(tape, &mut scratch, feats, self.feats.u_sd_re, &|f| f.u_sd_re());
        bind_block(tape, &mut scratch, feats, self.feats.u_sd_im, &|f| f.u_sd_im());
        bind_scalar(tape, &mut scratch, feats, self.feats.h_sd_re, &|f| f.h_sd().re);
        bind_scalar(tape, &mut scratch, feats, self.feats.h_sd_im, &|f| f.h_sd().im);
        if let Some(ic) = &self.feats.interferer {
            assert!(self.interference && f0.interference(), "interferer blocks missing");
            bind_block(tape, &mut scratch, feats, ic.u_is_re, &|f| f.u_is_re().unwrap());
            bind_block(tape, &mut scratch, feats, ic.u_is_im, &|f| f.u_is_im().unwrap());
            bind_block(tape, &mut scratch, feats, ic.u_id_re, &|f| f.u_id_re().unwrap());
            bind_block(tape, &mut scratch, feats, ic.u_id_im, &|f| f.u_id_im().unwrap());
            bind_scalar(tape, &mut scratch, feats, ic.h_is_re, &|f| f.h_is().unwrap().re);
            bind_scalar(tape, &mut scratch, feats, ic.h_is_im, &|f| f.h_is().unwrap().im);
            bind_scalar(tape, &mut scratch, feats, ic.h_id_re, &|f| f.h_id().unwrap().re);
            bind_scalar(tape, &mut scratch, feats, ic.h_id_im, &|f| f.h_id().unwrap().im);
        }
        self.scratch = scratch;
    }

    /// Reads parameter adjoints into `out` in the canonical trainable order
    /// (per layer: weights then bias; then per norm layer: gamma then beta).
    pub fn read_gradients(&self, out: &mut Vec<f64>) {
        out.clear();
        for i in 0..self.weights.len() {
            out.extend_from_slice(self.tape.adjoint(self.weights[i]));
            out.extend_from_slice(self.tape.adjoint(self.biases[i]));
        }
        for i in 0..self.gammas.len() {
            out.extend_from_slice(self.tape.adjoint(self.gammas[i]));
            out.extend_from_slice(self.tape.adjoint(self.betas[i]));
        }
    }

    /// Batch means and variances of each norm layer from the last forward.
    pub fn batch_stats(&self, layer: usize) -> (&[f64], &[f64]) {
        self.tape.batch_norm_stats(self.bn_nodes[layer]).unwrap()
    }
}

fn bind_block(
    tape: &mut Tape,
    scratch: &mut Vec<f64>,
    feats: &[FeatureVector],
    id: NodeId,
    get: &dyn Fn(&FeatureVector) -> &[f64],
) {
    scratch.clear();
    for f in feats {
        scratch.extend_from_slice(get(f));
    }
    tape.bind(id, scratch);
}

fn bind_scalar(
    tape: &mut Tape,
    scratch: &mut Vec<f64>,
    feats: &[FeatureVector],
    id: NodeId,
    get: &dyn Fn(&FeatureVector) -> f64,
) {
    scratch.clear();
    for f in feats {
        scratch.push(get(f));
    }
    tape.bind(id, scratch);
}

/// `h + sum_n e^(j theta_n) u_n` expanded into real columns: returns the
/// real and imaginary `B x 1` nodes. The cascade is summed first and the
/// direct term added last, matching the evaluator.
fn cascade_sum(
    tape: &mut Tape,
    cos_t: NodeId,
    sin_t: NodeId,
    u_re: NodeId,
    u_im: NodeId,
    h_re: NodeId,
    h_im: NodeId,
) -> (NodeId, NodeId) {
    let cr = tape.mul(cos_t, u_re);
    let si = tape.mul(sin_t, u_im);
    let d_re = tape.sub(cr, si);
    let acc_re = tape.sum(d_re, Axis::Cols);
    let ci = tape.mul(cos_t, u_im);
    let sr = tape.mul(sin_t, u_re);
    let d_im = tape.add(ci, sr);
    let acc_im = tape.sum(d_im, Axis::Cols);
    let re = tape.add(acc_re, h_re);
    let im = tape.add(acc_im, h_im);
    (re, im)
}
