//! Graph-temporal encoder: input projection plus N blocks of per-column
//! (spatial) and per-row (temporal) multi-head self-attention, fused through
//! a sigmoid integration layer.
//!
//! Hidden states live in one `(R * C) x D_h` matrix; position `r * C + c`
//! holds machine row `r` at slot column `c`.

use ndarray::Array2;

use super::ParamNodes;
use crate::autodiff::{NodeId, Tape};
use crate::features::FeatureTensor;

/// Encoder result: final hidden states plus the cost-scaling divisor that
/// normalized `chi` and `y` (rewards always use the unscaled costs).
#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput {
    pub h: NodeId,
    pub scale: f64,
    pub n_rows: usize,
    pub n_cols: usize,
}

/// Per-instance normalizer: the largest `|chi + y|` over all cells, or 1 for
/// the all-idle degenerate tensor.
pub fn feature_scale(features: &FeatureTensor) -> f64 {
    let max = features
        .chi
        .iter()
        .zip(features.y.iter())
        .map(|(&a, &b)| (a + b).abs())
        .fold(0.0, f64::max);
    if max > 0.0 {
        max
    } else {
        1.0
    }
}

/// The `(R * C) x 4` network input: scaled cost, scaled penalty, period
/// position, slot position.
pub fn input_matrix(features: &FeatureTensor, scale: f64) -> Array2<f64> {
    let r_count = features.n_rows();
    let c_count = features.n_cols();
    let mut x = Array2::zeros((r_count * c_count, super::INPUT_CHANNELS));
    for r in 0..r_count {
        for c in 0..c_count {
            let p = r * c_count + c;
            x[[p, 0]] = features.chi[[r, c]] / scale;
            x[[p, 1]] = features.y[[r, c]] / scale;
            x[[p, 2]] = features.aux_t[c];
            x[[p, 3]] = features.aux_j[c];
        }
    }
    x
}

/// Initial hidden states: affine projection of the input channels plus the
/// additive site embedding (depot row included).
pub(crate) fn embed_inputs(
    tape: &mut Tape,
    nodes: &ParamNodes,
    features: &FeatureTensor,
    scale: f64,
) -> NodeId {
    let c_count = features.n_cols();
    let x = tape.leaf(input_matrix(features, scale));
    let proj = tape.matmul(x, nodes.input_w());
    let proj = tape.add_row(proj, nodes.input_b());
    let site_idx: Vec<usize> = (0..features.n_rows() * c_count)
        .map(|p| features.site[p / c_count] as usize)
        .collect();
    let sites = tape.gather_rows(nodes.site_embed(), site_idx);
    tape.add(proj, sites)
}

/// Scaled dot-product self-attention over the rows of `hg`, heads split
/// along the hidden dimension and re-concatenated.
pub(crate) fn multi_head_self_attention(
    tape: &mut Tape,
    hg: NodeId,
    wq: NodeId,
    wk: NodeId,
    wv: NodeId,
    heads: usize,
) -> NodeId {
    let d = tape.value(wq).ncols();
    debug_assert_eq!(d % heads, 0);
    let dh = d / heads;
    let q = tape.matmul(hg, wq);
    let k = tape.matmul(hg, wk);
    let v = tape.matmul(hg, wv);
    let inv_sqrt = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * dh, dh);
        let kh = tape.slice_cols(k, h * dh, dh);
        let vh = tape.slice_cols(v, h * dh, dh);
        let scores = tape.matmul_bt(qh, kh);
        let scores = tape.scale(scores, inv_sqrt);
        let attn = tape.softmax_rows(scores);
        outs.push(tape.matmul(attn, vh));
    }
    tape.concat_cols(outs)
}

/// Full encoder forward pass on the given tape.
pub fn encode(tape: &mut Tape, nodes: &ParamNodes, features: &FeatureTensor) -> EncoderOutput {
    let r_count = features.n_rows();
    let c_count = features.n_cols();
    let heads = nodes.hyper.heads;
    let scale = feature_scale(features);
    let mut h = embed_inputs(tape, nodes, features, scale);

    for layer in 0..nodes.hyper.n_layers {
        // Spatial: attention over machine rows within each slot column.
        let [wq, wk, wv] = nodes.spatial_qkv(layer);
        let mut blocks = Vec::with_capacity(c_count);
        for c in 0..c_count {
            let idx: Vec<usize> = (0..r_count).map(|r| r * c_count + c).collect();
            let hg = tape.gather_rows(h, idx);
            blocks.push(multi_head_self_attention(tape, hg, wq, wk, wv, heads));
        }
        let stacked = tape.concat_rows(blocks);
        // Block `c` row `r` sits at `c * R + r`; restore position order.
        let perm: Vec<usize> = (0..r_count * c_count)
            .map(|p| (p % c_count) * r_count + p / c_count)
            .collect();
        let h_spatial = tape.gather_rows(stacked, perm);

        // Temporal: attention over slot columns within each machine row;
        // blocks stacked in row order are already position-ordered.
        let [wq, wk, wv] = nodes.temporal_qkv(layer);
        let mut blocks = Vec::with_capacity(r_count);
        for r in 0..r_count {
            let idx: Vec<usize> = (0..c_count).map(|c| r * c_count + c).collect();
            let hg = tape.gather_rows(h, idx);
            blocks.push(multi_head_self_attention(tape, hg, wq, wk, wv, heads));
        }
        let h_temporal = tape.concat_rows(blocks);

        let fused = tape.concat_cols(vec![h_spatial, h_temporal]);
        let mixed = tape.matmul(fused, nodes.integrate(layer));
        h = tape.sigmoid(mixed);
    }

    EncoderOutput { h, scale, n_rows: r_count, n_cols: c_count }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::assemble_features;
    use crate::policy::{PolicyHyper, PolicyParams};
    use crate::testkit::desk_instance;
    use ndarray::s;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_hyper() -> PolicyHyper {
        PolicyHyper { n_layers: 2, hidden: 16, heads: 4, logit_clip: 10.0 }
    }

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    /// Scalar-loop reference for one attention head group, no ndarray matmul.
    fn attention_reference(
        hg: &Array2<f64>,
        wq: &Array2<f64>,
        wk: &Array2<f64>,
        wv: &Array2<f64>,
        heads: usize,
    ) -> Array2<f64> {
        let n = hg.nrows();
        let d = wq.ncols();
        let dh = d / heads;
        let dense = |m: &Array2<f64>, w: &Array2<f64>| {
            let mut out = Array2::zeros((n, d));
            for i in 0..n {
                for j in 0..d {
                    let mut acc = 0.0;
                    for k in 0..m.ncols() {
                        acc += m[[i, k]] * w[[k, j]];
                    }
                    out[[i, j]] = acc;
                }
            }
            out
        };
        let q = dense(hg, wq);
        let k = dense(hg, wk);
        let v = dense(hg, wv);
        let mut out = Array2::zeros((n, d));
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            for i in 0..n {
                let mut scores = vec![0.0; n];
                for (j, score) in scores.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for c in cols.clone() {
                        acc += q[[i, c]] * k[[j, c]];
                    }
                    *score = acc / (dh as f64).sqrt();
                }
                let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let weights: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let z: f64 = weights.iter().sum();
                for (c_out, c) in cols.clone().enumerate() {
                    let mut acc = 0.0;
                    for (j, w) in weights.iter().enumerate() {
                        acc += w / z * v[[j, c]];
                    }
                    out[[i, h * dh + c_out]] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn single_row_attention_is_its_own_value_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let hg_val = random_matrix(&mut rng, 1, 16);
        let wq_val = random_matrix(&mut rng, 16, 16);
        let wk_val = random_matrix(&mut rng, 16, 16);
        let wv_val = random_matrix(&mut rng, 16, 16);

        let mut tape = Tape::new();
        let hg = tape.leaf(hg_val.clone());
        let wq = tape.leaf(wq_val);
        let wk = tape.leaf(wk_val);
        let wv = tape.leaf(wv_val.clone());
        let out = multi_head_self_attention(&mut tape, hg, wq, wk, wv, 4);
        let want = hg_val.dot(&wv_val);
        let got = tape.value(out);
        assert!(got.iter().zip(want.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn identical_rows_attend_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let row = random_matrix(&mut rng, 1, 16);
        let mut hg_val = Array2::zeros((2, 16));
        hg_val.row_mut(0).assign(&row.row(0));
        hg_val.row_mut(1).assign(&row.row(0));

        let mut tape = Tape::new();
        let hg = tape.leaf(hg_val);
        let wq = tape.leaf(random_matrix(&mut rng, 16, 16));
        let wk = tape.leaf(random_matrix(&mut rng, 16, 16));
        let wv = tape.leaf(random_matrix(&mut rng, 16, 16));
        let out = multi_head_self_attention(&mut tape, hg, wq, wk, wv, 4);
        let v = tape.value(out);
        assert!(v.row(0).iter().zip(v.row(1)).all(|(a, b)| (a - b).abs() < 1e-14));
    }

    #[test]
    fn attention_matches_the_scalar_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let hg_val = random_matrix(&mut rng, 4, 16);
        let wq_val = random_matrix(&mut rng, 16, 16);
        let wk_val = random_matrix(&mut rng, 16, 16);
        let wv_val = random_matrix(&mut rng, 16, 16);

        let mut tape = Tape::new();
        let hg = tape.leaf(hg_val.clone());
        let wq = tape.leaf(wq_val.clone());
        let wk = tape.leaf(wk_val.clone());
        let wv = tape.leaf(wv_val.clone());
        let out = multi_head_self_attention(&mut tape, hg, wq, wk, wv, 4);
        let want = attention_reference(&hg_val, &wq_val, &wk_val, &wv_val, 4);
        let got = tape.value(out);
        assert!(
            got.iter().zip(want.iter()).all(|(a, b)| (a - b).abs() < 1e-12),
            "tape attention diverged from the scalar reference"
        );
    }

    #[test]
    fn zero_params_embed_to_zero_and_encode_to_one_half() {
        let inst = desk_instance(2);
        let features = assemble_features(&inst);
        let params = PolicyParams::zeros(small_hyper());
        let mut tape = Tape::new();
        let nodes = params.stage(&mut tape);
        let h0 = embed_inputs(&mut tape, &nodes, &features, feature_scale(&features));
        assert!(tape.value(h0).iter().all(|&v| v == 0.0));

        let out = encode(&mut tape, &nodes, &features);
        assert!(tape.value(out.h).iter().all(|&v| v == 0.5));
    }

    #[test]
    fn first_channel_is_cost_over_scale_under_an_identity_projection() {
        let inst = desk_instance(3);
        let features = assemble_features(&inst);
        let mut params = PolicyParams::zeros(small_hyper());
        params.tensors_mut()[crate::policy::layout::INPUT_W][[0, 0]] = 1.0;

        let mut tape = Tape::new();
        let nodes = params.stage(&mut tape);
        let scale = feature_scale(&features);
        let h0 = embed_inputs(&mut tape, &nodes, &features, scale);
        let v = tape.value(h0);
        let c_count = features.n_cols();
        for r in 0..features.n_rows() {
            for c in 0..c_count {
                assert_eq!(v[[r * c_count + c, 0]], features.chi[[r, c]] / scale);
            }
        }
        assert!(v.slice(s![.., 1..]).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn scale_is_the_max_cost_cell_or_one() {
        let inst = desk_instance(4);
        let features = assemble_features(&inst);
        let want = features
            .chi
            .iter()
            .zip(features.y.iter())
            .map(|(a, b)| a + b)
            .fold(0.0, f64::max);
        assert_eq!(feature_scale(&features), want);

        let mut idle_only = features.clone();
        idle_only.chi.fill(0.0);
        idle_only.y.fill(0.0);
        assert_eq!(feature_scale(&idle_only), 1.0);
    }

    #[test]
    fn integration_swaps_inputs_when_the_weight_blocks_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a_val = random_matrix(&mut rng, 3, 8);
        let b_val = random_matrix(&mut rng, 3, 8);
        let block = random_matrix(&mut rng, 8, 8);
        let mut wi_val = Array2::zeros((16, 8));
        wi_val.slice_mut(s![..8, ..]).assign(&block);
        wi_val.slice_mut(s![8.., ..]).assign(&block);

        let mut tape = Tape::new();
        let a = tape.leaf(a_val.clone());
        let b = tape.leaf(b_val.clone());
        let wi = tape.leaf(wi_val.clone());
        let ab = tape.concat_cols(vec![a, b]);
        let m1 = tape.matmul(ab, wi);
        let fused_ab = tape.sigmoid(m1);
        let ba = tape.concat_cols(vec![b, a]);
        let m2 = tape.matmul(ba, wi);
        let fused_ba = tape.sigmoid(m2);
        let x = tape.value(fused_ab);
        let y = tape.value(fused_ba);
        assert!(x.iter().zip(y.iter()).all(|(p, q)| (p - q).abs() < 1e-12));
    }

    #[test]
    fn integration_matches_scalar_sigmoid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let fused_val = random_matrix(&mut rng, 4, 16);
        let wi_val = random_matrix(&mut rng, 16, 8);
        let mut tape = Tape::new();
        let fused = tape.leaf(fused_val.clone());
        let wi = tape.leaf(wi_val.clone());
        let m = tape.matmul(fused, wi);
        let out = tape.sigmoid(m);
        let got = tape.value(out);
        for i in 0..4 {
            for j in 0..8 {
                let mut acc = 0.0;
                for k in 0..16 {
                    acc += fused_val[[i, k]] * wi_val[[k, j]];
                }
                let want = 1.0 / (1.0 + (-acc).exp());
                assert!((got[[i, j]] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn relabeling_machines_permutes_the_encoding() {
        let inst = desk_instance(6);
        let features = assemble_features(&inst);
        let params = PolicyParams::init(small_hyper(), 99);

        // Swap machine rows 1 and 3 everywhere the row index appears.
        let perm = [0usize, 3, 2, 1, 4, 5];
        let mut permuted = features.clone();
        for (new_row, &old_row) in perm.iter().enumerate() {
            for c in 0..features.n_cols() {
                permuted.chi[[new_row, c]] = features.chi[[old_row, c]];
                permuted.y[[new_row, c]] = features.y[[old_row, c]];
                permuted.chi_pre[[new_row, c]] = features.chi_pre[[old_row, c]];
                permuted.chi_corr[[new_row, c]] = features.chi_corr[[old_row, c]];
                permuted.chi_idle[[new_row, c]] = features.chi_idle[[old_row, c]];
            }
            permuted.site[new_row] = features.site[old_row];
        }

        let mut tape_a = Tape::new();
        let nodes_a = params.stage(&mut tape_a);
        let out_a = encode(&mut tape_a, &nodes_a, &features);
        let mut tape_b = Tape::new();
        let nodes_b = params.stage(&mut tape_b);
        let out_b = encode(&mut tape_b, &nodes_b, &permuted);

        let ha = tape_a.value(out_a.h);
        let hb = tape_b.value(out_b.h);
        let c_count = features.n_cols();
        for (new_row, &old_row) in perm.iter().enumerate() {
            for c in 0..c_count {
                for d in 0..16 {
                    let a = ha[[old_row * c_count + c, d]];
                    let b = hb[[new_row * c_count + c, d]];
                    assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "row {old_row}->{new_row}");
                }
            }
        }
    }

    #[test]
    fn encoding_is_deterministic() {
        let inst = desk_instance(8);
        let features = assemble_features(&inst);
        let params = PolicyParams::init(small_hyper(), 1);
        let run = || {
            let mut tape = Tape::new();
            let nodes = params.stage(&mut tape);
            let out = encode(&mut tape, &nodes, &features);
            tape.value(out.h).clone()
        };
        assert_eq!(run(), run());
    }
}
