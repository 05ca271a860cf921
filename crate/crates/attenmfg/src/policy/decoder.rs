//! Pointer decoder: one slot column per step, context built from the last
//! selection plus a column summary, a multi-head glimpse over the column,
//! and clipped-tanh pointer logits masked to the still-legal rows.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::encoder::{encode, EncoderOutput};
use super::{ParamNodes, PolicyParams};
use crate::autodiff::{masked_log_softmax, NodeId, Tape};
use crate::eval::{sequence_cost, EvalError, Schedule};
use crate::features::{assemble_features, FeatureTensor};
use crate::model::Instance;

/// How the next row is picked at each step.
pub enum DecodeMode<'a> {
    /// Highest-logit allowed row, ties to the lowest index.
    Greedy,
    /// Sample from the masked softmax.
    Sample(&'a mut ChaCha8Rng),
    /// Replay a fixed sequence (must be feasible step by step).
    Forced(&'a [usize]),
}

/// One decoded sequence with the per-step log-probability nodes still live
/// on the tape, so a training loss can be attached to them.
#[derive(Debug, Clone)]
pub struct DecodedSequence {
    pub seq: Vec<usize>,
    pub logp_nodes: Vec<NodeId>,
    pub logp: f64,
}

/// A decoded schedule scored against the feature cost channels.
#[derive(Debug, Clone)]
pub struct RolloutResult {
    pub schedule: Schedule,
    pub cost: f64,
    pub log_prob: f64,
    pub logp_nodes: Vec<NodeId>,
}

struct DecoderState {
    chosen: Vec<bool>,
    remaining_real: usize,
    last_row: usize,
}

impl DecoderState {
    fn new(n_real: usize, idle_row: usize) -> Self {
        Self { chosen: vec![false; n_real], remaining_real: n_real, last_row: idle_row }
    }

    /// Real rows stay legal until chosen; the idle row closes exactly when
    /// every remaining step is needed for a real machine.
    fn allowed(&self, n_rows: usize, remaining_steps: usize) -> Vec<bool> {
        let idle = n_rows - 1;
        (0..n_rows)
            .map(|r| if r == idle { self.remaining_real < remaining_steps } else { !self.chosen[r] })
            .collect()
    }

    fn commit(&mut self, row: usize) {
        let idle = self.chosen.len();
        if row != idle {
            self.chosen[row] = true;
            self.remaining_real -= 1;
        }
        self.last_row = row;
    }
}

fn glimpse(
    tape: &mut Tape,
    q: NodeId,
    keys: NodeId,
    values: NodeId,
    heads: usize,
) -> NodeId {
    let d = tape.value(q).ncols();
    let dh = d / heads;
    let inv_sqrt = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * dh, dh);
        let kh = tape.slice_cols(keys, h * dh, dh);
        let vh = tape.slice_cols(values, h * dh, dh);
        let scores = tape.matmul_bt(qh, kh);
        let scores = tape.scale(scores, inv_sqrt);
        let attn = tape.softmax_rows(scores);
        outs.push(tape.matmul(attn, vh));
    }
    tape.concat_cols(outs)
}

/// Pointer logits for one column: `clip * tanh(u / sqrt(D))` over its rows.
fn pointer_logits(
    tape: &mut Tape,
    nodes: &ParamNodes,
    enc: &EncoderOutput,
    state: &DecoderState,
    col: usize,
) -> NodeId {
    let [w_cq, w_ck, w_cv, w_p] = nodes.decoder();
    let c_count = enc.n_cols;
    let col_idx: Vec<usize> = (0..enc.n_rows).map(|r| r * c_count + col).collect();
    let h_col = tape.gather_rows(enc.h, col_idx);
    let h_last = tape.gather_rows(enc.h, vec![state.last_row * c_count + col]);
    let col_sum = tape.sum_rows(h_col);
    let ctx = tape.concat_cols(vec![h_last, col_sum]);
    let q = tape.matmul(ctx, w_cq);
    let keys = tape.matmul(h_col, w_ck);
    let values = tape.matmul(h_col, w_cv);
    let focus = glimpse(tape, q, keys, values, nodes.hyper.heads);
    let probe = tape.matmul(focus, w_p);
    let u = tape.matmul_bt(probe, h_col);
    let u = tape.scale(u, 1.0 / (nodes.hyper.hidden as f64).sqrt());
    let t = tape.tanh(u);
    tape.scale(t, nodes.hyper.logit_clip)
}

fn pick_row(logits: &[f64], allowed: &[bool], mode: &mut DecodeMode, step: usize) -> usize {
    match mode {
        DecodeMode::Greedy => {
            let mut best: Option<usize> = None;
            for (r, (&ok, &v)) in allowed.iter().zip(logits).enumerate() {
                if ok && best.map_or(true, |b| v > logits[b]) {
                    best = Some(r);
                }
            }
            best.expect("at least one row must be allowed")
        }
        DecodeMode::Sample(rng) => {
            let logp = masked_log_softmax(logits, allowed);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut last_ok = 0;
            for (r, (&ok, lp)) in allowed.iter().zip(&logp).enumerate() {
                if !ok {
                    continue;
                }
                last_ok = r;
                acc += lp.exp();
                if u < acc {
                    return r;
                }
            }
            last_ok
        }
        DecodeMode::Forced(seq) => {
            let r = seq[step];
            assert!(allowed[r], "forced row {r} is not allowed at step {step}");
            r
        }
    }
}

/// Decode every slot column in order, committing one row per step.
pub fn decode_sequence(
    tape: &mut Tape,
    nodes: &ParamNodes,
    enc: &EncoderOutput,
    mode: &mut DecodeMode,
) -> DecodedSequence {
    let idle = enc.n_rows - 1;
    let mut state = DecoderState::new(idle, idle);
    let mut seq = Vec::with_capacity(enc.n_cols);
    let mut logp_nodes = Vec::with_capacity(enc.n_cols);
    let mut logp = 0.0;
    for col in 0..enc.n_cols {
        let logits = pointer_logits(tape, nodes, enc, &state, col);
        let allowed = state.allowed(enc.n_rows, enc.n_cols - col);
        let row = {
            let values = tape.value(logits);
            let flat: Vec<f64> = values.row(0).to_vec();
            pick_row(&flat, &allowed, mode, col)
        };
        let node = tape.masked_log_softmax_pick(logits, allowed, row);
        logp += tape.scalar(node);
        logp_nodes.push(node);
        seq.push(row);
        state.commit(row);
    }
    DecodedSequence { seq, logp_nodes, logp }
}

/// Decode against an already-encoded feature tensor and score the result.
pub fn rollout_features(
    tape: &mut Tape,
    nodes: &ParamNodes,
    enc: &EncoderOutput,
    features: &FeatureTensor,
    economics: &crate::model::EconomicParams,
    mut mode: DecodeMode,
) -> Result<RolloutResult, EvalError> {
    let decoded = decode_sequence(tape, nodes, enc, &mut mode);
    let schedule = Schedule::new(decoded.seq);
    let cost = sequence_cost(&schedule, features, economics)?.total;
    Ok(RolloutResult { schedule, cost, log_prob: decoded.logp, logp_nodes: decoded.logp_nodes })
}

/// Convenience entry point: embed, encode, and decode one instance on a
/// fresh tape.
pub fn rollout(
    params: &PolicyParams,
    instance: &Instance,
    mode: DecodeMode,
) -> Result<RolloutResult, EvalError> {
    let features = assemble_features(instance);
    let mut tape = Tape::new();
    let nodes = params.stage(&mut tape);
    let enc = encode(&mut tape, &nodes, &features);
    rollout_features(&mut tape, &nodes, &enc, &features, &instance.economics, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::check_feasible;
    use crate::policy::PolicyHyper;
    use crate::testkit::{desk_instance, micro_instance, ManualInstance};
    use rand::SeedableRng;

    fn small_params(seed: u64) -> PolicyParams {
        PolicyParams::init(PolicyHyper { n_layers: 2, hidden: 16, heads: 4, logit_clip: 10.0 }, seed)
    }

    #[test]
    fn forced_full_schedule_has_probability_one_at_the_forced_idle_steps() {
        // One machine, one period, two slots: step 0 free, and once the
        // machine is placed the second slot can only idle.
        let inst = ManualInstance {
            horizon: 1,
            j: 2,
            sites: vec![1],
            corrective: vec![30.0],
            failures: vec![vec![2]],
            limit: 5.0,
            demand: 5.0,
            dmc_rows: vec![vec![3.0]],
            ..ManualInstance::default()
        }
        .build();
        let params = small_params(11);
        let forced = vec![0usize, 1];
        let out = rollout(&params, &inst, DecodeMode::Forced(&forced)).unwrap();
        assert_eq!(out.schedule.seq, forced);
        // Step 1 had exactly one legal row, so its log-probability is 0.
        let features = assemble_features(&inst);
        let mut tape = Tape::new();
        let nodes = params.stage(&mut tape);
        let enc = encode(&mut tape, &nodes, &features);
        let mut mode = DecodeMode::Forced(&forced);
        let decoded = decode_sequence(&mut tape, &nodes, &enc, &mut mode);
        assert_eq!(tape.scalar(decoded.logp_nodes[1]), 0.0);
        assert!(tape.scalar(decoded.logp_nodes[0]) < 0.0);
    }

    #[test]
    fn greedy_is_deterministic() {
        let inst = desk_instance(21);
        let params = small_params(5);
        let a = rollout(&params, &inst, DecodeMode::Greedy).unwrap();
        let b = rollout(&params, &inst, DecodeMode::Greedy).unwrap();
        assert_eq!(a.schedule.seq, b.schedule.seq);
        assert_eq!(a.cost, b.cost);
        assert_eq!(a.log_prob, b.log_prob);
    }

    #[test]
    fn sampled_schedules_are_always_feasible() {
        let inst = desk_instance(22);
        let params = small_params(6);
        let mut rng = ChaCha8Rng::seed_from_u64(500);
        for _ in 0..200 {
            let out = rollout(&params, &inst, DecodeMode::Sample(&mut rng)).unwrap();
            let violations = check_feasible(&out.schedule, &inst);
            assert!(violations.is_empty(), "violations: {violations:?}");
            assert!(out.log_prob <= 0.0 && out.log_prob.is_finite());
        }
    }

    #[test]
    fn idle_is_forbidden_exactly_when_slots_run_out() {
        // Three real machines, three slots: idle must be masked at step 0.
        let inst = micro_instance(23);
        assert_eq!(inst.n_machines(), 3);
        assert_eq!(inst.n_slots(), 3);
        let params = small_params(7);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let out = rollout(&params, &inst, DecodeMode::Sample(&mut rng)).unwrap();
            assert!(out.schedule.seq.iter().all(|&r| r < 3), "idle leaked into {:?}", out.schedule.seq);
        }
    }

    #[test]
    fn uniform_logits_sample_the_masked_uniform_process() {
        // Zero parameters give identical logits everywhere, so decoding
        // reduces to uniform choice over the allowed rows at each step.
        let inst = ManualInstance {
            horizon: 2,
            j: 1,
            sites: vec![1],
            corrective: vec![10.0],
            failures: vec![vec![3]],
            limit: 4.0,
            demand: 0.0,
            dmc_rows: vec![vec![2.0, 2.0]],
            ..ManualInstance::default()
        }
        .build();
        let params = PolicyParams::zeros(PolicyHyper {
            n_layers: 1,
            hidden: 8,
            heads: 2,
            logit_clip: 10.0,
        });
        // Step 0 rows: machine or idle, each 1/2. If idle was taken, step 1
        // is forced to the machine. P(seq = [0, 1]) = 1/2, P([1, 0]) = 1/2.
        let mut rng = ChaCha8Rng::seed_from_u64(800);
        let n = 4000;
        let mut first_real = 0usize;
        for _ in 0..n {
            let out = rollout(&params, &inst, DecodeMode::Sample(&mut rng)).unwrap();
            match out.schedule.seq.as_slice() {
                [0, 1] => first_real += 1,
                [1, 0] => {}
                other => panic!("impossible sequence {other:?}"),
            }
        }
        let p = first_real as f64 / n as f64;
        let sigma = (0.25f64 / n as f64).sqrt();
        assert!((p - 0.5).abs() < 3.0 * sigma, "p = {p}");
    }

    #[test]
    fn pointer_logits_respect_the_clip_bound() {
        let inst = desk_instance(24);
        let features = assemble_features(&inst);
        // Exaggerated weights to push tanh toward saturation.
        let mut params = small_params(8);
        for t in params.tensors_mut() {
            t.mapv_inplace(|v| v * 40.0);
        }
        let clip = params.hyper.logit_clip;
        let mut tape = Tape::new();
        let nodes = params.stage(&mut tape);
        let enc = encode(&mut tape, &nodes, &features);
        let state = DecoderState::new(enc.n_rows - 1, enc.n_rows - 1);
        for col in 0..enc.n_cols {
            let logits = pointer_logits(&mut tape, &nodes, &enc, &state, col);
            for &v in tape.value(logits).iter() {
                assert!(v.abs() <= clip, "|{v}| exceeds the clip {clip}");
            }
        }
    }

    #[test]
    fn greedy_decode_is_invariant_to_cost_rescaling() {
        let inst = desk_instance(25);
        let features = assemble_features(&inst);
        let mut scaled = features.clone();
        for m in [
            &mut scaled.chi,
            &mut scaled.y,
            &mut scaled.chi_pre,
            &mut scaled.chi_corr,
            &mut scaled.chi_idle,
        ] {
            m.mapv_inplace(|v| v * 4.0);
        }
        let params = small_params(9);

        let run = |f: &FeatureTensor| {
            let mut tape = Tape::new();
            let nodes = params.stage(&mut tape);
            let enc = encode(&mut tape, &nodes, f);
            let mut mode = DecodeMode::Greedy;
            decode_sequence(&mut tape, &nodes, &enc, &mut mode).seq
        };
        assert_eq!(run(&features), run(&scaled));
    }

    #[test]
    fn log_prob_sums_the_step_nodes() {
        let inst = micro_instance(26);
        let params = small_params(10);
        let features = assemble_features(&inst);
        let mut tape = Tape::new();
        let nodes = params.stage(&mut tape);
        let enc = encode(&mut tape, &nodes, &features);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut mode = DecodeMode::Sample(&mut rng);
        let decoded = decode_sequence(&mut tape, &nodes, &enc, &mut mode);
        let total: f64 = decoded.logp_nodes.iter().map(|&n| tape.scalar(n)).sum();
        assert!((total - decoded.logp).abs() < 1e-12);
    }
}
