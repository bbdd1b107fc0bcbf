//! Linear-chain CRF: sequence scoring, log-partition via the forward
//! algorithm, negative log-likelihood, and Viterbi decoding.
//!
//! Transitions live in one `[L+2, L+2]` tensor oriented `[to][from]`
//! (`trans[j][i]` scores the move i -> j), with virtual START and STOP
//! states at indices L and L+1. Transitions into START and out of STOP are
//! masked with a large negative sentinel that is finite (the tensor
//! contract bans infinities) yet underflows to zero probability.

use crate::error::{Error, Result};
use crate::tape::{NodeId, Tape};
use crate::tensor::{logsumexp, Tensor};

/// Masked-transition sentinel: exp(MASK - anything reasonable) is exactly 0
/// in f64, and sums of a few of these stay far from overflow.
pub const MASK: f64 = -1.0e4;

pub fn start_state(n_labels: usize) -> usize {
    n_labels
}

pub fn stop_state(n_labels: usize) -> usize {
    n_labels + 1
}

/// Overwrite the rows/columns that represent impossible moves: into START,
/// out of STOP.
pub fn apply_virtual_masks(trans: &mut Tensor, n_labels: usize) {
    let n = n_labels + 2;
    debug_assert_eq!(trans.shape(), &[n, n]);
    let start = start_state(n_labels);
    let stop = stop_state(n_labels);
    for i in 0..n {
        trans.data_mut()[start * n + i] = MASK;
        trans.data_mut()[i * n + stop] = MASK;
    }
}

fn check_emissions(emissions: &Tensor, n_labels: usize) -> Result<usize> {
    if emissions.rank() != 2 || emissions.cols() != n_labels || emissions.rows() == 0 {
        return Err(Error::ShapeMismatch {
            op: "crf emissions",
            left: emissions.shape().to_vec(),
            right: vec![0, n_labels],
        });
    }
    Ok(emissions.rows())
}

fn check_trans(trans: &Tensor, n_labels: usize) -> Result<()> {
    let n = n_labels + 2;
    if trans.shape() != [n, n] {
        return Err(Error::ShapeMismatch {
            op: "crf transitions",
            left: trans.shape().to_vec(),
            right: vec![n, n],
        });
    }
    Ok(())
}

/// Log-domain score of one label sequence:
/// trans(START, y_1) + sum_t emit_t(y_t) + sum_{t>=2} trans(y_{t-1}, y_t)
/// + trans(y_T, STOP).
pub fn crf_score(trans: &Tensor, emissions: &Tensor, y: &[usize]) -> Result<f64> {
    let n_labels = emissions.cols();
    let t_len = check_emissions(emissions, n_labels)?;
    check_trans(trans, n_labels)?;
    if y.len() != t_len {
        return Err(Error::InvalidArgument(format!(
            "label sequence length {} != emission rows {t_len}",
            y.len()
        )));
    }
    if let Some(&bad) = y.iter().find(|&&l| l >= n_labels) {
        return Err(Error::InvalidArgument(format!(
            "label index {bad} out of range for {n_labels} labels"
        )));
    }
    let start = start_state(n_labels);
    let stop = stop_state(n_labels);
    let mut score = trans.at(y[0], start) + emissions.at(0, y[0]);
    for t in 1..t_len {
        score += trans.at(y[t], y[t - 1]) + emissions.at(t, y[t]);
    }
    score += trans.at(stop, y[t_len - 1]);
    Ok(score)
}

/// Forward algorithm in the log domain.
pub fn crf_log_partition(trans: &Tensor, emissions: &Tensor) -> Result<f64> {
    let n_labels = emissions.cols();
    let t_len = check_emissions(emissions, n_labels)?;
    check_trans(trans, n_labels)?;
    let start = start_state(n_labels);
    let stop = stop_state(n_labels);

    let mut alpha: Vec<f64> = (0..n_labels)
        .map(|j| trans.at(j, start) + emissions.at(0, j))
        .collect();
    let mut scratch = vec![0.0; n_labels];
    for t in 1..t_len {
        let next: Vec<f64> = (0..n_labels)
            .map(|j| {
                for i in 0..n_labels {
                    scratch[i] = alpha[i] + trans.at(j, i);
                }
                emissions.at(t, j) + logsumexp(&scratch)
            })
            .collect();
        alpha = next;
    }
    for (i, a) in alpha.iter().enumerate() {
        scratch[i] = a + trans.at(stop, i);
    }
    Ok(logsumexp(&scratch))
}

/// loss = logZ - score(y); always >= 0 since logZ dominates every term.
pub fn crf_nll(trans: &Tensor, emissions: &Tensor, y: &[usize]) -> Result<f64> {
    Ok(crf_log_partition(trans, emissions)? - crf_score(trans, emissions, y)?)
}

/// Max-product decoding with backpointers. Ties break toward the lower
/// label index at every maximization, so decoding is deterministic.
pub fn viterbi_decode(trans: &Tensor, emissions: &Tensor) -> Result<(Vec<usize>, f64)> {
    let n_labels = emissions.cols();
    let t_len = check_emissions(emissions, n_labels)?;
    check_trans(trans, n_labels)?;
    let start = start_state(n_labels);
    let stop = stop_state(n_labels);

    let mut delta: Vec<f64> = (0..n_labels)
        .map(|j| trans.at(j, start) + emissions.at(0, j))
        .collect();
    let mut backptr: Vec<Vec<usize>> = Vec::with_capacity(t_len);
    for t in 1..t_len {
        let mut next = vec![0.0; n_labels];
        let mut bp = vec![0usize; n_labels];
        for j in 0..n_labels {
            let mut best_i = 0;
            let mut best = delta[0] + trans.at(j, 0);
            for i in 1..n_labels {
                let cand = delta[i] + trans.at(j, i);
                if cand > best {
                    best = cand;
                    best_i = i;
                }
            }
            next[j] = best + emissions.at(t, j);
            bp[j] = best_i;
        }
        delta = next;
        backptr.push(bp);
    }

    let mut best_j = 0;
    let mut best = delta[0] + trans.at(stop, 0);
    for j in 1..n_labels {
        let cand = delta[j] + trans.at(stop, j);
        if cand > best {
            best = cand;
            best_j = j;
        }
    }

    let mut path = vec![best_j];
    for bp in backptr.iter().rev() {
        path.push(bp[*path.last().unwrap()]);
    }
    path.reverse();
    Ok((path, best))
}

/// Tape builders mirroring the pure functions above, so training losses can
/// be differentiated. The forward recurrence runs over alphas padded to
/// length L+2: the virtual slots carry the mask sentinel, whose exp
/// underflows to exactly zero inside every logsumexp.
pub fn score_on_tape(
    tape: &mut Tape,
    trans: NodeId,
    emissions: &[NodeId],
    y: &[usize],
    n_labels: usize,
) -> Result<NodeId> {
    if emissions.is_empty() || emissions.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "score_on_tape: {} emission rows vs {} labels",
            emissions.len(),
            y.len()
        )));
    }
    if let Some(&bad) = y.iter().find(|&&l| l >= n_labels) {
        return Err(Error::InvalidArgument(format!(
            "label index {bad} out of range for {n_labels} labels"
        )));
    }
    let start = start_state(n_labels);
    let stop = stop_state(n_labels);

    let row_y0 = tape.pick(trans, y[0])?;
    let mut score = tape.pick(row_y0, start)?;
    let e0 = tape.pick(emissions[0], y[0])?;
    score = tape.add(score, e0)?;
    for t in 1..y.len() {
        let row = tape.pick(trans, y[t])?;
        let tr = tape.pick(row, y[t - 1])?;
        score = tape.add(score, tr)?;
        let em = tape.pick(emissions[t], y[t])?;
        score = tape.add(score, em)?;
    }
    let stop_row = tape.pick(trans, stop)?;
    let tr_stop = tape.pick(stop_row, *y.last().unwrap())?;
    tape.add(score, tr_stop)
}

pub fn log_partition_on_tape(
    tape: &mut Tape,
    trans: NodeId,
    emissions: &[NodeId],
    n_labels: usize,
) -> Result<NodeId> {
    if emissions.is_empty() {
        return Err(Error::InvalidArgument(
            "log_partition_on_tape: empty sequence".into(),
        ));
    }
    let start = start_state(n_labels);
    let stop = stop_state(n_labels);

    // alpha_0: probability mass sits entirely on the virtual START state.
    let mut alpha0 = vec![MASK; n_labels + 2];
    alpha0[start] = 0.0;
    let mut alpha = tape.constant(Tensor::vector(alpha0));
    let mask_pair = tape.constant(Tensor::vector(vec![MASK, MASK]));

    for &emit in emissions {
        let mut parts = Vec::with_capacity(n_labels + 1);
        for j in 0..n_labels {
            let row = tape.pick(trans, j)?;
            let shifted = tape.add(alpha, row)?;
            let lse = tape.logsumexp(shifted)?;
            let e = tape.pick(emit, j)?;
            parts.push(tape.add(lse, e)?);
        }
        parts.push(mask_pair);
        alpha = tape.concat(&parts)?;
    }
    let stop_row = tape.pick(trans, stop)?;
    let final_scores = tape.add(alpha, stop_row)?;
    tape.logsumexp(final_scores)
}

pub fn nll_on_tape(
    tape: &mut Tape,
    trans: NodeId,
    emissions: &[NodeId],
    y: &[usize],
    n_labels: usize,
) -> Result<NodeId> {
    let log_z = log_partition_on_tape(tape, trans, emissions, n_labels)?;
    let score = score_on_tape(tape, trans, emissions, y, n_labels)?;
    let neg_one = tape.constant(Tensor::scalar(-1.0));
    let neg_score = tape.mul(neg_one, score)?;
    tape.add(log_z, neg_score)
}

/// Enumerate every label sequence of length `t_len`; the independent oracle
/// for partition and decoding on small instances.
pub fn enumerate_all(trans: &Tensor, emissions: &Tensor) -> Result<(f64, Vec<usize>, f64)> {
    let n_labels = emissions.cols();
    let t_len = emissions.rows();
    let mut y = vec![0usize; t_len];
    let mut scores = Vec::new();
    let mut best_y = y.clone();
    let mut best = f64::NEG_INFINITY;
    loop {
        let s = crf_score(trans, emissions, &y)?;
        if s > best {
            best = s;
            best_y = y.clone();
        }
        scores.push(s);
        // odometer increment
        let mut pos = t_len;
        loop {
            if pos == 0 {
                let log_z = logsumexp(&scores);
                return Ok((log_z, best_y, best));
            }
            pos -= 1;
            y[pos] += 1;
            if y[pos] < n_labels {
                break;
            }
            y[pos] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::gradcheck::finite_difference_check;
    use crate::params::{init_parameters, InitScheme, ParameterStore};

    fn zero_params(n_labels: usize) -> Tensor {
        let n = n_labels + 2;
        let mut trans = Tensor::zeros(vec![n, n]);
        apply_virtual_masks(&mut trans, n_labels);
        trans
    }

    fn random_instance(seed: u64, t_len: usize, n_labels: usize) -> (Tensor, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = n_labels + 2;
        let mut trans = Tensor::new(
            vec![n, n],
            (0..n * n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        )
        .unwrap();
        apply_virtual_masks(&mut trans, n_labels);
        let emissions = Tensor::new(
            vec![t_len, n_labels],
            (0..t_len * n_labels).map(|_| rng.gen_range(-3.0..3.0)).collect(),
        )
        .unwrap();
        (trans, emissions)
    }

    #[test]
    fn zero_parameters_score_zero() {
        let trans = zero_params(4);
        let emissions = Tensor::zeros(vec![3, 4]);
        for y in [[0, 0, 0], [1, 3, 2], [3, 3, 3]] {
            assert_eq!(crf_score(&trans, &emissions, &y).unwrap(), 0.0);
        }
    }

    #[test]
    fn single_token_zero_transitions() {
        let trans = zero_params(4);
        let emissions = Tensor::new(vec![1, 4], vec![0.3, -1.0, 2.0, 0.0]).unwrap();
        assert_abs_diff_eq!(
            crf_score(&trans, &emissions, &[2]).unwrap(),
            2.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            crf_log_partition(&trans, &emissions).unwrap(),
            logsumexp(&[0.3, -1.0, 2.0, 0.0]),
            epsilon = 1e-12
        );
    }

    #[test]
    fn uniform_log_partition_is_t_ln_l() {
        let trans = zero_params(4);
        let emissions = Tensor::zeros(vec![3, 4]);
        assert_abs_diff_eq!(
            crf_log_partition(&trans, &emissions).unwrap(),
            3.0 * 4.0f64.ln(),
            epsilon = 1e-10
        );
        assert_abs_diff_eq!(
            crf_nll(&trans, &emissions, &[1, 2, 0]).unwrap(),
            3.0 * 4.0f64.ln(),
            epsilon = 1e-10
        );
    }

    #[test]
    fn out_of_range_label_rejected() {
        let trans = zero_params(4);
        let emissions = Tensor::zeros(vec![2, 4]);
        assert!(crf_score(&trans, &emissions, &[0, 4]).is_err());
    }

    #[test]
    fn probabilities_sum_to_one_on_small_instances() {
        for seed in 0..20 {
            let t_len = 1 + (seed as usize % 5);
            let n_labels = 2 + (seed as usize % 3);
            let (trans, emissions) = random_instance(seed, t_len, n_labels);
            let log_z = crf_log_partition(&trans, &emissions).unwrap();
            let (brute, _, _) = enumerate_all(&trans, &emissions).unwrap();
            assert_abs_diff_eq!(log_z, brute, epsilon = 1e-8);
        }
    }

    #[test]
    fn viterbi_attains_enumerated_maximum() {
        for seed in 100..125 {
            let t_len = 1 + (seed as usize % 6);
            let n_labels = 2 + (seed as usize % 4);
            let (trans, emissions) = random_instance(seed, t_len, n_labels);
            let (_, _, best) = enumerate_all(&trans, &emissions).unwrap();
            let (path, score) = viterbi_decode(&trans, &emissions).unwrap();
            assert_abs_diff_eq!(score, best, epsilon = 1e-9);
            assert_abs_diff_eq!(
                crf_score(&trans, &emissions, &path).unwrap(),
                score,
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn viterbi_zero_transitions_is_per_token_argmax() {
        let trans = zero_params(3);
        let emissions =
            Tensor::new(vec![3, 3], vec![0.0, 2.0, 1.0, 5.0, 5.0, 4.0, -1.0, -1.0, -1.0]).unwrap();
        let (path, _) = viterbi_decode(&trans, &emissions).unwrap();
        // row 2 is a three-way tie and row 1 a two-way tie: lowest index wins
        assert_eq!(path, vec![1, 0, 0]);
    }

    #[test]
    fn viterbi_all_zero_parameters_decodes_all_zeros() {
        let trans = zero_params(5);
        let emissions = Tensor::zeros(vec![4, 5]);
        let (path, score) = viterbi_decode(&trans, &emissions).unwrap();
        assert_eq!(path, vec![0, 0, 0, 0]);
        assert_abs_diff_eq!(score, 0.0);
    }

    #[test]
    fn log_z_dominates_any_sequence_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for seed in 0..10 {
            let (trans, emissions) = random_instance(seed, 5, 4);
            let log_z = crf_log_partition(&trans, &emissions).unwrap();
            for _ in 0..1000 {
                let y: Vec<usize> = (0..5).map(|_| rng.gen_range(0..4)).collect();
                assert!(log_z >= crf_score(&trans, &emissions, &y).unwrap());
            }
        }
    }

    #[test]
    fn viterbi_score_dominates_random_sequences() {
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        for seed in 0..10 {
            let (trans, emissions) = random_instance(seed, 5, 4);
            let (_, best) = viterbi_decode(&trans, &emissions).unwrap();
            for _ in 0..1000 {
                let y: Vec<usize> = (0..5).map(|_| rng.gen_range(0..4)).collect();
                assert!(best >= crf_score(&trans, &emissions, &y).unwrap() - 1e-12);
            }
        }
    }

    #[test]
    fn tape_partition_matches_pure() {
        for seed in 0..10 {
            let (trans, emissions) = random_instance(seed, 4, 3);
            let pure = crf_log_partition(&trans, &emissions).unwrap();
            let mut tape = Tape::new();
            let tnode = tape.constant(trans.clone());
            let enodes: Vec<NodeId> = (0..4)
                .map(|t| tape.constant(Tensor::vector(emissions.row(t).to_vec())))
                .collect();
            let lz = log_partition_on_tape(&mut tape, tnode, &enodes, 3).unwrap();
            assert_abs_diff_eq!(tape.value(lz).scalar_value(), pure, epsilon = 1e-12);
        }
    }

    #[test]
    fn nll_matches_enumeration_probability() {
        for seed in 0..10 {
            let (trans, emissions) = random_instance(seed, 3, 3);
            let (log_z, _, _) = enumerate_all(&trans, &emissions).unwrap();
            let y = [1, 0, 2];
            let p = (crf_score(&trans, &emissions, &y).unwrap() - log_z).exp();
            let nll = crf_nll(&trans, &emissions, &y).unwrap();
            assert_abs_diff_eq!(nll, -p.ln(), epsilon = 1e-8);
        }
    }

    fn nll_loss_of_store(
        store: &ParameterStore,
        y: &[usize],
        n_labels: usize,
    ) -> crate::error::Result<f64> {
        let t_len = y.len();
        let mut tape = Tape::new();
        let mut trans = store.get("trans")?.clone();
        apply_virtual_masks(&mut trans, n_labels);
        let tnode = tape.parameter("trans", trans);
        let emnode = tape.parameter("emissions", store.get("emissions")?.clone());
        let rows: crate::error::Result<Vec<NodeId>> =
            (0..t_len).map(|t| tape.pick(emnode, t)).collect();
        let loss = nll_on_tape(&mut tape, tnode, &rows?, y, n_labels)?;
        Ok(tape.value(loss).scalar_value())
    }

    #[test]
    fn nll_gradients_match_finite_differences() {
        let n_labels = 4;
        let t_len = 4;
        let y = [2, 0, 1, 3];
        for seed in 0..5 {
            let shapes = vec![
                ("emissions".to_string(), vec![t_len, n_labels]),
                ("trans".to_string(), vec![n_labels + 2, n_labels + 2]),
            ];
            let store = init_parameters(&shapes, InitScheme::Uniform(1.0), seed).unwrap();
            let mut tape = Tape::new();
            let mut trans = store.get("trans").unwrap().clone();
            apply_virtual_masks(&mut trans, n_labels);
            let tnode = tape.parameter("trans", trans);
            let emnode = tape.parameter("emissions", store.get("emissions").unwrap().clone());
            let rows: Vec<NodeId> = (0..t_len).map(|t| tape.pick(emnode, t).unwrap()).collect();
            let loss = nll_on_tape(&mut tape, tnode, &rows, &y, n_labels).unwrap();
            let analytic = tape.backward(loss).unwrap();
            let report = finite_difference_check(
                |s| nll_loss_of_store(s, &y, n_labels),
                &store,
                &analytic,
                1e-5,
                1e-6,
            )
            .unwrap();
            assert!(report.pass, "seed {seed}: {}", report.summary());
        }
    }
}
