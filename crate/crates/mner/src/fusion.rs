//! Modality fusion: the per-token attention over whole input channels and
//! the naive concatenation baseline, plus the attention report emitter.
//!
//! Attention computes a = logistic(W_m . [x^(w); x^(c); x^(v)] + b_m),
//! alpha = softmax(a), and returns the convex combination of the inputs.
//! Because the pre-activations pass through a logistic, every attention
//! weight lies in [1 / (1 + (K-1) e), e / (e + K - 1)].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Modality {
    Word,
    Char,
    Visual,
}

impl Modality {
    pub fn short(&self) -> &'static str {
        match self {
            Modality::Word => "w",
            Modality::Char => "c",
            Modality::Visual => "v",
        }
    }
}

/// An ordered subset of {w, c, v}, canonically (w, c, v).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModalitySet {
    pub word: bool,
    pub chars: bool,
    pub visual: bool,
}

impl ModalitySet {
    pub fn members(&self) -> Vec<Modality> {
        let mut out = Vec::new();
        if self.word {
            out.push(Modality::Word);
        }
        if self.chars {
            out.push(Modality::Char);
        }
        if self.visual {
            out.push(Modality::Visual);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.word as usize + self.chars as usize + self.visual as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_config_str(&self) -> String {
        self.members().iter().map(|m| m.short()).collect()
    }
}

impl FromStr for ModalitySet {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let mut set = ModalitySet {
            word: false,
            chars: false,
            visual: false,
        };
        for c in s.chars() {
            let flag = match c {
                'w' => &mut set.word,
                'c' => &mut set.chars,
                'v' => &mut set.visual,
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown modality {other:?} in {s:?}"
                    )))
                }
            };
            if *flag {
                return Err(Error::InvalidArgument(format!(
                    "duplicate modality {c:?} in {s:?}"
                )));
            }
            *flag = true;
        }
        if set.is_empty() {
            return Err(Error::InvalidArgument("empty modality set".into()));
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    Attention,
    Concat,
}

impl FusionMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            FusionMode::Attention => "attention",
            FusionMode::Concat => "concat",
        }
    }
}

impl FromStr for FusionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" => Ok(FusionMode::Attention),
            "concat" => Ok(FusionMode::Concat),
            other => Err(Error::InvalidArgument(format!(
                "unknown fusion mode {other:?} (expected attention or concat)"
            ))),
        }
    }
}

pub const ATTENTION_WEIGHT_PARAM: &str = "fusion.w_m";
pub const ATTENTION_BIAS_PARAM: &str = "fusion.b_m";

pub fn attention_shapes(k: usize, p: usize) -> Vec<(String, Vec<usize>)> {
    vec![
        (ATTENTION_WEIGHT_PARAM.to_string(), vec![k, k * p]),
        (ATTENTION_BIAS_PARAM.to_string(), vec![k]),
    ]
}

fn canonical_order(inputs: &[(Modality, NodeId)]) -> Result<Vec<(Modality, NodeId)>> {
    let mut sorted = inputs.to_vec();
    sorted.sort_by_key(|(m, _)| *m);
    for pair in sorted.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(Error::InvalidArgument(format!(
                "duplicate modality {:?} in fusion input",
                pair[0].0
            )));
        }
    }
    Ok(sorted)
}

fn check_widths(tape: &Tape, inputs: &[(Modality, NodeId)]) -> Result<usize> {
    let p = tape.value(inputs[0].1).len();
    for (m, id) in inputs {
        let t = tape.value(*id);
        if t.rank() != 1 || t.len() != p {
            return Err(Error::ShapeMismatch {
                op: "fusion input",
                left: vec![p],
                right: t.shape().to_vec(),
            });
        }
        let _ = m;
    }
    Ok(p)
}

/// Soft attention over modalities; returns (fused context, alpha).
pub fn attend_on_tape(
    tape: &mut Tape,
    params: &BTreeMap<String, NodeId>,
    inputs: &[(Modality, NodeId)],
) -> Result<(NodeId, NodeId)> {
    let k = inputs.len();
    if !(k == 2 || k == 3) {
        return Err(Error::InvalidArgument(format!(
            "modality attention needs 2 or 3 modalities, got {k}"
        )));
    }
    let inputs = canonical_order(inputs)?;
    check_widths(tape, &inputs)?;
    let w_m = params
        .get(ATTENTION_WEIGHT_PARAM)
        .copied()
        .ok_or_else(|| Error::UnknownParameter(ATTENTION_WEIGHT_PARAM.into()))?;
    let b_m = params
        .get(ATTENTION_BIAS_PARAM)
        .copied()
        .ok_or_else(|| Error::UnknownParameter(ATTENTION_BIAS_PARAM.into()))?;

    let ids: Vec<NodeId> = inputs.iter().map(|(_, id)| *id).collect();
    let stacked = tape.concat(&ids)?;
    let pre = tape.affine(w_m, stacked, Some(b_m))?;
    let gated = tape.sigmoid(pre);
    let alpha = tape.softmax(gated)?;

    let mut fused: Option<NodeId> = None;
    for (m, &id) in ids.iter().enumerate() {
        let weight = tape.pick(alpha, m)?;
        let term = tape.mul(weight, id)?;
        fused = Some(match fused {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    Ok((fused.unwrap(), alpha))
}

/// Concatenation baseline in canonical (w, c, v) order.
pub fn concat_on_tape(
    tape: &mut Tape,
    inputs: &[(Modality, NodeId)],
) -> Result<NodeId> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("concat of zero modalities".into()));
    }
    let inputs = canonical_order(inputs)?;
    check_widths(tape, &inputs)?;
    let ids: Vec<NodeId> = inputs.iter().map(|(_, id)| *id).collect();
    tape.concat(&ids)
}

/// Value-level attention for tests and direct use; builds a throwaway tape.
pub fn attend_modalities(
    w_m: &Tensor,
    b_m: &Tensor,
    inputs: &[(Modality, Tensor)],
) -> Result<(Tensor, Vec<f64>)> {
    let mut tape = Tape::new();
    let mut params = BTreeMap::new();
    params.insert(
        ATTENTION_WEIGHT_PARAM.to_string(),
        tape.parameter(ATTENTION_WEIGHT_PARAM, w_m.clone()),
    );
    params.insert(
        ATTENTION_BIAS_PARAM.to_string(),
        tape.parameter(ATTENTION_BIAS_PARAM, b_m.clone()),
    );
    let nodes: Vec<(Modality, NodeId)> = inputs
        .iter()
        .map(|(m, t)| (*m, tape.constant(t.clone())))
        .collect();
    let (fused, alpha) = attend_on_tape(&mut tape, &params, &nodes)?;
    Ok((
        tape.value(fused).clone(),
        tape.value(alpha).data().to_vec(),
    ))
}

pub fn concat_fuse(inputs: &[(Modality, Tensor)]) -> Result<Tensor> {
    let mut tape = Tape::new();
    let nodes: Vec<(Modality, NodeId)> = inputs
        .iter()
        .map(|(m, t)| (*m, tape.constant(t.clone())))
        .collect();
    let fused = concat_on_tape(&mut tape, &nodes)?;
    Ok(tape.value(fused).clone())
}

/// One TSV block per sentence: header, then per token its attention weights
/// (4 decimals), predicted label, and gold label.
pub fn emit_attention_report(
    tokens: &[String],
    alphas: &[Vec<f64>],
    modalities: &[Modality],
    predictions: &[String],
    gold: &[String],
) -> Result<String> {
    if tokens.len() != alphas.len()
        || tokens.len() != predictions.len()
        || tokens.len() != gold.len()
    {
        return Err(Error::InvalidArgument(format!(
            "attention report length mismatch: {} tokens, {} alphas, {} predictions, {} gold",
            tokens.len(),
            alphas.len(),
            predictions.len(),
            gold.len()
        )));
    }
    let mut out = String::from("token");
    for m in modalities {
        let _ = write!(out, "\talpha_{}", m.short());
    }
    out.push_str("\tpred\tgold\n");
    for (((token, alpha), pred), g) in tokens.iter().zip(alphas).zip(predictions).zip(gold) {
        if alpha.len() != modalities.len() {
            return Err(Error::InvalidArgument(format!(
                "alpha width {} != modality count {}",
                alpha.len(),
                modalities.len()
            )));
        }
        out.push_str(token);
        for a in alpha {
            let _ = write!(out, "\t{a:.4}");
        }
        let _ = write!(out, "\t{pred}\t{g}");
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::gradcheck::finite_difference_check;
    use crate::params::{init_parameters, InitScheme, ParameterStore};

    fn vecs(p: usize, seed: u64, k: usize) -> Vec<(Modality, Tensor)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mods = [Modality::Word, Modality::Char, Modality::Visual];
        (0..k)
            .map(|i| {
                (
                    mods[i],
                    Tensor::vector((0..p).map(|_| rng.gen_range(-2.0..2.0)).collect()),
                )
            })
            .collect()
    }

    #[test]
    fn zero_parameters_take_the_mean() {
        for k in [2usize, 3] {
            let p = 4;
            let w = Tensor::zeros(vec![k, k * p]);
            let b = Tensor::zeros(vec![k]);
            let inputs = vecs(p, 42, k);
            let (fused, alpha) = attend_modalities(&w, &b, &inputs).unwrap();
            for a in &alpha {
                assert_eq!(*a, 1.0 / k as f64);
            }
            for i in 0..p {
                let mean: f64 =
                    inputs.iter().map(|(_, t)| t.data()[i]).sum::<f64>() / k as f64;
                assert_abs_diff_eq!(fused.data()[i], mean, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn saturated_bias_hits_logistic_limit_three_way() {
        let p = 3;
        let w = Tensor::zeros(vec![3, 3 * p]);
        let b = Tensor::vector(vec![100.0, -100.0, -100.0]);
        let (_, alpha) = attend_modalities(&w, &b, &vecs(p, 1, 3)).unwrap();
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(alpha[0], e / (e + 2.0), epsilon = 1e-9);
        assert_abs_diff_eq!(alpha[1], 1.0 / (e + 2.0), epsilon = 1e-9);
        assert_abs_diff_eq!(alpha[2], 1.0 / (e + 2.0), epsilon = 1e-9);
    }

    #[test]
    fn saturated_bias_hits_logistic_limit_two_way() {
        let p = 3;
        let w = Tensor::zeros(vec![2, 2 * p]);
        let b = Tensor::vector(vec![100.0, -100.0]);
        let (_, alpha) = attend_modalities(&w, &b, &vecs(p, 2, 2)).unwrap();
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(alpha[0], e / (e + 1.0), epsilon = 1e-9);
        assert_abs_diff_eq!(alpha[1], 1.0 / (e + 1.0), epsilon = 1e-9);
    }

    #[test]
    fn rejects_one_or_four_modalities() {
        let p = 2;
        let w = Tensor::zeros(vec![1, p]);
        let b = Tensor::zeros(vec![1]);
        assert!(attend_modalities(&w, &b, &vecs(p, 3, 1)).is_err());
    }

    #[test]
    fn rejects_width_mismatch() {
        let w = Tensor::zeros(vec![2, 6]);
        let b = Tensor::zeros(vec![2]);
        let inputs = vec![
            (Modality::Word, Tensor::vector(vec![1.0, 2.0, 3.0])),
            (Modality::Char, Tensor::vector(vec![1.0, 2.0])),
        ];
        assert!(attend_modalities(&w, &b, &inputs).is_err());
    }

    #[test]
    fn concat_in_declared_order() {
        let inputs = vec![
            (Modality::Word, Tensor::vector(vec![1.0, 2.0])),
            (Modality::Char, Tensor::vector(vec![3.0, 4.0])),
        ];
        let fused = concat_fuse(&inputs).unwrap();
        assert_eq!(fused.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn concat_three_inputs_width() {
        let fused = concat_fuse(&vecs(2, 9, 3)).unwrap();
        assert_eq!(fused.shape(), &[6]);
    }

    #[test]
    fn concat_sorts_shuffled_tags() {
        let shuffled = vec![
            (Modality::Visual, Tensor::vector(vec![5.0, 6.0])),
            (Modality::Word, Tensor::vector(vec![1.0, 2.0])),
            (Modality::Char, Tensor::vector(vec![3.0, 4.0])),
        ];
        let fused = concat_fuse(&shuffled).unwrap();
        assert_eq!(fused.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn concat_rejects_empty() {
        assert!(concat_fuse(&[]).is_err());
    }

    #[test]
    fn slicing_concat_recovers_inputs() {
        let inputs = vecs(3, 17, 3);
        let fused = concat_fuse(&inputs).unwrap();
        for (i, (_, t)) in inputs.iter().enumerate() {
            assert_eq!(&fused.data()[i * 3..(i + 1) * 3], t.data());
        }
    }

    #[test]
    fn attention_gradients_match_finite_differences() {
        let p = 3;
        let k = 3;
        let mut shapes = attention_shapes(k, p);
        for m in ["in.w", "in.c", "in.v"] {
            shapes.push((m.to_string(), vec![p]));
        }
        let store = init_parameters(&shapes, InitScheme::Uniform(0.9), 13).unwrap();

        let build = |s: &ParameterStore| -> crate::error::Result<(Tape, NodeId)> {
            let mut tape = Tape::new();
            let mut params = BTreeMap::new();
            for name in [ATTENTION_WEIGHT_PARAM, ATTENTION_BIAS_PARAM] {
                params.insert(name.to_string(), tape.parameter(name, s.get(name)?.clone()));
            }
            let inputs = vec![
                (Modality::Word, tape.parameter("in.w", s.get("in.w")?.clone())),
                (Modality::Char, tape.parameter("in.c", s.get("in.c")?.clone())),
                (Modality::Visual, tape.parameter("in.v", s.get("in.v")?.clone())),
            ];
            let (fused, _) = attend_on_tape(&mut tape, &params, &inputs)?;
            // weight the components so the loss is not symmetric
            let probe = tape.constant(Tensor::vector(vec![0.7, -1.3, 0.4]));
            let weighted = tape.mul(fused, probe)?;
            let loss = tape.sum(weighted);
            Ok((tape, loss))
        };

        let (tape, loss) = build(&store).unwrap();
        let analytic = tape.backward(loss).unwrap();
        let report = finite_difference_check(
            |s| build(s).map(|(t, l)| t.value(l).scalar_value()),
            &store,
            &analytic,
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.pass, "{}", report.summary());
    }

    #[test]
    fn report_formats_single_row() {
        let out = emit_attention_report(
            &["x".to_string()],
            &[vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]],
            &[Modality::Word, Modality::Char, Modality::Visual],
            &["O".to_string()],
            &["O".to_string()],
        )
        .unwrap();
        assert_eq!(
            out,
            "token\talpha_w\talpha_c\talpha_v\tpred\tgold\nx\t0.3333\t0.3333\t0.3333\tO\tO\n"
        );
    }

    #[test]
    fn report_two_modality_drops_visual_column() {
        let out = emit_attention_report(
            &["hi".to_string()],
            &[vec![0.25, 0.75]],
            &[Modality::Word, Modality::Char],
            &["O".to_string()],
            &["B-PER".to_string()],
        )
        .unwrap();
        assert!(out.starts_with("token\talpha_w\talpha_c\tpred\tgold\n"));
        assert!(out.contains("hi\t0.2500\t0.7500\tO\tB-PER\n"));
    }

    #[test]
    fn report_empty_is_header_only() {
        let out = emit_attention_report(&[], &[], &[Modality::Word, Modality::Char], &[], &[])
            .unwrap();
        assert_eq!(out, "token\talpha_w\talpha_c\tpred\tgold\n");
    }

    #[test]
    fn report_rejects_length_mismatch() {
        let res = emit_attention_report(
            &["a".to_string(), "b".to_string()],
            &[vec![0.5, 0.5]],
            &[Modality::Word, Modality::Char],
            &["O".to_string(), "O".to_string()],
            &["O".to_string(), "O".to_string()],
        );
        assert!(res.is_err());
    }

    proptest! {
        #[test]
        fn alpha_stays_on_simplex_within_logistic_bounds(
            seed in 0u64..500,
            k in 2usize..4,
        ) {
            let p = 4;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = Tensor::new(
                vec![k, k * p],
                (0..k * k * p).map(|_| rng.gen_range(-5.0..5.0)).collect(),
            ).unwrap();
            let b = Tensor::new(vec![k], (0..k).map(|_| rng.gen_range(-5.0..5.0)).collect()).unwrap();
            let inputs = vecs(p, seed ^ 0x5a5a, k);
            let (fused, alpha) = attend_modalities(&w, &b, &inputs).unwrap();

            let sum: f64 = alpha.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            let e = std::f64::consts::E;
            let lo = 1.0 / (1.0 + (k as f64 - 1.0) * e);
            let hi = e / (e + k as f64 - 1.0);
            for &a in &alpha {
                prop_assert!(a >= lo - 1e-12 && a <= hi + 1e-12, "alpha {a} outside [{lo}, {hi}]");
            }
            // fused stays in the componentwise convex hull
            for i in 0..p {
                let mut min = f64::INFINITY;
                let mut max = f64::NEG_INFINITY;
                for (_, t) in &inputs {
                    min = min.min(t.data()[i]);
                    max = max.max(t.data()[i]);
                }
                prop_assert!(fused.data()[i] >= min - 1e-12 && fused.data()[i] <= max + 1e-12);
            }
        }
    }
}
