//! Corpus file format: blank-line-separated sentences of `token<TAB>label`
//! lines (or bare tokens for unlabeled input), with an optional
//! `#visual<TAB>f_1 ... f_dv` directive line right before a sentence's
//! first token line.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::label_index;

#[derive(Debug, Clone, PartialEq)]
pub struct Sentence {
    pub tokens: Vec<String>,
    /// BIO label strings, present for gold-annotated corpora.
    pub labels: Option<Vec<String>>,
    /// Sentence-level visual feature vector shared by every token.
    pub visual: Option<Vec<f64>>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

struct PendingSentence {
    tokens: Vec<String>,
    labels: Vec<Option<String>>,
    visual: Option<Vec<f64>>,
    first_line: usize,
}

impl PendingSentence {
    fn finish(self, index: usize) -> Result<Sentence> {
        let labeled = self.labels.iter().filter(|l| l.is_some()).count();
        let labels = if labeled == self.tokens.len() {
            Some(self.labels.into_iter().map(Option::unwrap).collect())
        } else if labeled == 0 {
            None
        } else {
            return Err(Error::BadSentence {
                index,
                message: "mixed labeled and unlabeled token lines".into(),
            });
        };
        Ok(Sentence {
            tokens: self.tokens,
            labels,
            visual: self.visual,
        })
    }
}

pub fn parse_corpus_str(
    text: &str,
    expect_visual: bool,
    d_v: Option<usize>,
) -> Result<Vec<Sentence>> {
    let mut sentences = Vec::new();
    let mut pending: Option<PendingSentence> = None;
    let mut pending_visual: Option<Vec<f64>> = None;

    let flush = |pending: &mut Option<PendingSentence>,
                     sentences: &mut Vec<Sentence>|
     -> Result<()> {
        if let Some(p) = pending.take() {
            let index = sentences.len();
            let first_line = p.first_line;
            let sentence = p.finish(index)?;
            if expect_visual && sentence.visual.is_none() {
                return Err(Error::BadSentence {
                    index,
                    message: format!(
                        "missing #visual directive (sentence starting at line {first_line})"
                    ),
                });
            }
            sentences.push(sentence);
        }
        Ok(())
    };

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        let lineno = lineno + 1;
        if line.is_empty() {
            if pending_visual.is_some() {
                return Err(Error::Parse {
                    line: lineno,
                    message: "#visual directive not followed by a token line".into(),
                });
            }
            flush(&mut pending, &mut sentences)?;
            continue;
        }
        if let Some(rest) = line.strip_prefix("#visual\t") {
            if pending.is_some() {
                return Err(Error::Parse {
                    line: lineno,
                    message: "#visual directive must precede the sentence's first token".into(),
                });
            }
            if pending_visual.is_some() {
                return Err(Error::Parse {
                    line: lineno,
                    message: "duplicate #visual directive".into(),
                });
            }
            let mut vec = Vec::new();
            for field in rest.split(' ').filter(|f| !f.is_empty()) {
                let v: f64 = field.parse().map_err(|_| Error::Parse {
                    line: lineno,
                    message: format!("unparseable visual component {field:?}"),
                })?;
                vec.push(v);
            }
            if let Some(d) = d_v {
                if vec.len() != d {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("visual width {} != expected {d}", vec.len()),
                    });
                }
            }
            pending_visual = Some(vec);
            continue;
        }

        let (token, label) = match line.split_once('\t') {
            Some((tok, lab)) => (tok, Some(lab)),
            None => (line, None),
        };
        if token.is_empty() {
            return Err(Error::Parse {
                line: lineno,
                message: "empty token".into(),
            });
        }
        if let Some(lab) = label {
            if label_index(lab).is_none() {
                return Err(Error::UnknownLabel {
                    label: lab.to_string(),
                    line: lineno,
                });
            }
        }
        let p = pending.get_or_insert_with(|| PendingSentence {
            tokens: Vec::new(),
            labels: Vec::new(),
            visual: pending_visual.take(),
            first_line: lineno,
        });
        p.tokens.push(token.to_string());
        p.labels.push(label.map(str::to_string));
    }
    if pending_visual.is_some() {
        return Err(Error::Parse {
            line: text.lines().count(),
            message: "#visual directive at end of file".into(),
        });
    }
    flush(&mut pending, &mut sentences)?;
    Ok(sentences)
}

pub fn parse_corpus(path: &Path, expect_visual: bool, d_v: Option<usize>) -> Result<Vec<Sentence>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus_str(&text, expect_visual, d_v)
}

/// Exact inverse of `parse_corpus_str`. Visual components are printed with
/// 17 significant digits so the round trip is value-exact for f64.
pub fn write_corpus_string(sentences: &[Sentence]) -> Result<String> {
    let mut out = String::new();
    for (index, s) in sentences.iter().enumerate() {
        if s.tokens.is_empty() {
            return Err(Error::BadSentence {
                index,
                message: "empty sentence".into(),
            });
        }
        if let Some(labels) = &s.labels {
            if labels.len() != s.tokens.len() {
                return Err(Error::BadSentence {
                    index,
                    message: "label count != token count".into(),
                });
            }
        }
        if index > 0 {
            out.push('\n');
        }
        if let Some(v) = &s.visual {
            out.push_str("#visual\t");
            for (i, x) in v.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                out.push_str(&format!("{x:.16e}"));
            }
            out.push('\n');
        }
        for (t, token) in s.tokens.iter().enumerate() {
            if token.is_empty() || token.contains('\t') || token.contains('\n') {
                return Err(Error::BadSentence {
                    index,
                    message: format!("token {token:?} contains tab/newline or is empty"),
                });
            }
            if token == "#visual" {
                // reserved directive word
                return Err(Error::BadSentence {
                    index,
                    message: "token collides with the #visual directive".into(),
                });
            }
            out.push_str(token);
            if let Some(labels) = &s.labels {
                out.push('\t');
                out.push_str(&labels[t]);
            }
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn write_corpus(sentences: &[Sentence], path: &Path) -> Result<()> {
    let text = write_corpus_string(sentences)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_two_single_token_sentences() {
        let s = parse_corpus_str("a\tO\n\nb\tB-PER\n", false, None).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].tokens, vec!["a"]);
        assert_eq!(s[0].labels.as_deref(), Some(&["O".to_string()][..]));
        assert_eq!(s[1].labels.as_deref(), Some(&["B-PER".to_string()][..]));
    }

    #[test]
    fn parses_visual_directive() {
        let s = parse_corpus_str("#visual\t0.1 0.2\nx\tO\n", false, Some(2)).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].visual.as_deref(), Some(&[0.1, 0.2][..]));
    }

    #[test]
    fn unknown_label_reports_line() {
        match parse_corpus_str("x\tB-FOO", false, None) {
            Err(Error::UnknownLabel { label, line }) => {
                assert_eq!(label, "B-FOO");
                assert_eq!(line, 1);
            }
            other => panic!("expected unknown label, got {other:?}"),
        }
    }

    #[test]
    fn missing_visual_names_sentence_index() {
        match parse_corpus_str("#visual\t1.0\na\tO\n\nb\tO\n", true, Some(1)) {
            Err(Error::BadSentence { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected bad sentence, got {other:?}"),
        }
    }

    #[test]
    fn wrong_visual_width_rejected() {
        assert!(parse_corpus_str("#visual\t1.0 2.0\na\tO\n", true, Some(3)).is_err());
    }

    #[test]
    fn unlabeled_corpus_parses() {
        let s = parse_corpus_str("hello\nworld\n\nagain\n", false, None).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s[0].labels.is_none());
        assert_eq!(s[0].tokens, vec!["hello", "world"]);
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        assert!(parse_corpus_str("", false, None).unwrap().is_empty());
        assert_eq!(write_corpus_string(&[]).unwrap(), "");
    }

    #[test]
    fn write_rejects_token_with_tab() {
        let s = Sentence {
            tokens: vec!["a\tb".to_string()],
            labels: None,
            visual: None,
        };
        assert!(write_corpus_string(&[s]).is_err());
    }

    #[test]
    fn round_trip_with_visual_is_exact() {
        let sentences = vec![
            Sentence {
                tokens: vec!["one".into(), "two".into()],
                labels: Some(vec!["O".into(), "B-LOC".into()]),
                visual: Some(vec![0.1, -1.0 / 3.0, 1e-17]),
            },
            Sentence {
                tokens: vec!["three".into()],
                labels: Some(vec!["O".into()]),
                visual: Some(vec![2.5, f64::MIN_POSITIVE, 0.0]),
            },
        ];
        let text = write_corpus_string(&sentences).unwrap();
        let back = parse_corpus_str(&text, true, Some(3)).unwrap();
        assert_eq!(back, sentences);
    }

    fn arb_token() -> impl Strategy<Value = String> {
        proptest::string::string_regex("[A-Za-z0-9'.-]{1,8}").unwrap()
    }

    fn arb_sentence() -> impl Strategy<Value = Sentence> {
        (
            proptest::collection::vec(arb_token(), 1..6),
            proptest::option::of(proptest::collection::vec(-1.0e3f64..1.0e3, 3)),
            any::<bool>(),
        )
            .prop_map(|(tokens, visual, labeled)| {
                let labels = labeled.then(|| {
                    tokens
                        .iter()
                        .enumerate()
                        .map(|(i, _)| crate::eval::LABELS[i % 9].to_string())
                        .collect()
                });
                Sentence {
                    tokens,
                    labels,
                    visual,
                }
            })
    }

    proptest! {
        #[test]
        fn parse_inverts_write(sentences in proptest::collection::vec(arb_sentence(), 0..8)) {
            let text = write_corpus_string(&sentences).unwrap();
            let back = parse_corpus_str(&text, false, None).unwrap();
            prop_assert_eq!(back, sentences);
        }
    }
}
