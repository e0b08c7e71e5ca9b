//! Patch canonicalization, equivalence against the gold fix, and majority
//! voting over patch samples.
//!
//! Correctness is exact canonical-token match against the dataset's fixed
//! code; no compilation or test execution.

use serde::{Deserialize, Serialize};

use crate::corpus::normalize;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patch {
    pub raw: String,
    pub canonical: String,
    /// (task id, sample index)
    pub origin: (String, usize),
}

impl Patch {
    pub fn new(raw: &str, task_id: &str, sample_index: usize) -> Self {
        Patch {
            raw: raw.to_string(),
            canonical: normalize(raw),
            origin: (task_id.to_string(), sample_index),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub correct: bool,
    pub matched_sample_indices: Vec<usize>,
    pub majority_patch: Patch,
    pub majority_correct: bool,
}

/// True iff the candidate's canonical form equals the normalized gold
/// text. Equality of canonical forms, so symmetric and transitive.
pub fn equivalent(candidate: &Patch, gold: &str) -> bool {
    candidate.canonical == normalize(gold)
}

/// The patch whose canonical form occurs most often; ties break to the
/// smallest first-occurrence sample index, and the representative is the
/// earliest raw member of the winning class.
pub fn majority_patch(samples: &[Patch]) -> Result<Patch> {
    if samples.is_empty() {
        return Err(Error::Precondition(
            "majority_patch needs at least one sample".into(),
        ));
    }
    // (canonical, count, first occurrence index) in first-seen order
    let mut classes: Vec<(&str, usize, usize)> = Vec::new();
    for (i, p) in samples.iter().enumerate() {
        match classes.iter_mut().find(|(c, _, _)| *c == p.canonical) {
            Some(entry) => entry.1 += 1,
            None => classes.push((&p.canonical, 1, i)),
        }
    }
    let &(_, _, first) = classes
        .iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2)))
        .expect("samples non-empty");
    Ok(samples[first].clone())
}

/// Judge a sample set against the gold fix: `correct` iff any sample
/// matches; `majority_correct` iff the plurality patch matches.
pub fn judge(samples: &[Patch], gold: &str) -> Result<Verdict> {
    let majority = majority_patch(samples)?;
    let gold_canonical = normalize(gold);
    let matched: Vec<usize> = samples
        .iter()
        .enumerate()
        .filter(|(_, p)| p.canonical == gold_canonical)
        .map(|(i, _)| i)
        .collect();
    Ok(Verdict {
        correct: !matched.is_empty(),
        majority_correct: majority.canonical == gold_canonical,
        matched_sample_indices: matched,
        majority_patch: majority,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn patch(raw: &str, i: usize) -> Patch {
        Patch::new(raw, "t", i)
    }

    #[test]
    fn equivalent_ignores_whitespace() {
        assert!(equivalent(
            &patch("player . release () ;", 0),
            "player.release();"
        ));
    }

    #[test]
    fn equivalent_rejects_identifier_change() {
        assert!(!equivalent(
            &patch("player.detach();", 0),
            "player.release();"
        ));
    }

    #[test]
    fn equivalent_ignores_trailing_comment() {
        assert!(equivalent(
            &patch("player.release(); // done", 0),
            "player.release();"
        ));
    }

    #[test]
    fn majority_plurality() {
        let samples = vec![patch("p();", 0), patch("p() ;", 1), patch("q();", 2)];
        assert_eq!(majority_patch(&samples).unwrap().canonical, "p ( ) ;");
    }

    #[test]
    fn majority_tie_breaks_to_earliest_first_occurrence() {
        let samples = vec![patch("p();", 0), patch("q();", 1)];
        let m = majority_patch(&samples).unwrap();
        assert_eq!(m.canonical, "p ( ) ;");
        assert_eq!(m.origin.1, 0);
    }

    #[test]
    fn majority_empty_is_precondition_error() {
        assert!(majority_patch(&[]).is_err());
    }

    #[test]
    fn judge_plurality_vs_membership() {
        let gold = "g();";
        let v = judge(
            &[patch("g();", 0), patch("w();", 1), patch("w();", 2)],
            gold,
        )
        .unwrap();
        assert!(v.correct);
        assert!(!v.majority_correct);
        assert_eq!(v.matched_sample_indices, vec![0]);

        let v = judge(
            &[patch("g();", 0), patch("g();", 1), patch("w();", 2)],
            gold,
        )
        .unwrap();
        assert!(v.correct);
        assert!(v.majority_correct);

        let v = judge(&[patch("a();", 0), patch("b();", 1)], gold).unwrap();
        assert!(!v.correct);
        assert!(!v.majority_correct);
        assert!(v.matched_sample_indices.is_empty());
    }

    /// Independent histogram-and-argmax oracle for majority voting:
    /// count canonical classes, pick max count, break ties by smallest
    /// first-occurrence index.
    fn majority_oracle(samples: &[Patch]) -> String {
        let mut counts: Vec<(String, usize, usize)> = Vec::new();
        for (i, p) in samples.iter().enumerate() {
            match counts.iter_mut().find(|(c, _, _)| *c == p.canonical) {
                Some(e) => e.1 += 1,
                None => counts.push((p.canonical.clone(), 1, i)),
            }
        }
        let mut best: Option<&(String, usize, usize)> = None;
        for entry in &counts {
            best = match best {
                None => Some(entry),
                Some(b) if entry.1 > b.1 || (entry.1 == b.1 && entry.2 < b.2) => Some(entry),
                Some(b) => Some(b),
            };
        }
        best.unwrap().0.clone()
    }

    proptest! {
        #[test]
        fn majority_matches_histogram_oracle(raws in prop::collection::vec("[a-d]{1,2}", 1..30)) {
            let samples: Vec<Patch> =
                raws.iter().enumerate().map(|(i, r)| patch(r, i)).collect();
            prop_assert_eq!(majority_patch(&samples).unwrap().canonical, majority_oracle(&samples));
        }

        #[test]
        fn majority_correct_implies_correct(
            raws in prop::collection::vec("[a-c]", 1..20),
            gold in "[a-c]",
        ) {
            let samples: Vec<Patch> =
                raws.iter().enumerate().map(|(i, r)| patch(r, i)).collect();
            let v = judge(&samples, &gold).unwrap();
            prop_assert!(!v.majority_correct || v.correct);
            prop_assert_eq!(v.correct, !v.matched_sample_indices.is_empty());
        }
    }
}
