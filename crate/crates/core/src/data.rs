//! Induction-head task data.
//!
//! In last-token mode a random earlier token is copied to the final
//! position and the single target is the token that followed it. In
//! full-sequence mode every position whose token occurred earlier gets the
//! token following its most recent earlier occurrence as target; first
//! occurrences carry no target.

use crate::model::{ModelError, SequenceBatch};
use crate::rng::SeededRng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("sequence length must be at least 3, got {0}")]
    LengthTooShort(usize),
    #[error("vocabulary must have at least 2 tokens, got {0}")]
    VocabTooSmall(usize),
    #[error("batch must contain at least one sequence")]
    EmptyBatch,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskMode {
    LastToken,
    FullSequence,
}

/// Targets for one token sequence under the most-recent-occurrence rule.
pub fn full_sequence_targets(tokens: &[usize], vocab: usize) -> Vec<Option<usize>> {
    let mut last_seen: Vec<Option<usize>> = vec![None; vocab];
    let mut targets = Vec::with_capacity(tokens.len());
    for (t, &tok) in tokens.iter().enumerate() {
        targets.push(last_seen[tok].map(|j| tokens[j + 1]));
        last_seen[tok] = Some(t);
    }
    targets
}

pub fn generate_induction_batch(
    rng: &mut SeededRng,
    vocab: usize,
    batch: usize,
    len: usize,
    mode: TaskMode,
) -> Result<SequenceBatch, DataError> {
    if len < 3 {
        return Err(DataError::LengthTooShort(len));
    }
    if vocab < 2 {
        return Err(DataError::VocabTooSmall(vocab));
    }
    if batch == 0 {
        return Err(DataError::EmptyBatch);
    }
    let mut all_tokens = Vec::with_capacity(batch);
    let mut all_targets = Vec::with_capacity(batch);
    for _ in 0..batch {
        let mut tokens: Vec<usize> = (0..len).map(|_| rng.below(vocab)).collect();
        let targets = match mode {
            TaskMode::LastToken => {
                let i = rng.below(len - 1);
                tokens[len - 1] = tokens[i];
                let mut targets = vec![None; len];
                targets[len - 1] = Some(tokens[i + 1]);
                targets
            }
            TaskMode::FullSequence => full_sequence_targets(&tokens, vocab),
        };
        all_tokens.push(tokens);
        all_targets.push(targets);
    }
    Ok(SequenceBatch::new(all_tokens, all_targets, vocab)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn abca_final_position_targets_b() {
        // Sequence a b c a: the repeated a at the end retrieves the token
        // that followed its earlier occurrence, b.
        let targets = full_sequence_targets(&[0, 1, 2, 0], 4);
        assert_eq!(targets[3], Some(1));
    }

    #[test]
    fn last_token_target_follows_a_matching_occurrence() {
        let mut rng = SeededRng::new(41);
        for _ in 0..50 {
            let batch = generate_induction_batch(&mut rng, 4, 1, 12, TaskMode::LastToken).unwrap();
            let tokens = batch.tokens(0);
            let target = batch.targets(0)[11].unwrap();
            let last = tokens[11];
            let witnessed = (0..11).any(|j| tokens[j] == last && tokens[j + 1] == target);
            assert!(witnessed, "target {target} not justified by {tokens:?}");
        }
    }

    #[test]
    fn abab_full_sequence_targets() {
        // a b a b: position 3 (second a) targets b, position 4 (second b)
        // targets a.
        let targets = full_sequence_targets(&[0, 1, 0, 1], 4);
        assert_eq!(targets, vec![None, None, Some(1), Some(0)]);
    }

    #[test]
    fn adjacent_repeat_targets_itself() {
        // a a: the second a's most recent earlier occurrence is index 0,
        // whose following token is the second a itself.
        let targets = full_sequence_targets(&[2, 2, 1], 4);
        assert_eq!(targets, vec![None, Some(2), None]);
    }

    #[test]
    fn last_token_batch_has_single_target() {
        let mut rng = SeededRng::new(5);
        let batch = generate_induction_batch(&mut rng, 4, 8, 16, TaskMode::LastToken).unwrap();
        for b in 0..batch.len() {
            let targets = batch.targets(b);
            assert_eq!(targets.iter().flatten().count(), 1);
            assert!(targets[15].is_some());
            // The final token repeats some earlier token.
            let tokens = batch.tokens(b);
            assert!(tokens[..15].contains(&tokens[15]));
        }
    }

    #[test]
    fn long_sequences_have_under_one_percent_sentinels() {
        let mut rng = SeededRng::new(6);
        let mut sentinel = 0usize;
        let mut total = 0usize;
        for _ in 0..20 {
            let batch =
                generate_induction_batch(&mut rng, 4, 1, 1000, TaskMode::FullSequence).unwrap();
            sentinel += batch.targets(0).iter().filter(|t| t.is_none()).count();
            total += 1000;
        }
        assert!((sentinel as f64) < 0.01 * total as f64, "{sentinel}/{total}");
    }

    #[test]
    fn rejects_invalid_dims() {
        let mut rng = SeededRng::new(7);
        assert!(matches!(
            generate_induction_batch(&mut rng, 4, 1, 2, TaskMode::FullSequence),
            Err(DataError::LengthTooShort(2))
        ));
        assert!(matches!(
            generate_induction_batch(&mut rng, 1, 1, 8, TaskMode::FullSequence),
            Err(DataError::VocabTooSmall(1))
        ));
        assert!(matches!(
            generate_induction_batch(&mut rng, 4, 0, 8, TaskMode::FullSequence),
            Err(DataError::EmptyBatch)
        ));
    }
}
