//! Direct point semantics over a finite timed word, evaluated recursively on
//! the formula tree. Independent of the automaton construction and used to
//! cross-check it.

use super::{check_word, Fragment, MitlFormula, TimedWord, WordError};

fn holds(f: &MitlFormula, w: &TimedWord, i: usize) -> bool {
    match f {
        MitlFormula::Atom(a) => w[i].0.contains(a),
        MitlFormula::Not(x) => !holds(x, w, i),
        MitlFormula::And(a, b) => holds(a, w, i) && holds(b, w, i),
        MitlFormula::Or(a, b) => holds(a, w, i) || holds(b, w, i),
        MitlFormula::Next(iv, x) => {
            i + 1 < w.len() && iv.contains(&(w[i + 1].1 - w[i].1)) && holds(x, w, i + 1)
        }
        MitlFormula::Eventually(iv, x) => {
            (i..w.len()).any(|j| iv.contains(&(w[j].1 - w[i].1)) && holds(x, w, j))
        }
        // Letters after the last one repeat it, so checking the word covers
        // the suffix for literal bodies.
        MitlFormula::Always(iv, x) => {
            (i..w.len()).all(|j| !iv.contains(&(w[j].1 - w[i].1)) || holds(x, w, j))
        }
        MitlFormula::Until(iv, a, b) => (i..w.len()).any(|j| {
            iv.contains(&(w[j].1 - w[i].1)) && holds(b, w, j) && (i..j).all(|k| holds(a, w, k))
        }),
    }
}

/// Satisfaction at position 0. The empty word satisfies exactly the
/// formulas without eventualities.
pub fn brute_force_satisfies(fragment: &Fragment, word: &TimedWord) -> Result<bool, WordError> {
    check_word(word)?;
    if word.is_empty() {
        return Ok(fragment.conjuncts.iter().all(|c| !c.is_eventuality()));
    }
    Ok(match fragment.to_formula() {
        Some(f) => holds(&f, word, 0),
        None => true,
    })
}
