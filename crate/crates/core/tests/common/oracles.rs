//! Brute-force re-implementations used as oracles. They recompute every
//! quantity from raw vectors and search over all split points instead of
//! scanning once.

use simulcfm::domain::TokenId;

/// Largest stable length `k` such that `ok(i)` holds for every `i < k` and
/// no token before `k` is EOS.
fn longest_valid(tokens: &[TokenId], eos: TokenId, ok: impl Fn(usize) -> bool) -> usize {
    (0..=tokens.len())
        .rev()
        .find(|&k| (0..k).all(|i| ok(i) && tokens[i] != eos))
        .unwrap_or(0)
}

pub fn local_agreement(prev: &[TokenId], curr: &[TokenId], eos: TokenId) -> usize {
    (0..=curr.len())
        .rev()
        .find(|&k| k <= prev.len() && prev[..k] == curr[..k] && !curr[..k].contains(&eos))
        .unwrap_or(0)
}

pub fn hold_n(curr: &[TokenId], n: usize, eos: TokenId) -> usize {
    longest_valid(curr, eos, |i| i + n < curr.len())
}

fn first_argmax(w: &[f64]) -> Option<usize> {
    let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    w.iter().position(|&x| x == max)
}

pub fn alignatt(curr: &[TokenId], rows: &[Vec<f64>], f: usize, frames: usize, eos: TokenId) -> usize {
    longest_valid(curr, eos, |i| {
        if f == 0 {
            return true;
        }
        match first_argmax(&rows[i]) {
            // frame index j lies in the window when j + f >= frames
            Some(j) => j + f < frames,
            None => false,
        }
    })
}

pub fn edatt(curr: &[TokenId], rows: &[Vec<f64>], alpha: f64, lambda: usize, eos: TokenId) -> usize {
    longest_valid(curr, eos, |i| {
        let n = rows[i].len();
        let mut mass = 0.0;
        for (j, w) in rows[i].iter().enumerate() {
            if j + lambda >= n {
                mass += w;
            }
        }
        mass <= alpha
    })
}

/// `y` is plausible when no token beats it by more than a factor `1/beta`.
pub fn plausible(p: &[f64], beta: f64) -> Vec<TokenId> {
    (0..p.len())
        .filter(|&y| p.iter().all(|&w| p[y] >= beta * w))
        .map(|y| y as TokenId)
        .collect()
}
