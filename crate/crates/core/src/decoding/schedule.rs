//! Closed-form iteration schedules and length selection.

/// Number of tokens re-masked at iteration `t` (1-based) of `total` mask-predict
/// iterations: `max(⌊n·(T−t+1)/T⌋, 1)`.
pub fn mask_count(n: usize, t: usize, total: usize) -> usize {
    assert!(t >= 1 && t <= total, "iteration {t} outside 1..={total}");
    (n * (total - t + 1) / total).max(1)
}

pub fn mask_schedule(n: usize, total: usize) -> Vec<usize> {
    (1..=total).map(|t| mask_count(n, t, total)).collect()
}

/// Iterations needed to commit `n − u` tokens `q` at a time.
pub fn iteration_count(n: usize, u: usize, q: usize) -> usize {
    assert!(q >= 1 && u <= n);
    (n - u).div_ceil(q)
}

/// Tokens committed per iteration when `remaining` tokens must be placed in at
/// most `total` iterations: iteration `t` commits `⌈r_t/(T−t+1)⌉` of the
/// `r_t` still open.
pub fn fixed_commit_counts(remaining: usize, total: usize) -> Vec<usize> {
    assert!(total >= 1);
    let mut left = remaining;
    let mut out = Vec::new();
    for t in 1..=total {
        if left == 0 {
            break;
        }
        let k = left.div_ceil(total - t + 1);
        out.push(k);
        left -= k;
    }
    out
}

/// Top-`beam` lengths by probability among `min_len..=N_max`; `probs[j]` is the
/// probability of length `j + 1`. Ties prefer the shorter length.
pub fn length_beam(probs: &[f64], beam: usize, min_len: usize) -> Vec<usize> {
    let mut lengths: Vec<usize> = (min_len.max(1)..=probs.len()).collect();
    lengths.sort_by(|&a, &b| probs[b - 1].total_cmp(&probs[a - 1]).then(a.cmp(&b)));
    lengths.truncate(beam);
    lengths
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_examples() {
        assert_eq!(mask_schedule(7, 5), vec![7, 5, 4, 2, 1]);
        assert_eq!(mask_schedule(7, 3), vec![7, 4, 2]);
        assert_eq!(mask_schedule(7, 1), vec![7]);
        assert_eq!(iteration_count(7, 3, 2), 2);
        assert_eq!(iteration_count(7, 3, 9), 1);
        assert_eq!(iteration_count(7, 7, 1), 0);
        assert_eq!(fixed_commit_counts(7, 3), vec![3, 2, 2]);
        assert_eq!(fixed_commit_counts(2, 5), vec![1, 1]);
    }

    #[test]
    fn length_beam_rules() {
        let uniform = vec![0.05; 20];
        assert_eq!(length_beam(&uniform, 6, 4), vec![4, 5, 6, 7, 8, 9]);
        let mut peaked = vec![0.01; 20];
        peaked[2] = 0.8;
        peaked[9] = 0.05;
        assert_eq!(length_beam(&peaked, 1, 4), vec![10]);
        assert_eq!(length_beam(&vec![0.2; 5], 6, 4), vec![4, 5]);
    }
}
