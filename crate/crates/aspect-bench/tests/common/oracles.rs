//! Independent brute-force reference implementations of every metric, used
//! to cross-check the production implementations. These are written for
//! obviousness, not speed: explicit window scans with used-flags instead of
//! count maps, memoized recursion instead of iterative tables, and full
//! enumeration of every maximum token matching instead of branch-and-bound.
//! All results are on the 0–1 scale (pre-scaling).

#![allow(dead_code)]

fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Clipped n-gram overlap counted by marking reference grams used, one
/// candidate gram at a time.
fn clipped_overlap(cand: &[String], refr: &[String], n: usize) -> usize {
    if cand.len() < n || refr.len() < n {
        return 0;
    }
    let n_cand = cand.len() - n + 1;
    let n_ref = refr.len() - n + 1;
    let mut used = vec![false; n_ref];
    let mut overlap = 0;
    for i in 0..n_cand {
        let g = &cand[i..i + n];
        if let Some(k) = (0..n_ref).find(|&k| !used[k] && refr[k..k + n] == *g) {
            used[k] = true;
            overlap += 1;
        }
    }
    overlap
}

pub fn rouge_n_oracle(cand: &[String], refr: &[String], n: usize) -> f64 {
    if cand.len() < n || refr.len() < n {
        return 0.0;
    }
    let overlap = clipped_overlap(cand, refr, n) as f64;
    let p = overlap / (cand.len() - n + 1) as f64;
    let r = overlap / (refr.len() - n + 1) as f64;
    f1(p, r)
}

pub fn rouge_l_oracle(cand: &[String], refr: &[String]) -> f64 {
    fn lcs(a: &[String], b: &[String], i: usize, j: usize, memo: &mut [Option<usize>]) -> usize {
        if i == a.len() || j == b.len() {
            return 0;
        }
        let cell = i * b.len() + j;
        if let Some(v) = memo[cell] {
            return v;
        }
        let v = if a[i] == b[j] {
            1 + lcs(a, b, i + 1, j + 1, memo)
        } else {
            lcs(a, b, i + 1, j, memo).max(lcs(a, b, i, j + 1, memo))
        };
        memo[cell] = Some(v);
        v
    }
    if cand.is_empty() || refr.is_empty() {
        return 0.0;
    }
    let mut memo = vec![None; cand.len() * refr.len()];
    let l = lcs(cand, refr, 0, 0, &mut memo) as f64;
    f1(l / cand.len() as f64, l / refr.len() as f64)
}

pub fn bleu_oracle(cand: &[String], refr: &[String]) -> f64 {
    if cand.is_empty() || refr.is_empty() {
        return 0.0;
    }
    let n_max = 4.min(cand.len());
    let mut product = 1.0f64;
    for n in 1..=n_max {
        let total = (cand.len() - n + 1) as f64;
        let overlap = clipped_overlap(cand, refr, n) as f64;
        let p = if overlap > 0.0 {
            overlap / total
        } else {
            1.0 / (total + 1.0)
        };
        product *= p.powf(1.0 / n_max as f64);
    }
    let bp = if cand.len() < refr.len() {
        (1.0 - refr.len() as f64 / cand.len() as f64).exp()
    } else {
        1.0
    };
    bp * product
}

/// Exhaustive METEOR: the match count is the sum over tokens of
/// min(candidate occurrences, reference occurrences); the chunk count is
/// minimized by enumerating every way those occurrences can pair up.
pub fn meteor_oracle(cand: &[String], refr: &[String]) -> f64 {
    if cand.is_empty() || refr.is_empty() {
        return 0.0;
    }
    let mut entries: Vec<AlignmentEntry> = Vec::new();
    let mut seen: Vec<&String> = Vec::new();
    let mut m = 0usize;
    for t in cand {
        if seen.contains(&t) {
            continue;
        }
        seen.push(t);
        let cs: Vec<usize> = (0..cand.len()).filter(|&i| cand[i] == *t).collect();
        let rs: Vec<usize> = (0..refr.len()).filter(|&j| refr[j] == *t).collect();
        let k = cs.len().min(rs.len());
        if k > 0 {
            m += k;
            entries.push((cs, rs, k));
        }
    }
    if m == 0 {
        return 0.0;
    }
    let mut state = AlignmentState {
        pairs: Vec::with_capacity(m),
        ref_used: vec![false; refr.len()],
        best_chunks: usize::MAX,
        leaves: 0,
    };
    next_token(&entries, &mut state, 0);
    let chunks = state.best_chunks as f64;
    let m = m as f64;
    let p = m / cand.len() as f64;
    let r = m / refr.len() as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    fmean * (1.0 - 0.5 * (chunks / m).powi(3))
}

/// Per shared token: candidate positions, reference positions, and how many
/// occurrences must be matched.
type AlignmentEntry = (Vec<usize>, Vec<usize>, usize);

struct AlignmentState {
    pairs: Vec<(usize, usize)>,
    ref_used: Vec<bool>,
    best_chunks: usize,
    leaves: u64,
}

fn next_token(entries: &[AlignmentEntry], state: &mut AlignmentState, t: usize) {
    if t == entries.len() {
        state.leaves += 1;
        assert!(
            state.leaves <= 50_000_000,
            "alignment enumeration exceeded its safety bound"
        );
        let chunks = state
            .pairs
            .iter()
            .filter(|&&(i, j)| i == 0 || j == 0 || !state.pairs.contains(&(i - 1, j - 1)))
            .count();
        state.best_chunks = state.best_chunks.min(chunks);
        return;
    }
    let k = entries[t].2;
    place(entries, state, t, 0, k);
}

/// Either matches candidate occurrence `cs[ci]` with any free reference
/// occurrence or skips it, recursing until `need` matches are placed.
fn place(entries: &[AlignmentEntry], state: &mut AlignmentState, t: usize, ci: usize, need: usize) {
    if need == 0 {
        next_token(entries, state, t + 1);
        return;
    }
    let (cs, rs, _) = &entries[t];
    if cs.len() - ci < need {
        return;
    }
    for &j in rs {
        if !state.ref_used[j] {
            state.ref_used[j] = true;
            state.pairs.push((cs[ci], j));
            place(entries, state, t, ci + 1, need - 1);
            state.pairs.pop();
            state.ref_used[j] = false;
        }
    }
    place(entries, state, t, ci + 1, need);
}

/// Closed-form similarity score under an exact-match kernel (distinct
/// tokens orthogonal): precision is the fraction of candidate tokens
/// present anywhere in the reference, recall the mirror image.
pub fn exact_kernel_bert_oracle(cand: &[String], refr: &[String]) -> (f64, f64, f64) {
    let p = cand.iter().filter(|t| refr.contains(t)).count() as f64 / cand.len() as f64;
    let r = refr.iter().filter(|t| cand.contains(t)).count() as f64 / refr.len() as f64;
    (p, r, f1(p, r))
}

/// Greedy max-cosine similarity score computed with plain nested loops over
/// vectors fetched from the same provider the implementation uses.
pub fn greedy_bert_oracle(
    cand: &[String],
    refr: &[String],
    provider: &dyn aspect_bench::metrics::embedding::EmbeddingProvider,
) -> (f64, f64, f64) {
    let cv = provider.embed(cand).expect("embed candidate");
    let rv = provider.embed(refr).expect("embed reference");
    let dot = |a: &[f64], b: &[f64]| -> f64 {
        let mut sum = 0.0;
        for i in 0..a.len() {
            sum += a[i] * b[i];
        }
        sum.clamp(-1.0, 1.0)
    };
    let side = |rows: &[Vec<f64>], cols: &[Vec<f64>]| -> f64 {
        let mut total = 0.0;
        for r in rows {
            let mut best = f64::NEG_INFINITY;
            for c in cols {
                let s = dot(r, c);
                if s > best {
                    best = s;
                }
            }
            total += best;
        }
        (total / rows.len() as f64).max(0.0)
    };
    let p = side(&cv, &rv);
    let r = side(&rv, &cv);
    (p, r, f1(p, r))
}
