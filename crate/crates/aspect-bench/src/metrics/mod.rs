//! From-scratch implementations of the six traditional summarization
//! metrics: ROUGE-1, ROUGE-2, ROUGE-L, BLEU, METEOR, and BERTScore.
//!
//! All scores live in `[0, 100]`. Conventions, chosen once and tested
//! against independent brute-force oracles:
//!
//! * **ROUGE-N** — clipped n-gram overlap, reported as F1.
//! * **ROUGE-L** — longest common subsequence, reported as F1.
//! * **BLEU** — sentence-level, uniform weights over n = 1..min(4, |cand|),
//!   clipped modified precision with add-one smoothing for zero counts, and
//!   the standard brevity penalty. Short references make unsmoothed 4-gram
//!   BLEU collapse to 0, hence the smoothing.
//! * **METEOR** — exact-match alignment only (no stemming or synonymy): the
//!   alignment maximizes matches, then minimizes chunks; fragmentation
//!   penalty `0.5·(chunks/m)³` on the `10PR/(R+9P)` harmonic mean.
//! * **BERTScore** — greedy max-cosine matching over per-token embeddings
//!   from a pluggable [`embedding::EmbeddingProvider`]; no idf weighting, no
//!   baseline rescaling. Negative similarity aggregates are floored at 0 so
//!   scores stay on the shared scale regardless of provider geometry.
//!
//! Either side empty (after tokenization) scores 0 on every metric; this
//! keeps [`score_all`] total over arbitrary generated text.

pub mod embedding;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use embedding::EmbeddingProvider;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("bert_score requires non-empty token sequences")]
    EmptySequence,
    #[error("embedding provider failed: {0}")]
    Provider(#[from] embedding::EmbeddingError),
}

/// The six traditional metric values for one candidate/reference pair,
/// on the 0–100 scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricScores {
    pub r1: f64,
    pub r2: f64,
    pub rl: f64,
    pub mt: f64,
    pub bl: f64,
    pub bert_p: f64,
    pub bert_r: f64,
    pub bert_f1: f64,
}

impl MetricScores {
    pub fn zero() -> Self {
        MetricScores {
            r1: 0.0,
            r2: 0.0,
            rl: 0.0,
            mt: 0.0,
            bl: 0.0,
            bert_p: 0.0,
            bert_r: 0.0,
            bert_f1: 0.0,
        }
    }
}

/// Metric tokenization: lowercase, then split on every maximal run of
/// non-alphanumeric characters. Digits are kept. Separate from the
/// whitespace rule used for corpus statistics.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn sorted_windows<'a>(tokens: &'a [String], n: usize) -> Vec<&'a [String]> {
    let mut grams: Vec<&[String]> = if tokens.len() >= n {
        tokens.windows(n).collect()
    } else {
        Vec::new()
    };
    grams.sort_unstable();
    grams
}

fn run_len(grams: &[&[String]], start: usize) -> usize {
    grams[start..]
        .iter()
        .take_while(|g| **g == grams[start])
        .count()
}

/// Clipped n-gram overlap: each candidate n-gram counts at most as often as
/// it appears in the reference. Counted by merging the two sorted window
/// lists and taking the smaller run length wherever they agree.
fn clipped_overlap(cand: &[String], reference: &[String], n: usize) -> u32 {
    let cgrams = sorted_windows(cand, n);
    let rgrams = sorted_windows(reference, n);
    let mut overlap = 0u32;
    let (mut i, mut j) = (0, 0);
    while i < cgrams.len() && j < rgrams.len() {
        match cgrams[i].cmp(rgrams[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                let ci = run_len(&cgrams, i);
                let rj = run_len(&rgrams, j);
                overlap += ci.min(rj) as u32;
                i += ci;
                j += rj;
            }
        }
    }
    overlap
}

/// ROUGE-N: clipped n-gram F1 × 100. Returns 0 when either side has no
/// n-grams of order `n`.
pub fn rouge_n(cand: &[String], reference: &[String], n: usize) -> f64 {
    assert!(n >= 1, "rouge_n: n must be at least 1");
    let cand_total = cand.len().saturating_sub(n - 1);
    let ref_total = reference.len().saturating_sub(n - 1);
    if cand_total == 0 || ref_total == 0 {
        return 0.0;
    }
    let overlap = clipped_overlap(cand, reference, n) as f64;
    let p = overlap / cand_total as f64;
    let r = overlap / ref_total as f64;
    f1(p, r) * 100.0
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut row = vec![0usize; b.len() + 1];
    for ai in a {
        for (j, bj) in b.iter().enumerate() {
            row[j + 1] = if ai == bj {
                prev[j] + 1
            } else {
                prev[j + 1].max(row[j])
            };
        }
        std::mem::swap(&mut prev, &mut row);
    }
    prev[b.len()]
}

/// ROUGE-L: longest-common-subsequence F1 × 100. Returns 0 when either side
/// is empty.
pub fn rouge_l(cand: &[String], reference: &[String]) -> f64 {
    if cand.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(cand, reference) as f64;
    let p = lcs / cand.len() as f64;
    let r = lcs / reference.len() as f64;
    f1(p, r) * 100.0
}

/// Sentence-level BLEU × 100 with uniform weights over n = 1..min(max_n,
/// |cand|), add-one smoothing for zero clipped counts, and brevity penalty
/// `exp(1 − |ref|/|cand|)` when the candidate is shorter. Returns 0 when
/// either side is empty.
pub fn bleu(cand: &[String], reference: &[String], max_n: usize) -> f64 {
    assert!(max_n >= 1, "bleu: max_n must be at least 1");
    if cand.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let n_max = max_n.min(cand.len());
    let mut log_sum = 0.0;
    for n in 1..=n_max {
        let total = (cand.len() - n + 1) as f64;
        let clipped = clipped_overlap(cand, reference, n) as f64;
        let p = if clipped > 0.0 { clipped / total } else { 1.0 / (total + 1.0) };
        log_sum += p.ln();
    }
    let geo_mean = (log_sum / n_max as f64).exp();
    let bp = if cand.len() < reference.len() {
        (1.0 - reference.len() as f64 / cand.len() as f64).exp()
    } else {
        1.0
    };
    bp * geo_mean * 100.0
}

/// METEOR × 100: exact-match alignment maximizing matches then minimizing
/// chunks; `Fmean = 10PR/(R+9P)`, `penalty = 0.5·(chunks/m)³`,
/// `score = Fmean·(1−penalty)`. Returns 0 when there are no matches.
pub fn meteor(cand: &[String], reference: &[String]) -> f64 {
    if cand.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let (m, chunks) = align(cand, reference);
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / cand.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    fmean * (1.0 - penalty) * 100.0
}

/// Computes the METEOR alignment: returns `(matches, chunks)` where
/// `matches` is the size of a maximum exact-match matching and `chunks` is
/// the minimum possible number of contiguous matched runs over all maximum
/// matchings. The chunk minimization is an exact branch-and-bound search: a
/// greedy alignment seeds the upper bound, candidates extending the current
/// diagonal run are explored first, and branches that cannot beat the best
/// known chunk count are cut.
fn align(cand: &[String], reference: &[String]) -> (usize, usize) {
    // Intern tokens so the search compares small integers.
    let mut vocab: Vec<&str> = cand
        .iter()
        .chain(reference.iter())
        .map(String::as_str)
        .collect();
    vocab.sort_unstable();
    vocab.dedup();
    let id = |t: &String| vocab.binary_search(&t.as_str()).expect("token interned");
    let ct: Vec<usize> = cand.iter().map(id).collect();
    let rt: Vec<usize> = reference.iter().map(id).collect();
    let n_tokens = vocab.len();

    let mut cand_count = vec![0u32; n_tokens];
    let mut ref_count = vec![0u32; n_tokens];
    for &w in &ct {
        cand_count[w] += 1;
    }
    for &w in &rt {
        ref_count[w] += 1;
    }
    let need: Vec<u32> = (0..n_tokens)
        .map(|w| cand_count[w].min(ref_count[w]))
        .collect();
    let m: u32 = need.iter().sum();
    if m == 0 {
        return (0, 0);
    }

    let mut ref_positions: Vec<Vec<usize>> = vec![Vec::new(); n_tokens];
    for (j, &w) in rt.iter().enumerate() {
        ref_positions[w].push(j);
    }

    let upper = greedy_chunks(&ct, &rt, &ref_positions, &need, &cand_count);
    let mut search = ChunkSearch {
        ct: &ct,
        rt: &rt,
        ref_positions: &ref_positions,
        ref_used: vec![false; rt.len()],
        need,
        avail: cand_count,
        remaining: m,
        best: upper,
    };
    search.dfs(0, None, 0);
    (m as usize, search.best as usize)
}

/// Eagerly matches every required occurrence left to right, preferring the
/// ref position that extends the current run. Always produces a maximum
/// matching; its chunk count seeds the branch-and-bound upper bound.
fn greedy_chunks(
    ct: &[usize],
    rt: &[usize],
    ref_positions: &[Vec<usize>],
    need: &[u32],
    avail: &[u32],
) -> u32 {
    let mut need = need.to_vec();
    let mut avail = avail.to_vec();
    let mut ref_used = vec![false; rt.len()];
    let mut chunks = 0u32;
    let mut prev: Option<usize> = None;
    for &w in ct {
        avail[w] -= 1;
        if need[w] == 0 {
            prev = None;
            continue;
        }
        let diagonal = prev
            .map(|q| q + 1)
            .filter(|&j| j < rt.len() && rt[j] == w && !ref_used[j]);
        let j = diagonal.or_else(|| {
            ref_positions[w].iter().copied().find(|&j| !ref_used[j])
        });
        match j {
            Some(j) => {
                if prev != Some(j.wrapping_sub(1)) {
                    chunks += 1;
                }
                ref_used[j] = true;
                need[w] -= 1;
                prev = Some(j);
            }
            None => prev = None,
        }
    }
    chunks
}

struct ChunkSearch<'a> {
    ct: &'a [usize],
    rt: &'a [usize],
    ref_positions: &'a [Vec<usize>],
    ref_used: Vec<bool>,
    /// Remaining required matches per token.
    need: Vec<u32>,
    /// Candidate occurrences (current position included) still ahead, per token.
    avail: Vec<u32>,
    remaining: u32,
    best: u32,
}

impl ChunkSearch<'_> {
    fn dfs(&mut self, i: usize, prev: Option<usize>, chunks: u32) {
        // Chunks never decrease, so equalling the best already cannot improve.
        if chunks >= self.best {
            return;
        }
        if self.remaining == 0 {
            self.best = chunks;
            return;
        }
        // Once the run is broken the next match must open a new chunk.
        if prev.is_none() && chunks + 1 >= self.best {
            return;
        }
        if i == self.ct.len() {
            return; // infeasible branch; the skip rule prevents reaching here
        }
        let w = self.ct[i];
        self.avail[w] -= 1;

        if self.need[w] > 0 {
            let positions = self.ref_positions; // shares the outer borrow, not &self
            // Diagonal continuation first: it is the only zero-cost move.
            let diagonal = prev
                .map(|q| q + 1)
                .filter(|&j| j < self.rt.len() && self.rt[j] == w && !self.ref_used[j]);
            if let Some(j) = diagonal {
                self.ref_used[j] = true;
                self.need[w] -= 1;
                self.remaining -= 1;
                self.dfs(i + 1, Some(j), chunks);
                self.remaining += 1;
                self.need[w] += 1;
                self.ref_used[j] = false;
            }
            for idx in 0..positions[w].len() {
                let j = positions[w][idx];
                if self.ref_used[j] || Some(j) == diagonal {
                    continue;
                }
                self.ref_used[j] = true;
                self.need[w] -= 1;
                self.remaining -= 1;
                self.dfs(i + 1, Some(j), chunks + 1);
                self.remaining += 1;
                self.need[w] += 1;
                self.ref_used[j] = false;
            }
        }

        // Skip this occurrence if enough later occurrences remain to cover
        // the outstanding need.
        if self.avail[w] >= self.need[w] {
            self.dfs(i + 1, None, chunks);
        }
        self.avail[w] += 1;
    }
}

/// BERTScore: precision/recall/F1 × 100 from greedy max-similarity matching.
/// Errors on empty input (use [`score_all`] for the total variant).
pub fn bert_score(
    cand: &[String],
    reference: &[String],
    provider: &dyn EmbeddingProvider,
) -> Result<(f64, f64, f64), MetricError> {
    if cand.is_empty() || reference.is_empty() {
        return Err(MetricError::EmptySequence);
    }
    let cand_vecs = provider.embed(cand)?;
    let ref_vecs = provider.embed(reference)?;
    let sim = |a: &[f64], b: &[f64]| -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        dot.clamp(-1.0, 1.0)
    };
    let best_against = |rows: &[Vec<f64>], cols: &[Vec<f64>]| -> f64 {
        let sum: f64 = rows
            .iter()
            .map(|r| {
                cols.iter()
                    .map(|c| sim(r, c))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .sum();
        (sum / rows.len() as f64).max(0.0)
    };
    let p = best_against(&cand_vecs, &ref_vecs);
    let r = best_against(&ref_vecs, &cand_vecs);
    Ok((p * 100.0, r * 100.0, f1(p, r) * 100.0))
}

/// Tokenizes both texts once and computes every metric. Total over
/// arbitrary text: either side tokenizing to nothing yields all zeros.
pub fn score_all(
    cand_text: &str,
    ref_text: &str,
    provider: &dyn EmbeddingProvider,
) -> Result<MetricScores, MetricError> {
    let cand = tokenize(cand_text);
    let reference = tokenize(ref_text);
    if cand.is_empty() || reference.is_empty() {
        return Ok(MetricScores::zero());
    }
    let (bert_p, bert_r, bert_f1) = bert_score(&cand, &reference, provider)?;
    Ok(MetricScores {
        r1: rouge_n(&cand, &reference, 1),
        r2: rouge_n(&cand, &reference, 2),
        rl: rouge_l(&cand, &reference),
        mt: meteor(&cand, &reference),
        bl: bleu(&cand, &reference, 4),
        bert_p,
        bert_r,
        bert_f1,
    })
}
