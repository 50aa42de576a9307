//! Slow, direct re-statements of library rules used as test oracles.

/// Nucleus support by scanning every prefix size: the smallest prefix of the
/// top-k (renormalised) whose mass reaches `p`, widened to boundary ties.
pub fn nucleus_brute(probs: &[f64], k: usize, p: f64) -> Vec<(usize, f64)> {
    let mut ranked: Vec<(usize, f64)> = probs.iter().copied().enumerate().collect();
    // selection sort: independent of the library's sort_by
    for i in 0..ranked.len() {
        let mut best = i;
        for j in i + 1..ranked.len() {
            if ranked[j].1 > ranked[best].1 || (ranked[j].1 == ranked[best].1 && ranked[j].0 < ranked[best].0) {
                best = j;
            }
        }
        ranked.swap(i, best);
    }
    let top = &ranked[..k.min(ranked.len())];
    let total: f64 = top.iter().map(|t| t.1).sum();
    let mut size = top.len();
    for m in 1..=top.len() {
        let mass: f64 = top[..m].iter().map(|t| t.1 / total).sum();
        if mass >= p - 1e-12 {
            size = m;
            break;
        }
    }
    let edge = top[size - 1].1;
    let kept: Vec<(usize, f64)> = top.iter().enumerate().filter(|(i, t)| *i < size || t.1 == edge).map(|(_, t)| *t).collect();
    let z: f64 = kept.iter().map(|t| t.1).sum();
    kept.into_iter().map(|(i, v)| (i, v / z)).collect()
}

fn grams(words: &[String], n: usize) -> Vec<Vec<String>> {
    if words.len() < n {
        return Vec::new();
    }
    (0..=words.len() - n).map(|i| words[i..i + n].to_vec()).collect()
}

fn count(list: &[Vec<String>], g: &[String]) -> usize {
    list.iter().filter(|x| x.as_slice() == g).count()
}

fn distinct(list: &[Vec<String>]) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = Vec::new();
    for g in list {
        if !out.contains(g) {
            out.push(g.clone());
        }
    }
    out
}

/// BLEU by linear scans over n-gram lists.
pub fn bleu_brute(pairs: &[(Vec<String>, Vec<Vec<String>>)], n: usize) -> f64 {
    let mut log_sum = 0.0;
    let (mut c, mut r) = (0.0, 0.0);
    for (cand, refs) in pairs {
        c += cand.len() as f64;
        let mut best: Option<usize> = None;
        for rf in refs {
            let d = |l: usize| (l as f64 - cand.len() as f64).abs();
            best = match best {
                Some(b) if d(b) < d(rf.len()) || (d(b) == d(rf.len()) && b <= rf.len()) => Some(b),
                _ => Some(rf.len()),
            };
        }
        r += best.unwrap_or(0) as f64;
    }
    for k in 1..=n {
        let (mut num, mut den) = (0.0, 0.0);
        for (cand, refs) in pairs {
            let cg = grams(cand, k);
            for g in distinct(&cg) {
                let clip = refs.iter().map(|rf| count(&grams(rf, k), &g)).max().unwrap_or(0);
                num += count(&cg, &g).min(clip) as f64;
            }
            den += cg.len() as f64;
        }
        if num == 0.0 {
            return 0.0;
        }
        log_sum += (num / den).ln();
    }
    if c == 0.0 {
        return 0.0;
    }
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    bp * (log_sum / n as f64).exp()
}

fn is_subsequence(sub: &[&String], of: &[String]) -> bool {
    let mut it = of.iter();
    sub.iter().all(|w| it.any(|x| x == *w))
}

/// LCS length by enumerating every subsequence of `a` (short inputs only).
pub fn lcs_brute(a: &[String], b: &[String]) -> usize {
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let sub: Vec<&String> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| &a[i]).collect();
        if sub.len() > best && is_subsequence(&sub, b) {
            best = sub.len();
        }
    }
    best
}

pub fn rouge_l_brute(cand: &[String], refs: &[Vec<String>]) -> f64 {
    let mut best: f64 = 0.0;
    for r in refs {
        let l = lcs_brute(cand, r) as f64;
        if l > 0.0 {
            let (p, rc) = (l / cand.len() as f64, l / r.len() as f64);
            let b2 = 1.2f64 * 1.2;
            best = best.max((1.0 + b2) * p * rc / (rc + b2 * p));
        }
    }
    best
}

fn all_alignments(cand: &[String], r: &[String], i: usize, used: &mut Vec<bool>, cur: &mut Vec<Option<usize>>, out: &mut Vec<Vec<Option<usize>>>) {
    if i == cand.len() {
        out.push(cur.clone());
        return;
    }
    cur.push(None);
    all_alignments(cand, r, i + 1, used, cur, out);
    cur.pop();
    for j in 0..r.len() {
        if !used[j] && r[j] == cand[i] {
            used[j] = true;
            cur.push(Some(j));
            all_alignments(cand, r, i + 1, used, cur, out);
            cur.pop();
            used[j] = false;
        }
    }
}

/// METEOR-lite over every injective exact alignment: most matches, then fewest chunks.
pub fn meteor_brute(cand: &[String], r: &[String]) -> f64 {
    let mut out = Vec::new();
    all_alignments(cand, r, 0, &mut vec![false; r.len()], &mut Vec::new(), &mut out);
    let mut best: Option<(usize, usize)> = None;
    for a in out {
        let m = a.iter().flatten().count();
        let mut chunks = 0;
        for i in 0..a.len() {
            if let Some(j) = a[i] {
                let continues = i > 0 && a[i - 1].is_some_and(|p| p + 1 == j);
                if !continues {
                    chunks += 1;
                }
            }
        }
        best = match best {
            Some((bm, bc)) if bm > m || (bm == m && bc <= chunks) => Some((bm, bc)),
            _ => Some((m, chunks)),
        };
    }
    let (m, chunks) = best.unwrap();
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / cand.len() as f64;
    let rc = m as f64 / r.len() as f64;
    10.0 * p * rc / (rc + 9.0 * p) * (1.0 - 0.5 * (chunks as f64 / m as f64).powi(3))
}

/// CIDEr with dense vectors over the full n-gram vocabulary of the corpus.
pub fn cider_brute(pairs: &[(Vec<String>, Vec<Vec<String>>)]) -> Vec<f64> {
    let n_docs = pairs.len() as f64;
    let mut scores = vec![0.0; pairs.len()];
    for n in 1..=4 {
        let mut vocab: Vec<Vec<String>> = Vec::new();
        for (c, refs) in pairs {
            vocab.extend(grams(c, n));
            for r in refs {
                vocab.extend(grams(r, n));
            }
        }
        let vocab = distinct(&vocab);
        let idf: Vec<f64> = vocab
            .iter()
            .map(|g| {
                let df = pairs.iter().filter(|(_, refs)| refs.iter().any(|r| count(&grams(r, n), g) > 0)).count();
                (n_docs / df.max(1) as f64).ln()
            })
            .collect();
        let dense = |w: &[String]| -> Vec<f64> {
            let gs = grams(w, n);
            vocab.iter().zip(&idf).map(|(g, i)| count(&gs, g) as f64 * i).collect()
        };
        for (k, (c, refs)) in pairs.iter().enumerate() {
            let cv = dense(c);
            let mut acc = 0.0;
            for r in refs {
                let rv = dense(r);
                let dot: f64 = cv.iter().zip(&rv).map(|(a, b)| a * b).sum();
                let na = cv.iter().map(|a| a * a).sum::<f64>().sqrt();
                let nb = rv.iter().map(|b| b * b).sum::<f64>().sqrt();
                if na > 0.0 && nb > 0.0 {
                    acc += dot / (na * nb);
                }
            }
            scores[k] += acc / refs.len() as f64 * 10.0 / 4.0;
        }
    }
    scores
}
