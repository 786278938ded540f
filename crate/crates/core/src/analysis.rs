//! Topic summaries, popularity-normalized friendship topic pairs, cross-run
//! topic matching, the two-proportion χ² test and DOT export.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{LinkPair, TopicParams};
use crate::scalar::{from_usize, Real};

/// The `n` most probable tokens of topic `a`, descending; ties by token id.
pub fn topic_top_words<T: Real>(
    params: &TopicParams<T>,
    vocab: &Vocabulary,
    a: usize,
    n: usize,
) -> Result<Vec<(String, T)>> {
    if a >= params.k {
        return Err(Error::IndexOutOfRange { index: a, len: params.k });
    }
    let row = params.beta_row(a);
    let mut ids: Vec<usize> = (0..row.len()).collect();
    ids.sort_by(|&x, &y| row[y].partial_cmp(&row[x]).unwrap_or(std::cmp::Ordering::Equal).then(x.cmp(&y)));
    Ok(ids
        .into_iter()
        .take(n)
        .map(|t| (vocab.token(t as u32).to_owned(), row[t]))
        .collect())
}

/// Column sums of `theta` divided by the number of users.
pub fn topic_popularity<T: Real>(theta: &[Vec<T>]) -> Result<Vec<T>> {
    let first = theta.first().ok_or(Error::EmptyFeatures)?;
    let mut pop = vec![T::zero(); first.len()];
    for row in theta {
        if row.len() != pop.len() {
            return Err(Error::DimensionMismatch { expected: pop.len(), found: row.len() });
        }
        for (p, &x) in pop.iter_mut().zip(row) {
            *p += x;
        }
    }
    let n = from_usize::<T>(theta.len());
    Ok(pop.into_iter().map(|p| p / n).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPair<T> {
    pub pair: (usize, usize),
    pub count: usize,
    /// `count / (popularity[a] * popularity[b] * n_edges)`.
    pub score: T,
}

pub fn rank_topic_pairs<T: Real>(link_pairs: &[LinkPair<T>], popularity: &[T], top_n: usize) -> Vec<RankedPair<T>> {
    let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for lp in link_pairs {
        *counts.entry(lp.pair).or_default() += 1;
    }
    let n_edges = from_usize::<T>(link_pairs.len());
    let mut ranked: Vec<RankedPair<T>> = counts
        .into_iter()
        .filter_map(|((a, b), count)| {
            let denom = popularity[a] * popularity[b] * n_edges;
            (denom > T::zero()).then(|| RankedPair {
                pair: (a, b),
                count,
                score: from_usize::<T>(count) / denom,
            })
        })
        .collect();
    ranked.sort_by(|x, y| {
        y.score
            .partial_cmp(&x.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(x.pair.cmp(&y.pair))
    });
    ranked.truncate(top_n);
    ranked
}

fn cosine<T: Real>(x: &[T], y: &[T]) -> T {
    let dot: T = x.iter().zip(y).map(|(&a, &b)| a * b).sum();
    let nx: T = x.iter().map(|&a| a * a).sum::<T>().sqrt();
    let ny: T = y.iter().map(|&a| a * a).sum::<T>().sqrt();
    if nx == T::zero() || ny == T::zero() {
        T::zero()
    } else {
        dot / (nx * ny)
    }
}

/// Greedy one-to-one matching of topics across two runs by cosine similarity
/// of their word distributions. Returns up to `n_matches` triples
/// `(topic_a, topic_b, cosine)`, most similar first.
pub fn match_topics<T: Real>(
    first: &TopicParams<T>,
    second: &TopicParams<T>,
    n_matches: usize,
) -> Result<Vec<(usize, usize, T)>> {
    if first.v != second.v {
        return Err(Error::VocabMismatch);
    }
    let mut sims = Vec::with_capacity(first.k * second.k);
    for a in 0..first.k {
        for b in 0..second.k {
            sims.push((a, b, cosine(first.beta_row(a), second.beta_row(b))));
        }
    }
    sims.sort_by(|x, y| {
        y.2.partial_cmp(&x.2)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then((x.0, x.1).cmp(&(y.0, y.1)))
    });
    let mut used_a = vec![false; first.k];
    let mut used_b = vec![false; second.k];
    let mut out = Vec::new();
    for (a, b, s) in sims {
        if out.len() == n_matches {
            break;
        }
        if !used_a[a] && !used_b[b] {
            used_a[a] = true;
            used_b[b] = true;
            out.push((a, b, s));
        }
    }
    Ok(out)
}

/// Pearson χ² (1 d.o.f.) on the 2×2 table of correct/incorrect counts for two
/// methods. Returns `(statistic, p_value)`; tables with an empty margin give
/// `(0, 1)`.
pub fn chi_square_test(correct_a: u64, n_a: u64, correct_b: u64, n_b: u64) -> Result<(f64, f64)> {
    if n_a == 0 || n_b == 0 || correct_a > n_a || correct_b > n_b {
        return Err(Error::InvalidConfig("chi-square needs 0 <= correct <= n and n > 0".into()));
    }
    let table = [
        [correct_a as f64, (n_a - correct_a) as f64],
        [correct_b as f64, (n_b - correct_b) as f64],
    ];
    let rows = [n_a as f64, n_b as f64];
    let cols = [table[0][0] + table[1][0], table[0][1] + table[1][1]];
    let total = rows[0] + rows[1];
    if cols.contains(&0.0) {
        return Ok((0.0, 1.0));
    }
    let mut stat = 0.0;
    for (r, row) in table.iter().enumerate() {
        for (c, &obs) in row.iter().enumerate() {
            let expected = rows[r] * cols[c] / total;
            stat += (obs - expected).powi(2) / expected;
        }
    }
    if stat <= 0.0 {
        return Ok((0.0, 1.0));
    }
    let p = statrs::function::gamma::gamma_ur(0.5, stat / 2.0);
    Ok((stat, p))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopicSummary {
    pub topic: usize,
    pub popularity: f64,
    pub nu: f64,
    pub top_words: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VizSummary {
    pub topics: Vec<TopicSummary>,
    pub pairs: Vec<RankedPair<f64>>,
}

pub fn build_summary<T: Real>(
    params: &TopicParams<T>,
    vocab: &Vocabulary,
    popularity: &[T],
    rankings: &[RankedPair<T>],
    top_words: usize,
) -> Result<VizSummary> {
    let f = |x: T| x.to_f64().unwrap_or(f64::NAN);
    let topics = (0..params.k)
        .map(|a| {
            Ok(TopicSummary {
                topic: a,
                popularity: f(popularity[a]),
                nu: f(params.nu[a]),
                top_words: topic_top_words(params, vocab, a, top_words)?
                    .into_iter()
                    .map(|(w, p)| (w, f(p)))
                    .collect(),
            })
        })
        .collect::<Result<_>>()?;
    let pairs = rankings
        .iter()
        .map(|r| RankedPair { pair: r.pair, count: r.count, score: f(r.score) })
        .collect();
    Ok(VizSummary { topics, pairs })
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Undirected DOT graph: one node per topic (top-5 words, popularity,
/// regression coefficient; thick solid border for `nu >= 0`, dashed for
/// negative) and one edge per ranked pair labeled with its normalized score.
pub fn render_dot(summary: &VizSummary) -> String {
    let mut out = String::from("graph topics {\n  node [shape=box];\n");
    for t in &summary.topics {
        let words: Vec<&str> = t.top_words.iter().take(5).map(|(w, _)| w.as_str()).collect();
        let label = format!(
            "t{} ({:.1}%) {:+.2}\\n{}",
            t.topic,
            100.0 * t.popularity,
            t.nu,
            dot_escape(&words.join(" "))
        );
        let (style, pen) = if t.nu >= 0.0 { ("solid", 3) } else { ("dashed", 1) };
        let _ = writeln!(out, "  t{} [label=\"{}\", style={}, penwidth={}];", t.topic, label, style, pen);
    }
    for r in &summary.pairs {
        let _ = writeln!(
            out,
            "  t{} -- t{} [label=\"{:.3}\", penwidth={:.3}];",
            r.pair.0,
            r.pair.1,
            r.score,
            1.0 + r.score.ln_1p()
        );
    }
    out.push_str("}\n");
    out
}

/// Writes the JSON summary and the DOT graph.
pub fn export_viz(summary: &VizSummary, summary_path: &Path, dot_path: &Path) -> Result<()> {
    fs::write(summary_path, serde_json::to_string_pretty(summary)?)?;
    fs::write(dot_path, render_dot(summary))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TriangularMatrix;

    fn params(k: usize, v: usize, beta: Vec<f64>, nu: Vec<f64>) -> TopicParams<f64> {
        TopicParams {
            k,
            v,
            beta,
            beta_back: vec![1.0 / v as f64; v],
            phi: TriangularMatrix::filled(k, 0.5),
            nu,
            sigma2: 1.0,
        }
    }

    fn vocab(v: usize) -> Vocabulary {
        Vocabulary::from((0..v).map(|i| format!("w{i}")).collect::<Vec<_>>())
    }

    #[test]
    fn top_words_tie_break_and_one_hot() {
        let p = params(2, 10, [vec![0.1; 10], (0..10).map(|i| if i == 7 { 1.0 } else { 0.0 }).collect()].concat(), vec![0.0; 2]);
        let v = vocab(10);
        let uni = topic_top_words(&p, &v, 0, 3).unwrap();
        assert_eq!(uni.iter().map(|x| x.0.as_str()).collect::<Vec<_>>(), ["w0", "w1", "w2"]);
        let hot = topic_top_words(&p, &v, 1, 2).unwrap();
        assert_eq!(hot[0], ("w7".to_string(), 1.0));
        assert!(topic_top_words(&p, &v, 2, 1).is_err());
    }

    #[test]
    fn popularity_examples() {
        let uni = topic_popularity(&vec![vec![0.25; 4]; 3]).unwrap();
        assert!(uni.iter().all(|&x: &f64| (x - 0.25).abs() < 1e-15));
        let hot = topic_popularity(&vec![vec![1.0, 0.0, 0.0]; 5]).unwrap();
        assert_eq!(hot, vec![1.0, 0.0, 0.0]);
        assert!(topic_popularity::<f64>(&[]).is_err());
    }

    fn lp(a: usize, b: usize) -> LinkPair<f64> {
        LinkPair { edge: (0, 1), pair: (a, b), score: 0.0 }
    }

    #[test]
    fn ranking_examples() {
        let r = rank_topic_pairs(&[lp(0, 0)], &[1.0, 0.0], 5);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].pair, (0, 0));

        // equal counts; the pair between rarer topics ranks first
        let pop = [0.5, 0.3, 0.1, 0.1];
        let r = rank_topic_pairs(&[lp(0, 1), lp(2, 3)], &pop, 5);
        assert_eq!(r[0].pair, (2, 3));
        assert_eq!(r[1].pair, (0, 1));
        assert!((r[0].score - 1.0 / (0.01 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn ranking_invariant_under_duplication() {
        let pop = [0.4, 0.35, 0.25];
        let pairs = vec![lp(0, 1), lp(0, 1), lp(2, 2), lp(1, 2)];
        let doubled: Vec<_> = pairs.iter().chain(&pairs).copied().collect();
        let a = rank_topic_pairs(&pairs, &pop, 10);
        let b = rank_topic_pairs(&doubled, &pop, 10);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.pair, y.pair);
            assert!((x.score - y.score).abs() < 1e-12);
        }
    }

    #[test]
    fn matching_identity_and_permutation() {
        let beta = vec![0.7, 0.2, 0.1, 0.1, 0.1, 0.8, 0.3, 0.4, 0.3];
        let p = params(3, 3, beta, vec![0.0; 3]);
        let m = match_topics(&p, &p, 3).unwrap();
        let mut pairs: Vec<_> = m.iter().map(|x| (x.0, x.1)).collect();
        pairs.sort();
        assert_eq!(pairs, vec![(0, 0), (1, 1), (2, 2)]);
        assert!(m.iter().all(|x| (x.2 - 1.0).abs() < 1e-12));

        let a = params(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.], vec![0.0; 3]);
        let b = params(3, 3, vec![0., 0., 1., 1., 0., 0., 0., 1., 0.], vec![0.0; 3]);
        let mut m = match_topics(&a, &b, 3).unwrap();
        m.sort_by_key(|x| x.0);
        assert_eq!(m.iter().map(|x| x.1).collect::<Vec<_>>(), vec![1, 2, 0]);
        assert!(m.iter().all(|x| x.2 == 1.0));

        let c = params(3, 4, vec![0.25; 12], vec![0.0; 3]);
        assert!(matches!(match_topics(&a, &c, 1), Err(Error::VocabMismatch)));
    }

    #[test]
    fn chi_square_examples() {
        let (s, p) = chi_square_test(90, 100, 50, 100).unwrap();
        // expected counts 70/30 in both rows
        let hand = 2.0 * (20.0f64.powi(2) / 70.0 + 20.0f64.powi(2) / 30.0);
        assert!((s - hand).abs() < 1e-9);
        assert!(p < 1e-8);
        let (s2, _) = chi_square_test(50, 100, 90, 100).unwrap();
        assert_eq!(s, s2);
        assert_eq!(chi_square_test(40, 80, 20, 40).unwrap(), (0.0, 1.0));
        assert_eq!(chi_square_test(10, 10, 5, 5).unwrap(), (0.0, 1.0));
        // 3.841 is the 0.95 quantile of chi-square(1)
        let q = statrs::function::gamma::gamma_ur(0.5, 3.841458820694124 / 2.0);
        assert!((q - 0.05).abs() < 1e-9);
    }

    #[test]
    fn dot_structure_and_border_styles() {
        let p = params(2, 3, vec![0.5, 0.3, 0.2, 0.1, 0.1, 0.8], vec![1.0, -1.0]);
        let ranked = vec![RankedPair { pair: (0, 1), count: 1, score: 2.0 }];
        let s = build_summary(&p, &vocab(3), &[0.6, 0.4], &ranked, 5).unwrap();
        let dot = render_dot(&s);
        assert_eq!(dot.matches(" [label=").count(), 3);
        assert_eq!(dot.matches(" -- ").count(), 1);
        assert!(dot.contains("t0 [label=\"t0 (60.0%) +1.00\\nw0 w1 w2\", style=solid"));
        assert!(dot.contains("t1 [label=\"t1 (40.0%) -1.00\\nw2 w0 w1\", style=dashed"));
    }
}
