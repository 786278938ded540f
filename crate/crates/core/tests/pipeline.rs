use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mmtopic"))
}

fn run(dir: &Path, args: &[&str]) -> std::process::Output {
    let out = bin().current_dir(dir).args(args).output().expect("spawn");
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

/// Minimal recursive-descent checker for the DOT language subset
/// `[strict] (graph|digraph) [ID] { stmt_list }`.
mod dot {
    #[derive(Debug, Clone, PartialEq)]
    enum Tok {
        Id(String),
        Sym(char),
        EdgeOp(String),
    }

    fn lex(s: &str) -> Result<Vec<Tok>, String> {
        let c: Vec<char> = s.chars().collect();
        let mut i = 0;
        let mut out = Vec::new();
        while i < c.len() {
            let ch = c[i];
            if ch.is_whitespace() {
                i += 1;
            } else if "{}[]=;,".contains(ch) {
                out.push(Tok::Sym(ch));
                i += 1;
            } else if ch == '-' && i + 1 < c.len() && (c[i + 1] == '-' || c[i + 1] == '>') {
                out.push(Tok::EdgeOp(format!("-{}", c[i + 1])));
                i += 2;
            } else if ch == '"' {
                let mut v = String::new();
                i += 1;
                loop {
                    match c.get(i) {
                        None => return Err("unterminated string".into()),
                        Some('\\') => {
                            v.push(c[i + 1]);
                            i += 2;
                        }
                        Some('"') => {
                            i += 1;
                            break;
                        }
                        Some(&x) => {
                            v.push(x);
                            i += 1;
                        }
                    }
                }
                out.push(Tok::Id(v));
            } else if ch.is_ascii_alphabetic() || ch == '_' {
                let st = i;
                while i < c.len() && (c[i].is_ascii_alphanumeric() || c[i] == '_') {
                    i += 1;
                }
                out.push(Tok::Id(c[st..i].iter().collect()));
            } else if ch.is_ascii_digit() || ch == '.' || ch == '-' {
                let st = i;
                i += 1;
                while i < c.len() && (c[i].is_ascii_digit() || c[i] == '.') {
                    i += 1;
                }
                let num: String = c[st..i].iter().collect();
                num.parse::<f64>().map_err(|_| format!("bad numeral {num}"))?;
                out.push(Tok::Id(num));
            } else {
                return Err(format!("unexpected character {ch:?}"));
            }
        }
        Ok(out)
    }

    pub struct Graph {
        pub nodes: Vec<(String, Vec<(String, String)>)>,
        pub edges: Vec<(String, String, Vec<(String, String)>)>,
    }

    struct P {
        t: Vec<Tok>,
        i: usize,
        op: &'static str,
    }

    impl P {
        fn peek(&self) -> Option<&Tok> {
            self.t.get(self.i)
        }
        fn sym(&mut self, c: char) -> Result<(), String> {
            match self.t.get(self.i) {
                Some(Tok::Sym(x)) if *x == c => {
                    self.i += 1;
                    Ok(())
                }
                other => Err(format!("expected {c:?}, found {other:?}")),
            }
        }
        fn id(&mut self) -> Result<String, String> {
            match self.t.get(self.i) {
                Some(Tok::Id(x)) => {
                    self.i += 1;
                    Ok(x.clone())
                }
                other => Err(format!("expected ID, found {other:?}")),
            }
        }
        fn attr_list(&mut self) -> Result<Vec<(String, String)>, String> {
            let mut attrs = Vec::new();
            while self.peek() == Some(&Tok::Sym('[')) {
                self.i += 1;
                while self.peek() != Some(&Tok::Sym(']')) {
                    let k = self.id()?;
                    self.sym('=')?;
                    let v = self.id()?;
                    attrs.push((k, v));
                    if matches!(self.peek(), Some(Tok::Sym(';' | ','))) {
                        self.i += 1;
                    }
                }
                self.sym(']')?;
            }
            Ok(attrs)
        }
    }

    pub fn parse(s: &str) -> Result<Graph, String> {
        let mut p = P { t: lex(s)?, i: 0, op: "--" };
        let mut kw = p.id()?;
        if kw == "strict" {
            kw = p.id()?;
        }
        p.op = match kw.as_str() {
            "graph" => "--",
            "digraph" => "->",
            _ => return Err(format!("bad graph keyword {kw}")),
        };
        if let Some(Tok::Id(_)) = p.peek() {
            p.id()?;
        }
        p.sym('{')?;
        let mut g = Graph { nodes: Vec::new(), edges: Vec::new() };
        while p.peek() != Some(&Tok::Sym('}')) {
            let head = p.id()?;
            if p.peek() == Some(&Tok::Sym('=')) {
                p.i += 1;
                p.id()?;
            } else if matches!(head.as_str(), "graph" | "node" | "edge") && p.peek() == Some(&Tok::Sym('[')) {
                p.attr_list()?;
            } else if let Some(Tok::EdgeOp(op)) = p.peek().cloned() {
                if op != p.op {
                    return Err(format!("edge operator {op} in {kw}"));
                }
                p.i += 1;
                let tail = p.id()?;
                let attrs = p.attr_list()?;
                g.edges.push((head, tail, attrs));
            } else {
                let attrs = p.attr_list()?;
                g.nodes.push((head, attrs));
            }
            if p.peek() == Some(&Tok::Sym(';')) {
                p.i += 1;
            }
        }
        p.sym('}')?;
        if p.i != p.t.len() {
            return Err("trailing tokens".into());
        }
        Ok(g)
    }

    #[test]
    fn checker_rejects_malformed_input() {
        assert!(parse("graph { a -- b; }").is_ok());
        assert!(parse("graph { a -> b; }").is_err());
        assert!(parse("graph { a [label=\"x]; }").is_err());
        assert!(parse("graph { a -- b;").is_err());
    }
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
    assert_eq!(bin().args(["predict", "--nope"]).output().unwrap().status.code(), Some(1));
    assert_eq!(bin().arg("unknown").output().unwrap().status.code(), Some(1));
}

#[test]
fn bad_data_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(p(d, "u.jsonl"), "{\"id\":\"a\",\"docs\":[[\"x\"]]}\nnot json\n").unwrap();
    fs::write(p(d, "e.txt"), "").unwrap();
    let out = bin()
        .current_dir(d)
        .args(["train", "--users", "u.jsonl", "--edges", "e.txt", "--out", "m.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":2:"));
}

#[test]
fn full_pipeline_on_two_hundred_users() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run(
        d,
        &[
            "generate", "--k", "4", "--v", "80", "--p", "200", "--docs-per-user", "4-8", "--words-per-doc", "3-6",
            "--lambda0", "5", "--seed", "11", "--out-users", "users.jsonl", "--out-edges", "edges.txt", "--out-truth",
            "truth.json",
        ],
    );
    let users_before = fs::read(p(d, "users.jsonl")).unwrap();
    let edges_before = fs::read(p(d, "edges.txt")).unwrap();
    assert_eq!(fs::read_to_string(p(d, "users.jsonl")).unwrap().lines().count(), 200);
    let truth: serde_json::Value = serde_json::from_slice(&fs::read(p(d, "truth.json")).unwrap()).unwrap();
    assert_eq!(truth["theta"].as_array().unwrap().len(), 200);

    let train = ["train", "--users", "users.jsonl", "--edges", "edges.txt", "--k", "4", "--iters", "30", "--seed", "3"];
    run(d, &[&train[..], &["--out", "model.json"]].concat());
    run(d, &[&train[..], &["--out", "model2.json", "--metrics", "m2.jsonl"]].concat());
    assert_eq!(fs::read(p(d, "model.json")).unwrap(), fs::read(p(d, "model2.json")).unwrap());
    let metrics = fs::read_to_string(p(d, "model.json.metrics.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(metrics.lines().next().unwrap()).unwrap();
    for key in ["iter", "log_likelihood", "alpha", "eta", "delta", "sigma2", "accepted_alpha"] {
        assert!(first.get(key).is_some(), "metrics record lacks {key}");
    }
    assert_eq!(metrics, fs::read_to_string(p(d, "m2.jsonl")).unwrap());

    let predict = ["predict", "--checkpoint", "model.json", "--users", "users.jsonl", "--edges", "edges.txt", "--seed", "5"];
    run(d, &[&predict[..], &["--threads", "1", "--out", "f1.jsonl"]].concat());
    run(d, &[&predict[..], &["--threads", "3", "--out", "f3.jsonl"]].concat());
    let features = fs::read_to_string(p(d, "f1.jsonl")).unwrap();
    assert_eq!(features, fs::read_to_string(p(d, "f3.jsonl")).unwrap());
    let n_edges = String::from_utf8(edges_before.clone()).unwrap().lines().filter(|l| !l.trim().is_empty()).count();
    let kinds: Vec<String> = features
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["kind"].as_str().unwrap().to_owned())
        .collect();
    assert_eq!(kinds.iter().filter(|k| *k == "user").count(), 200);
    assert_eq!(kinds.iter().filter(|k| *k == "edge").count(), n_edges);

    run(
        d,
        &[
            "analyze", "--checkpoint", "model.json", "--features", "f1.jsonl", "--top-words", "5", "--top-pairs", "3",
            "--out-summary", "summary.json", "--out-dot", "topics.dot",
        ],
    );
    let g = dot::parse(&fs::read_to_string(p(d, "topics.dot")).unwrap()).expect("valid DOT");
    assert_eq!(g.nodes.len(), 4);
    assert!(g.edges.len() <= 3);
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(p(d, "summary.json")).unwrap()).unwrap();
    assert_eq!(summary["topics"].as_array().unwrap().len(), 4);

    let out = run(
        d,
        &[
            "evaluate", "--users", "users.jsonl", "--edges", "edges.txt", "--checkpoint", "model.json", "--features",
            "f1.jsonl", "--folds", "10", "--seed", "2",
        ],
    );
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["bow"]["fold_accuracies"].as_array().unwrap().len(), 10);
    assert_eq!(report["bow_theta"]["fold_accuracies"].as_array().unwrap().len(), 10);
    let p_value = report["p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p_value));
    assert!(report["chi_square"].as_f64().unwrap() >= 0.0);

    assert_eq!(fs::read(p(d, "users.jsonl")).unwrap(), users_before);
    assert_eq!(fs::read(p(d, "edges.txt")).unwrap(), edges_before);
}

#[test]
fn dot_output_for_hand_built_summary() {
    use mmtopic::analysis::{render_dot, RankedPair, TopicSummary, VizSummary};
    let topic = |t: usize, nu: f64| TopicSummary {
        topic: t,
        popularity: 0.5,
        nu,
        top_words: vec![("quote\"d".into(), 0.6), ("back\\slash".into(), 0.4)],
    };
    let s = VizSummary { topics: vec![topic(0, 1.0), topic(1, -1.0)], pairs: vec![RankedPair { pair: (0, 1), count: 3, score: 1.5 }] };
    let g = dot::parse(&render_dot(&s)).expect("valid DOT");
    assert_eq!(g.nodes.len(), 2);
    assert_eq!(g.edges.len(), 1);
    let style = |n: usize| g.nodes[n].1.iter().find(|(k, _)| k == "style").unwrap().1.clone();
    assert_eq!(style(0), "solid");
    assert_eq!(style(1), "dashed");
    let label = &g.nodes[0].1.iter().find(|(k, _)| k == "label").unwrap().1;
    assert!(label.contains("quote\"d"));
}
