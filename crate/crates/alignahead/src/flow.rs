//! Symbolic tracer for how structure information moves between student
//! layers under the alignment schedule.
//!
//! Each slot (student, layer) starts holding its own token. One iteration
//! replaces every slot's content with the union, over all peers, of what the
//! peer's aligned layer held at the start of the iteration. With two
//! students this is a permutation of the tokens; with more it is a set
//! union.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::loss::{align_target, Matching};

/// Origin slot of a token: (student, layer), both zero-based.
pub type Token = (usize, usize);

/// Compact label, one-based: layer before the caret, student after.
pub fn token_label(t: Token) -> String {
    format!("l{}^{}", t.1 + 1, t.0 + 1)
}

type Grid = Vec<Vec<BTreeSet<Token>>>;

#[derive(Clone, Debug)]
pub struct FlowTrace {
    pub students: usize,
    pub depth: usize,
    pub matching: Matching,
    /// `states[t][s][i]` is the token set in slot (s, i) after t iterations;
    /// `states[0]` is the initial labeling.
    pub states: Vec<Grid>,
}

pub fn trace_information_flow(
    depth: usize,
    students: usize,
    matching: Matching,
    iterations: usize,
) -> FlowTrace {
    assert!(depth >= 1, "depth must be at least 1");
    assert!(students >= 2, "need at least two students");

    let initial: Grid = (0..students)
        .map(|s| (0..depth).map(|i| BTreeSet::from([(s, i)])).collect())
        .collect();
    let mut states = Vec::with_capacity(iterations + 1);
    states.push(initial);

    for _ in 0..iterations {
        let prev = states.last().unwrap();
        let mut next: Grid = vec![vec![BTreeSet::new(); depth]; students];
        for s in 0..students {
            for i in 0..depth {
                // align_target speaks one-based layer indices.
                let j = align_target(matching, i + 1, depth) - 1;
                for (p, row) in prev.iter().enumerate() {
                    if p != s {
                        next[s][i].extend(row[j].iter().copied());
                    }
                }
            }
        }
        states.push(next);
    }

    FlowTrace { students, depth, matching, states }
}

impl FlowTrace {
    pub fn iterations(&self) -> usize {
        self.states.len() - 1
    }

    /// Token sets held by slot (s, i) at iterations 0..=iterations.
    pub fn slot_history(&self, s: usize, i: usize) -> Vec<&BTreeSet<Token>> {
        self.states.iter().map(|g| &g[s][i]).collect()
    }

    /// Union of everything slot (s, i) has held across the whole trace.
    pub fn coverage(&self, s: usize, i: usize) -> BTreeSet<Token> {
        let mut seen = BTreeSet::new();
        for g in &self.states {
            seen.extend(g[s][i].iter().copied());
        }
        seen
    }

    /// True when the grid at iteration t consists of singleton sets that
    /// together are exactly the full token population.
    pub fn is_token_permutation_at(&self, t: usize) -> bool {
        let mut seen = BTreeSet::new();
        for row in &self.states[t] {
            for cell in row {
                if cell.len() != 1 {
                    return false;
                }
                seen.extend(cell.iter().copied());
            }
        }
        seen.len() == self.students * self.depth
    }

    /// Plain-text grid, one row per iteration.
    pub fn render(&self) -> String {
        let cell = |set: &BTreeSet<Token>| -> String {
            let labels: Vec<String> = set.iter().map(|&t| token_label(t)).collect();
            if labels.len() == 1 {
                labels.into_iter().next().unwrap()
            } else {
                format!("{{{}}}", labels.join(","))
            }
        };

        let mut headers = vec!["iter".to_string()];
        for s in 0..self.students {
            for i in 0..self.depth {
                headers.push(format!("s{}.l{}", s + 1, i + 1));
            }
        }
        let mut rows: Vec<Vec<String>> = vec![headers];
        for (t, g) in self.states.iter().enumerate() {
            let mut row = vec![t.to_string()];
            for srow in g {
                for set in srow {
                    row.push(cell(set));
                }
            }
            rows.push(row);
        }

        let cols = rows[0].len();
        let widths: Vec<usize> = (0..cols)
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap())
            .collect();
        let mut out = String::new();
        for r in &rows {
            for (c, item) in r.iter().enumerate() {
                if c > 0 {
                    out.push_str("  ");
                }
                write!(out, "{:<width$}", item, width = widths[c]).unwrap();
            }
            while out.ends_with(' ') {
                out.pop();
            }
            out.push('\n');
        }
        out
    }
}
