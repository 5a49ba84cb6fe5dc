//! Causal DAGs in the DAGitty text format: parsing, d-separation and
//! minimal adjustment sets for a total effect.
//!
//! Graphs here are small, so adjustment sets are found by exhaustive search
//! over observed candidates, checked with d-separation in the proper
//! back-door graph.

use std::collections::{BTreeSet, HashMap};
use std::fmt::{self, Write as _};

use crate::error::{Error, Result};

/// A `key` or `key="value"` attribute inside `[...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Attr {
    pub key: String,
    pub value: Option<String>,
}

impl fmt::Display for Attr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.value {
            Some(v) => write!(f, "{}=\"{}\"", self.key, v),
            None => f.write_str(&self.key),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub name: String,
    pub attrs: Vec<Attr>,
}

impl Node {
    fn flag(&self, key: &str) -> bool {
        self.attrs.iter().any(|a| a.key == key && a.value.is_none())
    }

    pub fn is_latent(&self) -> bool {
        self.flag("latent")
    }

    pub fn is_exposure(&self) -> bool {
        self.flag("exposure")
    }

    pub fn is_outcome(&self) -> bool {
        self.flag("outcome")
    }

    pub fn is_adjusted(&self) -> bool {
        self.flag("adjusted")
    }

    /// Drawing position, if given.
    pub fn pos(&self) -> Option<(f64, f64)> {
        let v = self.attrs.iter().find(|a| a.key == "pos")?.value.as_ref()?;
        let (x, y) = v.split_once(',')?;
        Some((x.trim().parse().ok()?, y.trim().parse().ok()?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub attrs: Vec<Attr>,
}

/// A parsed, acyclic causal graph.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalDag {
    /// Graph-level `key="value"` settings such as `bb`.
    pub settings: Vec<Attr>,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    index: HashMap<String, usize>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
}

/// Set of node names.
pub type NodeSet = BTreeSet<String>;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Arrow,
    BackArrow,
    Open,
    Close,
    LBracket,
    RBracket,
    Eq,
    Comma,
}

fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '.'
}

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    let mut line = 1;
    while let Some(c) = chars.next() {
        let tok = match c {
            '\n' => {
                line += 1;
                continue;
            }
            c if c.is_whitespace() || c == ';' => continue,
            '{' => Tok::Open,
            '}' => Tok::Close,
            '[' => Tok::LBracket,
            ']' => Tok::RBracket,
            '=' => Tok::Eq,
            ',' => Tok::Comma,
            '-' if chars.peek() == Some(&'>') => {
                chars.next();
                Tok::Arrow
            }
            '<' if chars.peek() == Some(&'-') => {
                chars.next();
                if chars.peek() == Some(&'>') {
                    return Err(Error::DagParse {
                        line,
                        msg: "bidirected edges are not supported".into(),
                    });
                }
                Tok::BackArrow
            }
            '"' => {
                let mut s = String::new();
                loop {
                    match chars.next() {
                        Some('"') => break,
                        Some(ch) => {
                            if ch == '\n' {
                                line += 1;
                            }
                            s.push(ch);
                        }
                        None => {
                            return Err(Error::DagParse {
                                line,
                                msg: "unterminated string".into(),
                            })
                        }
                    }
                }
                Tok::Str(s)
            }
            c if is_ident_char(c) => {
                let mut s = String::from(c);
                while let Some(&n) = chars.peek() {
                    if !is_ident_char(n) {
                        break;
                    }
                    s.push(n);
                    chars.next();
                }
                Tok::Ident(s)
            }
            other => {
                return Err(Error::DagParse {
                    line,
                    msg: format!("unexpected character `{other}`"),
                })
            }
        };
        out.push((tok, line));
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn line(&self) -> usize {
        self.toks
            .get(self.pos)
            .or(self.toks.last())
            .map_or(1, |t| t.1)
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::DagParse {
            line: self.line(),
            msg: msg.into(),
        }
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.0.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<()> {
        match self.next() {
            Some(t) if t == want => Ok(()),
            _ => {
                self.pos -= 1;
                Err(self.err(format!("expected {what}")))
            }
        }
    }

    fn ident(&mut self) -> Result<String> {
        match self.next() {
            Some(Tok::Ident(s)) => Ok(s),
            _ => {
                self.pos -= 1;
                Err(self.err("expected a node name"))
            }
        }
    }

    fn attrs(&mut self) -> Result<Vec<Attr>> {
        if self.peek() != Some(&Tok::LBracket) {
            return Ok(Vec::new());
        }
        self.next();
        let mut out = Vec::new();
        loop {
            match self.next() {
                Some(Tok::RBracket) => break,
                Some(Tok::Comma) => continue,
                Some(Tok::Ident(key)) => {
                    let value = if self.peek() == Some(&Tok::Eq) {
                        self.next();
                        match self.next() {
                            Some(Tok::Str(s)) | Some(Tok::Ident(s)) => Some(s),
                            _ => {
                                self.pos -= 1;
                                return Err(self.err(format!("missing value for `{key}`")));
                            }
                        }
                    } else {
                        None
                    };
                    out.push(Attr { key, value });
                }
                _ => {
                    self.pos -= 1;
                    return Err(self.err("malformed attribute list"));
                }
            }
        }
        Ok(out)
    }
}

/// Parses DAGitty text: `dag { ... }` with node statements
/// `name [flags,pos="x,y"]`, edge statements `a -> b [pos=...]` (chains and
/// `<-` allowed) and graph settings such as `bb="0,0,1,1"`.
pub fn parse_dag(text: &str) -> Result<CausalDag> {
    let mut p = Parser {
        toks: tokenize(text)?,
        pos: 0,
    };
    match p.next() {
        Some(Tok::Ident(k)) if k == "dag" => {}
        _ => {
            p.pos -= 1;
            return Err(p.err("expected `dag {`"));
        }
    }
    p.expect(Tok::Open, "`{`")?;

    let mut settings = Vec::new();
    let mut nodes: Vec<Node> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    // Edges refer to names until every node is known.
    let mut raw_edges: Vec<(String, String, Vec<Attr>, usize)> = Vec::new();

    loop {
        match p.peek() {
            Some(Tok::Close) => {
                p.next();
                break;
            }
            None => return Err(p.err("missing closing `}`")),
            _ => {}
        }
        let line = p.line();
        let first = p.ident()?;
        if p.peek() == Some(&Tok::Eq) {
            p.next();
            match p.next() {
                Some(Tok::Str(v)) | Some(Tok::Ident(v)) => settings.push(Attr {
                    key: first,
                    value: Some(v),
                }),
                _ => {
                    p.pos -= 1;
                    return Err(p.err(format!("missing value for `{first}`")));
                }
            }
            continue;
        }
        if matches!(p.peek(), Some(Tok::Arrow) | Some(Tok::BackArrow)) {
            let mut left = first;
            while let Some(dir) = p.peek().cloned() {
                if dir != Tok::Arrow && dir != Tok::BackArrow {
                    break;
                }
                p.next();
                let right = p.ident()?;
                let attrs = p.attrs()?;
                if dir == Tok::Arrow {
                    raw_edges.push((left.clone(), right.clone(), attrs, line));
                } else {
                    raw_edges.push((right.clone(), left.clone(), attrs, line));
                }
                left = right;
            }
            continue;
        }
        let attrs = p.attrs()?;
        match index.get(&first) {
            Some(&i) => nodes[i].attrs.extend(attrs),
            None => {
                index.insert(first.clone(), nodes.len());
                nodes.push(Node { name: first, attrs });
            }
        }
    }
    if p.peek().is_some() {
        return Err(p.err("text after closing `}`"));
    }

    // Cycles are reported before undeclared names, so `a -> b b -> a`
    // fails as a cycle.
    let mut names: Vec<&str> = nodes.iter().map(|v| v.name.as_str()).collect();
    for (a, b, _, _) in &raw_edges {
        for n in [a, b] {
            if !names.contains(&n.as_str()) {
                names.push(n);
            }
        }
    }
    let pairs: Vec<(&str, &str)> = raw_edges.iter().map(|e| (e.0.as_str(), e.1.as_str())).collect();
    CausalDag::from_edges(&names, &pairs)?;

    let mut edges = Vec::with_capacity(raw_edges.len());
    for (a, b, attrs, line) in raw_edges {
        let lookup = |n: &str| {
            index.get(n).copied().ok_or_else(|| Error::DagParse {
                line,
                msg: format!("edge uses undeclared node `{n}`"),
            })
        };
        edges.push(Edge {
            from: lookup(&a)?,
            to: lookup(&b)?,
            attrs,
        });
    }
    CausalDag::from_parts(settings, nodes, edges)
}

impl CausalDag {
    fn from_parts(settings: Vec<Attr>, nodes: Vec<Node>, edges: Vec<Edge>) -> Result<Self> {
        let n = nodes.len();
        let mut parents = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        for e in &edges {
            if !children[e.from].contains(&e.to) {
                children[e.from].push(e.to);
                parents[e.to].push(e.from);
            }
        }
        let index = nodes
            .iter()
            .enumerate()
            .map(|(i, v)| (v.name.clone(), i))
            .collect();
        let g = Self {
            settings,
            nodes,
            edges,
            index,
            parents,
            children,
        };
        if let Some(v) = g.find_cycle() {
            return Err(Error::Cycle(g.nodes[v].name.clone()));
        }
        Ok(g)
    }

    /// Builds a graph from names and directed edges.
    pub fn from_edges(names: &[&str], edges: &[(&str, &str)]) -> Result<Self> {
        let nodes: Vec<Node> = names
            .iter()
            .map(|n| Node {
                name: n.to_string(),
                attrs: Vec::new(),
            })
            .collect();
        let idx = |n: &str| {
            names
                .iter()
                .position(|m| *m == n)
                .ok_or_else(|| Error::UnknownNode(n.to_string()))
        };
        let edges = edges
            .iter()
            .map(|(a, b)| {
                Ok(Edge {
                    from: idx(a)?,
                    to: idx(b)?,
                    attrs: Vec::new(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(Vec::new(), nodes, edges)
    }

    fn find_cycle(&self) -> Option<usize> {
        // 0 unvisited, 1 on stack, 2 done.
        let mut state = vec![0u8; self.nodes.len()];
        for start in 0..self.nodes.len() {
            if state[start] != 0 {
                continue;
            }
            let mut stack = vec![(start, 0usize)];
            state[start] = 1;
            while let Some(&mut (v, ref mut k)) = stack.last_mut() {
                if let Some(&w) = self.children[v].get(*k) {
                    *k += 1;
                    match state[w] {
                        1 => return Some(w),
                        0 => {
                            state[w] = 1;
                            stack.push((w, 0));
                        }
                        _ => {}
                    }
                } else {
                    state[v] = 2;
                    stack.pop();
                }
            }
        }
        None
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownNode(name.to_string()))
    }

    pub fn name(&self, i: usize) -> &str {
        &self.nodes[i].name
    }

    pub fn parents(&self, i: usize) -> &[usize] {
        &self.parents[i]
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    /// First node flagged `exposure`, if any.
    pub fn exposure(&self) -> Option<&str> {
        self.nodes.iter().find(|n| n.is_exposure()).map(|n| n.name.as_str())
    }

    pub fn outcome(&self) -> Option<&str> {
        self.nodes.iter().find(|n| n.is_outcome()).map(|n| n.name.as_str())
    }

    fn indices(&self, set: &NodeSet) -> Result<Vec<bool>> {
        let mut m = vec![false; self.len()];
        for s in set {
            m[self.node(s)?] = true;
        }
        Ok(m)
    }

    fn closure(&self, seed: &[bool], up: bool) -> Vec<bool> {
        let mut seen = seed.to_vec();
        let mut stack: Vec<usize> = (0..self.len()).filter(|&i| seed[i]).collect();
        while let Some(v) = stack.pop() {
            let next = if up { &self.parents[v] } else { &self.children[v] };
            for &w in next {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen
    }

    /// Nodes with a directed path into `v`, including `v`.
    pub fn ancestors(&self, v: usize) -> Vec<bool> {
        let mut seed = vec![false; self.len()];
        seed[v] = true;
        self.closure(&seed, true)
    }

    /// Nodes reachable from `v` along directed edges, including `v`.
    pub fn descendants(&self, v: usize) -> Vec<bool> {
        let mut seed = vec![false; self.len()];
        seed[v] = true;
        self.closure(&seed, false)
    }

    /// Is every path between `a` and `b` blocked by `c`? Decided on the
    /// moral graph of the ancestral set of `a ∪ b ∪ c`.
    pub fn d_separated(&self, a: &NodeSet, b: &NodeSet, c: &NodeSet) -> Result<bool> {
        let (a, b, c) = (self.indices(a)?, self.indices(b)?, self.indices(c)?);
        for i in 0..self.len() {
            if (a[i] && b[i]) || (a[i] && c[i]) || (b[i] && c[i]) {
                return Err(Error::Domain(format!(
                    "node `{}` appears in more than one of the query sets",
                    self.name(i)
                )));
            }
        }
        Ok(self.d_separated_idx(&a, &b, &c, None))
    }

    /// Core test. `skip` removes edges `(from, to)` for which it returns true.
    fn d_separated_idx(
        &self,
        a: &[bool],
        b: &[bool],
        c: &[bool],
        skip: Option<&dyn Fn(usize, usize) -> bool>,
    ) -> bool {
        let n = self.len();
        let kept = |u: usize, v: usize| skip.is_none_or(|s| !s(u, v));
        let seed: Vec<bool> = (0..n).map(|i| a[i] || b[i] || c[i]).collect();
        // Ancestral closure over the kept edges.
        let mut anc = seed.clone();
        let mut stack: Vec<usize> = (0..n).filter(|&i| seed[i]).collect();
        while let Some(v) = stack.pop() {
            for &p in &self.parents[v] {
                if kept(p, v) && !anc[p] {
                    anc[p] = true;
                    stack.push(p);
                }
            }
        }
        let mut adj = vec![Vec::new(); n];
        for v in (0..n).filter(|&v| anc[v]) {
            let ps: Vec<usize> = self.parents[v]
                .iter()
                .copied()
                .filter(|&p| kept(p, v))
                .collect();
            for (i, &p) in ps.iter().enumerate() {
                adj[p].push(v);
                adj[v].push(p);
                for &q in &ps[i + 1..] {
                    adj[p].push(q);
                    adj[q].push(p);
                }
            }
        }
        let mut seen = vec![false; n];
        let mut stack: Vec<usize> = (0..n).filter(|&i| a[i]).collect();
        for &v in &stack {
            seen[v] = true;
        }
        while let Some(v) = stack.pop() {
            if b[v] {
                return false;
            }
            for &w in &adj[v] {
                if !seen[w] && !c[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        true
    }

    /// Minimal sufficient adjustment sets for the total effect of `exposure`
    /// on `outcome`, using observed (non-latent) nodes only. Sets come back
    /// sorted by size, then lexicographically.
    pub fn minimal_adjustment_sets(&self, exposure: &str, outcome: &str) -> Result<Vec<NodeSet>> {
        let x = self.node(exposure)?;
        let y = self.node(outcome)?;
        if x == y {
            return Err(Error::Domain("exposure and outcome must differ".into()));
        }
        let n = self.len();
        let de_x = self.descendants(x);
        let an_y = self.ancestors(y);
        // Nodes on proper causal paths, other than the exposure.
        let on_path: Vec<bool> = (0..n).map(|v| v != x && de_x[v] && an_y[v]).collect();
        let forbidden = {
            let mut f = self.closure(&on_path, false);
            f[x] = true;
            f
        };
        let candidates: Vec<usize> = (0..n)
            .filter(|&v| !forbidden[v] && v != y && !self.nodes[v].is_latent())
            .collect();
        if candidates.len() > 24 {
            return Err(Error::Domain(format!(
                "{} candidate adjustment variables is too many for exhaustive search",
                candidates.len()
            )));
        }
        let skip = |u: usize, v: usize| u == x && on_path[v];
        let mut xa = vec![false; n];
        xa[x] = true;
        let mut ya = vec![false; n];
        ya[y] = true;

        let mut masks: Vec<u32> = (0..1u32 << candidates.len()).collect();
        masks.sort_by_key(|m| m.count_ones());
        let mut found: Vec<u32> = Vec::new();
        for m in masks {
            if found.iter().any(|&f| f & m == f) {
                continue;
            }
            let mut z = vec![false; n];
            for (k, &v) in candidates.iter().enumerate() {
                if m >> k & 1 == 1 {
                    z[v] = true;
                }
            }
            if self.d_separated_idx(&xa, &ya, &z, Some(&skip)) {
                found.push(m);
            }
        }
        let mut sets: Vec<NodeSet> = found
            .into_iter()
            .map(|m| {
                candidates
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| m >> k & 1 == 1)
                    .map(|(_, &v)| self.name(v).to_string())
                    .collect()
            })
            .collect();
        sets.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
        Ok(sets)
    }

    /// Canonical DAGitty text: settings, nodes in declaration order, then edges.
    pub fn to_dagitty(&self) -> String {
        let attrs = |a: &[Attr]| {
            if a.is_empty() {
                String::new()
            } else {
                let inner: Vec<String> = a.iter().map(Attr::to_string).collect();
                format!(" [{}]", inner.join(","))
            }
        };
        let mut s = String::from("dag {\n");
        for a in &self.settings {
            let _ = writeln!(s, "{a}");
        }
        for v in &self.nodes {
            let _ = writeln!(s, "{}{}", v.name, attrs(&v.attrs));
        }
        for e in &self.edges {
            let _ = writeln!(
                s,
                "{} -> {}{}",
                self.name(e.from),
                self.name(e.to),
                attrs(&e.attrs)
            );
        }
        s.push_str("}\n");
        s
    }
}

/// Formats a set as `a,b,c`.
pub fn format_set(set: &NodeSet) -> String {
    set.iter().cloned().collect::<Vec<_>>().join(",")
}
