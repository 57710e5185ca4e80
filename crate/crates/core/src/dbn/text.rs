//! Canonical text form: one declaration per line, rules in prefix notation.
//!
//! ```text
//! actions a b c d
//! state s = (choice 99/100 (xor prev.r prev.v) (not (xor prev.r prev.v)))
//! state r = prev.s
//! state v = prev.r
//! obs o = (ite act.b act.c cur.s)
//! obs p = (ite act.b act.d cur.v)
//! init uniform
//! ```
//!
//! `init` is `uniform`, `point <bits>` or `weights <w0> <w1> ...`. Blank lines
//! and `#` comments are accepted on input and never emitted.

use std::fmt::{self, Write as _};

use super::{DbnError, DbnProgram, Expr, Fraction, InitDist, Rule, StateVec};

fn is_ident(s: &str) -> bool {
    !s.is_empty()
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '\'')
        && !s.starts_with(|c: char| c.is_ascii_digit())
}

struct Names<'a> {
    state: &'a [String],
    actions: &'a [String],
}

fn write_expr(out: &mut String, e: &Expr, names: &Names) {
    match e {
        Expr::Const(v) => out.push_str(if *v { "true" } else { "false" }),
        Expr::Prev(i) => {
            let _ = write!(out, "prev.{}", names.state[*i]);
        }
        Expr::Cur(i) => {
            let _ = write!(out, "cur.{}", names.state[*i]);
        }
        Expr::Act(i) => {
            let _ = write!(out, "act.{}", names.actions[*i]);
        }
        Expr::Not(a) => {
            out.push_str("(not ");
            write_expr(out, a, names);
            out.push(')');
        }
        Expr::And(a, b) | Expr::Or(a, b) | Expr::Xor(a, b) => {
            let op = match e {
                Expr::And(..) => "and",
                Expr::Or(..) => "or",
                _ => "xor",
            };
            let _ = write!(out, "({op} ");
            write_expr(out, a, names);
            out.push(' ');
            write_expr(out, b, names);
            out.push(')');
        }
        Expr::Ite(c, t, f) => {
            out.push_str("(ite ");
            write_expr(out, c, names);
            out.push(' ');
            write_expr(out, t, names);
            out.push(' ');
            write_expr(out, f, names);
            out.push(')');
        }
        Expr::Choice(p, t, f) => {
            let _ = write!(out, "(choice {p} ");
            write_expr(out, t, names);
            out.push(' ');
            write_expr(out, f, names);
            out.push(')');
        }
    }
}

impl DbnProgram {
    /// Renders one rule expression with this program's variable names.
    pub fn expr_to_string(&self, e: &Expr) -> String {
        let state: Vec<String> = self.state_rules().iter().map(|r| r.name.clone()).collect();
        let names = Names { state: &state, actions: self.action_names() };
        let mut out = String::new();
        write_expr(&mut out, e, &names);
        out
    }

    pub fn to_text(&self) -> String {
        self.to_string()
    }

    pub fn from_text(text: &str) -> Result<DbnProgram, DbnError> {
        parse(text)
    }
}

impl fmt::Display for DbnProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "actions")?;
        for a in self.action_names() {
            write!(f, " {a}")?;
        }
        writeln!(f)?;
        for r in self.state_rules() {
            writeln!(f, "state {} = {}", r.name, self.expr_to_string(&r.expr))?;
        }
        for r in self.obs_rules() {
            writeln!(f, "obs {} = {}", r.name, self.expr_to_string(&r.expr))?;
        }
        match self.init() {
            InitDist::Uniform => writeln!(f, "init uniform"),
            InitDist::Point(s) => writeln!(f, "init point {s}"),
            InitDist::Weights(w) => {
                write!(f, "init weights")?;
                for x in w {
                    write!(f, " {x}")?;
                }
                writeln!(f)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token<'a> {
    Open,
    Close,
    Atom(&'a str),
}

fn tokenize(s: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in s.char_indices() {
        if c == '(' || c == ')' || c.is_whitespace() {
            if let Some(st) = start.take() {
                out.push(Token::Atom(&s[st..i]));
            }
            match c {
                '(' => out.push(Token::Open),
                ')' => out.push(Token::Close),
                _ => {}
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(st) = start {
        out.push(Token::Atom(&s[st..]));
    }
    out
}

struct ExprParser<'a, 't> {
    tokens: &'t [Token<'a>],
    pos: usize,
    state: &'t [String],
    actions: &'t [String],
}

impl<'a> ExprParser<'a, '_> {
    fn next(&mut self) -> Result<Token<'a>, String> {
        let t = self.tokens.get(self.pos).cloned().ok_or("unexpected end of expression")?;
        self.pos += 1;
        Ok(t)
    }

    fn lookup(names: &[String], name: &str, what: &str) -> Result<usize, String> {
        names.iter().position(|n| n == name).ok_or_else(|| format!("unknown {what} `{name}`"))
    }

    fn expr(&mut self) -> Result<Expr, String> {
        match self.next()? {
            Token::Close => Err("unexpected `)`".into()),
            Token::Atom(a) => self.atom(a),
            Token::Open => {
                let op = match self.next()? {
                    Token::Atom(a) => a,
                    _ => return Err("expected operator after `(`".into()),
                };
                let e = match op {
                    "not" => Expr::not(self.expr()?),
                    "and" => Expr::and(self.expr()?, self.expr()?),
                    "or" => Expr::or(self.expr()?, self.expr()?),
                    "xor" => Expr::xor(self.expr()?, self.expr()?),
                    "ite" => Expr::ite(self.expr()?, self.expr()?, self.expr()?),
                    "choice" => {
                        let p = match self.next()? {
                            Token::Atom(a) => a.parse::<Fraction>().map_err(|e| e.to_string())?,
                            _ => return Err("expected fraction after `choice`".into()),
                        };
                        Expr::choice(p, self.expr()?, self.expr()?)
                    }
                    other => return Err(format!("unknown operator `{other}`")),
                };
                match self.next()? {
                    Token::Close => Ok(e),
                    _ => Err(format!("too many operands for `{op}`")),
                }
            }
        }
    }

    fn atom(&self, a: &str) -> Result<Expr, String> {
        match a {
            "true" => return Ok(Expr::Const(true)),
            "false" => return Ok(Expr::Const(false)),
            _ => {}
        }
        let (scope, name) = a.split_once('.').ok_or_else(|| format!("bad atom `{a}`"))?;
        match scope {
            "prev" => Ok(Expr::Prev(Self::lookup(self.state, name, "state variable")?)),
            "cur" => Ok(Expr::Cur(Self::lookup(self.state, name, "state variable")?)),
            "act" => Ok(Expr::Act(Self::lookup(self.actions, name, "action")?)),
            _ => Err(format!("bad scope `{scope}`")),
        }
    }
}

fn parse(text: &str) -> Result<DbnProgram, DbnError> {
    enum Decl<'a> {
        State(&'a str, &'a str, usize),
        Obs(&'a str, &'a str, usize),
    }
    let perr = |line: usize, msg: String| DbnError::Parse { line, msg };

    let mut actions: Option<Vec<String>> = None;
    let mut decls = Vec::new();
    let mut init_line = None;
    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (kw, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let rest = rest.trim();
        match kw {
            "actions" => {
                if actions.is_some() {
                    return Err(perr(line_no, "duplicate `actions` line".into()));
                }
                let names: Vec<String> = rest.split_whitespace().map(str::to_owned).collect();
                if let Some(bad) = names.iter().find(|n| !is_ident(n)) {
                    return Err(perr(line_no, format!("bad identifier `{bad}`")));
                }
                actions = Some(names);
            }
            "state" | "obs" => {
                let (name, body) = rest
                    .split_once('=')
                    .ok_or_else(|| perr(line_no, "expected `<name> = <expr>`".into()))?;
                let name = name.trim();
                if !is_ident(name) {
                    return Err(perr(line_no, format!("bad identifier `{name}`")));
                }
                decls.push(if kw == "state" {
                    Decl::State(name, body.trim(), line_no)
                } else {
                    Decl::Obs(name, body.trim(), line_no)
                });
            }
            "init" => {
                if init_line.is_some() {
                    return Err(perr(line_no, "duplicate `init` line".into()));
                }
                init_line = Some((rest, line_no));
            }
            other => return Err(perr(line_no, format!("unknown declaration `{other}`"))),
        }
    }

    let actions = actions.unwrap_or_default();
    let state_names: Vec<String> = decls
        .iter()
        .filter_map(|d| match d {
            Decl::State(n, ..) => Some((*n).to_owned()),
            Decl::Obs(..) => None,
        })
        .collect();

    let parse_body = |body: &str, line: usize| -> Result<Expr, DbnError> {
        let tokens = tokenize(body);
        let mut p = ExprParser { tokens: &tokens, pos: 0, state: &state_names, actions: &actions };
        let e = p.expr().map_err(|m| perr(line, m))?;
        if p.pos != tokens.len() {
            return Err(perr(line, "trailing tokens after expression".into()));
        }
        Ok(e)
    };

    let mut state = Vec::new();
    let mut obs = Vec::new();
    for d in &decls {
        match d {
            Decl::State(n, body, line) => state.push(Rule::new(*n, parse_body(body, *line)?)),
            Decl::Obs(n, body, line) => obs.push(Rule::new(*n, parse_body(body, *line)?)),
        }
    }

    let init = match init_line {
        None => InitDist::Uniform,
        Some((rest, line)) => {
            let mut words = rest.split_whitespace();
            match words.next() {
                Some("uniform") => InitDist::Uniform,
                Some("point") => {
                    let bits: StateVec = words
                        .next()
                        .ok_or_else(|| perr(line, "missing point state".into()))?
                        .parse()
                        .map_err(|e: DbnError| perr(line, e.to_string()))?;
                    InitDist::Point(bits)
                }
                Some("weights") => InitDist::Weights(
                    words
                        .map(|w| w.parse::<f64>().map_err(|_| perr(line, format!("bad weight `{w}`"))))
                        .collect::<Result<_, _>>()?,
                ),
                _ => return Err(perr(line, "expected uniform, point or weights".into())),
            }
        }
    };

    DbnProgram::new(actions, state, obs, init)
}

#[cfg(test)]
mod tests {
    use super::*;

    const Q67: &str = "actions a b c d
state s = (choice 99/100 (xor prev.r prev.v) (not (xor prev.r prev.v)))
state r = prev.s
state v = prev.r
obs o = (ite act.b act.c cur.s)
obs p = (ite act.b act.d cur.v)
init uniform
";

    #[test]
    fn canonical_form_is_a_fixed_point() {
        let p = DbnProgram::from_text(Q67).unwrap();
        assert_eq!(p.to_text(), Q67);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let noisy = format!("# header\n\n{}", Q67.replace("init uniform", "init uniform # default"));
        assert_eq!(DbnProgram::from_text(&noisy).unwrap().to_text(), Q67);
    }

    #[test]
    fn init_variants_round_trip() {
        for init in ["init point 101", "init weights 0.5 0 0 0 0 0 0 0.5"] {
            let text = Q67.replace("init uniform", init);
            assert_eq!(DbnProgram::from_text(&text).unwrap().to_text(), text);
        }
    }

    #[test]
    fn reports_line_of_error() {
        let bad = Q67.replace("prev.s", "prev.q");
        match DbnProgram::from_text(&bad).unwrap_err() {
            DbnError::Parse { line, msg } => {
                assert_eq!(line, 3);
                assert!(msg.contains("unknown state variable"));
            }
            e => panic!("unexpected {e:?}"),
        }
        assert!(DbnProgram::from_text("state s = (not prev.s prev.s)").is_err());
        assert!(DbnProgram::from_text("state s = (choice 1/1 true false)").is_err());
        assert!(DbnProgram::from_text("frobnicate").is_err());
    }
}
