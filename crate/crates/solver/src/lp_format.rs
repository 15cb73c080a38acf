//! Reader and writer for the CPLEX LP text format (the subset needed here:
//! objective, linear rows, bounds, binaries).

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::SolverError;
use crate::lp::{LinearProgram, ObjectiveSense, Sense};
use crate::milp::MilpModel;

fn valid_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || "!\"#$%&()/,.;?@_`'{}|~".contains(c)
}

fn sanitize(name: &str) -> String {
    let mut s: String = name.chars().map(|c| if valid_name_char(c) { c } else { '_' }).collect();
    if s.is_empty() || s.starts_with(|c: char| c.is_ascii_digit() || c == '.') || is_keyword(&s) {
        s.insert(0, '_');
    }
    s
}

fn is_keyword(s: &str) -> bool {
    matches!(
        s.to_ascii_lowercase().as_str(),
        "free" | "inf" | "infinity" | "end" | "bounds" | "binaries" | "binary" | "bin" | "generals" | "st" | "s.t."
    )
}

fn unique_names(raw: impl Iterator<Item = String>) -> Vec<String> {
    let mut seen = HashSet::new();
    raw.enumerate()
        .map(|(k, n)| {
            let mut s = sanitize(&n);
            if !seen.insert(s.clone()) {
                s = format!("{s}__{k}");
                seen.insert(s.clone());
            }
            s
        })
        .collect()
}

fn fmt_num(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:?}")
    }
}

fn write_terms(out: &mut String, terms: impl Iterator<Item = (f64, String)>, keep_zero: bool) {
    let mut first = true;
    let mut width = 0;
    for (a, name) in terms {
        if a == 0.0 && !keep_zero {
            continue;
        }
        let sign = if a < 0.0 { "-" } else { "+" };
        let mag = a.abs();
        let term = if mag == 0.0 {
            format!("+ 0 {name}")
        } else if mag == 1.0 { format!("{sign} {name}") } else { format!("{sign} {} {name}", fmt_num(mag)) };
        if !first {
            out.push(' ');
        }
        if width > 200 {
            out.push_str("\n   ");
            width = 0;
        }
        width += term.len();
        out.push_str(&term);
        first = false;
    }
    if first {
        out.push('0');
    }
}

/// Render `model` as LP-format text.
pub fn write_lp(model: &MilpModel) -> String {
    let lp = &model.lp;
    let cols = unique_names((0..lp.num_cols()).map(|j| lp.col_name(j)));
    let rows = unique_names((0..lp.num_rows()).map(|i| lp.row_name(i)));
    let mut out = String::new();
    out.push_str(match lp.sense {
        ObjectiveSense::Minimize => "Minimize\n",
        ObjectiveSense::Maximize => "Maximize\n",
    });
    out.push_str(" obj: ");
    // Zero terms are kept so every column is declared in its original order.
    write_terms(&mut out, lp.objective.iter().enumerate().map(|(j, &c)| (c, cols[j].clone())), true);
    if lp.objective_offset != 0.0 {
        let sign = if lp.objective_offset < 0.0 { "-" } else { "+" };
        let _ = write!(out, " {sign} {}", fmt_num(lp.objective_offset.abs()));
    }
    out.push_str("\nSubject To\n");
    for (i, row) in lp.rows.iter().enumerate() {
        let _ = write!(out, " {}: ", rows[i]);
        write_terms(&mut out, row.coeffs.iter().map(|&(j, a)| (a, cols[j].clone())), false);
        let op = match row.sense {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        };
        let _ = writeln!(out, " {op} {}", fmt_num(row.rhs));
    }
    out.push_str("Bounds\n");
    let binary: HashSet<usize> = model.binaries.iter().copied().collect();
    for j in 0..lp.num_cols() {
        let (l, u) = (lp.lower[j], lp.upper[j]);
        if binary.contains(&j) && l == 0.0 && u == 1.0 {
            continue;
        }
        if l == 0.0 && u == f64::INFINITY {
            continue;
        }
        let name = &cols[j];
        if l == u {
            let _ = writeln!(out, " {name} = {}", fmt_num(l));
        } else if l == f64::NEG_INFINITY && u == f64::INFINITY {
            let _ = writeln!(out, " {name} free");
        } else {
            let _ = writeln!(out, " {} <= {name} <= {}", fmt_num(l), fmt_num(u));
        }
    }
    if !model.binaries.is_empty() {
        out.push_str("Binaries\n");
        for &j in &model.binaries {
            let _ = writeln!(out, " {}", cols[j]);
        }
    }
    out.push_str("End\n");
    out
}

pub fn write_lp_file(model: &MilpModel, path: &Path) -> Result<(), SolverError> {
    std::fs::write(path, write_lp(model))?;
    Ok(())
}

pub fn read_lp_file(path: &Path) -> Result<MilpModel, SolverError> {
    read_lp(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Name(String),
    Plus,
    Minus,
    Colon,
    Op(Sense),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Section {
    Objective,
    Constraints,
    Bounds,
    Binaries,
}

fn tokenize(line: &str, lineno: usize) -> Result<Vec<Tok>, SolverError> {
    let mut toks = Vec::new();
    let chars: Vec<char> = line.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '\\' {
            break;
        } else if c == '+' {
            toks.push(Tok::Plus);
            i += 1;
        } else if c == '-' {
            toks.push(Tok::Minus);
            i += 1;
        } else if c == ':' {
            toks.push(Tok::Colon);
            i += 1;
        } else if c == '<' || c == '>' || c == '=' {
            let mut j = i + 1;
            while j < chars.len() && (chars[j] == '=' || chars[j] == '<' || chars[j] == '>') {
                j += 1;
            }
            let op: String = chars[i..j].iter().collect();
            let sense = match op.as_str() {
                "<=" | "=<" | "<" => Sense::Le,
                ">=" | "=>" | ">" => Sense::Ge,
                "=" => Sense::Eq,
                _ => return Err(SolverError::Parse { line: lineno, detail: format!("bad operator `{op}`") }),
            };
            toks.push(Tok::Op(sense));
            i = j;
        } else if c.is_ascii_digit() || c == '.' {
            let mut j = i;
            while j < chars.len()
                && (chars[j].is_ascii_digit()
                    || chars[j] == '.'
                    || ((chars[j] == 'e' || chars[j] == 'E')
                        && j + 1 < chars.len()
                        && (chars[j + 1].is_ascii_digit() || chars[j + 1] == '+' || chars[j + 1] == '-'))
                    || ((chars[j] == '+' || chars[j] == '-') && j > i && (chars[j - 1] == 'e' || chars[j - 1] == 'E')))
            {
                j += 1;
            }
            let s: String = chars[i..j].iter().collect();
            let v = s
                .parse::<f64>()
                .map_err(|_| SolverError::Parse { line: lineno, detail: format!("bad number `{s}`") })?;
            toks.push(Tok::Num(v));
            i = j;
        } else if valid_name_char(c) || c == '[' || c == ']' {
            let mut j = i;
            while j < chars.len() && (valid_name_char(chars[j]) || chars[j] == '[' || chars[j] == ']') {
                j += 1;
            }
            let s: String = chars[i..j].iter().collect();
            let lower = s.to_ascii_lowercase();
            if lower == "inf" || lower == "infinity" {
                toks.push(Tok::Num(f64::INFINITY));
            } else {
                toks.push(Tok::Name(s));
            }
            i = j;
        } else {
            return Err(SolverError::Parse { line: lineno, detail: format!("unexpected character `{c}`") });
        }
    }
    Ok(toks)
}

fn section_header(line: &str) -> Option<Result<Option<Section>, ObjectiveSense>> {
    let l = line.trim().to_ascii_lowercase();
    match l.as_str() {
        "minimize" | "minimise" | "minimum" | "min" => Some(Err(ObjectiveSense::Minimize)),
        "maximize" | "maximise" | "maximum" | "max" => Some(Err(ObjectiveSense::Maximize)),
        "subject to" | "such that" | "st" | "s.t." | "st." => Some(Ok(Some(Section::Constraints))),
        "bounds" | "bound" => Some(Ok(Some(Section::Bounds))),
        "binaries" | "binary" | "bin" => Some(Ok(Some(Section::Binaries))),
        "end" => Some(Ok(None)),
        _ => None,
    }
}

struct Reader {
    lp: LinearProgram,
    index: HashMap<String, usize>,
    binaries: Vec<usize>,
}

impl Reader {
    fn col(&mut self, name: &str) -> usize {
        if let Some(&j) = self.index.get(name) {
            return j;
        }
        let j = self.lp.add_named_col(name, 0.0, f64::INFINITY, 0.0);
        self.index.insert(name.to_string(), j);
        j
    }

    /// Parse `[+|-] [num] [name]` terms. Returns the linear part and constant.
    fn linear(&mut self, toks: &[Tok], line: usize) -> Result<(Vec<(usize, f64)>, f64), SolverError> {
        let mut coeffs: Vec<(usize, f64)> = Vec::new();
        let mut constant = 0.0;
        let mut i = 0;
        while i < toks.len() {
            let mut sign = 1.0;
            while let Some(t @ (Tok::Plus | Tok::Minus)) = toks.get(i) {
                if *t == Tok::Minus {
                    sign = -sign;
                }
                i += 1;
            }
            let mut coef = None;
            if let Some(Tok::Num(v)) = toks.get(i) {
                coef = Some(*v);
                i += 1;
            }
            match toks.get(i) {
                Some(Tok::Name(n)) => {
                    let j = self.col(n);
                    let a = sign * coef.unwrap_or(1.0);
                    match coeffs.iter_mut().find(|(k, _)| *k == j) {
                        Some(e) => e.1 += a,
                        None => coeffs.push((j, a)),
                    }
                    i += 1;
                }
                _ => match coef {
                    Some(v) => constant += sign * v,
                    None => {
                        return Err(SolverError::Parse { line, detail: "dangling sign in expression".into() })
                    }
                },
            }
        }
        Ok((coeffs, constant))
    }

    fn bound(&mut self, toks: &[Tok], line: usize) -> Result<(), SolverError> {
        let err = |d: &str| SolverError::Parse { line, detail: d.to_string() };
        // Collapse signed numbers.
        let mut items: Vec<Tok> = Vec::new();
        let mut k = 0;
        while k < toks.len() {
            match (&toks[k], toks.get(k + 1)) {
                (Tok::Minus, Some(Tok::Num(v))) => {
                    items.push(Tok::Num(-v));
                    k += 2;
                }
                (Tok::Plus, Some(Tok::Num(v))) => {
                    items.push(Tok::Num(*v));
                    k += 2;
                }
                (t, _) => {
                    items.push(t.clone());
                    k += 1;
                }
            }
        }
        match items.as_slice() {
            [Tok::Name(n), Tok::Name(f)] if f.eq_ignore_ascii_case("free") => {
                let j = self.col(n);
                self.lp.lower[j] = f64::NEG_INFINITY;
                self.lp.upper[j] = f64::INFINITY;
            }
            [Tok::Num(l), Tok::Op(Sense::Le), Tok::Name(n), Tok::Op(Sense::Le), Tok::Num(u)] => {
                let j = self.col(n);
                self.lp.lower[j] = *l;
                self.lp.upper[j] = *u;
            }
            [Tok::Name(n), Tok::Op(op), Tok::Num(v)] => {
                let j = self.col(n);
                match op {
                    Sense::Le => self.lp.upper[j] = *v,
                    Sense::Ge => self.lp.lower[j] = *v,
                    Sense::Eq => {
                        self.lp.lower[j] = *v;
                        self.lp.upper[j] = *v;
                    }
                }
            }
            [Tok::Num(v), Tok::Op(op), Tok::Name(n)] => {
                let j = self.col(n);
                match op {
                    Sense::Le => self.lp.lower[j] = *v,
                    Sense::Ge => self.lp.upper[j] = *v,
                    Sense::Eq => {
                        self.lp.lower[j] = *v;
                        self.lp.upper[j] = *v;
                    }
                }
            }
            _ => return Err(err("unsupported bound syntax")),
        }
        Ok(())
    }
}

/// Parse LP-format text into a model. Column order follows first appearance.
pub fn read_lp(text: &str) -> Result<MilpModel, SolverError> {
    let mut r = Reader {
        lp: LinearProgram::new(ObjectiveSense::Minimize),
        index: HashMap::new(),
        binaries: Vec::new(),
    };
    let mut section: Option<Section> = None;
    let mut pending: Vec<Tok> = Vec::new();
    let mut pending_line = 0;
    let mut objective_toks: Vec<Tok> = Vec::new();
    let mut objective_line = 0;
    let mut seen_end = false;

    for (k, raw) in text.lines().enumerate() {
        let lineno = k + 1;
        if raw.trim().is_empty() || raw.trim_start().starts_with('\\') {
            continue;
        }
        if let Some(h) = section_header(raw) {
            if !pending.is_empty() {
                return Err(SolverError::Parse { line: pending_line, detail: "incomplete constraint".into() });
            }
            if section == Some(Section::Objective) {
                parse_objective(&mut r, &std::mem::take(&mut objective_toks), objective_line)?;
            }
            match h {
                Err(sense) => {
                    r.lp.sense = sense;
                    section = Some(Section::Objective);
                    objective_line = lineno;
                }
                Ok(Some(s)) => section = Some(s),
                Ok(None) => {
                    seen_end = true;
                    break;
                }
            }
            continue;
        }
        let toks = tokenize(raw, lineno)?;
        match section {
            None => return Err(SolverError::Parse { line: lineno, detail: "content before objective section".into() }),
            Some(Section::Objective) => objective_toks.extend(toks),
            Some(Section::Constraints) => {
                if pending.is_empty() {
                    pending_line = lineno;
                }
                pending.extend(toks);
                // Complete once an operator is followed by a right-hand side.
                let op_pos = pending.iter().position(|t| matches!(t, Tok::Op(_)));
                let complete = op_pos.is_some_and(|p| pending[p + 1..].iter().any(|t| matches!(t, Tok::Num(_))));
                if complete {
                    let toks = std::mem::take(&mut pending);
                    parse_row(&mut r, &toks, pending_line)?;
                }
            }
            Some(Section::Bounds) => r.bound(&toks, lineno)?,
            Some(Section::Binaries) => {
                for t in toks {
                    match t {
                        Tok::Name(n) => {
                            let j = r.col(&n);
                            r.binaries.push(j);
                            r.lp.lower[j] = r.lp.lower[j].max(0.0);
                            r.lp.upper[j] = r.lp.upper[j].min(1.0);
                        }
                        _ => return Err(SolverError::Parse { line: lineno, detail: "expected binary name".into() }),
                    }
                }
            }
        }
    }
    if !seen_end {
        return Err(SolverError::Parse { line: text.lines().count(), detail: "missing End".into() });
    }
    if !pending.is_empty() {
        return Err(SolverError::Parse { line: pending_line, detail: "incomplete constraint".into() });
    }
    let model = MilpModel { lp: r.lp, binaries: r.binaries };
    model.check()?;
    Ok(model)
}

fn parse_objective(r: &mut Reader, toks: &[Tok], line: usize) -> Result<(), SolverError> {
    let body = match toks.iter().position(|t| *t == Tok::Colon) {
        Some(p) => &toks[p + 1..],
        None => toks,
    };
    let (coeffs, constant) = r.linear(body, line)?;
    for (j, c) in coeffs {
        r.lp.objective[j] += c;
    }
    r.lp.objective_offset = constant;
    Ok(())
}

fn parse_row(r: &mut Reader, toks: &[Tok], line: usize) -> Result<(), SolverError> {
    let (name, body) = match toks {
        [Tok::Name(n), Tok::Colon, rest @ ..] => (Some(n.clone()), rest),
        _ => (None, toks),
    };
    let p = body.iter().position(|t| matches!(t, Tok::Op(_))).unwrap();
    let Tok::Op(sense) = body[p] else { unreachable!() };
    let (lhs, lconst) = r.linear(&body[..p], line)?;
    let (rhs_lin, rconst) = r.linear(&body[p + 1..], line)?;
    if !rhs_lin.is_empty() {
        return Err(SolverError::Parse { line, detail: "variables on right-hand side".into() });
    }
    let rhs = rconst - lconst;
    match name {
        Some(n) => r.lp.add_named_row(n, lhs, sense, rhs),
        None => r.lp.add_row(lhs, sense, rhs),
    };
    Ok(())
}
