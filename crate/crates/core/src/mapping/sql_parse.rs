//! Parser for the mapping-script SQL subset:
//!
//! ```text
//! script    := { statement ";" }
//! statement := INSERT INTO name [ "(" name { "," name } ")" ]
//!              SELECT [DISTINCT] expr [AS name] { "," expr [AS name] }
//!              FROM table { ("," table) | ([INNER] JOIN table ON conj) }
//!              [ WHERE conj ]
//! table     := name [AS] [alias]
//! conj      := cond { AND cond }
//! cond      := expr op expr | "(" cond ")"
//! expr      := column | literal | NULL | func "(" [ expr { "," expr } ] ")"
//! ```
//!
//! `SKOLEM('<rule>', '<var>', ...)` marks a generated key: statements sharing
//! the rule tag and the same `FROM`/`WHERE` become one rule. A preceding
//! `-- rule <id>` comment groups statements that carry no SKOLEM term.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::transform::transform_arity;
use super::{Atom, CmpOp, FilterPred, Mapping, Rule, Term};
use crate::schema::{SchemaDef, Value};

const KEYWORDS: &[&str] = &[
    "select", "from", "where", "insert", "into", "and", "or", "as", "join", "inner", "on",
    "distinct", "null", "not", "left", "right", "full", "outer", "values", "group", "order", "by",
    "union", "limit", "table", "create", "cross",
];

pub(super) fn is_keyword(word: &str) -> bool {
    KEYWORDS.contains(&word.to_ascii_lowercase().as_str())
}

/// A statement that could not be turned into (part of) a rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    /// Zero-based statement index within the script.
    pub statement: usize,
    pub message: String,
    pub excerpt: String,
}

#[derive(Debug, Clone)]
pub struct ParsedScript {
    pub mapping: Mapping,
    pub diagnostics: Vec<Diagnostic>,
}

/// Pulls the mapping script out of a model response: the last fenced block
/// tagged `sql`, else the last fenced block, else the whole text.
pub fn extract_script(response: &str) -> String {
    let mut blocks: Vec<(String, String)> = Vec::new();
    let mut rest = response;
    while let Some(start) = rest.find("```") {
        let after = &rest[start + 3..];
        let (info, body_start) = match after.find('\n') {
            Some(nl) => (after[..nl].trim().to_ascii_lowercase(), nl + 1),
            None => break,
        };
        let body = &after[body_start..];
        match body.find("```") {
            Some(end) => {
                blocks.push((info, body[..end].to_string()));
                rest = &body[end + 3..];
            }
            None => {
                blocks.push((info, body.to_string()));
                break;
            }
        }
    }
    if let Some((_, b)) = blocks.iter().rev().find(|(info, _)| info == "sql") {
        return b.clone();
    }
    match blocks.last() {
        Some((_, b)) => b.clone(),
        None => response.to_string(),
    }
}

/// Parses a script into rules. Statements that fail become diagnostics; the
/// remaining rules are returned.
pub fn parse_rule_script(text: &str, source: Arc<SchemaDef>, target: Arc<SchemaDef>) -> ParsedScript {
    let mut diagnostics = Vec::new();
    let mut groups: Vec<Group> = Vec::new();
    let mut comment_tag: Option<String> = None;
    let mut untagged = 0usize;

    for (index, chunk) in split_statements(text).into_iter().enumerate() {
        let excerpt = excerpt(&chunk);
        let diag = |message: String| Diagnostic {
            statement: index,
            message,
            excerpt: excerpt.clone(),
        };
        let lexed = match lex(&chunk) {
            Ok(l) => l,
            Err(e) => {
                diagnostics.push(diag(e));
                continue;
            }
        };
        if let Some(tag) = lexed.rule_tag {
            comment_tag = Some(tag);
        }
        if lexed.tokens.is_empty() {
            continue;
        }
        let stmt = match Parser::new(lexed.tokens).statement() {
            Ok(s) => s,
            Err(e) => {
                diagnostics.push(diag(e));
                continue;
            }
        };
        let resolved = match resolve(&stmt, &source, &target) {
            Ok(r) => r,
            Err(e) => {
                diagnostics.push(diag(e));
                continue;
            }
        };
        let tag = match (&resolved.skolem_tag, &comment_tag) {
            (Some(t), _) => t.clone(),
            (None, Some(t)) => t.clone(),
            (None, None) => {
                untagged += 1;
                format!("stmt{untagged}")
            }
        };
        match groups
            .iter_mut()
            .find(|g| g.tag == tag && g.body == resolved.body)
        {
            Some(g) => {
                g.statements.push(index);
                g.target_atoms.push(resolved.target_atom);
                g.existentials.extend(resolved.existentials);
            }
            None => groups.push(Group {
                tag,
                body: resolved.body,
                statements: vec![index],
                target_atoms: vec![resolved.target_atom],
                existentials: resolved.existentials,
            }),
        }
    }

    let mut used_ids = BTreeSet::new();
    let mut rules = Vec::new();
    for g in groups {
        let mut id = g.tag.clone();
        let mut n = 2;
        while !used_ids.insert(id.clone()) {
            id = format!("{}#{n}", g.tag);
            n += 1;
        }
        let rule = Rule {
            id,
            universals: g.body.universals,
            source_atoms: g.body.source_atoms,
            filters: g.body.filters,
            existentials: g.existentials.into_iter().collect(),
            target_atoms: g.target_atoms,
        };
        match Mapping::new(source.clone(), target.clone(), vec![rule.clone()]) {
            Ok(_) => rules.push(rule),
            Err(e) => diagnostics.push(Diagnostic {
                statement: g.statements[0],
                message: e.to_string(),
                excerpt: String::new(),
            }),
        }
    }
    diagnostics.sort_by_key(|d| d.statement);
    let mapping = Mapping::new(source, target, rules).expect("each rule validated individually");
    ParsedScript {
        mapping,
        diagnostics,
    }
}

struct Group {
    tag: String,
    body: Body,
    statements: Vec<usize>,
    target_atoms: Vec<Atom>,
    existentials: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
struct Body {
    universals: Vec<String>,
    source_atoms: Vec<Atom>,
    filters: Vec<FilterPred>,
}

struct Resolved {
    body: Body,
    target_atom: Atom,
    existentials: BTreeSet<String>,
    skolem_tag: Option<String>,
}

fn excerpt(chunk: &str) -> String {
    let flat: String = chunk.split_whitespace().collect::<Vec<_>>().join(" ");
    match flat.char_indices().nth(120) {
        Some((i, _)) => format!("{}...", &flat[..i]),
        None => flat,
    }
}

// ---------------------------------------------------------------- splitting

fn split_statements(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '\'' | '"' | '`' => {
                cur.push(c);
                while let Some(d) = chars.next() {
                    cur.push(d);
                    if d == c {
                        if chars.peek() == Some(&c) {
                            cur.push(chars.next().unwrap());
                        } else {
                            break;
                        }
                    }
                }
            }
            '-' if chars.peek() == Some(&'-') => {
                cur.push(c);
                for d in chars.by_ref() {
                    cur.push(d);
                    if d == '\n' {
                        break;
                    }
                }
            }
            '/' if chars.peek() == Some(&'*') => {
                cur.push(c);
                cur.push(chars.next().unwrap());
                let mut prev = ' ';
                for d in chars.by_ref() {
                    cur.push(d);
                    if prev == '*' && d == '/' {
                        break;
                    }
                    prev = d;
                }
            }
            ';' => out.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    if !cur.trim().is_empty() {
        out.push(cur);
    }
    out
}

// ------------------------------------------------------------------- lexing

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Quoted(String),
    Str(String),
    Num(f64),
    Sym(&'static str),
}

struct Lexed {
    tokens: Vec<Tok>,
    rule_tag: Option<String>,
}

fn lex(chunk: &str) -> Result<Lexed, String> {
    let mut tokens = Vec::new();
    let mut rule_tag = None;
    let chars: Vec<char> = chunk.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '-' && chars.get(i + 1) == Some(&'-') {
            let start = i + 2;
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            let comment: String = chars[start..i].iter().collect();
            let words: Vec<&str> = comment
                .split(|c: char| c.is_whitespace() || c == ':')
                .filter(|w| !w.is_empty())
                .collect();
            if words.len() == 2 && words[0].eq_ignore_ascii_case("rule") {
                rule_tag = Some(words[1].to_string());
            }
        } else if c == '/' && chars.get(i + 1) == Some(&'*') {
            i += 2;
            while i + 1 < chars.len() && !(chars[i] == '*' && chars[i + 1] == '/') {
                i += 1;
            }
            i += 2;
        } else if c == '\'' || c == '"' || c == '`' {
            let mut s = String::new();
            i += 1;
            loop {
                match chars.get(i) {
                    None => return Err("unterminated quoted text".into()),
                    Some(&d) if d == c => {
                        if chars.get(i + 1) == Some(&c) {
                            s.push(c);
                            i += 2;
                        } else {
                            i += 1;
                            break;
                        }
                    }
                    Some(&d) => {
                        s.push(d);
                        i += 1;
                    }
                }
            }
            tokens.push(if c == '\'' { Tok::Str(s) } else { Tok::Quoted(s) });
        } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(char::is_ascii_digit)) {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            tokens.push(Tok::Num(s.parse().map_err(|_| format!("bad number {s}"))?));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '$') {
                i += 1;
            }
            tokens.push(Tok::Word(chars[start..i].iter().collect()));
        } else {
            let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
            let sym = match two.as_str() {
                "<>" => Some("<>"),
                "!=" => Some("!="),
                "<=" => Some("<="),
                ">=" => Some(">="),
                "||" => Some("||"),
                _ => None,
            };
            if let Some(s) = sym {
                tokens.push(Tok::Sym(s));
                i += 2;
                continue;
            }
            let one = match c {
                '(' => "(",
                ')' => ")",
                ',' => ",",
                '.' => ".",
                '=' => "=",
                '<' => "<",
                '>' => ">",
                '*' => "*",
                '-' => "-",
                '+' => "+",
                _ => return Err(format!("unexpected character {c:?}")),
            };
            tokens.push(Tok::Sym(one));
            i += 1;
        }
    }
    Ok(Lexed { tokens, rule_tag })
}

// ------------------------------------------------------------------ parsing

#[derive(Debug, Clone, PartialEq)]
enum Expr {
    Column { qualifier: Option<String>, name: String },
    Lit(Value),
    Func { name: String, args: Vec<Expr> },
}

#[derive(Debug, Clone, PartialEq)]
struct Cond {
    left: Expr,
    op: CmpOp,
    right: Expr,
}

#[derive(Debug, Clone, PartialEq)]
struct Statement {
    target: String,
    columns: Option<Vec<String>>,
    exprs: Vec<Expr>,
    from: Vec<(String, Option<String>)>,
    conds: Vec<Cond>,
}

struct Parser {
    tokens: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn new(tokens: Vec<Tok>) -> Self {
        Self { tokens, pos: 0 }
    }

    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn peek_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Word(w)) if w.eq_ignore_ascii_case(kw))
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.peek_kw(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), String> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(format!("expected {} but found {}", kw.to_uppercase(), self.describe()))
        }
    }

    fn eat_sym(&mut self, sym: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Sym(s)) if *s == sym) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, sym: &str) -> Result<(), String> {
        if self.eat_sym(sym) {
            Ok(())
        } else {
            Err(format!("expected '{sym}' but found {}", self.describe()))
        }
    }

    fn describe(&self) -> String {
        match self.peek() {
            None => "end of statement".into(),
            Some(Tok::Word(w)) => format!("'{w}'"),
            Some(Tok::Quoted(w)) => format!("\"{w}\""),
            Some(Tok::Str(s)) => format!("string '{s}'"),
            Some(Tok::Num(n)) => format!("number {n}"),
            Some(Tok::Sym(s)) => format!("'{s}'"),
        }
    }

    fn name(&mut self) -> Result<String, String> {
        match self.peek().cloned() {
            Some(Tok::Word(w)) if !is_keyword(&w) => {
                self.pos += 1;
                Ok(w)
            }
            Some(Tok::Quoted(w)) => {
                self.pos += 1;
                Ok(w)
            }
            _ => Err(format!("expected a name but found {}", self.describe())),
        }
    }

    fn statement(mut self) -> Result<Statement, String> {
        // Skip leading prose up to the first INSERT.
        match self
            .tokens
            .iter()
            .position(|t| matches!(t, Tok::Word(w) if w.eq_ignore_ascii_case("insert")))
        {
            Some(p) => self.pos = p,
            None => {
                let first = self.describe();
                return Err(format!("unsupported statement starting with {first}; expected INSERT"));
            }
        }
        self.expect_kw("insert")?;
        self.expect_kw("into")?;
        let target = self.name()?;
        let columns = if self.eat_sym("(") {
            let mut cols = vec![self.name()?];
            while self.eat_sym(",") {
                cols.push(self.name()?);
            }
            self.expect_sym(")")?;
            Some(cols)
        } else {
            None
        };
        self.expect_kw("select")?;
        self.eat_kw("distinct");
        if self.eat_sym("*") {
            return Err("SELECT * is not supported; list the expressions".into());
        }
        let mut exprs = vec![self.select_item()?];
        while self.eat_sym(",") {
            exprs.push(self.select_item()?);
        }
        self.expect_kw("from")?;
        let mut from = vec![self.table()?];
        let mut conds = Vec::new();
        loop {
            if self.eat_sym(",") {
                from.push(self.table()?);
            } else if self.peek_kw("join") || self.peek_kw("inner") || self.peek_kw("cross") {
                let cross = self.eat_kw("cross");
                self.eat_kw("inner");
                self.expect_kw("join")?;
                from.push(self.table()?);
                if !cross {
                    self.expect_kw("on")?;
                    conds.extend(self.conjunction()?);
                }
            } else if self.peek_kw("left") || self.peek_kw("right") || self.peek_kw("full") {
                return Err("outer joins are not supported".into());
            } else {
                break;
            }
        }
        if self.eat_kw("where") {
            conds.extend(self.conjunction()?);
        }
        if self.peek().is_some() {
            return Err(format!("unexpected {} after statement", self.describe()));
        }
        Ok(Statement {
            target,
            columns,
            exprs,
            from,
            conds,
        })
    }

    fn select_item(&mut self) -> Result<Expr, String> {
        let e = self.expr()?;
        if self.eat_kw("as") {
            self.name()?;
        }
        Ok(e)
    }

    fn table(&mut self) -> Result<(String, Option<String>), String> {
        let rel = self.name()?;
        let alias = if self.eat_kw("as") {
            Some(self.name()?)
        } else {
            match self.peek() {
                Some(Tok::Word(w)) if !is_keyword(w) => Some(self.name()?),
                Some(Tok::Quoted(_)) => Some(self.name()?),
                _ => None,
            }
        };
        Ok((rel, alias))
    }

    fn conjunction(&mut self) -> Result<Vec<Cond>, String> {
        let mut conds = self.cond()?;
        loop {
            if self.eat_kw("and") {
                conds.extend(self.cond()?);
            } else if self.peek_kw("or") {
                return Err("OR conditions are not supported".into());
            } else {
                return Ok(conds);
            }
        }
    }

    fn cond(&mut self) -> Result<Vec<Cond>, String> {
        // A parenthesised condition, or a parenthesised expression on the left.
        if matches!(self.peek(), Some(Tok::Sym("("))) {
            let save = self.pos;
            self.pos += 1;
            if let Ok(inner) = self.conjunction() {
                if self.eat_sym(")") {
                    return Ok(inner);
                }
            }
            self.pos = save;
        }
        let left = self.expr()?;
        let op = match self.peek() {
            Some(Tok::Sym("=")) => CmpOp::Eq,
            Some(Tok::Sym("<>")) | Some(Tok::Sym("!=")) => CmpOp::Ne,
            Some(Tok::Sym("<")) => CmpOp::Lt,
            Some(Tok::Sym("<=")) => CmpOp::Le,
            Some(Tok::Sym(">")) => CmpOp::Gt,
            Some(Tok::Sym(">=")) => CmpOp::Ge,
            _ => return Err(format!("expected a comparison operator but found {}", self.describe())),
        };
        self.pos += 1;
        let right = self.expr()?;
        Ok(vec![Cond { left, op, right }])
    }

    fn expr(&mut self) -> Result<Expr, String> {
        match self.peek().cloned() {
            Some(Tok::Num(n)) => {
                self.pos += 1;
                Ok(Expr::Lit(Value::num(n)))
            }
            Some(Tok::Sym("-")) => {
                self.pos += 1;
                match self.peek().cloned() {
                    Some(Tok::Num(n)) => {
                        self.pos += 1;
                        Ok(Expr::Lit(Value::num(-n)))
                    }
                    _ => Err("expected a number after '-'".into()),
                }
            }
            Some(Tok::Str(s)) => {
                self.pos += 1;
                Ok(Expr::Lit(Value::Str(s)))
            }
            Some(Tok::Sym("(")) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            Some(Tok::Word(w)) if w.eq_ignore_ascii_case("null") => {
                self.pos += 1;
                Ok(Expr::Lit(Value::Null))
            }
            Some(Tok::Word(w)) if w.eq_ignore_ascii_case("true") || w.eq_ignore_ascii_case("false") => {
                self.pos += 1;
                Ok(Expr::Lit(Value::Str(w.to_ascii_lowercase())))
            }
            Some(Tok::Word(_)) | Some(Tok::Quoted(_)) => {
                let first = match self.peek().cloned() {
                    Some(Tok::Word(w)) if is_keyword(&w) => {
                        return Err(format!("unexpected keyword {w}"));
                    }
                    Some(Tok::Word(w)) | Some(Tok::Quoted(w)) => w,
                    _ => unreachable!(),
                };
                self.pos += 1;
                if self.eat_sym("(") {
                    let mut args = Vec::new();
                    if !self.eat_sym(")") {
                        args.push(self.expr()?);
                        while self.eat_sym(",") {
                            args.push(self.expr()?);
                        }
                        self.expect_sym(")")?;
                    }
                    Ok(Expr::Func { name: first, args })
                } else if self.eat_sym(".") {
                    let name = self.name()?;
                    Ok(Expr::Column {
                        qualifier: Some(first),
                        name,
                    })
                } else {
                    Ok(Expr::Column {
                        qualifier: None,
                        name: first,
                    })
                }
            }
            Some(Tok::Sym("||")) => Err("the || operator is not supported; use concat(...)".into()),
            _ => Err(format!("expected an expression but found {}", self.describe())),
        }
    }
}

// --------------------------------------------------------------- resolution

struct Scope<'a> {
    /// (alias or relation name, relation) per FROM entry.
    tables: Vec<(String, &'a crate::schema::RelationDef)>,
    offsets: Vec<usize>,
}

impl Scope<'_> {
    fn node(&self, qualifier: &Option<String>, name: &str) -> Result<usize, String> {
        let hits: Vec<usize> = self
            .tables
            .iter()
            .enumerate()
            .filter(|(_, (alias, _))| qualifier.as_ref().is_none_or(|q| q == alias))
            .filter_map(|(t, (_, rel))| rel.position(name).map(|p| self.offsets[t] + p))
            .collect();
        match (hits.len(), qualifier) {
            (1, _) => Ok(hits[0]),
            (0, Some(q)) => {
                if self.tables.iter().any(|(a, _)| a == q) {
                    Err(format!("{q} has no column {name}"))
                } else {
                    Err(format!("unknown table alias {q}"))
                }
            }
            (0, None) => Err(format!("unknown column {name}")),
            _ => Err(format!("ambiguous column {name}")),
        }
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, x: usize) -> usize {
        let p = self.0[x];
        if p == x {
            return x;
        }
        let r = self.find(p);
        self.0[x] = r;
        r
    }

    /// Union keeping the smaller index as representative.
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.0[hi] = lo;
    }
}

fn resolve(stmt: &Statement, source: &SchemaDef, target: &SchemaDef) -> Result<Resolved, String> {
    let mut tables = Vec::new();
    let mut offsets = Vec::new();
    let mut total = 0;
    for (rel_name, alias) in &stmt.from {
        let rel = source
            .relation(rel_name)
            .ok_or_else(|| format!("unknown source relation {rel_name}"))?;
        let alias = alias.clone().unwrap_or_else(|| rel_name.clone());
        if tables.iter().any(|(a, _)| *a == alias) {
            return Err(format!("duplicate table alias {alias}"));
        }
        offsets.push(total);
        total += rel.attributes.len();
        tables.push((alias, rel));
    }
    let scope = Scope { tables, offsets };

    let mut uf = UnionFind((0..total).collect());
    let mut rest = Vec::new();
    for c in &stmt.conds {
        match (&c.left, c.op, &c.right) {
            (
                Expr::Column { qualifier: ql, name: nl },
                CmpOp::Eq,
                Expr::Column { qualifier: qr, name: nr },
            ) => {
                let (a, b) = (scope.node(ql, nl)?, scope.node(qr, nr)?);
                uf.union(a, b);
            }
            _ => rest.push(c),
        }
    }

    // Variable names: column name of the class representative, made unique.
    let mut var_of_root: BTreeMap<usize, String> = BTreeMap::new();
    let mut taken = BTreeSet::new();
    let mut universals = Vec::new();
    let mut source_atoms = Vec::new();
    for (t, (_, rel)) in scope.tables.iter().enumerate() {
        let mut terms = Vec::new();
        for (p, attr) in rel.attributes.iter().enumerate() {
            let root = uf.find(scope.offsets[t] + p);
            let var = var_of_root
                .entry(root)
                .or_insert_with(|| {
                    let mut name = attr.name.clone();
                    let mut n = 2;
                    while !taken.insert(name.clone()) {
                        name = format!("{}_{n}", attr.name);
                        n += 1;
                    }
                    universals.push(name.clone());
                    name
                })
                .clone();
            terms.push(Term::Var(var));
        }
        source_atoms.push(Atom::new(rel.name.clone(), terms));
    }

    let mut existentials = BTreeSet::new();
    let mut skolem_tag = None;
    let mut ctx = TermCtx {
        scope: &scope,
        uf: &mut uf,
        var_of_root: &var_of_root,
        universals: &taken,
        existentials: &mut existentials,
        skolem_tag: &mut skolem_tag,
        allow_skolem: false,
    };
    let mut filters = Vec::new();
    for c in rest {
        filters.push(FilterPred {
            left: ctx.term(&c.left)?,
            op: c.op,
            right: ctx.term(&c.right)?,
        });
    }

    let rel = target
        .relation(&stmt.target)
        .ok_or_else(|| format!("unknown target relation {}", stmt.target))?;
    let columns: Vec<String> = match &stmt.columns {
        Some(c) => c.clone(),
        None => rel.attribute_names().map(str::to_string).collect(),
    };
    if columns.len() != stmt.exprs.len() {
        return Err(format!(
            "INSERT lists {} columns but SELECT yields {} expressions",
            columns.len(),
            stmt.exprs.len()
        ));
    }
    let mut terms = vec![Term::Const(Value::Null); rel.attributes.len()];
    let mut seen = BTreeSet::new();
    ctx.allow_skolem = true;
    for (col, e) in columns.iter().zip(&stmt.exprs) {
        let pos = rel
            .position(col)
            .ok_or_else(|| format!("{} has no column {col}", rel.name))?;
        if !seen.insert(pos) {
            return Err(format!("column {col} listed twice"));
        }
        terms[pos] = ctx.term(e)?;
    }

    Ok(Resolved {
        body: Body {
            universals,
            source_atoms,
            filters,
        },
        target_atom: Atom::new(rel.name.clone(), terms),
        existentials,
        skolem_tag,
    })
}

struct TermCtx<'a, 'b> {
    scope: &'a Scope<'b>,
    uf: &'a mut UnionFind,
    var_of_root: &'a BTreeMap<usize, String>,
    universals: &'a BTreeSet<String>,
    existentials: &'a mut BTreeSet<String>,
    skolem_tag: &'a mut Option<String>,
    allow_skolem: bool,
}

impl TermCtx<'_, '_> {
    fn term(&mut self, e: &Expr) -> Result<Term, String> {
        match e {
            Expr::Column { qualifier, name } => {
                let node = self.scope.node(qualifier, name)?;
                let root = self.uf.find(node);
                Ok(Term::Var(self.var_of_root[&root].clone()))
            }
            Expr::Lit(v) => Ok(Term::Const(v.clone())),
            Expr::Func { name, args } if name.eq_ignore_ascii_case("skolem") => {
                if !self.allow_skolem {
                    return Err("SKOLEM may only appear in the SELECT list".into());
                }
                let (tag, var) = match args.as_slice() {
                    [Expr::Lit(Value::Str(tag)), Expr::Lit(Value::Str(var)), ..] => (tag, var),
                    _ => return Err("SKOLEM needs a rule tag and a variable name".into()),
                };
                if let Some(existing) = self.skolem_tag.as_ref() {
                    if existing != tag {
                        return Err(format!("SKOLEM tags {existing} and {tag} mixed in one statement"));
                    }
                }
                *self.skolem_tag = Some(tag.clone());
                let mut name = var.clone();
                while self.universals.contains(&name) {
                    name.push_str("_y");
                }
                self.existentials.insert(name.clone());
                Ok(Term::Var(name))
            }
            Expr::Func { name, args } => {
                let lower = name.to_ascii_lowercase();
                if transform_arity(&lower).is_none() {
                    return Err(format!("unknown function {name}"));
                }
                let args = args.iter().map(|a| self.term(a)).collect::<Result<_, _>>()?;
                Ok(Term::Transform { name: lower, args })
            }
        }
    }
}
