//! Python source handling: parsing, lexical tokens and a uniform syntax tree.
//!
//! Every analysis in the crate (feature extraction, function isolation,
//! return-shape checks, subtree matching) walks the [`Node`] tree produced
//! here instead of the parser's typed AST, so the traversal logic lives in
//! one place.

use rustpython_parser::ast::{self, Constant, Ranged};
use rustpython_parser::lexer::lex;
use rustpython_parser::{Mode, Parse, Tok};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("syntax error at line {line}: {message}")]
pub struct SyntaxError {
    pub message: String,
    pub line: usize,
}

/// Byte offset to 1-based line lookup.
#[derive(Debug, Clone)]
pub struct LineIndex {
    starts: Vec<usize>,
}

impl LineIndex {
    pub fn new(src: &str) -> Self {
        let mut starts = vec![0];
        starts.extend(src.match_indices('\n').map(|(i, _)| i + 1));
        Self { starts }
    }

    pub fn line_of(&self, offset: usize) -> usize {
        match self.starts.binary_search(&offset) {
            Ok(i) => i + 1,
            Err(i) => i,
        }
    }

    /// Byte offset at which the given 1-based line starts.
    pub fn line_start(&self, line: usize) -> usize {
        self.starts[line.saturating_sub(1).min(self.starts.len() - 1)]
    }

    pub fn line_count(&self) -> usize {
        self.starts.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ctx {
    #[default]
    None,
    Load,
    Store,
    Del,
}

/// One node of the uniform syntax tree.
///
/// `kind` is the syntactic category (`"Call"`, `"Attribute"`, ...), `op` a
/// structural refinement (operator, constant type) that takes part in
/// subtree comparison. `name` carries identifiers and `value` literal or
/// secondary payloads; both are ignored by subtree comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub kind: &'static str,
    pub op: Option<&'static str>,
    pub name: Option<String>,
    pub value: Option<String>,
    pub ctx: Ctx,
    pub start: usize,
    pub end: usize,
    pub children: Vec<Node>,
}

impl Node {
    fn new(kind: &'static str, start: usize, end: usize) -> Self {
        Self {
            kind,
            op: None,
            name: None,
            value: None,
            ctx: Ctx::None,
            start,
            end,
            children: Vec::new(),
        }
    }

    fn with_op(mut self, op: &'static str) -> Self {
        self.op = Some(op);
        self
    }

    fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    fn with_children(mut self, children: Vec<Node>) -> Self {
        self.children = children;
        self
    }

    /// Pre-order iterator over this node and all descendants.
    pub fn descendants(&self) -> Descendants<'_> {
        Descendants { stack: vec![self] }
    }

    /// 1 for a leaf, otherwise one more than the tallest child.
    pub fn height(&self) -> usize {
        1 + self.children.iter().map(Node::height).max().unwrap_or(0)
    }

    /// Canonical structural form: kinds and ops only, identifiers and
    /// literal values dropped.
    pub fn shape(&self) -> String {
        let mut out = String::new();
        self.write_shape(&mut out);
        out
    }

    fn write_shape(&self, out: &mut String) {
        out.push('(');
        out.push_str(self.kind);
        if let Some(op) = self.op {
            out.push(':');
            out.push_str(op);
        }
        for child in &self.children {
            out.push(' ');
            child.write_shape(out);
        }
        out.push(')');
    }
}

pub struct Descendants<'a> {
    stack: Vec<&'a Node>,
}

impl<'a> Iterator for Descendants<'a> {
    type Item = &'a Node;

    fn next(&mut self) -> Option<Self::Item> {
        let node = self.stack.pop()?;
        self.stack.extend(node.children.iter().rev());
        Some(node)
    }
}

/// A parsed module: the source text plus its syntax tree.
#[derive(Debug, Clone)]
pub struct Module {
    pub source: String,
    pub root: Node,
    pub lines: LineIndex,
}

impl Module {
    pub fn parse(src: &str) -> Result<Self, SyntaxError> {
        let suite = ast::Suite::parse(src, "<input>").map_err(|e| {
            let lines = LineIndex::new(src);
            SyntaxError {
                message: e.error.to_string(),
                line: lines.line_of(usize::from(e.offset)),
            }
        })?;
        let root = Node::new("Module", 0, src.len()).with_children(stmts(&suite));
        Ok(Self {
            source: src.to_owned(),
            root,
            lines: LineIndex::new(src),
        })
    }

    pub fn text(&self, node: &Node) -> &str {
        &self.source[node.start..node.end]
    }

    /// Top-level statements.
    pub fn body(&self) -> &[Node] {
        &self.root.children
    }
}

/// Returns true if `src` parses as a Python module.
pub fn parses(src: &str) -> bool {
    ast::Suite::parse(src, "<input>").is_ok()
}

/// Lexical tokens of `src` with comments and layout tokens removed and
/// string literals kept verbatim. Falls back to whitespace splitting when
/// the lexer rejects the input.
pub fn tokenize(src: &str) -> Vec<String> {
    lex_tokens(src).unwrap_or_else(|| src.split_whitespace().map(str::to_owned).collect())
}

/// Lexer-only tokenization; `None` if the text is not lexically valid.
pub fn lex_tokens(src: &str) -> Option<Vec<String>> {
    let mut out = Vec::new();
    for item in lex(src, Mode::Module) {
        let (tok, range) = item.ok()?;
        match tok {
            Tok::Newline | Tok::Indent | Tok::Dedent | Tok::EndOfFile | Tok::StartModule => {}
            _ => out.push(src[range].to_owned()),
        }
    }
    Some(out)
}

/// Removes the common leading indentation of all non-blank lines.
pub fn dedent(text: &str) -> String {
    let indent = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.len() - l.trim_start_matches([' ', '\t']).len())
        .min()
        .unwrap_or(0);
    let mut out = String::with_capacity(text.len());
    for line in text.split_inclusive('\n') {
        if line.trim().is_empty() {
            out.push_str(if line.ends_with('\n') { "\n" } else { "" });
        } else {
            out.push_str(&line[indent.min(line.len())..]);
        }
    }
    out
}

fn span<T: Ranged>(node: &T) -> (usize, usize) {
    let r = node.range();
    (usize::from(r.start()), usize::from(r.end()))
}

fn stmts(body: &[ast::Stmt]) -> Vec<Node> {
    body.iter().map(stmt).collect()
}

fn exprs(items: &[ast::Expr]) -> Vec<Node> {
    items.iter().map(expr).collect()
}

fn opt_expr(item: &Option<Box<ast::Expr>>) -> Option<Node> {
    item.as_deref().map(expr)
}

fn block(kind: &'static str, start: usize, end: usize, body: &[ast::Stmt]) -> Node {
    Node::new(kind, start, end).with_children(stmts(body))
}

fn arguments(args: &ast::Arguments, start: usize, end: usize) -> Node {
    let mut children = Vec::new();
    let mut push_arg = |arg: &ast::Arg, kind: &'static str, default: Option<&ast::Expr>| {
        let (s, e) = span(arg);
        let mut node = Node::new("arg", s, e).with_op(kind).with_name(arg.arg.as_str());
        if let Some(ann) = &arg.annotation {
            node.children.push(expr(ann));
        }
        if let Some(d) = default {
            node.children.push(expr(d));
        }
        children.push(node);
    };
    for a in &args.posonlyargs {
        push_arg(&a.def, "posonly", a.default.as_deref());
    }
    for a in &args.args {
        push_arg(&a.def, "positional", a.default.as_deref());
    }
    if let Some(a) = &args.vararg {
        push_arg(a, "vararg", None);
    }
    for a in &args.kwonlyargs {
        push_arg(&a.def, "kwonly", a.default.as_deref());
    }
    if let Some(a) = &args.kwarg {
        push_arg(a, "kwarg", None);
    }
    Node::new("arguments", start, end).with_children(children)
}

fn function(
    kind: &'static str,
    (start, end): (usize, usize),
    name: &str,
    args: &ast::Arguments,
    body: &[ast::Stmt],
    decorators: &[ast::Expr],
    returns: &Option<Box<ast::Expr>>,
) -> Node {
    let mut children = Vec::new();
    if !decorators.is_empty() {
        let (ds, _) = span(&decorators[0]);
        let (_, de) = span(decorators.last().unwrap());
        children.push(Node::new("decorators", ds, de).with_children(exprs(decorators)));
    }
    children.push(arguments(args, start, end));
    if let Some(r) = returns {
        children.push(Node::new("returns", start, end).with_children(vec![expr(r)]));
    }
    children.push(block("body", start, end, body));
    Node::new(kind, start, end).with_name(name).with_children(children)
}

fn aliases(names: &[ast::Alias]) -> Vec<Node> {
    names
        .iter()
        .map(|a| {
            let (s, e) = span(a);
            let mut node = Node::new("alias", s, e).with_name(a.name.as_str());
            node.value = a.asname.as_ref().map(|n| n.to_string());
            node
        })
        .collect()
}

fn handlers(items: &[ast::ExceptHandler]) -> Vec<Node> {
    items
        .iter()
        .map(|h| {
            let ast::ExceptHandler::ExceptHandler(h) = h;
            let (s, e) = span(h);
            let mut node = Node::new("ExceptHandler", s, e);
            node.name = h.name.as_ref().map(|n| n.to_string());
            node.children.extend(opt_expr(&h.type_));
            node.children.push(block("body", s, e, &h.body));
            node
        })
        .collect()
}

fn with_items(items: &[ast::WithItem], start: usize, end: usize) -> Vec<Node> {
    items
        .iter()
        .map(|w| {
            let mut node = Node::new("withitem", start, end);
            node.children.push(expr(&w.context_expr));
            node.children.extend(opt_expr(&w.optional_vars));
            node
        })
        .collect()
}

fn type_params(params: &[ast::TypeParam]) -> Option<Node> {
    if params.is_empty() {
        return None;
    }
    let nodes: Vec<Node> = params
        .iter()
        .map(|p| match p {
            ast::TypeParam::TypeVar(t) => {
                let (s, e) = span(t);
                let mut n = Node::new("TypeVar", s, e).with_name(t.name.as_str());
                n.children.extend(opt_expr(&t.bound));
                n
            }
            ast::TypeParam::ParamSpec(t) => {
                let (s, e) = span(t);
                Node::new("ParamSpec", s, e).with_name(t.name.as_str())
            }
            ast::TypeParam::TypeVarTuple(t) => {
                let (s, e) = span(t);
                Node::new("TypeVarTuple", s, e).with_name(t.name.as_str())
            }
        })
        .collect();
    let start = nodes.first().map_or(0, |n| n.start);
    let end = nodes.last().map_or(0, |n| n.end);
    Some(Node::new("type_params", start, end).with_children(nodes))
}

fn stmt(s: &ast::Stmt) -> Node {
    let (start, end) = span(s);
    let node = |kind| Node::new(kind, start, end);
    match s {
        ast::Stmt::FunctionDef(f) => function(
            "FunctionDef",
            (start, end),
            f.name.as_str(),
            &f.args,
            &f.body,
            &f.decorator_list,
            &f.returns,
        ),
        ast::Stmt::AsyncFunctionDef(f) => function(
            "AsyncFunctionDef",
            (start, end),
            f.name.as_str(),
            &f.args,
            &f.body,
            &f.decorator_list,
            &f.returns,
        ),
        ast::Stmt::ClassDef(c) => {
            let mut children = Vec::new();
            if !c.decorator_list.is_empty() {
                let (ds, _) = span(&c.decorator_list[0]);
                children.push(Node::new("decorators", ds, start).with_children(exprs(&c.decorator_list)));
            }
            children.extend(type_params(&c.type_params));
            children.extend(exprs(&c.bases));
            children.extend(c.keywords.iter().map(keyword));
            children.push(block("body", start, end, &c.body));
            node("ClassDef").with_name(c.name.as_str()).with_children(children)
        }
        ast::Stmt::Return(r) => node("Return").with_children(opt_expr(&r.value).into_iter().collect()),
        ast::Stmt::Delete(d) => node("Delete").with_children(exprs(&d.targets)),
        ast::Stmt::Assign(a) => {
            let mut children = exprs(&a.targets);
            children.push(expr(&a.value));
            node("Assign").with_children(children)
        }
        ast::Stmt::TypeAlias(t) => {
            let mut children = vec![expr(&t.name)];
            children.extend(type_params(&t.type_params));
            children.push(expr(&t.value));
            node("TypeAlias").with_children(children)
        }
        ast::Stmt::AugAssign(a) => node("AugAssign")
            .with_op(operator(a.op))
            .with_children(vec![expr(&a.target), expr(&a.value)]),
        ast::Stmt::AnnAssign(a) => {
            let mut children = vec![expr(&a.target), expr(&a.annotation)];
            children.extend(opt_expr(&a.value));
            node("AnnAssign").with_children(children)
        }
        ast::Stmt::For(f) => node("For").with_children(vec![
            expr(&f.target),
            expr(&f.iter),
            block("body", start, end, &f.body),
            block("orelse", start, end, &f.orelse),
        ]),
        ast::Stmt::AsyncFor(f) => node("AsyncFor").with_children(vec![
            expr(&f.target),
            expr(&f.iter),
            block("body", start, end, &f.body),
            block("orelse", start, end, &f.orelse),
        ]),
        ast::Stmt::While(w) => node("While").with_children(vec![
            expr(&w.test),
            block("body", start, end, &w.body),
            block("orelse", start, end, &w.orelse),
        ]),
        ast::Stmt::If(i) => node("If").with_children(vec![
            expr(&i.test),
            block("body", start, end, &i.body),
            block("orelse", start, end, &i.orelse),
        ]),
        ast::Stmt::With(w) => {
            let mut children = with_items(&w.items, start, end);
            children.push(block("body", start, end, &w.body));
            node("With").with_children(children)
        }
        ast::Stmt::AsyncWith(w) => {
            let mut children = with_items(&w.items, start, end);
            children.push(block("body", start, end, &w.body));
            node("AsyncWith").with_children(children)
        }
        ast::Stmt::Match(m) => {
            let mut children = vec![expr(&m.subject)];
            for case in &m.cases {
                let mut c = Node::new("match_case", start, end);
                c.children.push(pattern(&case.pattern));
                c.children.extend(opt_expr(&case.guard));
                c.children.push(block("body", start, end, &case.body));
                children.push(c);
            }
            node("Match").with_children(children)
        }
        ast::Stmt::Raise(r) => {
            let mut children: Vec<Node> = opt_expr(&r.exc).into_iter().collect();
            children.extend(opt_expr(&r.cause));
            node("Raise").with_children(children)
        }
        ast::Stmt::Try(t) => {
            node("Try").with_children(try_children(start, end, &t.body, &t.handlers, &t.orelse, &t.finalbody))
        }
        ast::Stmt::TryStar(t) => {
            node("TryStar").with_children(try_children(start, end, &t.body, &t.handlers, &t.orelse, &t.finalbody))
        }
        ast::Stmt::Assert(a) => {
            let mut children = vec![expr(&a.test)];
            children.extend(opt_expr(&a.msg));
            node("Assert").with_children(children)
        }
        ast::Stmt::Import(i) => node("Import").with_children(aliases(&i.names)),
        ast::Stmt::ImportFrom(i) => {
            let mut n = node("ImportFrom").with_children(aliases(&i.names));
            n.value = i.module.as_ref().map(|m| m.to_string());
            if i.level.map_or(0, |l| l.to_u32()) > 0 {
                n.op = Some("relative");
            }
            n
        }
        ast::Stmt::Global(g) => node("Global").with_children(
            g.names
                .iter()
                .map(|n| Node::new("identifier", start, end).with_name(n.as_str()))
                .collect(),
        ),
        ast::Stmt::Nonlocal(g) => node("Nonlocal").with_children(
            g.names
                .iter()
                .map(|n| Node::new("identifier", start, end).with_name(n.as_str()))
                .collect(),
        ),
        ast::Stmt::Expr(e) => node("Expr").with_children(vec![expr(&e.value)]),
        ast::Stmt::Pass(_) => node("Pass"),
        ast::Stmt::Break(_) => node("Break"),
        ast::Stmt::Continue(_) => node("Continue"),
    }
}

fn try_children(
    start: usize,
    end: usize,
    body: &[ast::Stmt],
    handler_list: &[ast::ExceptHandler],
    orelse: &[ast::Stmt],
    finalbody: &[ast::Stmt],
) -> Vec<Node> {
    let mut children = vec![block("body", start, end, body)];
    children.extend(handlers(handler_list));
    children.push(block("orelse", start, end, orelse));
    children.push(block("finalbody", start, end, finalbody));
    children
}

fn keyword(k: &ast::Keyword) -> Node {
    let (s, e) = span(k);
    let mut n = Node::new("keyword", s, e).with_children(vec![expr(&k.value)]);
    n.name = k.arg.as_ref().map(|a| a.to_string());
    n
}

fn comprehension(c: &ast::Comprehension, start: usize, end: usize) -> Node {
    let mut children = vec![expr(&c.target), expr(&c.iter)];
    children.extend(exprs(&c.ifs));
    let n = Node::new("comprehension", start, end).with_children(children);
    if c.is_async {
        n.with_op("async")
    } else {
        n
    }
}

fn ctx(c: ast::ExprContext) -> Ctx {
    match c {
        ast::ExprContext::Load => Ctx::Load,
        ast::ExprContext::Store => Ctx::Store,
        ast::ExprContext::Del => Ctx::Del,
    }
}

fn constant_kind(c: &Constant) -> &'static str {
    match c {
        Constant::None => "none",
        Constant::Bool(_) => "bool",
        Constant::Str(_) => "str",
        Constant::Bytes(_) => "bytes",
        Constant::Int(_) => "int",
        Constant::Tuple(_) => "tuple",
        Constant::Float(_) => "float",
        Constant::Complex { .. } => "complex",
        Constant::Ellipsis => "ellipsis",
    }
}

fn expr(e: &ast::Expr) -> Node {
    let (start, end) = span(e);
    let node = |kind| Node::new(kind, start, end);
    match e {
        ast::Expr::BoolOp(b) => node("BoolOp")
            .with_op(match b.op {
                ast::BoolOp::And => "and",
                ast::BoolOp::Or => "or",
            })
            .with_children(exprs(&b.values)),
        ast::Expr::NamedExpr(n) => node("NamedExpr").with_children(vec![expr(&n.target), expr(&n.value)]),
        ast::Expr::BinOp(b) => node("BinOp")
            .with_op(operator(b.op))
            .with_children(vec![expr(&b.left), expr(&b.right)]),
        ast::Expr::UnaryOp(u) => node("UnaryOp")
            .with_op(match u.op {
                ast::UnaryOp::Invert => "~",
                ast::UnaryOp::Not => "not",
                ast::UnaryOp::UAdd => "+",
                ast::UnaryOp::USub => "-",
            })
            .with_children(vec![expr(&u.operand)]),
        ast::Expr::Lambda(l) => node("Lambda").with_children(vec![arguments(&l.args, start, end), expr(&l.body)]),
        ast::Expr::IfExp(i) => node("IfExp").with_children(vec![expr(&i.test), expr(&i.body), expr(&i.orelse)]),
        ast::Expr::Dict(d) => {
            let mut children = Vec::new();
            for (k, v) in d.keys.iter().zip(&d.values) {
                match k {
                    Some(k) => children.push(expr(k)),
                    None => children.push(node("DictUnpack")),
                }
                children.push(expr(v));
            }
            node("Dict").with_children(children)
        }
        ast::Expr::Set(s) => node("Set").with_children(exprs(&s.elts)),
        ast::Expr::ListComp(c) => {
            let mut children = vec![expr(&c.elt)];
            children.extend(c.generators.iter().map(|g| comprehension(g, start, end)));
            node("ListComp").with_children(children)
        }
        ast::Expr::SetComp(c) => {
            let mut children = vec![expr(&c.elt)];
            children.extend(c.generators.iter().map(|g| comprehension(g, start, end)));
            node("SetComp").with_children(children)
        }
        ast::Expr::DictComp(c) => {
            let mut children = vec![expr(&c.key), expr(&c.value)];
            children.extend(c.generators.iter().map(|g| comprehension(g, start, end)));
            node("DictComp").with_children(children)
        }
        ast::Expr::GeneratorExp(c) => {
            let mut children = vec![expr(&c.elt)];
            children.extend(c.generators.iter().map(|g| comprehension(g, start, end)));
            node("GeneratorExp").with_children(children)
        }
        ast::Expr::Await(a) => node("Await").with_children(vec![expr(&a.value)]),
        ast::Expr::Yield(y) => node("Yield").with_children(opt_expr(&y.value).into_iter().collect()),
        ast::Expr::YieldFrom(y) => node("YieldFrom").with_children(vec![expr(&y.value)]),
        ast::Expr::Compare(c) => {
            let mut children = vec![expr(&c.left)];
            for (op, right) in c.ops.iter().zip(&c.comparators) {
                children.push(node("cmpop").with_op(cmp_operator(*op)));
                children.push(expr(right));
            }
            node("Compare").with_children(children)
        }
        ast::Expr::Call(c) => {
            let mut children = vec![expr(&c.func)];
            children.extend(exprs(&c.args));
            children.extend(c.keywords.iter().map(keyword));
            node("Call").with_children(children)
        }
        ast::Expr::FormattedValue(f) => {
            let mut children = vec![expr(&f.value)];
            children.extend(opt_expr(&f.format_spec));
            node("FormattedValue").with_children(children)
        }
        ast::Expr::JoinedStr(j) => node("JoinedStr").with_children(exprs(&j.values)),
        ast::Expr::Constant(c) => {
            let mut n = node("Constant").with_op(constant_kind(&c.value));
            if let Constant::Str(s) = &c.value {
                n.value = Some(s.clone());
            }
            n
        }
        ast::Expr::Attribute(a) => {
            let mut n = node("Attribute")
                .with_name(a.attr.as_str())
                .with_children(vec![expr(&a.value)]);
            n.ctx = ctx(a.ctx);
            n
        }
        ast::Expr::Subscript(s) => {
            let mut n = node("Subscript").with_children(vec![expr(&s.value), expr(&s.slice)]);
            n.ctx = ctx(s.ctx);
            n
        }
        ast::Expr::Starred(s) => {
            let mut n = node("Starred").with_children(vec![expr(&s.value)]);
            n.ctx = ctx(s.ctx);
            n
        }
        ast::Expr::Name(n) => {
            let mut out = node("Name").with_name(n.id.as_str());
            out.ctx = ctx(n.ctx);
            out
        }
        ast::Expr::List(l) => {
            let mut n = node("List").with_children(exprs(&l.elts));
            n.ctx = ctx(l.ctx);
            n
        }
        ast::Expr::Tuple(t) => {
            let mut n = node("Tuple").with_children(exprs(&t.elts));
            n.ctx = ctx(t.ctx);
            n
        }
        ast::Expr::Slice(s) => {
            let part = |p: &Option<Box<ast::Expr>>, kind| match p {
                Some(e) => Node::new(kind, start, end).with_children(vec![expr(e)]),
                None => Node::new(kind, start, end),
            };
            node("Slice").with_children(vec![
                part(&s.lower, "lower"),
                part(&s.upper, "upper"),
                part(&s.step, "step"),
            ])
        }
    }
}

fn pattern(p: &ast::Pattern) -> Node {
    let (start, end) = span(p);
    let node = |kind| Node::new(kind, start, end);
    match p {
        ast::Pattern::MatchValue(v) => node("MatchValue").with_children(vec![expr(&v.value)]),
        ast::Pattern::MatchSingleton(v) => node("MatchSingleton").with_op(constant_kind(&v.value)),
        ast::Pattern::MatchSequence(s) => node("MatchSequence").with_children(s.patterns.iter().map(pattern).collect()),
        ast::Pattern::MatchMapping(m) => {
            let mut children = exprs(&m.keys);
            children.extend(m.patterns.iter().map(pattern));
            let mut n = node("MatchMapping").with_children(children);
            n.name = m.rest.as_ref().map(|r| r.to_string());
            n
        }
        ast::Pattern::MatchClass(c) => {
            let mut children = vec![expr(&c.cls)];
            children.extend(c.patterns.iter().map(pattern));
            for (attr, pat) in c.kwd_attrs.iter().zip(&c.kwd_patterns) {
                children.push(
                    node("kwd_pattern")
                        .with_name(attr.as_str())
                        .with_children(vec![pattern(pat)]),
                );
            }
            node("MatchClass").with_children(children)
        }
        ast::Pattern::MatchStar(s) => {
            let mut n = node("MatchStar");
            n.name = s.name.as_ref().map(|r| r.to_string());
            n
        }
        ast::Pattern::MatchAs(a) => {
            let mut n = node("MatchAs");
            n.name = a.name.as_ref().map(|r| r.to_string());
            if let Some(p) = &a.pattern {
                n.children.push(pattern(p));
            }
            n
        }
        ast::Pattern::MatchOr(o) => node("MatchOr").with_children(o.patterns.iter().map(pattern).collect()),
    }
}

fn operator(op: ast::Operator) -> &'static str {
    use ast::Operator::*;
    match op {
        Add => "+",
        Sub => "-",
        Mult => "*",
        MatMult => "@",
        Div => "/",
        Mod => "%",
        Pow => "**",
        LShift => "<<",
        RShift => ">>",
        BitOr => "|",
        BitXor => "^",
        BitAnd => "&",
        FloorDiv => "//",
    }
}

fn cmp_operator(op: ast::CmpOp) -> &'static str {
    use ast::CmpOp::*;
    match op {
        Eq => "==",
        NotEq => "!=",
        Lt => "<",
        LtE => "<=",
        Gt => ">",
        GtE => ">=",
        Is => "is",
        IsNot => "is not",
        In => "in",
        NotIn => "not in",
    }
}
