use std::collections::HashMap;

use super::circuit::{Circuit, GateKind, Instruction};
use super::lexer::{tokenize, Pos, Tok, Token};
use super::{ErrorCategory, ParseError};

/// Composite qelib1 gates, expressed over the primitive table.
const QELIB1_COMPOSITES: &str = r#"
gate u(theta,phi,lambda) q { u3(theta,phi,lambda) q; }
gate p(lambda) q { u1(lambda) q; }
gate sx a { sdg a; h a; sdg a; }
gate sxdg a { s a; h a; s a; }
gate cy a,b { sdg b; cx a,b; s b; }
gate ch a,b { h b; sdg b; cx a,b; h b; t b; cx a,b; t b; h b; s b; x b; s a; }
gate crx(lambda) a,b { u1(pi/2) b; cx a,b; u3(-lambda/2,0,0) b; cx a,b; u3(lambda/2,-pi/2,0) b; }
gate cry(lambda) a,b { ry(lambda/2) b; cx a,b; ry(-lambda/2) b; cx a,b; }
gate crz(lambda) a,b { rz(lambda/2) b; cx a,b; rz(-lambda/2) b; cx a,b; }
gate cu1(lambda) a,b { u1(lambda/2) a; cx a,b; u1(-lambda/2) b; cx a,b; u1(lambda/2) b; }
gate cp(lambda) a,b { cu1(lambda) a,b; }
gate cu3(theta,phi,lambda) c,t { u1((lambda+phi)/2) c; u1((lambda-phi)/2) t; cx c,t; u3(-theta/2,0,-(phi+lambda)/2) t; cx c,t; u3(theta/2,phi,0) t; }
gate rzz(theta) a,b { cx a,b; u1(theta) b; cx a,b; }
gate rxx(theta) a,b { u3(pi/2,theta,0) a; h b; cx a,b; u1(-theta) b; cx a,b; h b; u2(-pi,pi-theta) a; }
gate cswap a,b,c { cx c,b; ccx a,b,c; cx c,b; }
"#;

/// qelib1 names that exist in the standard library but have no expansion here.
const QELIB1_UNSUPPORTED: &[&str] = &["u0", "csx", "cu", "rccx", "rc3x", "c3x", "c3sqrtx", "c4x"];

#[derive(Debug, Clone, Copy, PartialEq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Ln,
    Sqrt,
}

#[derive(Debug, Clone, PartialEq)]
enum Expr {
    Num(f64),
    Param(usize),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    fn eval(&self, params: &[f64]) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Param(i) => params[*i],
            Expr::Neg(e) => -e.eval(params),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(params), b.eval(params));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => a.powf(b),
                }
            }
            Expr::Call(f, e) => {
                let v = e.eval(params);
                match f {
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Tan => v.tan(),
                    Func::Exp => v.exp(),
                    Func::Ln => v.ln(),
                    Func::Sqrt => v.sqrt(),
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Callee {
    Primitive(GateKind),
    Composite(usize),
}

#[derive(Debug)]
struct BodyStmt {
    callee: Callee,
    params: Vec<Expr>,
    args: Vec<usize>,
}

#[derive(Debug)]
struct GateDef {
    n_params: usize,
    n_qubits: usize,
    body: Vec<BodyStmt>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum RegKind {
    Quantum,
    Classical,
}

#[derive(Debug, Clone, Copy)]
struct Register {
    kind: RegKind,
    start: usize,
    size: usize,
}

/// A resolved top-level operand: one bit or a whole register.
#[derive(Debug, Clone, Copy)]
enum Operand {
    Bit(usize),
    Reg { start: usize, size: usize },
}

impl Operand {
    fn len(self) -> Option<usize> {
        match self {
            Operand::Bit(_) => None,
            Operand::Reg { size, .. } => Some(size),
        }
    }

    fn at(self, i: usize) -> usize {
        match self {
            Operand::Bit(b) => b,
            Operand::Reg { start, .. } => start + i,
        }
    }
}

struct Parser {
    tokens: Vec<Token>,
    at: usize,
    qelib: bool,
    gates: HashMap<String, Callee>,
    defs: Vec<GateDef>,
    regs: HashMap<String, Register>,
    num_qubits: usize,
    num_clbits: usize,
    out: Vec<Instruction>,
}

fn err(pos: Pos, category: ErrorCategory, msg: impl Into<String>) -> ParseError {
    ParseError::new(pos.line, pos.column, category, msg)
}

/// Parse an OpenQASM 2.0 program into a flattened [`Circuit`].
pub fn parse(source: &str) -> Result<Circuit, ParseError> {
    let mut p = Parser::new(tokenize(source)?);
    p.gates.insert("U".into(), Callee::Primitive(GateKind::U3));
    p.gates.insert("CX".into(), Callee::Primitive(GateKind::Cx));
    p.program()?;
    Ok(Circuit {
        name: "circuit".into(),
        num_qubits: p.num_qubits,
        num_clbits: p.num_clbits,
        instructions: p.out,
    })
}

impl Parser {
    fn new(tokens: Vec<Token>) -> Self {
        Parser {
            tokens,
            at: 0,
            qelib: false,
            gates: HashMap::new(),
            defs: Vec::new(),
            regs: HashMap::new(),
            num_qubits: 0,
            num_clbits: 0,
            out: Vec::new(),
        }
    }

    fn peek(&self) -> &Tok {
        &self.tokens[self.at].tok
    }

    fn pos(&self) -> Pos {
        self.tokens[self.at].pos
    }

    fn next(&mut self) -> Token {
        let t = self.tokens[self.at].clone();
        if self.at + 1 < self.tokens.len() {
            self.at += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok) -> Result<Pos, ParseError> {
        let t = self.next();
        if t.tok == want {
            Ok(t.pos)
        } else {
            Err(err(
                t.pos,
                ErrorCategory::Syntax,
                format!("expected {}, found {}", want.describe(), t.tok.describe()),
            ))
        }
    }

    fn eat(&mut self, want: &Tok) -> bool {
        if self.peek() == want {
            self.next();
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> Result<(String, Pos), ParseError> {
        let t = self.next();
        match t.tok {
            Tok::Ident(s) => Ok((s, t.pos)),
            other => Err(err(
                t.pos,
                ErrorCategory::Syntax,
                format!("expected identifier, found {}", other.describe()),
            )),
        }
    }

    fn integer(&mut self) -> Result<(u64, Pos), ParseError> {
        let t = self.next();
        match t.tok {
            Tok::Int(v) => Ok((v, t.pos)),
            other => Err(err(
                t.pos,
                ErrorCategory::Syntax,
                format!("expected integer, found {}", other.describe()),
            )),
        }
    }

    fn program(&mut self) -> Result<(), ParseError> {
        let (kw, pos) = self.ident()?;
        if kw != "OPENQASM" {
            return Err(err(
                pos,
                ErrorCategory::Syntax,
                "program must start with 'OPENQASM 2.0;'",
            ));
        }
        let t = self.next();
        let version = match t.tok {
            Tok::Real(v) => v,
            Tok::Int(v) => v as f64,
            other => {
                return Err(err(
                    t.pos,
                    ErrorCategory::Syntax,
                    format!("expected version number, found {}", other.describe()),
                ))
            }
        };
        if version != 2.0 {
            return Err(err(
                t.pos,
                ErrorCategory::Unsupported,
                format!("OpenQASM version {version} is not supported"),
            ));
        }
        self.expect(Tok::Semi)?;
        while *self.peek() != Tok::Eof {
            self.statement()?;
        }
        Ok(())
    }

    fn statement(&mut self) -> Result<(), ParseError> {
        let pos = self.pos();
        let kw = match self.peek() {
            Tok::Ident(s) => s.clone(),
            other => {
                return Err(err(
                    pos,
                    ErrorCategory::Syntax,
                    format!("expected statement, found {}", other.describe()),
                ))
            }
        };
        match kw.as_str() {
            "include" => self.include(),
            "qreg" => self.register(RegKind::Quantum),
            "creg" => self.register(RegKind::Classical),
            "gate" => self.gate_def(),
            "opaque" => Err(err(pos, ErrorCategory::Unsupported, "opaque gates are not supported")),
            "if" => self.conditional(),
            "measure" => self.measure(),
            "reset" => self.reset(),
            "barrier" => self.barrier(),
            _ => self.application(),
        }
    }

    fn include(&mut self) -> Result<(), ParseError> {
        self.next();
        let t = self.next();
        let file = match t.tok {
            Tok::Str(s) => s,
            other => {
                return Err(err(
                    t.pos,
                    ErrorCategory::Syntax,
                    format!("expected file name string, found {}", other.describe()),
                ))
            }
        };
        self.expect(Tok::Semi)?;
        if file != "qelib1.inc" {
            return Err(err(
                t.pos,
                ErrorCategory::Unsupported,
                format!("include of '{file}' is not supported; only \"qelib1.inc\" is built in"),
            ));
        }
        if !self.qelib {
            self.qelib = true;
            self.load_qelib(t.pos)?;
        }
        Ok(())
    }

    fn load_qelib(&mut self, pos: Pos) -> Result<(), ParseError> {
        for kind in GateKind::UNITARY {
            if self.gates.contains_key(kind.name()) || self.regs.contains_key(kind.name()) {
                return Err(err(
                    pos,
                    ErrorCategory::Semantic,
                    format!("qelib1.inc redeclares '{}'", kind.name()),
                ));
            }
            self.gates.insert(kind.name().into(), Callee::Primitive(kind));
        }
        let mut prelude = Parser::new(tokenize(QELIB1_COMPOSITES).expect("prelude tokenizes"));
        std::mem::swap(&mut prelude.gates, &mut self.gates);
        std::mem::swap(&mut prelude.defs, &mut self.defs);
        std::mem::swap(&mut prelude.regs, &mut self.regs);
        prelude.qelib = true;
        let mut result = Ok(());
        while *prelude.peek() != Tok::Eof {
            if let Err(e) = prelude.gate_def() {
                result = Err(err(pos, ErrorCategory::Semantic, format!("qelib1.inc: {}", e.message)));
                break;
            }
        }
        std::mem::swap(&mut prelude.gates, &mut self.gates);
        std::mem::swap(&mut prelude.defs, &mut self.defs);
        std::mem::swap(&mut prelude.regs, &mut self.regs);
        result
    }

    fn register(&mut self, kind: RegKind) -> Result<(), ParseError> {
        self.next();
        let (name, pos) = self.ident()?;
        self.expect(Tok::LBracket)?;
        let (size, size_pos) = self.integer()?;
        self.expect(Tok::RBracket)?;
        self.expect(Tok::Semi)?;
        if self.regs.contains_key(&name) || self.gates.contains_key(&name) {
            return Err(err(pos, ErrorCategory::Semantic, format!("redeclaration of '{name}'")));
        }
        if size == 0 {
            return Err(err(size_pos, ErrorCategory::Semantic, "register size must be positive"));
        }
        let size = size as usize;
        let start = match kind {
            RegKind::Quantum => {
                let s = self.num_qubits;
                self.num_qubits += size;
                s
            }
            RegKind::Classical => {
                let s = self.num_clbits;
                self.num_clbits += size;
                s
            }
        };
        self.regs.insert(name, Register { kind, start, size });
        Ok(())
    }

    fn gate_def(&mut self) -> Result<(), ParseError> {
        self.next();
        let (name, name_pos) = self.ident()?;
        if self.gates.contains_key(&name) || self.regs.contains_key(&name) {
            return Err(err(
                name_pos,
                ErrorCategory::Semantic,
                format!("redeclaration of '{name}'"),
            ));
        }
        let mut params: Vec<String> = Vec::new();
        if self.eat(&Tok::LParen) && !self.eat(&Tok::RParen) {
            loop {
                let (p, ppos) = self.ident()?;
                if params.contains(&p) {
                    return Err(err(ppos, ErrorCategory::Semantic, format!("duplicate parameter '{p}'")));
                }
                params.push(p);
                if self.eat(&Tok::RParen) {
                    break;
                }
                self.expect(Tok::Comma)?;
            }
        }
        let mut args: Vec<String> = Vec::new();
        loop {
            let (a, apos) = self.ident()?;
            if args.contains(&a) {
                return Err(err(
                    apos,
                    ErrorCategory::Semantic,
                    format!("duplicate gate argument '{a}'"),
                ));
            }
            args.push(a);
            if !self.eat(&Tok::Comma) {
                break;
            }
        }
        self.expect(Tok::LBrace)?;
        let mut body = Vec::new();
        while !self.eat(&Tok::RBrace) {
            let (callee_name, cpos) = self.ident()?;
            if callee_name == name {
                return Err(err(
                    cpos,
                    ErrorCategory::Semantic,
                    format!("recursive gate definition '{name}'"),
                ));
            }
            if callee_name == "barrier" {
                let operands = self.body_operands(&args)?;
                self.expect(Tok::Semi)?;
                body.push(BodyStmt {
                    callee: Callee::Primitive(GateKind::Barrier),
                    params: Vec::new(),
                    args: operands,
                });
                continue;
            }
            if matches!(callee_name.as_str(), "measure" | "reset" | "if" | "opaque" | "gate") {
                return Err(err(
                    cpos,
                    ErrorCategory::Semantic,
                    format!("'{callee_name}' is not allowed inside a gate body"),
                ));
            }
            let callee = self.lookup_gate(&callee_name, cpos)?;
            let exprs = if self.eat(&Tok::LParen) {
                self.expr_list(&params)?
            } else {
                Vec::new()
            };
            let operands = self.body_operands(&args)?;
            self.expect(Tok::Semi)?;
            self.check_signature(callee, &callee_name, exprs.len(), operands.len(), cpos)?;
            for (i, a) in operands.iter().enumerate() {
                if operands[..i].contains(a) {
                    return Err(err(
                        cpos,
                        ErrorCategory::Semantic,
                        format!("duplicate qubit operand in application of '{callee_name}'"),
                    ));
                }
            }
            body.push(BodyStmt {
                callee,
                params: exprs,
                args: operands,
            });
        }
        self.defs.push(GateDef {
            n_params: params.len(),
            n_qubits: args.len(),
            body,
        });
        self.gates.insert(name, Callee::Composite(self.defs.len() - 1));
        Ok(())
    }

    fn body_operands(&mut self, args: &[String]) -> Result<Vec<usize>, ParseError> {
        let mut out = Vec::new();
        loop {
            let (a, apos) = self.ident()?;
            if *self.peek() == Tok::LBracket {
                return Err(err(
                    self.pos(),
                    ErrorCategory::Semantic,
                    "indexed operands are not allowed inside a gate body",
                ));
            }
            let idx = args
                .iter()
                .position(|x| *x == a)
                .ok_or_else(|| err(apos, ErrorCategory::Semantic, format!("unknown gate argument '{a}'")))?;
            out.push(idx);
            if !self.eat(&Tok::Comma) {
                return Ok(out);
            }
        }
    }

    fn lookup_gate(&self, name: &str, pos: Pos) -> Result<Callee, ParseError> {
        if let Some(c) = self.gates.get(name) {
            return Ok(*c);
        }
        if self.qelib && QELIB1_UNSUPPORTED.contains(&name) {
            return Err(err(
                pos,
                ErrorCategory::Unsupported,
                format!("gate '{name}' is not supported"),
            ));
        }
        let hint = if !self.qelib && (GateKind::from_name(name).is_some() || QELIB1_UNSUPPORTED.contains(&name)) {
            " (missing include \"qelib1.inc\"?)"
        } else {
            ""
        };
        Err(err(
            pos,
            ErrorCategory::Semantic,
            format!("undefined gate '{name}'{hint}"),
        ))
    }

    fn check_signature(
        &self,
        callee: Callee,
        name: &str,
        n_params: usize,
        n_qubits: usize,
        pos: Pos,
    ) -> Result<(), ParseError> {
        let (want_p, want_q) = match callee {
            Callee::Primitive(k) => (k.param_count(), k.qubit_arity().unwrap_or(n_qubits)),
            Callee::Composite(i) => (self.defs[i].n_params, self.defs[i].n_qubits),
        };
        if want_p != n_params {
            return Err(err(
                pos,
                ErrorCategory::Semantic,
                format!("gate '{name}' takes {want_p} parameter(s), got {n_params}"),
            ));
        }
        if want_q != n_qubits {
            return Err(err(
                pos,
                ErrorCategory::Semantic,
                format!("gate '{name}' takes {want_q} qubit(s), got {n_qubits}"),
            ));
        }
        Ok(())
    }

    fn expr_list(&mut self, params: &[String]) -> Result<Vec<Expr>, ParseError> {
        let mut out = Vec::new();
        if self.eat(&Tok::RParen) {
            return Ok(out);
        }
        loop {
            out.push(self.expr(params)?);
            if self.eat(&Tok::RParen) {
                return Ok(out);
            }
            self.expect(Tok::Comma)?;
        }
    }

    fn expr(&mut self, params: &[String]) -> Result<Expr, ParseError> {
        let mut lhs = self.term(params)?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.next();
            let rhs = self.term(params)?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self, params: &[String]) -> Result<Expr, ParseError> {
        let mut lhs = self.unary(params)?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.next();
            let rhs = self.unary(params)?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self, params: &[String]) -> Result<Expr, ParseError> {
        if self.eat(&Tok::Minus) {
            return Ok(Expr::Neg(Box::new(self.unary(params)?)));
        }
        if self.eat(&Tok::Plus) {
            return self.unary(params);
        }
        self.power(params)
    }

    fn power(&mut self, params: &[String]) -> Result<Expr, ParseError> {
        let base = self.atom(params)?;
        if self.eat(&Tok::Caret) {
            let exp = self.unary(params)?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self, params: &[String]) -> Result<Expr, ParseError> {
        let t = self.next();
        match t.tok {
            Tok::Int(v) => Ok(Expr::Num(v as f64)),
            Tok::Real(v) => Ok(Expr::Num(v)),
            Tok::LParen => {
                let e = self.expr(params)?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if name == "pi" {
                    return Ok(Expr::Num(std::f64::consts::PI));
                }
                if let Some(i) = params.iter().position(|p| *p == name) {
                    return Ok(Expr::Param(i));
                }
                let func = match name.as_str() {
                    "sin" => Some(Func::Sin),
                    "cos" => Some(Func::Cos),
                    "tan" => Some(Func::Tan),
                    "exp" => Some(Func::Exp),
                    "ln" => Some(Func::Ln),
                    "sqrt" => Some(Func::Sqrt),
                    _ => None,
                };
                match func {
                    Some(f) => {
                        self.expect(Tok::LParen)?;
                        let e = self.expr(params)?;
                        self.expect(Tok::RParen)?;
                        Ok(Expr::Call(f, Box::new(e)))
                    }
                    None => Err(err(
                        t.pos,
                        ErrorCategory::Semantic,
                        format!("unknown identifier '{name}' in expression"),
                    )),
                }
            }
            other => Err(err(
                t.pos,
                ErrorCategory::Syntax,
                format!("expected expression, found {}", other.describe()),
            )),
        }
    }

    fn operand(&mut self, want: RegKind) -> Result<Operand, ParseError> {
        let (name, pos) = self.ident()?;
        let reg = *self
            .regs
            .get(&name)
            .ok_or_else(|| err(pos, ErrorCategory::Semantic, format!("undeclared register '{name}'")))?;
        if reg.kind != want {
            let what = match want {
                RegKind::Quantum => "quantum",
                RegKind::Classical => "classical",
            };
            return Err(err(
                pos,
                ErrorCategory::Semantic,
                format!("'{name}' is not a {what} register"),
            ));
        }
        if self.eat(&Tok::LBracket) {
            let (idx, ipos) = self.integer()?;
            self.expect(Tok::RBracket)?;
            if idx as usize >= reg.size {
                return Err(err(
                    ipos,
                    ErrorCategory::Semantic,
                    format!("index {idx} out of range for register '{name}' of size {}", reg.size),
                ));
            }
            Ok(Operand::Bit(reg.start + idx as usize))
        } else {
            Ok(Operand::Reg {
                start: reg.start,
                size: reg.size,
            })
        }
    }

    fn operand_list(&mut self) -> Result<Vec<Operand>, ParseError> {
        let mut out = vec![self.operand(RegKind::Quantum)?];
        while self.eat(&Tok::Comma) {
            out.push(self.operand(RegKind::Quantum)?);
        }
        Ok(out)
    }

    fn broadcast_len(ops: &[Operand], pos: Pos) -> Result<usize, ParseError> {
        let mut len: Option<usize> = None;
        for op in ops {
            if let Some(n) = op.len() {
                match len {
                    Some(m) if m != n => {
                        return Err(err(
                            pos,
                            ErrorCategory::Semantic,
                            "register operands have different sizes",
                        ))
                    }
                    _ => len = Some(n),
                }
            }
        }
        Ok(len.unwrap_or(1))
    }

    fn conditional(&mut self) -> Result<(), ParseError> {
        let (_, pos) = self.ident()?;
        self.expect(Tok::LParen)?;
        self.ident()?;
        self.expect(Tok::EqEq)?;
        self.integer()?;
        self.expect(Tok::RParen)?;
        Err(err(
            pos,
            ErrorCategory::Unsupported,
            "classically conditioned operations ('if') are not supported",
        ))
    }

    fn measure(&mut self) -> Result<(), ParseError> {
        let (_, pos) = self.ident()?;
        let q = self.operand(RegKind::Quantum)?;
        self.expect(Tok::Arrow)?;
        let c = self.operand(RegKind::Classical)?;
        self.expect(Tok::Semi)?;
        match (q.len(), c.len()) {
            (None, None) => self.out.push(Instruction::measure(q.at(0), c.at(0))),
            (Some(n), Some(m)) if n == m => {
                for i in 0..n {
                    self.out.push(Instruction::measure(q.at(i), c.at(i)));
                }
            }
            _ => {
                return Err(err(
                    pos,
                    ErrorCategory::Semantic,
                    "measure operands must both be single bits or registers of equal size",
                ))
            }
        }
        Ok(())
    }

    fn reset(&mut self) -> Result<(), ParseError> {
        self.next();
        let q = self.operand(RegKind::Quantum)?;
        self.expect(Tok::Semi)?;
        for i in 0..q.len().unwrap_or(1) {
            self.out.push(Instruction::gate(GateKind::Reset, &[q.at(i)], &[]));
        }
        Ok(())
    }

    fn barrier(&mut self) -> Result<(), ParseError> {
        self.next();
        let ops = self.operand_list()?;
        self.expect(Tok::Semi)?;
        let mut qubits = Vec::new();
        for op in ops {
            for i in 0..op.len().unwrap_or(1) {
                let q = op.at(i);
                if !qubits.contains(&q) {
                    qubits.push(q);
                }
            }
        }
        self.out.push(Instruction::gate(GateKind::Barrier, &qubits, &[]));
        Ok(())
    }

    fn application(&mut self) -> Result<(), ParseError> {
        let (name, pos) = self.ident()?;
        let callee = self.lookup_gate(&name, pos)?;
        let exprs = if self.eat(&Tok::LParen) {
            self.expr_list(&[])?
        } else {
            Vec::new()
        };
        let ops = self.operand_list()?;
        self.expect(Tok::Semi)?;
        self.check_signature(callee, &name, exprs.len(), ops.len(), pos)?;
        let params: Vec<f64> = exprs.iter().map(|e| e.eval(&[])).collect();
        if let Some(bad) = params.iter().find(|v| !v.is_finite()) {
            return Err(err(
                pos,
                ErrorCategory::Semantic,
                format!("parameter evaluates to {bad}"),
            ));
        }
        let n = Self::broadcast_len(&ops, pos)?;
        for i in 0..n {
            let qubits: Vec<usize> = ops.iter().map(|op| op.at(i)).collect();
            for (j, q) in qubits.iter().enumerate() {
                if qubits[..j].contains(q) {
                    return Err(err(
                        pos,
                        ErrorCategory::Semantic,
                        format!("duplicate qubit operand in application of '{name}'"),
                    ));
                }
            }
            self.expand(callee, &params, &qubits);
        }
        Ok(())
    }

    fn expand(&mut self, callee: Callee, params: &[f64], qubits: &[usize]) {
        match callee {
            Callee::Primitive(kind) => self.out.push(Instruction::gate(kind, qubits, params)),
            Callee::Composite(i) => {
                let calls: Vec<(Callee, Vec<f64>, Vec<usize>)> = self.defs[i]
                    .body
                    .iter()
                    .map(|s| {
                        (
                            s.callee,
                            s.params.iter().map(|e| e.eval(params)).collect(),
                            s.args.iter().map(|&a| qubits[a]).collect(),
                        )
                    })
                    .collect();
                for (c, p, q) in calls {
                    self.expand(c, &p, &q);
                }
            }
        }
    }
}
