use super::{ErrorCategory, ParseError};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Ident(String),
    Int(u64),
    Real(f64),
    Str(String),
    LBrace,
    RBrace,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Semi,
    Comma,
    Arrow,
    EqEq,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    Eof,
}

impl Tok {
    pub(crate) fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier '{s}'"),
            Tok::Int(v) => format!("integer {v}"),
            Tok::Real(v) => format!("number {v}"),
            Tok::Str(s) => format!("string \"{s}\""),
            Tok::LBrace => "'{'".into(),
            Tok::RBrace => "'}'".into(),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::LBracket => "'['".into(),
            Tok::RBracket => "']'".into(),
            Tok::Semi => "';'".into(),
            Tok::Comma => "','".into(),
            Tok::Arrow => "'->'".into(),
            Tok::EqEq => "'=='".into(),
            Tok::Plus => "'+'".into(),
            Tok::Minus => "'-'".into(),
            Tok::Star => "'*'".into(),
            Tok::Slash => "'/'".into(),
            Tok::Caret => "'^'".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

/// 1-based line and column of a token's first character.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Pos {
    pub line: usize,
    pub column: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub tok: Tok,
    pub pos: Pos,
}

pub(crate) fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let mut line = 1;
    let mut col = 1;

    macro_rules! bump {
        () => {{
            if chars[i] == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            i += 1;
        }};
    }

    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, column: col };
        if c.is_whitespace() {
            bump!();
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                bump!();
            }
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'*') {
            bump!();
            bump!();
            loop {
                if i >= chars.len() {
                    return Err(ParseError::new(
                        pos.line,
                        pos.column,
                        ErrorCategory::Syntax,
                        "unterminated block comment",
                    ));
                }
                if chars[i] == '*' && chars.get(i + 1) == Some(&'/') {
                    bump!();
                    bump!();
                    break;
                }
                bump!();
            }
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let mut s = String::new();
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                s.push(chars[i]);
                bump!();
            }
            out.push(Token {
                tok: Tok::Ident(s),
                pos,
            });
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let mut s = String::new();
            let mut real = false;
            while i < chars.len() && chars[i].is_ascii_digit() {
                s.push(chars[i]);
                bump!();
            }
            if i < chars.len() && chars[i] == '.' {
                real = true;
                s.push('.');
                bump!();
                while i < chars.len() && chars[i].is_ascii_digit() {
                    s.push(chars[i]);
                    bump!();
                }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let sign = chars.get(i + 1).copied();
                let has_sign = matches!(sign, Some('+') | Some('-'));
                let digit_at = if has_sign { i + 2 } else { i + 1 };
                if chars.get(digit_at).is_some_and(|d| d.is_ascii_digit()) {
                    real = true;
                    s.push('e');
                    bump!();
                    if has_sign {
                        s.push(chars[i]);
                        bump!();
                    }
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        s.push(chars[i]);
                        bump!();
                    }
                }
            }
            let tok = if real {
                Tok::Real(s.parse().map_err(|_| {
                    ParseError::new(
                        pos.line,
                        pos.column,
                        ErrorCategory::Syntax,
                        format!("invalid number '{s}'"),
                    )
                })?)
            } else {
                Tok::Int(s.parse().map_err(|_| {
                    ParseError::new(
                        pos.line,
                        pos.column,
                        ErrorCategory::Syntax,
                        format!("integer out of range '{s}'"),
                    )
                })?)
            };
            out.push(Token { tok, pos });
            continue;
        }
        if c == '"' {
            bump!();
            let mut s = String::new();
            loop {
                if i >= chars.len() || chars[i] == '\n' {
                    return Err(ParseError::new(
                        pos.line,
                        pos.column,
                        ErrorCategory::Syntax,
                        "unterminated string literal",
                    ));
                }
                if chars[i] == '"' {
                    bump!();
                    break;
                }
                s.push(chars[i]);
                bump!();
            }
            out.push(Token { tok: Tok::Str(s), pos });
            continue;
        }
        let tok = match c {
            '{' => Tok::LBrace,
            '}' => Tok::RBrace,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '[' => Tok::LBracket,
            ']' => Tok::RBracket,
            ';' => Tok::Semi,
            ',' => Tok::Comma,
            '+' => Tok::Plus,
            '*' => Tok::Star,
            '/' => Tok::Slash,
            '^' => Tok::Caret,
            '-' if chars.get(i + 1) == Some(&'>') => {
                bump!();
                Tok::Arrow
            }
            '-' => Tok::Minus,
            '=' if chars.get(i + 1) == Some(&'=') => {
                bump!();
                Tok::EqEq
            }
            other => {
                return Err(ParseError::new(
                    pos.line,
                    pos.column,
                    ErrorCategory::Syntax,
                    format!("unexpected character '{other}'"),
                ))
            }
        };
        bump!();
        out.push(Token { tok, pos });
    }
    out.push(Token {
        tok: Tok::Eof,
        pos: Pos { line, column: col },
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(src: &str) -> Vec<Tok> {
        tokenize(src).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn numbers() {
        assert_eq!(
            toks("1 2.5 .5 1e-3 3E+2 7e"),
            vec![
                Tok::Int(1),
                Tok::Real(2.5),
                Tok::Real(0.5),
                Tok::Real(1e-3),
                Tok::Real(300.0),
                Tok::Int(7),
                Tok::Ident("e".into()),
                Tok::Eof
            ]
        );
    }

    #[test]
    fn comments_and_positions() {
        let t = tokenize("// hi\n  qreg /* x\n */ q;").unwrap();
        assert_eq!(t[0].tok, Tok::Ident("qreg".into()));
        assert_eq!(t[0].pos, Pos { line: 2, column: 3 });
        assert_eq!(t[1].pos, Pos { line: 3, column: 5 });
    }

    #[test]
    fn arrow_and_eq() {
        assert_eq!(toks("-> == -"), vec![Tok::Arrow, Tok::EqEq, Tok::Minus, Tok::Eof]);
    }

    #[test]
    fn bad_char() {
        let e = tokenize("qreg q[1];\n  @").unwrap_err();
        assert_eq!((e.line, e.column), (2, 3));
        assert_eq!(e.category, ErrorCategory::Syntax);
    }
}
