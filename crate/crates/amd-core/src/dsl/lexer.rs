//! Line-oriented tokenizer. Comments are stripped, blank lines are
//! dropped, and indentation is not significant (statements are one per
//! line).

use super::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Num(f64),
    KwDef,
    KwReturn,
    KwIf,
    KwElse,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Colon,
    Dot,
    Assign,
    Plus,
    Minus,
    Star,
    Slash,
    DoubleStar,
    Lt,
    Le,
    Gt,
    Ge,
    EqEq,
    Ne,
    Newline,
    Eof,
}

#[derive(Debug, Clone)]
pub struct Spanned {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

/// Python keywords that are valid syntax there but banned here. Naming
/// them makes `ForbiddenConstruct` errors precise instead of generic
/// syntax noise.
const FORBIDDEN_KEYWORDS: &[&str] = &[
    "import", "from", "for", "while", "lambda", "and", "or", "not", "in", "is", "class", "with",
    "try", "except", "raise", "global", "nonlocal", "yield", "assert", "del", "pass", "break",
    "continue", "None", "True", "False", "print", "open", "eval", "exec", "input",
];

pub fn tokenize(source: &str) -> Result<Vec<Spanned>, ParseError> {
    let mut out = Vec::new();
    let mut line_no = 0usize;
    for raw_line in source.lines() {
        line_no += 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        };
        if line.trim().is_empty() {
            continue;
        }
        let start_len = out.len();
        lex_line(line, line_no, &mut out)?;
        if out.len() > start_len {
            out.push(Spanned { tok: Tok::Newline, line: line_no, col: line.len() + 1 });
        }
    }
    out.push(Spanned { tok: Tok::Eof, line: line_no + 1, col: 1 });
    Ok(out)
}

fn lex_line(line: &str, line_no: usize, out: &mut Vec<Spanned>) -> Result<(), ParseError> {
    let chars: Vec<char> = line.chars().collect();
    let mut i = 0usize;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        let spanned = |tok| Spanned { tok, line: line_no, col };
        match c {
            ' ' | '\t' | '\r' => {
                i += 1;
                continue;
            }
            '(' => out.push(spanned(Tok::LParen)),
            ')' => out.push(spanned(Tok::RParen)),
            '[' => out.push(spanned(Tok::LBracket)),
            ']' => out.push(spanned(Tok::RBracket)),
            ',' => out.push(spanned(Tok::Comma)),
            ':' => out.push(spanned(Tok::Colon)),
            '.' => {
                // A leading dot can also start a number like `.5`.
                if i + 1 < chars.len() && chars[i + 1].is_ascii_digit() {
                    let (tok, used) = lex_number(&chars[i..], line_no, col)?;
                    out.push(Spanned { tok, line: line_no, col });
                    i += used;
                    continue;
                }
                out.push(spanned(Tok::Dot));
            }
            '+' => out.push(spanned(Tok::Plus)),
            '-' => out.push(spanned(Tok::Minus)),
            '*' => {
                if chars.get(i + 1) == Some(&'*') {
                    out.push(spanned(Tok::DoubleStar));
                    i += 2;
                    continue;
                }
                out.push(spanned(Tok::Star));
            }
            '/' => {
                if chars.get(i + 1) == Some(&'/') {
                    return Err(ParseError::Forbidden {
                        line: line_no,
                        col,
                        construct: "floor division `//`".into(),
                    });
                }
                out.push(spanned(Tok::Slash));
            }
            '%' => {
                return Err(ParseError::Forbidden {
                    line: line_no,
                    col,
                    construct: "modulo operator `%`".into(),
                })
            }
            '<' => {
                if chars.get(i + 1) == Some(&'=') {
                    out.push(spanned(Tok::Le));
                    i += 2;
                    continue;
                }
                out.push(spanned(Tok::Lt));
            }
            '>' => {
                if chars.get(i + 1) == Some(&'=') {
                    out.push(spanned(Tok::Ge));
                    i += 2;
                    continue;
                }
                out.push(spanned(Tok::Gt));
            }
            '=' => {
                if chars.get(i + 1) == Some(&'=') {
                    out.push(spanned(Tok::EqEq));
                    i += 2;
                    continue;
                }
                out.push(spanned(Tok::Assign));
            }
            '!' => {
                if chars.get(i + 1) == Some(&'=') {
                    out.push(spanned(Tok::Ne));
                    i += 2;
                    continue;
                }
                return Err(ParseError::Syntax {
                    line: line_no,
                    col,
                    message: "unexpected `!`".into(),
                });
            }
            '"' | '\'' => {
                return Err(ParseError::Forbidden {
                    line: line_no,
                    col,
                    construct: "string literal".into(),
                })
            }
            _ if c.is_ascii_digit() => {
                let (tok, used) = lex_number(&chars[i..], line_no, col)?;
                out.push(Spanned { tok, line: line_no, col });
                i += used;
                continue;
            }
            _ if c.is_ascii_alphabetic() || c == '_' => {
                let mut j = i;
                while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                let word: String = chars[i..j].iter().collect();
                let tok = match word.as_str() {
                    "def" => Tok::KwDef,
                    "return" => Tok::KwReturn,
                    "if" => Tok::KwIf,
                    "else" => Tok::KwElse,
                    w if FORBIDDEN_KEYWORDS.contains(&w) => {
                        return Err(ParseError::Forbidden {
                            line: line_no,
                            col,
                            construct: format!("keyword `{w}`"),
                        })
                    }
                    _ => Tok::Ident(word),
                };
                out.push(Spanned { tok, line: line_no, col });
                i = j;
                continue;
            }
            _ => {
                return Err(ParseError::Syntax {
                    line: line_no,
                    col,
                    message: format!("unexpected character `{c}`"),
                })
            }
        }
        i += 1;
    }
    Ok(())
}

fn lex_number(chars: &[char], line: usize, col: usize) -> Result<(Tok, usize), ParseError> {
    let mut j = 0usize;
    let mut seen_dot = false;
    let mut seen_exp = false;
    while j < chars.len() {
        let c = chars[j];
        if c.is_ascii_digit() {
            j += 1;
        } else if c == '.' && !seen_dot && !seen_exp {
            seen_dot = true;
            j += 1;
        } else if (c == 'e' || c == 'E') && !seen_exp && j > 0 {
            // Exponent must be followed by digits, optionally signed.
            let mut k = j + 1;
            if k < chars.len() && (chars[k] == '+' || chars[k] == '-') {
                k += 1;
            }
            if k < chars.len() && chars[k].is_ascii_digit() {
                seen_exp = true;
                j = k;
            } else {
                break;
            }
        } else {
            break;
        }
    }
    let text: String = chars[..j].iter().collect();
    match text.parse::<f64>() {
        Ok(value) if value.is_finite() => Ok((Tok::Num(value), j)),
        _ => Err(ParseError::Syntax {
            line,
            col,
            message: format!("invalid numeric literal `{text}`"),
        }),
    }
}
