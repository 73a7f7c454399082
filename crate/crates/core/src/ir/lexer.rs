use alloc::string::{String, ToString};
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Reg(String),
    Sym(String),
    Int(i64),
    Float(f32),
    LParen,
    RParen,
    LBrace,
    RBrace,
    Eq,
    Newline,
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub line: u32,
    pub col: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexError {
    pub line: u32,
    pub col: u32,
    pub message: String,
}

fn is_name(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

pub fn lex(src: &str) -> Result<Vec<Token>, LexError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    while i < chars.len() {
        let c = chars[i];
        let (tline, tcol) = (line, col);
        let push = |out: &mut Vec<Token>, tok| out.push(Token { tok, line: tline, col: tcol });
        match c {
            '\n' => {
                push(&mut out, Tok::Newline);
                i += 1;
                line += 1;
                col = 1;
                continue;
            }
            ' ' | '\t' | '\r' => {}
            '/' if chars.get(i + 1) == Some(&'/') => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
                continue;
            }
            '(' => push(&mut out, Tok::LParen),
            ')' => push(&mut out, Tok::RParen),
            '{' => push(&mut out, Tok::LBrace),
            '}' => push(&mut out, Tok::RBrace),
            '=' => push(&mut out, Tok::Eq),
            '%' | '@' => {
                let start = i + 1;
                let mut j = start;
                while j < chars.len() && is_name(chars[j]) {
                    j += 1;
                }
                if j == start {
                    return Err(LexError {
                        line,
                        col,
                        message: "name after sigil".to_string(),
                    });
                }
                let name: String = chars[start..j].iter().collect();
                push(&mut out, if c == '%' { Tok::Reg(name) } else { Tok::Sym(name) });
                col += (j - i) as u32;
                i = j;
                continue;
            }
            c if c.is_ascii_digit() || c == '-' || c == '+' => {
                let mut j = i + 1;
                while j < chars.len()
                    && (is_name(chars[j])
                        || ((chars[j] == '-' || chars[j] == '+')
                            && matches!(chars[j - 1], 'e' | 'E')))
                {
                    j += 1;
                }
                let text: String = chars[i..j].iter().collect();
                let tok = if let Ok(v) = text.parse::<i64>() {
                    Tok::Int(v)
                } else if let Ok(v) = text.parse::<f32>() {
                    Tok::Float(v)
                } else {
                    return Err(LexError {
                        line,
                        col,
                        message: alloc::format!("number, found `{text}`"),
                    });
                };
                push(&mut out, tok);
                col += (j - i) as u32;
                i = j;
                continue;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut j = i + 1;
                while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                let text: String = chars[i..j].iter().collect();
                let tok = match text.as_str() {
                    "inf" => Tok::Float(f32::INFINITY),
                    "NaN" => Tok::Float(f32::NAN),
                    _ => Tok::Ident(text),
                };
                push(&mut out, tok);
                col += (j - i) as u32;
                i = j;
                continue;
            }
            other => {
                return Err(LexError {
                    line,
                    col,
                    message: alloc::format!("unexpected character `{other}`"),
                })
            }
        }
        i += 1;
        col += 1;
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}
