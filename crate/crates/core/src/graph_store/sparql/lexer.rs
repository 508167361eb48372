use super::SparqlError;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    /// A bare word: keyword or local-dialect identifier such as `Q1`.
    Word(String),
    Var(String),
    /// `prefix:local`; the prefix may be empty.
    PName(String, String),
    Iri(String),
    Str(String),
    Num(String),
    /// `^^` datatype marker.
    Caret2,
    /// `@lang` tag after a string literal.
    LangTag(String),
    LBrace,
    RBrace,
    LParen,
    RParen,
    Dot,
    Star,
    /// Any other punctuation; always rejected by the parser.
    Other(String),
}

impl Tok {
    pub(crate) fn describe(&self) -> String {
        match self {
            Tok::Word(w) => w.clone(),
            Tok::Var(v) => format!("?{v}"),
            Tok::PName(p, l) => format!("{p}:{l}"),
            Tok::Iri(i) => format!("<{i}>"),
            Tok::Str(s) => format!("{s:?}"),
            Tok::Num(n) => n.clone(),
            Tok::Caret2 => "^^".into(),
            Tok::LangTag(l) => format!("@{l}"),
            Tok::LBrace => "{".into(),
            Tok::RBrace => "}".into(),
            Tok::LParen => "(".into(),
            Tok::RParen => ")".into(),
            Tok::Dot => ".".into(),
            Tok::Star => "*".into(),
            Tok::Other(s) => s.clone(),
        }
    }
}

fn is_name_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '-'
}

pub(crate) fn tokenize(text: &str) -> Result<Vec<Tok>, SparqlError> {
    let chars: Vec<char> = text.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        match c {
            '{' => toks.push(Tok::LBrace),
            '}' => toks.push(Tok::RBrace),
            '(' => toks.push(Tok::LParen),
            ')' => toks.push(Tok::RParen),
            '*' => toks.push(Tok::Star),
            '.' if !chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()) => toks.push(Tok::Dot),
            '?' | '$' => {
                let start = i + 1;
                let mut j = start;
                while j < chars.len() && (chars[j].is_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                if j == start {
                    return Err(SparqlError::Parse {
                        position: i,
                        reason: "empty variable name".into(),
                    });
                }
                toks.push(Tok::Var(chars[start..j].iter().collect()));
                i = j;
                continue;
            }
            '<' => {
                let start = i + 1;
                let mut j = start;
                while j < chars.len() && chars[j] != '>' {
                    if chars[j].is_whitespace() {
                        // `<` used as an operator, e.g. inside FILTER.
                        break;
                    }
                    j += 1;
                }
                if j >= chars.len() || chars[j] != '>' {
                    toks.push(Tok::Other("<".into()));
                    i += 1;
                    continue;
                }
                toks.push(Tok::Iri(chars[start..j].iter().collect()));
                i = j + 1;
                continue;
            }
            '"' | '\'' => {
                let quote = c;
                let mut j = i + 1;
                let mut s = String::new();
                loop {
                    match chars.get(j) {
                        None => {
                            return Err(SparqlError::Parse {
                                position: i,
                                reason: "unterminated string literal".into(),
                            })
                        }
                        Some('\\') => {
                            let escaped = chars.get(j + 1).copied().ok_or(SparqlError::Parse {
                                position: j,
                                reason: "dangling escape".into(),
                            })?;
                            s.push(match escaped {
                                'n' => '\n',
                                't' => '\t',
                                'r' => '\r',
                                other => other,
                            });
                            j += 2;
                        }
                        Some(&ch) if ch == quote => break,
                        Some(&ch) => {
                            s.push(ch);
                            j += 1;
                        }
                    }
                }
                toks.push(Tok::Str(s));
                i = j + 1;
                continue;
            }
            '^' if chars.get(i + 1) == Some(&'^') => {
                toks.push(Tok::Caret2);
                i += 2;
                continue;
            }
            '@' => {
                let start = i + 1;
                let mut j = start;
                while j < chars.len() && (chars[j].is_alphanumeric() || chars[j] == '-') {
                    j += 1;
                }
                toks.push(Tok::LangTag(chars[start..j].iter().collect()));
                i = j;
                continue;
            }
            c if c.is_ascii_digit()
                || ((c == '-' || c == '+' || c == '.')
                    && chars
                        .get(i + 1)
                        .is_some_and(|d| d.is_ascii_digit() || *d == '.')) =>
            {
                let start = i;
                let mut j = i + 1;
                while j < chars.len()
                    && (chars[j].is_ascii_digit()
                        || chars[j] == '.' && chars.get(j + 1).is_some_and(|d| d.is_ascii_digit())
                        || matches!(chars[j], 'e' | 'E')
                        || (matches!(chars[j], '+' | '-') && matches!(chars[j - 1], 'e' | 'E')))
                {
                    j += 1;
                }
                toks.push(Tok::Num(chars[start..j].iter().collect()));
                i = j;
                continue;
            }
            c if is_name_char(c) || c == ':' => {
                let start = i;
                let mut j = i;
                while j < chars.len() && is_name_char(chars[j]) {
                    j += 1;
                }
                if chars.get(j) == Some(&':') {
                    let prefix: String = chars[start..j].iter().collect();
                    let local_start = j + 1;
                    let mut k = local_start;
                    while k < chars.len() && is_name_char(chars[k]) {
                        k += 1;
                    }
                    toks.push(Tok::PName(prefix, chars[local_start..k].iter().collect()));
                    i = k;
                } else {
                    toks.push(Tok::Word(chars[start..j].iter().collect()));
                    i = j;
                }
                continue;
            }
            other => toks.push(Tok::Other(other.to_string())),
        }
        i += 1;
    }
    Ok(toks)
}
