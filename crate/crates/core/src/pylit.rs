//! Python literal syntax <-> JSON values.
//!
//! Model responses describe test inputs as Python call expressions
//! (`gcd(12, 20)`) and expected outputs as Python literals. This module
//! parses that subset into the JSON encoding the sandbox speaks, and renders
//! values back in Python `repr` form for human-facing output.
//!
//! Encoding of values JSON cannot express directly uses a sidecar object:
//! `{"__t": "tuple", "v": [...]}`, `{"__t": "float", "v": "inf"}` and
//! `{"__t": "repr", "v": "..."}` for anything else.

use serde_json::{json, Map, Number, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("python literal parse error at byte {pos}: {msg}")]
pub struct LiteralError {
    pub pos: usize,
    pub msg: String,
}

pub const TAG: &str = "__t";

pub fn tuple(items: Vec<Value>) -> Value {
    json!({ TAG: "tuple", "v": items })
}

pub fn opaque(repr: impl Into<String>) -> Value {
    json!({ TAG: "repr", "v": repr.into() })
}

/// Returns the sidecar tag and payload if `v` is a tagged value.
pub fn tagged(v: &Value) -> Option<(&str, &Value)> {
    let obj = v.as_object()?;
    if obj.len() != 2 {
        return None;
    }
    let tag = obj.get(TAG)?.as_str()?;
    Some((tag, obj.get("v")?))
}

/// Parses a complete Python literal. Trailing non-whitespace is an error.
pub fn parse_literal(src: &str) -> Result<Value, LiteralError> {
    let mut p = Parser::new(src);
    p.skip_ws();
    let v = p.value()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.err("trailing characters"));
    }
    Ok(v)
}

/// Parses a literal prefix of `src`, returning the value and the unparsed
/// remainder.
pub fn parse_literal_prefix(src: &str) -> Result<(Value, &str), LiteralError> {
    let mut p = Parser::new(src);
    p.skip_ws();
    let v = p.value()?;
    Ok((v, &src[p.pos..]))
}

/// A call expression found in free text.
#[derive(Debug, Clone, PartialEq)]
pub struct Call<'a> {
    pub args: Vec<Value>,
    /// Text before the function name.
    pub before: &'a str,
    /// Text after the closing parenthesis.
    pub after: &'a str,
}

/// Finds the first `name(...)` in `text` where `name` is a whole identifier
/// and parses its arguments. Keyword arguments are taken positionally.
///
/// Returns `Ok(None)` when no call to `name` appears, and an error when one
/// appears but its argument list is not a sequence of literals.
pub fn find_call<'a>(text: &'a str, name: &str) -> Result<Option<Call<'a>>, LiteralError> {
    let mut search = 0;
    while let Some(off) = text[search..].find(name) {
        let start = search + off;
        let end = start + name.len();
        search = end;
        let prev_ok = text[..start].chars().next_back().is_none_or(|c| !(c.is_alphanumeric() || c == '_' || c == '.'));
        if !prev_ok {
            continue;
        }
        let rest = &text[end..];
        let trimmed = rest.trim_start();
        if !trimmed.starts_with('(') {
            continue;
        }
        let open = end + (rest.len() - trimmed.len());
        let mut p = Parser::new(text);
        p.pos = open + 1;
        let args = p.call_args()?;
        return Ok(Some(Call { args, before: &text[..start], after: &text[p.pos..] }));
    }
    Ok(None)
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser { src, pos: 0 }
    }

    fn err(&self, msg: &str) -> LiteralError {
        LiteralError { pos: self.pos, msg: msg.to_string() }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn value(&mut self) -> Result<Value, LiteralError> {
        self.skip_ws();
        let c = self.peek().ok_or_else(|| self.err("unexpected end of input"))?;
        match c {
            '[' => {
                self.bump();
                let items = self.sequence(']')?;
                Ok(Value::Array(items))
            }
            '(' => {
                self.bump();
                self.skip_ws();
                if self.eat(')') {
                    return Ok(tuple(vec![]));
                }
                let first = self.value()?;
                self.skip_ws();
                if self.eat(')') {
                    return Ok(first);
                }
                if !self.eat(',') {
                    return Err(self.err("expected ',' or ')'"));
                }
                let mut items = vec![first];
                items.extend(self.sequence(')')?);
                Ok(tuple(items))
            }
            '{' => {
                self.bump();
                self.mapping()
            }
            '\'' | '"' => Ok(Value::String(self.string()?)),
            '-' | '+' | '.' | '0'..='9' => self.number(),
            _ => self.word(),
        }
    }

    /// Comma-separated values up to `close`; trailing comma allowed.
    fn sequence(&mut self, close: char) -> Result<Vec<Value>, LiteralError> {
        let mut items = Vec::new();
        loop {
            self.skip_ws();
            if self.eat(close) {
                return Ok(items);
            }
            items.push(self.value()?);
            self.skip_ws();
            if self.eat(close) {
                return Ok(items);
            }
            if !self.eat(',') {
                return Err(self.err(&format!("expected ',' or '{close}'")));
            }
        }
    }

    fn call_args(&mut self) -> Result<Vec<Value>, LiteralError> {
        let mut items = Vec::new();
        loop {
            self.skip_ws();
            if self.eat(')') {
                return Ok(items);
            }
            // keyword argument: `name=value`
            let rest = self.rest();
            let ident_len = rest
                .char_indices()
                .take_while(|(_, c)| c.is_alphanumeric() || *c == '_')
                .map(|(i, c)| i + c.len_utf8())
                .last()
                .unwrap_or(0);
            if ident_len > 0 && !rest.starts_with(|c: char| c.is_ascii_digit()) {
                let after = rest[ident_len..].trim_start();
                if after.starts_with('=') && !after.starts_with("==") {
                    self.pos += ident_len + (rest[ident_len..].len() - after.len()) + 1;
                }
            }
            items.push(self.value()?);
            self.skip_ws();
            if self.eat(')') {
                return Ok(items);
            }
            if !self.eat(',') {
                return Err(self.err("expected ',' or ')' in argument list"));
            }
        }
    }

    fn mapping(&mut self) -> Result<Value, LiteralError> {
        self.skip_ws();
        if self.eat('}') {
            return Ok(Value::Object(Map::new()));
        }
        let first = self.value()?;
        self.skip_ws();
        if self.eat(':') {
            let mut pairs = vec![(first, self.value()?)];
            loop {
                self.skip_ws();
                if self.eat('}') {
                    break;
                }
                if !self.eat(',') {
                    return Err(self.err("expected ',' or '}' in dict"));
                }
                self.skip_ws();
                if self.eat('}') {
                    break;
                }
                let k = self.value()?;
                self.skip_ws();
                if !self.eat(':') {
                    return Err(self.err("expected ':' in dict"));
                }
                pairs.push((k, self.value()?));
            }
            if pairs.iter().all(|(k, _)| k.is_string()) {
                let mut map = Map::new();
                for (k, v) in pairs {
                    map.insert(k.as_str().unwrap_or_default().to_string(), v);
                }
                return Ok(Value::Object(map));
            }
            let body: Vec<String> = pairs.iter().map(|(k, v)| format!("{}: {}", render(k), render(v))).collect();
            return Ok(opaque(format!("{{{}}}", body.join(", "))));
        }
        // set literal
        let mut items = vec![first];
        self.skip_ws();
        if !self.eat('}') {
            if !self.eat(',') {
                return Err(self.err("expected ',' or '}' in set"));
            }
            items.extend(self.sequence('}')?);
        }
        let body: Vec<String> = items.iter().map(render).collect();
        Ok(opaque(format!("{{{}}}", body.join(", "))))
    }

    fn string(&mut self) -> Result<String, LiteralError> {
        let quote = self.bump().ok_or_else(|| self.err("expected quote"))?;
        let triple = self.rest().starts_with(&format!("{quote}{quote}"));
        if triple {
            self.pos += 2 * quote.len_utf8();
        }
        let mut out = String::new();
        loop {
            let c = self.bump().ok_or_else(|| self.err("unterminated string"))?;
            if c == quote {
                if !triple {
                    return Ok(out);
                }
                if self.rest().starts_with(&format!("{quote}{quote}")) {
                    self.pos += 2 * quote.len_utf8();
                    return Ok(out);
                }
                out.push(c);
                continue;
            }
            if c == '\n' && !triple {
                return Err(self.err("newline in string"));
            }
            if c != '\\' {
                out.push(c);
                continue;
            }
            let e = self.bump().ok_or_else(|| self.err("unterminated escape"))?;
            match e {
                'n' => out.push('\n'),
                't' => out.push('\t'),
                'r' => out.push('\r'),
                '0' => out.push('\0'),
                '\\' | '\'' | '"' => out.push(e),
                '\n' => {}
                'x' => out.push(self.hex_escape(2)?),
                'u' => out.push(self.hex_escape(4)?),
                'U' => out.push(self.hex_escape(8)?),
                other => {
                    out.push('\\');
                    out.push(other);
                }
            }
        }
    }

    fn hex_escape(&mut self, digits: usize) -> Result<char, LiteralError> {
        let rest = self.rest();
        let hex = rest.get(..digits).ok_or_else(|| self.err("short hex escape"))?;
        let code = u32::from_str_radix(hex, 16).map_err(|_| self.err("bad hex escape"))?;
        self.pos += digits;
        char::from_u32(code).ok_or_else(|| self.err("invalid code point"))
    }

    fn number(&mut self) -> Result<Value, LiteralError> {
        let start = self.pos;
        let mut negative = false;
        if self.peek() == Some('-') || self.peek() == Some('+') {
            negative = self.bump() == Some('-');
            self.skip_ws();
        }
        let body_start = self.pos;
        let rest = self.rest();
        if rest.starts_with("0x") || rest.starts_with("0X") {
            self.pos += 2;
            let digits: String = self.rest().chars().take_while(|c| c.is_ascii_hexdigit() || *c == '_').collect();
            self.pos += digits.len();
            let n = i64::from_str_radix(&digits.replace('_', ""), 16).map_err(|_| self.err("bad hex literal"))?;
            return Ok(Value::from(if negative { -n } else { n }));
        }
        if !rest.starts_with(|c: char| c.is_ascii_digit() || c == '.') {
            // `-inf` style words are not Python literals; `float('inf')` is
            // handled by `word`.
            self.pos = body_start;
            let v = self.word()?;
            return match v.as_f64() {
                Some(f) if negative => Ok(float_value(-f)),
                _ if negative => Err(LiteralError { pos: start, msg: "bad negation".into() }),
                _ => Ok(v),
            };
        }
        let mut is_float = false;
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() {
            let b = bytes[self.pos];
            match b {
                b'0'..=b'9' | b'_' => self.pos += 1,
                // a '.' not followed by a digit ends the number ("returns 4.")
                b'.' if bytes.get(self.pos + 1).is_some_and(u8::is_ascii_digit) => {
                    is_float = true;
                    self.pos += 1;
                }
                b'e' | b'E' => {
                    is_float = true;
                    self.pos += 1;
                    if self.pos < bytes.len() && (bytes[self.pos] == b'-' || bytes[self.pos] == b'+') {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
        let text = self.src[body_start..self.pos].replace('_', "");
        if text.is_empty() || text == "." {
            return Err(LiteralError { pos: start, msg: "bad number".into() });
        }
        if !is_float {
            if let Ok(n) = text.parse::<i64>() {
                return Ok(Value::from(if negative { -n } else { n }));
            }
            if !negative {
                if let Ok(n) = text.parse::<u64>() {
                    return Ok(Value::from(n));
                }
            }
        }
        let f: f64 = text.parse().map_err(|_| LiteralError { pos: start, msg: "bad number".into() })?;
        Ok(float_value(if negative { -f } else { f }))
    }

    fn word(&mut self) -> Result<Value, LiteralError> {
        let rest = self.rest();
        for (w, v) in [
            ("True", Value::Bool(true)),
            ("False", Value::Bool(false)),
            ("None", Value::Null),
            ("null", Value::Null),
            ("true", Value::Bool(true)),
            ("false", Value::Bool(false)),
        ] {
            if rest.starts_with(w) && !rest[w.len()..].starts_with(|c: char| c.is_alphanumeric() || c == '_') {
                self.pos += w.len();
                return Ok(v);
            }
        }
        for (w, f) in [
            ("float('inf')", f64::INFINITY),
            ("float(\"inf\")", f64::INFINITY),
            ("float('-inf')", f64::NEG_INFINITY),
            ("float(\"-inf\")", f64::NEG_INFINITY),
            ("float('nan')", f64::NAN),
            ("float(\"nan\")", f64::NAN),
        ] {
            if rest.starts_with(w) {
                self.pos += w.len();
                return Ok(float_value(f));
            }
        }
        Err(self.err("expected a literal"))
    }
}

/// JSON value for a float, using the sidecar for non-finite values.
pub fn float_value(f: f64) -> Value {
    match Number::from_f64(f) {
        Some(n) => Value::Number(n),
        None if f.is_nan() => json!({ TAG: "float", "v": "nan" }),
        None if f > 0.0 => json!({ TAG: "float", "v": "inf" }),
        None => json!({ TAG: "float", "v": "-inf" }),
    }
}

/// Renders a value in Python `repr` form.
pub fn render(v: &Value) -> String {
    match v {
        Value::Null => "None".into(),
        Value::Bool(true) => "True".into(),
        Value::Bool(false) => "False".into(),
        Value::Number(n) => render_number(n),
        Value::String(s) => render_str(s),
        Value::Array(items) => format!("[{}]", join(items)),
        Value::Object(map) => {
            if let Some((tag, payload)) = tagged(v) {
                match (tag, payload) {
                    ("tuple", Value::Array(items)) if items.len() == 1 => return format!("({},)", render(&items[0])),
                    ("tuple", Value::Array(items)) => return format!("({})", join(items)),
                    ("float", Value::String(s)) => return format!("float('{s}')"),
                    ("repr", Value::String(s)) => return s.clone(),
                    ("exception", Value::String(s)) => return format!("<raises {s}>"),
                    _ => {}
                }
            }
            let body: Vec<String> = map.iter().map(|(k, v)| format!("{}: {}", render_str(k), render(v))).collect();
            format!("{{{}}}", body.join(", "))
        }
    }
}

/// Renders an argument list without the surrounding parentheses.
pub fn render_args(args: &[Value]) -> String {
    join(args)
}

fn join(items: &[Value]) -> String {
    items.iter().map(render).collect::<Vec<_>>().join(", ")
}

fn render_number(n: &Number) -> String {
    if n.is_i64() || n.is_u64() {
        return n.to_string();
    }
    let f = n.as_f64().unwrap_or(f64::NAN);
    let abs = f.abs();
    if abs != 0.0 && !(1e-4..1e16).contains(&abs) {
        let s = format!("{f:e}");
        let (mantissa, exp) = s.split_once('e').unwrap_or((&s, "0"));
        let exp: i32 = exp.parse().unwrap_or(0);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{mantissa}e{sign}{:02}", exp.abs());
    }
    if f.fract() == 0.0 {
        format!("{f:.1}")
    } else {
        format!("{f}")
    }
}

fn render_str(s: &str) -> String {
    let quote = if s.contains('\'') && !s.contains('"') { '"' } else { '\'' };
    let mut out = String::with_capacity(s.len() + 2);
    out.push(quote);
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if c == quote => {
                out.push('\\');
                out.push(c);
            }
            c if (c as u32) < 0x20 || c as u32 == 0x7f => out.push_str(&format!("\\x{:02x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push(quote);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_scalars() {
        assert_eq!(parse_literal("12").unwrap(), json!(12));
        assert_eq!(parse_literal("-3").unwrap(), json!(-3));
        assert_eq!(parse_literal("2.5").unwrap(), json!(2.5));
        assert_eq!(parse_literal("1e3").unwrap(), json!(1000.0));
        assert_eq!(parse_literal("True").unwrap(), json!(true));
        assert_eq!(parse_literal("None").unwrap(), Value::Null);
        assert_eq!(parse_literal("'a\\'b'").unwrap(), json!("a'b"));
        assert_eq!(parse_literal("\"x\\ny\"").unwrap(), json!("x\ny"));
    }

    #[test]
    fn parses_containers() {
        assert_eq!(parse_literal("[1, [2, 3], ]").unwrap(), json!([1, [2, 3]]));
        assert_eq!(parse_literal("(1, 2)").unwrap(), tuple(vec![json!(1), json!(2)]));
        assert_eq!(parse_literal("(1,)").unwrap(), tuple(vec![json!(1)]));
        assert_eq!(parse_literal("(1)").unwrap(), json!(1));
        assert_eq!(parse_literal("{'a': 1}").unwrap(), json!({"a": 1}));
        assert_eq!(parse_literal("{1: 'x'}").unwrap(), opaque("{1: 'x'}"));
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_literal("gcd").is_err());
        assert!(parse_literal("[1, 2").is_err());
        assert!(parse_literal("1 2").is_err());
    }

    #[test]
    fn finds_calls() {
        let c = find_call("assert gcd(12, 20) == 4", "gcd").unwrap().unwrap();
        assert_eq!(c.args, vec![json!(12), json!(20)]);
        assert_eq!(c.after.trim(), "== 4");
        assert!(find_call("mygcd(1, 2)", "gcd").unwrap().is_none());
        assert!(find_call("no calls here", "gcd").unwrap().is_none());
        assert!(find_call("gcd(a, b)", "gcd").is_err());
        let kw = find_call("gcd(a=3, b=[1,2])", "gcd").unwrap().unwrap();
        assert_eq!(kw.args, vec![json!(3), json!([1, 2])]);
    }

    #[test]
    fn renders_python_repr() {
        assert_eq!(render(&json!([1, "a", null, true])), "[1, 'a', None, True]");
        assert_eq!(render(&tuple(vec![json!(1)])), "(1,)");
        assert_eq!(render(&json!(3.0)), "3.0");
        assert_eq!(render(&json!(1e20)), "1e+20");
        assert_eq!(render(&json!(1.5e-5)), "1.5e-05");
        assert_eq!(render(&json!("it's")), "\"it's\"");
    }

    fn arb_value() -> impl Strategy<Value = Value> {
        let leaf = prop_oneof![
            Just(Value::Null),
            any::<bool>().prop_map(Value::Bool),
            any::<i64>().prop_map(Value::from),
            (-1e12f64..1e12).prop_map(float_value),
            "[a-z '\"\\\\\n]{0,8}".prop_map(Value::String),
        ];
        leaf.prop_recursive(3, 16, 4, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 0..4).prop_map(Value::Array),
                prop::collection::vec(inner.clone(), 0..4).prop_map(tuple),
                prop::collection::btree_map("[a-z]{1,3}", inner, 0..3)
                    .prop_map(|m| Value::Object(m.into_iter().collect())),
            ]
        })
    }

    proptest! {
        #[test]
        fn render_then_parse_round_trips(v in arb_value()) {
            let text = render(&v);
            prop_assert_eq!(parse_literal(&text).unwrap(), v);
        }
    }
}
