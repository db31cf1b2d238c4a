//! XML serialization of a [`StructuredDocument`] and its exact inverse.
//!
//! Text bytes 0x20..=0x7E are written literally except `&`, `<`, `>` (entity
//! escaped) and `\` (written as `\x5c` so that the `\xHH` escape stays
//! unambiguous). Every other byte is written as `\xHH`, lowercase.

use super::build::{Element, StructuredDocument, StructuredNode, ROOT_NAME};
use super::spec::is_xml_name;
use super::CleanseError;

pub const XML_DECLARATION: &str = r#"<?xml version="1.0" encoding="UTF-8"?>"#;
const UNTERMINATED_ATTR: &str = r#" unterminated="1""#;

fn escapes_as_hex(b: u8) -> bool {
    !(0x20..=0x7E).contains(&b) || b == b'\\'
}

fn push_text(out: &mut String, bytes: &[u8]) {
    const HEX: &[u8; 16] = b"0123456789abcdef";
    for &b in bytes {
        match b {
            b'&' => out.push_str("&amp;"),
            b'<' => out.push_str("&lt;"),
            b'>' => out.push_str("&gt;"),
            _ if escapes_as_hex(b) => {
                out.push_str("\\x");
                out.push(HEX[(b >> 4) as usize] as char);
                out.push(HEX[(b & 0xF) as usize] as char);
            }
            _ => out.push(b as char),
        }
    }
}

fn push_element(out: &mut String, e: &Element) {
    out.push('<');
    out.push_str(&e.name);
    if e.unterminated {
        out.push_str(UNTERMINATED_ATTR);
    }
    if e.children.is_empty() {
        out.push_str("/>");
        return;
    }
    out.push('>');
    for c in &e.children {
        match c {
            StructuredNode::Text(t) => push_text(out, t),
            StructuredNode::Element(child) => push_element(out, child),
        }
    }
    out.push_str("</");
    out.push_str(&e.name);
    out.push('>');
}

pub fn to_xml(doc: &StructuredDocument) -> String {
    let mut out = String::with_capacity(XML_DECLARATION.len() + 64);
    out.push_str(XML_DECLARATION);
    push_element(&mut out, &doc.root);
    out
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, msg: &str) -> CleanseError {
        CleanseError::MalformedXml {
            offset: self.pos,
            msg: msg.to_string(),
        }
    }

    fn eat(&mut self, lit: &str) -> bool {
        if self.src[self.pos..].starts_with(lit.as_bytes()) {
            self.pos += lit.len();
            true
        } else {
            false
        }
    }

    fn name(&mut self) -> Result<String, CleanseError> {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || matches!(self.src[self.pos], b'_' | b'-' | b'.'))
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        if !is_xml_name(name) {
            self.pos = start;
            return Err(self.err("invalid element name"));
        }
        Ok(name.to_string())
    }

    /// Parses `<name [unterminated="1"]>` or the self-closing form after the
    /// leading `<` has been consumed. Returns the element and whether it was
    /// self-closing.
    fn start_tag(&mut self) -> Result<(Element, bool), CleanseError> {
        let mut e = Element::new(self.name()?);
        if self.eat(UNTERMINATED_ATTR) {
            e.unterminated = true;
        }
        if self.eat("/>") {
            Ok((e, true))
        } else if self.eat(">") {
            Ok((e, false))
        } else {
            Err(self.err("expected `>` or `/>`"))
        }
    }

    fn text(&mut self) -> Result<Vec<u8>, CleanseError> {
        let mut out = Vec::new();
        while let Some(&b) = self.src.get(self.pos) {
            match b {
                b'<' => break,
                b'&' => {
                    let byte = if self.eat("&amp;") {
                        b'&'
                    } else if self.eat("&lt;") {
                        b'<'
                    } else if self.eat("&gt;") {
                        b'>'
                    } else {
                        return Err(self.err("unknown entity"));
                    };
                    out.push(byte);
                }
                b'\\' => {
                    let hex_digits = self
                        .src
                        .get(self.pos + 2..self.pos + 4)
                        .filter(|_| self.src[self.pos + 1] == b'x')
                        .filter(|h| h.iter().all(|c| matches!(c, b'0'..=b'9' | b'a'..=b'f')))
                        .ok_or_else(|| self.err("invalid \\x escape"))?;
                    let mut byte = [0u8; 1];
                    hex::decode_to_slice(hex_digits, &mut byte).expect("validated hex");
                    if !escapes_as_hex(byte[0]) {
                        return Err(self.err("printable byte written as \\x escape"));
                    }
                    out.push(byte[0]);
                    self.pos += 4;
                }
                0x20..=0x7E if b != b'>' => {
                    out.push(b);
                    self.pos += 1;
                }
                _ => return Err(self.err("unescaped character in text")),
            }
        }
        Ok(out)
    }
}

/// Parses the exact output of [`to_xml`] back into a document.
pub fn from_xml(text: &str) -> Result<StructuredDocument, CleanseError> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
    };
    if !p.eat(XML_DECLARATION) {
        return Err(p.err("missing XML declaration"));
    }
    if !p.eat("<") {
        return Err(p.err("expected root element"));
    }
    let (root, self_closing) = p.start_tag()?;
    if root.name != ROOT_NAME || root.unterminated {
        return Err(p.err("root must be a plain `extract` element"));
    }
    let root = if self_closing {
        root
    } else {
        let mut stack = vec![root];
        loop {
            let t = p.text()?;
            if !t.is_empty() {
                stack.last_mut().expect("open element").push_text(&t);
            }
            if p.pos >= p.src.len() {
                return Err(p.err("unexpected end of input"));
            }
            if p.eat("</") {
                let name = p.name()?;
                if !p.eat(">") {
                    return Err(p.err("expected `>`"));
                }
                let done = stack.pop().expect("open element");
                if done.name != name {
                    return Err(p.err("mismatched end tag"));
                }
                if done.children.is_empty() {
                    return Err(p.err("empty element must be self-closing"));
                }
                match stack.last_mut() {
                    Some(parent) => parent.children.push(StructuredNode::Element(done)),
                    None => break done,
                }
            } else {
                p.pos += 1; // '<'
                let (e, self_closing) = p.start_tag()?;
                if self_closing {
                    stack
                        .last_mut()
                        .expect("open element")
                        .children
                        .push(StructuredNode::Element(e));
                } else {
                    stack.push(e);
                }
            }
        }
    };
    if p.pos != p.src.len() {
        return Err(p.err("content after root element"));
    }
    Ok(StructuredDocument { root })
}
