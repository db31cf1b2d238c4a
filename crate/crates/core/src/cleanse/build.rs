use super::spec::DelimiterSpec;

/// Name of the document root element.
pub const ROOT_NAME: &str = "extract";
/// Open sequences are not recognized once this many elements are open.
pub const MAX_DEPTH: usize = 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StructuredNode {
    Element(Element),
    Text(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Element {
    pub name: String,
    /// Still open when the input ended.
    pub unterminated: bool,
    pub children: Vec<StructuredNode>,
}

impl Element {
    pub fn new(name: impl Into<String>) -> Self {
        Element {
            name: name.into(),
            unterminated: false,
            children: Vec::new(),
        }
    }

    /// Appends text, merging into a trailing Text child.
    pub fn push_text(&mut self, bytes: &[u8]) {
        if bytes.is_empty() {
            return;
        }
        if let Some(StructuredNode::Text(t)) = self.children.last_mut() {
            t.extend_from_slice(bytes);
        } else {
            self.children.push(StructuredNode::Text(bytes.to_vec()));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuredDocument {
    pub root: Element,
}

impl Default for StructuredDocument {
    fn default() -> Self {
        StructuredDocument {
            root: Element::new(ROOT_NAME),
        }
    }
}

impl StructuredDocument {
    /// Depth-first pre-order visit of every element, root included.
    pub fn elements(&self) -> Vec<&Element> {
        let mut out = Vec::new();
        let mut stack = vec![&self.root];
        while let Some(e) = stack.pop() {
            out.push(e);
            for child in e.children.iter().rev() {
                if let StructuredNode::Element(c) = child {
                    stack.push(c);
                }
            }
        }
        out
    }

    /// All Text bytes in document order.
    pub fn text_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let mut stack: Vec<std::slice::Iter<'_, StructuredNode>> = vec![self.root.children.iter()];
        while let Some(top) = stack.last_mut() {
            match top.next() {
                Some(StructuredNode::Text(t)) => out.extend_from_slice(t),
                Some(StructuredNode::Element(e)) => stack.push(e.children.iter()),
                None => {
                    stack.pop();
                }
            }
        }
        out
    }

    pub fn unterminated_count(&self) -> usize {
        self.elements().iter().filter(|e| e.unterminated).count()
    }

    /// Bytes of the open/close occurrences the builder consumed, computed
    /// from the tree: every element contributes its open sequence, and its
    /// close sequence unless it is unterminated.
    pub fn consumed_delimiter_bytes(&self, spec: &DelimiterSpec) -> usize {
        self.elements()
            .into_iter()
            .skip(1)
            .map(|e| {
                let rule = spec
                    .rule(&e.name)
                    .expect("element names come from the spec");
                rule.open.len() + if e.unterminated { 0 } else { rule.close.len() }
            })
            .sum()
    }

    /// Checks node invariants: non-empty Text, no adjacent Text siblings,
    /// root named `extract` and never unterminated.
    pub fn is_well_formed(&self) -> bool {
        if self.root.name != ROOT_NAME || self.root.unterminated {
            return false;
        }
        self.elements().iter().all(|e| {
            let mut prev_text = false;
            e.children.iter().all(|c| match c {
                StructuredNode::Text(t) => {
                    let ok = !t.is_empty() && !prev_text;
                    prev_text = true;
                    ok
                }
                StructuredNode::Element(_) => {
                    prev_text = false;
                    true
                }
            })
        })
    }
}

struct Frame {
    element: Element,
    close: Vec<u8>,
}

/// Single left-to-right scan with an element stack rooted at `extract`.
///
/// At each offset, in order: the innermost open element's close sequence
/// pops it; otherwise the first rule (in spec order) whose open sequence
/// matches pushes a new element; otherwise the byte is text. Elements still
/// open at end of input are closed and flagged `unterminated`.
pub fn build_structure(raw: &[u8], spec: &DelimiterSpec) -> StructuredDocument {
    let mut may_start = [false; 256];
    for r in spec.rules() {
        may_start[r.open[0] as usize] = true;
        may_start[r.close[0] as usize] = true;
    }

    let mut root = Element::new(ROOT_NAME);
    let mut stack: Vec<Frame> = Vec::new();
    let mut text_start = 0;
    let mut pos = 0;

    macro_rules! current {
        () => {
            match stack.last_mut() {
                Some(f) => &mut f.element,
                None => &mut root,
            }
        };
    }

    while pos < raw.len() {
        if !may_start[raw[pos] as usize] {
            pos += 1;
            continue;
        }
        let rest = &raw[pos..];
        if let Some(top) = stack.last() {
            if rest.starts_with(&top.close) {
                let len = top.close.len();
                current!().push_text(&raw[text_start..pos]);
                let done = stack.pop().expect("non-empty").element;
                current!().children.push(StructuredNode::Element(done));
                pos += len;
                text_start = pos;
                continue;
            }
        }
        if stack.len() < MAX_DEPTH {
            if let Some(rule) = spec.rules().iter().find(|r| rest.starts_with(&r.open)) {
                current!().push_text(&raw[text_start..pos]);
                stack.push(Frame {
                    element: Element::new(rule.element_name.clone()),
                    close: rule.close.clone(),
                });
                pos += rule.open.len();
                text_start = pos;
                continue;
            }
        }
        pos += 1;
    }
    current!().push_text(&raw[text_start..]);
    while let Some(frame) = stack.pop() {
        let mut done = frame.element;
        done.unterminated = true;
        current!().children.push(StructuredNode::Element(done));
    }
    StructuredDocument { root }
}

/// The raw bytes with every consumed open/close occurrence removed.
pub fn strip_delimiters(raw: &[u8], spec: &DelimiterSpec) -> Vec<u8> {
    build_structure(raw, spec).text_bytes()
}
