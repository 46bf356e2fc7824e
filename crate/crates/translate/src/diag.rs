use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiagnosticKind {
    Syntax,
    UnknownField,
    UnitMismatch,
    MissingField,
    InvalidValue,
    MalformedPredicate,
    Unstable,
}

/// One problem found in a spec document.
#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    /// Dotted field path, e.g. `regions[0].material.poisson_ratio`.
    pub path: String,
    /// 1-based line, when it could be located.
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(line) = self.line {
            write!(f, "line {line}: ")?;
        }
        if !self.path.is_empty() {
            write!(f, "{}: ", self.path)?;
        }
        write!(f, "{}", self.message)
    }
}

/// A rejected spec with every diagnostic found.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub struct SpecError {
    pub diagnostics: Vec<Diagnostic>,
}

impl fmt::Display for SpecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid spec ({} problem", self.diagnostics.len())?;
        if self.diagnostics.len() != 1 {
            write!(f, "s")?;
        }
        write!(f, ")")?;
        for d in &self.diagnostics {
            write!(f, "\n  {d}")?;
        }
        Ok(())
    }
}

impl SpecError {
    pub fn has(&self, kind: DiagnosticKind) -> bool {
        self.diagnostics.iter().any(|d| d.kind == kind)
    }
}

/// 1-based line of a byte offset.
pub(crate) fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())]
        .bytes()
        .filter(|&b| b == b'\n')
        .count()
        + 1
}

/// Best-effort line of a dotted path such as `regions[1].material.kind`.
pub(crate) fn locate(text: &str, path: &str) -> Option<usize> {
    let lines: Vec<&str> = text.lines().collect();
    let header = |l: &str| {
        let t = l.trim_start();
        t.starts_with('[')
    };
    let header_name = |l: &str| -> String {
        l.trim()
            .trim_start_matches('[')
            .trim_end_matches(']')
            .replace(' ', "")
    };
    let mut start = 0usize;
    let mut prefix = String::new();
    let mut segments = path.split('.').peekable();
    let mut key = "";
    while let Some(seg) = segments.next() {
        let (name, index) = match seg.find('[') {
            Some(i) => (&seg[..i], seg[i + 1..seg.len() - 1].parse::<usize>().ok()),
            None => (seg, None),
        };
        let full = if prefix.is_empty() {
            name.to_string()
        } else {
            format!("{prefix}.{name}")
        };
        if segments.peek().is_none() && index.is_none() {
            key = name;
            break;
        }
        let found = match index {
            Some(n) => lines
                .iter()
                .enumerate()
                .skip(start)
                .filter(|(_, l)| l.trim_start().starts_with("[[") && header_name(l) == full)
                .nth(n)
                .map(|(i, _)| i),
            None => lines
                .iter()
                .enumerate()
                .skip(start)
                .find(|(_, l)| header(l) && header_name(l) == full)
                .map(|(i, _)| i),
        };
        match found {
            Some(i) => start = i,
            None => {
                // Inline table or missing header: look for `name =` instead.
                key = name;
                break;
            }
        }
        prefix = full;
        key = name;
    }
    let pattern = |l: &str| {
        let t = l.trim_start();
        t.strip_prefix(key)
            .map(|rest| rest.trim_start().starts_with('='))
            .unwrap_or(false)
            || l.contains(&format!(" {key} ="))
            || l.contains(&format!("{{{key} ="))
            || l.contains(&format!("{{ {key} ="))
    };
    lines
        .iter()
        .enumerate()
        .skip(start)
        .find(|(_, l)| pattern(l))
        .map(|(i, _)| i + 1)
        .or(if start > 0 { Some(start + 1) } else { None })
}
