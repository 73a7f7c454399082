//! Compiler diagnostics shared by validation, the layout passes and the
//! cluster legality pass.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Severity {
    Warning,
    Error,
}

/// A source position attached to a diagnostic or one of its notes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Site {
    /// Pre-order instruction id, when the site is an instruction.
    pub inst: Option<usize>,
    /// 1-based source line, 0 when unknown (e.g. compiler-inserted code).
    pub line: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Note {
    pub message: String,
    pub site: Site,
}

/// A single diagnostic with a stable code such as `V003`, `L001` or `C001`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: &'static str,
    pub message: String,
    pub site: Site,
    pub notes: Vec<Note>,
}

impl Diagnostic {
    pub fn error(code: &'static str, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Error,
            code,
            message: message.into(),
            site: Site::default(),
            notes: Vec::new(),
        }
    }

    pub fn warning(code: &'static str, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            ..Diagnostic::error(code, message)
        }
    }

    pub fn at(mut self, inst: Option<usize>, line: u32) -> Self {
        self.site = Site { inst, line };
        self
    }

    pub fn with_note(mut self, message: impl Into<String>, site: Site) -> Self {
        self.notes.push(Note {
            message: message.into(),
            site,
        });
        self
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }

    /// Renders the diagnostic in a rustc-like form. With `color` set, the
    /// severity label is wrapped in ANSI escapes.
    pub fn render(&self, color: bool) -> String {
        let label = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        let head = if color {
            let code = match self.severity {
                Severity::Error => "1;31",
                Severity::Warning => "1;33",
            };
            format!("\x1b[{code}m{label}[{}]\x1b[0m", self.code)
        } else {
            format!("{label}[{}]", self.code)
        };
        let mut out = format!("{head}: {}\n", self.message);
        if self.site != Site::default() {
            out.push_str(&format!("  --> {}\n", self.site));
        }
        for note in &self.notes {
            out.push_str(&format!("  = note: {} ({})\n", note.message, note.site));
        }
        out
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.inst, self.line) {
            (Some(i), 0) => write!(f, "inst #{i}"),
            (Some(i), l) => write!(f, "line {l}, inst #{i}"),
            (None, 0) => write!(f, "<declaration>"),
            (None, l) => write!(f, "line {l}"),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render(false))
    }
}

pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(Diagnostic::is_error)
}
