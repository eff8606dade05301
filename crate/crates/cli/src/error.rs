use std::fmt;

use dnnsim::experiments::SweepError;
use dnnsim::mechanisms::MechError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Category {
    /// Well-formed input that breaks a domain constraint.
    Validation,
    Io,
    /// Malformed input.
    Parse,
    /// The simulator caught itself violating an invariant.
    Invariant,
}

impl Category {
    fn name(self) -> &'static str {
        match self {
            Category::Validation => "validation",
            Category::Io => "io",
            Category::Parse => "parse",
            Category::Invariant => "invariant",
        }
    }

    fn code(self) -> u8 {
        match self {
            Category::Validation | Category::Io => 1,
            Category::Parse => 2,
            Category::Invariant => 3,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub category: Category,
    pub message: String,
}

impl CliError {
    pub fn new(category: Category, message: impl fmt::Display) -> Self {
        // Keep the report on a single line.
        let message = message.to_string().replace('\n', " ");
        CliError { category, message }
    }

    pub fn code(&self) -> u8 {
        self.category.code()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error:{}: {}", self.category.name(), self.message)
    }
}

pub fn validation(m: impl fmt::Display) -> CliError {
    CliError::new(Category::Validation, m)
}

pub fn parse(m: impl fmt::Display) -> CliError {
    CliError::new(Category::Parse, m)
}

pub fn io(m: impl fmt::Display) -> CliError {
    CliError::new(Category::Io, m)
}

pub fn invariant(m: impl fmt::Display) -> CliError {
    CliError::new(Category::Invariant, m)
}

impl From<MechError> for CliError {
    fn from(e: MechError) -> Self {
        match e {
            MechError::Engine(_) => invariant(e),
            MechError::Validation(_) | MechError::Unsupported(_) => validation(e),
        }
    }
}

impl From<SweepError> for CliError {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Scenario { context, source } => {
                let inner = CliError::from(source);
                CliError::new(inner.category, format!("{context}: {}", inner.message))
            }
            SweepError::Io { .. } => io(e),
            SweepError::Spec(_) | SweepError::Incomplete(_) => validation(e),
        }
    }
}
