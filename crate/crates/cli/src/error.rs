use std::fmt;

use prmix_core::PrError;

/// Process exit status classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Config,
    Data,
    Numerical,
    Io,
}

impl ExitKind {
    pub fn code(self) -> i32 {
        match self {
            ExitKind::Config => 2,
            ExitKind::Data => 3,
            ExitKind::Numerical => 4,
            ExitKind::Io => 1,
        }
    }

    pub fn of_core(err: &PrError) -> ExitKind {
        match err {
            PrError::Config(_) | PrError::InvalidSchedule(_) | PrError::InvalidSupport(_) => ExitKind::Config,
            PrError::Domain(_) => ExitKind::Data,
            PrError::InvalidMixing(_) | PrError::Nondegeneracy { .. } | PrError::Numerical(_) => ExitKind::Numerical,
        }
    }

    /// The class recorded on the outermost tagged layer of `err`, falling back
    /// to the first core error in its chain.
    pub fn of(err: &anyhow::Error) -> ExitKind {
        if let Some(kind) = err.downcast_ref::<ExitKind>() {
            return *kind;
        }
        err.chain()
            .find_map(|cause| cause.downcast_ref::<PrError>().map(ExitKind::of_core))
            .unwrap_or(ExitKind::Io)
    }
}

impl fmt::Display for ExitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExitKind::Config => "configuration error",
            ExitKind::Data => "data error",
            ExitKind::Numerical => "numerical error",
            ExitKind::Io => "i/o error",
        })
    }
}

/// Attaches an exit class to any error as its outermost context.
pub trait Tag<T> {
    fn tag(self, kind: ExitKind) -> anyhow::Result<T>;
}

impl<T, E> Tag<T> for Result<T, E>
where
    E: Into<anyhow::Error>,
{
    fn tag(self, kind: ExitKind) -> anyhow::Result<T> {
        self.map_err(|e| e.into().context(kind))
    }
}
