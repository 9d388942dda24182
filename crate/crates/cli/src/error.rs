use roml::RomlError;
use thiserror::Error;

/// Exit status for bad arguments or unreadable inputs.
pub const EXIT_USAGE: i32 = 1;
/// Exit status for numerical failures inside a solver.
pub const EXIT_NUMERIC: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Solver(#[from] RomlError),
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        Self::Input(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Input(_) => EXIT_USAGE,
            Self::Solver(e) if is_numeric(e) => EXIT_NUMERIC,
            Self::Solver(_) => EXIT_USAGE,
        }
    }
}

fn is_numeric(e: &RomlError) -> bool {
    match e {
        RomlError::SvdFailure { .. }
        | RomlError::NonFinite { .. }
        | RomlError::InsufficientSpectrum { .. }
        | RomlError::IsolatedPoint { .. } => true,
        RomlError::AtInlierCount { source, .. } => is_numeric(source),
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::input("x").exit_code(), EXIT_USAGE);
        assert_eq!(CliError::from(RomlError::Config("n".into())).exit_code(), EXIT_USAGE);
        let svd = RomlError::SvdFailure { rows: 1, cols: 1, iterations: 1 };
        assert_eq!(CliError::from(svd.clone()).exit_code(), EXIT_NUMERIC);
        let wrapped = RomlError::AtInlierCount { n: 2, source: Box::new(svd) };
        assert_eq!(CliError::from(wrapped).exit_code(), EXIT_NUMERIC);
    }
}
