use htdetect::eval::EvalError;
use htdetect::explain::ExplainError;
use htdetect::model::ModelError;
use htdetect::netlist::{LabelError, ParseError};
use htdetect::postprocess::PostProcessError;

/// Exit status for bad input: unreadable files, malformed netlists or
/// configs, incompatible models.
pub const EXIT_INPUT: i32 = 2;
/// Exit status when an internal consistency check fails.
pub const EXIT_INVARIANT: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError { code: EXIT_INPUT, message: message.into() }
    }

    pub fn invariant(message: impl Into<String>) -> Self {
        CliError { code: EXIT_INVARIANT, message: message.into() }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Autodiff(_) | ModelError::DivergedTraining(_) => CliError::invariant(e.to_string()),
            _ => CliError::input(e.to_string()),
        }
    }
}

impl From<ExplainError> for CliError {
    fn from(e: ExplainError) -> Self {
        match e {
            ExplainError::Model(m) => m.into(),
            other => CliError::input(other.to_string()),
        }
    }
}

impl From<PostProcessError> for CliError {
    fn from(e: PostProcessError) -> Self {
        match e {
            PostProcessError::AlignmentError { .. } => CliError::invariant(e.to_string()),
            PostProcessError::InvalidConfig(_) => CliError::input(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::InvariantViolation(_) | EvalError::PartitionError(_) => CliError::invariant(e.to_string()),
            EvalError::Model(m) => m.into(),
            EvalError::Explain(x) => x.into(),
            EvalError::PostProcess(p) => p.into(),
            other => CliError::input(other.to_string()),
        }
    }
}

impl From<ParseError> for CliError {
    fn from(e: ParseError) -> Self {
        CliError::input(e.to_string())
    }
}

impl From<LabelError> for CliError {
    fn from(e: LabelError) -> Self {
        CliError::input(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_follow_the_error_kind() {
        let e: CliError = ModelError::VersionMismatch { found: 2, expected: 1 }.into();
        assert_eq!(e.code, EXIT_INPUT);
        let e: CliError = EvalError::InvariantViolation("x".into()).into();
        assert_eq!(e.code, EXIT_INVARIANT);
        let e: CliError = EvalError::InsufficientFamilies("x".into()).into();
        assert_eq!(e.code, EXIT_INPUT);
        let e: CliError = EvalError::Model(ModelError::ShapeMismatch("x".into())).into();
        assert_eq!(e.code, EXIT_INPUT);
    }
}
