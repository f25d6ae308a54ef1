use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },

    #[error("unknown identifier `{name}` at position {pos}")]
    UnknownIdentifier { pos: usize, name: String },

    #[error("degenerate gradient at ({x}, {y}): |grad g|^2 = {norm2:e}")]
    DegenerateGradient { x: f64, y: f64, norm2: f64 },

    #[error("point ({x}, {y}) is not on the trace: |g| = {residual:e}")]
    OffTrace { x: f64, y: f64, residual: f64 },

    #[error("ambiguous bridge at ({x}, {y}): Im dg/dkappa vanishes, the limiting process gives no indentation rule")]
    AmbiguousBridge { x: f64, y: f64 },

    #[error("direction is tangent to the trace (|e_z . n| = {dot:e})")]
    TangentDirection { dot: f64 },

    #[error("boundary direction at ({x}, {y}): {what}")]
    BoundaryDirection { x: f64, y: f64, what: String },

    #[error("incompatible bridges at tangential touch ({x}, {y})")]
    IncompatibleTouch { x: f64, y: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("surface construction failed: {0}")]
    Surface(String),

    #[error("branch cut proximity at ({re}, {im})")]
    CutProximity { re: f64, im: f64 },

    #[error("non-finite integrand at node ({i}, {j})")]
    NonFinite { i: usize, j: usize },

    #[error("scenario error (line {line}): {msg}")]
    Scenario { line: usize, msg: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("unknown component `{0}`")]
    UnknownComponent(String),

    #[error("{element}: {source}")]
    InScenario { element: String, source: Box<Error> },

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Tags an error with the scenario element that produced it.
    pub fn in_scenario(self, element: impl Into<String>) -> Self {
        Error::InScenario { element: element.into(), source: Box::new(self) }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
