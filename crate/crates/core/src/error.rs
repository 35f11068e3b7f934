use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("grid size {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("grid mismatch: {left} vs {right}")]
    GridMismatch { left: String, right: String },

    #[error("matrix {matrix:?} is not hyperbolic (|trace| = {trace}, det = {det})")]
    NotHyperbolic {
        matrix: [[i64; 2]; 2],
        trace: i64,
        det: i64,
    },

    #[error("invariant cone violated at orbit point {point:?} (iterate {iterate})")]
    ConeViolation { point: [f64; 2], iterate: usize },

    #[error("graph left the invariant cone at grid index {index} (point {point:?})")]
    ConeExit { index: usize, point: [f64; 2] },

    #[error("frames degenerate at grid index {index}: |det| = {det:e}")]
    FrameDegenerate { index: usize, det: f64 },

    #[error("no convergence after {iterations} iterations; last sup-changes {history:?}")]
    NonConvergence { iterations: usize, history: Vec<f64> },

    #[error("requested accuracy {requested:e} not reachable at N = {grid} (best {achieved:e}); need N >= {required_grid}")]
    Resolution {
        requested: f64,
        achieved: f64,
        grid: usize,
        required_grid: usize,
    },

    #[error("ellipticity fails at x = {x:?}, k = {k:?}: |sigma| / |k|^m = {ratio:e}")]
    Ellipticity { x: [f64; 3], k: [i64; 3], ratio: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("Riccati integration blew up at t = {time}: |r| = {value:e}")]
    BlowUp { time: f64, value: f64 },

    #[error("escape weight not certified: worst monotonicity defect {worst:e} at x = {x:?}, direction angle {angle}")]
    Certificate { worst: f64, x: [f64; 2], angle: f64 },

    #[error("truncation N = {requested} too small for the weight cones; need N >= {minimum}")]
    TruncationTooSmall { requested: usize, minimum: usize },

    #[error("rates not converged: {0}")]
    NotConverged(String),

    #[error("eigensolver failure: {0}")]
    Eigensolver(String),

    #[error("malformed field file: {0}")]
    Format(String),

    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
