use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch in {dim}: {detail}")]
    Shape {
        op: &'static str,
        dim: &'static str,
        detail: String,
    },
    #[error("image extent {extent} is not a multiple of block size {block}; pad with pad_to_block_multiple first")]
    NotDivisible { extent: usize, block: usize },
    #[error("{what} must hold an even number of scalars, got {len}")]
    OddLength { what: &'static str, len: usize },
    #[error("latent norm {norm:e} is too small to normalize")]
    DegenerateLatent { norm: f64 },
    #[error("{what} = {value} is out of range ({range})")]
    OutOfRange {
        what: &'static str,
        value: String,
        range: String,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
}

impl Error {
    pub fn shape(op: &'static str, dim: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            dim,
            detail: detail.into(),
        }
    }
}
