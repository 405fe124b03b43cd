use thiserror::Error;

use crate::block_io::BlockAddr;

#[derive(Debug, Error)]
pub enum Error {
    #[error("block {0} is not allocated")]
    Address(BlockAddr),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("pinned working set would exceed {limit} blocks (requested {requested})")]
    PinLimit { limit: usize, requested: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("too many queries in batch: {got} > {max}")]
    BatchSize { got: usize, max: usize },
    #[error("invalid state: {0}")]
    State(String),
    #[error("duplicate id {0}")]
    DuplicateId(u64),
    #[error("unknown id {0}")]
    MissingId(u64),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
