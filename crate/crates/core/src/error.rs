use alloc::boxed::Box;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Region of a file or log that failed validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Footer,
    RTableIndex,
    RTableDirectory,
    Record,
    Filter,
    DataBlock,
    BlockIndex,
    Properties,
    Wal,
    Manifest,
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Region::Footer => "footer",
            Region::RTableIndex => "rtable index partition",
            Region::RTableDirectory => "rtable partition directory",
            Region::Record => "record",
            Region::Filter => "filter",
            Region::DataBlock => "data block",
            Region::BlockIndex => "block index",
            Region::Properties => "properties",
            Region::Wal => "wal",
            Region::Manifest => "manifest",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("corrupted {region}: {detail}")]
    Corruption { region: Region, detail: &'static str },

    #[error("input keys are not strictly increasing")]
    Unsorted,

    #[error("table input is empty")]
    EmptyInput,

    #[error("unknown value file {0}")]
    UnknownFile(u64),

    #[error("inheritance violation: {0}")]
    Inheritance(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),

    #[error("io: {0}")]
    Io(Box<dyn core::error::Error + Send + Sync>),
}

impl Error {
    pub(crate) fn corrupt(region: Region, detail: &'static str) -> Self {
        Error::Corruption { region, detail }
    }

    pub fn is_corruption(&self) -> bool {
        matches!(self, Error::Corruption { .. })
    }
}
