use std::io;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Format(#[from] kvsep_core::Error),

    #[error("io: {0}")]
    Io(#[from] io::Error),

    #[error("file {file}: {source}")]
    InFile {
        file: u64,
        #[source]
        source: kvsep_core::Error,
    },

    #[error("referenced file {0} is missing")]
    MissingFile(u64),

    #[error("key {key:?} not found in value file {file} although the index references it")]
    DanglingReference { key: Vec<u8>, file: u64 },

    #[error("writes stalled: disk usage stayed above the space quota")]
    WriteStalled,

    #[error("crash injected at {0}")]
    InjectedCrash(&'static str),

    #[error("engine is unusable after an earlier failure: {0}")]
    Poisoned(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
}

impl Error {
    pub(crate) fn in_file(file: u64) -> impl FnOnce(kvsep_core::Error) -> Error {
        move |source| Error::InFile { file, source }
    }

    pub fn is_corruption(&self) -> bool {
        match self {
            Error::Format(e) | Error::InFile { source: e, .. } => e.is_corruption(),
            _ => false,
        }
    }
}
