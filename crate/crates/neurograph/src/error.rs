use std::io;
use std::path::PathBuf;

use neurograph_core::arch::ArchError;
use neurograph_core::automorphism::AutomorphismError;
use neurograph_core::compute_graph::CompGraphError;
use neurograph_core::gnn::GnnError;
use neurograph_core::param_graph::ParamGraphError;
use neurograph_core::tasks::TaskError;
use neurograph_core::train::TrainError;
use thiserror::Error;

/// Process exit codes shared by every command.
pub mod exit {
    pub const OK: i32 = 0;
    pub const VERIFICATION: i32 = 1;
    pub const INPUT: i32 = 2;
    pub const UNSUPPORTED: i32 = 3;
    pub const INVARIANT: i32 = 4;
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    ParamGraph(#[from] ParamGraphError),
    #[error(transparent)]
    CompGraph(#[from] CompGraphError),
    #[error(transparent)]
    Automorphism(#[from] AutomorphismError),
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Task(#[from] TaskError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Json { .. } | Error::Input(_) | Error::Config(_) => exit::INPUT,
            Error::Unsupported(_) => exit::UNSUPPORTED,
            Error::Verification(_) => exit::VERIFICATION,
            Error::Invariant(_) => exit::INVARIANT,
            Error::Arch(e) => arch_code(e),
            Error::ParamGraph(e) => param_graph_code(e),
            Error::CompGraph(e) => comp_graph_code(e),
            Error::Automorphism(e) => automorphism_code(e),
            Error::Gnn(e) => gnn_code(e),
            Error::Train(e) => train_code(e),
            Error::Task(e) => task_code(e),
        }
    }
}

fn arch_code(e: &ArchError) -> i32 {
    match e {
        ArchError::Unsupported { .. } => exit::UNSUPPORTED,
        _ => exit::INPUT,
    }
}

fn param_graph_code(e: &ParamGraphError) -> i32 {
    match e {
        ParamGraphError::UnsupportedLayer { .. } => exit::UNSUPPORTED,
        ParamGraphError::EmptyGraph => exit::INPUT,
        ParamGraphError::Arch(e) => arch_code(e),
        _ => exit::INVARIANT,
    }
}

fn comp_graph_code(e: &CompGraphError) -> i32 {
    match e {
        CompGraphError::UnsupportedForComputationGraph { .. } => exit::UNSUPPORTED,
        CompGraphError::Arch(e) => arch_code(e),
        _ => exit::INPUT,
    }
}

fn automorphism_code(e: &AutomorphismError) -> i32 {
    match e {
        AutomorphismError::TooLarge { .. } | AutomorphismError::WrongFamily { .. } => exit::UNSUPPORTED,
        AutomorphismError::Graph(e) => comp_graph_code(e),
        AutomorphismError::Arch(e) => arch_code(e),
        _ => exit::INVARIANT,
    }
}

fn gnn_code(e: &GnnError) -> i32 {
    match e {
        GnnError::UnsupportedNonlinearity(_) | GnnError::NotAnMlp(_) => exit::UNSUPPORTED,
        GnnError::InvalidModel(_) | GnnError::ShapeMismatch(_) => exit::INPUT,
        GnnError::DimMismatch { .. } | GnnError::NonFinite(_) => exit::INVARIANT,
        GnnError::Arch(e) => arch_code(e),
        GnnError::Graph(e) => comp_graph_code(e),
        GnnError::ParamGraph(e) => param_graph_code(e),
    }
}

fn train_code(e: &TrainError) -> i32 {
    match e {
        TrainError::NonFiniteLoss { .. } => exit::INVARIANT,
        TrainError::Gnn(e) => gnn_code(e),
        TrainError::Arch(e) => arch_code(e),
        _ => exit::INPUT,
    }
}

fn task_code(e: &TaskError) -> i32 {
    match e {
        TaskError::Arch(e) => arch_code(e),
        TaskError::ParamGraph(e) => param_graph_code(e),
        TaskError::Graph(e) => comp_graph_code(e),
        TaskError::Gnn(e) => gnn_code(e),
        TaskError::Train(e) => train_code(e),
        _ => exit::INPUT,
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
