use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The three MIR tasks the model is configured for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Tagging,
    Melody,
    Chord,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Tagging, Task::Melody, Task::Chord];

    pub fn name(self) -> &'static str {
        match self {
            Task::Tagging => "tagging",
            Task::Melody => "melody",
            Task::Chord => "chord",
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::config(format!("unknown task {s:?} (expected tagging, melody or chord)")))
    }
}
