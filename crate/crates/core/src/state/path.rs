use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PathError {
    #[error("attribute path must start with `/`: {0:?}")]
    NotAbsolute(String),
    #[error("attribute path has an empty segment: {0:?}")]
    EmptySegment(String),
}

/// Hierarchical attribute path such as `/CPUs/0/Current_thread`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AttributePath(Vec<String>);

impl AttributePath {
    pub fn new<I, S>(segments: I) -> Result<Self, PathError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let segments: Vec<String> = segments.into_iter().map(Into::into).collect();
        if segments.is_empty() || segments.iter().any(|s| s.is_empty() || s.contains('/')) {
            return Err(PathError::EmptySegment(format!("/{}", segments.join("/"))));
        }
        Ok(AttributePath(segments))
    }

    pub fn cpu_current_thread(cpu: u32) -> Self {
        AttributePath(vec!["CPUs".into(), cpu.to_string(), "Current_thread".into()])
    }

    pub fn thread_status(tid: i64) -> Self {
        AttributePath(vec!["Threads".into(), tid.to_string(), "Status".into()])
    }

    pub fn segments(&self) -> &[String] {
        &self.0
    }

    /// CPU id if this is a `/CPUs/{n}/Current_thread` path.
    pub fn as_cpu_current_thread(&self) -> Option<u32> {
        match self.0.as_slice() {
            [a, n, b] if a == "CPUs" && b == "Current_thread" => n.parse().ok(),
            _ => None,
        }
    }
}

impl FromStr for AttributePath {
    type Err = PathError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let rest = s
            .strip_prefix('/')
            .ok_or_else(|| PathError::NotAbsolute(s.to_string()))?;
        if rest.split('/').any(str::is_empty) {
            return Err(PathError::EmptySegment(s.to_string()));
        }
        Ok(AttributePath(rest.split('/').map(String::from).collect()))
    }
}

impl fmt::Display for AttributePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for seg in &self.0 {
            write!(f, "/{seg}")?;
        }
        Ok(())
    }
}
