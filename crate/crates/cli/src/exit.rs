use std::fmt;

pub const OK: i32 = 0;
pub const PARTIAL: i32 = 1;
pub const INVOCATION: i32 = 2;
pub const DATA: i32 = 3;

/// A failure carrying the process exit code it maps to.
#[derive(Debug)]
pub struct Exit {
    pub code: i32,
    pub message: String,
}

impl Exit {
    pub fn invocation(message: impl Into<String>) -> Self {
        Exit {
            code: INVOCATION,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Exit {
            code: PARTIAL,
            message: message.into(),
        }
    }
}

/// Exit code for a library error: bad parameters are invocation errors, bad
/// file content is a data error, anything else is a runtime failure.
pub fn code_for(e: &encmap::Error) -> i32 {
    match e {
        encmap::Error::Parameter(_) | encmap::Error::Lookup(_) => INVOCATION,
        e if e.is_data_error() => DATA,
        _ => PARTIAL,
    }
}

impl From<encmap::Error> for Exit {
    fn from(e: encmap::Error) -> Self {
        Exit {
            code: code_for(&e),
            message: e.to_string(),
        }
    }
}

impl fmt::Display for Exit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}
