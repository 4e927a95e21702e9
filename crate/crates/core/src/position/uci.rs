use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use super::{PieceKind, Square};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid UCI move {0:?}")]
pub struct UciError(pub String);

/// A move in UCI coordinate form (`e2e4`, `e7e8q`). Only the syntax is
/// checked; legality is not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct UciMove {
    pub from: Square,
    pub to: Square,
    pub promotion: Option<PieceKind>,
}

impl FromStr for UciMove {
    type Err = UciError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || UciError(s.to_string());
        if !s.is_ascii() || !(s.len() == 4 || s.len() == 5) {
            return Err(bad());
        }
        let from = Square::parse(&s[0..2]).ok_or_else(bad)?;
        let to = Square::parse(&s[2..4]).ok_or_else(bad)?;
        if from == to {
            return Err(bad());
        }
        let promotion = match s.as_bytes().get(4) {
            None => None,
            Some(b'q') => Some(PieceKind::Queen),
            Some(b'r') => Some(PieceKind::Rook),
            Some(b'b') => Some(PieceKind::Bishop),
            Some(b'n') => Some(PieceKind::Knight),
            Some(_) => return Err(bad()),
        };
        Ok(UciMove { from, to, promotion })
    }
}

impl fmt::Display for UciMove {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.from, self.to)?;
        if let Some(k) = self.promotion {
            write!(f, "{}", k.letter())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_prints() {
        for s in ["e2e4", "e7e8q", "a7b8n", "h1a8"] {
            assert_eq!(s.parse::<UciMove>().unwrap().to_string(), s);
        }
    }

    #[test]
    fn rejects_bad_syntax() {
        for s in ["", "e2", "e2e9", "e2e4k", "e2e4qq", "i2e4", "e2e2", "Nf3", "e2-e4"] {
            assert!(s.parse::<UciMove>().is_err(), "{s}");
        }
    }
}
