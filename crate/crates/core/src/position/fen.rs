//! FEN / X-FEN reading and canonical writing.
//!
//! Canonical output rules:
//! - placement, side, en passant and counters as in ordinary FEN;
//! - castling uses `KQkq` only when every right belongs to a king on the
//!   e-file castling with an a- or h-file rook, otherwise every right is
//!   written as its rook-file letter (uppercase for White) in ascending file
//!   order, White before Black, e.g. `FHfh`.
//!
//! On input `K`/`Q` (and `k`/`q`) name the outermost rook on that side of the
//! king, file letters name the rook file directly.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use super::{file_char, CastlingRight, Color, FenError, Piece, PieceKind, Position, PositionParts, Square};

pub const START_FEN: &str = "rnbqkbnr/pppppppp/8/8/8/8/PPPPPPPP/RNBQKBNR w KQkq - 0 1";

fn malformed(msg: impl Into<String>) -> FenError {
    FenError::MalformedFen(msg.into())
}

impl Position {
    pub fn parse_fen(text: &str) -> Result<Position, FenError> {
        let fields: Vec<&str> = text.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(malformed(format!("expected 6 fields, found {}", fields.len())));
        }
        let halfmove = fields[4]
            .parse::<u32>()
            .map_err(|_| malformed(format!("bad halfmove clock {:?}", fields[4])))?;
        let fullmove = fields[5]
            .parse::<u32>()
            .map_err(|_| malformed(format!("bad fullmove number {:?}", fields[5])))?;
        Position::from_fen_fields(fields[0], fields[1], fields[2], fields[3], halfmove, fullmove)
    }

    /// Builds a position from the four board fields plus counters. Shared by
    /// the FEN and EPD readers.
    pub fn from_fen_fields(
        placement: &str,
        side: &str,
        castling: &str,
        en_passant: &str,
        halfmove_clock: u32,
        fullmove_number: u32,
    ) -> Result<Position, FenError> {
        let mut parts = PositionParts::empty();
        parts.board = parse_placement(placement)?;
        parts.side_to_move = match side {
            "w" => Color::White,
            "b" => Color::Black,
            other => return Err(malformed(format!("bad side to move {other:?}"))),
        };
        parts.en_passant = match en_passant {
            "-" => None,
            s => Some(Square::parse(s).ok_or_else(|| malformed(format!("bad en passant square {s:?}")))?),
        };
        parts.halfmove_clock = halfmove_clock;
        parts.fullmove_number = fullmove_number;

        // board legality first, so castling resolution can rely on the kings
        let letters = castling_letters(castling)?;
        let board_only = Position::from_parts(parts.clone())?;
        parts.castling = resolve_castling(&board_only, &letters)?;
        Position::from_parts(parts)
    }

    pub fn to_fen(&self) -> String {
        let mut out = String::with_capacity(90);
        write_placement(self, &mut out);
        out.push(' ');
        out.push(match self.side_to_move() {
            Color::White => 'w',
            Color::Black => 'b',
        });
        out.push(' ');
        out.push_str(&self.castling_string());
        out.push(' ');
        match self.en_passant() {
            Some(sq) => write!(out, "{sq}").unwrap(),
            None => out.push('-'),
        }
        write!(out, " {} {}", self.halfmove_clock(), self.fullmove_number()).unwrap();
        out
    }

    /// The canonical castling field (`-` when there are no rights).
    pub fn castling_string(&self) -> String {
        let rights = self.castling();
        if rights.is_empty() {
            return "-".into();
        }
        let standard = rights.iter().all(|r| {
            self.king_square(r.color).file() == 4 && (r.rook_file == 0 || r.rook_file == 7)
        });
        let mut out = String::new();
        for color in Color::ALL {
            let files: Vec<u8> = rights
                .iter()
                .filter(|r| r.color == color)
                .map(|r| r.rook_file)
                .collect();
            if standard {
                // K before Q
                for f in files.iter().rev() {
                    let c = if *f == 7 { 'k' } else { 'q' };
                    out.push(cased(c, color));
                }
            } else {
                for f in files {
                    out.push(cased(file_char(f), color));
                }
            }
        }
        out
    }
}

fn cased(c: char, color: Color) -> char {
    match color {
        Color::White => c.to_ascii_uppercase(),
        Color::Black => c,
    }
}

fn parse_placement(text: &str) -> Result<[Option<Piece>; 64], FenError> {
    let ranks: Vec<&str> = text.split('/').collect();
    if ranks.len() != 8 {
        return Err(malformed(format!("placement has {} ranks", ranks.len())));
    }
    let mut board = [None; 64];
    for (i, row) in ranks.iter().enumerate() {
        let rank = 7 - i as u8;
        let mut file = 0u8;
        for c in row.chars() {
            if let Some(d) = c.to_digit(10) {
                if !(1..=8).contains(&d) {
                    return Err(malformed(format!("bad empty-run digit {c:?}")));
                }
                file += d as u8;
            } else if let Some(p) = Piece::from_char(c) {
                if file >= 8 {
                    return Err(malformed(format!("rank {} overflows", rank + 1)));
                }
                board[Square::new(file, rank).unwrap().index()] = Some(p);
                file += 1;
            } else {
                return Err(malformed(format!("bad placement character {c:?}")));
            }
            if file > 8 {
                return Err(malformed(format!("rank {} overflows", rank + 1)));
            }
        }
        if file != 8 {
            return Err(malformed(format!("rank {} has {} files", rank + 1, file)));
        }
    }
    Ok(board)
}

fn write_placement(p: &Position, out: &mut String) {
    for rank in (0..8).rev() {
        let mut empty = 0;
        for file in 0..8 {
            match p.piece_at(Square::new(file, rank).unwrap()) {
                Some(piece) => {
                    if empty > 0 {
                        out.push(char::from(b'0' + empty));
                        empty = 0;
                    }
                    out.push(piece.to_char());
                }
                None => empty += 1,
            }
        }
        if empty > 0 {
            out.push(char::from(b'0' + empty));
        }
        if rank > 0 {
            out.push('/');
        }
    }
}

fn castling_letters(text: &str) -> Result<Vec<char>, FenError> {
    if text == "-" {
        return Ok(Vec::new());
    }
    let mut seen = BTreeSet::new();
    for c in text.chars() {
        let ok = matches!(c, 'K' | 'Q' | 'k' | 'q' | 'A'..='H' | 'a'..='h');
        if !ok {
            return Err(malformed(format!("bad castling character {c:?}")));
        }
        if !seen.insert(c) {
            return Err(malformed(format!("duplicate castling character {c:?}")));
        }
    }
    if seen.len() > 4 {
        return Err(malformed("more than four castling rights"));
    }
    Ok(text.chars().collect())
}

fn resolve_castling(p: &Position, letters: &[char]) -> Result<BTreeSet<CastlingRight>, FenError> {
    let mut rights = BTreeSet::new();
    for &c in letters {
        let color = if c.is_ascii_uppercase() {
            Color::White
        } else {
            Color::Black
        };
        let back = color.back_rank();
        let king = p.king_square(color);
        if king.rank() != back {
            return Err(FenError::InconsistentCastling(format!(
                "castling right {c:?} but the {color:?} king is not on its back rank"
            )));
        }
        let rook = Piece::new(color, PieceKind::Rook);
        let rook_on = |f: u8| p.piece_at(Square::new(f, back).unwrap()) == Some(rook);
        let file = match c.to_ascii_lowercase() {
            'k' => (king.file() + 1..8).rev().find(|&f| rook_on(f)),
            'q' => (0..king.file()).find(|&f| rook_on(f)),
            l => Some(l as u8 - b'a'),
        }
        .ok_or_else(|| {
            FenError::InconsistentCastling(format!("castling right {c:?} has no matching rook"))
        })?;
        if !rights.insert(CastlingRight { color, rook_file: file }) {
            return Err(FenError::InconsistentCastling(format!(
                "castling right {c:?} repeats another right"
            )));
        }
    }
    Ok(rights)
}
