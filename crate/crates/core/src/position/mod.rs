//! Chess and Chess960 positions.
//!
//! A [`Position`] is the full FEN state of a board: placement, side to move,
//! castling rights (stored as rook files so Chess960 is first-class), the
//! en-passant target and both move counters. Positions are immutable once
//! built and every constructor validates the board invariants.
//!
//! Equality and hashing ignore the halfmove clock and fullmove number. The
//! counters still round-trip through [`Position::to_fen`].

mod chess960;
mod fen;
mod tokens;
mod uci;

use std::collections::BTreeSet;
use std::fmt;
use std::hash::{Hash, Hasher};

use thiserror::Error;

pub use chess960::{back_rank, chess960_start, scharnagl_index, IndexOutOfRange, CHESS960_COUNT};
pub use fen::START_FEN;
pub use tokens::{TokenSeq, BOS_TOKEN, PAD_TOKEN, POSITION_TOKENS, VOCAB_SIZE};
pub use uci::{UciError, UciMove};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FenError {
    #[error("malformed FEN: {0}")]
    MalformedFen(String),
    #[error("illegal position: {0}")]
    IllegalPosition(String),
    #[error("inconsistent castling rights: {0}")]
    InconsistentCastling(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Color {
    White,
    Black,
}

impl Color {
    pub const ALL: [Color; 2] = [Color::White, Color::Black];

    pub fn opposite(self) -> Color {
        match self {
            Color::White => Color::Black,
            Color::Black => Color::White,
        }
    }

    /// Rank index (0-based) of this color's back rank.
    pub fn back_rank(self) -> u8 {
        match self {
            Color::White => 0,
            Color::Black => 7,
        }
    }

    /// Rank offset of a single pawn push.
    pub fn forward(self) -> i8 {
        match self {
            Color::White => 1,
            Color::Black => -1,
        }
    }

    /// Rank index as seen from this color (0 = own back rank).
    pub fn relative_rank(self, rank: u8) -> u8 {
        match self {
            Color::White => rank,
            Color::Black => 7 - rank,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PieceKind {
    Pawn,
    Knight,
    Bishop,
    Rook,
    Queen,
    King,
}

impl PieceKind {
    pub const ALL: [PieceKind; 6] = [
        PieceKind::Pawn,
        PieceKind::Knight,
        PieceKind::Bishop,
        PieceKind::Rook,
        PieceKind::Queen,
        PieceKind::King,
    ];

    /// Lowercase FEN letter.
    pub fn letter(self) -> char {
        match self {
            PieceKind::Pawn => 'p',
            PieceKind::Knight => 'n',
            PieceKind::Bishop => 'b',
            PieceKind::Rook => 'r',
            PieceKind::Queen => 'q',
            PieceKind::King => 'k',
        }
    }

    pub fn from_letter(c: char) -> Option<PieceKind> {
        Some(match c.to_ascii_lowercase() {
            'p' => PieceKind::Pawn,
            'n' => PieceKind::Knight,
            'b' => PieceKind::Bishop,
            'r' => PieceKind::Rook,
            'q' => PieceKind::Queen,
            'k' => PieceKind::King,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Piece {
    pub color: Color,
    pub kind: PieceKind,
}

impl Piece {
    pub const fn new(color: Color, kind: PieceKind) -> Piece {
        Piece { color, kind }
    }

    pub fn to_char(self) -> char {
        let c = self.kind.letter();
        match self.color {
            Color::White => c.to_ascii_uppercase(),
            Color::Black => c,
        }
    }

    pub fn from_char(c: char) -> Option<Piece> {
        let kind = PieceKind::from_letter(c)?;
        let color = if c.is_ascii_uppercase() {
            Color::White
        } else {
            Color::Black
        };
        Some(Piece { color, kind })
    }
}

/// A board square. Ordered rank-major, then by file (a1 < b1 < ... < h8).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Square(u8);

impl Square {
    pub fn new(file: u8, rank: u8) -> Option<Square> {
        (file < 8 && rank < 8).then_some(Square(rank * 8 + file))
    }

    pub fn from_index(index: u8) -> Option<Square> {
        (index < 64).then_some(Square(index))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn file(self) -> u8 {
        self.0 % 8
    }

    pub fn rank(self) -> u8 {
        self.0 / 8
    }

    pub fn offset(self, df: i8, dr: i8) -> Option<Square> {
        let f = self.file() as i8 + df;
        let r = self.rank() as i8 + dr;
        if (0..8).contains(&f) && (0..8).contains(&r) {
            Some(Square((r * 8 + f) as u8))
        } else {
            None
        }
    }

    /// Same file, rank mirrored (a1 <-> a8).
    pub fn flip_rank(self) -> Square {
        Square((7 - self.rank()) * 8 + self.file())
    }

    pub fn is_light(self) -> bool {
        (self.file() + self.rank()) % 2 == 1
    }

    pub fn parse(s: &str) -> Option<Square> {
        let b = s.as_bytes();
        if b.len() != 2 {
            return None;
        }
        let file = b[0].checked_sub(b'a')?;
        let rank = b[1].checked_sub(b'1')?;
        Square::new(file, rank)
    }

    pub fn all() -> impl Iterator<Item = Square> {
        (0..64).map(Square)
    }

    fn bit(self) -> u64 {
        1u64 << self.0
    }
}

impl fmt::Display for Square {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", (b'a' + self.file()) as char, self.rank() + 1)
    }
}

pub fn file_char(file: u8) -> char {
    (b'a' + file) as char
}

/// One castling right: `color` may castle with the rook on `rook_file` of
/// its back rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CastlingRight {
    pub color: Color,
    pub rook_file: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileState {
    Open,
    SemiOpen,
    Closed,
}

/// Unvalidated position fields; turn into a [`Position`] with
/// [`Position::from_parts`].
#[derive(Debug, Clone)]
pub struct PositionParts {
    pub board: [Option<Piece>; 64],
    pub side_to_move: Color,
    pub castling: BTreeSet<CastlingRight>,
    pub en_passant: Option<Square>,
    pub halfmove_clock: u32,
    pub fullmove_number: u32,
}

impl PositionParts {
    pub fn empty() -> PositionParts {
        PositionParts {
            board: [None; 64],
            side_to_move: Color::White,
            castling: BTreeSet::new(),
            en_passant: None,
            halfmove_clock: 0,
            fullmove_number: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Position {
    board: [Option<Piece>; 64],
    side_to_move: Color,
    castling: BTreeSet<CastlingRight>,
    en_passant: Option<Square>,
    halfmove_clock: u32,
    fullmove_number: u32,
}

impl PartialEq for Position {
    fn eq(&self, other: &Self) -> bool {
        self.board == other.board
            && self.side_to_move == other.side_to_move
            && self.castling == other.castling
            && self.en_passant == other.en_passant
    }
}

impl Eq for Position {}

impl Hash for Position {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.board.hash(state);
        self.side_to_move.hash(state);
        self.castling.hash(state);
        self.en_passant.hash(state);
    }
}

const KNIGHT_STEPS: [(i8, i8); 8] = [
    (1, 2),
    (2, 1),
    (2, -1),
    (1, -2),
    (-1, -2),
    (-2, -1),
    (-2, 1),
    (-1, 2),
];
const KING_STEPS: [(i8, i8); 8] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];
const ROOK_DIRS: [(i8, i8); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
const BISHOP_DIRS: [(i8, i8); 4] = [(1, 1), (1, -1), (-1, 1), (-1, -1)];

impl Position {
    /// Validates `parts` against the board invariants.
    pub fn from_parts(parts: PositionParts) -> Result<Position, FenError> {
        let PositionParts {
            board,
            side_to_move,
            castling,
            en_passant,
            halfmove_clock,
            fullmove_number,
        } = parts;

        for color in Color::ALL {
            let kings = board
                .iter()
                .filter(|p| **p == Some(Piece::new(color, PieceKind::King)))
                .count();
            if kings != 1 {
                return Err(FenError::IllegalPosition(format!(
                    "{color:?} has {kings} kings, expected exactly one"
                )));
            }
        }
        for sq in Square::all() {
            if let Some(p) = board[sq.index()] {
                if p.kind == PieceKind::Pawn && (sq.rank() == 0 || sq.rank() == 7) {
                    return Err(FenError::IllegalPosition(format!("pawn on {sq}")));
                }
            }
        }
        if fullmove_number == 0 {
            return Err(FenError::IllegalPosition(
                "fullmove number must be at least 1".into(),
            ));
        }
        if let Some(ep) = en_passant {
            let expected = match side_to_move {
                Color::White => 5,
                Color::Black => 2,
            };
            if ep.rank() != expected {
                return Err(FenError::IllegalPosition(format!(
                    "en passant square {ep} does not match side to move"
                )));
            }
        }

        for color in Color::ALL {
            let rights: Vec<u8> = castling
                .iter()
                .filter(|r| r.color == color)
                .map(|r| r.rook_file)
                .collect();
            if rights.is_empty() {
                continue;
            }
            let back = color.back_rank();
            let king_file = (0..8u8)
                .find(|&f| {
                    board[Square::new(f, back).unwrap().index()]
                        == Some(Piece::new(color, PieceKind::King))
                })
                .ok_or_else(|| {
                    FenError::InconsistentCastling(format!("{color:?} king is not on its back rank"))
                })?;
            for &file in &rights {
                if file > 7 {
                    return Err(FenError::InconsistentCastling(format!(
                        "rook file {file} out of range"
                    )));
                }
                let sq = Square::new(file, back).unwrap();
                if board[sq.index()] != Some(Piece::new(color, PieceKind::Rook)) {
                    return Err(FenError::InconsistentCastling(format!(
                        "{color:?} castling right names {sq} but no rook stands there"
                    )));
                }
            }
            let kingside = rights.iter().filter(|&&f| f > king_file).count();
            let queenside = rights.iter().filter(|&&f| f < king_file).count();
            if kingside > 1 || queenside > 1 {
                return Err(FenError::InconsistentCastling(format!(
                    "{color:?} has more than one castling right on one side of the king"
                )));
            }
        }

        Ok(Position {
            board,
            side_to_move,
            castling,
            en_passant,
            halfmove_clock,
            fullmove_number,
        })
    }

    pub fn into_parts(self) -> PositionParts {
        PositionParts {
            board: self.board,
            side_to_move: self.side_to_move,
            castling: self.castling,
            en_passant: self.en_passant,
            halfmove_clock: self.halfmove_clock,
            fullmove_number: self.fullmove_number,
        }
    }

    pub fn start() -> Position {
        Position::parse_fen(START_FEN).expect("start FEN is valid")
    }

    pub fn piece_at(&self, sq: Square) -> Option<Piece> {
        self.board[sq.index()]
    }

    pub fn side_to_move(&self) -> Color {
        self.side_to_move
    }

    pub fn castling(&self) -> &BTreeSet<CastlingRight> {
        &self.castling
    }

    pub fn en_passant(&self) -> Option<Square> {
        self.en_passant
    }

    pub fn halfmove_clock(&self) -> u32 {
        self.halfmove_clock
    }

    pub fn fullmove_number(&self) -> u32 {
        self.fullmove_number
    }

    /// Same position with different move counters.
    pub fn with_counters(&self, halfmove_clock: u32, fullmove_number: u32) -> Result<Position, FenError> {
        let mut parts = self.clone().into_parts();
        parts.halfmove_clock = halfmove_clock;
        parts.fullmove_number = fullmove_number;
        Position::from_parts(parts)
    }

    pub fn pieces(&self) -> impl Iterator<Item = (Square, Piece)> + '_ {
        Square::all().filter_map(move |sq| self.board[sq.index()].map(|p| (sq, p)))
    }

    pub fn squares_of(&self, piece: Piece) -> impl Iterator<Item = Square> + '_ {
        self.pieces()
            .filter(move |(_, p)| *p == piece)
            .map(|(sq, _)| sq)
    }

    pub fn king_square(&self, color: Color) -> Square {
        self.squares_of(Piece::new(color, PieceKind::King))
            .next()
            .expect("validated position has a king per color")
    }

    /// True iff a pawn of color `by` attacks `sq`.
    pub fn pawn_attacks(&self, sq: Square, by: Color) -> bool {
        let pawn = Some(Piece::new(by, PieceKind::Pawn));
        // an attacking pawn sits one rank behind sq from its own perspective
        [-1, 1].iter().any(|&df| {
            sq.offset(df, -by.forward())
                .is_some_and(|from| self.board[from.index()] == pawn)
        })
    }

    pub fn file_state(&self, file: u8, for_color: Color) -> FileState {
        let mut own = false;
        let mut theirs = false;
        for rank in 0..8 {
            if let Some(p) = self.board[Square::new(file, rank).unwrap().index()] {
                if p.kind == PieceKind::Pawn {
                    if p.color == for_color {
                        own = true;
                    } else {
                        theirs = true;
                    }
                }
            }
        }
        match (own, theirs) {
            (false, false) => FileState::Open,
            (false, true) => FileState::SemiOpen,
            _ => FileState::Closed,
        }
    }

    /// Squares attacked by the piece on `sq` as a bitmask (bit i = square
    /// index i). Sliding attacks stop at the first occupied square, which is
    /// included. Empty squares attack nothing.
    pub fn attack_mask(&self, sq: Square) -> u64 {
        let Some(piece) = self.board[sq.index()] else {
            return 0;
        };
        let mut mask = 0u64;
        let mut steps = |deltas: &[(i8, i8)]| {
            for &(df, dr) in deltas {
                if let Some(t) = sq.offset(df, dr) {
                    mask |= t.bit();
                }
            }
        };
        match piece.kind {
            PieceKind::Pawn => {
                let dr = piece.color.forward();
                steps(&[(-1, dr), (1, dr)]);
            }
            PieceKind::Knight => steps(&KNIGHT_STEPS),
            PieceKind::King => steps(&KING_STEPS),
            PieceKind::Bishop => mask = self.slide(sq, &BISHOP_DIRS),
            PieceKind::Rook => mask = self.slide(sq, &ROOK_DIRS),
            PieceKind::Queen => mask = self.slide(sq, &BISHOP_DIRS) | self.slide(sq, &ROOK_DIRS),
        }
        mask
    }

    fn slide(&self, from: Square, dirs: &[(i8, i8)]) -> u64 {
        let mut mask = 0;
        for &(df, dr) in dirs {
            let mut cur = from;
            while let Some(next) = cur.offset(df, dr) {
                mask |= next.bit();
                if self.board[next.index()].is_some() {
                    break;
                }
                cur = next;
            }
        }
        mask
    }

    /// Union of all squares attacked by `by`.
    pub fn attacks_by(&self, by: Color) -> u64 {
        self.pieces()
            .filter(|(_, p)| p.color == by)
            .fold(0, |m, (sq, _)| m | self.attack_mask(sq))
    }

    pub fn is_attacked(&self, sq: Square, by: Color) -> bool {
        self.attacks_by(by) & sq.bit() != 0
    }

    /// Squares the piece on `sq` could move to ignoring checks: its attack
    /// set minus squares held by its own side. Pawn pushes are excluded.
    pub fn reachable_mask(&self, sq: Square) -> u64 {
        let Some(piece) = self.board[sq.index()] else {
            return 0;
        };
        let own = self
            .pieces()
            .filter(|(_, p)| p.color == piece.color)
            .fold(0u64, |m, (s, _)| m | s.bit());
        self.attack_mask(sq) & !own
    }

    /// Colors swapped, ranks mirrored, side to move toggled.
    pub fn mirrored(&self) -> Position {
        let mut board = [None; 64];
        for (sq, p) in self.pieces() {
            board[sq.flip_rank().index()] = Some(Piece::new(p.color.opposite(), p.kind));
        }
        let castling = self
            .castling
            .iter()
            .map(|r| CastlingRight {
                color: r.color.opposite(),
                rook_file: r.rook_file,
            })
            .collect();
        Position {
            board,
            side_to_move: self.side_to_move.opposite(),
            castling,
            en_passant: self.en_passant.map(Square::flip_rank),
            halfmove_clock: self.halfmove_clock,
            fullmove_number: self.fullmove_number,
        }
    }
}

pub fn mask_contains(mask: u64, sq: Square) -> bool {
    mask & sq.bit() != 0
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_fen())
    }
}
