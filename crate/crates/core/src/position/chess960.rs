//! Chess960 starting positions in Scharnagl numbering.
//!
//! Index decoding, with `n` the index:
//! 1. `n % 4` places the light-squared bishop on b, d, f or h; `n /= 4`.
//! 2. `n % 4` places the dark-squared bishop on a, c, e or g; `n /= 4`.
//! 3. `n % 6` places the queen on that free square (counting from a); `n /= 6`.
//! 4. `n` (0..10) picks the two knight squares among the five free squares.
//! 5. Rook, king, rook fill the last three squares from a to h.
//!
//! Index 518 is the standard starting position.

use std::collections::BTreeSet;

use thiserror::Error;

use super::{CastlingRight, Color, Piece, PieceKind, Position, PositionParts, Square};

pub const CHESS960_COUNT: u32 = 960;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("Chess960 index {0} is out of range 0..=959")]
pub struct IndexOutOfRange(pub u32);

const KNIGHT_TABLE: [(usize, usize); 10] = [
    (0, 1),
    (0, 2),
    (0, 3),
    (0, 4),
    (1, 2),
    (1, 3),
    (1, 4),
    (2, 3),
    (2, 4),
    (3, 4),
];

/// White's back rank (a..h) for a Scharnagl index.
pub fn back_rank(index: u32) -> Result<[PieceKind; 8], IndexOutOfRange> {
    if index >= CHESS960_COUNT {
        return Err(IndexOutOfRange(index));
    }
    let mut rank: [Option<PieceKind>; 8] = [None; 8];
    let mut n = index as usize;

    rank[2 * (n % 4) + 1] = Some(PieceKind::Bishop);
    n /= 4;
    rank[2 * (n % 4)] = Some(PieceKind::Bishop);
    n /= 4;

    let free = |rank: &[Option<PieceKind>; 8]| -> Vec<usize> {
        (0..8).filter(|&f| rank[f].is_none()).collect()
    };
    let q = free(&rank)[n % 6];
    rank[q] = Some(PieceKind::Queen);
    n /= 6;

    let empties = free(&rank);
    let (a, b) = KNIGHT_TABLE[n];
    rank[empties[a]] = Some(PieceKind::Knight);
    rank[empties[b]] = Some(PieceKind::Knight);

    let rest = free(&rank);
    rank[rest[0]] = Some(PieceKind::Rook);
    rank[rest[1]] = Some(PieceKind::King);
    rank[rest[2]] = Some(PieceKind::Rook);

    Ok(rank.map(|k| k.expect("every file filled")))
}

/// Inverse of [`back_rank`]; `None` if the arrangement is not a legal
/// Chess960 back rank.
pub fn scharnagl_index(rank: &[PieceKind; 8]) -> Option<u32> {
    let files_of = |kind: PieceKind| -> Vec<usize> { (0..8).filter(|&f| rank[f] == kind).collect() };
    let bishops = files_of(PieceKind::Bishop);
    let knights = files_of(PieceKind::Knight);
    let queens = files_of(PieceKind::Queen);
    let rooks = files_of(PieceKind::Rook);
    let kings = files_of(PieceKind::King);
    if bishops.len() != 2 || knights.len() != 2 || queens.len() != 1 || rooks.len() != 2 || kings.len() != 1 {
        return None;
    }
    let light = *bishops.iter().find(|&&f| f % 2 == 1)?;
    let dark = *bishops.iter().find(|&&f| f % 2 == 0)?;
    if !(rooks[0] < kings[0] && kings[0] < rooks[1]) {
        return None;
    }
    let no_bishops: Vec<usize> = (0..8).filter(|&f| rank[f] != PieceKind::Bishop).collect();
    let q = no_bishops.iter().position(|&f| f == queens[0])?;
    let remaining: Vec<usize> = no_bishops.into_iter().filter(|&f| f != queens[0]).collect();
    let ka = remaining.iter().position(|&f| f == knights[0])?;
    let kb = remaining.iter().position(|&f| f == knights[1])?;
    let kn = KNIGHT_TABLE.iter().position(|&t| t == (ka, kb))?;
    Some((((kn * 6 + q) * 4 + dark / 2) * 4 + (light - 1) / 2) as u32)
}

/// The Chess960 starting position with Scharnagl number `index`, White to
/// move, all four castling rights.
pub fn chess960_start(index: u32) -> Result<Position, IndexOutOfRange> {
    let rank = back_rank(index)?;
    let mut parts = PositionParts::empty();
    let mut castling = BTreeSet::new();
    for (file, &kind) in rank.iter().enumerate() {
        let file = file as u8;
        for color in Color::ALL {
            let back = color.back_rank();
            let pawn_rank = (back as i8 + color.forward()) as u8;
            parts.board[Square::new(file, back).unwrap().index()] = Some(Piece::new(color, kind));
            parts.board[Square::new(file, pawn_rank).unwrap().index()] =
                Some(Piece::new(color, PieceKind::Pawn));
            if kind == PieceKind::Rook {
                castling.insert(CastlingRight { color, rook_file: file });
            }
        }
    }
    parts.castling = castling;
    Ok(Position::from_parts(parts).expect("Chess960 starts are legal"))
}
