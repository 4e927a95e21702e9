#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use chess_probe::position::{CastlingRight, Color, Piece, PieceKind, Position, PositionParts, Square};

const KINDS: [PieceKind; 5] = [
    PieceKind::Pawn,
    PieceKind::Knight,
    PieceKind::Bishop,
    PieceKind::Rook,
    PieceKind::Queen,
];

/// A random legal-shaped position: one king per color, up to 24 other
/// pieces, no pawns on the back ranks, optional castling and en passant.
pub fn random_position(seed: u64) -> Position {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts = PositionParts::empty();
    let mut free: Vec<u8> = (0..64).collect();
    let take = |rng: &mut ChaCha8Rng, free: &mut Vec<u8>, pawn: bool| loop {
        let i = rng.random_range(0..free.len());
        let sq = Square::from_index(free[i]).unwrap();
        if pawn && (sq.rank() == 0 || sq.rank() == 7) {
            continue;
        }
        free.swap_remove(i);
        return sq;
    };
    for color in Color::ALL {
        // half the time keep the king home so castling rights can appear
        let sq = if rng.random_bool(0.5) {
            let home = Square::new(rng.random_range(1..7), color.back_rank()).unwrap();
            if let Some(i) = free.iter().position(|&s| s as usize == home.index()) {
                free.swap_remove(i);
                home
            } else {
                take(&mut rng, &mut free, false)
            }
        } else {
            take(&mut rng, &mut free, false)
        };
        parts.board[sq.index()] = Some(Piece::new(color, PieceKind::King));
    }
    let n = rng.random_range(0..=24);
    for _ in 0..n {
        let color = Color::ALL[rng.random_range(0..2)];
        let kind = KINDS[rng.random_range(0..KINDS.len())];
        let sq = take(&mut rng, &mut free, kind == PieceKind::Pawn);
        parts.board[sq.index()] = Some(Piece::new(color, kind));
    }
    parts.side_to_move = Color::ALL[rng.random_range(0..2)];
    parts.castling = castling_rights(&parts, &mut rng);
    if rng.random_bool(0.2) {
        let rank = match parts.side_to_move {
            Color::White => 5,
            Color::Black => 2,
        };
        parts.en_passant = Square::new(rng.random_range(0..8), rank);
    }
    parts.halfmove_clock = rng.random_range(0..100);
    parts.fullmove_number = rng.random_range(1..300);
    Position::from_parts(parts).expect("generator builds valid positions")
}

/// Randomly grants rights for the outermost rook on each side of a king
/// that stands on its back rank.
fn castling_rights(parts: &PositionParts, rng: &mut ChaCha8Rng) -> BTreeSet<CastlingRight> {
    let mut rights = BTreeSet::new();
    for color in Color::ALL {
        let back = color.back_rank();
        let at = |f: u8| parts.board[Square::new(f, back).unwrap().index()];
        let Some(king_file) = (0..8).find(|&f| at(f) == Some(Piece::new(color, PieceKind::King))) else {
            continue;
        };
        let rook = Some(Piece::new(color, PieceKind::Rook));
        let outer_q = (0..king_file).find(|&f| at(f) == rook);
        let outer_k = (king_file + 1..8).rev().find(|&f| at(f) == rook);
        for file in [outer_q, outer_k].into_iter().flatten() {
            if rng.random_bool(0.7) {
                rights.insert(CastlingRight { color, rook_file: file });
            }
        }
    }
    rights
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    (-2.0 * (1.0 - u1).ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn gaussian_rows(rng: &mut ChaCha8Rng, n: usize, d: usize, sigma: f64) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| sigma * normal(rng)).collect()).collect()
}

/// Rows of `noise + y·u` for a unit direction `u`, split by label.
pub fn planted(rng: &mut ChaCha8Rng, n: usize, u: &[f64], sigma: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let shift = |y: f64, rows: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        rows.into_iter()
            .map(|r| r.iter().zip(u).map(|(x, ui)| x + y * ui).collect())
            .collect()
    };
    let pos = shift(1.0, gaussian_rows(rng, n, u.len(), sigma));
    let neg = shift(-1.0, gaussian_rows(rng, n, u.len(), sigma));
    (pos, neg)
}

pub fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

pub fn refs(rows: &[Vec<f64>]) -> Vec<&[f64]> {
    rows.iter().map(Vec::as_slice).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
