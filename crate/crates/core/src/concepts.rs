//! Rule-based detectors for the six strategic concepts.
//!
//! Every rule is evaluated from the side to move's perspective, so a
//! color-flipped position yields the same detections. Rule set version
//! [`RULE_VERSION`] is written into every file this crate labels.
//!
//! Rule set v1:
//! - **OpenFilesAndDiagonals**: some open file holds, or is reachable in one
//!   move by, a friendly rook or queen; or some diagonal of length >= 5 has no
//!   pawns and holds a friendly bishop or queen.
//! - **KnightOutposts**: a friendly knight on relative ranks 4-6, defended by
//!   a friendly pawn, that no enemy pawn on an adjacent file can ever attack.
//! - **AdvanceKingsidePawns** / **AdvanceQueensidePawns**: at least two
//!   friendly pawns on the f/g/h (a/b/c) files off their starting rank, at
//!   least one of them beyond relative rank 4.
//! - **CenterControl**: the side to move attacks strictly more of d4, e4, d5,
//!   e5 than the opponent.
//! - **CenterPawnPlay**: a friendly pawn on or attacking a center square,
//!   and a pawn lever: a friendly pawn attacking an enemy pawn on a center
//!   square.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::position::{mask_contains, Color, FileState, Piece, PieceKind, Position, Square};

pub const RULE_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConceptId {
    OpenFilesAndDiagonals = 0,
    KnightOutposts = 1,
    AdvanceKingsidePawns = 2,
    AdvanceQueensidePawns = 3,
    CenterControl = 4,
    CenterPawnPlay = 5,
}

impl ConceptId {
    pub const ALL: [ConceptId; 6] = [
        ConceptId::OpenFilesAndDiagonals,
        ConceptId::KnightOutposts,
        ConceptId::AdvanceKingsidePawns,
        ConceptId::AdvanceQueensidePawns,
        ConceptId::CenterControl,
        ConceptId::CenterPawnPlay,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u32) -> Option<ConceptId> {
        ConceptId::ALL.get(code as usize).copied()
    }

    pub fn mask_bit(self) -> u32 {
        1 << self.code()
    }

    /// Identifier used on the command line and in result files.
    pub fn slug(self) -> &'static str {
        match self {
            ConceptId::OpenFilesAndDiagonals => "open_files_and_diagonals",
            ConceptId::KnightOutposts => "knight_outposts",
            ConceptId::AdvanceKingsidePawns => "advance_kingside_pawns",
            ConceptId::AdvanceQueensidePawns => "advance_queenside_pawns",
            ConceptId::CenterControl => "center_control",
            ConceptId::CenterPawnPlay => "center_pawn_play",
        }
    }

    /// Human-readable theme name, matching the STS suite titles.
    pub fn title(self) -> &'static str {
        match self {
            ConceptId::OpenFilesAndDiagonals => "Open Files and Diagonals",
            ConceptId::KnightOutposts => "Knight Outposts",
            ConceptId::AdvanceKingsidePawns => "Advancement of f/g/h Pawns",
            ConceptId::AdvanceQueensidePawns => "Advancement of a/b/c Pawns",
            ConceptId::CenterControl => "Center Control",
            ConceptId::CenterPawnPlay => "Pawn Play in the Center",
        }
    }
}

impl fmt::Display for ConceptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for ConceptId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Ok(code) = s.parse::<u32>() {
            return ConceptId::from_code(code).ok_or_else(|| format!("unknown concept code {code}"));
        }
        ConceptId::ALL
            .into_iter()
            .find(|c| c.slug() == s || c.title().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown concept {s:?}"))
    }
}

pub const CENTER: [&str; 4] = ["d4", "e4", "d5", "e5"];

fn center() -> [Square; 4] {
    CENTER.map(|s| Square::parse(s).unwrap())
}

pub fn detect(p: &Position, concept: ConceptId) -> bool {
    let us = p.side_to_move();
    match concept {
        ConceptId::OpenFilesAndDiagonals => open_lines(p, us),
        ConceptId::KnightOutposts => knight_outpost(p, us),
        ConceptId::AdvanceKingsidePawns => pawn_storm(p, us, &[5, 6, 7]),
        ConceptId::AdvanceQueensidePawns => pawn_storm(p, us, &[0, 1, 2]),
        ConceptId::CenterControl => center_control(p, us),
        ConceptId::CenterPawnPlay => center_pawn_play(p, us),
    }
}

pub fn detect_all(p: &Position) -> Vec<ConceptId> {
    ConceptId::ALL.into_iter().filter(|&c| detect(p, c)).collect()
}

/// Bitmask form of [`detect_all`], bit i for concept code i.
pub fn detect_mask(p: &Position) -> u32 {
    detect_all(p).iter().fold(0, |m, c| m | c.mask_bit())
}

/// All diagonals of the board (both directions), as square lists.
pub fn diagonals() -> Vec<Vec<Square>> {
    let mut out = Vec::new();
    // a1-h8 direction, start squares along the a-file and the first rank
    for start in (0..8).rev().map(|r| (0u8, r)).chain((1..8).map(|f| (f, 0u8))) {
        out.push(ray(start, (1, 1)));
    }
    // h1-a8 direction, start along the h-file and the first rank
    for start in (0..8).rev().map(|r| (7u8, r)).chain((0..7).rev().map(|f| (f, 0u8))) {
        out.push(ray(start, (-1, 1)));
    }
    out
}

fn ray((file, rank): (u8, u8), (df, dr): (i8, i8)) -> Vec<Square> {
    let mut sq = Square::new(file, rank);
    let mut out = Vec::new();
    while let Some(s) = sq {
        out.push(s);
        sq = s.offset(df, dr);
    }
    out
}

fn open_lines(p: &Position, us: Color) -> bool {
    let heavy: Vec<Square> = p
        .pieces()
        .filter(|(_, pc)| pc.color == us && matches!(pc.kind, PieceKind::Rook | PieceKind::Queen))
        .map(|(sq, _)| sq)
        .collect();
    for file in 0..8 {
        if p.file_state(file, us) != FileState::Open {
            continue;
        }
        let on_file = |sq: Square| sq.file() == file;
        let uses = heavy.iter().any(|&sq| {
            on_file(sq) || (0..8).any(|r| mask_contains(p.reachable_mask(sq), Square::new(file, r).unwrap()))
        });
        if uses {
            return true;
        }
    }
    diagonals().iter().filter(|d| d.len() >= 5).any(|d| {
        let pawn_free = d
            .iter()
            .all(|&sq| !matches!(p.piece_at(sq), Some(Piece { kind: PieceKind::Pawn, .. })));
        pawn_free
            && d.iter().any(|&sq| {
                matches!(p.piece_at(sq), Some(pc) if pc.color == us
                    && matches!(pc.kind, PieceKind::Bishop | PieceKind::Queen))
            })
    })
}

fn knight_outpost(p: &Position, us: Color) -> bool {
    let them = us.opposite();
    let enemy_pawns: Vec<Square> = p.squares_of(Piece::new(them, PieceKind::Pawn)).collect();
    p.squares_of(Piece::new(us, PieceKind::Knight)).any(|sq| {
        let rel = us.relative_rank(sq.rank());
        if !(3..=5).contains(&rel) || !p.pawn_attacks(sq, us) {
            return false;
        }
        // an enemy pawn on an adjacent file still ahead of the knight (from
        // its own side) can advance to attack it
        let threat = enemy_pawns.iter().any(|e| {
            e.file().abs_diff(sq.file()) == 1 && us.relative_rank(e.rank()) > rel
        });
        !threat
    })
}

fn pawn_storm(p: &Position, us: Color, files: &[u8]) -> bool {
    let ranks: Vec<u8> = p
        .squares_of(Piece::new(us, PieceKind::Pawn))
        .filter(|sq| files.contains(&sq.file()))
        .map(|sq| us.relative_rank(sq.rank()))
        .filter(|&r| r > 1)
        .collect();
    ranks.len() >= 2 && ranks.iter().any(|&r| r >= 4)
}

fn center_control(p: &Position, us: Color) -> bool {
    let ours = p.attacks_by(us);
    let theirs = p.attacks_by(us.opposite());
    let count = |m: u64| center().iter().filter(|&&sq| mask_contains(m, sq)).count();
    count(ours) > count(theirs)
}

fn center_pawn_play(p: &Position, us: Color) -> bool {
    let pawn = Piece::new(us, PieceKind::Pawn);
    let enemy_pawn = Piece::new(us.opposite(), PieceKind::Pawn);
    let active = center()
        .iter()
        .any(|&sq| p.piece_at(sq) == Some(pawn) || p.pawn_attacks(sq, us));
    let lever = center()
        .iter()
        .any(|&sq| p.piece_at(sq) == Some(enemy_pawn) && p.pawn_attacks(sq, us));
    active && lever
}
