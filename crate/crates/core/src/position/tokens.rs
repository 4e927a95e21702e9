//! Fixed-width character tokenization of a position.
//!
//! Layout of the 78 position tokens (a move token is appended downstream):
//!
//! | slots | content                                                     |
//! |-------|-------------------------------------------------------------|
//! | 1     | BOS                                                         |
//! | 64    | squares a8..h8, a7..h7, ..., a1..h1; `.` for empty          |
//! | 1     | side to move, `w` or `b`                                    |
//! | 4     | canonical castling field, PAD-filled (`-` when none)        |
//! | 2     | en-passant square, or `-` + PAD                             |
//! | 3     | halfmove clock, zero-padded decimal, saturating at 999      |
//! | 3     | fullmove number, zero-padded decimal, saturating at 999     |

use super::{Color, Position, Square};

pub const POSITION_TOKENS: usize = 78;
pub const PAD_TOKEN: u8 = 0;
pub const BOS_TOKEN: u8 = 1;

const CHARSET: &[u8] = b".-0123456789ABCDEFGHKNPQRabcdefghknpqrw";
pub const VOCAB_SIZE: usize = 2 + CHARSET.len();

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSeq([u8; POSITION_TOKENS]);

impl TokenSeq {
    pub fn tokens(&self) -> &[u8; POSITION_TOKENS] {
        &self.0
    }
}

fn char_token(c: u8) -> u8 {
    let i = CHARSET
        .iter()
        .position(|&x| x == c)
        .unwrap_or_else(|| panic!("character {:?} outside the token vocabulary", c as char));
    (i + 2) as u8
}

fn push_counter(out: &mut Vec<u8>, value: u32) {
    let v = value.min(999);
    for digit in format!("{v:03}").bytes() {
        out.push(char_token(digit));
    }
}

impl Position {
    pub fn tokenize(&self) -> TokenSeq {
        let mut out = Vec::with_capacity(POSITION_TOKENS);
        out.push(BOS_TOKEN);
        for rank in (0..8).rev() {
            for file in 0..8 {
                let c = match self.piece_at(Square::new(file, rank).unwrap()) {
                    Some(p) => p.to_char() as u8,
                    None => b'.',
                };
                out.push(char_token(c));
            }
        }
        out.push(char_token(match self.side_to_move() {
            Color::White => b'w',
            Color::Black => b'b',
        }));
        let castling = self.castling_string();
        for i in 0..4 {
            out.push(castling.as_bytes().get(i).map_or(PAD_TOKEN, |&c| char_token(c)));
        }
        match self.en_passant() {
            Some(sq) => out.extend(sq.to_string().bytes().map(char_token)),
            None => out.extend([char_token(b'-'), PAD_TOKEN]),
        }
        push_counter(&mut out, self.halfmove_clock());
        push_counter(&mut out, self.fullmove_number());
        TokenSeq(out.try_into().expect("layout has exactly 78 slots"))
    }
}
