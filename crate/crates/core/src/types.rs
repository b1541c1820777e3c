//! Small value types shared across the pipeline stages.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// A point in image pixel space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub x: f64,
    pub y: f64,
}

impl PixelPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Side of the net a singles player occupies in the broadcast view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Player {
    Top,
    Bottom,
}

impl Player {
    pub const ALL: [Player; 2] = [Player::Top, Player::Bottom];

    pub fn opponent(self) -> Player {
        match self {
            Player::Top => Player::Bottom,
            Player::Bottom => Player::Top,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Player::Top => "top",
            Player::Bottom => "bottom",
        }
    }
}

impl fmt::Display for Player {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Player {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "top" => Ok(Player::Top),
            "bottom" => Ok(Player::Bottom),
            other => Err(Error::Spec(format!("unknown player slot `{other}`"))),
        }
    }
}

/// Formats `value` as a plain decimal with `digits` significant digits.
///
/// Used for losses and probabilities so that exported numbers are stable
/// byte-for-byte across runs.
pub fn format_significant(value: f64, digits: usize) -> String {
    if !value.is_finite() {
        return value.to_string();
    }
    if value == 0.0 {
        return format!("{:.*}", digits.saturating_sub(1), 0.0);
    }
    let magnitude = value.abs().log10().floor() as i64;
    let decimals = digits as i64 - 1 - magnitude;
    if decimals >= 0 {
        let s = format!("{:.*}", decimals as usize, value);
        // Rounding may carry into a new leading digit (9.9999 -> 10.000).
        let sig = s.chars().filter(|c| c.is_ascii_digit()).skip_while(|&c| c == '0').count();
        if sig > digits && decimals > 0 {
            format!("{:.*}", decimals as usize - 1, value)
        } else {
            s
        }
    } else {
        let unit = 10f64.powi((-decimals) as i32);
        format!("{:.0}", (value / unit).round() * unit)
    }
}

/// Two-decimal fixed formatting for pixel and court coordinates.
pub fn format_coord(value: f64) -> String {
    format!("{value:.2}")
}

/// Rounds to two decimals, for JSON emission of coordinates.
pub fn round2(value: f64) -> f64 {
    (value * 100.0).round() / 100.0
}
