//! Shared domain types: entity kinds, the five per-token label classes, and
//! the spoken/written pair record that flows through the whole pipeline.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{ItnError, Result};

/// The entity classes the extractor recognizes in written text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Cardinal,
    Ordinal,
    Currency,
    Fraction,
    Measure,
    Abbreviation,
    PhoneNumber,
    Time,
    Decade,
    Percent,
}

impl EntityKind {
    pub const ALL: [EntityKind; 10] = [
        EntityKind::Cardinal,
        EntityKind::Ordinal,
        EntityKind::Currency,
        EntityKind::Fraction,
        EntityKind::Measure,
        EntityKind::Abbreviation,
        EntityKind::PhoneNumber,
        EntityKind::Time,
        EntityKind::Decade,
        EntityKind::Percent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::Cardinal => "cardinal",
            EntityKind::Ordinal => "ordinal",
            EntityKind::Currency => "currency",
            EntityKind::Fraction => "fraction",
            EntityKind::Measure => "measure",
            EntityKind::Abbreviation => "abbreviation",
            EntityKind::PhoneNumber => "phone_number",
            EntityKind::Time => "time",
            EntityKind::Decade => "decade",
            EntityKind::Percent => "percent",
        }
    }

    pub fn parse(s: &str) -> Option<EntityKind> {
        Self::ALL.iter().copied().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A typed span of written text found by the extractor. Offsets are byte
/// offsets into the source sentence; `canonical` is filled by
/// [`crate::extract::canonicalize`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WrittenEntity {
    pub kind: EntityKind,
    pub raw: String,
    pub start: usize,
    pub end: usize,
    pub canonical: String,
}

impl WrittenEntity {
    pub fn new(kind: EntityKind, raw: impl Into<String>, start: usize, end: usize) -> Self {
        WrittenEntity {
            kind,
            raw: raw.into(),
            start,
            end,
            canonical: String::new(),
        }
    }
}

macro_rules! label_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }

            pub fn parse(s: &str) -> Option<$name> {
                match s {
                    $($text => Some($name::$variant),)+
                    _ => None,
                }
            }

            /// Dense index used by the tagger heads.
            pub fn index(self) -> usize {
                Self::ALL.iter().position(|v| *v == self).unwrap()
            }

            pub fn from_index(i: usize) -> Option<$name> {
                Self::ALL.get(i).copied()
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

label_enum! {
    /// Rewrite task labels: how a spoken token maps to written text.
    RewriteClass {
        None => "none",
        Cardinal => "cardinal",
        CardinalDecade => "cardinal-decade",
        CardinalHundred => "cardinal-hundred",
        CardinalThousand => "cardinal-thousand",
        CardinalMillion => "cardinal-million",
        CardinalBillion => "cardinal-billion",
        Ordinal => "ordinal",
        Verbatim => "verbatim",
        Abbreviate => "abbreviate",
        Measure => "measure",
        CurrencySymbol => "currency-symbol",
    }
}

label_enum! {
    /// Prepend task labels: a symbol emitted immediately before the token's
    /// rewritten text.
    PrependClass {
        None => "none",
        Period => "period",
        Colon => "colon",
        Slash => "slash",
        Hyphen => "hyphen",
        Digits => "digits",
    }
}

label_enum! {
    /// Space task labels: whether a white-space precedes the token.
    SpaceClass {
        On => "on",
        Off => "off",
    }
}

label_enum! {
    /// Post-processing region types for the PostStart/PostEnd tasks.
    RegionClass {
        None => "none",
        MajorCurrency => "major-currency",
        MinorCurrency => "minor-currency",
        Measure => "measure",
        Magnitude => "magnitude",
    }
}

impl RewriteClass {
    /// True for classes whose outputs participate in numeric composition.
    pub fn is_cardinal_family(self) -> bool {
        matches!(
            self,
            RewriteClass::Cardinal
                | RewriteClass::CardinalDecade
                | RewriteClass::CardinalHundred
                | RewriteClass::CardinalThousand
                | RewriteClass::CardinalMillion
                | RewriteClass::CardinalBillion
                | RewriteClass::Ordinal
        )
    }
}

impl PrependClass {
    /// The literal symbol this prepend emits, if it is a fixed symbol.
    /// `Digits` is positional (zero padding) and has no fixed rendering.
    pub fn symbol(self) -> Option<&'static str> {
        match self {
            PrependClass::None | PrependClass::Digits => None,
            PrependClass::Period => Some("."),
            PrependClass::Colon => Some(":"),
            PrependClass::Slash => Some("/"),
            PrependClass::Hyphen => Some("-"),
        }
    }
}

/// The five per-token task labels. All fields are always populated; `None`
/// and `On` are ordinary values, never absences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelRow {
    pub rewrite: RewriteClass,
    pub prepend: PrependClass,
    pub space: SpaceClass,
    pub post_start: RegionClass,
    pub post_end: RegionClass,
}

impl LabelRow {
    /// The identity row: pass the token through with a leading space.
    pub fn identity() -> Self {
        LabelRow {
            rewrite: RewriteClass::None,
            prepend: PrependClass::None,
            space: SpaceClass::On,
            post_start: RegionClass::None,
            post_end: RegionClass::None,
        }
    }

    /// Render as the five tab-separated label columns (token column excluded).
    pub fn render(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.rewrite, self.prepend, self.space, self.post_start, self.post_end
        )
    }

    /// Parse the five label columns produced by [`LabelRow::render`].
    pub fn parse(fields: &[&str]) -> Result<LabelRow> {
        if fields.len() != 5 {
            return Err(ItnError::LabelFile {
                line: 0,
                reason: format!("expected 5 label columns, got {}", fields.len()),
            });
        }
        let bad = |what: &str, val: &str| ItnError::LabelFile {
            line: 0,
            reason: format!("unknown {what} label {val:?}"),
        };
        Ok(LabelRow {
            rewrite: RewriteClass::parse(fields[0]).ok_or_else(|| bad("rewrite", fields[0]))?,
            prepend: PrependClass::parse(fields[1]).ok_or_else(|| bad("prepend", fields[1]))?,
            space: SpaceClass::parse(fields[2]).ok_or_else(|| bad("space", fields[2]))?,
            post_start: RegionClass::parse(fields[3]).ok_or_else(|| bad("post-start", fields[3]))?,
            post_end: RegionClass::parse(fields[4]).ok_or_else(|| bad("post-end", fields[4]))?,
        })
    }
}

/// Provenance for one spoken token that came out of an entity expansion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// Index into the pair's spoken token sequence.
    pub tok_idx: usize,
    /// Id of the grammar rule whose alternative emitted the token.
    pub rule: String,
    /// Alternative index within that rule.
    pub alt: usize,
    pub entity_kind: EntityKind,
    /// Byte span of the source entity in the written sentence.
    pub entity_span: (usize, usize),
}

/// An aligned spoken/written sentence pair, optionally with the generation
/// trace that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpokenWrittenPair {
    pub spoken: Vec<String>,
    pub written: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TraceEntry>>,
}

impl SpokenWrittenPair {
    pub fn untraced(spoken: Vec<String>, written: impl Into<String>) -> Self {
        SpokenWrittenPair {
            spoken,
            written: written.into(),
            trace: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_row_render_parse_round_trips_all_values() {
        // 12 * 6 * 2 * 5 * 5 = 3600 combinations; cheap to enumerate them all.
        for &rewrite in RewriteClass::ALL {
            for &prepend in PrependClass::ALL {
                for &space in SpaceClass::ALL {
                    for &post_start in RegionClass::ALL {
                        for &post_end in RegionClass::ALL {
                            let row = LabelRow {
                                rewrite,
                                prepend,
                                space,
                                post_start,
                                post_end,
                            };
                            let rendered = row.render();
                            let fields: Vec<&str> = rendered.split('\t').collect();
                            assert_eq!(LabelRow::parse(&fields).unwrap(), row);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn entity_kind_names_round_trip() {
        for kind in EntityKind::ALL {
            assert_eq!(EntityKind::parse(kind.as_str()), Some(kind));
        }
    }

    #[test]
    fn head_indexes_are_dense() {
        assert_eq!(RewriteClass::ALL.len(), 12);
        assert_eq!(PrependClass::ALL.len(), 6);
        assert_eq!(SpaceClass::ALL.len(), 2);
        assert_eq!(RegionClass::ALL.len(), 5);
        for (i, r) in RewriteClass::ALL.iter().enumerate() {
            assert_eq!(r.index(), i);
            assert_eq!(RewriteClass::from_index(i), Some(*r));
        }
    }
}
