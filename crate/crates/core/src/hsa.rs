//! Header-space algebra over ternary wildcard words.
//!
//! A header is a fixed-width bit vector; a [`WildcardWord`] fixes some
//! positions to 0/1 and leaves the rest free (`*`); a [`HeaderSpace`] is a
//! finite union of words. All protocol state in this crate (violation sets,
//! FIB matches, LEC spaces) is a `HeaderSpace`, so the operations here are the
//! inner loop of everything: intersection, union, subtraction, symmetric
//! difference, emptiness/subset/equality tests, and forward/inverse images
//! under partial rewrites.
//!
//! Widths up to 128 bits are supported; a word stores its fixed positions in a
//! `mask` and their values in `bits`. Position `i` of the textual form (the
//! i-th character of `"10**"`) maps to bit `1 << i` of the machine words.
//! Equality and subset tests are semantic (two decompositions of the same set
//! compare equal) via double subtraction, not representational.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// Maximum supported header width in bits.
pub const MAX_WIDTH: u16 = 128;

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum HsaError {
    #[error("bad wildcard word {text:?}: {reason}")]
    BadWord { text: String, reason: String },
    #[error("width mismatch: expected {expected} bits, got {got}")]
    WidthMismatch { expected: u16, got: u16 },
    #[error("unknown field {0:?}")]
    UnknownField(String),
    #[error("bad value {value:?} for field {field:?}: {reason}")]
    BadFieldValue {
        field: String,
        value: String,
        reason: String,
    },
    #[error("field {field:?} range [{lo},{hi}] is invalid for width {width}")]
    BadFieldRange {
        field: String,
        lo: u16,
        hi: u16,
        width: u16,
    },
    #[error("fields {0:?} and {1:?} overlap")]
    FieldOverlap(String, String),
    #[error("width {0} exceeds the supported maximum of {MAX_WIDTH} bits")]
    WidthTooLarge(u16),
}

fn width_mask(width: u16) -> u128 {
    if width as u32 == 128 {
        u128::MAX
    } else {
        (1u128 << width) - 1
    }
}

/// Named bit ranges within a header, used to expand `field=value/len` sugar.
///
/// Ranges are inclusive, measured in textual positions (0 = leftmost), and may
/// not overlap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldLayout {
    width: u16,
    fields: BTreeMap<String, (u16, u16)>,
}

impl FieldLayout {
    pub fn new(width: u16) -> Result<Self, HsaError> {
        if width == 0 || width > MAX_WIDTH {
            return Err(HsaError::WidthTooLarge(width));
        }
        Ok(FieldLayout {
            width,
            fields: BTreeMap::new(),
        })
    }

    pub fn with_field(mut self, name: &str, lo: u16, hi: u16) -> Result<Self, HsaError> {
        if lo > hi || hi >= self.width {
            return Err(HsaError::BadFieldRange {
                field: name.to_string(),
                lo,
                hi,
                width: self.width,
            });
        }
        for (other, &(olo, ohi)) in &self.fields {
            if lo <= ohi && olo <= hi {
                return Err(HsaError::FieldOverlap(name.to_string(), other.clone()));
            }
        }
        self.fields.insert(name.to_string(), (lo, hi));
        Ok(self)
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn field(&self, name: &str) -> Option<(u16, u16)> {
        self.fields.get(name).copied()
    }

    pub fn fields(&self) -> impl Iterator<Item = (&str, (u16, u16))> {
        self.fields.iter().map(|(n, r)| (n.as_str(), *r))
    }

    /// Expands one `field=value` or `field=value/len` constraint into a word
    /// fixing the field's leading `len` bits; all other positions stay free.
    pub fn field_word(&self, field: &str, value: &str) -> Result<WildcardWord, HsaError> {
        let (lo, hi) = self
            .field(field)
            .ok_or_else(|| HsaError::UnknownField(field.to_string()))?;
        let field_width = hi - lo + 1;
        let (value_text, len) = match value.split_once('/') {
            Some((v, l)) => {
                let len: u16 = l.parse().map_err(|_| HsaError::BadFieldValue {
                    field: field.to_string(),
                    value: value.to_string(),
                    reason: "prefix length is not a number".into(),
                })?;
                (v, len)
            }
            None => (value, field_width),
        };
        if len > field_width {
            return Err(HsaError::BadFieldValue {
                field: field.to_string(),
                value: value.to_string(),
                reason: format!("prefix length {len} exceeds field width {field_width}"),
            });
        }
        let raw = parse_field_value(value_text, field_width).map_err(|reason| {
            HsaError::BadFieldValue {
                field: field.to_string(),
                value: value.to_string(),
                reason,
            }
        })?;
        // Host bits beyond the prefix must be zero; a silently ignored
        // mismatch hides config typos.
        if len < field_width && raw & (width_mask(field_width - len)) != 0 {
            return Err(HsaError::BadFieldValue {
                field: field.to_string(),
                value: value.to_string(),
                reason: format!("value has bits set beyond its /{len} prefix"),
            });
        }
        let mut mask = 0u128;
        let mut bits = 0u128;
        for i in 0..len {
            let pos = lo + i;
            mask |= 1u128 << pos;
            // Bit i of the textual field value counts from the most
            // significant end of the field.
            if raw >> (field_width - 1 - i) & 1 == 1 {
                bits |= 1u128 << pos;
            }
        }
        Ok(WildcardWord {
            width: self.width,
            mask,
            bits,
        })
    }
}

/// Parses a field value: dotted quad (32-bit fields only) or decimal.
fn parse_field_value(text: &str, field_width: u16) -> Result<u128, String> {
    if text.contains('.') {
        if field_width != 32 {
            return Err(format!(
                "dotted-quad values need a 32-bit field, this one is {field_width} bits"
            ));
        }
        let octets: Vec<&str> = text.split('.').collect();
        if octets.len() != 4 {
            return Err("dotted-quad values need exactly four octets".into());
        }
        let mut v: u128 = 0;
        for o in octets {
            let b: u8 = o.parse().map_err(|_| format!("bad octet {o:?}"))?;
            v = (v << 8) | b as u128;
        }
        Ok(v)
    } else {
        let v: u128 = text
            .parse()
            .map_err(|_| format!("value {text:?} is not a number"))?;
        if field_width < 128 && v >= 1u128 << field_width {
            return Err(format!("value {v} does not fit in {field_width} bits"));
        }
        Ok(v)
    }
}

/// One ternary word: `mask` marks the fixed positions, `bits` their values.
/// Invariant: `bits & !mask == 0` and both fit in `width` bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WildcardWord {
    width: u16,
    mask: u128,
    bits: u128,
}

impl WildcardWord {
    /// The all-free word `***…*`.
    pub fn any(width: u16) -> Self {
        debug_assert!(width >= 1 && width <= MAX_WIDTH);
        WildcardWord {
            width,
            mask: 0,
            bits: 0,
        }
    }

    pub fn from_parts(width: u16, mask: u128, bits: u128) -> Self {
        debug_assert!(width >= 1 && width <= MAX_WIDTH);
        let wm = width_mask(width);
        debug_assert_eq!(mask & !wm, 0);
        WildcardWord {
            width,
            mask,
            bits: bits & mask,
        }
    }

    /// Parses a `{0,1,*}` string; the width is the string length.
    pub fn parse_literal(text: &str) -> Result<Self, HsaError> {
        let n = text.chars().count();
        if n == 0 || n > MAX_WIDTH as usize {
            return Err(HsaError::BadWord {
                text: text.to_string(),
                reason: format!("length must be between 1 and {MAX_WIDTH}"),
            });
        }
        let mut mask = 0u128;
        let mut bits = 0u128;
        for (i, c) in text.chars().enumerate() {
            match c {
                '*' => {}
                '0' => mask |= 1u128 << i,
                '1' => {
                    mask |= 1u128 << i;
                    bits |= 1u128 << i;
                }
                other => {
                    return Err(HsaError::BadWord {
                        text: text.to_string(),
                        reason: format!("unexpected character {other:?}"),
                    })
                }
            }
        }
        Ok(WildcardWord {
            width: n as u16,
            mask,
            bits,
        })
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn contains(&self, header: u128) -> bool {
        (header ^ self.bits) & self.mask == 0
    }

    /// Set intersection of two words, `None` when they conflict on a fixed
    /// position.
    pub fn intersect(&self, other: &WildcardWord) -> Option<WildcardWord> {
        debug_assert_eq!(self.width, other.width, "word width mismatch");
        if self.mask & other.mask & (self.bits ^ other.bits) != 0 {
            return None;
        }
        Some(WildcardWord {
            width: self.width,
            mask: self.mask | other.mask,
            bits: self.bits | other.bits,
        })
    }

    /// True when every header in `other` is also in `self`.
    pub fn subsumes(&self, other: &WildcardWord) -> bool {
        debug_assert_eq!(self.width, other.width, "word width mismatch");
        self.mask & other.mask == self.mask && (self.bits ^ other.bits) & self.mask == 0
    }

    /// `self − other` as a disjoint list of words.
    fn subtract(&self, other: &WildcardWord) -> Vec<WildcardWord> {
        if self.intersect(other).is_none() {
            return vec![*self];
        }
        let mut out = Vec::new();
        let mut cur = *self;
        // Peel off, per position fixed by `other` but free in `cur`, the half
        // that disagrees with `other`; what remains at the end lies inside
        // `other` and is dropped.
        let mut todo = other.mask & !self.mask;
        while todo != 0 {
            let pos = todo.trailing_zeros();
            let bit = 1u128 << pos;
            todo &= !bit;
            let mut peeled = cur;
            peeled.mask |= bit;
            peeled.bits = (cur.bits & !bit) | (!other.bits & bit);
            out.push(peeled);
            cur.mask |= bit;
            cur.bits = (cur.bits & !bit) | (other.bits & bit);
        }
        out
    }

    fn rewrite(&self, rw: &HeaderRewrite) -> WildcardWord {
        debug_assert_eq!(self.width, rw.width, "rewrite width mismatch");
        WildcardWord {
            width: self.width,
            mask: self.mask | rw.mask,
            bits: (self.bits & !rw.mask) | rw.values,
        }
    }

    /// Preimage under `rw`: headers the rewrite maps into this word. `None`
    /// when the word's constraints conflict with a forced position.
    fn preimage(&self, rw: &HeaderRewrite) -> Option<WildcardWord> {
        debug_assert_eq!(self.width, rw.width, "rewrite width mismatch");
        let both = self.mask & rw.mask;
        if (self.bits ^ rw.values) & both != 0 {
            return None;
        }
        Some(WildcardWord {
            width: self.width,
            mask: self.mask & !rw.mask,
            bits: self.bits & !rw.mask,
        })
    }
}

impl fmt::Display for WildcardWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.width {
            let bit = 1u128 << i;
            let c = if self.mask & bit == 0 {
                '*'
            } else if self.bits & bit == 0 {
                '0'
            } else {
                '1'
            };
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

/// Partial rewrite: forces `mask` positions to `values`, passes the rest
/// through. `identity` has an empty mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HeaderRewrite {
    width: u16,
    mask: u128,
    values: u128,
}

impl HeaderRewrite {
    pub fn identity(width: u16) -> Self {
        HeaderRewrite {
            width,
            mask: 0,
            values: 0,
        }
    }

    /// Parses a `{0,1,*}` pattern: `*` leaves the position alone, `0`/`1`
    /// force it.
    pub fn parse_pattern(text: &str) -> Result<Self, HsaError> {
        let word = WildcardWord::parse_literal(text)?;
        Ok(HeaderRewrite {
            width: word.width,
            mask: word.mask,
            values: word.bits,
        })
    }

    /// Builds a rewrite forcing whole fields to values, e.g. `{"vlan": "3"}`.
    pub fn from_fields(
        layout: &FieldLayout,
        fields: &BTreeMap<String, String>,
    ) -> Result<Self, HsaError> {
        let mut rw = HeaderRewrite::identity(layout.width());
        for (name, value) in fields {
            let word = layout.field_word(name, value)?;
            rw.mask |= word.mask;
            rw.values |= word.bits;
        }
        Ok(rw)
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn is_identity(&self) -> bool {
        self.mask == 0
    }

    pub fn apply_header(&self, header: u128) -> u128 {
        (header & !self.mask) | self.values
    }
}

impl fmt::Display for HeaderRewrite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        WildcardWord {
            width: self.width,
            mask: self.mask,
            bits: self.values,
        }
        .fmt(f)
    }
}

/// A finite union of wildcard words, all of one width.
///
/// The word list is kept small by dropping words subsumed by another word, but
/// it is not canonical: use [`HeaderSpace::equal`] rather than `==` to compare
/// two spaces.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HeaderSpace {
    width: u16,
    words: Vec<WildcardWord>,
}

impl HeaderSpace {
    pub fn empty(width: u16) -> Self {
        HeaderSpace {
            width,
            words: Vec::new(),
        }
    }

    pub fn full(width: u16) -> Self {
        HeaderSpace {
            width,
            words: vec![WildcardWord::any(width)],
        }
    }

    pub fn from_word(word: WildcardWord) -> Self {
        HeaderSpace {
            width: word.width,
            words: vec![word],
        }
    }

    pub fn from_words(width: u16, words: Vec<WildcardWord>) -> Self {
        let mut s = HeaderSpace { width, words };
        for w in &s.words {
            assert_eq!(w.width, width, "word width mismatch");
        }
        s.prune();
        s
    }

    /// Parses a comma-separated word list; `∅`/`empty` denotes the empty
    /// space. With a layout, `field=value/len` items are expanded; several
    /// constraints joined by `&` fix multiple fields within one word.
    pub fn parse(text: &str, layout: &FieldLayout) -> Result<Self, HsaError> {
        let trimmed = text.trim();
        if trimmed == "∅" || trimmed.eq_ignore_ascii_case("empty") {
            return Ok(HeaderSpace::empty(layout.width()));
        }
        let mut words = Vec::new();
        for item in trimmed.split(',') {
            let item = item.trim();
            if item.is_empty() {
                return Err(HsaError::BadWord {
                    text: text.to_string(),
                    reason: "empty item in word list".into(),
                });
            }
            words.push(parse_word_item(item, layout)?);
        }
        Ok(HeaderSpace::from_words(layout.width(), words))
    }

    /// Parses without field sugar; every item must be a raw `{0,1,*}` word of
    /// exactly `width` characters.
    pub fn parse_literal(text: &str, width: u16) -> Result<Self, HsaError> {
        let layout = FieldLayout::new(width).expect("valid width");
        Self::parse(text, &layout)
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn words(&self) -> &[WildcardWord] {
        &self.words
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.words.iter().any(|w| w.mask == 0)
            || HeaderSpace::full(self.width).is_subset(self)
    }

    pub fn contains(&self, header: u128) -> bool {
        self.words.iter().any(|w| w.contains(header))
    }

    fn check_width(&self, other: &HeaderSpace) {
        assert_eq!(
            self.width, other.width,
            "header-space width mismatch: {} vs {} (scenario inputs must be \
             validated against one layout)",
            self.width, other.width
        );
    }

    /// Drops duplicate words and words subsumed by another word.
    fn prune(&mut self) {
        self.words.sort();
        self.words.dedup();
        let mut keep = vec![true; self.words.len()];
        for i in 0..self.words.len() {
            if !keep[i] {
                continue;
            }
            for j in 0..self.words.len() {
                if i == j || !keep[j] {
                    continue;
                }
                if self.words[i].subsumes(&self.words[j]) {
                    keep[j] = false;
                }
            }
        }
        let mut idx = 0;
        self.words.retain(|_| {
            let k = keep[idx];
            idx += 1;
            k
        });
    }

    pub fn union(&self, other: &HeaderSpace) -> HeaderSpace {
        self.check_width(other);
        let mut words = self.words.clone();
        words.extend_from_slice(&other.words);
        let mut s = HeaderSpace {
            width: self.width,
            words,
        };
        s.prune();
        s
    }

    pub fn intersect(&self, other: &HeaderSpace) -> HeaderSpace {
        self.check_width(other);
        let mut words = Vec::new();
        for a in &self.words {
            for b in &other.words {
                if let Some(w) = a.intersect(b) {
                    words.push(w);
                }
            }
        }
        let mut s = HeaderSpace {
            width: self.width,
            words,
        };
        s.prune();
        s
    }

    pub fn subtract(&self, other: &HeaderSpace) -> HeaderSpace {
        self.check_width(other);
        let mut words = self.words.clone();
        for b in &other.words {
            let mut next = Vec::new();
            for a in &words {
                next.extend(a.subtract(b));
            }
            words = next;
            if words.is_empty() {
                break;
            }
        }
        let mut s = HeaderSpace {
            width: self.width,
            words,
        };
        s.prune();
        s
    }

    pub fn symmetric_difference(&self, other: &HeaderSpace) -> HeaderSpace {
        self.subtract(other).union(&other.subtract(self))
    }

    pub fn is_subset(&self, other: &HeaderSpace) -> bool {
        self.subtract(other).is_empty()
    }

    /// Semantic equality: mutual inclusion, independent of representation.
    pub fn equal(&self, other: &HeaderSpace) -> bool {
        self.is_subset(other) && other.is_subset(self)
    }

    /// Forward image: the set of rewritten headers.
    pub fn apply_rewrite(&self, rw: &HeaderRewrite) -> HeaderSpace {
        let words = self.words.iter().map(|w| w.rewrite(rw)).collect();
        let mut s = HeaderSpace {
            width: self.width,
            words,
        };
        s.prune();
        s
    }

    /// Inverse image: the headers the rewrite maps into this space.
    pub fn inverse_image(&self, rw: &HeaderRewrite) -> HeaderSpace {
        let words = self.words.iter().filter_map(|w| w.preimage(rw)).collect();
        let mut s = HeaderSpace {
            width: self.width,
            words,
        };
        s.prune();
        s
    }

    /// Number of words in the current representation (a size proxy for
    /// message metering, not a semantic measure).
    pub fn word_count(&self) -> usize {
        self.words.len()
    }
}

fn parse_word_item(item: &str, layout: &FieldLayout) -> Result<WildcardWord, HsaError> {
    if item.contains('=') {
        let mut acc = WildcardWord::any(layout.width());
        for part in item.split('&') {
            let part = part.trim();
            let (field, value) = part.split_once('=').ok_or_else(|| HsaError::BadWord {
                text: item.to_string(),
                reason: format!("expected field=value in {part:?}"),
            })?;
            let word = layout.field_word(field.trim(), value.trim())?;
            acc = acc.intersect(&word).ok_or_else(|| HsaError::BadWord {
                text: item.to_string(),
                reason: "field constraints conflict".into(),
            })?;
        }
        Ok(acc)
    } else {
        let word = WildcardWord::parse_literal(item)?;
        if word.width() != layout.width() {
            return Err(HsaError::WidthMismatch {
                expected: layout.width(),
                got: word.width(),
            });
        }
        Ok(word)
    }
}

impl fmt::Display for HeaderSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.words.is_empty() {
            return write!(f, "∅");
        }
        for (i, w) in self.words.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{w}")?;
        }
        Ok(())
    }
}
