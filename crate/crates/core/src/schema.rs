//! Object schemas and the packed fixed-size record layout.
//!
//! A schema lists fields in declaration order; each field carries an ordered
//! list of tier tags expressing placement preference. The textual form is
//!
//! ```text
//! # comment
//! object person {
//!     age: i32 @pmem
//!     image: bytes @pmem @disk
//! }
//! ```
//!
//! Fields may optionally be separated by `,` or `;`.
//!
//! Layouts are packed (no alignment padding): every field occupies its fixed
//! width inline, and variable-size kinds occupy an 8-byte handle that points
//! at a length-prefixed buffer on the field's tier.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::tiers::TierId;

/// Width in bytes of the inline handle stored for variable-size fields.
pub const HANDLE_WIDTH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FieldKind {
    I16,
    I32,
    I64,
    F32,
    F64,
    Bytes,
    String,
}

impl FieldKind {
    pub fn parse(s: &str) -> Option<FieldKind> {
        Some(match s {
            "i16" => FieldKind::I16,
            "i32" => FieldKind::I32,
            "i64" => FieldKind::I64,
            "f32" => FieldKind::F32,
            "f64" => FieldKind::F64,
            "bytes" => FieldKind::Bytes,
            "string" => FieldKind::String,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FieldKind::I16 => "i16",
            FieldKind::I32 => "i32",
            FieldKind::I64 => "i64",
            FieldKind::F32 => "f32",
            FieldKind::F64 => "f64",
            FieldKind::Bytes => "bytes",
            FieldKind::String => "string",
        }
    }

    /// Width of a fixed kind, `None` for variable kinds.
    pub fn fixed_width(self) -> Option<usize> {
        match self {
            FieldKind::I16 => Some(2),
            FieldKind::I32 | FieldKind::F32 => Some(4),
            FieldKind::I64 | FieldKind::F64 => Some(8),
            FieldKind::Bytes | FieldKind::String => None,
        }
    }

    pub fn is_variable(self) -> bool {
        self.fixed_width().is_none()
    }

    /// Bytes the field occupies inside its parent record.
    pub fn stored_width(self) -> usize {
        self.fixed_width().unwrap_or(HANDLE_WIDTH)
    }
}

impl fmt::Display for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
    /// Tier preference, most preferred first. Never empty, no duplicates.
    pub tags: Vec<TierId>,
}

impl FieldSpec {
    pub fn new(name: impl Into<String>, kind: FieldKind, tags: &[TierId]) -> FieldSpec {
        FieldSpec {
            name: name.into(),
            kind,
            tags: tags.to_vec(),
        }
    }

    pub fn is_multi_tag(&self) -> bool {
        self.tags.len() > 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectSchema {
    pub name: String,
    pub fields: Vec<FieldSpec>,
}

/// Field name to tier.
pub type Assignment = BTreeMap<String, TierId>;

impl ObjectSchema {
    /// Builds a schema, checking the same invariants the parser enforces.
    pub fn new(name: impl Into<String>, fields: Vec<FieldSpec>) -> Result<ObjectSchema, SchemaError> {
        let schema = ObjectSchema {
            name: name.into(),
            fields,
        };
        schema.validate()?;
        Ok(schema)
    }

    fn validate(&self) -> Result<(), SchemaError> {
        let mut seen = HashSet::new();
        for field in &self.fields {
            if !seen.insert(field.name.as_str()) {
                return Err(SchemaError::DuplicateField(field.name.clone()));
            }
            if field.tags.is_empty() {
                return Err(SchemaError::EmptyTags(field.name.clone()));
            }
            let mut tags = HashSet::new();
            for tag in &field.tags {
                if !tags.insert(*tag) {
                    return Err(SchemaError::DuplicateTag {
                        field: field.name.clone(),
                        tag: tag.to_string(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn field_index(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }

    pub fn field(&self, name: &str) -> Option<&FieldSpec> {
        self.fields.iter().find(|f| f.name == name)
    }

    /// Every field on its most preferred tier.
    pub fn preferred_assignment(&self) -> Assignment {
        self.fields
            .iter()
            .map(|f| (f.name.clone(), f.tags[0]))
            .collect()
    }

    /// Copy of this schema where every field carries the single tag given by
    /// `assignment`.
    pub fn retagged(&self, assignment: &Assignment) -> Result<ObjectSchema, SchemaError> {
        let mut out = self.clone();
        for field in &mut out.fields {
            let tier = assignment
                .get(&field.name)
                .ok_or_else(|| SchemaError::UnassignedField(field.name.clone()))?;
            field.tags = vec![*tier];
        }
        for name in assignment.keys() {
            if self.field(name).is_none() {
                return Err(SchemaError::UnknownField(name.clone()));
            }
        }
        Ok(out)
    }
}

impl fmt::Display for ObjectSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "object {} {{", self.name)?;
        for field in &self.fields {
            write!(f, "    {}: {}", field.name, field.kind)?;
            for tag in &field.tags {
                write!(f, " @{tag}")?;
            }
            writeln!(f)?;
        }
        writeln!(f, "}}")
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum SchemaError {
    #[error("syntax error at {line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown tier tag @{tag} at {line}:{column}")]
    UnknownTier {
        tag: String,
        line: usize,
        column: usize,
    },
    #[error("duplicate field `{0}`")]
    DuplicateField(String),
    #[error("field `{0}` has no tier tags")]
    EmptyTags(String),
    #[error("field `{field}` lists tag @{tag} twice")]
    DuplicateTag { field: String, tag: String },
    #[error("no tier assigned to field `{0}`")]
    UnassignedField(String),
    #[error("assignment names unknown field `{0}`")]
    UnknownField(String),
    #[error("field `{field}` assigned to {tier}, which is not among its tags")]
    TierNotTagged { field: String, tier: TierId },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Tag(String),
    Colon,
    Open,
    Close,
    Sep,
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    column: usize,
}

impl<'a> Lexer<'a> {
    fn new(text: &'a str) -> Self {
        Lexer {
            chars: text.chars().peekable(),
            line: 1,
            column: 1,
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn ident(&mut self) -> String {
        let mut s = String::new();
        while let Some(&c) = self.chars.peek() {
            if c.is_alphanumeric() || c == '_' {
                s.push(c);
                self.bump();
            } else {
                break;
            }
        }
        s
    }

    /// Next token with its starting position.
    fn next(&mut self) -> Result<Option<(Tok, usize, usize)>, SchemaError> {
        loop {
            match self.chars.peek() {
                None => return Ok(None),
                Some('#') => {
                    while let Some(c) = self.bump() {
                        if c == '\n' {
                            break;
                        }
                    }
                }
                Some(c) if c.is_whitespace() => {
                    self.bump();
                }
                Some(_) => break,
            }
        }
        let (line, column) = (self.line, self.column);
        let c = *self.chars.peek().unwrap();
        let tok = match c {
            ':' => {
                self.bump();
                Tok::Colon
            }
            '{' => {
                self.bump();
                Tok::Open
            }
            '}' => {
                self.bump();
                Tok::Close
            }
            ',' | ';' => {
                self.bump();
                Tok::Sep
            }
            '@' => {
                self.bump();
                let name = self.ident();
                if name.is_empty() {
                    return Err(syntax(line, column, "expected tier name after `@`"));
                }
                Tok::Tag(name)
            }
            c if c.is_alphabetic() || c == '_' => Tok::Ident(self.ident()),
            other => return Err(syntax(line, column, format!("unexpected character `{other}`"))),
        };
        Ok(Some((tok, line, column)))
    }
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> SchemaError {
    SchemaError::Syntax {
        line,
        column,
        message: message.into(),
    }
}

/// Parses schema text into an [`ObjectSchema`].
pub fn parse_schema(text: &str) -> Result<ObjectSchema, SchemaError> {
    let mut lexer = Lexer::new(text);
    let mut toks = Vec::new();
    while let Some(t) = lexer.next()? {
        toks.push(t);
    }
    let end = (lexer.line, lexer.column);
    let mut pos = 0;

    let at = |pos: usize| toks.get(pos).map(|t| (t.1, t.2)).unwrap_or(end);
    let expect_ident = |pos: usize, what: &str| -> Result<String, SchemaError> {
        match toks.get(pos) {
            Some((Tok::Ident(s), _, _)) => Ok(s.clone()),
            _ => {
                let (l, c) = at(pos);
                Err(syntax(l, c, format!("expected {what}")))
            }
        }
    };

    match toks.first() {
        Some((Tok::Ident(kw), _, _)) if kw == "object" => pos += 1,
        _ => {
            let (l, c) = at(0);
            return Err(syntax(l, c, "expected `object`"));
        }
    }
    let name = expect_ident(pos, "object name")?;
    pos += 1;
    if !matches!(toks.get(pos), Some((Tok::Open, _, _))) {
        let (l, c) = at(pos);
        return Err(syntax(l, c, "expected `{`"));
    }
    pos += 1;

    let mut fields = Vec::new();
    loop {
        match toks.get(pos) {
            Some((Tok::Close, _, _)) => {
                pos += 1;
                break;
            }
            Some((Tok::Sep, _, _)) => {
                pos += 1;
                continue;
            }
            None => {
                let (l, c) = end;
                return Err(syntax(l, c, "unterminated object, expected `}`"));
            }
            _ => {}
        }
        let field_name = expect_ident(pos, "field name")?;
        pos += 1;
        if !matches!(toks.get(pos), Some((Tok::Colon, _, _))) {
            let (l, c) = at(pos);
            return Err(syntax(l, c, "expected `:` after field name"));
        }
        pos += 1;
        let kind_pos = at(pos);
        let kind_name = expect_ident(pos, "field kind")?;
        let kind = FieldKind::parse(&kind_name)
            .ok_or_else(|| syntax(kind_pos.0, kind_pos.1, format!("unknown kind `{kind_name}`")))?;
        pos += 1;
        let mut tags = Vec::new();
        while let Some((Tok::Tag(tag), l, c)) = toks.get(pos) {
            let tier = TierId::from_name(tag).ok_or_else(|| SchemaError::UnknownTier {
                tag: tag.clone(),
                line: *l,
                column: *c,
            })?;
            tags.push(tier);
            pos += 1;
        }
        if tags.is_empty() {
            return Err(SchemaError::EmptyTags(field_name));
        }
        fields.push(FieldSpec {
            name: field_name,
            kind,
            tags,
        });
    }
    if pos < toks.len() {
        let (l, c) = at(pos);
        return Err(syntax(l, c, "trailing input after object"));
    }
    ObjectSchema::new(name, fields)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutEntry {
    pub name: String,
    pub kind: FieldKind,
    /// Byte offset inside the record.
    pub offset: usize,
    /// Inline width: the fixed width, or 8 for a handle.
    pub width: usize,
    /// Where the value lives: the record tier for inline fields, the payload
    /// tier for variable fields.
    pub tier: TierId,
}

/// Resolved record layout for one schema under one field assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutPlan {
    pub schema: Arc<ObjectSchema>,
    pub entries: Vec<LayoutEntry>,
    pub record_size: usize,
    /// Tier holding the inline record.
    pub record_tier: TierId,
}

impl LayoutPlan {
    pub fn entry(&self, field: &str) -> Option<&LayoutEntry> {
        self.entries.iter().find(|e| e.name == field)
    }

    pub fn field_index(&self, field: &str) -> Option<usize> {
        self.schema.field_index(field)
    }

    /// Current assignment implied by the layout.
    pub fn assignment(&self) -> Assignment {
        self.entries.iter().map(|e| (e.name.clone(), e.tier)).collect()
    }
}

/// Computes offsets for `schema` with each field placed per `assignment`.
///
/// The inline record lives on the fastest tier (lowest id) assigned to any
/// fixed-width field, or on pmem when the schema has none.
pub fn compute_layout(schema: &ObjectSchema, assignment: &Assignment) -> Result<LayoutPlan, SchemaError> {
    for name in assignment.keys() {
        if schema.field(name).is_none() {
            return Err(SchemaError::UnknownField(name.clone()));
        }
    }
    let mut placed = Vec::with_capacity(schema.fields.len());
    for field in &schema.fields {
        let tier = *assignment
            .get(&field.name)
            .ok_or_else(|| SchemaError::UnassignedField(field.name.clone()))?;
        if !field.tags.contains(&tier) {
            return Err(SchemaError::TierNotTagged {
                field: field.name.clone(),
                tier,
            });
        }
        placed.push(tier);
    }
    let record_tier = schema
        .fields
        .iter()
        .zip(&placed)
        .filter(|(f, _)| !f.kind.is_variable())
        .map(|(_, t)| *t)
        .min()
        .unwrap_or(TierId::PMEM);

    let mut offset = 0;
    let mut entries = Vec::with_capacity(schema.fields.len());
    for (field, tier) in schema.fields.iter().zip(placed) {
        let width = field.kind.stored_width();
        entries.push(LayoutEntry {
            name: field.name.clone(),
            kind: field.kind,
            offset,
            width,
            tier: if field.kind.is_variable() { tier } else { record_tier },
        });
        offset += width;
    }
    Ok(LayoutPlan {
        schema: Arc::new(schema.clone()),
        entries,
        record_size: offset,
        record_tier,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const PERSON_DISK: &str = "
        # image kept on disk
        object person {
            age: i32 @pmem
            image: bytes @disk
            place: string @pmem
            name: string @pmem
        }";

    #[test]
    fn single_field() {
        let s = parse_schema("object p { age: i32 @pmem }").unwrap();
        assert_eq!(s.name, "p");
        assert_eq!(s.fields, vec![FieldSpec::new("age", FieldKind::I32, &[TierId::PMEM])]);
    }

    #[test]
    fn person_with_commas() {
        let s = parse_schema(
            "object person{age:i32@pmem, image:bytes@disk, place:string@pmem, name:string@pmem}",
        )
        .unwrap();
        assert_eq!(s.fields.len(), 4);
        assert_eq!(s.fields[1].tags, vec![TierId::DISK]);
        assert_eq!(s.fields[1].kind, FieldKind::Bytes);
    }

    #[test]
    fn multi_tag_order_kept() {
        let s = parse_schema("object p { img: bytes @pmem @disk }").unwrap();
        assert_eq!(s.fields[0].tags, vec![TierId::PMEM, TierId::DISK]);
    }

    #[test]
    fn unknown_tier() {
        let err = parse_schema("object p { x: i32 @foo }").unwrap_err();
        assert!(matches!(err, SchemaError::UnknownTier { ref tag, line: 1, column: 19 } if tag == "foo"), "{err:?}");
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            parse_schema("object p { x: i32 @pmem\n x: i64 @disk }"),
            Err(SchemaError::DuplicateField(f)) if f == "x"
        ));
        assert!(matches!(parse_schema("object p { x: i32 }"), Err(SchemaError::EmptyTags(_))));
        assert!(matches!(
            parse_schema("object p { x: u32 @pmem }"),
            Err(SchemaError::Syntax { line: 1, column: 15, .. })
        ));
        assert!(matches!(
            parse_schema("object p {\n  x i32 @pmem }"),
            Err(SchemaError::Syntax { line: 2, column: 5, .. })
        ));
        assert!(matches!(parse_schema("object p { x: i32 @pmem"), Err(SchemaError::Syntax { .. })));
        assert!(matches!(
            parse_schema("object p { x: i32 @pmem @pmem }"),
            Err(SchemaError::DuplicateTag { .. })
        ));
        assert!(matches!(parse_schema("thing p {}"), Err(SchemaError::Syntax { .. })));
    }

    #[test]
    fn display_round_trips() {
        let s = parse_schema(PERSON_DISK).unwrap();
        assert_eq!(parse_schema(&s.to_string()).unwrap(), s);
    }

    #[test]
    fn person_offsets() {
        let s = parse_schema(PERSON_DISK).unwrap();
        let plan = compute_layout(&s, &s.preferred_assignment()).unwrap();
        let offsets: Vec<_> = plan.entries.iter().map(|e| (e.name.as_str(), e.offset)).collect();
        assert_eq!(offsets, [("age", 0), ("image", 4), ("place", 12), ("name", 20)]);
        assert_eq!(plan.record_size, 28);
        assert_eq!(plan.record_tier, TierId::PMEM);
        assert_eq!(plan.entry("image").unwrap().tier, TierId::DISK);
    }

    #[test]
    fn all_pmem_person_offsets() {
        let s = parse_schema(&PERSON_DISK.replace("@disk", "@pmem")).unwrap();
        let plan = compute_layout(&s, &s.preferred_assignment()).unwrap();
        assert_eq!(plan.entry("age").unwrap().offset, 0);
        assert_eq!(plan.entry("image").unwrap().offset, 4);
        assert_eq!(plan.entry("place").unwrap().offset, 12);
        assert_eq!(plan.record_size, 28);
    }

    #[test]
    fn fixed_widths() {
        let s = parse_schema("object p { a: i64 @pmem  b: i32 @pmem }").unwrap();
        let plan = compute_layout(&s, &s.preferred_assignment()).unwrap();
        assert_eq!(plan.entry("a").unwrap().offset, 0);
        assert_eq!(plan.entry("b").unwrap().offset, 8);
        assert_eq!(plan.record_size, 12);
    }

    #[test]
    fn layout_errors() {
        let s = parse_schema("object p { a: i64 @pmem  b: bytes @pmem @disk }").unwrap();
        let mut a = Assignment::new();
        a.insert("a".into(), TierId::PMEM);
        assert_eq!(compute_layout(&s, &a), Err(SchemaError::UnassignedField("b".into())));
        a.insert("b".into(), TierId::DRAM);
        assert!(matches!(compute_layout(&s, &a), Err(SchemaError::TierNotTagged { .. })));
        a.insert("b".into(), TierId::DISK);
        a.insert("zzz".into(), TierId::DISK);
        assert!(matches!(compute_layout(&s, &a), Err(SchemaError::UnknownField(_))));
    }

    #[test]
    fn record_tier_rules() {
        let s = parse_schema("object p { s: string @disk }").unwrap();
        assert_eq!(compute_layout(&s, &s.preferred_assignment()).unwrap().record_tier, TierId::PMEM);
        let s = parse_schema("object p { a: i32 @disk  b: i32 @dram @disk }").unwrap();
        let plan = compute_layout(&s, &s.preferred_assignment()).unwrap();
        assert_eq!(plan.record_tier, TierId::DRAM);
        assert!(plan.entries.iter().all(|e| e.tier == TierId::DRAM));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn kind() -> impl Strategy<Value = FieldKind> {
            prop_oneof![
                Just(FieldKind::I16),
                Just(FieldKind::I32),
                Just(FieldKind::I64),
                Just(FieldKind::F32),
                Just(FieldKind::F64),
                Just(FieldKind::Bytes),
                Just(FieldKind::String),
            ]
        }

        proptest! {
            #[test]
            fn offsets_contiguous(kinds in proptest::collection::vec(kind(), 1..12), tiers in proptest::collection::vec(0u8..3, 12)) {
                let fields = kinds.iter().enumerate()
                    .map(|(i, k)| FieldSpec::new(format!("f{i}"), *k, &[TierId(tiers[i])]))
                    .collect();
                let schema = ObjectSchema::new("o", fields).unwrap();
                let a = schema.preferred_assignment();
                let plan = compute_layout(&schema, &a).unwrap();
                prop_assert_eq!(&plan, &compute_layout(&schema, &a).unwrap());
                prop_assert_eq!(plan.entries[0].offset, 0);
                for w in plan.entries.windows(2) {
                    prop_assert_eq!(w[1].offset, w[0].offset + w[0].width);
                }
                for e in &plan.entries {
                    if e.kind.is_variable() {
                        prop_assert_eq!(e.width, HANDLE_WIDTH);
                    }
                }
                let total: usize = plan.entries.iter().map(|e| e.width).sum();
                prop_assert_eq!(plan.record_size, total);
            }
        }
    }
}
