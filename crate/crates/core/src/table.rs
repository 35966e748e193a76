//! Tables, question instances, and their pipe-separated text form.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Separator placed between cells of one row.
pub const CELL_SEPARATOR: &str = " | ";

/// Replacement for a literal pipe inside a cell.
pub const ESCAPED_PIPE: &str = "\\u007C";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TableError {
    #[error("table header is empty")]
    EmptyHeader,
    #[error("row {row} has {found} cells, header has {expected}")]
    RaggedTable { row: usize, expected: usize, found: usize },
    #[error("instance {0:?} has an empty question")]
    EmptyQuestion(String),
    #[error("instance {0:?} has an empty gold answer list")]
    EmptyGold(String),
}

/// A rectangular table of string cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    /// Builds a table and checks that it is rectangular.
    pub fn new(header: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self, TableError> {
        let table = Self { header, rows };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<(), TableError> {
        if self.header.is_empty() {
            return Err(TableError::EmptyHeader);
        }
        for (row, cells) in self.rows.iter().enumerate() {
            if cells.len() != self.header.len() {
                return Err(TableError::RaggedTable {
                    row,
                    expected: self.header.len(),
                    found: cells.len(),
                });
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.header.len()
    }

    /// Writes the table as CSV (header first) for code snippets to read.
    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(&self.header)?;
        for row in &self.rows {
            writer.write_record(row)?;
        }
        let bytes = writer.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }
}

fn escape_cell(cell: &str) -> String {
    cell.replace('|', ESCAPED_PIPE)
        .replace("\r\n", " ")
        .replace(['\n', '\r'], " ")
}

/// Renders a table with one line per row, header first, cells joined by `" | "`.
///
/// Pipes inside cells are spelled `|` and newlines become spaces, so the
/// line and cell structure of the output is always unambiguous.
pub fn serialize_table(table: &Table) -> Result<String, TableError> {
    table.validate()?;
    let mut lines = Vec::with_capacity(table.rows.len() + 1);
    for row in std::iter::once(&table.header).chain(table.rows.iter()) {
        let cells: Vec<String> = row.iter().map(|c| escape_cell(c)).collect();
        lines.push(cells.join(CELL_SEPARATOR));
    }
    Ok(lines.join("\n"))
}

/// Inverse of [`serialize_table`] for tables whose cells hold no pipes or newlines.
pub fn parse_table(text: &str) -> Result<Table, TableError> {
    let mut lines = text.split('\n').map(|line| {
        line.split(CELL_SEPARATOR)
            .map(|c| c.replace(ESCAPED_PIPE, "|"))
            .collect::<Vec<_>>()
    });
    let header = lines.next().unwrap_or_default();
    Table::new(header, lines.collect())
}

/// One table question answering instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TqaInstance {
    pub id: String,
    pub table: Table,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub texts: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<Vec<String>>,
}

impl TqaInstance {
    pub fn validate(&self) -> Result<(), TableError> {
        self.table.validate()?;
        if self.question.trim().is_empty() {
            return Err(TableError::EmptyQuestion(self.id.clone()));
        }
        if matches!(&self.gold, Some(g) if g.is_empty()) {
            return Err(TableError::EmptyGold(self.id.clone()));
        }
        Ok(())
    }

    /// Passages with at least one non-blank character.
    pub fn passages(&self) -> &[String] {
        self.texts.as_deref().unwrap_or(&[])
    }
}

/// Flat on-disk record: one JSON object per line of a fixture file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub id: String,
    pub header: Vec<String>,
    #[serde(default)]
    pub rows: Vec<Vec<String>>,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub texts: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<Vec<String>>,
}

impl TryFrom<FixtureRecord> for TqaInstance {
    type Error = TableError;

    fn try_from(r: FixtureRecord) -> Result<Self, TableError> {
        let instance = TqaInstance {
            id: r.id,
            table: Table {
                header: r.header,
                rows: r.rows,
            },
            question: r.question,
            texts: r.texts,
            gold: r.gold,
        };
        instance.validate()?;
        Ok(instance)
    }
}

impl From<&TqaInstance> for FixtureRecord {
    fn from(i: &TqaInstance) -> Self {
        FixtureRecord {
            id: i.id.clone(),
            header: i.table.header.clone(),
            rows: i.table.rows.clone(),
            question: i.question.clone(),
            texts: i.texts.clone(),
            gold: i.gold.clone(),
        }
    }
}
