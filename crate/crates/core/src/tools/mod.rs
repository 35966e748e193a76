//! Tool dispatch and the tools themselves.

pub mod calculator;
pub mod sandbox;
pub mod wiki;

use serde::{Deserialize, Serialize};

use crate::model::Intent;

pub use calculator::{eval_formula, is_formula, render_rational, CalcError, CalcResult};
pub use sandbox::{run_code, ExecStatus, ExecutionResult, SandboxPolicy, TABLE_PATH_ENV};
pub use wiki::{KnowledgeSearch, SearchError, StaticSearch, WikiClient, WikiConfig};

/// Which tool executes a selected action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ToolKind {
    CalculatorTool,
    InterpreterTool,
    SearchTool,
    NoTool,
}

/// Maps an action to its primary tool.
///
/// Calculation goes to the calculator only when the instruction parses as a
/// formula; descriptions go to the code interpreter.
pub fn select_tool(intent: Intent, instruction: &str) -> ToolKind {
    match intent {
        Intent::Retrieval => ToolKind::InterpreterTool,
        Intent::Calculation if is_formula(instruction) => ToolKind::CalculatorTool,
        Intent::Calculation => ToolKind::InterpreterTool,
        Intent::Search => ToolKind::SearchTool,
        Intent::Read | Intent::Ask | Intent::Finish => ToolKind::NoTool,
    }
}
