//! Lexical SELECT-only guard. Runs without touching any database.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SqlVerdict {
    Valid,
    NotSelect,
    MultiStatement,
    ParseError,
    ExecError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SqlDiagnostic {
    pub verdict: SqlVerdict,
    pub message: String,
}

impl SqlDiagnostic {
    pub fn valid() -> Self {
        Self {
            verdict: SqlVerdict::Valid,
            message: String::new(),
        }
    }

    pub fn new(verdict: SqlVerdict, message: impl Into<String>) -> Self {
        Self {
            verdict,
            message: message.into(),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.verdict == SqlVerdict::Valid
    }
}

/// Splits `sql` into top-level statements with comments removed.
///
/// Semicolons inside string literals, quoted identifiers and comments do
/// not separate statements. Returns an error for unterminated literals or
/// block comments.
pub fn split_statements(sql: &str) -> Result<Vec<String>, String> {
    let chars: Vec<char> = sql.chars().collect();
    let mut statements = Vec::new();
    let mut current = String::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            '-' if chars.get(i + 1) == Some(&'-') => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
                current.push(' ');
                continue;
            }
            '/' if chars.get(i + 1) == Some(&'*') => {
                let mut j = i + 2;
                loop {
                    if j + 1 >= chars.len() {
                        return Err("unterminated block comment".into());
                    }
                    if chars[j] == '*' && chars[j + 1] == '/' {
                        break;
                    }
                    j += 1;
                }
                i = j + 2;
                current.push(' ');
                continue;
            }
            '\'' | '"' | '`' | '[' => {
                let close = if c == '[' { ']' } else { c };
                current.push(c);
                let mut j = i + 1;
                loop {
                    let Some(&d) = chars.get(j) else {
                        return Err(format!("unterminated quoted text starting with {c}"));
                    };
                    current.push(d);
                    if d == close {
                        // Doubled quote is an escaped quote.
                        if close != ']' && chars.get(j + 1) == Some(&close) {
                            current.push(close);
                            j += 2;
                            continue;
                        }
                        break;
                    }
                    j += 1;
                }
                i = j + 1;
                continue;
            }
            ';' => {
                statements.push(std::mem::take(&mut current));
                i += 1;
                continue;
            }
            _ => current.push(c),
        }
        i += 1;
    }
    statements.push(current);
    Ok(statements
        .into_iter()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect())
}

fn first_keyword(stmt: &str) -> String {
    stmt.trim_start_matches(|c: char| c == '(' || c.is_whitespace())
        .chars()
        .take_while(|c| c.is_ascii_alphabetic())
        .collect::<String>()
        .to_ascii_uppercase()
}

/// Classifies `sql` as a single read-only statement or not, without
/// executing it.
pub fn validate_sql(sql: &str) -> SqlDiagnostic {
    let statements = match split_statements(sql) {
        Ok(s) => s,
        Err(e) => return SqlDiagnostic::new(SqlVerdict::ParseError, e),
    };
    let Some(first) = statements.first() else {
        return SqlDiagnostic::new(SqlVerdict::ParseError, "empty statement");
    };
    let kw = first_keyword(first);
    if kw != "SELECT" && kw != "WITH" {
        let shown = if kw.is_empty() { "<none>".to_string() } else { kw };
        return SqlDiagnostic::new(
            SqlVerdict::NotSelect,
            format!("statement starts with {shown}, only SELECT/WITH allowed"),
        );
    }
    if statements.len() > 1 {
        return SqlDiagnostic::new(
            SqlVerdict::MultiStatement,
            format!("{} statements supplied, exactly one allowed", statements.len()),
        );
    }
    SqlDiagnostic::valid()
}
