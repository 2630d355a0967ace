//! JSON-lines run log: one object per stage with wall time and the fully
//! materialized parameter set, so a run can be reproduced exactly.

use std::io::Write;
use std::path::PathBuf;

use ds2dl_core::{Error, Result};

pub struct RunLog {
    path: Option<PathBuf>,
}

fn json_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out
}

impl RunLog {
    /// Log to the given file (append) or to stderr when no path is set.
    pub fn new(path: Option<PathBuf>) -> Self {
        RunLog { path }
    }

    pub fn emit(&self, stage: &str, wall_time_s: f64, parameters: &[(String, String)]) -> Result<()> {
        let mut line = format!(
            "{{\"stage\":\"{}\",\"wall_time_s\":{:.6},\"parameters\":{{",
            json_escape(stage),
            wall_time_s
        );
        for (i, (k, v)) in parameters.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            line.push_str(&format!("\"{}\":\"{}\"", json_escape(k), json_escape(v)));
        }
        line.push_str("}}\n");

        match &self.path {
            Some(p) => {
                let mut f = std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .map_err(|e| Error::io(p.display().to_string(), e))?;
                f.write_all(line.as_bytes())
                    .map_err(|e| Error::io(p.display().to_string(), e))
            }
            None => {
                eprint!("{line}");
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_line_shape() {
        let dir = std::env::temp_dir().join(format!("ds2dl-log-{}", std::process::id()));
        let log = RunLog::new(Some(dir.clone()));
        log.emit(
            "test",
            1.25,
            &[("key".into(), "va\"lue".into())],
        )
        .unwrap();
        let text = std::fs::read_to_string(&dir).unwrap();
        assert_eq!(
            text,
            "{\"stage\":\"test\",\"wall_time_s\":1.250000,\"parameters\":{\"key\":\"va\\\"lue\"}}\n"
        );
        std::fs::remove_file(&dir).ok();
    }
}
