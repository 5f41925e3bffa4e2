use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::InstructionExample;
use crate::{Error, Result};

/// Reads one example per line. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn read_jsonl(reader: impl BufRead, path: &Path) -> Result<Vec<InstructionExample>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let data_err = |msg: String| Error::Data {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let ex: InstructionExample = serde_json::from_str(&line).map_err(|e| data_err(e.to_string()))?;
        if ex.instruction.trim().is_empty() || ex.story.trim().is_empty() {
            return Err(data_err("instruction and story must be nonempty".into()));
        }
        out.push(ex);
    }
    Ok(out)
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<InstructionExample>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_jsonl(BufReader::new(file), path)
}

pub fn write_jsonl(path: impl AsRef<Path>, examples: &[InstructionExample]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for ex in examples {
        serde_json::to_writer(&mut buf, ex).expect("serialising a plain struct");
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::data::Strength;

    fn parse(text: &str) -> Result<Vec<InstructionExample>> {
        read_jsonl(text.as_bytes(), Path::new("mem.jsonl"))
    }

    #[test]
    fn reads_one_example() {
        let xs = parse(r#"{"instruction":"a","strength":"weak","story":"b"}"#).unwrap();
        assert_eq!(
            xs,
            vec![InstructionExample {
                instruction: "a".into(),
                strength: Strength::Weak,
                story: "b".into()
            }]
        );
        assert!(parse("").unwrap().is_empty());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = concat!(
            r#"{"instruction":"a","strength":"weak","story":"b"}"#,
            "\n",
            r#"{"instruction":"a","strength":"medium","story":"b"}"#,
            "\n"
        );
        match parse(text).unwrap_err() {
            Error::Data { line, msg, .. } => {
                assert_eq!(line, 2);
                assert!(msg.contains("medium"), "{msg}");
            }
            e => panic!("unexpected {e:?}"),
        }
        for bad in [
            "{not json",
            r#"{"instruction":"a","strength":"weak"}"#,
            r#"{"instruction":"a","strength":"weak","story":"b","extra":1}"#,
            r#"{"instruction":"","strength":"weak","story":"b"}"#,
        ] {
            assert!(matches!(parse(bad), Err(Error::Data { line: 1, .. })), "{bad}");
        }
    }

    #[test]
    fn missing_file_is_an_io_error() {
        assert!(matches!(load_jsonl("/nonexistent/x.jsonl"), Err(Error::Io { .. })));
    }

    proptest! {
        #[test]
        fn write_then_load_round_trips(rows in prop::collection::vec(("\\PC{1,20}", any::<bool>(), "\\PC{1,40}"), 0..10)) {
            let xs: Vec<InstructionExample> = rows
                .into_iter()
                .filter(|(i, _, s)| !i.trim().is_empty() && !s.trim().is_empty())
                .map(|(instruction, strong, story)| InstructionExample {
                    instruction,
                    strength: if strong { Strength::Strong } else { Strength::Weak },
                    story,
                })
                .collect();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("x.jsonl");
            write_jsonl(&path, &xs).unwrap();
            prop_assert_eq!(load_jsonl(&path).unwrap(), xs);
        }
    }
}
