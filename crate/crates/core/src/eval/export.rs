//! Word embedding export as `word<TAB>lang<TAB>v1,…,vd` rows.

use std::fmt::Write as _;
use std::path::Path;

use super::bli::word_vector;
use crate::corpus::Lang;
use crate::error::{data_err, io_err, Result};
use crate::model::SeqModel;
use crate::subword::BpeCodec;

#[derive(Clone, Debug, PartialEq)]
pub struct ExportedWord {
    pub word: String,
    pub lang: Lang,
    pub vector: Vec<f32>,
}

pub fn export_rows(model: &SeqModel, codec: &BpeCodec, words: &[(String, Lang)]) -> Vec<ExportedWord> {
    words
        .iter()
        .map(|(w, l)| ExportedWord {
            word: w.clone(),
            lang: *l,
            vector: word_vector(model, codec, w),
        })
        .collect()
}

pub fn format_rows(rows: &[ExportedWord]) -> String {
    let mut s = String::new();
    for r in rows {
        write!(s, "{}\t{}\t", r.word, r.lang).expect("string write");
        for (i, v) in r.vector.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            write!(s, "{v}").expect("string write");
        }
        s.push('\n');
    }
    s
}

pub fn parse_rows(text: &str) -> Result<Vec<ExportedWord>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
        let fields: Vec<&str> = line.split('\t').collect();
        let [word, lang, values] = fields[..] else {
            return data_err(format!("line {}: expected 3 tab-separated fields", n + 1));
        };
        let lang = Lang::parse(lang).ok_or_else(|| crate::Error::Data(format!("line {}: unknown language {lang:?}", n + 1)))?;
        let vector = values
            .split(',')
            .map(str::parse)
            .collect::<std::result::Result<Vec<f32>, _>>()
            .map_err(|_| crate::Error::Data(format!("line {}: bad number", n + 1)))?;
        out.push(ExportedWord {
            word: word.to_owned(),
            lang,
            vector,
        });
    }
    Ok(out)
}

pub fn export_embeddings(model: &SeqModel, codec: &BpeCodec, words: &[(String, Lang)], path: &Path) -> Result<usize> {
    let rows = export_rows(model, codec, words);
    std::fs::write(path, format_rows(&rows)).map_err(io_err(path))?;
    Ok(rows.len())
}

pub fn import_embeddings(path: &Path) -> Result<Vec<ExportedWord>> {
    parse_rows(&std::fs::read_to_string(path).map_err(io_err(path))?)
}
