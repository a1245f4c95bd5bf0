//! On-disk corpus layout.
//!
//! `registry.json` holds the cipher tables, `corpus.json` lists every file with
//! its split and direction, and each direction has a `.src`/`.tgt` pair with one
//! sentence per line: `L<k>` TAB space-separated token ids (tag not repeated).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CorpusSpec, Direction, DirectionSet, LanguageRegistry, ParallelCorpus, Split};
use crate::error::{Error, Result};
use crate::model::TaggedSentence;

pub const REGISTRY_FILE: &str = "registry.json";
pub const CORPUS_MANIFEST: &str = "corpus.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusFileEntry {
    pub split: Split,
    pub direction: Direction,
    pub src_file: String,
    pub tgt_file: String,
    pub lines: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub spec: CorpusSpec,
    pub files: Vec<CorpusFileEntry>,
}

pub fn format_line(reg: &LanguageRegistry, s: &TaggedSentence) -> String {
    let toks: Vec<String> = s.content().iter().map(|t| t.to_string()).collect();
    format!("{}\t{}", reg.name(s.language), toks.join(" "))
}

pub fn parse_line(reg: &LanguageRegistry, line: &str) -> Result<TaggedSentence> {
    let (lang, toks) = line
        .split_once('\t')
        .ok_or_else(|| Error::Parse(format!("missing tab in line {line:?}")))?;
    let lang = reg.parse_name(lang)?;
    let content = toks
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| Error::Parse(format!("bad token {t:?}"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(TaggedSentence::new(lang, &content))
}

fn file_stem(reg: &LanguageRegistry, split: Split, d: &Direction) -> String {
    format!("{}.{}-{}", split.name(), reg.name(d.src), reg.name(d.tgt))
}

/// Writes the corpus and returns the paths of every file created.
pub fn write_corpus(corpus: &ParallelCorpus, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let reg = &corpus.registry;
    let mut written = Vec::new();
    let mut files = Vec::new();
    for set in &corpus.sets {
        let stem = file_stem(reg, set.split, &set.direction);
        let (src_file, tgt_file) = (format!("{stem}.src"), format!("{stem}.tgt"));
        for (name, side) in [(&src_file, 0), (&tgt_file, 1)] {
            let mut text = String::new();
            for (s, t) in &set.pairs {
                text.push_str(&format_line(reg, if side == 0 { s } else { t }));
                text.push('\n');
            }
            let path = dir.join(name);
            fs::write(&path, text)?;
            written.push(path);
        }
        files.push(CorpusFileEntry {
            split: set.split,
            direction: set.direction,
            src_file,
            tgt_file,
            lines: set.pairs.len(),
        });
    }
    let manifest = CorpusManifest {
        spec: corpus.spec,
        files,
    };
    for (name, json) in [
        (REGISTRY_FILE, serde_json::to_string_pretty(reg)?),
        (CORPUS_MANIFEST, serde_json::to_string_pretty(&manifest)?),
    ] {
        let path = dir.join(name);
        let mut f = fs::File::create(&path)?;
        f.write_all(json.as_bytes())?;
        f.write_all(b"\n")?;
        written.push(path);
    }
    Ok(written)
}

fn read_lines(reg: &LanguageRegistry, path: &Path) -> Result<Vec<TaggedSentence>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.is_empty())
        .map(|l| parse_line(reg, l))
        .collect()
}

pub fn read_corpus(dir: &Path) -> Result<ParallelCorpus> {
    let registry: LanguageRegistry = serde_json::from_str(&fs::read_to_string(dir.join(REGISTRY_FILE))?)?;
    let manifest: CorpusManifest = serde_json::from_str(&fs::read_to_string(dir.join(CORPUS_MANIFEST))?)?;
    let mut sets = Vec::with_capacity(manifest.files.len());
    for e in &manifest.files {
        let src = read_lines(&registry, &dir.join(&e.src_file))?;
        let tgt = read_lines(&registry, &dir.join(&e.tgt_file))?;
        if src.len() != e.lines || tgt.len() != e.lines {
            return Err(Error::Parse(format!(
                "{} / {} have {} / {} lines, manifest says {}",
                e.src_file,
                e.tgt_file,
                src.len(),
                tgt.len(),
                e.lines
            )));
        }
        sets.push(DirectionSet {
            direction: e.direction,
            split: e.split,
            pairs: src.into_iter().zip(tgt).collect(),
        });
    }
    Ok(ParallelCorpus {
        spec: manifest.spec,
        registry,
        sets,
    })
}
